#![allow(dead_code)]

use dualmax_core::dual_domain::{build_dual_cone, endowment_bound, DualMeasure};
use dualmax_core::duality::{solve, verify_report, SolveError, SolveOptions, SolveReport};
use dualmax_core::instances::{random_instance, seed_from_env, RandomInstance, TreeShape};
use dualmax_core::market::{ClaimVector, Model};
use dualmax_core::oracle::{brute_dual, brute_primal, dual_grid_dim, GridSpec, OracleError};
use dualmax_core::utility::PiecewiseUtility;

pub const BIN1_U: f64 = 0.058_891_517_828_191_8;

pub fn base_seed() -> u64 {
    seed_from_env(20_240_601)
}

/// One period, up to four branches and two assets: at most two strategy
/// coordinates and four leaves, within reach of the grid oracles.
pub fn small_shape() -> TreeShape {
    TreeShape {
        max_periods: 1,
        max_branches: 4,
        max_assets: 2,
    }
}

pub struct Solved {
    pub inst: RandomInstance,
    pub x: f64,
    pub report: SolveReport,
}

pub fn wealth_for(inst: &RandomInstance) -> f64 {
    let m = &inst.model;
    let dc = build_dual_cone(&m.tree, &m.cone);
    endowment_bound(&dc, &m.tree, &inst.endowment).unwrap() + inst.wealth_offset
}

pub fn solve_instance(inst: RandomInstance) -> Result<Solved, (u64, SolveError)> {
    let x = wealth_for(&inst);
    match solve(&inst.model, &inst.utility, &inst.endowment, x, &SolveOptions::default(), false) {
        Ok(report) => Ok(Solved { inst, x, report }),
        Err(e) => Err((inst.seed, e)),
    }
}

pub fn solved(seed: u64, shape: TreeShape) -> Result<Solved, (u64, SolveError)> {
    solve_instance(random_instance(seed, shape))
}

/// Oracle estimates next to the solver values.
pub struct Agreement {
    pub primal: f64,
    pub primal_bound: f64,
    pub dual: f64,
    pub dual_bound: f64,
}

impl Agreement {
    /// Largest `|brute − solver| − error_bound`.
    pub fn excess(&self, u: f64, w: f64) -> f64 {
        ((self.primal - u).abs() - self.primal_bound).max((self.dual - w).abs() - self.dual_bound)
    }
}

/// Runs both grid oracles on a box sized from the solver's optimizers. The
/// box only bounds the search; every point in it is still evaluated.
pub fn oracle_agreement(
    model: &Model,
    u: &PiecewiseUtility,
    b: &ClaimVector,
    x: f64,
    report: &SolveReport,
) -> Result<Agreement, OracleError> {
    let tree = &model.tree;
    let hmax = report
        .h_star
        .to_map()
        .values()
        .flatten()
        .fold(0.0f64, |a, v| a.max(v.abs()));
    let strat_dim = tree.nonterminal().len() * tree.num_assets();
    let mh = 2.0 * hmax + 1.0;
    let grid = GridSpec {
        bounds: vec![(-mh, mh)],
        counts: vec![if strat_dim == 1 { 2001 } else { 41 }],
        refinement: 2.0,
        passes: 6,
    };
    let p = brute_primal(tree, &model.cone, u, b, x, &grid)?;
    let dc = build_dual_cone(tree, &model.cone);
    let dual_counts = [2001, 2001, 201, 41, 21][dual_grid_dim(&dc).min(4)];
    let dual_grid = GridSpec {
        bounds: vec![(0.0, 2.0 * report.nu_star.mass() + 0.1)],
        counts: vec![dual_counts],
        refinement: 2.0,
        passes: 9,
    };
    let d = brute_dual(tree, &dc, u, b, x, &dual_grid)?;
    Ok(Agreement {
        primal: p.estimate.value,
        primal_bound: p.estimate.error_bound,
        dual: d.estimate.value,
        dual_bound: d.estimate.error_bound,
    })
}

/// The three injected perturbations of size `eps`: in `X*`, in `ν*`, and
/// in `x`. Returns whether each was rejected.
pub fn perturbations_rejected(
    model: &Model,
    u: &PiecewiseUtility,
    b: &ClaimVector,
    report: &SolveReport,
    eps: f64,
    tol: f64,
) -> [bool; 3] {
    let mut in_x_star = report.clone();
    in_x_star.x_star = ClaimVector(report.x_star.values().iter().map(|v| v + eps).collect());

    let mut in_nu = report.clone();
    let dens: Vec<f64> = report.nu_star.densities().iter().map(|z| z + eps).collect();
    in_nu.nu_star = DualMeasure::from_densities(&model.tree, &dens).unwrap();
    in_nu.y_star = in_nu.nu_star.mass();

    let mut in_x = report.clone();
    in_x.x += eps;

    [in_x_star, in_nu, in_x].map(|r| verify_report(model, &r, u, b, tol).is_err())
}
