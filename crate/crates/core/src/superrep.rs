//! Super-replication under cone constraints: primal feasibility and pricing
//! by linear programming, the polar test, and the constrained optional
//! decomposition `V = V₀ + H·S − C` on the tree.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dual_domain::{max_normalized_pairing, DualError, PolyhedralCone};
use crate::lp::{LinearProgram, LpOutcome, Relation};
use crate::market::{
    elementary_columns, gains_process, ClaimVector, MarketError, ScenarioTree, Strategy,
    TradingCone,
};

/// Slack granted to claims at the API surface.
pub const SUPERREP_TOL: f64 = 1e-8;
/// Consumption increments in `(−CLAMP, 0)` are rounding noise.
const CLAMP: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SuperrepError {
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error("the normalized dual domain is empty")]
    InfeasibleDualDomain,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("decomposition failed at node {node}: {detail}")]
    NodeDecompositionFailure { node: usize, detail: String },
}

impl From<DualError> for SuperrepError {
    fn from(e: DualError) -> Self {
        match e {
            DualError::InfeasibleDualDomain => SuperrepError::InfeasibleDualDomain,
            DualError::DimensionMismatch { expected, got } => {
                SuperrepError::DimensionMismatch { expected, got }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrimalFeasibility {
    pub feasible: bool,
    pub witness: Option<Strategy>,
}

fn check_claim(tree: &ScenarioTree, r: &ClaimVector) -> Result<(), SuperrepError> {
    if r.len() != tree.num_leaves() {
        return Err(SuperrepError::DimensionMismatch {
            expected: tree.num_leaves(),
            got: r.len(),
        });
    }
    Ok(())
}

/// Is there a cone-feasible `H` with `(H·S)_T ≥ R` at every leaf?
pub fn superreplicable_primal(
    tree: &ScenarioTree,
    cone: &TradingCone,
    r: &ClaimVector,
) -> Result<PrimalFeasibility, SuperrepError> {
    check_claim(tree, r)?;
    let cols = elementary_columns(tree, cone);
    let mut lp = LinearProgram::new(cols.len());
    lp.set_objective(&vec![1.0; cols.len()]);
    for (w, &rw) in r.values().iter().enumerate() {
        let row = cols.iter().map(|c| c.leaf_gains[w]).collect();
        lp.add_row(row, Relation::Ge, rw - SUPERREP_TOL);
    }
    Ok(match lp.minimize() {
        LpOutcome::Optimal(s) => PrimalFeasibility {
            feasible: true,
            witness: Some(Strategy::from_cone_weights(tree, cone, &s.x)),
        },
        _ => PrimalFeasibility {
            feasible: false,
            witness: None,
        },
    })
}

/// Polar test: `max {ψ_ν(R) : ν ∈ M, ν(Ω) = 1} ≤ 1e-8`.
pub fn superreplicable_dual(
    dc: &PolyhedralCone,
    tree: &ScenarioTree,
    r: &ClaimVector,
) -> Result<bool, SuperrepError> {
    check_claim(tree, r)?;
    let (v, _) = max_normalized_pairing(dc, r.values())?;
    Ok(v <= SUPERREP_TOL)
}

/// Super-replication price `sup {ψ_ν(R) : ν ∈ M, ν(Ω) = 1}`.
pub fn superrep_price(
    dc: &PolyhedralCone,
    tree: &ScenarioTree,
    r: &ClaimVector,
) -> Result<f64, SuperrepError> {
    check_claim(tree, r)?;
    Ok(max_normalized_pairing(dc, r.values())?.0)
}

/// Cheapest hedge: `min v` subject to `v + (H·S)_T ≥ R`, with the hedge.
pub fn superrep_hedge(
    tree: &ScenarioTree,
    cone: &TradingCone,
    r: &ClaimVector,
) -> Result<(f64, Strategy), SuperrepError> {
    check_claim(tree, r)?;
    let cols = elementary_columns(tree, cone);
    let n = cols.len();
    let mut lp = LinearProgram::new(n + 1);
    lp.set_objective_coeff(n, 1.0);
    lp.set_free(n);
    for (w, &rw) in r.values().iter().enumerate() {
        let mut row: Vec<f64> = cols.iter().map(|c| c.leaf_gains[w]).collect();
        row.push(1.0);
        lp.add_row(row, Relation::Ge, rw);
    }
    match lp.minimize() {
        LpOutcome::Optimal(s) => Ok((s.value, Strategy::from_cone_weights(tree, cone, &s.x[..n]))),
        _ => Err(SuperrepError::InfeasibleDualDomain),
    }
}

/// Value process, hedge and cumulative consumption of a claim.
#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionResult {
    pub v: Vec<f64>,
    pub h: Strategy,
    pub c: Vec<f64>,
}

/// Per-node record of the serialized decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionNode {
    #[serde(rename = "V")]
    pub v: f64,
    #[serde(rename = "H", skip_serializing_if = "Option::is_none", default)]
    pub h: Option<Vec<f64>>,
    #[serde(rename = "C")]
    pub c: f64,
}

impl DecompositionResult {
    pub fn initial_value(&self) -> f64 {
        self.v[0]
    }

    pub fn to_node_map(&self) -> BTreeMap<usize, DecompositionNode> {
        (0..self.v.len())
            .map(|n| {
                (
                    n,
                    DecompositionNode {
                        v: self.v[n],
                        h: self.h.at(n).map(<[f64]>::to_vec),
                        c: self.c[n],
                    },
                )
            })
            .collect()
    }

    /// Largest `|V − (V₀ + gains(H) − C)|` over all nodes.
    pub fn identity_residual(&self, tree: &ScenarioTree) -> Result<f64, MarketError> {
        let g = gains_process(tree, &self.h)?;
        Ok((0..self.v.len())
            .map(|n| (self.v[n] - (self.v[0] + g[n] - self.c[n])).abs())
            .fold(0.0, f64::max))
    }
}

/// Backward recursion for the value process, then a per-node hedge.
///
/// `V(n)` is the largest one-step expectation of `V(children)` under the
/// normalized local supermartingale weights at `n`. The hedge at `n` is the
/// cone position minimizing total slack `Σ_c (V(n) + H·ΔS_c − V(c))`, ties
/// broken by the smallest total generator weight; the slacks are the
/// consumption increments.
pub fn decompose_claim(
    dc: &PolyhedralCone,
    tree: &ScenarioTree,
    cone: &TradingCone,
    r: &ClaimVector,
) -> Result<DecompositionResult, SuperrepError> {
    check_claim(tree, r)?;
    let nodes = tree.nodes().len();
    let mut v = vec![0.0; nodes];
    for (k, &leaf) in tree.leaves().iter().enumerate() {
        v[leaf] = r.values()[k];
    }
    let order = tree.topological_order();
    for &n in order.iter().rev() {
        if tree.is_terminal(n) {
            continue;
        }
        v[n] = local_value(dc, tree, n, &v)?;
    }

    let mut h = Strategy::zero(tree);
    let mut c = vec![0.0; nodes];
    for &n in order {
        if tree.is_terminal(n) {
            continue;
        }
        let mu = local_hedge(tree, cone, n, &v)?;
        let hn = cone.combine(&mu);
        for &child in tree.children(n) {
            let step: f64 = tree.price_step(n, child).iter().zip(&hn).map(|(a, b)| a * b).sum();
            let mut slack = v[n] + step - v[child];
            if slack < 0.0 {
                if slack > -CLAMP {
                    slack = 0.0;
                } else {
                    return Err(SuperrepError::NodeDecompositionFailure {
                        node: n,
                        detail: format!("negative consumption increment {slack:e} toward node {child}"),
                    });
                }
            }
            c[child] = c[n] + slack;
        }
        h.set(n, hn);
    }
    Ok(DecompositionResult { v, h, c })
}

/// Child-aggregated rows of the polar cone at node `n`: one row per
/// generator, one coefficient per child.
fn local_rows(dc: &PolyhedralCone, tree: &ScenarioTree, n: usize) -> Vec<Vec<f64>> {
    dc.rows()
        .iter()
        .filter(|row| row.node == n)
        .map(|row| {
            tree.children(n)
                .iter()
                .map(|&c| row.coeffs[tree.leaf_range(c).start])
                .collect()
        })
        .collect()
}

fn local_value(
    dc: &PolyhedralCone,
    tree: &ScenarioTree,
    n: usize,
    v: &[f64],
) -> Result<f64, SuperrepError> {
    let children = tree.children(n);
    let k = children.len();
    let mut lp = LinearProgram::new(k);
    lp.set_objective(&children.iter().map(|&c| v[c]).collect::<Vec<_>>());
    for row in local_rows(dc, tree, n) {
        lp.add_row(row, Relation::Le, 0.0);
    }
    lp.add_row(vec![1.0; k], Relation::Eq, 1.0);
    match lp.maximize() {
        LpOutcome::Optimal(s) => Ok(s.value),
        _ => Err(SuperrepError::InfeasibleDualDomain),
    }
}

/// Generator weights at `n`: stage one keeps `V(n) + H·ΔS_c ≥ V(c)` and
/// minimizes total slack; stage two fixes that slack and minimizes `Σμ`.
fn local_hedge(
    tree: &ScenarioTree,
    cone: &TradingCone,
    n: usize,
    v: &[f64],
) -> Result<Vec<f64>, SuperrepError> {
    let m = cone.num_generators();
    let children = tree.children(n);
    let steps: Vec<Vec<f64>> = children
        .iter()
        .map(|&c| {
            let ds = tree.price_step(n, c);
            cone.generators
                .iter()
                .map(|g| g.iter().zip(&ds).map(|(a, b)| a * b).sum())
                .collect()
        })
        .collect();
    let scale = children.iter().map(|&c| v[c].abs()).fold(v[n].abs(), f64::max).max(1.0);
    let fail = |detail: &str| SuperrepError::NodeDecompositionFailure {
        node: n,
        detail: detail.to_string(),
    };

    let build = |relax: f64| {
        let mut lp = LinearProgram::new(m);
        for (row, &c) in steps.iter().zip(children) {
            lp.add_row(row.clone(), Relation::Ge, v[c] - v[n] - relax);
        }
        lp
    };
    let slack_cost: Vec<f64> = (0..m).map(|i| steps.iter().map(|s| s[i]).sum()).collect();

    // V(n) comes from a different program, so rounding may need a nudge
    let mut found = None;
    for relax in [0.0, 1e-12 * scale, 1e-10 * scale, 1e-9 * scale] {
        let mut lp = build(relax);
        lp.set_objective(&slack_cost);
        if let Some(s) = lp.minimize().optimal() {
            found = Some((relax, s));
            break;
        }
    }
    let (relax, stage1) = found.ok_or_else(|| fail("no hedge dominates the children"))?;

    let mut lp = build(relax);
    lp.set_objective(&vec![1.0; m]);
    lp.add_row(slack_cost, Relation::Le, stage1.value + 1e-12 * scale);
    let stage2 = lp.minimize().optimal().map(|s| s.x).unwrap_or(stage1.x);
    Ok(stage2)
}
