//! Primal and dual solvers, the assumption gate, and certification of the
//! optimality relations linking `X*`, `ν*` and `x`.
//!
//! Two backends are available. `lp` handles piecewise-linear utilities
//! exactly through epigraph programs. `barrier` handles everything else: the
//! primal is written over cone weights of the elementary strategies and
//! per-leaf segment fills of `U`, the dual over per-leaf segment fills of
//! `−Ũ`, and both are solved by a log-barrier Newton method.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::barrier::{self, Elimination, Problem, Settings, Term};
use crate::dual_domain::{
    build_dual_cone, dual_contains, endowment_bound, find_msup_element, pairing, DualError,
    DualMeasure, MsupSearch, PolyhedralCone,
};
use crate::lp::{LinearProgram, LpOutcome, Relation};
use crate::market::{
    elementary_columns, terminal_gains, ClaimVector, ElementaryColumn, MarketError, Model,
    ScenarioTree, Strategy, TradingCone,
};
use crate::utility::{AeEstimate, InadaReport, PiecewiseUtility, UtilityError};

pub const DEFAULT_TOL: f64 = 1e-6;
/// Wealth must exceed the endowment bound by more than this.
pub const BOUND_MARGIN: f64 = 1e-10;
/// `X − B` down to `−DOMAIN_SLACK` is read as 0 when evaluating `U`.
pub const DOMAIN_SLACK: f64 = 1e-10;
/// Smallest `y` sampled by the asymptotic-elasticity estimate.
pub const AE_FLOOR: f64 = 8.673617379884035e-19; // 2^-60

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Barrier,
    Lp,
    Brute,
}

impl Backend {
    pub fn name(self) -> &'static str {
        match self {
            Backend::Barrier => "barrier",
            Backend::Lp => "lp",
            Backend::Brute => "brute",
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown backend {0:?} (expected lp, barrier, subgradient, convex or brute)")]
pub struct UnknownBackend(pub String);

impl FromStr for Backend {
    type Err = UnknownBackend;

    /// `subgradient` and `convex` name the general-case backend.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "barrier" | "subgradient" | "convex" => Ok(Backend::Barrier),
            "lp" => Ok(Backend::Lp),
            "brute" => Ok(Backend::Brute),
            _ => Err(UnknownBackend(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    /// Largest accepted duality gap.
    pub tol: f64,
    /// `None` picks `lp` for piecewise-linear utilities, `barrier` otherwise.
    pub backend: Option<Backend>,
    pub max_iterations: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            backend: None,
            max_iterations: 100_000,
        }
    }
}

/// The optimality relations checked by [`verify_relations`], plus the
/// consistency checks of [`verify_report`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimalityRelation {
    SingularPairing,
    Budget,
    Subdifferential,
    Gap,
    PrimalValue,
    DualValue,
    DualFeasibility,
    WealthIdentity,
}

impl fmt::Display for OptimalityRelation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimalityRelation::SingularPairing => "singular-pairing",
            OptimalityRelation::Budget => "budget",
            OptimalityRelation::Subdifferential => "subdifferential",
            OptimalityRelation::Gap => "gap",
            OptimalityRelation::PrimalValue => "primal-value",
            OptimalityRelation::DualValue => "dual-value",
            OptimalityRelation::DualFeasibility => "dual-feasibility",
            OptimalityRelation::WealthIdentity => "wealth-identity",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("initial wealth {x} does not exceed the endowment bound {bound}")]
    WealthBelowEndowmentBound { x: f64, bound: f64 },
    #[error("assumptions failed: {}", .0.join("; "))]
    AssumptionFailure(Vec<String>),
    #[error("no convergence: duality gap {gap:e}")]
    NoConvergence {
        gap: f64,
        report: Option<Box<SolveReport>>,
    },
    #[error("dual problem is unbounded below")]
    DualUnboundedBelow,
    #[error("primal problem is unbounded above")]
    PrimalUnbounded,
    #[error("backend {backend} cannot solve this problem: {reason}")]
    UnsupportedBackend { backend: Backend, reason: String },
    #[error("relation {which} violated by {magnitude:e}")]
    RelationViolated {
        which: OptimalityRelation,
        magnitude: f64,
    },
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error(transparent)]
    Dual(#[from] DualError),
    #[error(transparent)]
    Utility(#[from] UtilityError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrimalSolution {
    pub u_value: f64,
    pub h_star: Strategy,
    pub x_star: ClaimVector,
    pub iterations: usize,
    /// Bound on the suboptimality reported by the backend.
    pub gap_bound: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    pub w_value: f64,
    pub nu_star: DualMeasure,
    pub iterations: usize,
    pub gap_bound: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    #[serde(with = "crate::report::extended")]
    pub budget: f64,
    #[serde(with = "crate::report::extended")]
    pub subdiff_violation: f64,
    #[serde(with = "crate::report::extended")]
    pub singular_pairing: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    /// Polyhedral cones are closed.
    pub cone_closed: bool,
    pub inada: InadaReport,
    pub asymptotic_elasticity: AeEstimate,
    pub ae_finite: bool,
    pub msup_found: bool,
    /// Densities of the strictly positive supermartingale measure found.
    pub msup_densities: Option<Vec<f64>>,
    pub msup_min_weight: Option<f64>,
    /// `E[Ũ(dν/dP)] < ∞` at that measure.
    pub dual_finite: bool,
    pub endowment_bound: Option<f64>,
    /// `U` has a kink.
    pub nonsmooth: bool,
    pub failures: Vec<String>,
}

impl AssumptionReport {
    pub fn passes(&self) -> bool {
        self.failures.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub x: f64,
    pub u_value: f64,
    pub w_value: f64,
    pub gap: f64,
    pub x_star: ClaimVector,
    pub h_star: Strategy,
    pub nu_star: DualMeasure,
    pub y_star: f64,
    pub residuals: Residuals,
    pub backend: Backend,
    pub iterations: usize,
    pub assumptions: Option<AssumptionReport>,
}

/// Magnitudes of every relation; all within `tol` when returned by
/// [`verify_relations`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub tol: f64,
    pub singular_pairing: f64,
    pub budget: f64,
    pub subdiff_violation: f64,
    pub gap: f64,
    pub primal_value_drift: f64,
    pub dual_value_drift: f64,
}

// ---------------------------------------------------------------------------
// Objectives

/// `Σ P(ω)·U(X(ω) − B(ω))`, `−∞` outside the domain.
pub fn primal_objective(
    tree: &ScenarioTree,
    u: &PiecewiseUtility,
    b: &ClaimVector,
    x_terminal: &ClaimVector,
) -> Result<f64, MarketError> {
    b.check_len(tree)?;
    x_terminal.check_len(tree)?;
    Ok(expected_utility(&tree.leaf_probabilities(), u, b.values(), x_terminal.values()))
}

fn expected_utility(probs: &[f64], u: &PiecewiseUtility, b: &[f64], x: &[f64]) -> f64 {
    let mut s = 0.0;
    for ((p, bw), xw) in probs.iter().zip(b).zip(x) {
        let z = xw - bw;
        let v = u.value(if z < 0.0 && z >= -DOMAIN_SLACK { 0.0 } else { z });
        if v == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        s += p * v;
    }
    s
}

/// `Σ P(ω)·Ũ(ν(ω)/P(ω)) − ψ_ν(B) + x·ν(Ω)`, with zero weights contributing
/// `P(ω)·Ũ(0)` (possibly `+∞`).
pub fn dual_objective(
    u: &PiecewiseUtility,
    b: &ClaimVector,
    x: f64,
    nu: &DualMeasure,
) -> Result<f64, SolveError> {
    if b.len() != nu.weights().len() {
        return Err(DualError::DimensionMismatch {
            expected: nu.weights().len(),
            got: b.len(),
        }
        .into());
    }
    if nu.weights().iter().any(|w| !(*w >= 0.0)) {
        return Ok(f64::INFINITY);
    }
    let mut s = 0.0;
    for ((w, p), bw) in nu.weights().iter().zip(nu.probabilities()).zip(b.values()) {
        let c = u.conjugate(w / p)?;
        if c == f64::INFINITY {
            return Ok(f64::INFINITY);
        }
        s += p * c - w * bw + x * w;
    }
    Ok(s)
}

// ---------------------------------------------------------------------------
// Backend helpers

fn resolve_backend(u: &PiecewiseUtility, opts: &SolveOptions) -> Result<Backend, SolveError> {
    match opts.backend {
        None if u.is_piecewise_linear() => Ok(Backend::Lp),
        None | Some(Backend::Barrier) => Ok(Backend::Barrier),
        Some(Backend::Lp) if u.is_piecewise_linear() => Ok(Backend::Lp),
        Some(Backend::Lp) => Err(SolveError::UnsupportedBackend {
            backend: Backend::Lp,
            reason: "utility has nonlinear pieces".into(),
        }),
        Some(Backend::Brute) => Err(SolveError::UnsupportedBackend {
            backend: Backend::Brute,
            reason: "use the oracle module for grid search".into(),
        }),
    }
}

fn settings(opts: &SolveOptions) -> Settings {
    Settings {
        max_iterations: opts.max_iterations,
        ..Settings::default()
    }
}

/// `(slope, intercept)` of every piece of a piecewise-linear `U`; `U` is
/// their pointwise minimum on `[0, ∞)`.
fn piece_lines(u: &PiecewiseUtility) -> Vec<(f64, f64)> {
    u.knots()
        .iter()
        .map(|&k| {
            let a = u.right_derivative(k);
            (a, u.value(k) - a * k)
        })
        .collect()
}

/// Splits `total > 0` over segments with the given lengths so that every
/// fill is strictly inside its bounds. The last length must be infinite.
fn split_interior(total: f64, lens: &[f64]) -> Vec<f64> {
    let n = lens.len();
    let share = total / (n + 1) as f64;
    let mut out: Vec<f64> = lens[..n - 1].iter().map(|&l| share.min(0.5 * l)).collect();
    let used: f64 = out.iter().sum();
    out.push(total - used);
    out
}

/// `min v` subject to `v + Gμ ≥ B`, `μ ≥ 0`.
fn hedge_weights(cols: &[ElementaryColumn], b: &[f64]) -> Option<(f64, Vec<f64>)> {
    let k = cols.len();
    let mut lp = LinearProgram::new(k + 1);
    lp.set_objective_coeff(k, 1.0);
    lp.set_free(k);
    for (w, &bw) in b.iter().enumerate() {
        let mut row: Vec<f64> = cols.iter().map(|c| c.leaf_gains[w]).collect();
        row.push(1.0);
        lp.add_row(row, Relation::Ge, bw);
    }
    lp.minimize().optimal().map(|s| (s.value, s.x[..k].to_vec()))
}

fn strategy_outcome(
    tree: &ScenarioTree,
    cone: &TradingCone,
    u: &PiecewiseUtility,
    b: &ClaimVector,
    x: f64,
    mu: &[f64],
) -> Result<(Strategy, ClaimVector, f64), SolveError> {
    let mu: Vec<f64> = mu.iter().map(|m| m.max(0.0)).collect();
    let h = Strategy::from_cone_weights(tree, cone, &mu);
    let gains = terminal_gains(tree, &h)?;
    let x_star = ClaimVector(gains.values().iter().map(|g| x + g).collect());
    let value = primal_objective(tree, u, b, &x_star)?;
    Ok((h, x_star, value))
}

// ---------------------------------------------------------------------------
// Primal

/// Maximizes `E[U(x + (H·S)_T − B)]` over cone-feasible strategies.
pub fn solve_primal(
    tree: &ScenarioTree,
    cone: &TradingCone,
    u: &PiecewiseUtility,
    b: &ClaimVector,
    x: f64,
    opts: &SolveOptions,
) -> Result<PrimalSolution, SolveError> {
    b.check_len(tree)?;
    match resolve_backend(u, opts)? {
        Backend::Lp => primal_lp(tree, cone, u, b, x),
        _ => primal_barrier(tree, cone, u, b, x, opts),
    }
}

fn primal_lp(
    tree: &ScenarioTree,
    cone: &TradingCone,
    u: &PiecewiseUtility,
    b: &ClaimVector,
    x: f64,
) -> Result<PrimalSolution, SolveError> {
    let cols = elementary_columns(tree, cone);
    let k = cols.len();
    let l = tree.num_leaves();
    let probs = tree.leaf_probabilities();
    let lines = piece_lines(u);
    // variables: μ (k), T (l, free)
    let mut lp = LinearProgram::new(k + l);
    for (w, p) in probs.iter().enumerate() {
        lp.set_objective_coeff(k + w, *p);
        lp.set_free(k + w);
    }
    for w in 0..l {
        let z0 = x - b.values()[w];
        for &(a, c) in &lines {
            let mut row = vec![0.0; k + l];
            for (j, col) in cols.iter().enumerate() {
                row[j] = -a * col.leaf_gains[w];
            }
            row[k + w] = 1.0;
            lp.add_row(row, Relation::Le, a * z0 + c);
        }
        let mut row = vec![0.0; k + l];
        for (j, col) in cols.iter().enumerate() {
            row[j] = -col.leaf_gains[w];
        }
        lp.add_row(row, Relation::Le, z0);
    }
    match lp.maximize() {
        LpOutcome::Optimal(s) => {
            let (h_star, x_star, u_value) = strategy_outcome(tree, cone, u, b, x, &s.x[..k])?;
            Ok(PrimalSolution {
                u_value,
                h_star,
                x_star,
                iterations: 1,
                gap_bound: 0.0,
                converged: true,
            })
        }
        LpOutcome::Unbounded => Err(SolveError::PrimalUnbounded),
        LpOutcome::Failed(_) => Err(SolveError::NoConvergence {
            gap: f64::INFINITY,
            report: None,
        }),
        LpOutcome::Infeasible => {
            let bound = hedge_weights(&cols, b.values()).map_or(f64::INFINITY, |h| h.0);
            Err(SolveError::WealthBelowEndowmentBound { x, bound })
        }
    }
}

fn primal_barrier(
    tree: &ScenarioTree,
    cone: &TradingCone,
    u: &PiecewiseUtility,
    b: &ClaimVector,
    x: f64,
    opts: &SolveOptions,
) -> Result<PrimalSolution, SolveError> {
    let cols = elementary_columns(tree, cone);
    let k = cols.len();
    let l = tree.num_leaves();
    let probs = tree.leaf_probabilities();
    let (v, mu_h) = hedge_weights(&cols, b.values()).ok_or(DualError::InfeasibleDualDomain)?;
    if !(x > v) {
        return Err(SolveError::WealthBelowEndowmentBound { x, bound: v });
    }
    let row_abs = (0..l)
        .map(|w| cols.iter().map(|c| c.leaf_gains[w].abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let eps = 0.1 * (x - v) / row_abs.max(1.0);
    let mu0: Vec<f64> = mu_h.iter().map(|m| m.max(0.0) + eps).collect();

    let funcs = [u.primal_segments()];
    let seg = &funcs[0];
    let ns = seg.segments.len();
    let lens: Vec<f64> = (0..ns).map(|j| seg.length(j)).collect();
    let n = l * ns + k;

    let mut terms = vec![None; n];
    let mut rows = Vec::with_capacity(l);
    let mut rhs = Vec::with_capacity(l);
    let mut z0 = vec![0.0; n];
    for w in 0..l {
        let mut row: Vec<(usize, f64)> = (0..ns).map(|j| (w * ns + j, 1.0)).collect();
        for (j, col) in cols.iter().enumerate() {
            if col.leaf_gains[w] != 0.0 {
                row.push((l * ns + j, -col.leaf_gains[w]));
            }
        }
        rows.push(row);
        rhs.push(x - b.values()[w]);
        for j in 0..ns {
            terms[w * ns + j] = Some(Term {
                func: 0,
                seg: j,
                weight: probs[w],
            });
        }
        let gm: f64 = cols.iter().zip(&mu0).map(|(c, m)| c.leaf_gains[w] * m).sum();
        let fill = split_interior(x - b.values()[w] + gm, &lens);
        z0[w * ns..(w + 1) * ns].copy_from_slice(&fill);
    }
    z0[l * ns..].copy_from_slice(&mu0);

    let lower = vec![0.0; n];
    let mut upper: Vec<f64> = (0..l).flat_map(|_| lens.iter().copied()).collect();
    upper.resize(n, 0.0);

    let mut cap = 100.0 * mu0.iter().fold(1.0f64, |a, &m| a.max(m));
    let mut total_iterations = 0;
    loop {
        for u_j in upper[l * ns..].iter_mut() {
            *u_j = cap;
        }
        let p = Problem {
            lower: lower.clone(),
            upper: upper.clone(),
            linear: vec![0.0; n],
            terms: terms.clone(),
            rows: rows.clone(),
            rhs: rhs.clone(),
            funcs: &funcs,
            elimination: Elimination::Locals,
        };
        let out = barrier::solve(&p, z0.clone(), settings(opts));
        total_iterations += out.iterations;
        let mu = &out.z[l * ns..];
        if mu.iter().any(|&m| m > 0.9 * cap) && cap < 1e12 {
            cap *= 100.0;
            continue;
        }
        let (h_star, x_star, u_value) = strategy_outcome(tree, cone, u, b, x, mu)?;
        return Ok(PrimalSolution {
            u_value,
            h_star,
            x_star,
            iterations: total_iterations,
            gap_bound: out.gap_bound,
            converged: out.converged,
        });
    }
}

// ---------------------------------------------------------------------------
// Dual

/// Minimizes `E[Ũ(ν/P)] − ψ_ν(B) + x·ν(Ω)` over `ν ∈ M`.
pub fn solve_dual(
    tree: &ScenarioTree,
    dc: &PolyhedralCone,
    u: &PiecewiseUtility,
    b: &ClaimVector,
    x: f64,
    opts: &SolveOptions,
) -> Result<DualSolution, SolveError> {
    b.check_len(tree)?;
    let bound = endowment_bound(dc, tree, b)?;
    if x <= bound + BOUND_MARGIN {
        return Err(SolveError::WealthBelowEndowmentBound { x, bound });
    }
    match resolve_backend(u, opts)? {
        Backend::Lp => dual_lp(tree, dc, u, b, x),
        _ => dual_barrier(tree, dc, u, b, x, opts),
    }
}

fn dual_lp(
    tree: &ScenarioTree,
    dc: &PolyhedralCone,
    u: &PiecewiseUtility,
    b: &ClaimVector,
    x: f64,
) -> Result<DualSolution, SolveError> {
    let l = tree.num_leaves();
    let probs = tree.leaf_probabilities();
    let knots = u.knots();
    let tail = u.slope_range().0;
    // variables: ν (l), T (l, free); T(ω) ≥ P(ω)·Ũ(ν(ω)/P(ω))
    let mut lp = LinearProgram::new(2 * l);
    for w in 0..l {
        lp.set_objective_coeff(w, x - b.values()[w]);
        lp.set_objective_coeff(l + w, 1.0);
        lp.set_free(l + w);
    }
    dc.constrain(&mut lp);
    for w in 0..l {
        for &k in &knots {
            let mut row = vec![0.0; 2 * l];
            row[w] = k;
            row[l + w] = 1.0;
            lp.add_row(row, Relation::Ge, probs[w] * u.value(k));
        }
        if tail > 0.0 {
            let mut row = vec![0.0; 2 * l];
            row[w] = 1.0;
            lp.add_row(row, Relation::Ge, tail * probs[w]);
        }
    }
    match lp.minimize() {
        LpOutcome::Optimal(s) => {
            let nu_star = DualMeasure::new(tree, s.x[..l].iter().map(|v| v.max(0.0)).collect())?;
            let w_value = dual_objective(u, b, x, &nu_star)?;
            Ok(DualSolution {
                w_value,
                nu_star,
                iterations: 1,
                gap_bound: 0.0,
                converged: true,
            })
        }
        LpOutcome::Unbounded => Err(SolveError::DualUnboundedBelow),
        LpOutcome::Failed(_) => Err(SolveError::NoConvergence {
            gap: f64::INFINITY,
            report: None,
        }),
        LpOutcome::Infeasible => Err(DualError::InfeasibleDualDomain.into()),
    }
}

/// Orthonormal basis of the vectors orthogonal to every row.
fn null_space_basis(rows: &[Vec<f64>], dim: usize) -> Vec<Vec<f64>> {
    fn reduce(v: &mut [f64], basis: &[Vec<f64>]) {
        for _ in 0..2 {
            for q in basis {
                let c: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
                for (vi, qi) in v.iter_mut().zip(q) {
                    *vi -= c * qi;
                }
            }
        }
    }
    fn norm(v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
    let mut span: Vec<Vec<f64>> = Vec::new();
    for r in rows {
        let n0 = norm(r);
        let mut v = r.clone();
        reduce(&mut v, &span);
        let n1 = norm(&v);
        if n0 > 1e-14 && n1 > 1e-10 * n0 {
            span.push(v.iter().map(|x| x / n1).collect());
        }
    }
    let mut null: Vec<Vec<f64>> = Vec::new();
    for i in 0..dim {
        if span.len() + null.len() == dim {
            break;
        }
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        reduce(&mut v, &span);
        reduce(&mut v, &null);
        let n1 = norm(&v);
        if n1 > 1e-8 {
            null.push(v.iter().map(|x| x / n1).collect());
        }
    }
    null
}

/// A normalized element of `M` in the relative interior: strictly positive
/// and strictly inside every row that is not an implicit equality.
fn relative_interior(
    dc: &PolyhedralCone,
    implicit: &BTreeSet<usize>,
    probs: &[f64],
) -> Result<Vec<f64>, SolveError> {
    let l = probs.len();
    let mut lp = LinearProgram::new(l + 1);
    lp.set_objective_coeff(l, 1.0);
    for (w, p) in probs.iter().enumerate() {
        let mut row = vec![0.0; l + 1];
        row[w] = 1.0;
        row[l] = -p;
        lp.add_row(row, Relation::Ge, 0.0);
    }
    for (i, r) in dc.rows().iter().enumerate() {
        let mut row = r.coeffs.clone();
        if implicit.contains(&i) {
            row.push(0.0);
            lp.add_row(row, Relation::Eq, 0.0);
        } else {
            row.push(r.coeffs.iter().map(|c| c.abs()).sum());
            lp.add_row(row, Relation::Le, 0.0);
        }
    }
    let mut mass = vec![1.0; l];
    mass.push(0.0);
    lp.add_row(mass, Relation::Eq, 1.0);
    let mut cap = vec![0.0; l];
    cap.push(1.0);
    lp.add_row(cap, Relation::Le, 1.0);
    match lp.maximize() {
        LpOutcome::Optimal(s) if s.value > 1e-12 => Ok(s.x[..l].to_vec()),
        _ => Err(SolveError::AssumptionFailure(vec![
            "no strictly positive supermartingale measure".into(),
        ])),
    }
}

/// Variables: segment fills `t` of `−Ũ` per leaf (`y = lo + Σ t`), slacks
/// of the cone rows that are not implicit equalities, and free coordinates
/// `η` with `y = Nη` for a basis `N` of the subspace cut out by the implicit
/// equalities. Every equality row then owns a bounded variable.
fn dual_barrier(
    tree: &ScenarioTree,
    dc: &PolyhedralCone,
    u: &PiecewiseUtility,
    b: &ClaimVector,
    x: f64,
    opts: &SolveOptions,
) -> Result<DualSolution, SolveError> {
    let l = tree.num_leaves();
    let probs = tree.leaf_probabilities();
    let implicit: BTreeSet<usize> = dc.implicit_equalities().into_iter().collect();
    let nu_hat = relative_interior(dc, &implicit, &probs)?;
    let all_rows = dc.rows();
    // rows in y-coordinates: r(ω)·P(ω)
    let y_row = |i: usize| -> Vec<f64> {
        all_rows[i].coeffs.iter().zip(&probs).map(|(c, p)| c * p).collect()
    };
    let eq_rows: Vec<Vec<f64>> = implicit.iter().map(|&i| y_row(i)).collect();
    let basis = null_space_basis(&eq_rows, l);
    let ineq: Vec<Vec<f64>> = (0..all_rows.len())
        .filter(|i| !implicit.contains(i))
        .map(y_row)
        .collect();

    let funcs = [u.dual_segments()];
    let seg = &funcs[0];
    let lo = seg.lo;
    let ns = seg.segments.len();
    let lens: Vec<f64> = (0..ns).map(|j| seg.length(j)).collect();
    let min_density = nu_hat
        .iter()
        .zip(&probs)
        .map(|(n, p)| n / p)
        .fold(f64::INFINITY, f64::min);
    let kappa = (2.0 * lo / min_density).max(1.0);
    let y0: Vec<f64> = nu_hat.iter().zip(&probs).map(|(n, p)| kappa * n / p).collect();

    let nt = l * ns;
    let nsig = ineq.len();
    let ne = basis.len();
    let n = nt + nsig + ne;
    let mut lower = vec![0.0; n];
    let mut upper = vec![f64::INFINITY; n];
    let mut linear = vec![0.0; n];
    let mut terms = vec![None; n];
    let mut z0 = vec![0.0; n];
    for w in 0..l {
        for j in 0..ns {
            let i = w * ns + j;
            upper[i] = lens[j];
            linear[i] = probs[w] * (b.values()[w] - x);
            terms[i] = Some(Term {
                func: 0,
                seg: j,
                weight: probs[w],
            });
        }
        let fill = split_interior(y0[w] - lo, &lens);
        z0[w * ns..(w + 1) * ns].copy_from_slice(&fill);
    }
    for k in 0..ne {
        let i = nt + nsig + k;
        lower[i] = f64::NEG_INFINITY;
        z0[i] = basis[k].iter().zip(&y0).map(|(a, b)| a * b).sum();
    }
    let mut rows = Vec::with_capacity(l + nsig);
    let mut rhs = Vec::with_capacity(l + nsig);
    // leaf rows: Σ t − (Nη)(ω) = −lo
    for w in 0..l {
        let mut row: Vec<(usize, f64)> = (0..ns).map(|j| (w * ns + j, 1.0)).collect();
        for (k, q) in basis.iter().enumerate() {
            if q[w] != 0.0 {
                row.push((nt + nsig + k, -q[w]));
            }
        }
        rows.push(row);
        rhs.push(-lo);
    }
    // cone rows: a·Nη + σ = 0
    for (s, a) in ineq.iter().enumerate() {
        let mut row = vec![(nt + s, 1.0)];
        for (k, q) in basis.iter().enumerate() {
            let c: f64 = a.iter().zip(q).map(|(x, y)| x * y).sum();
            if c != 0.0 {
                row.push((nt + nsig + k, c));
            }
        }
        rows.push(row);
        rhs.push(0.0);
        z0[nt + s] = -a.iter().zip(&y0).map(|(x, y)| x * y).sum::<f64>();
    }

    let p = Problem {
        lower,
        upper,
        linear,
        terms,
        rows,
        rhs,
        funcs: &funcs,
        elimination: Elimination::Locals,
    };
    let out = barrier::solve(&p, z0, settings(opts));
    let weights: Vec<f64> = (0..l)
        .map(|w| {
            let y = lo + out.z[w * ns..(w + 1) * ns].iter().sum::<f64>();
            probs[w] * y
        })
        .collect();
    let nu_star = DualMeasure::new(tree, weights)?;
    let w_value = dual_objective(u, b, x, &nu_star)?;
    Ok(DualSolution {
        w_value,
        nu_star,
        iterations: out.iterations,
        gap_bound: out.gap_bound,
        converged: out.converged,
    })
}

// ---------------------------------------------------------------------------
// Assumptions and the combined solve

/// Evaluates every standing hypothesis for `(model, U, B)`.
pub fn check_assumptions(model: &Model, u: &PiecewiseUtility, b: &ClaimVector) -> AssumptionReport {
    let tree = &model.tree;
    let dc = build_dual_cone(tree, &model.cone);
    let inada = u.check_inada();
    let ae = u.asymptotic_elasticity(AE_FLOOR);
    let ae_finite = ae.value.is_finite();
    let msup = find_msup_element(&dc, tree);
    let (msup_densities, msup_min_weight) = match &msup {
        MsupSearch::Found {
            measure,
            min_weight,
        } => (Some(measure.densities()), Some(*min_weight)),
        MsupSearch::Infeasible { .. } => (None, None),
    };
    let dual_finite = msup_densities.as_ref().is_some_and(|d| {
        d.iter()
            .zip(tree.leaf_probabilities())
            .map(|(z, p)| u.conjugate(*z).map_or(f64::INFINITY, |c| p * c))
            .sum::<f64>()
            .is_finite()
    });
    let endowment_bound = if b.len() == tree.num_leaves() {
        endowment_bound(&dc, tree, b).ok()
    } else {
        None
    };

    let mut failures = Vec::new();
    if !inada.passes {
        failures.push(format!(
            "inada: slopes range over [{}, {}], need [0, inf]",
            inada.inf_slope, inada.sup_slope
        ));
    }
    if !ae_finite {
        failures.push("asymptotic elasticity: estimate is not finite".into());
    }
    match &msup {
        MsupSearch::Found { .. } => {}
        MsupSearch::Infeasible { best_min_weight } => failures.push(match best_min_weight {
            Some(m) => format!(
                "supermartingale measure: no strictly positive element (best minimum weight {m:e})"
            ),
            None => "supermartingale measure: the normalized dual domain is empty".into(),
        }),
    }
    if msup_densities.is_some() && !dual_finite {
        failures.push("dual finiteness: expected conjugate is infinite".into());
    }
    AssumptionReport {
        cone_closed: true,
        inada,
        asymptotic_elasticity: ae,
        ae_finite,
        msup_found: msup_densities.is_some(),
        msup_densities,
        msup_min_weight,
        dual_finite,
        endowment_bound,
        nonsmooth: !u.is_smooth(),
        failures,
    }
}

fn budget_residual(report: &SolveReport) -> Result<f64, SolveError> {
    let psi = pairing(&report.nu_star, &report.x_star)?;
    Ok((psi - report.x * report.nu_star.mass()).abs())
}

/// Largest distance of `(X*(ω) − B(ω), ν*(ω)/P(ω))` from the graph of the
/// conjugate argmax, in the max norm. A leaf sitting on a kink up to
/// rounding is at distance zero even when the slope misses the kink
/// interval by an ulp. Leaves without dual weight are held to the
/// satiation point instead.
fn subdiff_violation(
    u: &PiecewiseUtility,
    b: &ClaimVector,
    x_star: &ClaimVector,
    nu: &DualMeasure,
) -> f64 {
    let sat = u.satiation_point();
    let mut worst: f64 = 0.0;
    for (((w, p), xs), bw) in nu
        .weights()
        .iter()
        .zip(nu.probabilities())
        .zip(x_star.values())
        .zip(b.values())
    {
        let z = xs - bw;
        let v = if *w > 0.0 {
            graph_distance(u, z, w / p)
        } else {
            (sat - z).max(0.0)
        };
        worst = worst.max(if v.is_nan() { f64::INFINITY } else { v });
    }
    worst
}

/// Smallest `t` with `z` within `t` of `argmax(y')` for some `|y' − y| ≤ t`.
fn graph_distance(u: &PiecewiseUtility, z: f64, y: f64) -> f64 {
    let near = |t: f64| {
        let lo = u.conjugate_argmax(y + t).map_or(f64::INFINITY, |iv| iv.lo);
        let hi = if y - t > 0.0 {
            u.conjugate_argmax(y - t).map_or(f64::INFINITY, |iv| iv.hi)
        } else {
            f64::INFINITY
        };
        lo - t <= z && z <= hi + t
    };
    if !z.is_finite() || !y.is_finite() {
        return f64::INFINITY;
    }
    if near(0.0) {
        return 0.0;
    }
    let mut hi = 1.0;
    while !near(hi) {
        hi *= 2.0;
        if hi > 1e300 {
            return f64::INFINITY;
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if near(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

fn assemble(
    x: f64,
    u: &PiecewiseUtility,
    b: &ClaimVector,
    backend: Backend,
    p: PrimalSolution,
    d: DualSolution,
    assumptions: Option<AssumptionReport>,
) -> Result<SolveReport, SolveError> {
    let mut report = SolveReport {
        x,
        u_value: p.u_value,
        w_value: d.w_value,
        gap: (p.u_value - d.w_value).abs(),
        y_star: d.nu_star.mass(),
        residuals: Residuals {
            budget: 0.0,
            subdiff_violation: 0.0,
            singular_pairing: 0.0,
        },
        backend,
        iterations: p.iterations + d.iterations,
        assumptions,
        x_star: p.x_star,
        h_star: p.h_star,
        nu_star: d.nu_star,
    };
    if report.gap.is_nan() {
        report.gap = f64::INFINITY;
    }
    report.residuals.budget = budget_residual(&report)?;
    report.residuals.subdiff_violation = subdiff_violation(u, b, &report.x_star, &report.nu_star);
    Ok(report)
}

/// Checks the hypotheses, solves both problems and assembles a report.
/// Fails with [`SolveError::NoConvergence`] (carrying the report) when the
/// duality gap exceeds `opts.tol`.
pub fn solve(
    model: &Model,
    u: &PiecewiseUtility,
    b: &ClaimVector,
    x: f64,
    opts: &SolveOptions,
    force: bool,
) -> Result<SolveReport, SolveError> {
    let tree = &model.tree;
    b.check_len(tree)?;
    let assumptions = check_assumptions(model, u, b);
    if !assumptions.passes() && !force {
        return Err(SolveError::AssumptionFailure(assumptions.failures));
    }
    let dc = build_dual_cone(tree, &model.cone);
    let bound = endowment_bound(&dc, tree, b)?;
    if !(x > bound + BOUND_MARGIN) {
        return Err(SolveError::WealthBelowEndowmentBound { x, bound });
    }
    let backend = resolve_backend(u, opts)?;
    let p = solve_primal(tree, &model.cone, u, b, x, opts)?;
    let d = solve_dual(tree, &dc, u, b, x, opts)?;
    let report = assemble(x, u, b, backend, p, d, Some(assumptions))?;
    if !(report.gap <= opts.tol) {
        return Err(SolveError::NoConvergence {
            gap: report.gap,
            report: Some(Box::new(report)),
        });
    }
    Ok(report)
}

/// Assembles a report from separately computed primal and dual solutions.
pub fn report_from_solutions(
    x: f64,
    u: &PiecewiseUtility,
    b: &ClaimVector,
    backend: Backend,
    p: PrimalSolution,
    d: DualSolution,
) -> Result<SolveReport, SolveError> {
    assemble(x, u, b, backend, p, d, None)
}

// ---------------------------------------------------------------------------
// Certification

fn check(which: OptimalityRelation, magnitude: f64, tol: f64) -> Result<f64, SolveError> {
    if magnitude <= tol {
        Ok(magnitude)
    } else {
        Err(SolveError::RelationViolated { which, magnitude })
    }
}

/// Recomputes and checks the optimality relations of a report: the
/// singular pairing, the budget identity `ψ_ν*(X*) = x·ν*(Ω)`, membership
/// `X* − B ∈ −∂Ũ(dν*/dP)`, the duality gap, and the stated values against
/// `X*` and `ν*`.
pub fn verify_relations(
    report: &SolveReport,
    u: &PiecewiseUtility,
    b: &ClaimVector,
    tol: f64,
) -> Result<Certificate, SolveError> {
    use OptimalityRelation::*;
    let singular = report.nu_star.singular_part();
    let singular_pairing = singular
        .iter()
        .zip(report.x_star.values())
        .zip(b.values())
        .map(|((s, x), bw)| s * (x - bw))
        .sum::<f64>()
        .abs();
    if singular_pairing != 0.0 {
        return Err(SolveError::RelationViolated {
            which: SingularPairing,
            magnitude: singular_pairing,
        });
    }
    let budget = check(Budget, budget_residual(report)?, tol)?;
    let subdiff = check(
        Subdifferential,
        subdiff_violation(u, b, &report.x_star, &report.nu_star),
        tol,
    )?;
    let u_re = expected_utility(report.nu_star.probabilities(), u, b.values(), report.x_star.values());
    let w_re = dual_objective(u, b, report.x, &report.nu_star)?;
    let gap = check(Gap, (u_re - w_re).abs(), tol)?;
    let primal_drift = check(PrimalValue, (u_re - report.u_value).abs(), tol)?;
    let dual_drift = check(DualValue, (w_re - report.w_value).abs(), tol)?;
    Ok(Certificate {
        tol,
        singular_pairing,
        budget,
        subdiff_violation: subdiff,
        gap,
        primal_value_drift: primal_drift,
        dual_value_drift: dual_drift,
    })
}

/// [`verify_relations`] plus `ν* ∈ M` and `X* = x + (H*·S)_T` against the
/// model.
pub fn verify_report(
    model: &Model,
    report: &SolveReport,
    u: &PiecewiseUtility,
    b: &ClaimVector,
    tol: f64,
) -> Result<Certificate, SolveError> {
    b.check_len(&model.tree)?;
    report.x_star.check_len(&model.tree)?;
    let cert = verify_relations(report, u, b, tol)?;
    let dc = build_dual_cone(&model.tree, &model.cone);
    if !dual_contains(&dc, &report.nu_star)? {
        let worst = dc.max_violation(report.nu_star.weights()).max(
            -report.nu_star.weights().iter().fold(0.0f64, |m, w| m.min(*w)),
        );
        return Err(SolveError::RelationViolated {
            which: OptimalityRelation::DualFeasibility,
            magnitude: worst,
        });
    }
    let gains = terminal_gains(&model.tree, &report.h_star)?;
    let drift = gains
        .values()
        .iter()
        .zip(report.x_star.values())
        .map(|(g, xs)| (report.x + g - xs).abs())
        .fold(0.0, f64::max);
    check(OptimalityRelation::WealthIdentity, drift, tol)?;
    Ok(cert)
}
