//! The polar cone `M` of super-replicable claims as a finite inequality
//! system over terminal-node weights, plus the supermartingale-measure
//! searches built on it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lp::{LinearProgram, LpOutcome, Relation};
use crate::market::{elementary_columns, ClaimVector, ScenarioTree, TradingCone};

/// Row slack allowed by [`dual_contains`].
pub const DUAL_TOL: f64 = 1e-9;
/// Minimum weight below which no strictly positive element is deemed to
/// exist.
pub const MSUP_THRESHOLD: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DualError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("the normalized dual domain is empty")]
    InfeasibleDualDomain,
}

/// Nonnegative weights on terminal nodes, with the path probabilities
/// needed for densities. Weights are not validated here so that
/// membership tests can reject negative entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualMeasure {
    weights: Vec<f64>,
    probs: Vec<f64>,
}

impl DualMeasure {
    pub fn new(tree: &ScenarioTree, weights: Vec<f64>) -> Result<Self, DualError> {
        if weights.len() != tree.num_leaves() {
            return Err(DualError::DimensionMismatch {
                expected: tree.num_leaves(),
                got: weights.len(),
            });
        }
        Ok(Self {
            weights,
            probs: tree.leaf_probabilities(),
        })
    }

    /// Builds `ν` from densities `dν/dP`.
    pub fn from_densities(tree: &ScenarioTree, densities: &[f64]) -> Result<Self, DualError> {
        let probs = tree.leaf_probabilities();
        if densities.len() != probs.len() {
            return Err(DualError::DimensionMismatch {
                expected: probs.len(),
                got: densities.len(),
            });
        }
        let weights = densities.iter().zip(&probs).map(|(z, p)| z * p).collect();
        Ok(Self { weights, probs })
    }

    pub fn zero(tree: &ScenarioTree) -> Self {
        Self {
            weights: vec![0.0; tree.num_leaves()],
            probs: tree.leaf_probabilities(),
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }

    pub fn densities(&self) -> Vec<f64> {
        self.weights.iter().zip(&self.probs).map(|(w, p)| w / p).collect()
    }

    /// `ν(Ω)`.
    pub fn mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            weights: self.weights.iter().map(|w| a * w).collect(),
            probs: self.probs.clone(),
        }
    }

    /// The finitely additive part; identically zero on a finite space.
    pub fn singular_part(&self) -> Vec<f64> {
        vec![0.0; self.weights.len()]
    }

    /// Densities keyed by leaf node id.
    pub fn density_map(&self, tree: &ScenarioTree) -> BTreeMap<usize, f64> {
        tree.leaves().iter().copied().zip(self.densities()).collect()
    }

    pub fn from_density_map(
        tree: &ScenarioTree,
        map: &BTreeMap<usize, f64>,
    ) -> Result<Self, DualError> {
        let dens: Option<Vec<f64>> = tree.leaves().iter().map(|l| map.get(l).copied()).collect();
        match dens {
            Some(d) if map.len() == tree.num_leaves() => Self::from_densities(tree, &d),
            _ => Err(DualError::DimensionMismatch {
                expected: tree.num_leaves(),
                got: map.len(),
            }),
        }
    }
}

/// One polar inequality `Σ_ω coeffs[ω]·ν(ω) ≤ 0`, coming from the
/// elementary strategy `k_generator · 1_node`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeRow {
    pub node: usize,
    pub generator: usize,
    pub coeffs: Vec<f64>,
}

impl ConeRow {
    pub fn apply(&self, nu: &[f64]) -> f64 {
        self.coeffs.iter().zip(nu).map(|(a, b)| a * b).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolyhedralCone {
    rows: Vec<ConeRow>,
    leaves: usize,
}

impl PolyhedralCone {
    pub fn rows(&self) -> &[ConeRow] {
        &self.rows
    }

    pub fn num_leaves(&self) -> usize {
        self.leaves
    }

    /// Largest row value at `ν`.
    pub fn max_violation(&self, nu: &[f64]) -> f64 {
        self.rows.iter().map(|r| r.apply(nu)).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Adds `ν ∈ M` and `ν ≥ 0` (implied by the LP) to a program whose
    /// first `leaves` variables are `ν`.
    pub(crate) fn constrain(&self, lp: &mut LinearProgram) {
        for r in &self.rows {
            let mut coeffs = r.coeffs.clone();
            coeffs.resize(lp.num_vars(), 0.0);
            lp.add_row(coeffs, Relation::Le, 0.0);
        }
    }

    /// Indices of rows that vanish on all of `M ∩ {ν(Ω) = 1}`. These rows
    /// hold with equality for every dual element.
    pub fn implicit_equalities(&self) -> Vec<usize> {
        let n = self.leaves;
        let mut out = Vec::new();
        for (i, row) in self.rows.iter().enumerate() {
            if row.coeffs.iter().all(|c| c.abs() <= 1e-14) {
                out.push(i);
                continue;
            }
            let mut lp = LinearProgram::new(n);
            lp.set_objective(&row.coeffs.iter().map(|c| -c).collect::<Vec<_>>());
            self.constrain(&mut lp);
            lp.add_row(vec![1.0; n], Relation::Eq, 1.0);
            match lp.maximize() {
                LpOutcome::Optimal(s) => {
                    let scale = row.coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
                    if s.value <= 1e-10 * scale.max(1.0) {
                        out.push(i);
                    }
                }
                _ => out.push(i),
            }
        }
        out
    }
}

/// Node × generator rows of the polar cone: coefficient `kᵢ·ΔS` over the
/// step from `node` toward each leaf below it, zero elsewhere.
pub fn build_dual_cone(tree: &ScenarioTree, cone: &TradingCone) -> PolyhedralCone {
    let rows = elementary_columns(tree, cone)
        .into_iter()
        .map(|c| ConeRow {
            node: c.node,
            generator: c.generator,
            coeffs: c.leaf_gains,
        })
        .collect();
    PolyhedralCone {
        rows,
        leaves: tree.num_leaves(),
    }
}

/// `ν ≥ 0` and every row `≤ 1e-9`.
pub fn dual_contains(dc: &PolyhedralCone, nu: &DualMeasure) -> Result<bool, DualError> {
    if nu.weights.len() != dc.leaves {
        return Err(DualError::DimensionMismatch {
            expected: dc.leaves,
            got: nu.weights.len(),
        });
    }
    if nu.weights.iter().any(|&w| w < 0.0) {
        return Ok(false);
    }
    Ok(dc.rows.iter().all(|r| r.apply(&nu.weights) <= DUAL_TOL))
}

#[derive(Debug, Clone, PartialEq)]
pub enum MsupSearch {
    /// A normalized, strictly positive element of `M` and its smallest
    /// weight.
    Found { measure: DualMeasure, min_weight: f64 },
    /// No element has all weights above the threshold; carries the best
    /// minimum weight when the normalized slice is nonempty.
    Infeasible { best_min_weight: Option<f64> },
}

impl MsupSearch {
    pub fn measure(&self) -> Option<&DualMeasure> {
        match self {
            MsupSearch::Found { measure, .. } => Some(measure),
            MsupSearch::Infeasible { .. } => None,
        }
    }
}

/// Maximizes the smallest weight over `M ∩ {ν(Ω) = 1}`.
pub fn find_msup_element(dc: &PolyhedralCone, tree: &ScenarioTree) -> MsupSearch {
    let n = dc.leaves;
    // variables: ν (n), δ
    let mut lp = LinearProgram::new(n + 1);
    lp.set_objective_coeff(n, 1.0);
    lp.set_free(n);
    dc.constrain(&mut lp);
    let mut mass = vec![1.0; n];
    mass.push(0.0);
    lp.add_row(mass, Relation::Eq, 1.0);
    for i in 0..n {
        let mut row = vec![0.0; n + 1];
        row[i] = 1.0;
        row[n] = -1.0;
        lp.add_row(row, Relation::Ge, 0.0);
    }
    match lp.maximize() {
        LpOutcome::Optimal(s) if s.value > MSUP_THRESHOLD => {
            let weights = s.x[..n].iter().map(|w| w.max(0.0)).collect();
            MsupSearch::Found {
                measure: DualMeasure::new(tree, weights).expect("dimensions match"),
                min_weight: s.value,
            }
        }
        LpOutcome::Optimal(s) => MsupSearch::Infeasible {
            best_min_weight: Some(s.value),
        },
        _ => MsupSearch::Infeasible {
            best_min_weight: None,
        },
    }
}

/// `max_ν Σ ν(ω)R(ω)` over `ν ∈ M, ν(Ω) = 1`, with the maximizer.
pub(crate) fn max_normalized_pairing(
    dc: &PolyhedralCone,
    r: &[f64],
) -> Result<(f64, Vec<f64>), DualError> {
    let n = dc.leaves;
    if r.len() != n {
        return Err(DualError::DimensionMismatch {
            expected: n,
            got: r.len(),
        });
    }
    let mut lp = LinearProgram::new(n);
    lp.set_objective(r);
    dc.constrain(&mut lp);
    lp.add_row(vec![1.0; n], Relation::Eq, 1.0);
    match lp.maximize() {
        LpOutcome::Optimal(s) => Ok((s.value, s.x)),
        _ => Err(DualError::InfeasibleDualDomain),
    }
}

/// `sup_{ν ∈ M^sup} ψ_ν(B)`, computed over the closed normalized slice.
pub fn endowment_bound(
    dc: &PolyhedralCone,
    tree: &ScenarioTree,
    b: &ClaimVector,
) -> Result<f64, DualError> {
    if b.len() != tree.num_leaves() {
        return Err(DualError::DimensionMismatch {
            expected: tree.num_leaves(),
            got: b.len(),
        });
    }
    max_normalized_pairing(dc, b.values()).map(|(v, _)| v)
}

/// `ψ_ν(X) = Σ ν(ω)X(ω)`.
pub fn pairing(nu: &DualMeasure, x: &ClaimVector) -> Result<f64, DualError> {
    if nu.weights.len() != x.len() {
        return Err(DualError::DimensionMismatch {
            expected: nu.weights.len(),
            got: x.len(),
        });
    }
    Ok(nu.weights.iter().zip(x.values()).map(|(a, b)| a * b).sum())
}
