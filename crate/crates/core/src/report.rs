//! JSON layouts written by the command-line tool: solve reports (which embed
//! their inputs so they can be re-verified on their own), assumption
//! reports, prices and decompositions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dual_domain::{DualError, DualMeasure};
use crate::duality::{AssumptionReport, Backend, Residuals, SolveReport};
use crate::market::{ClaimVector, MarketError, Model, RawClaim, RawModel, Strategy};
use crate::superrep::{DecompositionNode, DecompositionResult};
use crate::utility::PiecewiseUtility;

/// Serde adapter for extended reals: finite values as numbers, the rest as
/// the strings `"inf"`, `"-inf"` and `"nan"`.
pub mod extended {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" | "+inf" | "infinity" => Ok(f64::INFINITY),
                "-inf" | "-infinity" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(de::Error::custom(format!("not an extended real: {other:?}"))),
            },
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReportError {
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error(transparent)]
    Dual(#[from] DualError),
    #[error("key {0:?} is not a node id")]
    BadKey(String),
}

fn keyed<T: Clone>(map: &BTreeMap<usize, T>) -> BTreeMap<String, T> {
    map.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

fn unkeyed<T: Clone>(map: &BTreeMap<String, T>) -> Result<BTreeMap<usize, T>, ReportError> {
    map.iter()
        .map(|(k, v)| {
            k.trim()
                .parse()
                .map(|id| (id, v.clone()))
                .map_err(|_| ReportError::BadKey(k.clone()))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualsFile {
    #[serde(with = "extended")]
    pub budget: f64,
    #[serde(with = "extended")]
    pub subdiff: f64,
    #[serde(with = "extended")]
    pub singular: f64,
}

/// A solve report on disk. `X_star` and `nu_star` (densities `dν*/dP`)
/// are keyed by leaf id, `H_star` by nonterminal node id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub x: f64,
    #[serde(with = "extended")]
    pub u: f64,
    #[serde(with = "extended")]
    pub w: f64,
    #[serde(with = "extended")]
    pub gap: f64,
    pub backend: Backend,
    pub iterations: usize,
    #[serde(rename = "X_star")]
    pub x_star: BTreeMap<String, f64>,
    #[serde(rename = "H_star")]
    pub h_star: BTreeMap<String, Vec<f64>>,
    pub nu_star: BTreeMap<String, f64>,
    pub y_star: f64,
    pub residuals: ResidualsFile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assumptions: Option<AssumptionReport>,
    pub model: RawModel,
    pub utility: PiecewiseUtility,
    pub endowment: RawClaim,
}

/// Inputs and solution read back from a [`ReportFile`].
#[derive(Debug, Clone, PartialEq)]
pub struct RestoredReport {
    pub model: Model,
    pub utility: PiecewiseUtility,
    pub endowment: ClaimVector,
    pub report: SolveReport,
}

impl ReportFile {
    pub fn new(model: &Model, u: &PiecewiseUtility, b: &ClaimVector, r: &SolveReport) -> Self {
        let tree = &model.tree;
        Self {
            x: r.x,
            u: r.u_value,
            w: r.w_value,
            gap: r.gap,
            backend: r.backend,
            iterations: r.iterations,
            x_star: keyed(&r.x_star.to_leaf_map(tree)),
            h_star: keyed(&r.h_star.to_map()),
            nu_star: keyed(&r.nu_star.density_map(tree)),
            y_star: r.y_star,
            residuals: ResidualsFile {
                budget: r.residuals.budget,
                subdiff: r.residuals.subdiff_violation,
                singular: r.residuals.singular_pairing,
            },
            assumptions: r.assumptions.clone(),
            model: model.to_raw(),
            utility: u.clone(),
            endowment: RawClaim::from_claim(tree, b),
        }
    }

    pub fn restore(&self) -> Result<RestoredReport, ReportError> {
        let model = Model::from_raw(&self.model)?;
        let tree = &model.tree;
        let endowment = self.endowment.to_claim(tree)?;
        let x_star = ClaimVector::from_leaf_map(tree, &unkeyed(&self.x_star)?)?;
        let h_star = Strategy::from_map(tree, &unkeyed(&self.h_star)?);
        let nu_star = DualMeasure::from_density_map(tree, &unkeyed(&self.nu_star)?)?;
        let report = SolveReport {
            x: self.x,
            u_value: self.u,
            w_value: self.w,
            gap: self.gap,
            x_star,
            h_star,
            nu_star,
            y_star: self.y_star,
            residuals: Residuals {
                budget: self.residuals.budget,
                subdiff_violation: self.residuals.subdiff,
                singular_pairing: self.residuals.singular,
            },
            backend: self.backend,
            iterations: self.iterations,
            assumptions: self.assumptions.clone(),
        };
        Ok(RestoredReport {
            utility: self.utility.clone(),
            endowment,
            report,
            model,
        })
    }
}

/// Output of the `check` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckFile {
    pub passes: bool,
    #[serde(flatten)]
    pub report: AssumptionReport,
}

impl From<AssumptionReport> for CheckFile {
    fn from(report: AssumptionReport) -> Self {
        Self {
            passes: report.passes(),
            report,
        }
    }
}

/// Output of the `price` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceFile {
    /// Supremum of `ψ_ν(R)` over normalized dual elements.
    pub price: f64,
    /// Cheapest initial capital of a cone-feasible hedge.
    pub hedge_cost: f64,
    pub hedge: BTreeMap<String, Vec<f64>>,
    /// `R − price` passes the primal and the polar test.
    pub replicable_at_price: bool,
    pub replicable_at_price_dual: bool,
}

impl PriceFile {
    pub fn new(price: f64, hedge_cost: f64, hedge: &Strategy, primal: bool, dual: bool) -> Self {
        Self {
            price,
            hedge_cost,
            hedge: keyed(&hedge.to_map()),
            replicable_at_price: primal,
            replicable_at_price_dual: dual,
        }
    }
}

/// Output of the `decompose` command: per-node `{V, H, C}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionFile {
    #[serde(rename = "V0")]
    pub v0: f64,
    pub identity_residual: f64,
    pub nodes: BTreeMap<String, DecompositionNode>,
}

impl DecompositionFile {
    pub fn new(d: &DecompositionResult, identity_residual: f64) -> Self {
        Self {
            v0: d.initial_value(),
            identity_residual,
            nodes: keyed(&d.to_node_map()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::duality::{solve, SolveOptions};
    use crate::fixtures::{bin3, log_utility};

    #[test]
    fn extended_reals_survive_json() {
        #[derive(Serialize, Deserialize, Debug, PartialEq)]
        struct W(#[serde(with = "extended")] f64);
        for v in [1.5, -0.0, f64::INFINITY, f64::NEG_INFINITY] {
            let s = serde_json::to_string(&W(v)).unwrap();
            assert_eq!(serde_json::from_str::<W>(&s).unwrap(), W(v));
        }
        assert_eq!(serde_json::to_string(&W(f64::INFINITY)).unwrap(), "\"inf\"");
        assert!(serde_json::from_str::<W>("\"big\"").is_err());
    }

    #[test]
    fn report_round_trip() {
        let (m, b) = bin3();
        let u = log_utility();
        let r = solve(&m, &u, &b, 1.0, &SolveOptions::default(), false).unwrap();
        let file = ReportFile::new(&m, &u, &b, &r);
        let text = serde_json::to_string_pretty(&file).unwrap();
        let back: ReportFile = serde_json::from_str(&text).unwrap();
        assert_eq!(back, file);
        let restored = back.restore().unwrap();
        assert_eq!(restored.model, m);
        assert_eq!(restored.endowment, b);
        assert_eq!(restored.report.x_star, r.x_star);
        assert_eq!(restored.report.h_star, r.h_star);
        for (a, e) in restored.report.nu_star.weights().iter().zip(r.nu_star.weights()) {
            assert!((a - e).abs() <= 1e-15);
        }
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        for key in ["x", "u", "w", "gap", "backend", "iterations", "X_star", "nu_star", "y_star", "residuals"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert!(v["assumptions"]["inada"]["sup_slope"] == "inf");
    }

    #[test]
    fn bad_keys_are_reported() {
        let map: BTreeMap<String, f64> = [("leaf".to_string(), 1.0)].into();
        assert_eq!(unkeyed(&map).unwrap_err(), ReportError::BadKey("leaf".into()));
    }
}
