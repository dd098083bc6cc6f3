//! The small linear programs that appear throughout the crate (cone
//! membership, polar-cone queries, pricing, node-wise decomposition,
//! piecewise-linear utility problems), solved by `microlp`.
//!
//! Problems are stated as `maximize c·x` over rows `a·x {<=, >=, =} b`,
//! with each variable either nonnegative or free.

use std::fmt;

use microlp::{ComparisonOp, OptimizationDirection, Problem};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone)]
struct Row {
    coeffs: Vec<f64>,
    relation: Relation,
    rhs: f64,
}

#[derive(Debug, Clone)]
pub struct LinearProgram {
    objective: Vec<f64>,
    free: Vec<bool>,
    rows: Vec<Row>,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub enum LpOutcome {
    Optimal(LpSolution),
    Infeasible,
    Unbounded,
    /// The solver gave up for numerical reasons.
    Failed(String),
}

impl LpOutcome {
    pub fn optimal(self) -> Option<LpSolution> {
        match self {
            LpOutcome::Optimal(s) => Some(s),
            _ => None,
        }
    }
}

impl fmt::Display for LpOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LpOutcome::Optimal(s) => write!(f, "optimal ({})", s.value),
            LpOutcome::Infeasible => write!(f, "infeasible"),
            LpOutcome::Unbounded => write!(f, "unbounded"),
            LpOutcome::Failed(m) => write!(f, "failed: {m}"),
        }
    }
}

impl LinearProgram {
    /// A maximization problem over `num_vars` nonnegative variables with a
    /// zero objective.
    pub fn new(num_vars: usize) -> Self {
        Self {
            objective: vec![0.0; num_vars],
            free: vec![false; num_vars],
            rows: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn set_objective(&mut self, c: &[f64]) -> &mut Self {
        assert_eq!(c.len(), self.num_vars());
        self.objective.copy_from_slice(c);
        self
    }

    pub fn set_objective_coeff(&mut self, var: usize, c: f64) -> &mut Self {
        self.objective[var] = c;
        self
    }

    pub fn set_free(&mut self, var: usize) -> &mut Self {
        self.free[var] = true;
        self
    }

    pub fn add_row(&mut self, coeffs: Vec<f64>, relation: Relation, rhs: f64) -> &mut Self {
        assert_eq!(coeffs.len(), self.num_vars());
        self.rows.push(Row {
            coeffs,
            relation,
            rhs,
        });
        self
    }

    /// Adds a row given as sparse `(var, coeff)` pairs.
    pub fn add_sparse_row(
        &mut self,
        entries: &[(usize, f64)],
        relation: Relation,
        rhs: f64,
    ) -> &mut Self {
        let mut coeffs = vec![0.0; self.num_vars()];
        for &(j, a) in entries {
            coeffs[j] += a;
        }
        self.add_row(coeffs, relation, rhs)
    }

    pub fn maximize(&self) -> LpOutcome {
        let mut p = Problem::new(OptimizationDirection::Maximize);
        let vars: Vec<_> = self
            .objective
            .iter()
            .zip(&self.free)
            .map(|(&c, &free)| {
                let lo = if free { f64::NEG_INFINITY } else { 0.0 };
                p.add_var(c, (lo, f64::INFINITY))
            })
            .collect();
        for r in &self.rows {
            let op = match r.relation {
                Relation::Le => ComparisonOp::Le,
                Relation::Ge => ComparisonOp::Ge,
                Relation::Eq => ComparisonOp::Eq,
            };
            let terms: Vec<_> = r
                .coeffs
                .iter()
                .enumerate()
                .filter(|(_, a)| **a != 0.0)
                .map(|(j, &a)| (vars[j], a))
                .collect();
            p.add_constraint(terms, op, r.rhs);
        }
        let solution = match p.solve() {
            Ok(outcome) => match outcome.into_solution() {
                Ok(s) => s,
                Err(_) => return LpOutcome::Failed("interrupted".into()),
            },
            Err(microlp::Error::Infeasible) => return LpOutcome::Infeasible,
            Err(microlp::Error::Unbounded) => return LpOutcome::Unbounded,
            Err(e) => return LpOutcome::Failed(e.to_string()),
        };
        let x: Vec<f64> = vars
            .iter()
            .zip(&self.free)
            .map(|(&v, &free)| {
                let x = solution.var_value(v);
                if free { x } else { x.max(0.0) }
            })
            .collect();
        let value = self.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
        LpOutcome::Optimal(LpSolution { x, value })
    }

    /// Minimizes the stored objective; the reported value is the minimum.
    pub fn minimize(&self) -> LpOutcome {
        let mut neg = self.clone();
        for c in neg.objective.iter_mut() {
            *c = -*c;
        }
        match neg.maximize() {
            LpOutcome::Optimal(mut s) => {
                s.value = -s.value;
                LpOutcome::Optimal(s)
            }
            other => other,
        }
    }
}
