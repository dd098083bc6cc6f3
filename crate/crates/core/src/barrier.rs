//! Log-barrier Newton method for separable concave maximization under
//! linear equalities and box bounds:
//!
//! ```text
//! maximize  Σᵢ cᵢzᵢ + Σᵢ wᵢ·fᵢ(zᵢ)   subject to  Az = b,  lᵢ < zᵢ < uᵢ
//! ```
//!
//! Each Newton system is reduced either to the Schur complement `A H⁻¹ Aᵀ`
//! over the rows, or, when every row owns variables that appear nowhere
//! else, to a system over the remaining shared variables. The second form
//! stays accurate when shared variables carry almost no curvature.

use nalgebra::{DMatrix, DVector};

use crate::utility::SegmentedConcave;

/// A separable concave term: `weight · increment(seg, z)` of `funcs[func]`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Term {
    pub func: usize,
    pub seg: usize,
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct Problem<'a> {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub linear: Vec<f64>,
    pub terms: Vec<Option<Term>>,
    /// Sparse equality rows `(var, coeff)`.
    pub rows: Vec<Vec<(usize, f64)>>,
    pub rhs: Vec<f64>,
    pub funcs: &'a [SegmentedConcave],
    pub elimination: Elimination,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Elimination {
    /// Schur complement over the equality rows.
    Rows,
    /// Eliminate row-local variables; requires one per row.
    Locals,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Settings {
    pub tau0: f64,
    pub tau_min: f64,
    pub shrink: f64,
    pub max_newton_per_stage: usize,
    pub max_iterations: usize,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            tau0: 1e-1,
            tau_min: 1e-13,
            shrink: 0.1,
            max_newton_per_stage: 80,
            max_iterations: 100_000,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Outcome {
    pub z: Vec<f64>,
    pub iterations: usize,
    /// `m·τ` plus the last Newton decrement: bounds the suboptimality of
    /// `z` for the unbarriered problem.
    pub gap_bound: f64,
    pub converged: bool,
}

struct Eval {
    value: f64,
    grad: Vec<f64>,
    hess: Vec<f64>,
}

impl Problem<'_> {
    fn n(&self) -> usize {
        self.lower.len()
    }

    fn barrier_terms(&self) -> usize {
        self.lower.iter().filter(|l| l.is_finite()).count()
            + self.upper.iter().filter(|u| u.is_finite()).count()
    }

    fn value(&self, z: &[f64], tau: f64) -> f64 {
        let mut v = 0.0;
        for i in 0..self.n() {
            let zi = z[i];
            if !(zi > self.lower[i] && zi < self.upper[i]) {
                return f64::NEG_INFINITY;
            }
            v += self.linear[i] * zi;
            if let Some(t) = self.terms[i] {
                let (f, _, _) = self.funcs[t.func].increment(t.seg, zi - self.lower[i]);
                v += t.weight * f;
            }
            if self.lower[i].is_finite() {
                v += tau * (zi - self.lower[i]).ln();
            }
            if self.upper[i].is_finite() {
                v += tau * (self.upper[i] - zi).ln();
            }
        }
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    }

    fn eval(&self, z: &[f64], tau: f64) -> Eval {
        let n = self.n();
        let mut grad = vec![0.0; n];
        let mut hess = vec![0.0; n];
        for i in 0..n {
            let zi = z[i];
            grad[i] = self.linear[i];
            if let Some(t) = self.terms[i] {
                let (_, d1, d2) = self.funcs[t.func].increment(t.seg, zi - self.lower[i]);
                grad[i] += t.weight * d1;
                hess[i] -= t.weight * d2;
            }
            if self.lower[i].is_finite() {
                let s = zi - self.lower[i];
                grad[i] += tau / s;
                hess[i] += tau / (s * s);
            }
            if self.upper[i].is_finite() {
                let s = self.upper[i] - zi;
                grad[i] -= tau / s;
                hess[i] += tau / (s * s);
            }
        }
        Eval {
            value: self.value(z, tau),
            grad,
            hess,
        }
    }

    fn columns(&self) -> Vec<Vec<(usize, f64)>> {
        let mut cols = vec![Vec::new(); self.n()];
        for (r, row) in self.rows.iter().enumerate() {
            for &(j, a) in row {
                cols[j].push((r, a));
            }
        }
        cols
    }

    /// Largest `|Az − b|`.
    #[cfg(test)]
    pub fn residual(&self, z: &[f64]) -> f64 {
        self.rows
            .iter()
            .zip(&self.rhs)
            .map(|(row, b)| (row.iter().map(|&(j, a)| a * z[j]).sum::<f64>() - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Cholesky factor of `s`, regularized if needed.
fn factor(s: DMatrix<f64>) -> Option<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let m = s.nrows();
    let trace = (0..m).map(|i| s[(i, i)]).sum::<f64>() / m.max(1) as f64;
    let mut reg = 0.0;
    loop {
        let mut sr = s.clone();
        for i in 0..m {
            sr[(i, i)] += reg;
        }
        if let Some(ch) = sr.cholesky() {
            return Some(ch);
        }
        reg = if reg == 0.0 { 1e-14 * trace.max(1e-300) } else { reg * 100.0 };
        if reg > 1e-2 * trace.max(1.0) {
            return None;
        }
    }
}

/// Newton direction for the barrier subproblem at `z`, with its squared
/// decrement. `None` when the reduced system cannot be factored.
fn newton_direction(
    p: &Problem,
    layout: &Layout,
    z: &[f64],
    e: &Eval,
) -> Option<(Vec<f64>, f64)> {
    match layout {
        Layout::Rows(cols) => newton_rows(p, cols, z, e),
        Layout::Locals { local_row, globals } => newton_locals(p, local_row, globals, z, e),
    }
}

enum Layout {
    Rows(Vec<Vec<(usize, f64)>>),
    /// Row owning each local variable, and the shared variables with
    /// their sparse columns.
    Locals {
        local_row: Vec<Option<usize>>,
        globals: Vec<(usize, Vec<(usize, f64)>)>,
    },
}

impl Layout {
    fn new(p: &Problem) -> Self {
        let cols = p.columns();
        if p.elimination == Elimination::Rows {
            return Layout::Rows(cols);
        }
        // a local needs curvature of its own, so it must be bounded
        let local_row: Vec<Option<usize>> = cols
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let bounded = p.lower[i].is_finite() || p.upper[i].is_finite();
                (c.len() == 1 && bounded).then(|| c[0].0)
            })
            .collect();
        let mut owned = vec![false; p.rows.len()];
        for r in local_row.iter().flatten() {
            owned[*r] = true;
        }
        assert!(owned.iter().all(|&o| o), "every row needs a local variable");
        let globals = cols
            .into_iter()
            .enumerate()
            .filter(|(i, _)| local_row[*i].is_none())
            .collect();
        Layout::Locals { local_row, globals }
    }
}

fn newton_locals(
    p: &Problem,
    local_row: &[Option<usize>],
    globals: &[(usize, Vec<(usize, f64)>)],
    z: &[f64],
    e: &Eval,
) -> Option<(Vec<f64>, f64)> {
    let n = p.n();
    let m = p.rows.len();
    let hinv: Vec<f64> = e.hess.iter().map(|h| 1.0 / h.max(1e-300)).collect();
    // per row: c = Σ a²/h over locals, q = Σ a·g/h, r = b − Az
    let mut c = vec![0.0; m];
    let mut q = vec![0.0; m];
    let mut coeff = vec![0.0; n];
    for (r, row) in p.rows.iter().enumerate() {
        for &(j, a) in row {
            if local_row[j] == Some(r) {
                coeff[j] = a;
                c[r] += a * a * hinv[j];
                q[r] += a * e.grad[j] * hinv[j];
            }
        }
    }
    let res: Vec<f64> = p
        .rows
        .iter()
        .zip(&p.rhs)
        .map(|(row, b)| b - row.iter().map(|&(j, a)| a * z[j]).sum::<f64>())
        .collect();
    let k = globals.len();
    let mut dg = DVector::<f64>::zeros(k);
    if k > 0 {
        let mut s = DMatrix::<f64>::zeros(k, k);
        let mut rhs = DVector::<f64>::zeros(k);
        for (a, (ja, col_a)) in globals.iter().enumerate() {
            s[(a, a)] += e.hess[*ja];
            rhs[a] = e.grad[*ja];
            for &(r, v) in col_a {
                rhs[a] -= v * (q[r] - res[r]) / c[r];
            }
        }
        // Aᵀ C⁻¹ A over shared rows
        let mut by_row: Vec<Vec<(usize, f64)>> = vec![Vec::new(); m];
        for (a, (_, col)) in globals.iter().enumerate() {
            for &(r, v) in col {
                by_row[r].push((a, v));
            }
        }
        for (r, entries) in by_row.iter().enumerate() {
            for &(a1, v1) in entries {
                for &(a2, v2) in entries {
                    s[(a1, a2)] += v1 * v2 / c[r];
                }
            }
        }
        dg = factor(s)?.solve(&rhs);
    }
    let mut agd = vec![0.0; m];
    let mut d = vec![0.0; n];
    for (a, (j, col)) in globals.iter().enumerate() {
        d[*j] = dg[a];
        for &(r, v) in col {
            agd[r] += v * dg[a];
        }
    }
    let lambda: Vec<f64> = (0..m).map(|r| (q[r] + agd[r] - res[r]) / c[r]).collect();
    for j in 0..n {
        if let Some(r) = local_row[j] {
            d[j] = (e.grad[j] - coeff[j] * lambda[r]) * hinv[j];
        }
    }
    // restore each row exactly through its locals
    for _ in 0..2 {
        for (r, row) in p.rows.iter().enumerate() {
            let rho = p.rhs[r] - row.iter().map(|&(j, a)| a * (z[j] + d[j])).sum::<f64>();
            if rho != 0.0 {
                for &(j, a) in row {
                    if local_row[j] == Some(r) {
                        d[j] += rho * a * hinv[j] / c[r];
                    }
                }
            }
        }
    }
    let dec = (0..n).map(|i| d[i] * d[i] * e.hess[i]).sum();
    Some((d, dec))
}

fn newton_rows(
    p: &Problem,
    cols: &[Vec<(usize, f64)>],
    z: &[f64],
    e: &Eval,
) -> Option<(Vec<f64>, f64)> {
    let n = p.n();
    let m = p.rows.len();
    let hinv: Vec<f64> = e.hess.iter().map(|h| 1.0 / h.max(1e-300)).collect();
    if m == 0 {
        let d: Vec<f64> = (0..n).map(|i| e.grad[i] * hinv[i]).collect();
        let dec = (0..n).map(|i| e.grad[i] * d[i]).sum();
        return Some((d, dec));
    }
    let mut s = DMatrix::<f64>::zeros(m, m);
    for (k, col) in cols.iter().enumerate() {
        for &(r1, a1) in col {
            for &(r2, a2) in col {
                s[(r1, r2)] += a1 * a2 * hinv[k];
            }
        }
    }
    let mut rhs = DVector::<f64>::zeros(m);
    for (r, row) in p.rows.iter().enumerate() {
        let az: f64 = row.iter().map(|&(j, a)| a * z[j]).sum();
        let ahg: f64 = row.iter().map(|&(j, a)| a * e.grad[j] * hinv[j]).sum();
        rhs[r] = ahg + (az - p.rhs[r]);
    }
    let chol = factor(s)?;
    let lambda = chol.solve(&rhs);
    let mut atl = vec![0.0; n];
    for (r, row) in p.rows.iter().enumerate() {
        for &(j, a) in row {
            atl[j] += a * lambda[r];
        }
    }
    let mut d: Vec<f64> = (0..n).map(|i| (e.grad[i] - atl[i]) * hinv[i]).collect();
    // iterative refinement of A·d = b − A·z, which loses digits when the
    // diagonal spans many orders of magnitude
    for _ in 0..3 {
        let mut rho = DVector::<f64>::zeros(m);
        for (r, row) in p.rows.iter().enumerate() {
            let ad: f64 = row.iter().map(|&(j, a)| a * (z[j] + d[j])).sum();
            rho[r] = p.rhs[r] - ad;
        }
        if rho.amax() == 0.0 {
            break;
        }
        let dl = chol.solve(&rho);
        for (r, row) in p.rows.iter().enumerate() {
            for &(j, a) in row {
                d[j] += a * dl[r] * hinv[j];
            }
        }
    }
    let dec = (0..n).map(|i| d[i] * d[i] * e.hess[i]).sum();
    Some((d, dec))
}

/// Follows the central path from a strictly interior, feasible `z0`.
pub(crate) fn solve(p: &Problem, z0: Vec<f64>, settings: Settings) -> Outcome {
    let n = p.n();
    let layout = Layout::new(p);
    let m_bar = p.barrier_terms().max(1) as f64;
    let mut z = z0;
    let mut tau = settings.tau0;
    let mut iterations = 0;
    let mut last_dec: f64 = f64::INFINITY;
    let mut converged = false;
    loop {
        let mut centered = false;
        for _ in 0..settings.max_newton_per_stage {
            if iterations >= settings.max_iterations {
                break;
            }
            iterations += 1;
            let e = p.eval(&z, tau);
            let Some((d, dec)) = newton_direction(p, &layout, &z, &e) else {
                break;
            };
            last_dec = dec.max(0.0);
            if last_dec <= 1e-9 * tau || last_dec <= 1e-20 * (1.0 + e.value.abs()) {
                centered = true;
                break;
            }
            // fraction to the boundary
            let mut alpha: f64 = 1.0;
            for i in 0..n {
                if d[i] < 0.0 && p.lower[i].is_finite() {
                    alpha = alpha.min(0.99 * (z[i] - p.lower[i]) / -d[i]);
                }
                if d[i] > 0.0 && p.upper[i].is_finite() {
                    alpha = alpha.min(0.99 * (p.upper[i] - z[i]) / d[i]);
                }
            }
            let slope: f64 = (0..n).map(|i| e.grad[i] * d[i]).sum();
            let mut accepted = false;
            for _ in 0..60 {
                let trial: Vec<f64> = (0..n).map(|i| z[i] + alpha * d[i]).collect();
                let v = p.value(&trial, tau);
                let noise = 1e-15 * (1.0 + e.value.abs());
                if v.is_finite() && v >= e.value + 1e-4 * alpha * slope.max(0.0) - noise {
                    let moved = trial.iter().zip(&z).any(|(a, b)| a != b);
                    z = trial;
                    accepted = moved;
                    break;
                }
                alpha *= 0.5;
            }
            if !accepted {
                // no representable improvement left at this τ
                centered = true;
                break;
            }
        }
        if !centered && iterations >= settings.max_iterations {
            break;
        }
        if tau <= settings.tau_min {
            converged = centered;
            break;
        }
        tau = (tau * settings.shrink).max(settings.tau_min);
    }
    Outcome {
        z,
        iterations,
        gap_bound: m_bar * tau + 0.5 * last_dec,
        converged,
    }
}
