//! Brute-force reference computations on tiny instances: grid searches for
//! the primal and dual values, the super-replication price and the
//! conjugate.
//!
//! Nothing here calls the solvers. The primal search only uses strategy
//! gains and cone membership from the market model, the dual search only
//! uses rows of the polar cone (its extreme rays are enumerated from them
//! directly), and the conjugate search only evaluates
//! `U`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dual_domain::{DualError, DualMeasure, PolyhedralCone};
use crate::market::{cone_contains, terminal_gains, ClaimVector, MarketError, ScenarioTree, Strategy, TradingCone};
use crate::utility::PiecewiseUtility;

/// Largest number of grid dimensions accepted.
pub const MAX_DIM: usize = 4;
/// Values within this of the best count as a plateau.
pub const PLATEAU_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("{dim} grid dimensions exceed the limit of {max}")]
    DimensionTooLarge { dim: usize, max: usize },
    #[error("no grid point is feasible")]
    EmptyFeasibleGrid,
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error(transparent)]
    Dual(#[from] DualError),
}

/// Box grid: per-dimension bounds and point counts. A single entry is
/// broadcast to every dimension. Each refinement pass re-grids the box
/// `incumbent ± refinement·spacing`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub bounds: Vec<(f64, f64)>,
    pub counts: Vec<usize>,
    pub refinement: f64,
    pub passes: usize,
}

impl GridSpec {
    pub fn uniform(lo: f64, hi: f64, count: usize) -> Self {
        Self {
            bounds: vec![(lo, hi)],
            counts: vec![count],
            refinement: 2.0,
            passes: 2,
        }
    }

    pub fn validate(&self) -> Result<(), OracleError> {
        if self.bounds.is_empty() || self.bounds.len() != self.counts.len() {
            return Err(OracleError::InvalidGrid(
                "bounds and counts must be nonempty and of equal length".into(),
            ));
        }
        for (&(lo, hi), &n) in self.bounds.iter().zip(&self.counts) {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(OracleError::InvalidGrid(format!("bad bounds [{lo}, {hi}]")));
            }
            if n < 3 {
                return Err(OracleError::InvalidGrid(format!("count {n} is below 3")));
            }
        }
        if !(self.refinement > 0.0 && self.refinement.is_finite()) {
            return Err(OracleError::InvalidGrid("refinement must be positive".into()));
        }
        Ok(())
    }

    fn expand(&self, dim: usize) -> Result<(Vec<(f64, f64)>, Vec<usize>), OracleError> {
        self.validate()?;
        match self.bounds.len() {
            1 => Ok((vec![self.bounds[0]; dim], vec![self.counts[0]; dim])),
            n if n == dim => Ok((self.bounds.clone(), self.counts.clone())),
            n => Err(OracleError::InvalidGrid(format!(
                "grid has {n} dimensions, problem has {dim}"
            ))),
        }
    }
}

/// Grid estimate of an optimal value with its maximizer or minimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleEstimate {
    pub value: f64,
    /// Largest objective change between the incumbent and an adjacent
    /// feasible grid point on the finest pass.
    pub error_bound: f64,
    pub point: Vec<f64>,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrimalEstimate {
    pub estimate: OracleEstimate,
    pub strategy: Strategy,
    pub terminal_wealth: ClaimVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualEstimate {
    pub estimate: OracleEstimate,
    pub measure: DualMeasure,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConjugateEstimate {
    pub value: f64,
    pub argmax_lo: f64,
    pub argmax_hi: f64,
}

fn axis(lo: f64, hi: f64, n: usize, i: usize) -> f64 {
    lo + (hi - lo) * i as f64 / (n - 1) as f64
}

fn decode(mut idx: usize, counts: &[usize], out: &mut [usize]) {
    for (c, &n) in out.iter_mut().zip(counts) {
        *c = idx % n;
        idx /= n;
    }
}

/// Exhaustive search maximizing `sign · f` over a box grid with
/// refinement. `f` gets the point and the largest spacing of the current
/// pass, and returns `None` for rejected points.
///
/// The variation of a pass is the largest change from the incumbent to any
/// feasible grid point in its surrounding `3^dim − 1` cells, or infinity
/// when none of them is feasible. The next pass covers every point whose
/// value is within that variation of the incumbent, padded by
/// `refinement` cells per side and clipped to the initial box, which lets
/// the search follow an optimum along a slanted face of the feasible set.
fn grid_search(
    bounds: &[(f64, f64)],
    counts: &[usize],
    refinement: f64,
    passes: usize,
    sign: f64,
    mut f: impl FnMut(&[f64], f64) -> Option<f64>,
) -> Result<OracleEstimate, OracleError> {
    let dim = bounds.len();
    let total: usize = counts.iter().product();
    let initial = bounds;
    let mut bounds = bounds.to_vec();
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut evaluations = 0;
    let mut error_bound = f64::INFINITY;
    let mut coords = vec![0usize; dim];
    let mut point = vec![0.0; dim];
    for pass in 0..=passes {
        let steps: Vec<f64> = (0..dim)
            .map(|k| (bounds[k].1 - bounds[k].0) / (counts[k] - 1) as f64)
            .collect();
        let spacing = steps.iter().copied().fold(0.0, f64::max);
        let mut values = vec![f64::NAN; total];
        let mut pass_best: Option<(usize, f64)> = None;
        for (idx, slot) in values.iter_mut().enumerate() {
            decode(idx, counts, &mut coords);
            for k in 0..dim {
                point[k] = axis(bounds[k].0, bounds[k].1, counts[k], coords[k]);
            }
            evaluations += 1;
            if let Some(v) = f(&point, spacing) {
                let s = sign * v;
                *slot = s;
                if !s.is_nan() && pass_best.is_none_or(|(_, b)| s > b) {
                    pass_best = Some((idx, s));
                }
            }
        }
        let Some((bi, bv)) = pass_best else {
            if pass == 0 {
                return Err(OracleError::EmptyFeasibleGrid);
            }
            break;
        };
        decode(bi, counts, &mut coords);
        let centre = coords.clone();
        let incumbent: Vec<f64> = (0..dim)
            .map(|k| axis(bounds[k].0, bounds[k].1, counts[k], centre[k]))
            .collect();
        let mut variation: Option<f64> = None;
        let mut offset = vec![0usize; dim];
        'cells: for cell in 0..3usize.pow(dim as u32) {
            decode(cell, &vec![3; dim], &mut offset);
            if offset.iter().all(|&o| o == 1) {
                continue;
            }
            let mut j = 0;
            let mut stride = 1;
            for k in 0..dim {
                let c = centre[k] as i64 + offset[k] as i64 - 1;
                if c < 0 || c as usize >= counts[k] {
                    continue 'cells;
                }
                j += c as usize * stride;
                stride *= counts[k];
            }
            if values[j].is_finite() {
                let d = (bv - values[j]).abs();
                variation = Some(variation.map_or(d, |m| m.max(d)));
            }
        }
        if bv.is_finite() {
            error_bound = variation.unwrap_or(f64::INFINITY);
        }
        if best.as_ref().is_none_or(|(_, b)| bv > *b) {
            best = Some((incumbent.clone(), bv));
        }
        let threshold = match variation {
            Some(v) if bv.is_finite() => bv - v,
            _ => bv,
        };
        let mut lo_idx = centre.clone();
        let mut hi_idx = centre.clone();
        for (idx, &v) in values.iter().enumerate() {
            if v >= threshold {
                decode(idx, counts, &mut coords);
                for k in 0..dim {
                    lo_idx[k] = lo_idx[k].min(coords[k]);
                    hi_idx[k] = hi_idx[k].max(coords[k]);
                }
            }
        }
        bounds = (0..dim)
            .map(|k| {
                let lo = axis(bounds[k].0, bounds[k].1, counts[k], lo_idx[k]);
                let hi = axis(bounds[k].0, bounds[k].1, counts[k], hi_idx[k]);
                (
                    (lo - refinement * steps[k]).max(initial[k].0),
                    (hi + refinement * steps[k]).min(initial[k].1),
                )
            })
            .collect();
    }
    let (point, v) = best.expect("first pass found a point");
    Ok(OracleEstimate {
        value: sign * v,
        error_bound,
        point,
        evaluations,
    })
}

/// Holdings per nonterminal node and asset (node-major), with the terminal
/// gains of one unit of each coordinate.
struct StrategyGrid {
    nodes: Vec<usize>,
    d: usize,
    unit: Vec<Vec<f64>>,
}

impl StrategyGrid {
    fn new(tree: &ScenarioTree) -> Result<Self, OracleError> {
        let nodes = tree.nonterminal();
        let d = tree.num_assets();
        let dim = nodes.len() * d;
        if dim > MAX_DIM {
            return Err(OracleError::DimensionTooLarge { dim, max: MAX_DIM });
        }
        let mut unit = Vec::with_capacity(dim);
        for &v in &nodes {
            for a in 0..d {
                let mut h = Strategy::zero(tree);
                let mut e = vec![0.0; d];
                e[a] = 1.0;
                h.set(v, e);
                unit.push(terminal_gains(tree, &h)?.0);
            }
        }
        Ok(Self { nodes, d, unit })
    }

    fn dim(&self) -> usize {
        self.unit.len()
    }

    fn gain(&self, point: &[f64], leaf: usize) -> f64 {
        point.iter().zip(&self.unit).map(|(h, col)| h * col[leaf]).sum()
    }

    fn in_cone(&self, cone: &TradingCone, point: &[f64]) -> Result<bool, MarketError> {
        for k in 0..self.nodes.len() {
            if !cone_contains(cone, &point[k * self.d..(k + 1) * self.d])? {
                return Ok(false);
            }
        }
        Ok(true)
    }

    fn build(&self, tree: &ScenarioTree, point: &[f64]) -> Strategy {
        let mut h = Strategy::zero(tree);
        for (k, &v) in self.nodes.iter().enumerate() {
            h.set(v, point[k * self.d..(k + 1) * self.d].to_vec());
        }
        h
    }

    /// Grid search over cone-feasible holdings.
    fn search(
        &self,
        cone: &TradingCone,
        grid: &GridSpec,
        sign: f64,
        mut f: impl FnMut(&[f64]) -> f64,
    ) -> Result<OracleEstimate, OracleError> {
        let (bounds, counts) = grid.expand(self.dim())?;
        let mut membership_error = None;
        let estimate = grid_search(&bounds, &counts, grid.refinement, grid.passes, sign, |point, _| {
            match self.in_cone(cone, point) {
                Ok(true) => Some(f(point)),
                Ok(false) => None,
                Err(e) => {
                    membership_error = Some(e);
                    None
                }
            }
        });
        match membership_error {
            Some(e) => Err(e.into()),
            None => estimate,
        }
    }
}

/// Grid search for `sup E[U(x + (H·S)_T − B)]` over holdings per
/// nonterminal node and asset (node-major), rejecting holdings outside the
/// cone.
pub fn brute_primal(
    tree: &ScenarioTree,
    cone: &TradingCone,
    u: &PiecewiseUtility,
    b: &ClaimVector,
    x: f64,
    grid: &GridSpec,
) -> Result<PrimalEstimate, OracleError> {
    b.check_len(tree)?;
    let sg = StrategyGrid::new(tree)?;
    let probs = tree.leaf_probabilities();
    let estimate = sg.search(cone, grid, 1.0, |point| {
        let mut s = 0.0;
        for w in 0..probs.len() {
            let v = u.value(x + sg.gain(point, w) - b.values()[w]);
            if v == f64::NEG_INFINITY {
                return f64::NEG_INFINITY;
            }
            s += probs[w] * v;
        }
        s
    })?;
    let strategy = sg.build(tree, &estimate.point);
    let gains = terminal_gains(tree, &strategy)?;
    let terminal_wealth = ClaimVector(gains.0.iter().map(|g| x + g).collect());
    Ok(PrimalEstimate {
        estimate,
        strategy,
        terminal_wealth,
    })
}

/// Grid search for the super-replication price
/// `min_H max_ω (R(ω) − (H·S)_T(ω))` over cone-feasible holdings.
pub fn brute_superrep_price(
    tree: &ScenarioTree,
    cone: &TradingCone,
    r: &ClaimVector,
    grid: &GridSpec,
) -> Result<(OracleEstimate, Strategy), OracleError> {
    r.check_len(tree)?;
    let sg = StrategyGrid::new(tree)?;
    let estimate = sg.search(cone, grid, -1.0, |point| {
        (0..r.len())
            .map(|w| r.values()[w] - sg.gain(point, w))
            .fold(f64::NEG_INFINITY, f64::max)
    })?;
    let hedge = sg.build(tree, &estimate.point);
    Ok((estimate, hedge))
}

fn rank(vectors: &[Vec<f64>]) -> usize {
    if vectors.is_empty() {
        return 0;
    }
    let n = vectors[0].len();
    let m = DMatrix::from_fn(vectors.len(), n, |i, j| vectors[i][j]);
    let sv = m.singular_values();
    let top = sv.iter().copied().fold(0.0, f64::max);
    sv.iter().filter(|&&s| s > 1e-10 * top.max(1e-300)).count()
}

/// Unit vector spanning the null space of `rows`, if it is one-dimensional.
fn null_direction(rows: &[&Vec<f64>], n: usize) -> Option<Vec<f64>> {
    let m = DMatrix::from_fn(n, n, |i, j| if i < rows.len() { rows[i][j] } else { 0.0 });
    let svd = m.svd(false, true);
    let v_t = svd.v_t?;
    let sv = &svd.singular_values;
    let top = sv.iter().copied().fold(0.0, f64::max);
    let small: Vec<usize> = (0..n).filter(|&i| sv[i] <= 1e-10 * top.max(1.0)).collect();
    if small.len() != 1 {
        return None;
    }
    Some(v_t.row(small[0]).iter().copied().collect())
}

fn combinations(n: usize, k: usize, mut visit: impl FnMut(&[usize])) {
    let mut idx: Vec<usize> = (0..k).collect();
    if k > n {
        return;
    }
    loop {
        visit(&idx);
        let Some(i) = (0..k).rev().find(|&i| idx[i] < n - k + i) else {
            return;
        };
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Constraints `a·ν ≤ 0` describing `M`: the nonzero polar rows and `−ν ≤ 0`.
fn dual_constraints(dc: &PolyhedralCone) -> Vec<Vec<f64>> {
    let n = dc.num_leaves();
    let mut cons: Vec<Vec<f64>> = dc
        .rows()
        .iter()
        .map(|r| r.coeffs.clone())
        .filter(|c| c.iter().any(|v| *v != 0.0))
        .collect();
    for i in 0..n {
        let mut e = vec![0.0; n];
        e[i] = -1.0;
        cons.push(e);
    }
    cons
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(a, b)| a * b).sum()
}

/// Extreme rays of `M`, each scaled to unit mass, found by trying every
/// set of `n − 1` constraints as the active set.
pub fn dual_rays(dc: &PolyhedralCone) -> Vec<Vec<f64>> {
    let n = dc.num_leaves();
    let cons = dual_constraints(dc);
    let feasible = |d: &[f64]| {
        let size = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        cons.iter().all(|a| {
            let norm: f64 = a.iter().map(|c| c.abs()).sum();
            dot(a, d) <= 1e-10 * norm * size
        })
    };
    let mut rays: Vec<Vec<f64>> = Vec::new();
    combinations(cons.len(), n - 1, |subset| {
        let rows: Vec<&Vec<f64>> = subset.iter().map(|&i| &cons[i]).collect();
        let Some(d) = null_direction(&rows, n) else {
            return;
        };
        for s in [1.0, -1.0] {
            let d: Vec<f64> = d.iter().map(|v| s * v).collect();
            let mass: f64 = d.iter().sum();
            if mass <= 1e-12 || !feasible(&d) {
                continue;
            }
            let d: Vec<f64> = d
                .iter()
                .map(|v| v / mass)
                .map(|v| if v < 1e-12 { 0.0 } else { v })
                .collect();
            if !rays.iter().any(|r| r.iter().zip(&d).all(|(a, b)| (a - b).abs() <= 1e-9)) {
                rays.push(d);
            }
        }
    });
    rays
}

/// Pulling triangulation of the face spanned by `members`: the cones from
/// its first ray over the triangulated facets that miss that ray.
fn triangulate(rays: &[Vec<f64>], cons: &[Vec<f64>], members: &[usize]) -> Vec<Vec<usize>> {
    let span: Vec<Vec<f64>> = members.iter().map(|&i| rays[i].clone()).collect();
    let d = rank(&span);
    if members.len() == d {
        return vec![members.to_vec()];
    }
    let apex = members[0];
    let mut facets: Vec<Vec<usize>> = Vec::new();
    for a in cons {
        let norm: f64 = a.iter().map(|c| c.abs()).sum();
        let tight: Vec<usize> = members
            .iter()
            .copied()
            .filter(|&i| dot(a, &rays[i]).abs() <= 1e-9 * norm)
            .collect();
        if tight.len() == members.len() || tight.contains(&apex) || facets.contains(&tight) {
            continue;
        }
        let fspan: Vec<Vec<f64>> = tight.iter().map(|&i| rays[i].clone()).collect();
        if rank(&fspan) == d - 1 {
            facets.push(tight);
        }
    }
    let mut out = Vec::new();
    for f in &facets {
        for mut simplex in triangulate(rays, cons, f) {
            simplex.insert(0, apex);
            out.push(simplex);
        }
    }
    out
}

/// Groups of rays searched together: all of them when they fit the grid,
/// otherwise the simplicial cones of a triangulation of `M`.
fn ray_groups(dc: &PolyhedralCone, rays: &[Vec<f64>]) -> Vec<Vec<usize>> {
    if rays.len() <= MAX_DIM {
        return vec![(0..rays.len()).collect()];
    }
    let all: Vec<usize> = (0..rays.len()).collect();
    triangulate(rays, &dual_constraints(dc), &all)
}

/// Number of ray weights in the largest group [`brute_dual`] searches.
pub fn dual_grid_dim(dc: &PolyhedralCone) -> usize {
    ray_groups(dc, &dual_rays(dc)).iter().map(Vec::len).max().unwrap_or(0)
}

/// Grid search for `inf E[Ũ(ν/P)] − ψ_ν(B) + x·ν(Ω)` over `M`. The grid
/// runs over nonnegative weights on the extreme rays of `M` (unit mass
/// each), so faces of `M` are grid faces. With more than [`MAX_DIM`] rays
/// each cone of a triangulation of `M` is searched and the smallest
/// value kept.
pub fn brute_dual(
    tree: &ScenarioTree,
    dc: &PolyhedralCone,
    u: &PiecewiseUtility,
    b: &ClaimVector,
    x: f64,
    grid: &GridSpec,
) -> Result<DualEstimate, OracleError> {
    b.check_len(tree)?;
    let leaves = tree.num_leaves();
    if leaves > MAX_DIM {
        return Err(OracleError::DimensionTooLarge { dim: leaves, max: MAX_DIM });
    }
    grid.validate()?;
    let rays = dual_rays(dc);
    let probs = tree.leaf_probabilities();
    let mut evaluations = 0;
    let mut search_group = |group: &[usize], passes: usize| -> Result<Option<(OracleEstimate, Vec<f64>)>, OracleError> {
        let (bounds, counts) = grid.expand(group.len())?;
        let lift = |lambda: &[f64]| {
            let mut nu = vec![0.0; leaves];
            for (l, &g) in lambda.iter().zip(group) {
                for (w, r) in nu.iter_mut().zip(&rays[g]) {
                    *w += l * r;
                }
            }
            nu
        };
        let search = grid_search(&bounds, &counts, grid.refinement, passes, -1.0, |lambda, _| {
            let nu = lift(lambda);
            let size = nu.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if nu.iter().any(|&w| w < -1e-9 * size) {
                return None;
            }
            let nu: Vec<f64> = nu.into_iter().map(|w| w.max(0.0)).collect();
            for r in dc.rows() {
                let norm: f64 = r.coeffs.iter().map(|c| c.abs()).sum();
                if r.apply(&nu) > 1e-9 * norm * size {
                    return None;
                }
            }
            let mut s = 0.0;
            for w in 0..leaves {
                let c = u.conjugate(nu[w] / probs[w]).unwrap_or(f64::INFINITY);
                if c == f64::INFINITY {
                    return Some(f64::INFINITY);
                }
                s += probs[w] * c - nu[w] * b.values()[w] + x * nu[w];
            }
            Some(s)
        });
        match search {
            Ok(e) => {
                evaluations += e.evaluations;
                let nu = lift(&e.point).into_iter().map(|w| w.max(0.0)).collect();
                Ok(Some((e, nu)))
            }
            Err(OracleError::EmptyFeasibleGrid) => Ok(None),
            Err(e) => Err(e),
        }
    };
    let mut groups = ray_groups(dc, &rays);
    if groups.len() > 1 {
        // one coarse pass per subcone, then refine the ones that may hold the optimum
        let mut coarse = Vec::new();
        for g in &groups {
            coarse.push(search_group(g, 0)?.map(|(e, _)| (e.value, e.error_bound)));
        }
        let top = coarse.iter().flatten().map(|c| c.0).fold(f64::INFINITY, f64::min);
        groups = groups
            .into_iter()
            .zip(coarse)
            .filter_map(|(g, c)| c.filter(|(v, e)| v - e <= top).map(|_| g))
            .collect();
    }
    let mut found = Vec::new();
    for g in &groups {
        found.extend(search_group(g, grid.passes)?);
    }
    let best = found
        .iter()
        .map(|(e, _)| e.value)
        .fold(f64::INFINITY, f64::min);
    if best == f64::INFINITY {
        return Err(OracleError::EmptyFeasibleGrid);
    }
    // a group whose value minus its bound undercuts the winner may hold the optimum
    let error_bound = found
        .iter()
        .filter(|(e, _)| e.value - e.error_bound <= best)
        .map(|(e, _)| e.error_bound)
        .fold(0.0, f64::max);
    let (_, nu) = found
        .into_iter()
        .find(|(e, _)| e.value == best)
        .expect("best comes from a group");
    let measure = DualMeasure::new(tree, nu.clone())?;
    Ok(DualEstimate {
        estimate: OracleEstimate {
            value: best,
            error_bound,
            point: nu,
            evaluations,
        },
        measure,
    })
}

/// Grid maximization of `U(x) − x·y` over `x = 0` and log-spaced
/// `x ∈ [lo, hi]` (default `[1e−9, 1e9]`), then refinement of the value and
/// of both ends of the plateau within [`PLATEAU_TOL`] of the best value.
pub fn brute_conjugate(u: &PiecewiseUtility, y: f64, grid: &GridSpec) -> Result<ConjugateEstimate, OracleError> {
    grid.validate()?;
    if !(y > 0.0) {
        return Err(OracleError::InvalidGrid(format!("y = {y} must be positive")));
    }
    let (lo, hi) = grid.bounds[0];
    if !(lo > 0.0) {
        return Err(OracleError::InvalidGrid("log-spaced bounds must be positive".into()));
    }
    let n = grid.counts[0];
    let f = |x: f64| u.value(x) - x * y;
    let (llo, lhi) = (lo.ln(), hi.ln());
    let mut xs: Vec<f64> = vec![0.0];
    xs.extend((0..n).map(|i| (llo + (lhi - llo) * i as f64 / (n - 1) as f64).exp()));
    let vals: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
    let mut bi = 0;
    for (i, v) in vals.iter().enumerate() {
        if *v > vals[bi] || vals[bi].is_nan() {
            bi = i;
        }
    }
    let mut best = vals[bi];
    let mut best_x = xs[bi];
    // refine the value around the incumbent
    let (mut a, mut c) = (xs[bi.saturating_sub(1)], xs[(bi + 1).min(xs.len() - 1)]);
    for _ in 0..grid.passes.max(1) {
        let m = 2001;
        let mut ib = 0;
        let mut local = f64::NEG_INFINITY;
        for i in 0..m {
            let x = a + (c - a) * i as f64 / (m - 1) as f64;
            let v = f(x);
            if v > local {
                local = v;
                ib = i;
            }
            if v > best {
                best = v;
                best_x = x;
            }
        }
        let h = (c - a) / (m - 1) as f64;
        let centre = a + h * ib as f64;
        a = (centre - h).max(0.0);
        c = centre + h;
    }
    let plateau = |v: f64| v >= best - PLATEAU_TOL;
    // walk outwards from the refined maximizer over grid points on the plateau
    let pos = xs.partition_point(|&x| x <= best_x);
    let mut il = pos;
    while il > 0 && plateau(vals[il - 1]) {
        il -= 1;
    }
    let mut ih = pos;
    while ih < xs.len() && plateau(vals[ih]) {
        ih += 1;
    }
    // locate each plateau end inside its bracketing grid cell
    let refine_end = |mut inside: f64, mut outside: f64| -> f64 {
        for _ in 0..grid.passes.max(1) + 1 {
            let m = 1001;
            let mut last_in = inside;
            for i in 0..m {
                let x = inside + (outside - inside) * i as f64 / (m - 1) as f64;
                if plateau(f(x)) {
                    last_in = x;
                } else {
                    outside = x;
                    break;
                }
            }
            inside = last_in;
        }
        inside
    };
    let mut lo_x = if il < pos { xs[il] } else { best_x };
    if il > 0 {
        lo_x = refine_end(lo_x, xs[il - 1]);
    }
    let mut hi_x = if ih > pos { xs[ih - 1].max(best_x) } else { best_x };
    if ih < xs.len() {
        hi_x = refine_end(hi_x, xs[ih]);
    }
    Ok(ConjugateEstimate {
        value: best,
        argmax_lo: lo_x,
        argmax_hi: hi_x,
    })
}

/// Default conjugate grid: `x ∈ [1e−9, 1e9]`, `10⁵` log-spaced points.
pub fn conjugate_grid() -> GridSpec {
    GridSpec::uniform(1e-9, 1e9, 100_000)
}
