//! Nonsmooth concave utilities on the positive half-line.
//!
//! A utility is a finite concatenation of power, log and linear pieces over
//! contiguous intervals `[x₀ = 0, x₁), [x₁, x₂), …, [x_{k−1}, ∞)`. Each piece
//! contributes its base formula plus an additive offset chosen so that the
//! concatenation is continuous. One-sided slopes are available in closed
//! form, which makes subdifferentials, the conjugate
//! `Ũ(y) = sup_x {U(x) − xy}` and its argmax exact.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance for the concavity check at knots and for continuity of
/// explicitly given intercepts.
const KNOT_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum UtilityError {
    #[error("a utility needs at least one piece")]
    Empty,
    #[error("the first knot must be 0, found {0}")]
    FirstKnotNotZero(f64),
    #[error("knots must be strictly increasing (piece {index})")]
    KnotsNotIncreasing { index: usize },
    #[error("piece {index}: {reason}")]
    InvalidParameter { index: usize, reason: String },
    #[error("not concave at knot {knot}: left slope {left} < right slope {right}")]
    NotConcave { knot: f64, left: f64, right: f64 },
    #[error("piece {index}: intercept {given} breaks continuity (expected {expected})")]
    Discontinuous { index: usize, given: f64, expected: f64 },
    #[error("subdifferential requested at non-positive point {0}")]
    NonPositivePoint(f64),
    #[error("conjugate requested at negative argument {0}")]
    NegativeArgument(f64),
    #[error("{0} is outside the domain of the conjugate")]
    OutsideDomain(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PieceKind {
    /// `coefficient · x^exponent`, exponent in (0, 1).
    Power { coefficient: f64, exponent: f64 },
    /// `coefficient · ln x`.
    Log { coefficient: f64 },
    /// `slope · x + intercept`. The intercept only matters on the first
    /// piece; later pieces get their offset from continuity, and an explicit
    /// intercept there must agree with it.
    Linear {
        slope: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        intercept: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    pub knot: f64,
    #[serde(flatten)]
    pub kind: PieceKind,
}

impl Piece {
    pub fn new(knot: f64, kind: PieceKind) -> Self {
        Self { knot, kind }
    }

    fn base(&self, x: f64) -> f64 {
        match self.kind {
            PieceKind::Power {
                coefficient,
                exponent,
            } => coefficient * x.powf(exponent),
            PieceKind::Log { coefficient } => {
                if x > 0.0 {
                    coefficient * x.ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            PieceKind::Linear { slope, intercept } => slope * x + intercept.unwrap_or(0.0),
        }
    }

    fn d1(&self, x: f64) -> f64 {
        match self.kind {
            PieceKind::Power {
                coefficient,
                exponent,
            } => {
                if x > 0.0 {
                    coefficient * exponent * x.powf(exponent - 1.0)
                } else {
                    f64::INFINITY
                }
            }
            PieceKind::Log { coefficient } => {
                if x > 0.0 {
                    coefficient / x
                } else {
                    f64::INFINITY
                }
            }
            PieceKind::Linear { slope, .. } => slope,
        }
    }

    fn d2(&self, x: f64) -> f64 {
        match self.kind {
            PieceKind::Power {
                coefficient,
                exponent,
            } => coefficient * exponent * (exponent - 1.0) * x.powf(exponent - 2.0),
            PieceKind::Log { coefficient } => -coefficient / (x * x),
            PieceKind::Linear { .. } => 0.0,
        }
    }

    /// Slope limit as `x → ∞`.
    fn limit_slope(&self) -> f64 {
        match self.kind {
            PieceKind::Linear { slope, .. } => slope,
            _ => 0.0,
        }
    }

    fn is_linear(&self) -> bool {
        matches!(self.kind, PieceKind::Linear { .. })
    }

    /// Solves `d1(x) = y` for strictly concave pieces.
    fn inverse_slope(&self, y: f64) -> f64 {
        match self.kind {
            PieceKind::Power {
                coefficient,
                exponent,
            } => (y / (coefficient * exponent)).powf(1.0 / (exponent - 1.0)),
            PieceKind::Log { coefficient } => coefficient / y,
            PieceKind::Linear { .. } => unreachable!("linear pieces have constant slope"),
        }
    }
}

/// Closed interval `[lo, hi]`; `hi` may be `+∞`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubdiffInterval {
    pub lo: f64,
    pub hi: f64,
}

impl SubdiffInterval {
    pub fn point(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    pub fn contains(&self, v: f64, tol: f64) -> bool {
        v >= self.lo - tol && v <= self.hi + tol
    }

    /// Distance from `v` to the interval (0 inside).
    pub fn distance(&self, v: f64) -> f64 {
        if v < self.lo {
            self.lo - v
        } else if v > self.hi {
            v - self.hi
        } else {
            0.0
        }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawUtility", into = "RawUtility")]
pub struct PiecewiseUtility {
    pieces: Vec<Piece>,
    offsets: Vec<f64>,
}

/// Utility file layout: `{"pieces": [{"kind": ..., "knot": ..., ...}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawUtility {
    pub pieces: Vec<Piece>,
}

impl TryFrom<RawUtility> for PiecewiseUtility {
    type Error = UtilityError;

    fn try_from(raw: RawUtility) -> Result<Self, Self::Error> {
        Self::new(raw.pieces)
    }
}

impl From<PiecewiseUtility> for RawUtility {
    fn from(u: PiecewiseUtility) -> Self {
        RawUtility { pieces: u.pieces }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InadaReport {
    #[serde(with = "crate::report::extended")]
    pub inf_slope: f64,
    #[serde(with = "crate::report::extended")]
    pub sup_slope: f64,
    pub passes: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AeFlag {
    ConjugateNotPositiveNearZero,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AeEstimate {
    /// Reported value: the closed form when the tail is recognized,
    /// otherwise the numeric estimate; 0 when flagged.
    #[serde(with = "crate::report::extended")]
    pub value: f64,
    #[serde(with = "crate::report::extended")]
    pub numeric: f64,
    pub closed_form: Option<f64>,
    pub flag: Option<AeFlag>,
}

impl PiecewiseUtility {
    pub fn new(pieces: Vec<Piece>) -> Result<Self, UtilityError> {
        let Some(first) = pieces.first() else {
            return Err(UtilityError::Empty);
        };
        if first.knot != 0.0 {
            return Err(UtilityError::FirstKnotNotZero(first.knot));
        }
        for (index, p) in pieces.iter().enumerate() {
            if index > 0 && !(p.knot > pieces[index - 1].knot) {
                return Err(UtilityError::KnotsNotIncreasing { index });
            }
            if !p.knot.is_finite() {
                return Err(UtilityError::KnotsNotIncreasing { index });
            }
            let bad = |reason: &str| {
                Err(UtilityError::InvalidParameter {
                    index,
                    reason: reason.to_string(),
                })
            };
            match p.kind {
                PieceKind::Power {
                    coefficient,
                    exponent,
                } => {
                    if !(coefficient > 0.0 && coefficient.is_finite()) {
                        return bad("power coefficient must be positive");
                    }
                    if !(exponent > 0.0 && exponent < 1.0) {
                        return bad("power exponent must lie in (0, 1)");
                    }
                }
                PieceKind::Log { coefficient } => {
                    if !(coefficient > 0.0 && coefficient.is_finite()) {
                        return bad("log coefficient must be positive");
                    }
                }
                PieceKind::Linear { slope, intercept } => {
                    if !(slope >= 0.0 && slope.is_finite()) {
                        return bad("linear slope must be nonnegative");
                    }
                    if intercept.is_some_and(|c| !c.is_finite()) {
                        return bad("intercept must be finite");
                    }
                }
            }
        }
        let mut offsets = vec![0.0; pieces.len()];
        for j in 1..pieces.len() {
            let k = pieces[j].knot;
            let left = pieces[j - 1].d1(k);
            let right = pieces[j].d1(k);
            if right > left + KNOT_TOL * left.abs().max(1.0) {
                return Err(UtilityError::NotConcave { knot: k, left, right });
            }
            let value_left = pieces[j - 1].base(k) + offsets[j - 1];
            if let PieceKind::Linear {
                slope,
                intercept: Some(c),
            } = pieces[j].kind
            {
                let expected = value_left - slope * k;
                if (c - expected).abs() > 1e-9 * expected.abs().max(1.0) {
                    return Err(UtilityError::Discontinuous {
                        index: j,
                        given: c,
                        expected,
                    });
                }
                offsets[j] = expected - c;
            } else {
                offsets[j] = value_left - pieces[j].base(k);
            }
        }
        Ok(Self { pieces, offsets })
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    pub fn knots(&self) -> Vec<f64> {
        self.pieces.iter().map(|p| p.knot).collect()
    }

    fn piece_end(&self, j: usize) -> f64 {
        self.pieces.get(j + 1).map_or(f64::INFINITY, |p| p.knot)
    }

    /// Index of the piece whose interval `[x_j, x_{j+1})` contains `x ≥ 0`.
    fn piece_at(&self, x: f64) -> usize {
        self.pieces.iter().rposition(|p| p.knot <= x).unwrap_or(0)
    }

    fn piece_value(&self, j: usize, x: f64) -> f64 {
        self.pieces[j].base(x) + self.offsets[j]
    }

    /// Slope at the left end of piece `j` (right-derivative at its knot).
    fn top_slope(&self, j: usize) -> f64 {
        self.pieces[j].d1(self.pieces[j].knot)
    }

    /// Slope at the right end of piece `j` (limit at ∞ for the last piece).
    fn bottom_slope(&self, j: usize) -> f64 {
        let end = self.piece_end(j);
        if end.is_finite() {
            self.pieces[j].d1(end)
        } else {
            self.pieces[j].limit_slope()
        }
    }

    /// `U(x)`: `−∞` for `x < 0`, right-limit value at 0.
    pub fn value(&self, x: f64) -> f64 {
        if x < 0.0 || x.is_nan() {
            return f64::NEG_INFINITY;
        }
        if x == f64::INFINITY {
            return self.sup_value();
        }
        let j = self.piece_at(x);
        self.piece_value(j, x)
    }

    /// `lim_{x→∞} U(x)`.
    pub fn sup_value(&self) -> f64 {
        let j = self.pieces.len() - 1;
        match self.pieces[j].kind {
            PieceKind::Linear { slope, .. } if slope == 0.0 => self.piece_value(j, self.pieces[j].knot),
            _ => f64::INFINITY,
        }
    }

    pub fn right_derivative(&self, x: f64) -> f64 {
        let j = self.piece_at(x);
        self.pieces[j].d1(x)
    }

    pub fn left_derivative(&self, x: f64) -> f64 {
        let j = self.piece_at(x);
        if j > 0 && x == self.pieces[j].knot {
            self.pieces[j - 1].d1(x)
        } else {
            self.pieces[j].d1(x)
        }
    }

    /// `∂U(x) = [U'₊(x), U'₋(x)]` for `x > 0`.
    pub fn subdiff(&self, x: f64) -> Result<SubdiffInterval, UtilityError> {
        if !(x > 0.0) {
            return Err(UtilityError::NonPositivePoint(x));
        }
        Ok(SubdiffInterval {
            lo: self.right_derivative(x),
            hi: self.left_derivative(x),
        })
    }

    /// True when every knot joins pieces with matching slopes.
    pub fn is_smooth(&self) -> bool {
        (1..self.pieces.len()).all(|j| {
            let k = self.pieces[j].knot;
            let l = self.pieces[j - 1].d1(k);
            let r = self.pieces[j].d1(k);
            (l - r).abs() <= KNOT_TOL * l.abs().max(1.0)
        })
    }

    /// True when every piece is linear.
    pub fn is_piecewise_linear(&self) -> bool {
        self.pieces.iter().all(Piece::is_linear)
    }

    /// `inf ∪∂U` and `sup ∪∂U`.
    pub fn slope_range(&self) -> (f64, f64) {
        (self.bottom_slope(self.pieces.len() - 1), self.top_slope(0))
    }

    /// `argmax_x {U(x) − xy}` as `[lo, hi]`; `None` when the supremum is
    /// `+∞`. Uses monotone inversion of the slope map.
    fn argmax(&self, y: f64) -> Option<(f64, f64)> {
        // lo: first point whose right-derivative is <= y
        let mut lo = None;
        for (j, p) in self.pieces.iter().enumerate() {
            if self.top_slope(j) <= y {
                lo = Some(p.knot);
                break;
            }
            if self.bottom_slope(j) < y {
                lo = Some(p.inverse_slope(y).clamp(p.knot, self.piece_end(j)));
                break;
            }
        }
        let lo = lo?;
        // hi: last point whose left-derivative is >= y
        let mut hi = 0.0;
        for (j, p) in self.pieces.iter().enumerate() {
            if self.top_slope(j) < y {
                hi = p.knot;
                break;
            }
            if self.bottom_slope(j) >= y {
                hi = self.piece_end(j);
                continue;
            }
            hi = p.inverse_slope(y).clamp(p.knot, self.piece_end(j));
            break;
        }
        Some((lo, hi.max(lo)))
    }

    /// `Ũ(y) = sup_{x ≥ 0} {U(x) − xy}` for `y ≥ 0`, possibly `+∞`.
    pub fn conjugate(&self, y: f64) -> Result<f64, UtilityError> {
        if !(y >= 0.0) {
            return Err(UtilityError::NegativeArgument(y));
        }
        Ok(match self.argmax(y) {
            None => f64::INFINITY,
            Some((lo, _)) => {
                if y == 0.0 {
                    self.value(lo)
                } else {
                    self.value(lo) - lo * y
                }
            }
        })
    }

    /// `−∂Ũ(y) = argmax_x {U(x) − xy}`.
    pub fn conjugate_argmax(&self, y: f64) -> Result<SubdiffInterval, UtilityError> {
        if !(y > 0.0) {
            return Err(UtilityError::OutsideDomain(y));
        }
        match self.argmax(y) {
            Some((lo, hi)) => Ok(SubdiffInterval { lo, hi }),
            None => Err(UtilityError::OutsideDomain(y)),
        }
    }

    /// `inf(−∂Ũ(0⁺))`: the smallest wealth at which `U` stops increasing
    /// (`+∞` when it never does).
    pub fn satiation_point(&self) -> f64 {
        let j = self.pieces.len() - 1;
        match self.pieces[j].kind {
            PieceKind::Linear { slope, .. } if slope == 0.0 => {
                // walk back over earlier flat pieces
                let mut k = j;
                while k > 0
                    && matches!(self.pieces[k - 1].kind, PieceKind::Linear { slope, .. } if slope == 0.0)
                {
                    k -= 1;
                }
                self.pieces[k].knot
            }
            _ => f64::INFINITY,
        }
    }

    /// Nonsmooth Inada conditions: `inf ∪∂U = 0` and `sup ∪∂U = ∞`.
    pub fn check_inada(&self) -> InadaReport {
        let (inf_slope, sup_slope) = self.slope_range();
        InadaReport {
            inf_slope,
            sup_slope,
            passes: inf_slope == 0.0 && sup_slope == f64::INFINITY,
        }
    }

    /// Asymptotic elasticity of the conjugate as `y → 0`.
    ///
    /// The ratio `sup_{q∈∂Ũ(y)} |q|y / Ũ(y)` is sampled at `y_k = 2^{−k}`,
    /// `k ≤ 60`, `y_k ≥ y_floor`; the limit is estimated by quadratic
    /// extrapolation in `1/ln(1/y)` through three samples spread over the
    /// available range, which absorbs the logarithmic approach of log-type
    /// tails. Power and log tails also carry their closed forms.
    pub fn asymptotic_elasticity(&self, y_floor: f64) -> AeEstimate {
        let tail = self.pieces[self.pieces.len() - 1];
        let closed_form = match tail.kind {
            PieceKind::Power { exponent, .. } => Some(exponent / (1.0 - exponent)),
            PieceKind::Log { .. } => Some(0.0),
            PieceKind::Linear { .. } => None,
        };
        let k_max = (1..=60)
            .take_while(|&k| 2f64.powi(-k) >= y_floor)
            .last()
            .unwrap_or(1);
        let ratio = |k: i32| -> Option<f64> {
            let y = 2f64.powi(-k);
            let u = self.conjugate(y).ok()?;
            if u == f64::INFINITY {
                return Some(0.0);
            }
            let q = self.conjugate_argmax(y).ok()?.hi;
            let r = q * y / u;
            r.is_finite().then_some(r)
        };
        let smallest = self.conjugate(2f64.powi(-k_max)).unwrap_or(f64::NAN);
        if !(smallest > 0.0) {
            return AeEstimate {
                value: 0.0,
                numeric: 0.0,
                closed_form,
                flag: Some(AeFlag::ConjugateNotPositiveNearZero),
            };
        }
        let numeric = if k_max >= 3 {
            let ks = [k_max / 3, (2 * k_max) / 3, k_max];
            let rs: Vec<Option<f64>> = ks.iter().map(|&k| ratio(k)).collect();
            match (rs[0], rs[1], rs[2]) {
                (Some(r0), Some(r1), Some(r2)) => {
                    let h: Vec<f64> = ks.iter().map(|&k| 1.0 / k as f64).collect();
                    let rs = [r0, r1, r2];
                    let mut est = 0.0;
                    for i in 0..3 {
                        let mut w = 1.0;
                        for j in 0..3 {
                            if j != i {
                                w *= h[j] / (h[j] - h[i]);
                            }
                        }
                        est += w * rs[i];
                    }
                    est.max(0.0)
                }
                _ => ratio(k_max).unwrap_or(f64::INFINITY),
            }
        } else {
            ratio(k_max).unwrap_or(f64::INFINITY)
        };
        AeEstimate {
            value: closed_form.unwrap_or(numeric),
            numeric,
            closed_form,
            flag: None,
        }
    }

    /// `U` split into concave segments in `x` for the increment
    /// formulation used by the barrier solver.
    pub(crate) fn primal_segments(&self) -> SegmentedConcave {
        let segments = (0..self.pieces.len())
            .map(|j| Segment {
                start: self.pieces[j].knot,
                end: self.piece_end(j),
                func: SegFn::UtilityPiece(j),
            })
            .collect();
        SegmentedConcave::new(self.clone(), 0.0, segments)
    }

    /// `−Ũ` split into concave segments in `y`, starting at `inf ∪∂U`.
    pub(crate) fn dual_segments(&self) -> SegmentedConcave {
        let n = self.pieces.len();
        let mut segments = Vec::new();
        let mut y = self.bottom_slope(n - 1);
        let lo = y;
        for j in (0..n).rev() {
            let top = self.top_slope(j);
            if !self.pieces[j].is_linear() && top > y {
                segments.push(Segment {
                    start: y,
                    end: top,
                    func: SegFn::ConjugatePiece(j),
                });
                y = top;
            }
            // knot at the left end of piece j (x = 0 for the head)
            let x = self.pieces[j].knot;
            let upper = if j > 0 {
                self.pieces[j - 1].d1(x)
            } else {
                f64::INFINITY
            };
            if upper > y {
                segments.push(Segment {
                    start: y,
                    end: upper,
                    func: SegFn::Line {
                        intercept: -self.value(x),
                        slope: x,
                    },
                });
                y = upper;
            }
        }
        SegmentedConcave::new(self.clone(), lo, segments)
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum SegFn {
    /// `U` on piece j, argument `x`.
    UtilityPiece(usize),
    /// `−Ũ` where the argmax lies inside piece j, argument `y`.
    ConjugatePiece(usize),
    /// `intercept + slope · z`.
    Line { intercept: f64, slope: f64 },
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Segment {
    pub start: f64,
    pub end: f64,
    pub func: SegFn,
}

/// A concave nondecreasing function `φ` on `[lo, ∞)` written as
/// `φ(lo + Σ tⱼ) = φ₀ + Σ incⱼ(tⱼ)` with `0 ≤ tⱼ ≤ endⱼ − startⱼ`, exact at
/// the greedy fill because segment slopes are nonincreasing.
#[derive(Debug, Clone)]
pub(crate) struct SegmentedConcave {
    utility: PiecewiseUtility,
    pub lo: f64,
    pub segments: Vec<Segment>,
    /// `φ(startⱼ)` when finite, else `None` (increment is the absolute value).
    bases: Vec<Option<f64>>,
}

impl SegmentedConcave {
    fn new(utility: PiecewiseUtility, lo: f64, segments: Vec<Segment>) -> Self {
        let mut s = Self {
            utility,
            lo,
            segments,
            bases: Vec::new(),
        };
        s.bases = (0..s.segments.len())
            .map(|j| {
                let v = s.absolute(j, s.segments[j].start).0;
                v.is_finite().then_some(v)
            })
            .collect();
        s
    }

    /// `(φ, φ', φ'')` at absolute argument `z` using segment `j`'s formula.
    pub fn absolute(&self, j: usize, z: f64) -> (f64, f64, f64) {
        let u = &self.utility;
        match self.segments[j].func {
            SegFn::UtilityPiece(k) => {
                let p = &u.pieces[k];
                (u.piece_value(k, z), p.d1(z), p.d2(z))
            }
            SegFn::ConjugatePiece(k) => {
                let p = &u.pieces[k];
                if z <= 0.0 {
                    return (f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
                }
                let x = p.inverse_slope(z);
                let value = -(u.piece_value(k, x) - x * z);
                (value, x, 1.0 / p.d2(x))
            }
            SegFn::Line { intercept, slope } => (intercept + slope * z, slope, 0.0),
        }
    }

    /// Increment of segment `j` at offset `t` with first and second
    /// derivatives.
    pub fn increment(&self, j: usize, t: f64) -> (f64, f64, f64) {
        let (v, d1, d2) = self.absolute(j, self.segments[j].start + t);
        match self.bases[j] {
            Some(b) => (v - b, d1, d2),
            None => (v, d1, d2),
        }
    }

    pub fn length(&self, j: usize) -> f64 {
        self.segments[j].end - self.segments[j].start
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{capped_linear, crra, kink, linear_middle, log_utility, power_utility};
    use proptest::prelude::*;

    /// Grid maximization of `U(x) − xy` on a fine log-spaced grid; test-local
    /// oracle, independent of the inversion code.
    fn grid_conjugate(u: &PiecewiseUtility, y: f64) -> (f64, f64) {
        let n = 400_000;
        let (a, b) = (1e-9_f64.ln(), 1e3_f64.ln());
        let mut best = (f64::NEG_INFINITY, 0.0);
        for i in 0..=n {
            let x = (a + (b - a) * i as f64 / n as f64).exp();
            let v = u.value(x) - x * y;
            if v > best.0 {
                best = (v, x);
            }
        }
        best
    }

    fn fd_slopes(u: &PiecewiseUtility, x: f64) -> (f64, f64) {
        let h = 1e-8;
        ((u.value(x + h) - u.value(x)) / h, (u.value(x) - u.value(x - h)) / h)
    }

    #[test]
    fn evaluation() {
        assert_eq!(log_utility().value(1.0), 0.0);
        // oracle: min of the two branch formulas
        let k = kink();
        for &x in &[0.25f64, 1.0, 4.0, 9.0] {
            let direct = (2.0 * x.sqrt()).min(1.0 + x.sqrt());
            assert!((k.value(x) - direct).abs() < 1e-14, "x = {x}");
        }
        assert_eq!(k.value(4.0), 3.0);
        assert_eq!(k.value(-1.0), f64::NEG_INFINITY);
        assert_eq!(log_utility().value(0.0), f64::NEG_INFINITY);
        assert_eq!(power_utility(2.0, 0.5).value(0.0), 0.0);
    }

    #[test]
    fn subdifferentials() {
        assert_eq!(log_utility().subdiff(2.0).unwrap(), SubdiffInterval::point(0.5));
        let s = kink().subdiff(1.0).unwrap();
        assert_eq!((s.lo, s.hi), (0.5, 1.0));
        let (r, l) = fd_slopes(&kink(), 1.0);
        assert!((r - 0.5).abs() < 1e-6 && (l - 1.0).abs() < 1e-6);
        let p = power_utility(2.0, 0.5).subdiff(4.0).unwrap();
        assert!((p.lo - 0.5).abs() < 1e-15 && (p.hi - 0.5).abs() < 1e-15);
        let (r, l) = fd_slopes(&power_utility(2.0, 0.5), 4.0);
        assert!((r - 0.5).abs() < 1e-6 && (l - 0.5).abs() < 1e-6);
        assert_eq!(kink().subdiff(0.0), Err(UtilityError::NonPositivePoint(0.0)));
    }

    #[test]
    fn conjugate_values_against_grid() {
        let cases: Vec<(PiecewiseUtility, f64, f64)> = vec![
            (log_utility(), 1.0, -1.0),
            (power_utility(2.0, 0.5), 0.5, 2.0),
            (kink(), 0.75, 1.25),
        ];
        for (u, y, expected) in cases {
            let (grid, _) = grid_conjugate(&u, y);
            assert!((grid - expected).abs() < 1e-6, "grid {grid} vs {expected}");
            assert!((u.conjugate(y).unwrap() - expected).abs() < 1e-12);
        }
        assert_eq!(log_utility().conjugate(0.0).unwrap(), f64::INFINITY);
        assert_eq!(capped_linear().conjugate(0.0).unwrap(), 1.0);
        assert_eq!(log_utility().conjugate(-1.0), Err(UtilityError::NegativeArgument(-1.0)));
    }

    #[test]
    fn conjugate_argmax_cases() {
        let a = log_utility().conjugate_argmax(0.5).unwrap();
        assert!((a.lo - 2.0).abs() < 1e-15 && (a.hi - 2.0).abs() < 1e-15);
        assert_eq!(kink().conjugate_argmax(0.75).unwrap(), SubdiffInterval::point(1.0));
        let flat = linear_middle().conjugate_argmax(1.0).unwrap();
        assert_eq!((flat.lo, flat.hi), (1.0, 2.0));
        // grid oracle with plateau detection at 1e-9
        let u = linear_middle();
        let (best, _) = grid_conjugate(&u, 1.0);
        let xs: Vec<f64> = (0..=200_000)
            .map(|i| 0.5 + 2.0 * i as f64 / 200_000.0)
            .filter(|&x| u.value(x) - x >= best - 1e-9)
            .collect();
        assert!((xs[0] - 1.0).abs() < 1e-4 && (xs[xs.len() - 1] - 2.0).abs() < 1e-4);
        assert!(matches!(
            crate::fixtures::piecewise_linear().conjugate_argmax(-1.0),
            Err(UtilityError::OutsideDomain(_))
        ));
    }

    #[test]
    fn inada() {
        assert!(log_utility().check_inada().passes);
        assert!(kink().check_inada().passes);
        // sampled slope range over [1e-12, 1e12]
        let k = kink();
        let lo = k.right_derivative(1e12);
        let hi = k.left_derivative(1e-12);
        assert!(lo < 1e-5 && hi > 1e5);
        let capped = capped_linear().check_inada();
        assert!(!capped.passes);
        assert_eq!(capped.sup_slope, 1.0);
    }

    #[test]
    fn asymptotic_elasticity_closed_forms() {
        let ae = crra(0.5).asymptotic_elasticity(2f64.powi(-60));
        assert_eq!(ae.closed_form, Some(1.0));
        assert!((ae.numeric - 1.0).abs() < 1e-3);
        let ae = crra(0.9).asymptotic_elasticity(2f64.powi(-60));
        assert!((ae.value - 9.0).abs() < 1e-12);
        assert!((ae.numeric - 9.0).abs() < 1e-3);
        let ae = log_utility().asymptotic_elasticity(2f64.powi(-60));
        assert_eq!(ae.value, 0.0);
        assert!(ae.numeric.abs() < 1e-3, "{}", ae.numeric);
        let ae = kink().asymptotic_elasticity(2f64.powi(-60));
        assert!((ae.numeric - 1.0).abs() < 1e-3);
    }

    #[test]
    fn ae_flags_nonpositive_conjugate() {
        // U = min(x, 1) - 2 keeps Ũ negative near zero
        let u = PiecewiseUtility::new(vec![
            Piece::new(0.0, PieceKind::Linear { slope: 1.0, intercept: Some(-2.0) }),
            Piece::new(1.0, PieceKind::Linear { slope: 0.0, intercept: None }),
        ])
        .unwrap();
        let ae = u.asymptotic_elasticity(1e-12);
        assert_eq!(ae.flag, Some(AeFlag::ConjugateNotPositiveNearZero));
        assert_eq!(ae.value, 0.0);
    }

    #[test]
    fn validation_errors() {
        assert_eq!(PiecewiseUtility::new(vec![]), Err(UtilityError::Empty));
        let convex_knot = PiecewiseUtility::new(vec![
            Piece::new(0.0, PieceKind::Linear { slope: 1.0, intercept: None }),
            Piece::new(1.0, PieceKind::Linear { slope: 2.0, intercept: None }),
        ]);
        assert!(matches!(convex_knot, Err(UtilityError::NotConcave { .. })));
        let jump = PiecewiseUtility::new(vec![
            Piece::new(0.0, PieceKind::Linear { slope: 1.0, intercept: None }),
            Piece::new(1.0, PieceKind::Linear { slope: 0.5, intercept: Some(3.0) }),
        ]);
        assert!(matches!(jump, Err(UtilityError::Discontinuous { index: 1, .. })));
        let bad_exp = PiecewiseUtility::new(vec![Piece::new(
            0.0,
            PieceKind::Power { coefficient: 1.0, exponent: 1.5 },
        )]);
        assert!(matches!(bad_exp, Err(UtilityError::InvalidParameter { index: 0, .. })));
    }

    #[test]
    fn json_format() {
        let text = r#"{"pieces": [{"kind": "power", "knot": 0, "coefficient": 2, "exponent": 0.5},
                                  {"kind": "power", "knot": 1, "coefficient": 1, "exponent": 0.5}]}"#;
        let u: PiecewiseUtility = serde_json::from_str(text).unwrap();
        assert_eq!(u, kink());
        let back: PiecewiseUtility = serde_json::from_str(&serde_json::to_string(&u).unwrap()).unwrap();
        assert_eq!(back, u);
        let bad = r#"{"pieces": [{"kind": "log", "knot": 1, "coefficient": 1}]}"#;
        assert!(serde_json::from_str::<PiecewiseUtility>(bad).is_err());
    }

    #[test]
    fn dual_segments_reproduce_conjugate() {
        for u in [log_utility(), kink(), linear_middle(), crra(0.3), capped_linear()] {
            let seg = u.dual_segments();
            for &y in &[0.05, 0.3, 0.5, 0.75, 1.0, 1.7, 4.0] {
                if u.conjugate(y).unwrap().is_infinite() {
                    continue;
                }
                let j = seg
                    .segments
                    .iter()
                    .position(|s| s.start <= y && y <= s.end)
                    .unwrap();
                let (v, d1, _) = seg.absolute(j, y);
                assert!((v + u.conjugate(y).unwrap()).abs() < 1e-12, "{u:?} y={y}");
                let arg = u.conjugate_argmax(y).unwrap();
                assert!(arg.contains(d1, 1e-12));
            }
        }
    }

    fn arb_utility() -> impl Strategy<Value = PiecewiseUtility> {
        prop_oneof![
            Just(log_utility()),
            Just(kink()),
            Just(linear_middle()),
            (0.1f64..0.9).prop_map(crra),
        ]
    }

    proptest! {
        #[test]
        fn fenchel_young(u in arb_utility(), lx in -6.0f64..6.0, ly in -6.0f64..6.0) {
            let (x, y) = (lx.exp(), ly.exp());
            let uy = u.conjugate(y).unwrap();
            let lhs = u.value(x);
            prop_assert!(lhs <= uy + x * y + 1e-10 * (1.0 + lhs.abs()));
            let arg = u.conjugate_argmax(y).unwrap();
            let xm = arg.lo;
            prop_assert!((u.value(xm) - uy - xm * y).abs() <= 1e-8 * (1.0 + uy.abs()));
        }

        #[test]
        fn monotone_subdifferential(u in arb_utility(), a in 0.01f64..50.0, b in 0.01f64..50.0) {
            prop_assume!(a != b);
            let (x1, x2) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(u.subdiff(x1).unwrap().lo >= u.subdiff(x2).unwrap().hi);
        }

        #[test]
        fn conjugate_is_convex_and_nonincreasing(u in arb_utility(), a in 0.01f64..5.0, b in 0.01f64..5.0) {
            let (y1, y2) = if a < b { (a, b) } else { (b, a) };
            let f1 = u.conjugate(y1).unwrap();
            let f2 = u.conjugate(y2).unwrap();
            let fm = u.conjugate(0.5 * (y1 + y2)).unwrap();
            prop_assert!(f2 <= f1 + 1e-12 * f1.abs().max(1.0));
            prop_assert!(fm <= 0.5 * (f1 + f2) + 1e-10 * (f1.abs() + f2.abs()).max(1.0));
        }
    }
}
