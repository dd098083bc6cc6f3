//! Small named instances used in tests, examples and the CLI smoke runs.

use crate::market::{ClaimVector, Model, Node, ScenarioTree, TradingCone};
use crate::utility::{Piece, PieceKind, PiecewiseUtility};

fn one_period(probs: &[f64], s0: &[f64], leaves: &[Vec<f64>], cone: TradingCone) -> Model {
    let mut nodes = vec![Node {
        id: 0,
        parent: None,
        t: 0,
        prob: 1.0,
        prices: s0.to_vec(),
    }];
    for (i, (p, s)) in probs.iter().zip(leaves).enumerate() {
        nodes.push(Node {
            id: i + 1,
            parent: Some(0),
            t: 1,
            prob: *p,
            prices: s.clone(),
        });
    }
    let tree = ScenarioTree::new(s0.len(), 1, nodes).expect("fixture tree is valid");
    Model { tree, cone }
}

/// One period, `S₀ = 1`, up to 2 and down to 0.5 with equal probability,
/// unconstrained trading.
pub fn bin1() -> Model {
    one_period(&[0.5, 0.5], &[1.0], &[vec![2.0], vec![0.5]], TradingCone::whole_space(1))
}

/// BIN1 with the cone restricted to long positions.
pub fn bin1_long_only() -> Model {
    let mut m = bin1();
    m.cone = TradingCone::nonnegative_orthant(1);
    m
}

/// Two periods of BIN1's branch factors (recombining prices, 7 nodes).
/// Leaves in order: uu (4), ud (1), du (1), dd (0.25).
pub fn bin1_two_period() -> Model {
    let mk = |id, parent, t, prob, s| Node {
        id,
        parent,
        t,
        prob,
        prices: vec![s],
    };
    let nodes = vec![
        mk(0, None, 0, 1.0, 1.0),
        mk(1, Some(0), 1, 0.5, 2.0),
        mk(2, Some(0), 1, 0.5, 0.5),
        mk(3, Some(1), 2, 0.5, 4.0),
        mk(4, Some(1), 2, 0.5, 1.0),
        mk(5, Some(2), 2, 0.5, 1.0),
        mk(6, Some(2), 2, 0.5, 0.25),
    ];
    Model {
        tree: ScenarioTree::new(1, 2, nodes).expect("fixture tree is valid"),
        cone: TradingCone::whole_space(1),
    }
}

/// One period, `S₁ ∈ {1.1, 0.5}`, no short selling.
pub fn bin2() -> Model {
    one_period(
        &[0.5, 0.5],
        &[1.0],
        &[vec![1.1], vec![0.5]],
        TradingCone::nonnegative_orthant(1),
    )
}

/// BIN1 with endowment `B = (1, 0)`.
pub fn bin3() -> (Model, ClaimVector) {
    (bin1(), ClaimVector(vec![1.0, 0.0]))
}

/// One period with `S₁ ∈ {2, 1.5}` from `S₀ = 1`: buying the asset is an
/// arbitrage.
pub fn arbitrage() -> Model {
    one_period(&[0.5, 0.5], &[1.0], &[vec![2.0], vec![1.5]], TradingCone::whole_space(1))
}

/// `U(x) = ln x`.
pub fn log_utility() -> PiecewiseUtility {
    PiecewiseUtility::new(vec![Piece::new(0.0, PieceKind::Log { coefficient: 1.0 })])
        .expect("valid utility")
}

/// `U(x) = c·x^p`.
pub fn power_utility(coefficient: f64, exponent: f64) -> PiecewiseUtility {
    PiecewiseUtility::new(vec![Piece::new(
        0.0,
        PieceKind::Power {
            coefficient,
            exponent,
        },
    )])
    .expect("valid utility")
}

/// CRRA utility `x^p / p`.
pub fn crra(p: f64) -> PiecewiseUtility {
    power_utility(1.0 / p, p)
}

/// `U(x) = min(2√x, 1 + √x)`: kinked at 1 with one-sided slopes 1 and 1/2.
pub fn kink() -> PiecewiseUtility {
    PiecewiseUtility::new(vec![
        Piece::new(
            0.0,
            PieceKind::Power {
                coefficient: 2.0,
                exponent: 0.5,
            },
        ),
        Piece::new(
            1.0,
            PieceKind::Power {
                coefficient: 1.0,
                exponent: 0.5,
            },
        ),
    ])
    .expect("valid utility")
}

/// `2√x` on `[0,1)`, linear with slope 1 on `[1,2)`, `2 ln x` beyond:
/// not strictly concave.
pub fn linear_middle() -> PiecewiseUtility {
    PiecewiseUtility::new(vec![
        Piece::new(
            0.0,
            PieceKind::Power {
                coefficient: 2.0,
                exponent: 0.5,
            },
        ),
        Piece::new(
            1.0,
            PieceKind::Linear {
                slope: 1.0,
                intercept: None,
            },
        ),
        Piece::new(2.0, PieceKind::Log { coefficient: 2.0 }),
    ])
    .expect("valid utility")
}

/// `U(x) = min(x, 1)`: bounded slopes, fails the Inada conditions.
pub fn capped_linear() -> PiecewiseUtility {
    PiecewiseUtility::new(vec![
        Piece::new(
            0.0,
            PieceKind::Linear {
                slope: 1.0,
                intercept: Some(0.0),
            },
        ),
        Piece::new(
            1.0,
            PieceKind::Linear {
                slope: 0.0,
                intercept: None,
            },
        ),
    ])
    .expect("valid utility")
}

/// A piecewise-linear utility with three pieces (slopes 2, 1, 0).
pub fn piecewise_linear() -> PiecewiseUtility {
    PiecewiseUtility::new(vec![
        Piece::new(
            0.0,
            PieceKind::Linear {
                slope: 2.0,
                intercept: Some(0.0),
            },
        ),
        Piece::new(
            0.5,
            PieceKind::Linear {
                slope: 1.0,
                intercept: None,
            },
        ),
        Piece::new(
            2.0,
            PieceKind::Linear {
                slope: 0.0,
                intercept: None,
            },
        ),
    ])
    .expect("valid utility")
}
