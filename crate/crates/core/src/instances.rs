//! Seeded random test instances: small arbitrage-free trees, random
//! polyhedral cones, utilities and bounded endowments.
//!
//! Prices are built as martingales under a random full-support measure `Q`,
//! so every cone-feasible gains process is a `Q`-martingale and a strictly
//! positive supermartingale measure always exists. The physical measure `P`
//! is drawn independently.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::fixtures;
use crate::market::{ClaimVector, Model, Node, ScenarioTree, TradingCone};
use crate::utility::PiecewiseUtility;

/// Environment variable that fixes the base seed of randomized runs.
pub const SEED_ENV: &str = "DUALMAX_SEED";

/// Base seed from `DUALMAX_SEED`, or `default` when unset or unparsable.
pub fn seed_from_env(default: u64) -> u64 {
    std::env::var(SEED_ENV)
        .ok()
        .and_then(|s| s.trim().parse().ok())
        .unwrap_or(default)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, Copy)]
pub struct TreeShape {
    pub max_periods: usize,
    pub max_branches: usize,
    pub max_assets: usize,
}

impl Default for TreeShape {
    fn default() -> Self {
        Self {
            max_periods: 3,
            max_branches: 3,
            max_assets: 2,
        }
    }
}

fn random_simplex<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..1.0)).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Random arbitrage-free tree with the given shape bounds.
pub fn random_tree<R: Rng>(rng: &mut R, shape: TreeShape) -> ScenarioTree {
    let d = rng.gen_range(1..=shape.max_assets);
    let horizon = rng.gen_range(1..=shape.max_periods);
    let s0: Vec<f64> = (0..d).map(|_| rng.gen_range(0.5..2.0)).collect();
    let mut nodes = vec![Node {
        id: 0,
        parent: None,
        t: 0,
        prob: 1.0,
        prices: s0,
    }];
    let mut frontier = vec![0usize];
    for t in 1..=horizon {
        let mut next = Vec::new();
        for &parent in &frontier {
            let branches = rng.gen_range(2..=shape.max_branches.max(2));
            let q = random_simplex(rng, branches);
            let p = random_simplex(rng, branches);
            let sp = nodes[parent].prices.clone();
            let factors: Vec<Vec<f64>> = (0..branches)
                .map(|_| (0..d).map(|_| rng.gen_range(-0.5f64..0.5).exp()).collect())
                .collect();
            for (c, pc) in p.iter().enumerate() {
                let prices = (0..d)
                    .map(|a| {
                        let mean: f64 = (0..branches).map(|k| q[k] * factors[k][a]).sum();
                        sp[a] * factors[c][a] / mean
                    })
                    .collect();
                let id = nodes.len();
                nodes.push(Node {
                    id,
                    parent: Some(parent),
                    t,
                    prob: *pc,
                    prices,
                });
                next.push(id);
            }
        }
        frontier = next;
    }
    ScenarioTree::new(d, horizon, nodes).expect("generated tree is valid")
}

fn random_vector<R: Rng>(rng: &mut R, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if v.iter().map(|x| x * x).sum::<f64>() > 0.05 {
            return v;
        }
    }
}

/// Random polyhedral cone in `d` dimensions: the whole space, the orthant,
/// one to three random rays, or a line plus a ray.
pub fn random_cone<R: Rng>(rng: &mut R, d: usize) -> TradingCone {
    match rng.gen_range(0..4) {
        0 => TradingCone::whole_space(d),
        1 => TradingCone::nonnegative_orthant(d),
        2 => {
            let m = rng.gen_range(1..=3);
            TradingCone::new((0..m).map(|_| random_vector(rng, d)).collect()).expect("valid cone")
        }
        _ => {
            let line = random_vector(rng, d);
            let neg = line.iter().map(|v| -v).collect();
            let ray = random_vector(rng, d);
            TradingCone::new(vec![line, neg, ray]).expect("valid cone")
        }
    }
}

pub fn random_model<R: Rng>(rng: &mut R, shape: TreeShape) -> Model {
    let tree = random_tree(rng, shape);
    let cone = random_cone(rng, tree.num_assets());
    Model { tree, cone }
}

/// Uniform claim on `[lo, hi]` per leaf.
pub fn random_claim<R: Rng>(rng: &mut R, leaves: usize, lo: f64, hi: f64) -> ClaimVector {
    ClaimVector((0..leaves).map(|_| rng.gen_range(lo..hi)).collect())
}

/// Log, CRRA with exponent in [0.2, 0.7], or the kinked utility.
pub fn random_utility<R: Rng>(rng: &mut R) -> (String, PiecewiseUtility) {
    match rng.gen_range(0..3) {
        0 => ("log".into(), fixtures::log_utility()),
        1 => {
            let p = rng.gen_range(0.2..0.7);
            (format!("crra({p:.3})"), fixtures::crra(p))
        }
        _ => ("kink".into(), fixtures::kink()),
    }
}

/// A complete random duality instance; `wealth_offset` is added to the
/// endowment bound by the caller once it is known.
#[derive(Debug, Clone)]
pub struct RandomInstance {
    pub seed: u64,
    pub model: Model,
    pub utility_name: String,
    pub utility: PiecewiseUtility,
    pub endowment: ClaimVector,
    pub wealth_offset: f64,
}

pub fn random_instance(seed: u64, shape: TreeShape) -> RandomInstance {
    let mut r = rng(seed);
    let model = random_model(&mut r, shape);
    let (utility_name, utility) = random_utility(&mut r);
    let endowment = random_claim(&mut r, model.tree.num_leaves(), -1.0, 1.0);
    let wealth_offset = r.gen_range(0.1..2.0);
    RandomInstance {
        seed,
        model,
        utility_name,
        utility,
        endowment,
        wealth_offset,
    }
}
