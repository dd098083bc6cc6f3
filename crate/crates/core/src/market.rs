//! Finite scenario-tree market: filtration as a rooted tree, positive price
//! process, polyhedral trading cone, predictable strategies and their gains.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lp::{LinearProgram, Relation};

/// Absolute tolerance used when deciding cone membership.
pub const CONE_TOL: f64 = 1e-9;
const PROB_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MarketError {
    #[error("node {node}: price of asset {asset} is {value}, must be > 0")]
    NonPositivePrice { node: usize, asset: usize, value: f64 },
    #[error("node {node}: children probabilities sum to {sum}, expected 1")]
    ProbabilityNotNormalized { node: usize, sum: f64 },
    #[error("node {node}: branch probability {prob} must be > 0")]
    NonPositiveProbability { node: usize, prob: f64 },
    #[error("node {node}: ragged tree ({reason})")]
    RaggedTree { node: usize, reason: String },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("strategy has no holdings at nonterminal node {0}")]
    MissingNode(usize),
    #[error("invalid cone: {0}")]
    InvalidCone(String),
    #[error("invalid claim: {0}")]
    InvalidClaim(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: usize,
    pub parent: Option<usize>,
    pub t: usize,
    /// Conditional probability of reaching this node from its parent
    /// (1 for the root).
    pub prob: f64,
    pub prices: Vec<f64>,
}

/// A validated finite filtered market. Nodes are stored in a flat array
/// indexed by id; children, leaves and path probabilities are derived once.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioTree {
    d: usize,
    horizon: usize,
    nodes: Vec<Node>,
    children: Vec<Vec<usize>>,
    /// node ids sorted by time, root first
    order: Vec<usize>,
    leaves: Vec<usize>,
    leaf_pos: Vec<Option<usize>>,
    path_prob: Vec<f64>,
    /// for each node, the range of leaf positions below it
    leaf_range: Vec<(usize, usize)>,
}

impl ScenarioTree {
    pub fn new(d: usize, horizon: usize, nodes: Vec<Node>) -> Result<Self, MarketError> {
        let n = nodes.len();
        for (i, node) in nodes.iter().enumerate() {
            if node.id != i {
                return Err(MarketError::RaggedTree {
                    node: node.id,
                    reason: format!("node ids must be dense 0..{n} in order, found {} at position {i}", node.id),
                });
            }
            if node.prices.len() != d {
                return Err(MarketError::DimensionMismatch {
                    expected: d,
                    got: node.prices.len(),
                });
            }
            for (a, &p) in node.prices.iter().enumerate() {
                if !(p > 0.0) || !p.is_finite() {
                    return Err(MarketError::NonPositivePrice {
                        node: i,
                        asset: a,
                        value: p,
                    });
                }
            }
        }
        let roots: Vec<usize> = nodes.iter().filter(|x| x.parent.is_none()).map(|x| x.id).collect();
        if roots.len() != 1 {
            return Err(MarketError::RaggedTree {
                node: roots.get(1).copied().unwrap_or(0),
                reason: format!("expected exactly one root, found {}", roots.len()),
            });
        }
        let root = roots[0];
        if nodes[root].t != 0 {
            return Err(MarketError::RaggedTree {
                node: root,
                reason: "root must sit at t = 0".into(),
            });
        }
        let mut children = vec![Vec::new(); n];
        for node in &nodes {
            if let Some(p) = node.parent {
                if p >= n {
                    return Err(MarketError::RaggedTree {
                        node: node.id,
                        reason: format!("parent {p} does not exist"),
                    });
                }
                if nodes[p].t + 1 != node.t {
                    return Err(MarketError::RaggedTree {
                        node: node.id,
                        reason: format!("time {} does not follow parent time {}", node.t, nodes[p].t),
                    });
                }
                if !(node.prob > 0.0) {
                    return Err(MarketError::NonPositiveProbability {
                        node: node.id,
                        prob: node.prob,
                    });
                }
                children[p].push(node.id);
            }
        }
        for (id, ch) in children.iter().enumerate() {
            if ch.is_empty() {
                if nodes[id].t != horizon {
                    return Err(MarketError::RaggedTree {
                        node: id,
                        reason: format!("terminal node at t = {} but horizon is {horizon}", nodes[id].t),
                    });
                }
            } else {
                if nodes[id].t >= horizon {
                    return Err(MarketError::RaggedTree {
                        node: id,
                        reason: "node beyond the horizon has children".into(),
                    });
                }
                let sum: f64 = ch.iter().map(|&c| nodes[c].prob).sum();
                if (sum - 1.0).abs() > PROB_TOL {
                    return Err(MarketError::ProbabilityNotNormalized { node: id, sum });
                }
            }
        }
        // breadth-first order from the root also proves connectivity
        let mut order = vec![root];
        let mut head = 0;
        while head < order.len() {
            let v = order[head];
            head += 1;
            order.extend(children[v].iter().copied());
        }
        if order.len() != n {
            return Err(MarketError::RaggedTree {
                node: (0..n).find(|i| !order.contains(i)).unwrap_or(0),
                reason: "node is not reachable from the root".into(),
            });
        }
        let mut path_prob = vec![1.0; n];
        for &v in &order[1..] {
            let p = nodes[v].parent.expect("non-root");
            path_prob[v] = path_prob[p] * nodes[v].prob;
        }
        // leaves in depth-first order so each subtree owns a contiguous range
        let mut leaves = Vec::new();
        let mut leaf_range = vec![(0, 0); n];
        fn dfs(
            v: usize,
            children: &[Vec<usize>],
            leaves: &mut Vec<usize>,
            range: &mut [(usize, usize)],
        ) {
            let start = leaves.len();
            if children[v].is_empty() {
                leaves.push(v);
            } else {
                for &c in &children[v] {
                    dfs(c, children, leaves, range);
                }
            }
            range[v] = (start, leaves.len());
        }
        dfs(root, &children, &mut leaves, &mut leaf_range);
        let mut leaf_pos = vec![None; n];
        for (k, &l) in leaves.iter().enumerate() {
            leaf_pos[l] = Some(k);
        }
        Ok(Self {
            d,
            horizon,
            nodes,
            children,
            order,
            leaves,
            leaf_pos,
            path_prob,
            leaf_range,
        })
    }

    pub fn num_assets(&self) -> usize {
        self.d
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &Node {
        &self.nodes[id]
    }

    pub fn root(&self) -> usize {
        self.order[0]
    }

    pub fn children(&self, id: usize) -> &[usize] {
        &self.children[id]
    }

    pub fn is_terminal(&self, id: usize) -> bool {
        self.children[id].is_empty()
    }

    /// Node ids sorted by time, root first.
    pub fn topological_order(&self) -> &[usize] {
        &self.order
    }

    /// Nonterminal node ids in topological order.
    pub fn nonterminal(&self) -> Vec<usize> {
        self.order.iter().copied().filter(|&v| !self.is_terminal(v)).collect()
    }

    /// Terminal node ids; position in this slice is the leaf index used by
    /// [`ClaimVector`] and dual measures.
    pub fn leaves(&self) -> &[usize] {
        &self.leaves
    }

    pub fn num_leaves(&self) -> usize {
        self.leaves.len()
    }

    pub fn leaf_index(&self, node: usize) -> Option<usize> {
        self.leaf_pos.get(node).copied().flatten()
    }

    /// Leaf positions below `node`, as a half-open range.
    pub fn leaf_range(&self, node: usize) -> std::ops::Range<usize> {
        let (a, b) = self.leaf_range[node];
        a..b
    }

    /// Unconditional probability of reaching `node`.
    pub fn path_probability(&self, node: usize) -> f64 {
        self.path_prob[node]
    }

    /// P(ω) for every leaf, in leaf order.
    pub fn leaf_probabilities(&self) -> Vec<f64> {
        self.leaves.iter().map(|&l| self.path_prob[l]).collect()
    }

    pub fn price_step(&self, from: usize, to: usize) -> Vec<f64> {
        self.nodes[to]
            .prices
            .iter()
            .zip(&self.nodes[from].prices)
            .map(|(b, a)| b - a)
            .collect()
    }
}

/// Polyhedral trading constraint `K = {Σ μᵢ kᵢ : μ ≥ 0}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradingCone {
    pub generators: Vec<Vec<f64>>,
}

impl TradingCone {
    pub fn new(generators: Vec<Vec<f64>>) -> Result<Self, MarketError> {
        let Some(first) = generators.first() else {
            return Err(MarketError::InvalidCone("at least one generator is required".into()));
        };
        let d = first.len();
        for g in &generators {
            if g.len() != d {
                return Err(MarketError::DimensionMismatch {
                    expected: d,
                    got: g.len(),
                });
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(MarketError::InvalidCone("non-finite generator entry".into()));
            }
        }
        Ok(Self { generators })
    }

    /// `R^d` as the cone generated by `±eᵢ`.
    pub fn whole_space(d: usize) -> Self {
        let mut generators = Vec::with_capacity(2 * d);
        for i in 0..d {
            let mut e = vec![0.0; d];
            e[i] = 1.0;
            generators.push(e.clone());
            e[i] = -1.0;
            generators.push(e);
        }
        Self { generators }
    }

    /// No short selling: `R^d_+`.
    pub fn nonnegative_orthant(d: usize) -> Self {
        let generators = (0..d)
            .map(|i| {
                let mut e = vec![0.0; d];
                e[i] = 1.0;
                e
            })
            .collect();
        Self { generators }
    }

    /// The trivial cone `{0}`.
    pub fn trivial(d: usize) -> Self {
        Self {
            generators: vec![vec![0.0; d]],
        }
    }

    pub fn dim(&self) -> usize {
        self.generators[0].len()
    }

    pub fn num_generators(&self) -> usize {
        self.generators.len()
    }

    /// `Σ μᵢ kᵢ`.
    pub fn combine(&self, weights: &[f64]) -> Vec<f64> {
        let mut v = vec![0.0; self.dim()];
        for (w, g) in weights.iter().zip(&self.generators) {
            for (vi, gi) in v.iter_mut().zip(g) {
                *vi += w * gi;
            }
        }
        v
    }
}

/// Decides `v ∈ K` by a linear feasibility program with absolute
/// tolerance [`CONE_TOL`].
pub fn cone_contains(cone: &TradingCone, v: &[f64]) -> Result<bool, MarketError> {
    Ok(cone_weights(cone, v)?.is_some())
}

/// Nonnegative generator weights reproducing `v`, if `v ∈ K`.
pub fn cone_weights(cone: &TradingCone, v: &[f64]) -> Result<Option<Vec<f64>>, MarketError> {
    let d = cone.dim();
    if v.len() != d {
        return Err(MarketError::DimensionMismatch {
            expected: d,
            got: v.len(),
        });
    }
    let m = cone.num_generators();
    // variables: μ (m), e+ (d), e- (d); minimize total residual
    let mut lp = LinearProgram::new(m + 2 * d);
    for k in 0..d {
        lp.set_objective_coeff(m + k, 1.0);
        lp.set_objective_coeff(m + d + k, 1.0);
        let mut row = vec![0.0; m + 2 * d];
        for (i, g) in cone.generators.iter().enumerate() {
            row[i] = g[k];
        }
        row[m + k] = 1.0;
        row[m + d + k] = -1.0;
        lp.add_row(row, Relation::Eq, v[k]);
    }
    let sol = lp.minimize().optimal().expect("residual program is always feasible and bounded");
    if sol.value <= CONE_TOL {
        Ok(Some(sol.x[..m].to_vec()))
    } else {
        Ok(None)
    }
}

/// Predictable holdings: one `d`-vector per nonterminal node, applied over
/// the step from the node to its children.
#[derive(Debug, Clone, PartialEq)]
pub struct Strategy {
    holdings: Vec<Option<Vec<f64>>>,
}

impl Strategy {
    pub fn zero(tree: &ScenarioTree) -> Self {
        Self::constant(tree, &vec![0.0; tree.num_assets()])
    }

    pub fn constant(tree: &ScenarioTree, h: &[f64]) -> Self {
        let holdings = (0..tree.nodes().len())
            .map(|v| (!tree.is_terminal(v)).then(|| h.to_vec()))
            .collect();
        Self { holdings }
    }

    pub fn from_map(tree: &ScenarioTree, map: &BTreeMap<usize, Vec<f64>>) -> Self {
        let holdings = (0..tree.nodes().len())
            .map(|v| if tree.is_terminal(v) { None } else { map.get(&v).cloned() })
            .collect();
        Self { holdings }
    }

    /// Builds a strategy from generator weights laid out node-major over
    /// `tree.nonterminal()`.
    pub fn from_cone_weights(tree: &ScenarioTree, cone: &TradingCone, weights: &[f64]) -> Self {
        let m = cone.num_generators();
        let mut holdings = vec![None; tree.nodes().len()];
        for (k, v) in tree.nonterminal().into_iter().enumerate() {
            holdings[v] = Some(cone.combine(&weights[k * m..(k + 1) * m]));
        }
        Self { holdings }
    }

    pub fn at(&self, node: usize) -> Option<&[f64]> {
        self.holdings.get(node).and_then(|h| h.as_deref())
    }

    pub fn set(&mut self, node: usize, h: Vec<f64>) {
        if node >= self.holdings.len() {
            self.holdings.resize(node + 1, None);
        }
        self.holdings[node] = Some(h);
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            holdings: self
                .holdings
                .iter()
                .map(|h| h.as_ref().map(|v| v.iter().map(|x| a * x).collect()))
                .collect(),
        }
    }

    /// `a·self + b·other`, node by node.
    pub fn combine(&self, a: f64, other: &Strategy, b: f64) -> Self {
        let holdings = self
            .holdings
            .iter()
            .zip(&other.holdings)
            .map(|(x, y)| match (x, y) {
                (Some(x), Some(y)) => Some(x.iter().zip(y).map(|(p, q)| a * p + b * q).collect()),
                _ => None,
            })
            .collect();
        Self { holdings }
    }

    pub fn to_map(&self) -> BTreeMap<usize, Vec<f64>> {
        self.holdings
            .iter()
            .enumerate()
            .filter_map(|(i, h)| h.clone().map(|h| (i, h)))
            .collect()
    }
}

/// One real value per terminal node, in leaf order.
#[derive(Debug, Clone, PartialEq)]
pub struct ClaimVector(pub Vec<f64>);

impl ClaimVector {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn constant(n: usize, c: f64) -> Self {
        Self(vec![c; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    /// `‖·‖_∞`.
    pub fn sup_norm(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn shifted(&self, c: f64) -> Self {
        Self(self.0.iter().map(|v| v + c).collect())
    }

    pub fn from_leaf_map(
        tree: &ScenarioTree,
        map: &BTreeMap<usize, f64>,
    ) -> Result<Self, MarketError> {
        for id in map.keys() {
            if tree.leaf_index(*id).is_none() {
                return Err(MarketError::InvalidClaim(format!("node {id} is not a leaf")));
            }
        }
        tree.leaves()
            .iter()
            .map(|l| {
                map.get(l)
                    .copied()
                    .ok_or_else(|| MarketError::InvalidClaim(format!("missing value for leaf {l}")))
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Self)
    }

    pub fn to_leaf_map(&self, tree: &ScenarioTree) -> BTreeMap<usize, f64> {
        tree.leaves().iter().copied().zip(self.0.iter().copied()).collect()
    }

    pub fn check_len(&self, tree: &ScenarioTree) -> Result<(), MarketError> {
        if self.len() != tree.num_leaves() {
            return Err(MarketError::DimensionMismatch {
                expected: tree.num_leaves(),
                got: self.len(),
            });
        }
        Ok(())
    }
}

/// `(H·S)` at every node: zero at the root and
/// `gains(child) = gains(parent) + H(parent)·(S(child) − S(parent))`.
pub fn gains_process(tree: &ScenarioTree, h: &Strategy) -> Result<Vec<f64>, MarketError> {
    let mut gains = vec![0.0; tree.nodes().len()];
    for &v in tree.topological_order() {
        if tree.is_terminal(v) {
            continue;
        }
        let hv = h.at(v).ok_or(MarketError::MissingNode(v))?;
        if hv.len() != tree.num_assets() {
            return Err(MarketError::DimensionMismatch {
                expected: tree.num_assets(),
                got: hv.len(),
            });
        }
        for &c in tree.children(v) {
            let step: f64 = tree
                .price_step(v, c)
                .iter()
                .zip(hv)
                .map(|(ds, hi)| ds * hi)
                .sum();
            gains[c] = gains[v] + step;
        }
    }
    Ok(gains)
}

/// `(H·S)_T` as a claim vector.
pub fn terminal_gains(tree: &ScenarioTree, h: &Strategy) -> Result<ClaimVector, MarketError> {
    let g = gains_process(tree, h)?;
    Ok(ClaimVector(tree.leaves().iter().map(|&l| g[l]).collect()))
}

#[derive(Debug, Clone, PartialEq)]
pub enum AdmissibilityViolation {
    OutsideCone { node: usize },
    BelowFloor { node: usize, gain: f64 },
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmissibilityReport {
    pub admissible: bool,
    pub violations: Vec<AdmissibilityViolation>,
}

/// Checks `H(node) ∈ K` everywhere and `(H·S) ≥ −floor` at every node.
/// Pass `f64::INFINITY` for no floor.
pub fn is_admissible(
    tree: &ScenarioTree,
    cone: &TradingCone,
    h: &Strategy,
    floor: f64,
) -> AdmissibilityReport {
    let mut violations = Vec::new();
    for v in tree.nonterminal() {
        match h.at(v) {
            Some(hv) => match cone_contains(cone, hv) {
                Ok(true) => {}
                Ok(false) => violations.push(AdmissibilityViolation::OutsideCone { node: v }),
                Err(e) => violations.push(AdmissibilityViolation::Malformed(e.to_string())),
            },
            None => violations.push(AdmissibilityViolation::Malformed(
                MarketError::MissingNode(v).to_string(),
            )),
        }
    }
    if violations.is_empty() {
        match gains_process(tree, h) {
            Ok(g) => {
                for (node, &gain) in g.iter().enumerate() {
                    if gain < -floor {
                        violations.push(AdmissibilityViolation::BelowFloor { node, gain });
                    }
                }
            }
            Err(e) => violations.push(AdmissibilityViolation::Malformed(e.to_string())),
        }
    }
    AdmissibilityReport {
        admissible: violations.is_empty(),
        violations,
    }
}

/// Terminal gains of the elementary strategy `kᵢ·1_{node}`.
#[derive(Debug, Clone)]
pub struct ElementaryColumn {
    pub node: usize,
    pub generator: usize,
    pub leaf_gains: Vec<f64>,
}

/// One column per (nonterminal node, generator) pair, node-major in
/// `tree.nonterminal()` order. Conic combinations of these columns are
/// exactly the terminal gains of cone-feasible strategies.
pub fn elementary_columns(tree: &ScenarioTree, cone: &TradingCone) -> Vec<ElementaryColumn> {
    let mut cols = Vec::new();
    for v in tree.nonterminal() {
        for (i, g) in cone.generators.iter().enumerate() {
            let mut leaf_gains = vec![0.0; tree.num_leaves()];
            for &c in tree.children(v) {
                let step: f64 = tree.price_step(v, c).iter().zip(g).map(|(a, b)| a * b).sum();
                for k in tree.leaf_range(c) {
                    leaf_gains[k] = step;
                }
            }
            cols.push(ElementaryColumn {
                node: v,
                generator: i,
                leaf_gains,
            });
        }
    }
    cols
}

// ---------------------------------------------------------------------------
// File formats

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawNode {
    pub id: usize,
    pub parent: Option<usize>,
    pub t: usize,
    #[serde(default = "one")]
    pub prob: f64,
    pub prices: Vec<f64>,
}

fn one() -> f64 {
    1.0
}

/// The model file: tree plus trading cone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawModel {
    pub d: usize,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub nodes: Vec<RawNode>,
    pub cone: TradingCone,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub tree: ScenarioTree,
    pub cone: TradingCone,
}

/// Validates a raw description into a [`ScenarioTree`]. The root's `prob`
/// field is ignored.
pub fn build_market(raw: &RawModel) -> Result<ScenarioTree, MarketError> {
    let mut nodes: Vec<Node> = raw
        .nodes
        .iter()
        .map(|r| Node {
            id: r.id,
            parent: r.parent,
            t: r.t,
            prob: if r.parent.is_none() { 1.0 } else { r.prob },
            prices: r.prices.clone(),
        })
        .collect();
    nodes.sort_by_key(|n| n.id);
    ScenarioTree::new(raw.d, raw.horizon, nodes)
}

impl Model {
    pub fn from_raw(raw: &RawModel) -> Result<Self, MarketError> {
        let tree = build_market(raw)?;
        let cone = TradingCone::new(raw.cone.generators.clone())?;
        if cone.dim() != tree.num_assets() {
            return Err(MarketError::DimensionMismatch {
                expected: tree.num_assets(),
                got: cone.dim(),
            });
        }
        Ok(Self { tree, cone })
    }

    pub fn to_raw(&self) -> RawModel {
        RawModel {
            d: self.tree.num_assets(),
            horizon: self.tree.horizon(),
            nodes: self
                .tree
                .nodes()
                .iter()
                .map(|n| RawNode {
                    id: n.id,
                    parent: n.parent,
                    t: n.t,
                    prob: n.prob,
                    prices: n.prices.clone(),
                })
                .collect(),
            cone: self.cone.clone(),
        }
    }
}

/// Claims file: `{"values": {"<leafId>": value}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawClaim {
    pub values: BTreeMap<String, f64>,
}

impl RawClaim {
    pub fn to_claim(&self, tree: &ScenarioTree) -> Result<ClaimVector, MarketError> {
        let mut map = BTreeMap::new();
        for (k, v) in &self.values {
            let id: usize = k
                .trim()
                .parse()
                .map_err(|_| MarketError::InvalidClaim(format!("leaf key {k:?} is not an integer")))?;
            map.insert(id, *v);
        }
        ClaimVector::from_leaf_map(tree, &map)
    }

    pub fn from_claim(tree: &ScenarioTree, c: &ClaimVector) -> Self {
        Self {
            values: c
                .to_leaf_map(tree)
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn bin1_builds() {
        let m = fixtures::bin1();
        assert_eq!(m.tree.nodes().len(), 3);
        assert_eq!(m.tree.num_leaves(), 2);
        assert_eq!(m.tree.leaf_probabilities(), vec![0.5, 0.5]);
    }

    #[test]
    fn rejects_bad_probabilities() {
        let mut raw = fixtures::bin1().to_raw();
        raw.nodes[2].prob = 0.6;
        assert!(matches!(
            build_market(&raw),
            Err(MarketError::ProbabilityNotNormalized { node: 0, .. })
        ));
        raw.nodes[2].prob = 0.0;
        raw.nodes[1].prob = 1.0;
        assert!(matches!(
            build_market(&raw),
            Err(MarketError::NonPositiveProbability { node: 2, .. })
        ));
    }

    #[test]
    fn rejects_bad_prices() {
        let mut raw = fixtures::bin1().to_raw();
        raw.nodes[2].prices = vec![0.0];
        assert!(matches!(
            build_market(&raw),
            Err(MarketError::NonPositivePrice { node: 2, asset: 0, .. })
        ));
    }

    #[test]
    fn rejects_ragged_tree() {
        let mut raw = fixtures::bin1_two_period().to_raw();
        // detach the subtree under the down node: that node becomes a
        // terminal node at t = 1 while the horizon is 2
        raw.nodes.retain(|n| n.parent != Some(2));
        let ids: Vec<usize> = raw.nodes.iter().map(|n| n.id).collect();
        let remap = |i: usize| ids.iter().position(|&x| x == i).unwrap();
        for n in raw.nodes.iter_mut() {
            n.id = remap(n.id);
            n.parent = n.parent.map(remap);
        }
        assert!(matches!(
            build_market(&raw),
            Err(MarketError::RaggedTree { node: 2, .. })
        ));
    }

    #[test]
    fn cone_membership() {
        let orthant = TradingCone::nonnegative_orthant(2);
        assert!(cone_contains(&orthant, &[2.0, 3.0]).unwrap());
        assert!(!cone_contains(&orthant, &[-1.0, 0.0]).unwrap());
        let ray = TradingCone::new(vec![vec![1.0, -1.0]]).unwrap();
        assert!(cone_contains(&ray, &[2.0, -2.0]).unwrap());
        assert!(!cone_contains(&ray, &[2.0, -1.0]).unwrap());
        assert!(matches!(
            cone_contains(&ray, &[1.0]),
            Err(MarketError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn ray_membership_matches_direct_scaling() {
        // v ∈ cone{(1,-1)} iff v = s(1,-1) with s >= 0
        let ray = TradingCone::new(vec![vec![1.0, -1.0]]).unwrap();
        for &(a, b) in &[(0.0f64, 0.0f64), (3.5, -3.5), (-1.0, 1.0), (1.0, -1.0 + 1e-6)] {
            let direct = a >= 0.0 && (a + b).abs() < 1e-12;
            assert_eq!(cone_contains(&ray, &[a, b]).unwrap(), direct, "({a}, {b})");
        }
    }

    #[test]
    fn bin1_gains() {
        let m = fixtures::bin1();
        let g = gains_process(&m.tree, &Strategy::constant(&m.tree, &[0.5])).unwrap();
        assert_eq!(g, vec![0.0, 0.5, -0.25]);
        let z = gains_process(&m.tree, &Strategy::zero(&m.tree)).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_period_gains_telescope() {
        let m = fixtures::bin1_two_period();
        let g = gains_process(&m.tree, &Strategy::constant(&m.tree, &[1.0])).unwrap();
        let uu = m.tree.leaves()[0];
        assert_eq!(m.tree.node(uu).prices, vec![4.0]);
        // oracle: sum of price increments along the root-to-leaf path
        let mut path = vec![uu];
        while let Some(p) = m.tree.node(*path.last().unwrap()).parent {
            path.push(p);
        }
        let oracle: f64 = path
            .windows(2)
            .map(|w| m.tree.node(w[0]).prices[0] - m.tree.node(w[1]).prices[0])
            .sum();
        assert_eq!(g[uu], 3.0);
        assert_eq!(oracle, 3.0);
    }

    #[test]
    fn missing_holdings() {
        let m = fixtures::bin1();
        let h = Strategy::from_map(&m.tree, &BTreeMap::new());
        assert_eq!(gains_process(&m.tree, &h), Err(MarketError::MissingNode(0)));
    }

    #[test]
    fn admissibility() {
        let m = fixtures::bin1();
        let ok = is_admissible(&m.tree, &m.cone, &Strategy::constant(&m.tree, &[0.5]), 1.0);
        assert!(ok.admissible);
        let bad = is_admissible(&m.tree, &m.cone, &Strategy::constant(&m.tree, &[10.0]), 1.0);
        assert!(!bad.admissible);
        assert!(bad
            .violations
            .iter()
            .any(|v| matches!(v, AdmissibilityViolation::BelowFloor { node: 2, gain } if *gain == -5.0)));
        let b2 = fixtures::bin2();
        let short = is_admissible(&b2.tree, &b2.cone, &Strategy::constant(&b2.tree, &[-1.0]), f64::INFINITY);
        assert_eq!(short.violations, vec![AdmissibilityViolation::OutsideCone { node: 0 }]);
    }

    #[test]
    fn elementary_columns_bin2() {
        let m = fixtures::bin2();
        let cols = elementary_columns(&m.tree, &m.cone);
        assert_eq!(cols.len(), 1);
        assert!((cols[0].leaf_gains[0] - 0.1).abs() < 1e-15);
        assert!((cols[0].leaf_gains[1] + 0.5).abs() < 1e-15);
    }

    #[test]
    fn model_json_round_trip() {
        let m = fixtures::bin1_two_period();
        let text = serde_json::to_string(&m.to_raw()).unwrap();
        let raw: RawModel = serde_json::from_str(&text).unwrap();
        assert_eq!(Model::from_raw(&raw).unwrap(), m);
    }
}
