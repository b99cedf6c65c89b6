//! Edge-wise hierarchical testing across experiments.
//!
//! Edge `k` stands for `j -> i` with `k = i * p + j`.

pub mod decorrelate;
pub mod node;
pub mod score;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use decorrelate::{decorrelate, decorrelation_direction, lasso_direction, Decorrelation};
pub use node::{node_pvalue_max, node_pvalue_max_with, node_pvalue_sum, normal_pvalue, NodeTest};
pub use score::{
    fit_thetas, least_squares_fits, model_thetas, score_statistic, score_statistics, ScoreStats,
    ScoreVariance, TestingDesign,
};

use crate::error::{domain, Result};
use crate::process::MultiModel;
use crate::tree::{oracle_tree, SimilarityTree, TreeSource};

/// Level and node test of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TestConfig {
    pub alpha: f64,
    pub node_test: NodeTest,
    /// Edges `(target, source)` to test; all `p^2` when empty.
    pub subset: Vec<(usize, usize)>,
}

impl Default for TestConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            node_test: NodeTest::Sum,
            subset: vec![],
        }
    }
}

impl TestConfig {
    pub fn validate(&self, p: usize) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return domain(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if let NodeTest::Max { d } = self.node_test {
            if !(d > 0.0 && d.is_finite()) {
                return domain("the Gumbel constant must be positive");
            }
        }
        if let Some(&(i, j)) = self.subset.iter().find(|&&(i, j)| i >= p || j >= p) {
            return domain(format!(
                "edge ({}, {}) is outside a {p}-unit network",
                i + 1,
                j + 1
            ));
        }
        Ok(())
    }

    fn edges(&self, p: usize) -> Vec<usize> {
        if self.subset.is_empty() {
            (0..p * p).collect()
        } else {
            let mut k: Vec<usize> = self.subset.iter().map(|&(i, j)| i * p + j).collect();
            k.sort_unstable();
            k.dedup();
            k
        }
    }
}

/// `alpha_l = (alpha / |J|) (M - l + 1) / M` for `l = 1..M`, `|J|` defaulting
/// to `p^2`.
pub fn critical_levels(alpha: f64, p: usize, m: usize, family: Option<usize>) -> Result<Vec<f64>> {
    let j = family.unwrap_or(p * p);
    if !(alpha > 0.0) || j == 0 || m == 0 {
        return domain("critical levels need alpha > 0, a nonempty family and M >= 1");
    }
    Ok((1..=m)
        .map(|l| alpha / j as f64 * (m - l + 1) as f64 / m as f64)
        .collect())
}

/// Trees used per edge.
#[derive(Debug, Clone, PartialEq)]
pub enum EdgeTrees {
    Shared(SimilarityTree),
    /// One tree per edge `k`.
    PerEdge(Vec<SimilarityTree>),
}

impl EdgeTrees {
    /// Per-edge oracle trees of `model`; `reversed` reads each order
    /// backwards, so experiments without the edge are tested first.
    pub fn oracle(model: &MultiModel, reversed: bool) -> Result<Self> {
        let p = model.num_units();
        let mut trees = Vec::with_capacity(p * p);
        for i in 0..p {
            for j in 0..p {
                let t = oracle_tree(&model.edge_profile(i, j))?;
                trees.push(if reversed {
                    let mut o = t.order().to_vec();
                    o.reverse();
                    SimilarityTree::from_order(o, TreeSource::Custom)?
                } else {
                    t
                });
            }
        }
        Ok(EdgeTrees::PerEdge(trees))
    }

    fn get(&self, k: usize) -> &SimilarityTree {
        match self {
            EdgeTrees::Shared(t) => t,
            EdgeTrees::PerEdge(v) => &v[k],
        }
    }
}

/// One evaluated node p-value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub edge: usize,
    pub level: usize,
    /// Experiments of the node, 0-based and sorted.
    pub nodes: Vec<usize>,
    pub pvalue: f64,
    pub alpha: f64,
    pub rejected: bool,
}

/// `Z` with one row per edge and one column per experiment, plus every node
/// p-value computed on the way.
#[derive(Debug, Clone, PartialEq)]
pub struct RejectionMatrix {
    pub p: usize,
    pub m: usize,
    z: Vec<bool>,
    pub records: Vec<NodeRecord>,
}

impl RejectionMatrix {
    fn empty(p: usize, m: usize) -> Self {
        Self {
            p,
            m,
            z: vec![false; p * p * m],
            records: vec![],
        }
    }

    pub fn get(&self, edge: usize, exp: usize) -> bool {
        self.z[edge * self.m + exp]
    }

    /// Whether `j -> i` is declared nonzero in experiment `exp`.
    pub fn rejected(&self, i: usize, j: usize, exp: usize) -> bool {
        self.get(i * self.p + j, exp)
    }

    fn set(&mut self, edge: usize, exp: usize) {
        self.z[edge * self.m + exp] = true;
    }

    pub fn num_rejections(&self) -> usize {
        self.z.iter().filter(|b| **b).count()
    }

    pub fn row(&self, edge: usize) -> &[bool] {
        &self.z[edge * self.m..(edge + 1) * self.m]
    }

    /// Node tests evaluated for `edge`.
    pub fn tests_for(&self, edge: usize) -> impl Iterator<Item = &NodeRecord> {
        self.records.iter().filter(move |r| r.edge == edge)
    }
}

fn check_stats(stats: &ScoreStats, m: usize) -> Result<()> {
    if stats.num_experiments() != m {
        return domain(format!(
            "statistics cover {} experiments, the tree {m}",
            stats.num_experiments()
        ));
    }
    Ok(())
}

/// Top-down testing along each edge's tree: the root at `alpha_1`; while a
/// right node is rejected, level `l` tests the left leaf and the remaining
/// right set at `alpha_l`. A rejected leaf marks its experiment.
pub fn hierarchical_test(
    trees: &EdgeTrees,
    stats: &ScoreStats,
    config: &TestConfig,
) -> Result<RejectionMatrix> {
    let p = stats.num_units();
    let m = stats.num_experiments();
    config.validate(p)?;
    match trees {
        EdgeTrees::Shared(t) => {
            if t.num_experiments() != m {
                return domain("tree and statistics disagree on M");
            }
        }
        EdgeTrees::PerEdge(v) => {
            if v.len() != p * p || v.iter().any(|t| t.num_experiments() != m) {
                return domain(format!(
                    "per-edge trees must be {} trees over {m} experiments",
                    p * p
                ));
            }
        }
    }
    check_stats(stats, m)?;
    let edges = config.edges(p);
    let levels = critical_levels(config.alpha, p, m, Some(edges.len()))?;

    let per_edge: Vec<(usize, Vec<usize>, Vec<NodeRecord>)> = edges
        .par_iter()
        .map(|&k| {
            let tree = trees.get(k);
            let v = stats.edge(k / p, k % p);
            let mut records = Vec::new();
            let mut hits = Vec::new();
            let mut test = |level: usize, nodes: Vec<usize>| {
                let vals: Vec<f64> = nodes.iter().map(|&e| v[e]).collect();
                let pv = config.node_test.pvalue(&vals);
                let alpha = levels[level - 1];
                let rejected = pv <= alpha;
                records.push(NodeRecord {
                    edge: k,
                    level,
                    nodes,
                    pvalue: pv,
                    alpha,
                    rejected,
                });
                rejected
            };
            let order = tree.order();
            let mut root: Vec<usize> = order.to_vec();
            root.sort_unstable();
            if !test(1, root) {
                return (k, hits, records);
            }
            if m == 1 {
                hits.push(order[0]);
                return (k, hits, records);
            }
            for l in 2..=m {
                let left = order[l - 2];
                if test(l, vec![left]) {
                    hits.push(left);
                }
                let mut right = order[l - 1..].to_vec();
                right.sort_unstable();
                if !test(l, right) {
                    break;
                }
                if l == m {
                    hits.push(order[m - 1]);
                }
            }
            (k, hits, records)
        })
        .collect();

    let mut out = RejectionMatrix::empty(p, m);
    for (k, hits, records) in per_edge {
        for e in hits {
            out.set(k, e);
        }
        out.records.extend(records);
    }
    Ok(out)
}

/// Every `V` tested on its own at `alpha / (|J| M)`.
pub fn bonferroni_test(stats: &ScoreStats, config: &TestConfig) -> Result<RejectionMatrix> {
    let p = stats.num_units();
    let m = stats.num_experiments();
    config.validate(p)?;
    let edges = config.edges(p);
    let level = config.alpha / (edges.len() * m) as f64;
    let mut out = RejectionMatrix::empty(p, m);
    for &k in &edges {
        for (e, v) in stats.edge(k / p, k % p).into_iter().enumerate() {
            let pv = normal_pvalue(v);
            let rejected = pv <= level;
            if rejected {
                out.set(k, e);
            }
            out.records.push(NodeRecord {
                edge: k,
                level: 1,
                nodes: vec![e],
                pvalue: pv,
                alpha: level,
                rejected,
            });
        }
    }
    Ok(out)
}
