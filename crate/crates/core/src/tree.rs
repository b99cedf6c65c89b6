//! Left-leaf binary hierarchies over experiments.
//!
//! Level 1 is the root holding every experiment. Level `l >= 2` splits the
//! right node of level `l - 1` into a single experiment on the left and the
//! rest on the right, so the whole tree is described by the order in which
//! experiments leave as left leaves.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::crosscov::{empirical_similarity_matrix, ThresholdedCov};
use crate::error::{domain, Result};

/// Where the similarity behind a tree came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TreeSource {
    #[default]
    Empirical,
    Oracle,
    Custom,
}

/// `order[k]` is the left leaf at level `k + 2`; the last entry is the
/// bottom-right leaf. Experiments are 0-based in memory and 1-based in JSON.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimilarityTree {
    order: Vec<usize>,
    pub source: TreeSource,
}

#[derive(Serialize, Deserialize)]
struct TreeDoc {
    order: Vec<usize>,
    #[serde(default)]
    source: TreeSource,
}

impl Serialize for SimilarityTree {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        TreeDoc {
            order: self.order.iter().map(|m| m + 1).collect(),
            source: self.source,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for SimilarityTree {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let doc = TreeDoc::deserialize(d)?;
        if doc.order.contains(&0) {
            return Err(serde::de::Error::custom("tree order is 1-based"));
        }
        SimilarityTree::from_order(doc.order.iter().map(|m| m - 1).collect(), doc.source)
            .map_err(serde::de::Error::custom)
    }
}

impl SimilarityTree {
    pub fn from_order(order: Vec<usize>, source: TreeSource) -> Result<Self> {
        let m = order.len();
        if m == 0 {
            return domain("a tree needs at least one experiment");
        }
        let mut seen = vec![false; m];
        for &o in &order {
            if o >= m || std::mem::replace(&mut seen[o], true) {
                return domain(format!("tree order {order:?} is not a permutation"));
            }
        }
        Ok(Self { order, source })
    }

    /// The tree `(0, 1, ..., M-1)`.
    pub fn identity(m: usize) -> Result<Self> {
        Self::from_order((0..m).collect(), TreeSource::Custom)
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn num_experiments(&self) -> usize {
        self.order.len()
    }

    /// Experiments in the right node of level `l` (the root for `l = 1`).
    pub fn right_set(&self, level: usize) -> Result<Vec<usize>> {
        self.check_level(level)?;
        let mut s = self.order[level.max(2) - 1 - usize::from(level == 1)..].to_vec();
        s.sort_unstable();
        Ok(s)
    }

    /// Left leaf of level `l >= 2`.
    pub fn left_leaf(&self, level: usize) -> Result<usize> {
        self.check_level(level)?;
        if level < 2 {
            return domain("the root has no left leaf");
        }
        Ok(self.order[level - 2])
    }

    fn check_level(&self, level: usize) -> Result<()> {
        if level == 0 || level > self.order.len() {
            return domain(format!("level {level} outside 1..={}", self.order.len()));
        }
        Ok(())
    }
}

/// `(left, right)` node sets of level `l`: `({order[l-2]}, {order[l-1..]})`
/// for `l >= 2`, and `(all, {})` at the root.
pub fn node_sets(
    tree: &SimilarityTree,
    level: usize,
) -> Result<(BTreeSet<usize>, BTreeSet<usize>)> {
    tree.check_level(level)?;
    if level == 1 {
        return Ok((tree.order.iter().copied().collect(), BTreeSet::new()));
    }
    let left = [tree.order[level - 2]].into_iter().collect();
    let right = tree.order[level - 1..].iter().copied().collect();
    Ok((left, right))
}

/// Builds the tree bottom-up. The bottom-right leaf has the fewest edges; each
/// next left leaf is the remaining experiment with the largest single-linkage
/// similarity to the experiments already placed below it. Ties put the lower
/// index nearer the root.
pub fn build_tree(similarity: &DMatrix<f64>, edge_counts: &[usize]) -> Result<SimilarityTree> {
    let scores: Vec<f64> = edge_counts.iter().map(|&c| c as f64).collect();
    build_tree_scored(similarity, &scores, TreeSource::Empirical)
}

fn build_tree_scored(
    similarity: &DMatrix<f64>,
    counts: &[f64],
    source: TreeSource,
) -> Result<SimilarityTree> {
    let m = counts.len();
    if m == 0 {
        return domain("a tree needs at least one experiment");
    }
    if similarity.nrows() != m || similarity.ncols() != m {
        return domain(format!(
            "similarity is {}x{} but there are {m} experiments",
            similarity.nrows(),
            similarity.ncols()
        ));
    }
    for a in 0..m {
        for b in 0..m {
            let v = similarity[(a, b)];
            if !v.is_finite() || v != similarity[(b, a)] {
                return domain("similarity must be finite and symmetric");
            }
        }
    }
    let mut remaining: Vec<usize> = (0..m).collect();
    let mut placed: Vec<usize> = Vec::with_capacity(m);

    // ties resolved toward the higher index so lower indices end up nearer the root
    let first = *remaining
        .iter()
        .min_by(|&&a, &&b| counts[a].total_cmp(&counts[b]).then(b.cmp(&a)))
        .expect("m >= 1");
    remaining.retain(|&x| x != first);
    placed.push(first);

    while !remaining.is_empty() {
        let link = |c: usize| {
            placed
                .iter()
                .map(|&r| similarity[(c, r)])
                .fold(f64::NEG_INFINITY, f64::max)
        };
        let next = *remaining
            .iter()
            .max_by(|&&a, &&b| link(a).total_cmp(&link(b)).then(a.cmp(&b)))
            .expect("nonempty");
        remaining.retain(|&x| x != next);
        placed.push(next);
    }
    placed.reverse();
    SimilarityTree::from_order(placed, source)
}

/// Edge-specific tree from the true coefficients of one edge across
/// experiments: similarity `-|b_s - b_t|`, edge count `1(b != 0)`. Zero
/// coefficients always form the bottom-right suffix of the order.
pub fn oracle_tree(true_betas: &[f64]) -> Result<SimilarityTree> {
    let m = true_betas.len();
    let sim = DMatrix::from_fn(m, m, |a, b| {
        if a == b {
            0.0
        } else {
            -(true_betas[a] - true_betas[b]).abs()
        }
    });
    let counts: Vec<f64> = true_betas
        .iter()
        .map(|b| if *b != 0.0 { 1.0 } else { 0.0 })
        .collect();
    build_tree_scored(&sim, &counts, TreeSource::Oracle)
}

/// Tree from an arbitrary similarity matrix and edge counts, tagged custom.
pub fn custom_tree(similarity: &DMatrix<f64>, edge_counts: &[usize]) -> Result<SimilarityTree> {
    let mut t = build_tree(similarity, edge_counts)?;
    t.source = TreeSource::Custom;
    Ok(t)
}

/// Shared tree from thresholded cross-covariances: similarity is the count
/// of common support, edge counts are the support sizes.
pub fn empirical_tree(covs: &[ThresholdedCov]) -> Result<SimilarityTree> {
    let counts: Vec<usize> = covs.iter().map(|c| c.nnz()).collect();
    build_tree(&empirical_similarity_matrix(covs)?, &counts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn figure_one() -> (DMatrix<f64>, Vec<usize>) {
        let s = DMatrix::from_row_slice(
            4,
            4,
            &[
                0.0, 20.0, 12.0, 4.0, 20.0, 0.0, 30.0, 22.0, 12.0, 30.0, 0.0, 40.0, 4.0, 22.0,
                40.0, 0.0,
            ],
        );
        (s, vec![60, 55, 50, 45])
    }

    #[test]
    fn figure_one_order() {
        let (s, c) = figure_one();
        let t = build_tree(&s, &c).unwrap();
        assert_eq!(t.order(), &[0, 1, 2, 3]);
        let (l, r) = node_sets(&t, 3).unwrap();
        assert_eq!(l.into_iter().collect::<Vec<_>>(), vec![1]);
        assert_eq!(r.into_iter().collect::<Vec<_>>(), vec![2, 3]);
        assert_eq!(t.left_leaf(2).unwrap(), 0);
        assert_eq!(t.right_set(4).unwrap(), vec![3]);
        assert_eq!(t.right_set(1).unwrap(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn single_experiment() {
        let t = build_tree(&DMatrix::zeros(1, 1), &[3]).unwrap();
        assert_eq!(t.order(), &[0]);
        let (l, r) = node_sets(&t, 1).unwrap();
        assert_eq!(l.len(), 1);
        assert!(r.is_empty());
        assert!(node_sets(&t, 2).is_err());
        assert!(build_tree(&DMatrix::zeros(0, 0), &[]).is_err());
    }

    #[test]
    fn node_set_sizes() {
        let t = SimilarityTree::from_order(vec![2, 0, 4, 1, 3], TreeSource::Custom).unwrap();
        for l in 2..=5 {
            let (a, b) = node_sets(&t, l).unwrap();
            assert_eq!(a.union(&b).count(), 5 - l + 2);
        }
    }

    #[test]
    fn oracle_examples() {
        let t = oracle_tree(&[0.3, 0.3, 0.0, 0.0]).unwrap();
        assert!(t.order()[2..].iter().all(|&m| m >= 2));
        assert_eq!(oracle_tree(&[0.0; 5]).unwrap().order(), &[0, 1, 2, 3, 4]);
        assert_eq!(
            *oracle_tree(&[0.3, 0.0, 0.6])
                .unwrap()
                .order()
                .last()
                .unwrap(),
            1
        );
    }

    #[test]
    fn json_is_one_based() {
        let t = SimilarityTree::from_order(vec![1, 0, 2], TreeSource::Oracle).unwrap();
        let s = serde_json::to_string(&t).unwrap();
        assert_eq!(s, r#"{"order":[2,1,3],"source":"oracle"}"#);
        assert_eq!(serde_json::from_str::<SimilarityTree>(&s).unwrap(), t);
        assert!(serde_json::from_str::<SimilarityTree>(r#"{"order":[0,1]}"#).is_err());
        assert!(serde_json::from_str::<SimilarityTree>(r#"{"order":[1,1]}"#).is_err());
    }
}
