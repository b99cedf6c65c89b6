//! Lagged cross-correlation of binned counts, thresholding, network
//! similarity counts and the normalized fusion weights built from them.

use nalgebra::DMatrix;
use petgraph::unionfind::UnionFind;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{domain, Result};
use crate::process::{ExperimentData, MultiModel};

pub const DEFAULT_BIN_WIDTH: f64 = 1.0;
pub const DEFAULT_MAX_LAG: usize = 5;
pub const DEFAULT_PVALUE_CUTOFF: f64 = 0.1;

/// Signed lag-maximal correlations between units of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossCovMatrix {
    /// Entry `(i, j)` relates unit `i` now to unit `j` in the past.
    pub values: DMatrix<f64>,
    pub n_bins: usize,
    pub bin_width: f64,
    pub max_lag: usize,
    /// Units without count variation; their rows and columns are zero.
    pub degenerate_units: Vec<usize>,
}

/// Binned counts of every unit, `n_bins = floor(T / bin_width)`.
pub fn binned_counts(exp: &ExperimentData, bin_width: f64) -> Result<Vec<Vec<f64>>> {
    if !(bin_width.is_finite() && bin_width > 0.0) {
        return domain("bin width must be positive");
    }
    let n = (exp.horizon() / bin_width).floor() as usize;
    Ok(exp
        .streams()
        .iter()
        .map(|s| {
            let mut c = vec![0.0; n];
            for &t in s.times() {
                let b = (t / bin_width) as usize;
                if b < n {
                    c[b] += 1.0;
                }
            }
            c
        })
        .collect())
}

/// Pearson correlation of `a[h..]` with `b[..n-h]`; `None` if either side is
/// constant.
fn lagged_pearson(a: &[f64], b: &[f64], h: usize) -> Option<f64> {
    let n = a.len() - h;
    let (x, y) = (&a[h..], &b[..n]);
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for k in 0..n {
        let (dx, dy) = (x[k] - mx, y[k] - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    (sxx > 0.0 && syy > 0.0).then(|| (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

pub fn cross_covariance(
    exp: &ExperimentData,
    bin_width: f64,
    max_lag: usize,
) -> Result<CrossCovMatrix> {
    if max_lag == 0 {
        return domain("max_lag must be at least 1");
    }
    if !(bin_width.is_finite() && bin_width > 0.0) || exp.horizon() / bin_width < 8.0 {
        return domain(format!(
            "horizon {} must span at least 8 bins of width {bin_width}",
            exp.horizon()
        ));
    }
    let counts = binned_counts(exp, bin_width)?;
    let n = counts[0].len();
    if max_lag + 4 > n {
        return domain(format!("max_lag {max_lag} too large for {n} bins"));
    }
    let p = exp.num_units();
    let degenerate_units: Vec<usize> = (0..p)
        .filter(|&u| counts[u].iter().all(|&c| c == counts[u][0]))
        .collect();
    if !degenerate_units.is_empty() {
        log::warn!("units {degenerate_units:?} have constant binned counts; their correlations are set to 0");
    }
    let rows: Vec<Vec<f64>> = (0..p)
        .into_par_iter()
        .map(|i| {
            (0..p)
                .map(|j| {
                    if i == j {
                        return 0.0;
                    }
                    let mut best = 0.0f64;
                    for h in 1..=max_lag {
                        if let Some(r) = lagged_pearson(&counts[i], &counts[j], h) {
                            if r.abs() > best.abs() {
                                best = r;
                            }
                        }
                    }
                    best
                })
                .collect()
        })
        .collect();
    let values = DMatrix::from_fn(p, p, |i, j| rows[i][j]);
    Ok(CrossCovMatrix {
        values,
        n_bins: n,
        bin_width,
        max_lag,
        degenerate_units,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", content = "value", rename_all = "snake_case")]
pub enum ThresholdRule {
    /// Keep entries with `|r| > kappa`.
    Absolute(f64),
    /// Keep entries whose two-sided Fisher-z p-value is below the cutoff.
    PValue(f64),
}

impl Default for ThresholdRule {
    fn default() -> Self {
        ThresholdRule::PValue(DEFAULT_PVALUE_CUTOFF)
    }
}

impl std::str::FromStr for ThresholdRule {
    type Err = crate::Error;

    /// Parses `pvalue:<cutoff>` or `abs:<kappa>`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, value) = s.split_once(':').ok_or_else(|| {
            crate::Error::Domain(format!("rule '{s}' must look like pvalue:0.1 or abs:0.2"))
        })?;
        let v: f64 = value
            .parse()
            .map_err(|_| crate::Error::Domain(format!("rule value '{value}' is not a number")))?;
        let rule = match kind {
            "pvalue" | "p" => ThresholdRule::PValue(v),
            "abs" | "absolute" => ThresholdRule::Absolute(v),
            _ => return domain(format!("unknown threshold rule '{kind}'")),
        };
        rule.validate()?;
        Ok(rule)
    }
}

impl ThresholdRule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ThresholdRule::Absolute(k) if !(k.is_finite() && k >= 0.0) => {
                domain("kappa must be nonnegative")
            }
            ThresholdRule::PValue(c) if !(c > 0.0 && c < 1.0) => {
                domain("p-value cutoff must lie in (0, 1)")
            }
            _ => Ok(()),
        }
    }

    /// The absolute threshold equivalent to this rule for `n_bins` bins.
    pub fn kappa(&self, n_bins: usize) -> f64 {
        match *self {
            ThresholdRule::Absolute(k) => k,
            ThresholdRule::PValue(c) => {
                let z = Normal::standard().inverse_cdf(1.0 - c / 2.0);
                (z / ((n_bins as f64) - 3.0).sqrt()).tanh()
            }
        }
    }
}

/// Two-sided p-value of the Fisher transform of `r` with `n` observations.
pub fn fisher_pvalue(r: f64, n: usize) -> f64 {
    if r.abs() >= 1.0 {
        return 0.0;
    }
    let z = r.atanh() * ((n as f64) - 3.0).sqrt();
    2.0 * Normal::standard().sf(z.abs())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdedCov {
    pub values: DMatrix<f64>,
    pub rule: ThresholdRule,
}

impl ThresholdedCov {
    pub fn nnz(&self) -> usize {
        self.values.iter().filter(|v| **v != 0.0).count()
    }

    /// Undirected support edges `(i, j)`, `i < j`.
    pub fn support_edges(&self) -> Vec<(usize, usize)> {
        support_edges(&self.values)
    }
}

pub fn threshold_covariance(v: &CrossCovMatrix, rule: ThresholdRule) -> Result<ThresholdedCov> {
    rule.validate()?;
    let values = match rule {
        ThresholdRule::Absolute(k) => v.values.map(|r| if r.abs() > k { r } else { 0.0 }),
        ThresholdRule::PValue(c) => v.values.map(|r| {
            if r != 0.0 && fisher_pvalue(r, v.n_bins) < c {
                r
            } else {
                0.0
            }
        }),
    };
    Ok(ThresholdedCov { values, rule })
}

/// Number of positions where both matrices are nonzero with the same sign.
pub fn matrix_similarity(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<usize> {
    if a.shape() != b.shape() {
        return domain(format!("shapes {:?} and {:?} differ", a.shape(), b.shape()));
    }
    Ok(a.iter()
        .zip(b.iter())
        .filter(|(x, y)| **x * **y > 0.0)
        .count())
}

pub fn empirical_similarity(a: &ThresholdedCov, b: &ThresholdedCov) -> Result<usize> {
    matrix_similarity(&a.values, &b.values)
}

/// `M x M` matrix of pairwise similarity counts with a zero diagonal.
pub fn similarity_matrix(mats: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    let m = mats.len();
    let mut d = DMatrix::zeros(m, m);
    for a in 0..m {
        for b in (a + 1)..m {
            let s = matrix_similarity(&mats[a], &mats[b])? as f64;
            d[(a, b)] = s;
            d[(b, a)] = s;
        }
    }
    Ok(d)
}

/// Empirical similarity counts between thresholded covariances.
pub fn empirical_similarity_matrix(covs: &[ThresholdedCov]) -> Result<DMatrix<f64>> {
    let mats: Vec<DMatrix<f64>> = covs.iter().map(|c| c.values.clone()).collect();
    similarity_matrix(&mats)
}

/// Similarity counts between the true connectivity matrices.
pub fn oracle_similarity_matrix(model: &MultiModel) -> DMatrix<f64> {
    let mats: Vec<DMatrix<f64>> = model.experiments().iter().map(|e| e.beta.clone()).collect();
    similarity_matrix(&mats).expect("experiments share p")
}

/// Symmetric fusion weights with zero diagonal whose ordered-pair sum is 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityWeights {
    /// Row-major `M x M` matrix.
    pub w: Vec<Vec<f64>>,
}

impl SimilarityWeights {
    /// `1 / (M (M - 1))` off the diagonal.
    pub fn uniform(m: usize) -> Self {
        let v = if m > 1 {
            1.0 / (m * (m - 1)) as f64
        } else {
            0.0
        };
        Self {
            w: (0..m)
                .map(|a| (0..m).map(|b| if a == b { 0.0 } else { v }).collect())
                .collect(),
        }
    }

    /// Normalizes a nonnegative similarity matrix over ordered pairs; all
    /// zeros fall back to uniform weights.
    pub fn from_similarity(d: &DMatrix<f64>) -> Result<Self> {
        let m = d.nrows();
        if m < 2 || d.ncols() != m {
            return domain("similarity weights need a square matrix with M >= 2");
        }
        if d.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return domain("similarities must be finite and nonnegative");
        }
        let total: f64 = (0..m)
            .flat_map(|a| (0..m).filter(move |&b| b != a).map(move |b| (a, b)))
            .map(|(a, b)| d[(a, b)])
            .sum();
        if total <= 0.0 {
            return Ok(Self::uniform(m));
        }
        Ok(Self {
            w: (0..m)
                .map(|a| {
                    (0..m)
                        .map(|b| {
                            if a == b {
                                0.0
                            } else {
                                0.5 * (d[(a, b)] + d[(b, a)]) / total
                            }
                        })
                        .collect()
                })
                .collect(),
        })
    }

    pub fn from_matrix(w: &DMatrix<f64>) -> Result<Self> {
        let m = w.nrows();
        if w.ncols() != m {
            return domain("weight matrix must be square");
        }
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return domain("weights must be finite and nonnegative");
        }
        Ok(Self {
            w: (0..m)
                .map(|a| {
                    (0..m)
                        .map(|b| if a == b { 0.0 } else { w[(a, b)] })
                        .collect()
                })
                .collect(),
        })
    }

    pub fn num_experiments(&self) -> usize {
        self.w.len()
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.w[a][b]
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let m = self.w.len();
        DMatrix::from_fn(m, m, |a, b| self.w[a][b])
    }

    /// Sum over ordered pairs `a != b`.
    pub fn ordered_sum(&self) -> f64 {
        self.w
            .iter()
            .enumerate()
            .map(|(a, r)| {
                r.iter()
                    .enumerate()
                    .filter(|(b, _)| *b != a)
                    .map(|(_, v)| v)
                    .sum::<f64>()
            })
            .sum()
    }
}

pub fn similarity_weights(covs: &[ThresholdedCov]) -> Result<SimilarityWeights> {
    if covs.len() < 2 {
        return domain("similarity weights need at least two experiments");
    }
    SimilarityWeights::from_similarity(&empirical_similarity_matrix(covs)?)
}

/// Undirected support edges `(i, j)`, `i < j`, of a square matrix.
pub fn support_edges(a: &DMatrix<f64>) -> Vec<(usize, usize)> {
    let p = a.nrows();
    let mut edges = Vec::new();
    for i in 0..p {
        for j in (i + 1)..p {
            if a[(i, j)] != 0.0 || a[(j, i)] != 0.0 {
                edges.push((i, j));
            }
        }
    }
    edges
}

fn component_labels(p: usize, edges: &[(usize, usize)]) -> Vec<usize> {
    let mut uf = UnionFind::<usize>::new(p);
    for &(a, b) in edges {
        uf.union(a, b);
    }
    uf.into_labeling()
}

/// Negative variation of information between the connected-component
/// partitions of two graphs on `p` nodes.
pub fn connected_component_similarity(
    p: usize,
    g1: &[(usize, usize)],
    g2: &[(usize, usize)],
) -> Result<f64> {
    if p == 0 {
        return domain("graphs need at least one node");
    }
    if g1.iter().chain(g2).any(|&(a, b)| a >= p || b >= p) {
        return domain("edge endpoint out of range");
    }
    let (l1, l2) = (component_labels(p, g1), component_labels(p, g2));
    let mut joint = std::collections::HashMap::<(usize, usize), f64>::new();
    let mut m1 = std::collections::HashMap::<usize, f64>::new();
    let mut m2 = std::collections::HashMap::<usize, f64>::new();
    let w = 1.0 / p as f64;
    for k in 0..p {
        *joint.entry((l1[k], l2[k])).or_default() += w;
        *m1.entry(l1[k]).or_default() += w;
        *m2.entry(l2[k]).or_default() += w;
    }
    Ok(joint
        .iter()
        .map(|(&(a, b), &r)| r * ((r / m1[&a]).ln() + (r / m2[&b]).ln()))
        .sum())
}

/// Weights from connected-component similarity, shifted to be nonnegative:
/// `d = -VI + max VI`, so identical partitions receive the largest weight.
pub fn connected_component_weights(
    p: usize,
    graphs: &[Vec<(usize, usize)>],
) -> Result<SimilarityWeights> {
    let m = graphs.len();
    if m < 2 {
        return domain("similarity weights need at least two experiments");
    }
    let mut d = DMatrix::zeros(m, m);
    for a in 0..m {
        for b in (a + 1)..m {
            let v = connected_component_similarity(p, &graphs[a], &graphs[b])?;
            d[(a, b)] = v;
            d[(b, a)] = v;
        }
    }
    let worst = (0..m)
        .flat_map(|a| (0..m).filter(move |&b| b != a).map(move |b| (a, b)))
        .map(|(a, b)| d[(a, b)])
        .fold(0.0, f64::min);
    let shifted = DMatrix::from_fn(m, m, |a, b| if a == b { 0.0 } else { d[(a, b)] - worst });
    SimilarityWeights::from_similarity(&shifted)
}

/// Cross-covariances of every experiment, computed in parallel.
pub fn cross_covariances(
    exps: &[ExperimentData],
    bin_width: f64,
    max_lag: usize,
) -> Result<Vec<CrossCovMatrix>> {
    exps.par_iter()
        .map(|e| cross_covariance(e, bin_width, max_lag))
        .collect()
}

/// Cross-covariance of every experiment, thresholded by `rule`.
pub fn thresholded_covariances(
    exps: &[ExperimentData],
    bin_width: f64,
    max_lag: usize,
    rule: ThresholdRule,
) -> Result<Vec<ThresholdedCov>> {
    cross_covariances(exps, bin_width, max_lag)?
        .iter()
        .map(|c| threshold_covariance(c, rule))
        .collect()
}
