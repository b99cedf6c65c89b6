//! Compact form of the sparse and fusion penalties on the stacked parameter
//! `theta = (theta^(1), ..., theta^(M))`, each block `(mu, beta_1..beta_p)`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::crosscov::SimilarityWeights;
use crate::error::{domain, Result};

/// Weighted pairwise differences `w_mm' (e_m - e_m') (x) I_0`, keeping only
/// pairs with positive weight and only the `p` connectivity rows per pair.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionOperator {
    /// `(m, m', w_mm')` with `m < m'` and `w > 0`.
    pub pairs: Vec<(usize, usize, f64)>,
    pub rho1: f64,
    pub rho2: f64,
    pub p: usize,
    pub m: usize,
}

pub fn build_fusion_operator(
    w: &SimilarityWeights,
    rho1: f64,
    rho2: f64,
    p: usize,
) -> Result<FusionOperator> {
    if !(rho1 >= 0.0 && rho2 >= 0.0 && rho1.is_finite() && rho2.is_finite()) {
        return domain(format!(
            "tuning parameters must be nonnegative, got ({rho1}, {rho2})"
        ));
    }
    let m = w.num_experiments();
    if m == 0 || p == 0 {
        return domain("fusion operator needs M >= 1 and p >= 1");
    }
    let mut pairs = Vec::new();
    for a in 0..m {
        for b in (a + 1)..m {
            let v = w.get(a, b);
            if v > 0.0 {
                pairs.push((a, b, v));
            }
        }
    }
    Ok(FusionOperator {
        pairs,
        rho1,
        rho2,
        p,
        m,
    })
}

impl FusionOperator {
    /// No fusion at all, as for a single experiment or separate estimation.
    pub fn separate(m: usize, p: usize, rho1: f64) -> Result<Self> {
        build_fusion_operator(&SimilarityWeights::uniform(m), rho1, 0.0, p).map(|mut op| {
            op.pairs.clear();
            op
        })
    }

    pub fn block(&self) -> usize {
        self.p + 1
    }

    pub fn dim(&self) -> usize {
        self.m * (self.p + 1)
    }

    pub fn num_rows(&self) -> usize {
        self.pairs.len() * self.p
    }

    /// `D theta`.
    pub fn apply(&self, theta: &DVector<f64>) -> DVector<f64> {
        let (p, k) = (self.p, self.block());
        let mut out = DVector::zeros(self.num_rows());
        for (r, &(a, b, w)) in self.pairs.iter().enumerate() {
            for j in 0..p {
                out[r * p + j] = w * (theta[a * k + 1 + j] - theta[b * k + 1 + j]);
            }
        }
        out
    }

    /// `D' alpha`.
    pub fn apply_transpose(&self, alpha: &DVector<f64>) -> DVector<f64> {
        let (p, k) = (self.p, self.block());
        let mut out = DVector::zeros(self.dim());
        for (r, &(a, b, w)) in self.pairs.iter().enumerate() {
            for j in 0..p {
                let v = w * alpha[r * p + j];
                out[a * k + 1 + j] += v;
                out[b * k + 1 + j] -= v;
            }
        }
        out
    }

    /// `||D theta||_1`.
    pub fn fusion_norm(&self, theta: &DVector<f64>) -> f64 {
        self.apply(theta).iter().map(|v| v.abs()).sum()
    }

    /// `||Lambda theta||_1 = rho1 * sum |beta|`.
    pub fn sparse_penalty(&self, theta: &DVector<f64>) -> f64 {
        let k = self.block();
        self.rho1
            * (0..self.m)
                .map(|b| {
                    theta
                        .rows(b * k + 1, self.p)
                        .iter()
                        .map(|v| v.abs())
                        .sum::<f64>()
                })
                .sum::<f64>()
    }

    /// `||Lambda theta||_1 + ||C theta||_1` with `C = rho2 D`.
    pub fn penalty(&self, theta: &DVector<f64>) -> f64 {
        self.sparse_penalty(theta) + self.rho2 * self.fusion_norm(theta)
    }

    /// Dense `D`, mainly for checks.
    pub fn dense(&self) -> DMatrix<f64> {
        let (p, k) = (self.p, self.block());
        let mut d = DMatrix::zeros(self.num_rows(), self.dim());
        for (r, &(a, b, w)) in self.pairs.iter().enumerate() {
            for j in 0..p {
                d[(r * p + j, a * k + 1 + j)] = w;
                d[(r * p + j, b * k + 1 + j)] = -w;
            }
        }
        d
    }

    /// `Lambda_max(D'D)`: the largest eigenvalue of the `M x M` Laplacian
    /// with edge weights `w^2`.
    pub fn gram_max_eigenvalue(&self) -> f64 {
        if self.pairs.is_empty() {
            return 0.0;
        }
        let mut lap = DMatrix::<f64>::zeros(self.m, self.m);
        for &(a, b, w) in &self.pairs {
            let w2 = w * w;
            lap[(a, a)] += w2;
            lap[(b, b)] += w2;
            lap[(a, b)] -= w2;
            lap[(b, a)] -= w2;
        }
        SymmetricEigen::new(lap)
            .eigenvalues
            .iter()
            .copied()
            .fold(0.0, f64::max)
    }
}

/// `u = 4 eps / (M (M - 1))`; infinite for a single experiment.
pub fn smoothing_parameter(epsilon: f64, m: usize) -> f64 {
    if m < 2 {
        f64::INFINITY
    } else {
        4.0 * epsilon / (m * (m - 1)) as f64
    }
}

/// Huber-type smoothing of `||C theta||_1`:
/// `max_{|alpha|_inf <= 1} alpha' C theta - u/2 ||alpha||^2`, with gradient
/// `C' clip(C theta / u)`.
pub fn smoothed_fusion(theta: &DVector<f64>, op: &FusionOperator, u: f64) -> (f64, DVector<f64>) {
    if op.pairs.is_empty() || op.rho2 == 0.0 || !u.is_finite() {
        return (0.0, DVector::zeros(op.dim()));
    }
    let c = op.apply(theta) * op.rho2;
    let mut value = 0.0;
    let alpha = c.map(|v| {
        let s = v / u;
        if s.abs() >= 1.0 {
            value += v.abs() - 0.5 * u;
            s.signum()
        } else {
            value += 0.5 * v * s;
            s
        }
    });
    (value, op.apply_transpose(&alpha) * op.rho2)
}

/// `Lambda_max(Q / T) + rho2^2 Lambda_max(D'D) / u`.
pub fn lipschitz_bound(data_lipschitz: f64, op: &FusionOperator, u: f64) -> f64 {
    let fusion = if u.is_finite() && op.rho2 > 0.0 {
        op.rho2 * op.rho2 * op.gram_max_eigenvalue() / u
    } else {
        0.0
    };
    data_lipschitz + fusion
}

/// Largest eigenvalue of a symmetric PSD matrix by power iteration.
pub fn power_iteration(a: &DMatrix<f64>, max_iter: usize, tol: f64) -> f64 {
    let n = a.nrows();
    if n == 0 {
        return 0.0;
    }
    // deterministic start with no special alignment
    let mut v = DVector::from_fn(n, |i, _| 1.0 + (i as f64 * 0.618_033_988_75).fract());
    v.normalize_mut();
    let mut lambda = 0.0;
    for _ in 0..max_iter {
        let w = a * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = v.dot(&w);
        v = w / norm;
        if (next - lambda).abs() <= tol * next.abs().max(1e-300) {
            return next;
        }
        lambda = next;
    }
    lambda
}

#[cfg(test)]
mod tests {
    use super::*;

    fn weights3() -> SimilarityWeights {
        SimilarityWeights::from_matrix(&DMatrix::from_row_slice(
            3,
            3,
            &[0.0, 0.3, 0.1, 0.3, 0.0, 0.1, 0.1, 0.1, 0.0],
        ))
        .unwrap()
    }

    #[test]
    fn identical_blocks_have_zero_fusion() {
        let w =
            SimilarityWeights::from_matrix(&DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.5, 0.0]))
                .unwrap();
        let op = build_fusion_operator(&w, 0.1, 0.2, 3).unwrap();
        let th = DVector::from_vec(vec![0.1, 0.2, -0.3, 0.4, 0.7, 0.2, -0.3, 0.4]);
        assert_eq!(op.fusion_norm(&th), 0.0);
        assert!(build_fusion_operator(&w, -0.1, 0.0, 3).is_err());
    }

    #[test]
    fn mu_is_never_penalized() {
        let op = build_fusion_operator(&weights3(), 0.5, 0.7, 2).unwrap();
        let th = DVector::from_fn(9, |i, _| (i as f64 * 0.37).sin());
        let mut th2 = th.clone();
        for b in 0..3 {
            th2[b * 3] += 5.0;
        }
        assert_eq!(op.penalty(&th), op.penalty(&th2));
        assert_eq!(op.fusion_norm(&th), op.fusion_norm(&th2));
    }

    #[test]
    fn transpose_is_adjoint() {
        let op = build_fusion_operator(&weights3(), 0.5, 0.7, 4).unwrap();
        let th = DVector::from_fn(op.dim(), |i, _| (i as f64).cos());
        let al = DVector::from_fn(op.num_rows(), |i, _| (i as f64 * 1.3).sin());
        assert!((op.apply(&th).dot(&al) - th.dot(&op.apply_transpose(&al))).abs() < 1e-12);
        let d = op.dense();
        assert!((d * &th - op.apply(&th)).norm() < 1e-14);
    }

    #[test]
    fn smoothing_parameter_example() {
        assert!((smoothing_parameter(0.01, 3) - 1.0 / 150.0).abs() < 1e-15);
    }

    #[test]
    fn saturated_and_zero_smoothing() {
        let op = build_fusion_operator(&weights3(), 0.0, 2.0, 2).unwrap();
        let th = DVector::from_vec(vec![0.0, 1.0, -2.0, 0.0, 3.0, 0.5, 0.0, -1.0, 4.0]);
        let u = 1e-3;
        let (v, g) = smoothed_fusion(&th, &op, u);
        let c = op.apply(&th) * 2.0;
        assert!(c.iter().all(|x| x.abs() >= u));
        let expect = c.iter().map(|x| x.abs()).sum::<f64>() - 0.5 * u * c.len() as f64;
        assert!((v - expect).abs() < 1e-12);
        let gs = op.apply_transpose(&c.map(f64::signum)) * 2.0;
        assert!((g - gs).norm() < 1e-12);
        let (v0, g0) = smoothed_fusion(&DVector::zeros(9), &op, u);
        assert_eq!(v0, 0.0);
        assert_eq!(g0.norm(), 0.0);
    }

    #[test]
    fn lipschitz_examples() {
        let op = build_fusion_operator(&weights3(), 0.1, 0.5, 3).unwrap();
        let no_fusion = build_fusion_operator(&weights3(), 0.1, 0.0, 3).unwrap();
        assert_eq!(lipschitz_bound(2.0, &no_fusion, 1e-3), 2.0);
        let a = lipschitz_bound(2.0, &op, 1e-3) - 2.0;
        let b = lipschitz_bound(2.0, &op, 2e-3) - 2.0;
        assert!((a - 2.0 * b).abs() < 1e-9 * a);
        let d = op.dense();
        let dense = SymmetricEigen::new(d.transpose() * d).eigenvalues.max();
        assert!((op.gram_max_eigenvalue() - dense).abs() < 1e-12);
    }
}
