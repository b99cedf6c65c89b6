//! Removes from one regressor its projection on the others.
//!
//! Everything works on a Gram-type metric `G = \int z z' w dt` over
//! `z = (1, x_1, ..., x_p)`: the residual `x~_j = c' z` is described by the
//! direction `c` with `c_j = 1` and `c_{-j} = -g`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_binomial;

use crate::error::{domain, Error, Result};
use crate::process::QuadratureGrid;

/// How the regression of `x_j` on the other columns is fitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Decorrelation {
    /// Projection while `p + 1 <= 50`, lasso above.
    #[default]
    Auto,
    Projection,
    Lasso,
}

/// Largest design width handled by plain projection under `Auto`.
pub const PROJECTION_LIMIT: usize = 50;

/// Relative residual variance below which a column counts as collinear.
const DEGENERATE_TOL: f64 = 1e-9;

/// Direction `c` of the residual of column `col` (0 is the intercept) with
/// respect to `metric`. `horizon` scales the lasso objective.
pub fn decorrelation_direction(
    metric: &DMatrix<f64>,
    col: usize,
    horizon: f64,
    method: Decorrelation,
) -> Result<DVector<f64>> {
    let k = metric.nrows();
    if metric.ncols() != k || col >= k || col == 0 {
        return domain(format!(
            "column {col} is not a regressor of a {k}-column design"
        ));
    }
    if metric[(col, col)] <= 0.0 {
        return Err(Error::Degenerate(format!(
            "column {col} is identically zero"
        )));
    }
    let others: Vec<usize> = (0..k).filter(|&c| c != col).collect();
    let a = metric.select_rows(&others).select_columns(&others);
    let b = DVector::from_iterator(others.len(), others.iter().map(|&c| metric[(c, col)]));
    let use_lasso = match method {
        Decorrelation::Projection => false,
        Decorrelation::Lasso => true,
        Decorrelation::Auto => k > PROJECTION_LIMIT,
    };
    let g = if use_lasso {
        lasso_ebic(&a, &b, metric[(col, col)], horizon)?.0
    } else {
        project(&a, &b)?
    };
    finish_direction(metric, col, &others, &g)
}

/// Lasso decorrelation returning the direction and the selected penalty.
pub fn lasso_direction(
    metric: &DMatrix<f64>,
    col: usize,
    horizon: f64,
) -> Result<(DVector<f64>, f64)> {
    let k = metric.nrows();
    if metric.ncols() != k || col >= k || col == 0 {
        return domain(format!(
            "column {col} is not a regressor of a {k}-column design"
        ));
    }
    let others: Vec<usize> = (0..k).filter(|&c| c != col).collect();
    let a = metric.select_rows(&others).select_columns(&others);
    let b = DVector::from_iterator(others.len(), others.iter().map(|&c| metric[(c, col)]));
    let (g, lambda) = lasso_ebic(&a, &b, metric[(col, col)], horizon)?;
    Ok((finish_direction(metric, col, &others, &g)?, lambda))
}

fn finish_direction(
    metric: &DMatrix<f64>,
    col: usize,
    others: &[usize],
    g: &DVector<f64>,
) -> Result<DVector<f64>> {
    let k = metric.nrows();
    let mut c = DVector::zeros(k);
    c[col] = 1.0;
    for (r, &o) in others.iter().enumerate() {
        c[o] = -g[r];
    }
    let resid = c.dot(&(metric * &c));
    if resid <= DEGENERATE_TOL * metric[(col, col)] {
        return Err(Error::Degenerate(format!(
            "column {col} is collinear with the others"
        )));
    }
    Ok(c)
}

fn project(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if let Some(ch) = a.clone().cholesky() {
        return Ok(ch.solve(b));
    }
    // rank-deficient nuisance columns: minimum-norm least squares
    let svd = a.clone().svd(true, true);
    svd.solve(b, 1e-12 * svd.singular_values.max())
        .map_err(|e| Error::Degenerate(format!("projection failed: {e}")))
}

/// Lasso regression in the metric, `1/(2T) (g'Ag - 2 g'b) + lambda |g_{1..}|_1`
/// with the intercept (index 0) unpenalized; `lambda` picked by eBIC over a
/// 10-point log grid.
fn lasso_ebic(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    bb: f64,
    horizon: f64,
) -> Result<(DVector<f64>, f64)> {
    let n = a.nrows();
    let t = horizon.max(f64::MIN_POSITIVE);
    let g0 = if a[(0, 0)] > 0.0 {
        b[0] / a[(0, 0)]
    } else {
        0.0
    };
    let lambda_max = (1..n)
        .map(|r| (b[r] - a[(r, 0)] * g0).abs())
        .fold(0.0, f64::max)
        / t;
    let mut g = DVector::zeros(n);
    let mut best: Option<(f64, DVector<f64>, f64)> = None;
    let p = (n - 1) as u64;
    if lambda_max <= 0.0 {
        g[0] = g0;
        return Ok((g, 0.0));
    }
    for lambda in crate::estimate::log_space(1e-3 * lambda_max, lambda_max, 10) {
        coordinate_descent(a, b, t, lambda, &mut g);
        let rss = (bb - 2.0 * g.dot(b) + g.dot(&(a * &g))).max(1e-300);
        let s = g.iter().skip(1).filter(|v| **v != 0.0).count() as u64;
        let score = t * (rss / t).ln() + s as f64 * t.ln() + 2.0 * ln_binomial(p, s);
        if best.as_ref().is_none_or(|(b, _, _)| score < *b) {
            best = Some((score, g.clone(), lambda));
        }
    }
    let (_, g, lambda) = best.expect("grid is nonempty");
    Ok((g, lambda))
}

fn coordinate_descent(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    t: f64,
    lambda: f64,
    g: &mut DVector<f64>,
) {
    let n = a.nrows();
    let mut ag = a * &*g;
    for _ in 0..1000 {
        let mut change = 0.0f64;
        for r in 0..n {
            let arr = a[(r, r)];
            if arr <= 0.0 {
                continue;
            }
            let rho = b[r] - (ag[r] - arr * g[r]);
            let new = if r == 0 {
                rho / arr
            } else {
                let thr = lambda * t;
                rho.signum() * (rho.abs() - thr).max(0.0) / arr
            };
            let d = new - g[r];
            if d != 0.0 {
                for q in 0..n {
                    ag[q] += a[(q, r)] * d;
                }
                g[r] = new;
                change = change.max(d.abs() * arr.sqrt());
            }
        }
        if change < 1e-10 {
            break;
        }
    }
}

/// Residual of unit `j`'s regressor on the quadrature nodes of `grid`, after
/// removing its projection on the intercept and the other units.
pub fn decorrelate(grid: &QuadratureGrid, j: usize, method: Decorrelation) -> Result<DVector<f64>> {
    let horizon = grid.weights.sum();
    let c = decorrelation_direction(&grid.gram(), j + 1, horizon, method)?;
    Ok(&grid.z * c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orthogonal_columns_only_lose_their_mean() {
        // metric of z = (1, x1, x2) with x1, x2 orthogonal after centering
        let m = DMatrix::from_row_slice(3, 3, &[10.0, 5.0, 3.0, 5.0, 4.0, 1.5, 3.0, 1.5, 2.0]);
        let c = decorrelation_direction(&m, 1, 10.0, Decorrelation::Projection).unwrap();
        assert!((c[0] + 0.5).abs() < 1e-12);
        assert!(c[2].abs() < 1e-12);
    }

    #[test]
    fn duplicated_column_is_degenerate() {
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 2.0, 2.0, 2.0, 3.0, 3.0, 2.0, 3.0, 3.0]);
        assert!(matches!(
            decorrelation_direction(&m, 1, 4.0, Decorrelation::Projection),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn lasso_kkt() {
        // random PSD metric with an intercept row
        let n = 8;
        let x = DMatrix::from_fn(200, n, |r, c| {
            if c == 0 {
                1.0
            } else {
                ((r * 7 + c * 13) as f64 * 0.37).sin() + 0.1 * c as f64
            }
        });
        let m = x.transpose() * &x;
        let (c, lambda) = lasso_direction(&m, 3, 200.0).unwrap();
        let r = &m * &c;
        for k in 1..n {
            if k != 3 && c[k] != 0.0 {
                assert!(
                    r[k].abs() / 200.0 <= 10.0 * lambda,
                    "{} vs {lambda}",
                    r[k] / 200.0
                );
            }
        }
        assert!(r[0].abs() < 1e-6 * m[(0, 0)]);
    }

    #[test]
    fn projection_residual_is_orthogonal() {
        let x = DMatrix::from_fn(50, 4, |r, c| {
            if c == 0 {
                1.0
            } else {
                ((r + 1) as f64 * (c as f64 + 0.3)).cos()
            }
        });
        let m = x.transpose() * &x;
        let c = decorrelation_direction(&m, 2, 50.0, Decorrelation::Projection).unwrap();
        let r = &m * &c;
        for k in [0, 1, 3] {
            assert!(r[k].abs() < 1e-9);
        }
    }
}
