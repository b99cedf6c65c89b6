//! Sufficient statistics and per-unit losses.
//!
//! With `z(t) = (1, x(t))` and `theta = (mu, beta)`, the least-squares loss
//! `\int lambda^2 dt - 2 \int lambda dN + \int dN` reduces to
//! `theta' Q theta - 2 theta' gamma + n` where `Q = \int z z' dt`,
//! `gamma = sum_k z(t_k-)` over the unit's events and `n` the event count.

use nalgebra::{DMatrix, DVector};

use super::events::ExperimentData;
use super::integrate::{decay_integral, event_regressors, walk_exponential, QuadratureGrid};
use super::kernel::Kernel;
use super::model::UnitParams;
use crate::error::{domain, Error, Result};

/// Gram matrix, per-unit cross moments and counts of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    /// `Q = \int z z' dt`, `(p+1) x (p+1)`.
    pub gram: DMatrix<f64>,
    /// Row `i` is `gamma_i`, the sum of `z(t-)` over unit `i`'s events.
    pub cross: DMatrix<f64>,
    pub counts: Vec<usize>,
    pub horizon: f64,
}

impl Moments {
    /// Exact for exponential kernels; trapezoidal quadrature with the default
    /// step otherwise.
    pub fn compute(exp: &ExperimentData, kernel: &Kernel) -> Result<Self> {
        Self::compute_with_step(exp, kernel, None)
    }

    /// As [`Moments::compute`], with an explicit quadrature step for kernels
    /// that need one. The step is ignored for exponential kernels.
    pub fn compute_with_step(
        exp: &ExperimentData,
        kernel: &Kernel,
        step: Option<f64>,
    ) -> Result<Self> {
        kernel.validate()?;
        let p = exp.num_units();
        let counts: Vec<usize> = exp.streams().iter().map(|s| s.len()).collect();
        let (gram, cross) = match kernel {
            Kernel::Exponential { rate } => exponential_moments(exp, *rate),
            Kernel::Tabulated { .. } => {
                let step = step.unwrap_or_else(|| QuadratureGrid::default_step(exp));
                let grid = QuadratureGrid::build(exp, kernel, step)?;
                let mut cross = DMatrix::zeros(p, p + 1);
                for i in 0..p {
                    let z = event_regressors(exp, kernel, i)?;
                    for (c, col) in z.column_iter().enumerate() {
                        cross[(i, c)] = col.sum();
                    }
                }
                (grid.gram(), cross)
            }
        };
        Ok(Self {
            gram,
            cross,
            counts,
            horizon: exp.horizon(),
        })
    }

    pub fn num_units(&self) -> usize {
        self.counts.len()
    }

    pub fn gamma(&self, i: usize) -> DVector<f64> {
        self.cross.row(i).transpose()
    }

    /// `theta' Q theta - 2 theta' gamma_i + n_i`.
    pub fn least_squares(&self, i: usize, theta: &DVector<f64>) -> Result<f64> {
        self.check(i, theta)?;
        let q = theta.dot(&(&self.gram * theta));
        let g = self.cross.row(i).transpose().dot(theta);
        Ok(q - 2.0 * g + self.counts[i] as f64)
    }

    /// Gradient of [`Moments::least_squares`]: `2 (Q theta - gamma_i)`.
    pub fn least_squares_gradient(&self, i: usize, theta: &DVector<f64>) -> Result<DVector<f64>> {
        self.check(i, theta)?;
        Ok((&self.gram * theta - self.gamma(i)) * 2.0)
    }

    fn check(&self, i: usize, theta: &DVector<f64>) -> Result<()> {
        if i >= self.num_units() {
            return domain(format!(
                "unit {i} out of range for {} units",
                self.num_units()
            ));
        }
        if theta.len() != self.gram.nrows() {
            return domain(format!(
                "theta has length {} but the design has {}",
                theta.len(),
                self.gram.nrows()
            ));
        }
        Ok(())
    }
}

fn exponential_moments(exp: &ExperimentData, rate: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let p = exp.num_units();
    let mut gram = DMatrix::zeros(p + 1, p + 1);
    let mut cross = DMatrix::zeros(p, p + 1);
    walk_exponential(
        exp,
        rate,
        |_, units, x| {
            for &u in units {
                cross[(u, 0)] += 1.0;
                for j in 0..p {
                    cross[(u, j + 1)] += x[j];
                }
            }
        },
        |seg| {
            let d1 = decay_integral(rate, 1.0, seg.len);
            let d2 = decay_integral(rate, 2.0, seg.len);
            gram[(0, 0)] += seg.len;
            for j in 0..p {
                let xj = seg.x0[j];
                if xj == 0.0 {
                    continue;
                }
                gram[(0, j + 1)] += xj * d1;
                let s = xj * d2;
                for l in j..p {
                    gram[(j + 1, l + 1)] += s * seg.x0[l];
                }
            }
        },
    );
    for j in 0..=p {
        for l in 0..j {
            gram[(j, l)] = gram[(l, j)];
        }
    }
    (gram, cross)
}

/// Quadrature grid plus cross moments for the exponential-link likelihood.
#[derive(Debug, Clone)]
pub struct LikelihoodDesign {
    pub grid: QuadratureGrid,
    /// Row `i` is `gamma_i`, as in [`Moments::cross`].
    pub cross: DMatrix<f64>,
    pub horizon: f64,
}

impl LikelihoodDesign {
    /// Default step: `0.1 / rate` for exponential kernels, otherwise the
    /// quadrature default.
    pub fn build(exp: &ExperimentData, kernel: &Kernel, step: Option<f64>) -> Result<Self> {
        let step = step.unwrap_or_else(|| match kernel {
            Kernel::Exponential { rate } => 0.1 / rate,
            Kernel::Tabulated { .. } => QuadratureGrid::default_step(exp),
        });
        let grid = QuadratureGrid::build(exp, kernel, step)?;
        let cross = match kernel {
            Kernel::Exponential { rate } => exponential_moments_cross(exp, *rate),
            Kernel::Tabulated { .. } => Moments::compute_with_step(exp, kernel, Some(step))?.cross,
        };
        Ok(Self {
            grid,
            cross,
            horizon: exp.horizon(),
        })
    }

    /// `\int exp(theta' z) dt - theta' gamma_i` and, if requested, its gradient
    /// `\int exp(theta' z) z dt - gamma_i`.
    pub fn evaluate(
        &self,
        i: usize,
        theta: &DVector<f64>,
        with_grad: bool,
    ) -> Result<(f64, Option<DVector<f64>>)> {
        if theta.len() != self.grid.z.ncols() || i >= self.cross.nrows() {
            return domain("theta or unit does not match the likelihood design");
        }
        let eta = &self.grid.z * theta;
        let mut w = DVector::zeros(eta.len());
        let mut integral = 0.0;
        for k in 0..eta.len() {
            let v = eta[k].exp();
            if !v.is_finite() {
                return Err(Error::Overflow(format!(
                    "exp({}) on the quadrature grid",
                    eta[k]
                )));
            }
            w[k] = v * self.grid.weights[k];
            integral += w[k];
        }
        let gamma = self.cross.row(i).transpose();
        let value = integral - theta.dot(&gamma);
        let grad = with_grad.then(|| self.grid.z.transpose() * &w - gamma);
        Ok((value, grad))
    }

    /// `\int exp(theta' z) z z' dt`, the Hessian of the loss.
    pub fn hessian(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        let eta = &self.grid.z * theta;
        let mut wz = self.grid.z.clone();
        for (k, mut row) in wz.row_iter_mut().enumerate() {
            row *= eta[k].exp() * self.grid.weights[k];
        }
        self.grid.z.transpose() * wz
    }
}

fn exponential_moments_cross(exp: &ExperimentData, rate: f64) -> DMatrix<f64> {
    let p = exp.num_units();
    let mut cross = DMatrix::zeros(p, p + 1);
    walk_exponential(
        exp,
        rate,
        |_, units, x| {
            for &u in units {
                cross[(u, 0)] += 1.0;
                for j in 0..p {
                    cross[(u, j + 1)] += x[j];
                }
            }
        },
        |_| {},
    );
    cross
}

/// `sum_k z(t_k-) z(t_k-)'` over the events of each unit.
pub fn event_grams(exp: &ExperimentData, kernel: &Kernel) -> Result<Vec<DMatrix<f64>>> {
    kernel.validate()?;
    let p = exp.num_units();
    let mut out = vec![DMatrix::zeros(p + 1, p + 1); p];
    match kernel {
        Kernel::Exponential { rate } => {
            let mut z = DVector::zeros(p + 1);
            z[0] = 1.0;
            walk_exponential(
                exp,
                *rate,
                |_, units, x| {
                    z.rows_mut(1, p).copy_from(x);
                    for &u in units {
                        out[u].ger(1.0, &z, &z, 1.0);
                    }
                },
                |_| {},
            );
        }
        Kernel::Tabulated { .. } => {
            for (i, g) in out.iter_mut().enumerate() {
                let z = event_regressors(exp, kernel, i)?;
                *g = z.transpose() * z;
            }
        }
    }
    Ok(out)
}

/// Least-squares loss `theta' Q theta - 2 theta' gamma_i + n_i` of one unit.
pub fn least_squares_loss(
    exp: &ExperimentData,
    unit: usize,
    params: &UnitParams,
    kernel: &Kernel,
) -> Result<f64> {
    if params.beta.len() != exp.num_units() {
        return domain("parameter dimension does not match the number of units");
    }
    Moments::compute(exp, kernel)?.least_squares(unit, &params.theta())
}

/// Negative log-likelihood `-\int log lambda dN + \int lambda dt` under the
/// exponential link.
pub fn negloglik_loss(
    exp: &ExperimentData,
    unit: usize,
    params: &UnitParams,
    kernel: &Kernel,
) -> Result<f64> {
    negloglik_with_gradient(exp, unit, params, kernel).map(|(v, _)| v)
}

/// [`negloglik_loss`] together with its gradient in `theta = (mu, beta)`.
pub fn negloglik_with_gradient(
    exp: &ExperimentData,
    unit: usize,
    params: &UnitParams,
    kernel: &Kernel,
) -> Result<(f64, DVector<f64>)> {
    if params.beta.len() != exp.num_units() {
        return domain("parameter dimension does not match the number of units");
    }
    let design = LikelihoodDesign::build(exp, kernel, None)?;
    let (v, g) = design.evaluate(unit, &params.theta(), true)?;
    Ok((v, g.expect("gradient requested")))
}
