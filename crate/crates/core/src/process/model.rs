//! Parameters of multi-experiment Hawkes models.

use nalgebra::{DMatrix, DVector};

use super::kernel::{Kernel, Link};
use crate::error::{domain, Error, Result};

/// Background rate and incoming connectivity of one unit.
///
/// `beta[j]` is the effect of unit `j`'s past events on this unit.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitParams {
    pub mu: f64,
    pub beta: DVector<f64>,
}

impl UnitParams {
    pub fn new(mu: f64, beta: Vec<f64>) -> Self {
        Self {
            mu,
            beta: DVector::from_vec(beta),
        }
    }

    /// `(mu, beta)` stacked into one vector of length `p + 1`.
    pub fn theta(&self) -> DVector<f64> {
        let mut th = DVector::zeros(self.beta.len() + 1);
        th[0] = self.mu;
        th.rows_mut(1, self.beta.len()).copy_from(&self.beta);
        th
    }

    pub fn from_theta(theta: &DVector<f64>) -> Self {
        Self {
            mu: theta[0],
            beta: theta.rows(1, theta.len() - 1).into_owned(),
        }
    }

    pub fn linear_predictor(&self, x: &[f64]) -> f64 {
        self.mu + self.beta.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }
}

/// Intensity `g(mu + x' beta)` of one unit given the integrated process `x`.
pub fn intensity(params: &UnitParams, x: &[f64], link: Link) -> Result<f64> {
    if x.len() != params.beta.len() {
        return domain(format!(
            "x has length {} but beta has length {}",
            x.len(),
            params.beta.len()
        ));
    }
    if !params.mu.is_finite() || x.iter().chain(params.beta.iter()).any(|v| !v.is_finite()) {
        return domain("intensity inputs must be finite");
    }
    link.apply(params.linear_predictor(x))
}

/// One experiment's parameters: `mu` per unit and the `p x p` matrix whose
/// row `i` holds unit `i`'s incoming coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentModel {
    pub mu: DVector<f64>,
    pub beta: DMatrix<f64>,
    pub kernel: Kernel,
    pub link: Link,
}

impl ExperimentModel {
    pub fn new(mu: DVector<f64>, beta: DMatrix<f64>, kernel: Kernel, link: Link) -> Result<Self> {
        let p = mu.len();
        if p == 0 || beta.nrows() != p || beta.ncols() != p {
            return domain(format!(
                "beta must be {p}x{p}, got {}x{}",
                beta.nrows(),
                beta.ncols()
            ));
        }
        kernel.validate()?;
        Ok(Self {
            mu,
            beta,
            kernel,
            link,
        })
    }

    pub fn num_units(&self) -> usize {
        self.mu.len()
    }

    pub fn unit(&self, i: usize) -> UnitParams {
        UnitParams {
            mu: self.mu[i],
            beta: self.beta.row(i).transpose(),
        }
    }

    pub fn units(&self) -> Vec<UnitParams> {
        (0..self.num_units()).map(|i| self.unit(i)).collect()
    }

    /// `Omega_ij = |beta_ij| * \int |kappa|`; the stability surrogate is its
    /// largest row sum.
    pub fn max_row_flow(&self) -> f64 {
        let k = self.kernel.abs_integral();
        self.beta
            .row_iter()
            .map(|r| r.iter().map(|b| b.abs()).sum::<f64>() * k)
            .fold(0.0, f64::max)
    }

    pub fn check_stable(&self) -> Result<()> {
        let row_sum = self.max_row_flow();
        if self.link.is_linear() && row_sum >= 1.0 {
            return Err(Error::Unstable { row_sum });
        }
        Ok(())
    }

    /// Directed edges `(target, source)` with nonzero coefficient.
    pub fn edge_count(&self) -> usize {
        self.beta.iter().filter(|b| **b != 0.0).count()
    }
}

/// Per-experiment models sharing the unit set.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiModel {
    experiments: Vec<ExperimentModel>,
}

impl MultiModel {
    pub fn new(experiments: Vec<ExperimentModel>) -> Result<Self> {
        let Some(first) = experiments.first() else {
            return domain("a model needs at least one experiment");
        };
        let p = first.num_units();
        if experiments.iter().any(|e| e.num_units() != p) {
            return domain("all experiments must have the same number of units");
        }
        Ok(Self { experiments })
    }

    pub fn experiments(&self) -> &[ExperimentModel] {
        &self.experiments
    }

    pub fn experiment(&self, m: usize) -> &ExperimentModel {
        &self.experiments[m]
    }

    pub fn num_experiments(&self) -> usize {
        self.experiments.len()
    }

    pub fn num_units(&self) -> usize {
        self.experiments[0].num_units()
    }

    /// Coefficients of edge `(i, j)` across experiments.
    pub fn edge_profile(&self, i: usize, j: usize) -> Vec<f64> {
        self.experiments.iter().map(|e| e.beta[(i, j)]).collect()
    }

    pub fn check_stable(&self) -> Result<()> {
        self.experiments
            .iter()
            .try_for_each(ExperimentModel::check_stable)
    }
}
