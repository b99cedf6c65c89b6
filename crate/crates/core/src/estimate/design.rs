use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{domain, Result};
use crate::process::{Kernel, LikelihoodDesign, Link, Moments, MultiExperimentData};

/// Sufficient statistics of every experiment, shared by all unit fits.
#[derive(Debug, Clone)]
pub struct PrecomputedDesign {
    pub moments: Vec<Moments>,
    /// Quadrature designs for the exponential link, if built.
    pub likelihood: Option<Vec<LikelihoodDesign>>,
    pub kernel: Kernel,
    /// `T = sum_m T_m`.
    pub total_horizon: f64,
    /// Largest eigenvalue of each `Q^(m)`.
    pub max_eigenvalues: Vec<f64>,
}

/// `Q^(m)` and `gamma_i^(m)` for every experiment. Exact for exponential
/// kernels, trapezoidal quadrature otherwise.
pub fn precompute_design(data: &MultiExperimentData, kernel: &Kernel) -> Result<PrecomputedDesign> {
    precompute_design_with(data, kernel, Link::Linear, None)
}

/// As [`precompute_design`]; for the exponential link also builds the
/// quadrature grids with step `step` (default `0.1 / rate`).
pub fn precompute_design_with(
    data: &MultiExperimentData,
    kernel: &Kernel,
    link: Link,
    step: Option<f64>,
) -> Result<PrecomputedDesign> {
    let moments = data
        .experiments()
        .par_iter()
        .map(|e| Moments::compute_with_step(e, kernel, step))
        .collect::<Result<Vec<_>>>()?;
    let mut max_eigenvalues = Vec::with_capacity(moments.len());
    for (m, mo) in moments.iter().enumerate() {
        let eig = SymmetricEigen::new(mo.gram.clone()).eigenvalues;
        let (lo, hi) = eig
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
                (a.min(v), b.max(v))
            });
        if lo < -1e-8 * hi.max(1.0) {
            return domain(format!(
                "Gram matrix of experiment {} is not PSD (min eigenvalue {lo})",
                m + 1
            ));
        }
        max_eigenvalues.push(hi);
    }
    let likelihood = if link == Link::Exponential {
        Some(
            data.experiments()
                .par_iter()
                .map(|e| LikelihoodDesign::build(e, kernel, step))
                .collect::<Result<Vec<_>>>()?,
        )
    } else {
        None
    };
    Ok(PrecomputedDesign {
        moments,
        likelihood,
        kernel: kernel.clone(),
        total_horizon: data.total_horizon(),
        max_eigenvalues,
    })
}

impl PrecomputedDesign {
    pub fn num_units(&self) -> usize {
        self.moments[0].num_units()
    }

    pub fn num_experiments(&self) -> usize {
        self.moments.len()
    }

    pub fn horizons(&self) -> Vec<f64> {
        self.moments.iter().map(|m| m.horizon).collect()
    }

    /// `Lambda_max(blockdiag Q^(m)) / T`.
    pub fn data_lipschitz(&self) -> f64 {
        self.max_eigenvalues.iter().copied().fold(0.0, f64::max) / self.total_horizon
    }

    /// `max_{m, i, j >= 1} |gamma_ij^(m)| / T`, the scale of the tuning grid.
    pub fn gamma_scale(&self) -> f64 {
        let mut best = 0.0f64;
        for mo in &self.moments {
            for i in 0..mo.num_units() {
                for j in 1..mo.cross.ncols() {
                    best = best.max(mo.cross[(i, j)].abs());
                }
            }
        }
        best / self.total_horizon
    }

    /// Block-diagonal Gram matrix over experiments.
    pub fn block_gram(&self) -> DMatrix<f64> {
        let k = self.moments[0].gram.nrows();
        let m = self.moments.len();
        let mut q = DMatrix::zeros(k * m, k * m);
        for (b, mo) in self.moments.iter().enumerate() {
            q.view_mut((b * k, b * k), (k, k)).copy_from(&mo.gram);
        }
        q
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::process::ExperimentData;

    #[test]
    fn empty_design() {
        let d = MultiExperimentData::new(vec![
            ExperimentData::empty(2, 4.0).unwrap(),
            ExperimentData::empty(2, 6.0).unwrap(),
        ])
        .unwrap();
        let des = precompute_design(&d, &Kernel::exponential(1.0).unwrap()).unwrap();
        assert_eq!(des.moments[0].gram[(0, 0)], 4.0);
        assert_eq!(des.moments[1].gram[(0, 0)], 6.0);
        assert_eq!(des.moments[1].gram.iter().filter(|v| **v != 0.0).count(), 1);
        assert_eq!(des.total_horizon, 10.0);
        assert_eq!(des.gamma_scale(), 0.0);
    }
}
