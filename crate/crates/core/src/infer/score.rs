//! De-correlated score statistics.
//!
//! For target `i`, source `j` and experiment `m`, with `theta0` the fit of
//! unit `i` with `beta_ij` set to zero and `c` the decorrelation direction of
//! column `j`, `x~_j = c' z` and
//!
//! `S = c' (gamma_i - \int z lambda0 dt) / T_m`,
//! `V = sqrt(T_m) S / sqrt(Upsilon)`.
//!
//! `Upsilon` estimates the variance rate of the martingale `\int x~_j dM_i`:
//! by default its predictable variation `\int x~_j^2 lambda0 dt / T_m` under
//! the fitted null intensity, or the realized variation
//! `sum_k x~_j(t_k-)^2 / T_m` over unit `i`'s events.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::decorrelate::{decorrelation_direction, Decorrelation};
use crate::error::{domain, Error, Result};
use crate::estimate::{FitResult, PrecomputedDesign};
use crate::process::{
    event_grams, Kernel, LikelihoodDesign, Link, Moments, MultiExperimentData, MultiModel,
    PathTable,
};

/// Estimator of the score variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScoreVariance {
    /// `\int x~^2 lambda0 dt`, with `lambda0` clamped at zero for linear links.
    #[default]
    Predictable,
    /// `sum_k x~(t_k-)^2` over the target's events.
    Realized,
}

/// Everything the score statistics need from the data.
#[derive(Debug, Clone)]
pub struct TestingDesign {
    pub moments: Vec<Moments>,
    pub paths: Vec<PathTable>,
    /// `[m][i]`: event Gram of unit `i` in experiment `m`; filled only for
    /// the realized variance.
    pub event_grams: Vec<Vec<DMatrix<f64>>>,
    pub likelihood: Option<Vec<LikelihoodDesign>>,
    pub link: Link,
    pub variance: ScoreVariance,
}

impl TestingDesign {
    pub fn build(data: &MultiExperimentData, kernel: &Kernel, link: Link) -> Result<Self> {
        Self::build_with(data, kernel, link, ScoreVariance::default())
    }

    pub fn build_with(
        data: &MultiExperimentData,
        kernel: &Kernel,
        link: Link,
        variance: ScoreVariance,
    ) -> Result<Self> {
        let design = crate::estimate::precompute_design_with(data, kernel, link, None)?;
        Self::from_design(&design, data, link, variance)
    }

    /// Reuses the moments of an estimation design.
    pub fn from_design(
        design: &PrecomputedDesign,
        data: &MultiExperimentData,
        link: Link,
        variance: ScoreVariance,
    ) -> Result<Self> {
        if link == Link::Exponential && design.likelihood.is_none() {
            return domain("the exponential link needs a design built with its quadrature grids");
        }
        let event_grams = match variance {
            ScoreVariance::Realized => data
                .experiments()
                .par_iter()
                .map(|e| event_grams(e, &design.kernel))
                .collect::<Result<Vec<_>>>()?,
            ScoreVariance::Predictable => vec![],
        };
        let paths = if link.is_linear() {
            data.experiments()
                .par_iter()
                .map(|e| PathTable::build(e, &design.kernel, None))
                .collect::<Result<Vec<_>>>()?
        } else {
            vec![]
        };
        Ok(Self {
            moments: design.moments.clone(),
            paths,
            event_grams,
            likelihood: design.likelihood.clone(),
            link,
            variance,
        })
    }

    pub fn num_units(&self) -> usize {
        self.moments[0].num_units()
    }

    pub fn num_experiments(&self) -> usize {
        self.moments.len()
    }

    /// Score vector `gamma_i - \int z lambda dt` at `theta`.
    fn score_vector(&self, m: usize, i: usize, theta: &DVector<f64>) -> Result<DVector<f64>> {
        match self.link {
            Link::Linear | Link::RectifiedLinear => {
                let mo = &self.moments[m];
                Ok(mo.gamma(i) - &mo.gram * theta)
            }
            Link::Exponential => {
                let lik = &self.likelihood.as_ref().expect("checked at construction")[m];
                Ok(-lik.evaluate(i, theta, true)?.1.expect("gradient requested"))
            }
        }
    }

    /// Metric for the decorrelation of unit `i` in experiment `m`.
    fn metric(&self, m: usize, theta: &DVector<f64>) -> DMatrix<f64> {
        match self.link {
            Link::Linear | Link::RectifiedLinear => self.moments[m].gram.clone(),
            Link::Exponential => {
                self.likelihood.as_ref().expect("checked at construction")[m].hessian(theta)
            }
        }
    }

    /// Variances of `c_j' s` for the columns `c_j` of `dirs` (target `i`).
    /// `metric` is the decorrelation metric at `theta`, used by the
    /// exponential link whose Hessian is already intensity weighted.
    fn variances(
        &self,
        m: usize,
        i: usize,
        theta: &DVector<f64>,
        dirs: &DMatrix<f64>,
        proj: Option<&DMatrix<f64>>,
        metric: &DMatrix<f64>,
    ) -> DVector<f64> {
        let quad = |g: &DMatrix<f64>| {
            DVector::from_fn(dirs.ncols(), |j, _| {
                dirs.column(j).dot(&(g * dirs.column(j)))
            })
        };
        match (self.variance, self.link) {
            (ScoreVariance::Realized, _) => quad(&self.event_grams[m][i]),
            (ScoreVariance::Predictable, Link::Exponential) => quad(metric),
            (ScoreVariance::Predictable, _) => {
                let owned;
                let proj = match proj {
                    Some(p) => p,
                    None => {
                        owned = self.paths[m].project(dirs);
                        &owned
                    }
                };
                self.paths[m].null_weighted_squares(dirs, proj, theta)
            }
        }
    }
}

/// Standardized statistics `V` and second moments `Upsilon`, each as one
/// `p x p` matrix per experiment indexed `(target, source)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreStats {
    pub v: Vec<DMatrix<f64>>,
    pub upsilon: Vec<DMatrix<f64>>,
    /// `(m, i, j)` whose statistic is undefined; their `V` is stored as 0.
    pub degenerate: Vec<(usize, usize, usize)>,
}

impl ScoreStats {
    /// Wraps precomputed statistics, with unit second moments.
    pub fn from_values(v: Vec<DMatrix<f64>>) -> Result<Self> {
        let Some(first) = v.first() else {
            return domain("statistics need at least one experiment");
        };
        let p = first.nrows();
        if v.iter().any(|x| x.nrows() != p || x.ncols() != p) {
            return domain("every experiment needs a square p x p statistic matrix");
        }
        if v.iter().any(|x| x.iter().any(|s| !s.is_finite())) {
            return domain("statistics must be finite");
        }
        let upsilon = v
            .iter()
            .map(|x| DMatrix::from_element(x.nrows(), x.ncols(), 1.0))
            .collect();
        Ok(Self {
            v,
            upsilon,
            degenerate: vec![],
        })
    }

    pub fn num_units(&self) -> usize {
        self.v[0].nrows()
    }

    pub fn num_experiments(&self) -> usize {
        self.v.len()
    }

    /// `V` of edge `j -> i` in every experiment.
    pub fn edge(&self, i: usize, j: usize) -> Vec<f64> {
        self.v.iter().map(|x| x[(i, j)]).collect()
    }
}

/// Per-experiment, per-unit parameters `theta[m][i] = (mu, beta_i)`.
pub fn fit_thetas(fit: &FitResult) -> Vec<Vec<DVector<f64>>> {
    (0..fit.num_experiments())
        .map(|m| fit.units.iter().map(|u| u.theta[m].clone()).collect())
        .collect()
}

/// `theta[m][i] = (mu_i, beta_i)` of a given model.
pub fn model_thetas(model: &MultiModel) -> Vec<Vec<DVector<f64>>> {
    model
        .experiments()
        .iter()
        .map(|e| e.units().iter().map(|u| u.theta()).collect())
        .collect()
}

/// Unpenalized least-squares fits solving `Q theta = gamma_i` for every unit
/// and experiment.
pub fn least_squares_fits(design: &TestingDesign) -> Result<Vec<Vec<DVector<f64>>>> {
    design
        .moments
        .iter()
        .map(|mo| {
            let solver = mo.gram.clone().cholesky();
            (0..mo.num_units())
                .map(|i| match &solver {
                    Some(ch) => Ok(ch.solve(&mo.gamma(i))),
                    None => {
                        let svd = mo.gram.clone().svd(true, true);
                        svd.solve(&mo.gamma(i), 1e-12 * svd.singular_values.max())
                            .map_err(|e| Error::Degenerate(format!("normal equations: {e}")))
                    }
                })
                .collect()
        })
        .collect()
}

fn check_thetas(design: &TestingDesign, thetas: &[Vec<DVector<f64>>]) -> Result<()> {
    let (p, mm) = (design.num_units(), design.num_experiments());
    if thetas.len() != mm
        || thetas
            .iter()
            .any(|t| t.len() != p || t.iter().any(|v| v.len() != p + 1))
    {
        return domain(format!(
            "fitted parameters must cover {mm} experiments of {p} units"
        ));
    }
    Ok(())
}

fn finish(
    design: &TestingDesign,
    m: usize,
    i: usize,
    j: usize,
    theta: &DVector<f64>,
    c: &DVector<f64>,
    var: f64,
) -> Result<(f64, f64)> {
    let t = design.moments[m].horizon;
    if !(var > 1e-12 * t) {
        return Err(Error::Degenerate(format!(
            "no variation for edge {} -> {} in experiment {}",
            j + 1,
            i + 1,
            m + 1
        )));
    }
    let mut theta0 = theta.clone();
    theta0[j + 1] = 0.0;
    let s = design.score_vector(m, i, &theta0)?;
    Ok((c.dot(&s) / var.sqrt(), var / t))
}

/// `(V, Upsilon)` of edge `j -> i` in experiment `m`.
pub fn score_statistic(
    design: &TestingDesign,
    thetas: &[Vec<DVector<f64>>],
    i: usize,
    j: usize,
    m: usize,
    method: Decorrelation,
) -> Result<(f64, f64)> {
    check_thetas(design, thetas)?;
    let p = design.num_units();
    if i >= p || j >= p || m >= design.num_experiments() {
        return domain("edge or experiment out of range");
    }
    let theta = &thetas[m][i];
    let metric = design.metric(m, theta);
    let c = decorrelation_direction(&metric, j + 1, design.moments[m].horizon, method)?;
    // a single column padded so that column index matches the source
    let mut dirs = DMatrix::zeros(p + 1, p);
    dirs.set_column(j, &c);
    let var = design.variances(m, i, theta, &dirs, None, &metric)[j];
    finish(design, m, i, j, theta, &c, var)
}

/// All `p^2 M` statistics. Degenerate ones are recorded and set to 0.
pub fn score_statistics(
    design: &TestingDesign,
    thetas: &[Vec<DVector<f64>>],
    method: Decorrelation,
) -> Result<ScoreStats> {
    check_thetas(design, thetas)?;
    let (p, mm) = (design.num_units(), design.num_experiments());
    let linear = design.link != Link::Exponential;
    // for linear links the directions and their path projections only depend
    // on the experiment and the source
    let shared: Vec<Option<(DMatrix<f64>, Vec<bool>, Option<DMatrix<f64>>)>> = if linear {
        (0..mm)
            .into_par_iter()
            .map(|m| {
                let (dirs, ok) =
                    directions(&design.moments[m].gram, design.moments[m].horizon, method);
                let proj = (design.variance == ScoreVariance::Predictable)
                    .then(|| design.paths[m].project(&dirs));
                Some((dirs, ok, proj))
            })
            .collect()
    } else {
        vec![None; mm]
    };
    let cells: Vec<(usize, usize)> = (0..mm).flat_map(|m| (0..p).map(move |i| (m, i))).collect();
    let rows = cells
        .par_iter()
        .map(|&(m, i)| -> Result<Vec<(f64, f64, bool)>> {
            let theta = &thetas[m][i];
            let metric = design.metric(m, theta);
            let local;
            let (dirs, ok, proj) = match &shared[m] {
                Some((d, ok, proj)) => (d, ok, proj.as_ref()),
                None => {
                    local = directions(&metric, design.moments[m].horizon, method);
                    (&local.0, &local.1, None)
                }
            };
            let vars = design.variances(m, i, theta, dirs, proj, &metric);
            (0..p)
                .map(|j| {
                    if !ok[j] {
                        return Ok((0.0, 0.0, true));
                    }
                    match finish(
                        design,
                        m,
                        i,
                        j,
                        theta,
                        &dirs.column(j).into_owned(),
                        vars[j],
                    ) {
                        Ok((v, u)) => Ok((v, u, false)),
                        Err(Error::Degenerate(_)) => Ok((0.0, 0.0, true)),
                        Err(e) => Err(e),
                    }
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut v = vec![DMatrix::zeros(p, p); mm];
    let mut upsilon = vec![DMatrix::zeros(p, p); mm];
    let mut degenerate = vec![];
    for ((m, i), row) in cells.into_iter().zip(rows) {
        for (j, (val, ups, bad)) in row.into_iter().enumerate() {
            v[m][(i, j)] = val;
            upsilon[m][(i, j)] = ups;
            if bad {
                degenerate.push((m, i, j));
            }
        }
    }
    Ok(ScoreStats {
        v,
        upsilon,
        degenerate,
    })
}

/// Decorrelation directions of every source as columns, zero where degenerate.
fn directions(
    metric: &DMatrix<f64>,
    horizon: f64,
    method: Decorrelation,
) -> (DMatrix<f64>, Vec<bool>) {
    let p = metric.nrows() - 1;
    let mut dirs = DMatrix::zeros(p + 1, p);
    let mut ok = vec![false; p];
    for j in 0..p {
        if let Ok(c) = decorrelation_direction(metric, j + 1, horizon, method) {
            dirs.set_column(j, &c);
            ok[j] = true;
        }
    }
    (dirs, ok)
}
