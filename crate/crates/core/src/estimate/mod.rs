//! Joint penalized estimation of all experiment networks.

pub mod design;
pub mod fusion;
pub mod solver;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_binomial;

pub use design::{precompute_design, precompute_design_with, PrecomputedDesign};
pub use fusion::{
    build_fusion_operator, lipschitz_bound, power_iteration, smoothed_fusion, smoothing_parameter,
    FusionOperator,
};
pub use solver::{
    effective_smoothing, penalized_objective, smooth_objective_gradient, spgd_fit_unit,
    SolverConfig, UnitFit,
};

use crate::crosscov::SimilarityWeights;
use crate::error::{domain, Error, Result};
use crate::process::{ExperimentModel, Kernel, Link, MultiModel};

/// Fits of every unit for one `(rho1, rho2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub units: Vec<UnitFit>,
    pub rho1: f64,
    pub rho2: f64,
    pub weights: SimilarityWeights,
    pub link: Link,
}

impl FitResult {
    pub fn num_units(&self) -> usize {
        self.units.len()
    }

    pub fn num_experiments(&self) -> usize {
        self.units[0].theta.len()
    }

    pub fn converged(&self) -> bool {
        self.units.iter().all(|u| u.converged)
    }

    pub fn nonconverged_units(&self) -> Vec<usize> {
        self.units
            .iter()
            .enumerate()
            .filter(|(_, u)| !u.converged)
            .map(|(i, _)| i)
            .collect()
    }

    /// Estimated `p x p` connectivity of experiment `m` (row = target).
    pub fn beta(&self, m: usize) -> DMatrix<f64> {
        let p = self.num_units();
        DMatrix::from_fn(p, p, |i, j| self.units[i].theta[m][j + 1])
    }

    pub fn mu(&self, m: usize) -> DVector<f64> {
        DVector::from_fn(self.num_units(), |i, _| self.units[i].theta[m][0])
    }

    pub fn to_model(&self, kernel: &Kernel) -> Result<MultiModel> {
        let exps = (0..self.num_experiments())
            .map(|m| ExperimentModel::new(self.mu(m), self.beta(m), kernel.clone(), self.link))
            .collect::<Result<Vec<_>>>()?;
        MultiModel::new(exps)
    }

    /// Stacked parameters of every unit, for warm starts.
    pub fn stacked(&self) -> Vec<DVector<f64>> {
        self.units.iter().map(UnitFit::stacked).collect()
    }
}

/// Solves the joint problem unit by unit; the units are fitted in parallel and
/// the result does not depend on the order.
pub fn joint_fit(
    design: &PrecomputedDesign,
    weights: &SimilarityWeights,
    rho1: f64,
    rho2: f64,
    link: Link,
    config: &SolverConfig,
) -> Result<FitResult> {
    joint_fit_from(design, weights, rho1, rho2, link, config, None)
}

/// [`joint_fit`] with per-unit warm starts.
pub fn joint_fit_from(
    design: &PrecomputedDesign,
    weights: &SimilarityWeights,
    rho1: f64,
    rho2: f64,
    link: Link,
    config: &SolverConfig,
    init: Option<&[DVector<f64>]>,
) -> Result<FitResult> {
    let p = design.num_units();
    if weights.num_experiments() != design.num_experiments() {
        return domain(format!(
            "weights are {0}x{0} but there are {1} experiments",
            weights.num_experiments(),
            design.num_experiments()
        ));
    }
    if let Some(v) = init {
        if v.len() != p {
            return domain("warm start must hold one vector per unit");
        }
    }
    let op = build_fusion_operator(weights, rho1, rho2, p)?;
    let units = (0..p)
        .into_par_iter()
        .map(|i| spgd_fit_unit(design, i, &op, link, config, init.map(|v| &v[i])))
        .collect::<Result<Vec<_>>>()?;
    let fit = FitResult {
        units,
        rho1,
        rho2,
        weights: weights.clone(),
        link,
    };
    let bad = fit.nonconverged_units();
    if !bad.is_empty() {
        log::warn!(
            "{} of {p} unit fits hit max_iter at rho1={rho1:.4e}, rho2={rho2:.4e}",
            bad.len()
        );
    }
    Ok(fit)
}

/// Per-unit, per-experiment loss used by the information criterion: the full
/// least-squares loss for linear links, the negative log-likelihood for the
/// exponential link.
pub fn unit_loss(
    design: &PrecomputedDesign,
    link: Link,
    unit: usize,
    m: usize,
    theta: &DVector<f64>,
) -> Result<f64> {
    match link {
        Link::Linear | Link::RectifiedLinear => design.moments[m].least_squares(unit, theta),
        Link::Exponential => {
            let lik = design.likelihood.as_ref().ok_or_else(|| {
                Error::Domain("design lacks quadrature grids for the exponential link".into())
            })?;
            Ok(lik[m].evaluate(unit, theta, false)?.0)
        }
    }
}

/// `sum_m sum_i 2 loss + s log T_m + 2 gamma log C(p, s)`, `s` the number of
/// nonzero coefficients of unit `i` in experiment `m`.
pub fn ebic(fit: &FitResult, design: &PrecomputedDesign, gamma: f64) -> Result<f64> {
    ebic_scaled(fit, design, gamma, LossScale::Raw)
}

/// Scale of the loss inside the information criterion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossScale {
    /// The loss as is.
    Raw,
    /// Least-squares loss divided by `2 n_i / T_m`, the quasi-likelihood
    /// scale of a point process with variance equal to its mean rate.
    /// Leaves the exponential-link likelihood unchanged.
    #[default]
    Dispersion,
}

/// [`ebic`] with the loss rescaled per unit and experiment.
pub fn ebic_scaled(
    fit: &FitResult,
    design: &PrecomputedDesign,
    gamma: f64,
    scale: LossScale,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&gamma) {
        return domain("eBIC gamma must lie in [0, 1]");
    }
    let p = design.num_units() as u64;
    let mut total = 0.0;
    for (i, u) in fit.units.iter().enumerate() {
        for (m, th) in u.theta.iter().enumerate() {
            let mo = &design.moments[m];
            let s = th.iter().skip(1).filter(|v| **v != 0.0).count() as u64;
            let mut loss = unit_loss(design, fit.link, i, m, th)?;
            if scale == LossScale::Dispersion && fit.link != Link::Exponential {
                let rate = (mo.counts[i].max(1) as f64) / mo.horizon;
                loss /= 2.0 * rate;
            }
            total += 2.0 * loss + s as f64 * mo.horizon.ln() + 2.0 * gamma * ln_binomial(p, s);
        }
    }
    Ok(total)
}

/// How `rho2` is tied to `rho1` on a tuning grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionScale {
    /// `rho2 = r * rho1` for each listed ratio `r`.
    Ratios(Vec<f64>),
    /// `rho2 = sqrt(M) * rho1`.
    SqrtM,
}

impl Default for FusionScale {
    fn default() -> Self {
        FusionScale::Ratios(vec![1.0, 10.0])
    }
}

/// `n` log-spaced `rho1` values over `[lo, hi] * max |gamma_ij| / T`, in
/// decreasing order, each paired with the `rho2` values of `scale`.
pub fn default_grid(
    design: &PrecomputedDesign,
    n: usize,
    lo: f64,
    hi: f64,
    scale: &FusionScale,
) -> Vec<(f64, f64)> {
    let top = design.gamma_scale().max(f64::MIN_POSITIVE);
    let rho1s = log_space(lo * top, hi * top, n);
    let ratios = match scale {
        FusionScale::Ratios(r) => r.clone(),
        FusionScale::SqrtM => vec![(design.num_experiments() as f64).sqrt()],
    };
    let mut grid = Vec::with_capacity(n * ratios.len());
    for r in ratios {
        for &r1 in &rho1s {
            grid.push((r1, r * r1));
        }
    }
    grid
}

/// Decreasing log-spaced values from `hi` to `lo`.
pub fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![hi],
        _ => (0..n)
            .map(|k| (hi.ln() + (lo.ln() - hi.ln()) * k as f64 / (n - 1) as f64).exp())
            .collect(),
    }
}

/// One grid point of a tuning path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TunePoint {
    pub rho1: f64,
    pub rho2: f64,
    pub ebic: f64,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct TuneResult {
    pub best: (f64, f64),
    pub fit: FitResult,
    pub path: Vec<TunePoint>,
    /// Every fit along the path, in grid order.
    pub fits: Vec<FitResult>,
}

/// Options of the tuning loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuneOptions {
    pub ebic_gamma: f64,
    /// Initialize each fit from the previous grid point.
    pub warm_start: bool,
    pub loss_scale: LossScale,
}

impl Default for TuneOptions {
    fn default() -> Self {
        Self {
            ebic_gamma: 1.0,
            warm_start: true,
            loss_scale: LossScale::Dispersion,
        }
    }
}

/// Fits every grid point and returns the eBIC minimizer. Ties go to the
/// larger `rho1`, then the larger `rho2`.
pub fn tune(
    design: &PrecomputedDesign,
    weights: &SimilarityWeights,
    grid: &[(f64, f64)],
    link: Link,
    config: &SolverConfig,
    opts: &TuneOptions,
) -> Result<TuneResult> {
    if grid.is_empty() {
        return domain("tuning grid is empty");
    }
    let mut fits = Vec::with_capacity(grid.len());
    let mut path = Vec::with_capacity(grid.len());
    let mut warm: Option<Vec<DVector<f64>>> = None;
    for &(r1, r2) in grid {
        let fit = joint_fit_from(design, weights, r1, r2, link, config, warm.as_deref())?;
        let score = ebic_scaled(&fit, design, opts.ebic_gamma, opts.loss_scale)?;
        path.push(TunePoint {
            rho1: r1,
            rho2: r2,
            ebic: score,
            converged: fit.converged(),
        });
        if opts.warm_start {
            warm = Some(fit.stacked());
        }
        fits.push(fit);
    }
    if path.iter().all(|pt| !pt.converged) {
        return Err(Error::NonConvergence(
            "no fit on the tuning grid converged".into(),
        ));
    }
    let best = select_best(&path);
    Ok(TuneResult {
        best: (path[best].rho1, path[best].rho2),
        fit: fits[best].clone(),
        path,
        fits,
    })
}

/// Index of the eBIC minimizer with the documented tie-break.
pub fn select_best(path: &[TunePoint]) -> usize {
    let mut best = 0;
    for (k, pt) in path.iter().enumerate().skip(1) {
        let b = &path[best];
        let better = pt.ebic < b.ebic
            || (pt.ebic == b.ebic && (pt.rho1 > b.rho1 || (pt.rho1 == b.rho1 && pt.rho2 > b.rho2)));
        if better {
            best = k;
        }
    }
    best
}

/// How the edge threshold `tau` follows from a fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule")]
pub enum TauRule {
    /// `tau = k rho1`.
    Multiple { k: f64 },
    /// A fixed value.
    Fixed { tau: f64 },
    /// `tau = max(k rho1, c T^(-2/5))` with `T` the total horizon.
    Rate { k: f64, c: f64 },
}

impl Default for TauRule {
    fn default() -> Self {
        TauRule::Multiple { k: 2.0 }
    }
}

impl TauRule {
    pub fn tau(&self, rho1: f64, total_horizon: f64) -> f64 {
        match *self {
            TauRule::Multiple { k } => k * rho1,
            TauRule::Fixed { tau } => tau,
            TauRule::Rate { k, c } => (k * rho1).max(c * total_horizon.powf(-0.4)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            TauRule::Multiple { k } => k >= 0.0 && k.is_finite(),
            TauRule::Fixed { tau } => tau >= 0.0 && tau.is_finite(),
            TauRule::Rate { k, c } => k >= 0.0 && c >= 0.0 && k.is_finite() && c.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            domain("threshold rule parameters must be nonnegative")
        }
    }
}

impl std::str::FromStr for TauRule {
    type Err = String;

    /// `2` or `mult:2` for `2 rho1`, `fixed:0.1`, `rate:2,1`.
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let s = s.trim();
        let num = |x: &str| {
            x.trim()
                .parse::<f64>()
                .map_err(|e| format!("bad threshold rule {s:?}: {e}"))
        };
        let rule = if let Some(v) = s.strip_prefix("fixed:") {
            TauRule::Fixed { tau: num(v)? }
        } else if let Some(v) = s.strip_prefix("rate:") {
            let (k, c) = v
                .split_once(',')
                .ok_or_else(|| format!("rate rule needs k,c in {s:?}"))?;
            TauRule::Rate {
                k: num(k)?,
                c: num(c)?,
            }
        } else {
            TauRule::Multiple {
                k: num(s.strip_prefix("mult:").unwrap_or(s))?,
            }
        };
        rule.validate().map_err(|e| e.to_string())?;
        Ok(rule)
    }
}

/// `beta_ij * 1(|beta_ij| > tau)` for every experiment.
pub fn threshold_edges(fit: &FitResult, tau: f64) -> Result<Vec<DMatrix<f64>>> {
    if !(tau >= 0.0) {
        return domain("threshold must be nonnegative");
    }
    Ok((0..fit.num_experiments())
        .map(|m| fit.beta(m).map(|b| if b.abs() > tau { b } else { 0.0 }))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::process::{ExperimentData, MultiExperimentData};
    use crate::simulate::{default_benchmark, simulate_multi};

    fn small_design() -> PrecomputedDesign {
        let model = default_benchmark(5).unwrap();
        let data = simulate_multi(&model, &[200.0, 300.0, 250.0], 3).unwrap();
        precompute_design(&data, &Kernel::exponential(1.0).unwrap()).unwrap()
    }

    #[test]
    fn unpenalized_fit_solves_normal_equations() {
        let design = small_design();
        let w = SimilarityWeights::uniform(3);
        let fit = joint_fit(
            &design,
            &w,
            0.0,
            0.0,
            Link::Linear,
            &SolverConfig {
                tol: 1e-10,
                max_iter: 100_000,
                ..Default::default()
            },
        )
        .unwrap();
        for m in 0..3 {
            let mo = &design.moments[m];
            for i in 0..5 {
                let sol = mo.gram.clone().lu().solve(&mo.gamma(i)).unwrap();
                let err = (&fit.units[i].theta[m] - sol).amax();
                assert!(err < 1e-4, "unit {i} exp {m}: {err}");
            }
        }
    }

    #[test]
    fn single_experiment_has_no_fusion() {
        let data = MultiExperimentData::new(vec![ExperimentData::from_times(
            vec![vec![1.0, 2.0], vec![1.5]],
            10.0,
        )
        .unwrap()])
        .unwrap();
        let design = precompute_design(&data, &Kernel::exponential(1.0).unwrap()).unwrap();
        let w = SimilarityWeights::uniform(1);
        let a = joint_fit(
            &design,
            &w,
            0.01,
            0.0,
            Link::Linear,
            &SolverConfig::default(),
        )
        .unwrap();
        let b = joint_fit(
            &design,
            &w,
            0.01,
            5.0,
            Link::Linear,
            &SolverConfig::default(),
        )
        .unwrap();
        assert_eq!(a.units, b.units);
    }

    #[test]
    fn threshold_examples() {
        let design = small_design();
        let fit = joint_fit(
            &design,
            &SimilarityWeights::uniform(3),
            1e-3,
            1e-3,
            Link::Linear,
            &SolverConfig::default(),
        )
        .unwrap();
        let same = threshold_edges(&fit, 0.0).unwrap();
        assert_eq!(same[1], fit.beta(1));
        let mut one = fit.clone();
        one.units[0].theta[0][1] = 0.05;
        one.units[0].theta[0][2] = 0.30;
        let t = threshold_edges(&one, 0.1).unwrap();
        assert_eq!(t[0][(0, 0)], 0.0);
        assert_eq!(t[0][(0, 1)], 0.30);
    }

    #[test]
    fn ebic_of_zero_fit() {
        let design = small_design();
        let fit = joint_fit(
            &design,
            &SimilarityWeights::uniform(3),
            1e3,
            0.0,
            Link::Linear,
            &SolverConfig::default(),
        )
        .unwrap();
        let mut zero = fit.clone();
        for u in &mut zero.units {
            for th in &mut u.theta {
                th.fill(0.0);
            }
        }
        let expect: f64 = (0..3)
            .map(|m| 2.0 * design.moments[m].counts.iter().sum::<usize>() as f64)
            .sum();
        assert!((ebic(&zero, &design, 1.0).unwrap() - expect).abs() < 1e-9);
        assert_eq!(
            ebic(&zero, &design, 0.0).unwrap(),
            ebic(&zero, &design, 1.0).unwrap()
        );
    }

    #[test]
    fn tie_break_prefers_sparser() {
        let path = vec![
            TunePoint {
                rho1: 0.1,
                rho2: 0.1,
                ebic: 5.0,
                converged: true,
            },
            TunePoint {
                rho1: 0.2,
                rho2: 0.2,
                ebic: 5.0,
                converged: true,
            },
            TunePoint {
                rho1: 0.2,
                rho2: 2.0,
                ebic: 5.0,
                converged: true,
            },
            TunePoint {
                rho1: 0.05,
                rho2: 0.5,
                ebic: 6.0,
                converged: true,
            },
        ];
        assert_eq!(select_best(&path), 2);
    }

    #[test]
    fn grid_shape() {
        let design = small_design();
        let g = default_grid(&design, 10, 1e-3, 1.0, &FusionScale::default());
        assert_eq!(g.len(), 20);
        assert!((g[0].0 - design.gamma_scale()).abs() < 1e-12);
        assert!((g[9].0 / g[0].0 - 1e-3).abs() < 1e-12);
        assert_eq!(g[10].1, 10.0 * g[10].0);
    }

    #[test]
    fn tau_rules() {
        assert_eq!(
            "3".parse::<TauRule>().unwrap(),
            TauRule::Multiple { k: 3.0 }
        );
        assert_eq!("fixed:0.1".parse::<TauRule>().unwrap().tau(5.0, 100.0), 0.1);
        let r: TauRule = "rate:2,1".parse().unwrap();
        assert!((r.tau(0.001, 1000.0) - 1000f64.powf(-0.4)).abs() < 1e-15);
        assert_eq!(r.tau(0.1, 1000.0), 0.2);
        assert!("fixed:-1".parse::<TauRule>().is_err());
        assert_eq!(TauRule::default().tau(0.05, 1.0), 0.1);
    }
}
