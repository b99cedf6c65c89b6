//! Smoothing proximal gradient descent for one unit.
//!
//! Minimizes `h(theta) + ||Lambda theta||_1` where `h` is the data term
//! `(1/T) sum_m loss_m(theta^(m))` plus the smoothed fusion penalty. The
//! iteration is FISTA with momentum `delta_t = 2 / (t + 3)`. A candidate that
//! would raise the objective is kept aside and the momentum restarted, so the
//! recorded objective never increases.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::design::PrecomputedDesign;
use super::fusion::{lipschitz_bound, smoothed_fusion, smoothing_parameter, FusionOperator};
use crate::error::{domain, Error, Result};
use crate::process::Link;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Smoothing accuracy; `u = 4 eps' / (M (M - 1))` with
    /// `eps' = eps * max(1, ||C theta^0||_1)`.
    pub epsilon: f64,
    pub max_iter: usize,
    /// Relative parameter change that ends the iteration.
    pub tol: f64,
    /// Below this smoothing parameter the fixed step is replaced by
    /// backtracking.
    pub min_fixed_u: f64,
    /// Force backtracking regardless of link and `u`.
    pub backtracking: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-3,
            max_iter: 10_000,
            tol: 1e-6,
            min_fixed_u: 1e-6,
            backtracking: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.tol > 0.0 && self.max_iter > 0 && self.min_fixed_u >= 0.0) {
            return domain("solver epsilon, tol and max_iter must be positive");
        }
        Ok(())
    }
}

/// Fitted parameters of one unit across experiments.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitFit {
    /// `theta^(m) = (mu, beta)` per experiment.
    pub theta: Vec<DVector<f64>>,
    /// Smoothed objective after each iteration.
    pub objective: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl UnitFit {
    pub fn stacked(&self) -> DVector<f64> {
        let k = self.theta[0].len();
        DVector::from_fn(k * self.theta.len(), |r, _| self.theta[r / k][r % k])
    }
}

/// The data part of the objective for unit `i`.
pub(crate) struct DataTerm<'a> {
    design: &'a PrecomputedDesign,
    unit: usize,
    link: Link,
}

impl<'a> DataTerm<'a> {
    pub(crate) fn new(design: &'a PrecomputedDesign, unit: usize, link: Link) -> Result<Self> {
        if unit >= design.num_units() {
            return domain(format!("unit {unit} out of range"));
        }
        if link == Link::Exponential && design.likelihood.is_none() {
            return domain("the exponential link needs a design built with its quadrature grids");
        }
        Ok(Self { design, unit, link })
    }

    fn affine_gradient(&self) -> bool {
        self.link != Link::Exponential
    }

    /// `(1/T) sum_m loss_m` and its gradient. The least-squares loss carries
    /// a factor 1/2 so that the gradient is `(Q theta - gamma) / T`.
    pub(crate) fn eval(&self, theta: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        let d = self.design;
        let k = d.num_units() + 1;
        let t = d.total_horizon;
        let mut grad = DVector::zeros(theta.len());
        let mut value = 0.0;
        for m in 0..d.num_experiments() {
            let th = theta.rows(m * k, k).into_owned();
            match self.link {
                Link::Linear | Link::RectifiedLinear => {
                    let mo = &d.moments[m];
                    let q = &mo.gram * &th;
                    let g = mo.cross.row(self.unit).transpose();
                    value += 0.5 * (th.dot(&q) - 2.0 * th.dot(&g) + mo.counts[self.unit] as f64);
                    grad.rows_mut(m * k, k).copy_from(&((q - g) / t));
                }
                Link::Exponential => {
                    let lik = &d.likelihood.as_ref().expect("checked in new")[m];
                    let (v, g) = lik.evaluate(self.unit, &th, true)?;
                    value += v;
                    grad.rows_mut(m * k, k)
                        .copy_from(&(g.expect("gradient requested") / t));
                }
            }
        }
        Ok((value / t, grad))
    }
}

/// Soft-thresholds the `beta` coordinates of every block by `thr`.
fn prox(v: &DVector<f64>, k: usize, thr: f64) -> DVector<f64> {
    DVector::from_fn(v.len(), |r, _| {
        let x = v[r];
        if r % k == 0 || thr == 0.0 {
            x
        } else {
            x.signum() * (x.abs() - thr).max(0.0)
        }
    })
}

/// Smoothing parameter used for a fit started from `theta0`.
pub fn effective_smoothing(
    op: &FusionOperator,
    theta0: &DVector<f64>,
    config: &SolverConfig,
) -> f64 {
    let scale = (op.rho2 * op.fusion_norm(theta0)).max(1.0);
    smoothing_parameter(config.epsilon * scale, op.m)
}

/// Fits unit `unit` by FISTA, starting from `init` (zeros by default).
pub fn spgd_fit_unit(
    design: &PrecomputedDesign,
    unit: usize,
    op: &FusionOperator,
    link: Link,
    config: &SolverConfig,
    init: Option<&DVector<f64>>,
) -> Result<UnitFit> {
    config.validate()?;
    let data = DataTerm::new(design, unit, link)?;
    let k = design.num_units() + 1;
    let dim = k * design.num_experiments();
    if op.dim() != dim {
        return domain(format!(
            "fusion operator has dimension {} but the design needs {dim}",
            op.dim()
        ));
    }
    let x0 = match init {
        Some(v) if v.len() == dim => v.clone(),
        Some(v) => {
            return domain(format!(
                "initial value has length {} instead of {dim}",
                v.len()
            ))
        }
        None => DVector::zeros(dim),
    };
    let u = effective_smoothing(op, &x0, config);
    let backtrack = config.backtracking || link == Link::Exponential || u < config.min_fixed_u;
    let mut lip = lipschitz_bound(design.data_lipschitz(), op, u).max(1e-12);

    let smooth = |th: &DVector<f64>| -> Result<(f64, DVector<f64>, DVector<f64>)> {
        let (v, g) = data.eval(th)?;
        let (fv, fg) = smoothed_fusion(th, op, u);
        Ok((v + fv, g, fg))
    };
    let objective = |h: f64, th: &DVector<f64>| h + op.sparse_penalty(th);

    let (h0, gd0, gf0) = smooth(&x0)?;
    let mut x = x0.clone();
    let mut fx = objective(h0, &x);
    if !fx.is_finite() {
        return Err(Error::Overflow(format!(
            "objective is not finite at the starting point of unit {unit}"
        )));
    }
    let mut gdx = gd0.clone();
    let mut w = x0;
    let mut hw = h0;
    let mut gdw = gd0;
    let mut gw = &gdw + gf0;
    let mut t = 0usize;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for it in 0..config.max_iter {
        iterations = it + 1;
        let (z, hz, gdz) = loop {
            let z = prox(&(&w - &gw / lip), k, op.rho1 / lip);
            match smooth(&z) {
                Ok((hz, gdz, _)) if hz.is_finite() => {
                    if !backtrack {
                        break (z, hz, gdz);
                    }
                    let dz = &z - &w;
                    if hz <= hw + gw.dot(&dz) + 0.5 * lip * dz.norm_squared() + 1e-14 * hw.abs() {
                        break (z, hz, gdz);
                    }
                }
                Ok(_) | Err(Error::Overflow(_)) if backtrack => {}
                Ok(_) => {
                    return Err(Error::Overflow(format!(
                        "objective is not finite for unit {unit}"
                    )))
                }
                Err(e) => return Err(e),
            }
            lip *= 2.0;
            if lip > 1e30 {
                return Err(Error::NonConvergence(format!(
                    "step size collapsed for unit {unit}"
                )));
            }
        };
        let fz = objective(hz, &z);
        let accept = fz <= fx;
        let scale = x.norm().max(1.0);
        let reuse = data.affine_gradient() && !backtrack;
        let change;
        if accept {
            // w = z + ((1 - delta_t) / delta_t) delta_{t+1} (z - x)
            let delta_t = 2.0 / (t as f64 + 2.0);
            let delta_next = 2.0 / (t as f64 + 3.0);
            let b = (1.0 - delta_t) / delta_t * delta_next;
            change = (&z - &x).norm();
            w = &z + (&z - &x) * b;
            if reuse {
                gdw = &gdz + (&gdz - &gdx) * b;
            }
            x = z;
            gdx = gdz;
            fx = fz;
            t += 1;
        } else {
            // restart the momentum from the current iterate
            change = (&z - &x).norm();
            w = x.clone();
            if reuse {
                gdw = gdx.clone();
            }
            t = 0;
        }
        trace.push(fx);
        if change <= config.tol * scale {
            converged = true;
            break;
        }
        if reuse {
            gw = &gdw + smoothed_fusion(&w, op, u).1;
        } else {
            let (hv, gd, gf) = smooth(&w)?;
            hw = hv;
            gw = gd + gf;
        }
    }

    let theta = (0..design.num_experiments())
        .map(|m| x.rows(m * k, k).into_owned())
        .collect();
    Ok(UnitFit {
        theta,
        objective: trace,
        iterations,
        converged,
    })
}

/// Unsmoothed objective `(1/T) sum_m loss_m + ||Lambda theta||_1 + ||C theta||_1`.
pub fn penalized_objective(
    design: &PrecomputedDesign,
    unit: usize,
    op: &FusionOperator,
    link: Link,
    theta: &DVector<f64>,
) -> Result<f64> {
    let (v, _) = DataTerm::new(design, unit, link)?.eval(theta)?;
    Ok(v + op.penalty(theta))
}

/// Gradient of the smoothed part `h` at `theta`, exposed for checks.
pub fn smooth_objective_gradient(
    design: &PrecomputedDesign,
    unit: usize,
    op: &FusionOperator,
    link: Link,
    u: f64,
    theta: &DVector<f64>,
) -> Result<(f64, DVector<f64>)> {
    let (v, g) = DataTerm::new(design, unit, link)?.eval(theta)?;
    let (fv, fg) = smoothed_fusion(theta, op, u);
    Ok((v + fv, g + fg))
}
