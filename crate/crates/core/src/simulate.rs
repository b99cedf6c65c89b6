//! Ogata thinning for multivariate Hawkes processes and the circle/star
//! benchmark networks.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::process::{
    ExperimentData, ExperimentModel, Kernel, Link, MultiExperimentData, MultiModel,
};

/// Default cap on simulated events (burn-in included).
pub const DEFAULT_MAX_EVENTS: usize = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationOptions {
    /// Length of the discarded warm-up period; `None` uses the kernel default.
    pub burn_in: Option<f64>,
    pub max_events: usize,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        Self {
            burn_in: None,
            max_events: DEFAULT_MAX_EVENTS,
        }
    }
}

/// The RNG used for experiment `stream` under `seed`.
pub fn experiment_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Simulates one experiment on `[0, horizon]`; identical to experiment 0 of
/// [`simulate_multi`] with the same seed.
pub fn simulate_hawkes(model: &ExperimentModel, horizon: f64, seed: u64) -> Result<ExperimentData> {
    simulate_with(
        model,
        horizon,
        &mut experiment_rng(seed, 0),
        SimulationOptions::default(),
    )
}

/// Simulates every experiment independently, experiment `m` drawing from
/// RNG stream `m` of `seed`.
pub fn simulate_multi(
    model: &MultiModel,
    horizons: &[f64],
    seed: u64,
) -> Result<MultiExperimentData> {
    simulate_multi_with(model, horizons, seed, SimulationOptions::default())
}

pub fn simulate_multi_with(
    model: &MultiModel,
    horizons: &[f64],
    seed: u64,
    opts: SimulationOptions,
) -> Result<MultiExperimentData> {
    if horizons.len() != model.num_experiments() {
        return domain(format!(
            "{} horizons given for {} experiments",
            horizons.len(),
            model.num_experiments()
        ));
    }
    model.check_stable()?;
    let exps = model
        .experiments()
        .par_iter()
        .zip(horizons.par_iter())
        .enumerate()
        .map(|(m, (e, &t))| simulate_with(e, t, &mut experiment_rng(seed, m as u64), opts))
        .collect::<Result<Vec<_>>>()?;
    MultiExperimentData::new(exps)
}

/// Thinning sampler driven by a caller-supplied RNG.
pub fn simulate_with<R: Rng>(
    model: &ExperimentModel,
    horizon: f64,
    rng: &mut R,
    opts: SimulationOptions,
) -> Result<ExperimentData> {
    if !(horizon.is_finite() && horizon > 0.0) {
        return domain(format!("horizon must be positive, got {horizon}"));
    }
    model.check_stable()?;
    let burn_in = opts
        .burn_in
        .unwrap_or_else(|| model.kernel.default_burn_in());
    if !(burn_in.is_finite() && burn_in >= 0.0) {
        return domain("burn-in must be nonnegative");
    }
    let times = match &model.kernel {
        Kernel::Exponential { rate } => {
            thin_exponential(model, *rate, -burn_in, horizon, rng, opts.max_events)?
        }
        Kernel::Tabulated { .. } => thin_tabulated(model, -burn_in, horizon, rng, opts.max_events)?,
    };
    let kept = times
        .into_iter()
        .map(|ts| ts.into_iter().filter(|&t| t >= 0.0).collect())
        .collect();
    ExperimentData::from_times(kept, horizon)
}

/// Upper bound on `g(mu_i + s)` given an upper bound `s` on the excitation.
fn link_bound(link: Link, mu: f64, s: f64) -> f64 {
    match link {
        Link::Linear | Link::RectifiedLinear => mu.max(0.0) + s,
        Link::Exponential => (mu + s).exp(),
    }
}

fn pick_unit<R: Rng>(rng: &mut R, lam: &DVector<f64>, total: f64, bound: f64) -> Option<usize> {
    let u = rng.random::<f64>() * bound;
    if u >= total {
        return None;
    }
    let mut acc = 0.0;
    for (i, &l) in lam.iter().enumerate() {
        acc += l;
        if u < acc {
            return Some(i);
        }
    }
    // rounding in the running sum: fall back to the last unit with mass
    lam.iter().rposition(|&l| l > 0.0)
}

fn intensities(model: &ExperimentModel, x: &DVector<f64>) -> Result<DVector<f64>> {
    let eta = &model.mu + &model.beta * x;
    let mut lam = DVector::zeros(eta.len());
    for i in 0..eta.len() {
        lam[i] = model.link.apply(eta[i])?;
    }
    Ok(lam)
}

fn thin_exponential<R: Rng>(
    model: &ExperimentModel,
    rate: f64,
    start: f64,
    end: f64,
    rng: &mut R,
    cap: usize,
) -> Result<Vec<Vec<f64>>> {
    let p = model.num_units();
    let beta_pos = model.beta.map(|b| b.max(0.0));
    let mut x = DVector::zeros(p);
    let mut t = start;
    let mut out = vec![Vec::new(); p];
    let mut total_events = 0usize;
    loop {
        // x decays between events, so the bound at t holds until the next event
        let excite = &beta_pos * &x;
        let bound: f64 = (0..p)
            .map(|i| link_bound(model.link, model.mu[i], excite[i]))
            .sum();
        if !bound.is_finite() {
            return Err(Error::Overflow("thinning bound is not finite".into()));
        }
        if bound <= 0.0 {
            break;
        }
        let w = rng.sample::<f64, _>(Exp1) / bound;
        t += w;
        if t > end {
            break;
        }
        x *= (-rate * w).exp();
        let lam = intensities(model, &x)?;
        let total = lam.sum();
        if let Some(i) = pick_unit(rng, &lam, total, bound) {
            out[i].push(t);
            x[i] += 1.0;
            total_events += 1;
            if total_events > cap {
                return Err(Error::Runaway { cap });
            }
        }
    }
    Ok(out)
}

fn thin_tabulated<R: Rng>(
    model: &ExperimentModel,
    start: f64,
    end: f64,
    rng: &mut R,
    cap: usize,
) -> Result<Vec<Vec<f64>>> {
    let p = model.num_units();
    let kernel = &model.kernel;
    let support = kernel.support_end().unwrap_or(f64::INFINITY);
    let (kmin, kmax) = kernel.value_range();
    // per-event worst case of beta_ij * kappa over the support
    let per_event = model.beta.map(|b| (b * kmax).max(b * kmin).max(0.0));
    let mut out: Vec<Vec<f64>> = vec![Vec::new(); p];
    let mut lo = vec![0usize; p];
    let mut t = start;
    let mut total_events = 0usize;
    loop {
        let mut active = DVector::zeros(p);
        for j in 0..p {
            while lo[j] < out[j].len() && t - out[j][lo[j]] > support {
                lo[j] += 1;
            }
            active[j] = (out[j].len() - lo[j]) as f64;
        }
        let excite = &per_event * &active;
        let bound: f64 = (0..p)
            .map(|i| link_bound(model.link, model.mu[i], excite[i]))
            .sum();
        if !bound.is_finite() {
            return Err(Error::Overflow("thinning bound is not finite".into()));
        }
        if bound <= 0.0 {
            break;
        }
        t += rng.sample::<f64, _>(Exp1) / bound;
        if t > end {
            break;
        }
        let mut x = DVector::zeros(p);
        for j in 0..p {
            x[j] = out[j][lo[j]..].iter().map(|&s| kernel.eval(t - s)).sum();
        }
        let lam = intensities(model, &x)?;
        let total = lam.sum();
        if let Some(i) = pick_unit(rng, &lam, total, bound) {
            out[i].push(t);
            total_events += 1;
            if total_events > cap {
                return Err(Error::Runaway { cap });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Motif {
    /// Directed cycle `1 -> 2 -> ... -> k -> 1`.
    Circle,
    /// Edges from the first node (hub) to every other node.
    Star,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotifSpec {
    pub motif: Motif,
    pub motif_size: usize,
    pub coefficient: f64,
}

impl MotifSpec {
    pub fn circle(coefficient: f64) -> Self {
        Self {
            motif: Motif::Circle,
            motif_size: 5,
            coefficient,
        }
    }

    pub fn star(coefficient: f64) -> Self {
        Self {
            motif: Motif::Star,
            motif_size: 5,
            coefficient,
        }
    }

    pub fn with_size(mut self, motif_size: usize) -> Self {
        self.motif_size = motif_size;
        self
    }

    /// `k x k` block with row = target, column = source.
    pub fn block(&self) -> DMatrix<f64> {
        let k = self.motif_size;
        let mut b = DMatrix::zeros(k, k);
        match self.motif {
            Motif::Circle => {
                for s in 0..k {
                    b[((s + 1) % k, s)] = self.coefficient;
                }
            }
            Motif::Star => {
                for leaf in 1..k {
                    b[(leaf, 0)] = self.coefficient;
                }
            }
        }
        b
    }
}

/// Coefficient of circle motifs in the benchmark.
pub const CIRCLE_COEFFICIENT: f64 = 0.3;
/// Coefficient of star motifs in the benchmark.
pub const STAR_COEFFICIENT: f64 = 0.6;
/// Background rate of every unit in the benchmark.
pub const BENCHMARK_MU: f64 = 0.2;

/// The three benchmark networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchmarkNetwork {
    /// All circles.
    One,
    /// Circles, with the last tenth of the motifs (at least one) replaced by stars.
    Two,
    /// All stars.
    Three,
}

/// Motif layout of a benchmark network on `p` units.
pub fn network_layout(
    which: BenchmarkNetwork,
    p: usize,
    motif_size: usize,
) -> Result<Vec<MotifSpec>> {
    if motif_size < 3 {
        return domain("motif size must be at least 3");
    }
    if p == 0 || p % motif_size != 0 {
        return domain(format!(
            "p = {p} is not divisible by the motif size {motif_size}"
        ));
    }
    let n = p / motif_size;
    let circle = MotifSpec::circle(CIRCLE_COEFFICIENT).with_size(motif_size);
    let star = MotifSpec::star(STAR_COEFFICIENT).with_size(motif_size);
    Ok(match which {
        BenchmarkNetwork::One => vec![circle; n],
        BenchmarkNetwork::Three => vec![star; n],
        BenchmarkNetwork::Two => {
            let stars = ((0.1 * n as f64).round() as usize).clamp(1, n);
            (0..n)
                .map(|b| if b < n - stars { circle } else { star })
                .collect()
        }
    })
}

/// Layouts of Networks 1, 2 and 3.
pub fn default_layouts(p: usize) -> Result<Vec<Vec<MotifSpec>>> {
    [
        BenchmarkNetwork::One,
        BenchmarkNetwork::Two,
        BenchmarkNetwork::Three,
    ]
    .into_iter()
    .map(|w| network_layout(w, p, 5))
    .collect()
}

/// Connectivity matrix tiling the motifs along the diagonal.
pub fn motif_network(p: usize, layout: &[MotifSpec]) -> Result<DMatrix<f64>> {
    let total: usize = layout.iter().map(|m| m.motif_size).sum();
    if total != p {
        return domain(format!("motif sizes sum to {total}, expected p = {p}"));
    }
    if let Some(m) = layout.iter().find(|m| m.motif_size < 3) {
        return domain(format!("motif size {} is below 3", m.motif_size));
    }
    let mut beta = DMatrix::zeros(p, p);
    let mut offset = 0;
    for m in layout {
        let k = m.motif_size;
        beta.view_mut((offset, offset), (k, k))
            .copy_from(&m.block());
        offset += k;
    }
    Ok(beta)
}

/// One linear-link experiment per layout, background `mu` and kernel `kernel`.
pub fn make_benchmark_networks(
    p: usize,
    layouts: &[Vec<MotifSpec>],
    mu: f64,
    kernel: Kernel,
) -> Result<MultiModel> {
    let exps = layouts
        .iter()
        .map(|layout| {
            let beta = motif_network(p, layout)?;
            ExperimentModel::new(
                DVector::from_element(p, mu),
                beta,
                kernel.clone(),
                Link::Linear,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    MultiModel::new(exps)
}

/// Networks 1, 2, 3 with `mu = 0.2` and the `exp(-t)` kernel.
pub fn default_benchmark(p: usize) -> Result<MultiModel> {
    make_benchmark_networks(
        p,
        &default_layouts(p)?,
        BENCHMARK_MU,
        Kernel::exponential(1.0)?,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_unit(mu: f64, beta: f64, link: Link) -> ExperimentModel {
        ExperimentModel::new(
            DVector::from_element(1, mu),
            DMatrix::from_element(1, 1, beta),
            Kernel::exponential(1.0).unwrap(),
            link,
        )
        .unwrap()
    }

    fn mean_rate(model: &ExperimentModel, horizon: f64, seeds: u64) -> f64 {
        (0..seeds)
            .map(|s| simulate_hawkes(model, horizon, s).unwrap().total_events() as f64 / horizon)
            .sum::<f64>()
            / seeds as f64
    }

    #[test]
    fn stationary_rate_of_linear_hawkes() {
        let r = mean_rate(&one_unit(0.2, 0.3, Link::Linear), 5000.0, 20);
        assert!((r / (0.2 / 0.7) - 1.0).abs() < 0.05, "rate {r}");
    }

    #[test]
    fn poisson_rate() {
        let r = mean_rate(&one_unit(0.2, 0.0, Link::Linear), 5000.0, 5);
        assert!((r / 0.2 - 1.0).abs() < 0.05);
    }

    #[test]
    fn inhibition_lowers_rate() {
        let inh = one_unit(0.2, -0.3, Link::RectifiedLinear);
        let below = (0..20)
            .filter(|&s| simulate_hawkes(&inh, 2000.0, s).unwrap().total_events() < 400)
            .count();
        assert!(below >= 18);
        assert!(mean_rate(&inh, 2000.0, 20) < 0.2);
    }

    #[test]
    fn unstable_model_rejected() {
        let m = one_unit(0.2, 1.1, Link::Linear);
        assert!(matches!(
            simulate_hawkes(&m, 10.0, 0),
            Err(Error::Unstable { .. })
        ));
    }

    #[test]
    fn runaway_cap() {
        let m = one_unit(50.0, 0.0, Link::Linear);
        let opts = SimulationOptions {
            burn_in: Some(0.0),
            max_events: 100,
        };
        let r = simulate_with(&m, 10.0, &mut experiment_rng(1, 0), opts);
        assert!(matches!(r, Err(Error::Runaway { cap: 100 })));
    }

    #[test]
    fn deterministic_given_seed() {
        let model = default_benchmark(10).unwrap();
        let a = simulate_multi(&model, &[50.0, 60.0, 40.0], 7).unwrap();
        let b = simulate_multi(&model, &[50.0, 60.0, 40.0], 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.horizons(), vec![50.0, 60.0, 40.0]);
        let single = simulate_hawkes(model.experiment(0), 50.0, 7).unwrap();
        assert_eq!(&single, a.experiment(0));
    }

    #[test]
    fn tabulated_and_exp_link_run() {
        let k = Kernel::tabulated(vec![0.0, 1.0, 2.0], vec![1.0, 0.5, 0.0]).unwrap();
        let m = ExperimentModel::new(
            DVector::from_element(2, 0.3),
            DMatrix::from_row_slice(2, 2, &[0.0, 0.4, 0.2, 0.0]),
            k,
            Link::Linear,
        )
        .unwrap();
        let d = simulate_hawkes(&m, 500.0, 3).unwrap();
        assert!(d.total_events() > 300);
        let e = one_unit(-1.0, 0.5, Link::Exponential);
        let d = simulate_hawkes(&e, 500.0, 3).unwrap();
        assert!(d.total_events() > 100);
    }

    #[test]
    fn circle_and_star_blocks() {
        let star = MotifSpec::star(0.6).block();
        assert_eq!(star.iter().filter(|v| **v != 0.0).count(), 4);
        assert!((1..5).all(|l| star[(l, 0)] == 0.6));
        let circle = MotifSpec::circle(0.3).block();
        assert_eq!(circle[(1, 0)], 0.3);
        assert_eq!(circle[(0, 4)], 0.3);
    }

    #[test]
    fn default_networks() {
        let m = default_benchmark(100).unwrap();
        let (b1, b2, b3) = (
            &m.experiment(0).beta,
            &m.experiment(1).beta,
            &m.experiment(2).beta,
        );
        assert_eq!(b1.iter().filter(|v| **v != 0.0).count(), 100);
        assert!(b1.iter().all(|v| *v == 0.0 || *v == 0.3));
        assert_eq!(b3.iter().filter(|v| **v != 0.0).count(), 80);
        let identical = b1
            .iter()
            .zip(b2.iter())
            .filter(|(a, b)| **a != 0.0 && a == b)
            .count();
        assert_eq!(identical, 90);
        assert!(network_layout(BenchmarkNetwork::One, 12, 5).is_err());
    }
}
