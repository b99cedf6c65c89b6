#![allow(dead_code)]

use hawkesnet::crosscov::SimilarityWeights;
use hawkesnet::estimate::{precompute_design, PrecomputedDesign};
use hawkesnet::process::{ExperimentData, Kernel, MultiExperimentData, MultiModel};
use hawkesnet::simulate::{default_benchmark, simulate_multi};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn exp_kernel() -> Kernel {
    Kernel::exponential(1.0).unwrap()
}

/// Networks 1, 2, 3 on `p` units, simulated with one horizon each.
pub fn benchmark_data(p: usize, horizons: &[f64], seed: u64) -> (MultiModel, MultiExperimentData) {
    let model = default_benchmark(p).unwrap();
    let data = simulate_multi(&model, horizons, seed).unwrap();
    (model, data)
}

pub fn benchmark_design(p: usize, horizons: &[f64], seed: u64) -> PrecomputedDesign {
    let (_, data) = benchmark_data(p, horizons, seed);
    precompute_design(&data, &exp_kernel()).unwrap()
}

/// Uniform event times, `n` per unit, on `[0, horizon]`.
pub fn random_experiment(rng: &mut ChaCha8Rng, p: usize, horizon: f64, n: usize) -> ExperimentData {
    let times = (0..p)
        .map(|_| (0..n).map(|_| rng.random_range(0.0..horizon)).collect())
        .collect();
    ExperimentData::from_times(times, horizon).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random symmetric weights with zero diagonal, normalized like similarity weights.
pub fn random_weights(rng: &mut ChaCha8Rng, m: usize) -> SimilarityWeights {
    if m == 1 {
        return SimilarityWeights::uniform(1);
    }
    let mut d = DMatrix::zeros(m, m);
    for a in 0..m {
        for b in (a + 1)..m {
            let v = rng.random_range(0..10) as f64;
            d[(a, b)] = v;
            d[(b, a)] = v;
        }
    }
    if d.iter().all(|v| *v == 0.0) && m > 1 {
        d[(0, 1)] = 1.0;
        d[(1, 0)] = 1.0;
    }
    SimilarityWeights::from_similarity(&d).unwrap()
}

/// The fusion penalty written as the plain double sum over experiment pairs
/// and sources.
pub fn fusion_double_sum(theta: &DVector<f64>, w: &SimilarityWeights, p: usize) -> f64 {
    let m = w.num_experiments();
    let k = p + 1;
    let mut s = 0.0;
    for a in 0..m {
        for b in (a + 1)..m {
            for j in 0..p {
                s += w.get(a, b) * (theta[a * k + 1 + j] - theta[b * k + 1 + j]).abs();
            }
        }
    }
    s
}

/// Reference minimizer of the least-squares joint objective of unit `i` by
/// ADMM on the split `z = A theta`, where `A` stacks the sparse and the fusion
/// rows. Independent of the library's smoothing and FISTA code.
pub fn admm_reference(
    design: &PrecomputedDesign,
    w: &SimilarityWeights,
    unit: usize,
    rho1: f64,
    rho2: f64,
    iters: usize,
) -> (DVector<f64>, f64) {
    let p = design.moments[0].num_units();
    let m = design.moments.len();
    let k = p + 1;
    let dim = m * k;
    let t = design.total_horizon;

    let mut h = DMatrix::zeros(dim, dim);
    let mut g = DVector::zeros(dim);
    for (e, mo) in design.moments.iter().enumerate() {
        h.view_mut((e * k, e * k), (k, k))
            .copy_from(&(&mo.gram / t));
        g.rows_mut(e * k, k)
            .copy_from(&(mo.cross.row(unit).transpose() / t));
    }
    let mut rows: Vec<(DVector<f64>, f64)> = Vec::new();
    for e in 0..m {
        for j in 0..p {
            let mut r = DVector::zeros(dim);
            r[e * k + 1 + j] = 1.0;
            rows.push((r, rho1));
        }
    }
    for a in 0..m {
        for b in (a + 1)..m {
            let wab = w.get(a, b);
            if wab == 0.0 {
                continue;
            }
            for j in 0..p {
                let mut r = DVector::zeros(dim);
                r[a * k + 1 + j] = 1.0;
                r[b * k + 1 + j] = -1.0;
                rows.push((r, rho2 * wab));
            }
        }
    }
    let a = DMatrix::from_fn(rows.len(), dim, |r, c| rows[r].0[c]);
    let thr = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1));

    let penalty = 1.0;
    let lhs = (&h + a.transpose() * &a * penalty)
        .cholesky()
        .expect("positive definite");
    let mut z = DVector::zeros(rows.len());
    let mut u = DVector::zeros(rows.len());
    let mut theta = DVector::zeros(dim);
    for _ in 0..iters {
        theta = lhs.solve(&(&g + a.transpose() * (&z - &u) * penalty));
        let v = &a * &theta + &u;
        z = DVector::from_fn(v.len(), |r, _| {
            v[r].signum() * (v[r].abs() - thr[r] / penalty).max(0.0)
        });
        u += &a * &theta - &z;
    }
    let counts: f64 = design.moments.iter().map(|mo| mo.counts[unit] as f64).sum();
    let data = 0.5 * (theta.dot(&(&h * &theta)) - 2.0 * theta.dot(&g) + counts / t);
    let pen: f64 = (&a * &theta)
        .iter()
        .zip(thr.iter())
        .map(|(x, c)| c * x.abs())
        .sum();
    (theta, data + pen)
}
