//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

mod common;

use std::time::Instant;

use hawkesnet::bench::{
    run_benchmark_estimation, run_benchmark_testing, testing_model, BenchConfig, FusionStrength,
    TestMethod, TestingScenario, WeightStrategy,
};
use hawkesnet::crosscov::SimilarityWeights;
use hawkesnet::estimate::{
    build_fusion_operator, effective_smoothing, joint_fit, penalized_objective, precompute_design,
    precompute_design_with, smooth_objective_gradient, SolverConfig, TauRule,
};
use hawkesnet::infer::{
    critical_levels, least_squares_fits, score_statistic, Decorrelation, TestingDesign,
};
use hawkesnet::process::{
    integrated_path, ExperimentModel, Kernel, Link, Moments, MultiExperimentData, MultiModel,
};
use hawkesnet::simulate::{
    make_benchmark_networks, network_layout, simulate_hawkes, simulate_multi, BenchmarkNetwork,
    MotifSpec,
};
use hawkesnet::tree::{build_tree, node_sets};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn simulator_calibration() -> Outcome {
    let model = ExperimentModel::new(
        DVector::from_element(1, 0.2),
        DMatrix::from_element(1, 1, 0.3),
        Kernel::exponential(1.0).unwrap(),
        Link::Linear,
    )
    .unwrap();
    let rates: Vec<f64> = (0..20u64)
        .into_par_iter()
        .map(|s| simulate_hawkes(&model, 5000.0, s).unwrap().total_events() as f64 / 5000.0)
        .collect();
    let mean = rates.iter().sum::<f64>() / rates.len() as f64;
    let target = 0.2 / 0.7;
    let rel = (mean / target - 1.0).abs();
    outcome(
        rel < 0.05,
        format!("mean rate {mean:.5} vs {target:.6} (rel. error {rel:.4}, limit 0.05)"),
    )
}

fn design_exactness() -> Outcome {
    let beta = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.4, 0.3, 0.0, 0.0, 0.0, -0.2, 0.1]);
    let kernel = Kernel::exponential(1.0).unwrap();
    let model = ExperimentModel::new(
        DVector::from_vec(vec![0.4, 0.3, 0.5]),
        beta,
        kernel.clone(),
        Link::RectifiedLinear,
    )
    .unwrap();
    let exp = simulate_hawkes(&model, 100.0, 7).unwrap();
    let exact = Moments::compute(&exp, &kernel).unwrap();

    // midpoint rule with cells of width <= 1e-4 between consecutive events
    let mut cuts: Vec<f64> = exp.merged().iter().map(|e| e.0).collect();
    cuts.insert(0, 0.0);
    cuts.push(100.0);
    cuts.dedup();
    let (mut mids, mut widths) = (Vec::new(), Vec::new());
    for w in cuts.windows(2) {
        let n = ((w[1] - w[0]) / 1e-4).ceil().max(1.0) as usize;
        let h = (w[1] - w[0]) / n as f64;
        for c in 0..n {
            mids.push(w[0] + (c as f64 + 0.5) * h);
            widths.push(h);
        }
    }
    let path = integrated_path(&exp, &kernel, &mids).unwrap();
    let mut q = DMatrix::<f64>::zeros(4, 4);
    for (c, h) in widths.iter().enumerate() {
        let z = DVector::from_fn(4, |r, _| if r == 0 { 1.0 } else { path[(r - 1, c)] });
        q += &z * z.transpose() * *h;
    }
    // gamma by direct kernel sums at each event's left limit
    let mut gamma = DMatrix::<f64>::zeros(3, 4);
    for i in 0..3 {
        for &t in exp.stream(i).times() {
            gamma[(i, 0)] += 1.0;
            for j in 0..3 {
                gamma[(i, j + 1)] += exp
                    .stream(j)
                    .times()
                    .iter()
                    .filter(|&&s| s < t)
                    .map(|&s| (-(t - s)).exp())
                    .sum::<f64>();
            }
        }
    }
    let rel = |a: &DMatrix<f64>, b: &DMatrix<f64>| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| (x - y).abs() / y.abs().max(1e-8))
            .fold(0.0, f64::max)
    };
    let (eq, eg) = (rel(&exact.gram, &q), rel(&exact.cross, &gamma));
    outcome(
        eq < 1e-4 && eg < 1e-4,
        format!(
            "max rel. error Q {eq:.2e}, gamma {eg:.2e} over {} cells, {} events (limit 1e-4)",
            mids.len(),
            exp.total_events()
        ),
    )
}

fn solver_correctness() -> Outcome {
    let (_, data) = common::benchmark_data(5, &[300.0, 400.0, 350.0], 3);
    let design = precompute_design(&data, &common::exp_kernel()).unwrap();
    let tight = SolverConfig {
        tol: 1e-10,
        max_iter: 200_000,
        ..SolverConfig::default()
    };
    let fit = joint_fit(
        &design,
        &SimilarityWeights::uniform(3),
        0.0,
        0.0,
        Link::Linear,
        &tight,
    )
    .unwrap();
    let mut err_a = 0.0f64;
    for m in 0..3 {
        let mo = &design.moments[m];
        for i in 0..5 {
            let sol = mo.gram.clone().lu().solve(&mo.gamma(i)).unwrap();
            err_a = err_a.max((&fit.units[i].theta[m] - sol).amax());
        }
    }

    let circle = MotifSpec::circle(0.3).with_size(3);
    let model =
        make_benchmark_networks(3, &[vec![circle], vec![circle]], 0.2, common::exp_kernel())
            .unwrap();
    let data = simulate_multi(&model, &[300.0, 300.0], 5).unwrap();
    let design = precompute_design(&data, &common::exp_kernel()).unwrap();
    let w = SimilarityWeights::uniform(2);
    let (rho1, rho2) = (0.01, 0.05);
    let config = SolverConfig {
        epsilon: 1e-4,
        tol: 1e-10,
        max_iter: 200_000,
        ..SolverConfig::default()
    };
    let fit = joint_fit(&design, &w, rho1, rho2, Link::Linear, &config).unwrap();
    let op = build_fusion_operator(&w, rho1, rho2, 3).unwrap();
    let mut gap_b = f64::NEG_INFINITY;
    for i in 0..3 {
        let (_, reference) = common::admm_reference(&design, &w, i, rho1, rho2, 50_000);
        let ours =
            penalized_objective(&design, i, &op, Link::Linear, &fit.units[i].stacked()).unwrap();
        gap_b = gap_b.max(ours - reference);
    }
    let limit_b = config.epsilon + 1e-4;
    outcome(
        err_a < 1e-4 && gap_b <= limit_b,
        format!("(a) max |theta - normal eq.| {err_a:.2e} (limit 1e-4); (b) objective gap to ADMM {gap_b:.2e} (limit {limit_b:.1e})"),
    )
}

fn gradient_suite() -> Outcome {
    let (_, data) = common::benchmark_data(5, &[100.0, 120.0, 80.0], 2);
    let mut worst = [0.0f64; 2];
    for (slot, link) in [Link::Linear, Link::Exponential].into_iter().enumerate() {
        let design = precompute_design_with(&data, &common::exp_kernel(), link, None).unwrap();
        let w = SimilarityWeights::uniform(3);
        let op = build_fusion_operator(&w, 0.01, 0.05, 5).unwrap();
        let mut r = common::rng(40 + slot as u64);
        for _ in 0..20 {
            let theta = DVector::from_fn(op.dim(), |k, _| {
                if k % 6 == 0 {
                    r.random_range(-0.5..0.5)
                } else {
                    r.random_range(-0.3..0.3)
                }
            });
            let u = effective_smoothing(&op, &theta, &SolverConfig::default());
            let unit = r.random_range(0..5);
            let (_, g) = smooth_objective_gradient(&design, unit, &op, link, u, &theta).unwrap();
            let h = 1e-6;
            let fd = DVector::from_fn(theta.len(), |k, _| {
                let (mut a, mut b) = (theta.clone(), theta.clone());
                a[k] += h;
                b[k] -= h;
                let fa = smooth_objective_gradient(&design, unit, &op, link, u, &a)
                    .unwrap()
                    .0;
                let fb = smooth_objective_gradient(&design, unit, &op, link, u, &b)
                    .unwrap()
                    .0;
                (fa - fb) / (2.0 * h)
            });
            worst[slot] = worst[slot].max((&g - &fd).norm() / g.norm().max(1e-8));
        }
    }
    outcome(
        worst.iter().all(|e| *e < 1e-5),
        format!(
            "max rel. error linear {:.2e}, exponential {:.2e} over 20 points each (limit 1e-5)",
            worst[0], worst[1]
        ),
    )
}

fn penalty_equivalence() -> Outcome {
    let mut r = common::rng(99);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let m = r.random_range(2..7);
        let p = r.random_range(1..8);
        let w = common::random_weights(&mut r, m);
        let theta = DVector::from_fn(m * (p + 1), |_, _| r.random_range(-1.0..1.0));
        let op = build_fusion_operator(&w, 0.0, 1.0, p).unwrap();
        worst =
            worst.max((op.fusion_norm(&theta) - common::fusion_double_sum(&theta, &w, p)).abs());
    }
    outcome(
        worst <= 1e-12,
        format!("max |compact - double sum| {worst:.2e} over 100 instances (limit 1e-12)"),
    )
}

fn estimation_benchmark() -> Outcome {
    let config = BenchConfig {
        strategies: vec![
            WeightStrategy::Empirical,
            WeightStrategy::Uniform,
            WeightStrategy::Separate,
        ],
        fusion: vec![FusionStrength::Strong],
        curve_tau: TauRule::Fixed { tau: 0.0 },
        ..BenchConfig::default()
    };
    let rep = run_benchmark_estimation(&config).unwrap();
    let auc = |s, f| rep.curve(s, f).unwrap().auc.mean;
    let e = auc(WeightStrategy::Empirical, Some(FusionStrength::Strong));
    let u = auc(WeightStrategy::Uniform, Some(FusionStrength::Strong));
    let s = auc(WeightStrategy::Separate, None);
    outcome(
        e >= u && e >= s && e - s >= 0.02,
        format!("mean AUC empirical {e:.4}, uniform {u:.4}, separate {s:.4}; empirical - separate {:.4} (need >= 0.02)", e - s),
    )
}

fn tree_reproduction() -> Outcome {
    let sim = DMatrix::from_row_slice(
        4,
        4,
        &[
            0.0, 20.0, 12.0, 4.0, 20.0, 0.0, 30.0, 22.0, 12.0, 30.0, 0.0, 40.0, 4.0, 22.0, 40.0,
            0.0,
        ],
    );
    let t = build_tree(&sim, &[60, 55, 50, 45]).unwrap();
    let (left, right) = node_sets(&t, 4).unwrap();
    let order: Vec<usize> = t.order().iter().map(|m| m + 1).collect();
    let (l, r): (Vec<usize>, Vec<usize>) = (
        left.iter().map(|m| m + 1).collect(),
        right.iter().map(|m| m + 1).collect(),
    );
    outcome(
        order == [1, 2, 3, 4] && l == [3] && r == [4],
        format!("order {order:?}, bottom-left {l:?}, bottom-right {r:?}"),
    )
}

fn critical_level_values() -> Outcome {
    let got = critical_levels(0.05, 10, 4, None).unwrap();
    let want = [5e-4, 3.75e-4, 2.5e-4, 1.25e-4];
    let err = got
        .iter()
        .zip(want)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    outcome(
        err <= 1e-18,
        format!("levels {got:?} (max abs. deviation {err:.1e})"),
    )
}

fn testing_config(
    scenario: TestingScenario,
    methods: Vec<TestMethod>,
    ms: Vec<usize>,
    horizon: f64,
    runs: usize,
) -> BenchConfig {
    BenchConfig {
        scenario,
        methods,
        ms,
        horizons: vec![horizon],
        replications: runs,
        ..BenchConfig::testing()
    }
}

fn fwer_control() -> Outcome {
    let slack = 2.0 * (0.05f64 * 0.95 / 500.0).sqrt();
    let methods = vec![
        TestMethod::HierarchicalOracle,
        TestMethod::HierarchicalScrambled,
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, scenario) in [
        ("all-null", TestingScenario::AllNull),
        ("mixed-null", TestingScenario::Benchmark),
    ] {
        let config = testing_config(scenario, methods.clone(), vec![5], 2000.0, 500);
        let model = testing_model(&config, 5).unwrap();
        let d_star = model
            .experiments()
            .iter()
            .flat_map(|e| {
                e.beta
                    .row_iter()
                    .map(|r| r.iter().filter(|v| **v != 0.0).count())
                    .collect::<Vec<_>>()
            })
            .max()
            .unwrap_or(0) as f64;
        let rep = run_benchmark_testing(&config).unwrap();
        let oracle = rep
            .testing_point(TestMethod::HierarchicalOracle, 5)
            .unwrap()
            .fwer
            .mean;
        let scrambled = rep
            .testing_point(TestMethod::HierarchicalScrambled, 5)
            .unwrap()
            .fwer
            .mean;
        let bound = 0.05 * (1.0 + d_star * 5.0 * 4.0 / (2.0 * 10.0)) + slack;
        pass &= oracle <= 0.05 + slack && scrambled <= bound;
        parts.push(format!("{name}: oracle {oracle:.3} (limit {:.4}), scrambled {scrambled:.3} (limit {bound:.4}, d* = {d_star})", 0.05 + slack));
    }
    outcome(pass, format!("T = 2000, 500 runs; {}", parts.join("; ")))
}

fn power_ordering() -> Outcome {
    let methods = vec![
        TestMethod::Bonferroni,
        TestMethod::HierarchicalOracle,
        TestMethod::HierarchicalEmpirical,
    ];
    let config = testing_config(
        TestingScenario::Benchmark,
        methods,
        vec![5, 10, 20],
        500.0,
        200,
    );
    let rep = run_benchmark_testing(&config).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for h in [
        TestMethod::HierarchicalOracle,
        TestMethod::HierarchicalEmpirical,
    ] {
        let mut gaps = Vec::new();
        for m in [5, 10, 20] {
            let b = rep.testing_point(TestMethod::Bonferroni, m).unwrap().power;
            let t = rep.testing_point(h, m).unwrap().power;
            gaps.push((
                t.mean - b.mean,
                (t.stderr.powi(2) + b.stderr.powi(2)).sqrt(),
            ));
        }
        let above = gaps.iter().all(|(g, se)| *g >= -2.0 * se);
        let rising = gaps
            .windows(2)
            .all(|w| w[1].0 >= w[0].0 - 2.0 * (w[0].1.powi(2) + w[1].1.powi(2)).sqrt());
        pass &= above && rising;
        let shown: Vec<String> = gaps
            .iter()
            .map(|(g, se)| format!("{g:.3}+-{se:.3}"))
            .collect();
        parts.push(format!(
            "{} gaps over M = 5, 10, 20: {}",
            h.name(),
            shown.join(", ")
        ));
    }
    outcome(pass, format!("T = 500, 200 runs; {}", parts.join("; ")))
}

fn selection_consistency() -> Outcome {
    let base = BenchConfig {
        strategies: vec![WeightStrategy::Oracle],
        fusion: vec![FusionStrength::SqrtM],
        tau: TauRule::Rate { k: 2.0, c: 1.0 },
        ..BenchConfig::default()
    };
    let f1 = |horizons: Vec<f64>| {
        let rep = run_benchmark_estimation(&BenchConfig {
            horizons,
            ..base.clone()
        })
        .unwrap();
        rep.curve(WeightStrategy::Oracle, Some(FusionStrength::SqrtM))
            .unwrap()
            .selected_f1
            .mean
    };
    let single = f1(vec![200.0, 500.0, 300.0]);
    let double = f1(vec![400.0, 1000.0, 600.0]);
    outcome(
        double >= 0.9 && double > single,
        format!("mean F1 {double:.3} at doubled horizons vs {single:.3} (need >= 0.9 and above)"),
    )
}

fn null_calibration() -> Outcome {
    let p = 5;
    let layout = network_layout(BenchmarkNetwork::One, p, 5).unwrap();
    let model: MultiModel =
        make_benchmark_networks(p, &[layout], 0.2, common::exp_kernel()).unwrap();
    let (i, j) = (2, 0);
    assert_eq!(model.experiment(0).beta[(i, j)], 0.0);
    let mut v: Vec<f64> = (0..500u64)
        .into_par_iter()
        .map(|s| {
            let data: MultiExperimentData = simulate_multi(&model, &[2000.0], 1000 + s).unwrap();
            let design = TestingDesign::build(&data, &common::exp_kernel(), Link::Linear).unwrap();
            let thetas = least_squares_fits(&design).unwrap();
            score_statistic(&design, &thetas, i, j, 0, Decorrelation::Auto)
                .unwrap()
                .0
        })
        .collect();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let normal = Normal::standard();
    let ks = v
        .iter()
        .enumerate()
        .map(|(k, x)| {
            let f = normal.cdf(*x);
            (f - k as f64 / n).abs().max(((k + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max);
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    outcome(
        ks < 0.08,
        format!("KS distance {ks:.4} (limit 0.08); mean {mean:.3}, variance {var:.3}, 500 runs"),
    )
}

fn main() {
    let checks: [(&str, fn() -> Outcome); 12] = [
        ("simulator calibration", simulator_calibration),
        ("design exactness", design_exactness),
        ("solver correctness", solver_correctness),
        ("gradient suite", gradient_suite),
        ("penalty equivalence", penalty_equivalence),
        ("estimation benchmark", estimation_benchmark),
        ("tree reproduction", tree_reproduction),
        ("critical levels", critical_level_values),
        ("FWER control", fwer_control),
        ("power ordering", power_ordering),
        ("selection consistency", selection_consistency),
        ("null calibration", null_calibration),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .and_then(|s| s.parse().ok());
    let mut failed = 0;
    for (k, (name, check)) in checks.iter().enumerate() {
        if only.is_some_and(|o| o != k + 1) {
            continue;
        }
        let start = Instant::now();
        let out = check();
        let secs = start.elapsed().as_secs_f64();
        println!(
            "{} {:>2} {name}: {} [{secs:.1} s]",
            if out.pass { "PASS" } else { "FAIL" },
            k + 1,
            out.detail
        );
        failed += usize::from(!out.pass);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
