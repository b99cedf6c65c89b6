//! Monte Carlo harness for the simulation studies: edge selection curves of
//! the joint estimator and power/FWER/FDR of the edge tests.

mod estimation;
mod plot;
mod testing;

pub use estimation::{edge_confusion, normalized_auc, run_benchmark_estimation};
pub use plot::{emit_plot_data, parse_plot_data, write_plot_data, PlotRow, PLOT_COLUMNS};
pub use testing::{run_benchmark_testing, testing_model};

use serde::{Deserialize, Serialize};

use crate::crosscov::{ThresholdRule, DEFAULT_BIN_WIDTH, DEFAULT_MAX_LAG};
use crate::error::{domain, Result};
use crate::estimate::{SolverConfig, TauRule};
use crate::infer::{Decorrelation, NodeTest};
use crate::simulate::BenchmarkNetwork;

/// Source of the fusion weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightStrategy {
    /// Similarity counts of the true networks.
    Oracle,
    /// Similarity counts of thresholded cross-covariances.
    Empirical,
    Uniform,
    /// No fusion (`rho2 = 0`).
    Separate,
}

impl WeightStrategy {
    pub fn name(self) -> &'static str {
        match self {
            WeightStrategy::Oracle => "oracle",
            WeightStrategy::Empirical => "empirical",
            WeightStrategy::Uniform => "uniform",
            WeightStrategy::Separate => "separate",
        }
    }
}

impl std::str::FromStr for WeightStrategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim() {
            "oracle" => Ok(WeightStrategy::Oracle),
            "empirical" => Ok(WeightStrategy::Empirical),
            "uniform" => Ok(WeightStrategy::Uniform),
            "separate" => Ok(WeightStrategy::Separate),
            o => Err(format!("unknown weight strategy {o:?}")),
        }
    }
}

/// `rho2` relative to `rho1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionStrength {
    /// `rho2 = rho1`.
    Weak,
    /// `rho2 = 10 rho1`.
    Strong,
    /// `rho2 = sqrt(M) rho1`.
    SqrtM,
}

impl FusionStrength {
    pub fn ratio(self, m: usize) -> f64 {
        match self {
            FusionStrength::Weak => 1.0,
            FusionStrength::Strong => 10.0,
            FusionStrength::SqrtM => (m as f64).sqrt(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FusionStrength::Weak => "weak",
            FusionStrength::Strong => "strong",
            FusionStrength::SqrtM => "sqrt_m",
        }
    }
}

impl std::str::FromStr for FusionStrength {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim() {
            "weak" => Ok(FusionStrength::Weak),
            "strong" => Ok(FusionStrength::Strong),
            "sqrt_m" | "sqrtm" => Ok(FusionStrength::SqrtM),
            o => Err(format!("unknown fusion strength {o:?}")),
        }
    }
}

/// Edge tests compared in the testing study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestMethod {
    Bonferroni,
    /// Per-edge trees from the true coefficients.
    HierarchicalOracle,
    /// One tree from the empirical similarity of all experiments.
    HierarchicalEmpirical,
    /// Per-edge oracle trees read backwards, so null experiments are tested first.
    HierarchicalScrambled,
}

impl TestMethod {
    pub fn name(self) -> &'static str {
        match self {
            TestMethod::Bonferroni => "bonferroni",
            TestMethod::HierarchicalOracle => "hierarchical_oracle",
            TestMethod::HierarchicalEmpirical => "hierarchical_empirical",
            TestMethod::HierarchicalScrambled => "hierarchical_scrambled",
        }
    }
}

impl std::str::FromStr for TestMethod {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim() {
            "bonferroni" => Ok(TestMethod::Bonferroni),
            "hierarchical_oracle" | "oracle" => Ok(TestMethod::HierarchicalOracle),
            "hierarchical_empirical" | "empirical" => Ok(TestMethod::HierarchicalEmpirical),
            "hierarchical_scrambled" | "scrambled" => Ok(TestMethod::HierarchicalScrambled),
            o => Err(format!("unknown test method {o:?}")),
        }
    }
}

/// Networks simulated by the testing study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TestingScenario {
    /// `M - 1` copies of Network 1 and one Network 3.
    #[default]
    Benchmark,
    /// No edges at all.
    AllNull,
}

/// Settings of both studies; each reads the fields it needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub p: usize,
    pub motif_size: usize,
    /// Networks of the estimation study, one per experiment.
    pub networks: Vec<BenchmarkNetwork>,
    /// Estimation: one horizon per network. Testing: one horizon shared by
    /// all experiments, or one per experiment when `ms` has a single entry.
    pub horizons: Vec<f64>,
    /// Numbers of experiments of the testing study.
    pub ms: Vec<usize>,
    pub replications: usize,
    /// Replication `r` simulates with seed `seed + r`.
    pub seed: u64,
    pub strategies: Vec<WeightStrategy>,
    pub fusion: Vec<FusionStrength>,
    pub grid_size: usize,
    pub grid_lo: f64,
    pub grid_hi: f64,
    /// Threshold of the estimates on the selection curve.
    pub curve_tau: TauRule,
    /// Threshold of the eBIC-selected estimate.
    pub tau: TauRule,
    pub ebic_gamma: f64,
    pub solver: SolverConfig,
    pub bin_width: f64,
    pub max_lag: usize,
    pub rule: ThresholdRule,
    pub alpha: f64,
    pub node_test: NodeTest,
    pub methods: Vec<TestMethod>,
    pub scenario: TestingScenario,
    pub decorrelation: Decorrelation,
    /// Share of failed replications above which a study aborts.
    pub max_failure_rate: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            p: 20,
            motif_size: 5,
            networks: vec![
                BenchmarkNetwork::One,
                BenchmarkNetwork::Two,
                BenchmarkNetwork::Three,
            ],
            horizons: vec![200.0, 500.0, 300.0],
            ms: vec![1, 5, 10, 20],
            replications: 20,
            seed: 0,
            strategies: vec![
                WeightStrategy::Oracle,
                WeightStrategy::Empirical,
                WeightStrategy::Uniform,
                WeightStrategy::Separate,
            ],
            fusion: vec![FusionStrength::Weak, FusionStrength::Strong],
            grid_size: 10,
            grid_lo: 1e-3,
            grid_hi: 1.0,
            curve_tau: TauRule::Fixed { tau: 0.0 },
            tau: TauRule::default(),
            ebic_gamma: 1.0,
            solver: SolverConfig::default(),
            bin_width: DEFAULT_BIN_WIDTH,
            max_lag: DEFAULT_MAX_LAG,
            rule: ThresholdRule::default(),
            alpha: 0.05,
            node_test: NodeTest::Sum,
            methods: vec![
                TestMethod::Bonferroni,
                TestMethod::HierarchicalOracle,
                TestMethod::HierarchicalEmpirical,
            ],
            scenario: TestingScenario::Benchmark,
            decorrelation: Decorrelation::Auto,
            max_failure_rate: 0.2,
        }
    }
}

impl BenchConfig {
    /// Desk-scale defaults of the testing study: `p = 10`, `T = 2000`, 200 runs.
    pub fn testing() -> Self {
        Self {
            p: 10,
            horizons: vec![2000.0],
            replications: 200,
            ..Self::default()
        }
    }

    /// Full-scale settings: `p = 100`, 100 estimation runs.
    pub fn full_estimation() -> Self {
        Self {
            p: 100,
            replications: 100,
            ..Self::default()
        }
    }

    /// Full-scale testing: `p = 100`, 1000 runs.
    pub fn full_testing() -> Self {
        Self {
            p: 100,
            replications: 1000,
            ..Self::testing()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return domain("replication count must be at least 1");
        }
        if self.p == 0 || self.motif_size < 3 || self.p % self.motif_size != 0 {
            return domain(format!(
                "p = {} must be a positive multiple of the motif size {}",
                self.p, self.motif_size
            ));
        }
        if self.horizons.is_empty() || self.horizons.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return domain("horizons must be positive");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return domain("alpha must lie in (0, 1)");
        }
        if self.grid_size == 0 || !(self.grid_lo > 0.0 && self.grid_lo <= self.grid_hi) {
            return domain("grid needs at least one point and 0 < lo <= hi");
        }
        if !(0.0..=1.0).contains(&self.ebic_gamma) {
            return domain("eBIC gamma must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.max_failure_rate) {
            return domain("failure rate must lie in [0, 1]");
        }
        self.curve_tau.validate()?;
        self.tau.validate()?;
        self.rule.validate()?;
        self.solver.validate()
    }

    fn validate_estimation(&self) -> Result<()> {
        self.validate()?;
        if self.strategies.is_empty() {
            return domain("no weight strategy selected");
        }
        if self.networks.is_empty() {
            return domain("no network selected");
        }
        if self.horizons.len() != self.networks.len() {
            return domain(format!(
                "{} horizons for {} networks",
                self.horizons.len(),
                self.networks.len()
            ));
        }
        let fused = self
            .strategies
            .iter()
            .any(|s| *s != WeightStrategy::Separate);
        if fused && self.fusion.is_empty() {
            return domain("no fusion strength selected");
        }
        Ok(())
    }

    fn validate_testing(&self) -> Result<()> {
        self.validate()?;
        if self.methods.is_empty() {
            return domain("no test method selected");
        }
        if self.ms.is_empty() || self.ms.contains(&0) {
            return domain("numbers of experiments must be positive");
        }
        if self.horizons.len() != 1 && !(self.ms.len() == 1 && self.horizons.len() == self.ms[0]) {
            return domain("give one shared horizon, or one per experiment with a single M");
        }
        Ok(())
    }

    fn testing_horizons(&self, m: usize) -> Vec<f64> {
        if self.horizons.len() == m && self.ms.len() == 1 {
            self.horizons.clone()
        } else {
            vec![self.horizons[0]; m]
        }
    }
}

/// Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn from_samples(x: &[f64]) -> Self {
        let n = x.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                stderr: f64::NAN,
            };
        }
        let mean = x.iter().sum::<f64>() / n as f64;
        let stderr = if n > 1 {
            (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / ((n - 1) * n) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, stderr }
    }
}

/// One point of a selection curve, averaged over replications.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub rho1: f64,
    pub rho2: f64,
    pub tp: Estimate,
    pub fp: Estimate,
}

/// Curve of one weight strategy at one fusion strength.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyCurve {
    pub strategy: WeightStrategy,
    /// `None` for separate estimation.
    pub fusion: Option<FusionStrength>,
    /// In grid order (decreasing `rho1`); `rho1`, `rho2` are means over runs.
    pub points: Vec<CurvePoint>,
    pub auc: Estimate,
    /// Per-replication AUC, keyed by position in `seeds`.
    pub auc_runs: Vec<f64>,
    /// The eBIC-selected estimate, thresholded with the selection rule.
    pub selected: CurvePoint,
    pub selected_f1: Estimate,
    /// Replications averaged over.
    pub seeds: Vec<u64>,
    /// Fits on the path that hit the iteration limit, over all replications.
    pub nonconverged_fits: usize,
    /// Replications excluded because a fit failed to converge.
    pub excluded: usize,
}

impl StrategyCurve {
    pub fn label(&self) -> String {
        match self.fusion {
            Some(f) => format!("{}/{}", self.strategy.name(), f.name()),
            None => self.strategy.name().to_string(),
        }
    }
}

/// Power, FWER and FDR of one method at one `M`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestingPoint {
    pub method: TestMethod,
    pub m: usize,
    pub power: Estimate,
    pub fwer: Estimate,
    pub fdr: Estimate,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct BenchReport {
    pub p: usize,
    /// Nonzero entries over all true networks of the estimation study.
    pub true_edges: usize,
    pub estimation: Vec<StrategyCurve>,
    pub testing: Vec<TestingPoint>,
}

impl BenchReport {
    pub fn curve(
        &self,
        strategy: WeightStrategy,
        fusion: Option<FusionStrength>,
    ) -> Option<&StrategyCurve> {
        self.estimation
            .iter()
            .find(|c| c.strategy == strategy && c.fusion == fusion)
    }

    pub fn testing_point(&self, method: TestMethod, m: usize) -> Option<&TestingPoint> {
        self.testing.iter().find(|t| t.method == method && t.m == m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn estimate_moments() {
        let e = Estimate::from_samples(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(e.mean, 2.5);
        assert!((e.stderr - (5.0f64 / 12.0).sqrt()).abs() < 1e-12);
        assert_eq!(Estimate::from_samples(&[3.0]).stderr, 0.0);
    }

    #[test]
    fn config_validation() {
        assert!(BenchConfig::default().validate_estimation().is_ok());
        assert!(BenchConfig::testing().validate_testing().is_ok());
        let bad = BenchConfig {
            replications: 0,
            ..BenchConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = BenchConfig {
            strategies: vec![],
            ..BenchConfig::default()
        };
        assert!(bad.validate_estimation().is_err());
        let bad = BenchConfig {
            p: 12,
            ..BenchConfig::default()
        };
        assert!(bad.validate().is_err());
        let json = serde_json::to_string(&BenchConfig::default()).unwrap();
        assert_eq!(
            serde_json::from_str::<BenchConfig>(&json).unwrap(),
            BenchConfig::default()
        );
        let partial: BenchConfig =
            serde_json::from_str(r#"{"p": 10, "horizons": [100, 100, 100]}"#).unwrap();
        assert_eq!(partial.replications, 20);
    }

    #[test]
    fn names_parse_back() {
        for s in [
            WeightStrategy::Oracle,
            WeightStrategy::Empirical,
            WeightStrategy::Uniform,
            WeightStrategy::Separate,
        ] {
            assert_eq!(s.name().parse::<WeightStrategy>().unwrap(), s);
        }
        for f in [
            FusionStrength::Weak,
            FusionStrength::Strong,
            FusionStrength::SqrtM,
        ] {
            assert_eq!(f.name().parse::<FusionStrength>().unwrap(), f);
        }
        assert_eq!(FusionStrength::SqrtM.ratio(4), 2.0);
    }
}
