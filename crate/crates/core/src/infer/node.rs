//! P-values of the global null at a node `L` of the tree.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};
use statrs::function::gamma::ln_gamma;

/// Node sets up to this size use the exact independent-normal form of the
/// max test instead of its Gumbel limit.
pub const MAX_TEST_EXACT_LIMIT: usize = 10;

/// Default shape constant of the Gumbel normalization for maxima of `V^2`.
pub const DEFAULT_GUMBEL_D: f64 = 0.5;

/// Test of `H: beta^(m) = 0 for all m in L`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum NodeTest {
    /// `sum V^2` against chi-square with `|L|` degrees of freedom.
    Sum,
    /// `max V^2` against its Gumbel limit with shape constant `d`.
    Max { d: f64 },
}

impl Default for NodeTest {
    fn default() -> Self {
        NodeTest::Sum
    }
}

impl std::str::FromStr for NodeTest {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim() {
            "sum" => Ok(NodeTest::Sum),
            "max" => Ok(NodeTest::Max {
                d: DEFAULT_GUMBEL_D,
            }),
            other => match other.strip_prefix("max:") {
                Some(d) => d
                    .parse::<f64>()
                    .ok()
                    .filter(|d| *d > 0.0)
                    .map(|d| NodeTest::Max { d })
                    .ok_or_else(|| format!("bad Gumbel constant in {other:?}")),
                None => Err(format!(
                    "unknown node test {other:?}; use sum, max or max:<d>"
                )),
            },
        }
    }
}

impl NodeTest {
    pub fn pvalue(&self, v: &[f64]) -> f64 {
        match *self {
            NodeTest::Sum => node_pvalue_sum(v),
            NodeTest::Max { d } => node_pvalue_max_with(v, d),
        }
    }
}

/// Two-sided standard normal p-value.
pub fn normal_pvalue(v: f64) -> f64 {
    let n = Normal::standard();
    (2.0 * n.sf(v.abs())).min(1.0)
}

/// Upper chi-square tail with `|L|` degrees of freedom at `sum V^2`.
pub fn node_pvalue_sum(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 1.0;
    }
    let u: f64 = v.iter().map(|x| x * x).sum();
    if u == 0.0 {
        return 1.0;
    }
    ChiSquared::new(v.len() as f64)
        .expect("positive degrees of freedom")
        .sf(u)
}

/// [`node_pvalue_max_with`] at the default constant.
pub fn node_pvalue_max(v: &[f64]) -> f64 {
    node_pvalue_max_with(v, DEFAULT_GUMBEL_D)
}

/// Max test. For `|L| <= 10` the exact form `1 - (1 - p_max)^|L|`, with
/// `p_max` the normal p-value of the largest `|V|`; above, the Gumbel limit
/// `1 - exp(-exp(-(max V^2 - b) / 2))` with
/// `b = 2 (ln n + (d - 1) ln ln n - ln Gamma(d))`.
pub fn node_pvalue_max_with(v: &[f64], d: f64) -> f64 {
    let n = v.len();
    if n == 0 {
        return 1.0;
    }
    let vmax = v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    if n <= MAX_TEST_EXACT_LIMIT {
        let p1 = normal_pvalue(vmax);
        // 1 - (1 - p)^n without cancellation for tiny p
        return -(n as f64 * (-p1).ln_1p()).exp_m1();
    }
    let nf = n as f64;
    let b = 2.0 * (nf.ln() + (d - 1.0) * nf.ln().ln() - ln_gamma(d));
    let x = -0.5 * (vmax * vmax - b);
    -(-x.exp()).exp_m1()
}
