//! Transition kernels and link functions.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Transition kernel `kappa(t)` for `t > 0`.
///
/// The exponential kernel is `exp(-rate * t)`, so its integral is `1 / rate`.
/// A tabulated kernel is linearly interpolated between its grid points and is
/// zero beyond the last one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Kernel {
    Exponential { rate: f64 },
    Tabulated { grid: Vec<f64>, values: Vec<f64> },
}

impl Kernel {
    pub fn exponential(rate: f64) -> Result<Self> {
        let k = Kernel::Exponential { rate };
        k.validate()?;
        Ok(k)
    }

    pub fn tabulated(grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let k = Kernel::Tabulated { grid, values };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Kernel::Exponential { rate } => {
                if !(rate.is_finite() && *rate > 0.0) {
                    return domain(format!(
                        "exponential kernel rate must be positive, got {rate}"
                    ));
                }
            }
            Kernel::Tabulated { grid, values } => {
                if grid.len() < 2 || grid.len() != values.len() {
                    return domain(
                        "tabulated kernel needs at least two grid points and matching values",
                    );
                }
                if grid[0] < 0.0 || grid.windows(2).any(|w| w[1] <= w[0]) {
                    return domain(
                        "tabulated kernel grid must be nonnegative and strictly increasing",
                    );
                }
                if values.iter().chain(grid.iter()).any(|v| !v.is_finite()) {
                    return domain("tabulated kernel must be finite");
                }
            }
        }
        Ok(())
    }

    /// Evaluates the kernel at lag `t`; zero for negative lags.
    pub fn eval(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        match self {
            Kernel::Exponential { rate } => (-rate * t).exp(),
            Kernel::Tabulated { grid, values } => {
                let last = grid.len() - 1;
                if t < grid[0] || t > grid[last] {
                    return 0.0;
                }
                let k = grid.partition_point(|&g| g <= t).min(last).max(1);
                let (g0, g1) = (grid[k - 1], grid[k]);
                let w = (t - g0) / (g1 - g0);
                values[k - 1] * (1.0 - w) + values[k] * w
            }
        }
    }

    /// `\int_0^\infty kappa(t) dt`.
    pub fn integral(&self) -> f64 {
        match self {
            Kernel::Exponential { rate } => 1.0 / rate,
            Kernel::Tabulated { grid, values } => grid
                .windows(2)
                .zip(values.windows(2))
                .map(|(g, v)| 0.5 * (g[1] - g[0]) * (v[0] + v[1]))
                .sum(),
        }
    }

    /// `\int_0^\infty |kappa(t)| dt`, used by the stability check.
    pub fn abs_integral(&self) -> f64 {
        match self {
            Kernel::Exponential { rate } => 1.0 / rate,
            Kernel::Tabulated { grid, values } => {
                // split segments that cross zero so the trapezoid is exact
                let mut total = 0.0;
                for (g, v) in grid.windows(2).zip(values.windows(2)) {
                    let h = g[1] - g[0];
                    if v[0] * v[1] >= 0.0 {
                        total += 0.5 * h * (v[0].abs() + v[1].abs());
                    } else {
                        let z = h * v[0].abs() / (v[0].abs() + v[1].abs());
                        total += 0.5 * z * v[0].abs() + 0.5 * (h - z) * v[1].abs();
                    }
                }
                total
            }
        }
    }

    /// Lag beyond which the kernel is identically zero, if any.
    pub fn support_end(&self) -> Option<f64> {
        match self {
            Kernel::Exponential { .. } => None,
            Kernel::Tabulated { grid, .. } => grid.last().copied(),
        }
    }

    /// Range `(min, max)` of the kernel values over its support.
    pub fn value_range(&self) -> (f64, f64) {
        match self {
            Kernel::Exponential { .. } => (0.0, 1.0),
            Kernel::Tabulated { values, .. } => values
                .iter()
                .fold((0.0f64, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v))),
        }
    }

    pub fn decay_rate(&self) -> Option<f64> {
        match self {
            Kernel::Exponential { rate } => Some(*rate),
            Kernel::Tabulated { .. } => None,
        }
    }

    /// Default simulation burn-in: ten decay times, or ten support lengths.
    pub fn default_burn_in(&self) -> f64 {
        match self {
            Kernel::Exponential { rate } => 10.0 / rate,
            Kernel::Tabulated { grid, .. } => 10.0 * grid[grid.len() - 1],
        }
    }
}

/// Link function `g` in `lambda = g(mu + x' beta)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    Linear,
    RectifiedLinear,
    Exponential,
}

impl Link {
    /// Intensity for a linear predictor `eta`. The linear link is clamped at
    /// zero, which makes it identical to the rectified-linear link here.
    pub fn apply(self, eta: f64) -> Result<f64> {
        let v = match self {
            Link::Linear | Link::RectifiedLinear => eta.max(0.0),
            Link::Exponential => eta.exp(),
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Overflow(format!(
                "intensity is not finite for linear predictor {eta}"
            )))
        }
    }

    pub fn is_linear(self) -> bool {
        matches!(self, Link::Linear | Link::RectifiedLinear)
    }
}

impl std::str::FromStr for Link {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Link::Linear),
            "relu" | "rectified" | "rectified_linear" | "rectified-linear" => {
                Ok(Link::RectifiedLinear)
            }
            "exp" | "exponential" => Ok(Link::Exponential),
            other => domain(format!(
                "unknown link '{other}' (expected linear, relu or exp)"
            )),
        }
    }
}
