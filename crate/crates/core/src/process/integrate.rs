//! Integrated process `x_j(t) = sum_{t_jk < t} kappa(t - t_jk)` and the
//! time integrals built from it.
//!
//! Exponential kernels are handled exactly: between consecutive events every
//! coordinate of `x` decays as `exp(-rate * s)`, so products of coordinates
//! integrate in closed form. Other kernels use trapezoidal quadrature on an
//! event-augmented grid whose nodes carry left and right limits at events.

use nalgebra::{DMatrix, DVector};

use super::events::{EventStream, ExperimentData};
use super::kernel::Kernel;
use crate::error::{domain, Result};

/// Upper bound on quadrature nodes per experiment.
pub const MAX_GRID_POINTS: usize = 1_000_000;

/// `x(t)` for one stream. Events at exactly `t` are excluded (left limit).
pub fn integrated_process(events: &EventStream, kernel: &Kernel, t: f64) -> Result<f64> {
    if !(0.0..=events.horizon()).contains(&t) {
        return domain(format!("t = {t} outside [0, {}]", events.horizon()));
    }
    Ok(events.before(t).iter().map(|&s| kernel.eval(t - s)).sum())
}

/// `x(t)` for every unit at every grid time; column `k` is `x(grid[k])`.
pub fn integrated_path(
    exp: &ExperimentData,
    kernel: &Kernel,
    grid: &[f64],
) -> Result<DMatrix<f64>> {
    if grid.windows(2).any(|w| w[1] < w[0]) {
        return domain("grid must be sorted");
    }
    if grid.iter().any(|&t| !(0.0..=exp.horizon()).contains(&t)) {
        return domain("grid must lie within the experiment horizon");
    }
    let p = exp.num_units();
    let mut out = DMatrix::zeros(p, grid.len());
    match kernel {
        Kernel::Exponential { rate } => {
            for (u, stream) in exp.streams().iter().enumerate() {
                let times = stream.times();
                let (mut x, mut last, mut next) = (0.0, 0.0, 0usize);
                for (k, &t) in grid.iter().enumerate() {
                    x *= (-rate * (t - last)).exp();
                    while next < times.len() && times[next] < t {
                        x += (-rate * (t - times[next])).exp();
                        next += 1;
                    }
                    last = t;
                    out[(u, k)] = x;
                }
            }
        }
        Kernel::Tabulated { .. } => {
            for (u, stream) in exp.streams().iter().enumerate() {
                let mut window = Window::new(stream.times(), kernel);
                for (k, &t) in grid.iter().enumerate() {
                    out[(u, k)] = window.value(t, false);
                }
            }
        }
    }
    Ok(out)
}

/// Sliding sum over the events that fall inside a finite kernel support.
struct Window<'a> {
    times: &'a [f64],
    kernel: &'a Kernel,
    support: f64,
    lo: usize,
    hi: usize,
}

impl<'a> Window<'a> {
    fn new(times: &'a [f64], kernel: &'a Kernel) -> Self {
        let support = kernel.support_end().unwrap_or(f64::INFINITY);
        Self {
            times,
            kernel,
            support,
            lo: 0,
            hi: 0,
        }
    }

    /// `x` at `t` for nondecreasing `t`; `inclusive` adds events at exactly `t`
    /// (the right limit).
    fn value(&mut self, t: f64, inclusive: bool) -> f64 {
        while self.hi < self.times.len()
            && (self.times[self.hi] < t || (inclusive && self.times[self.hi] == t))
        {
            self.hi += 1;
        }
        while self.lo < self.hi && t - self.times[self.lo] > self.support {
            self.lo += 1;
        }
        self.times[self.lo..self.hi]
            .iter()
            .map(|&s| self.kernel.eval(t - s))
            .sum()
    }
}

/// Distinct event times of an experiment, each with the units firing there.
pub(crate) fn event_groups(exp: &ExperimentData) -> Vec<(f64, Vec<usize>)> {
    let mut groups: Vec<(f64, Vec<usize>)> = Vec::new();
    for (t, u) in exp.merged() {
        match groups.last_mut() {
            Some((last, units)) if *last == t => units.push(u),
            _ => groups.push((t, vec![u])),
        }
    }
    groups
}

/// One inter-event segment of length `len` for an exponential kernel, with
/// `x` evaluated at the right limit of its start.
pub(crate) struct Segment<'a> {
    pub len: f64,
    pub x0: &'a DVector<f64>,
}

/// Walks the inter-event segments of `[0, T]` for an exponential kernel.
///
/// `on_event(t, units, x_left)` fires at each distinct event time with `x`
/// at the left limit, before the events are added; `on_segment` fires for
/// every segment of positive length.
pub(crate) fn walk_exponential(
    exp: &ExperimentData,
    rate: f64,
    mut on_event: impl FnMut(f64, &[usize], &DVector<f64>),
    mut on_segment: impl FnMut(Segment<'_>),
) {
    let p = exp.num_units();
    let mut x = DVector::zeros(p);
    let mut last = 0.0;
    for (t, units) in event_groups(exp) {
        let len = t - last;
        if len > 0.0 {
            on_segment(Segment { len, x0: &x });
            x *= (-rate * len).exp();
        }
        on_event(t, &units, &x);
        for &u in &units {
            x[u] += 1.0;
        }
        last = t;
    }
    let len = exp.horizon() - last;
    if len > 0.0 {
        on_segment(Segment { len, x0: &x });
    }
}

/// `\int_0^L exp(-k * rate * s) ds`.
#[inline]
pub(crate) fn decay_integral(rate: f64, k: f64, len: f64) -> f64 {
    let a = k * rate;
    if a * len < 1e-8 {
        len * (1.0 - 0.5 * a * len)
    } else {
        -(-a * len).exp_m1() / a
    }
}

/// Quadrature nodes over `[0, T]` with the regressor `z(t) = (1, x(t))`.
///
/// Nodes at event times appear twice (left and right limits) so the
/// trapezoid never straddles a jump.
#[derive(Debug, Clone)]
pub struct QuadratureGrid {
    /// Row `k` is `z` at node `k`.
    pub z: DMatrix<f64>,
    pub weights: DVector<f64>,
}

impl QuadratureGrid {
    /// Builds the grid with pieces no wider than `max_step`.
    pub fn build(exp: &ExperimentData, kernel: &Kernel, max_step: f64) -> Result<Self> {
        if !(max_step.is_finite() && max_step > 0.0) {
            return domain("quadrature step must be positive");
        }
        let p = exp.num_units();
        let groups = event_groups(exp);
        let horizon = exp.horizon();

        // breakpoints: 0, event times, T; every piece split to width <= max_step
        let mut breaks: Vec<f64> = Vec::with_capacity(groups.len() + 2);
        breaks.push(0.0);
        breaks.extend(
            groups
                .iter()
                .map(|g| g.0)
                .filter(|&t| t > 0.0 && t < horizon),
        );
        breaks.push(horizon);
        let mut estimate = 0usize;
        for w in breaks.windows(2) {
            estimate += ((w[1] - w[0]) / max_step).ceil() as usize + 1;
        }
        if estimate > MAX_GRID_POINTS {
            return domain(format!(
                "quadrature grid needs {estimate} nodes (cap {MAX_GRID_POINTS}); increase the step"
            ));
        }

        let mut times: Vec<(f64, bool)> = Vec::with_capacity(estimate);
        let mut weights: Vec<f64> = Vec::with_capacity(estimate);
        for w in breaks.windows(2) {
            let (a, b) = (w[0], w[1]);
            if b <= a {
                continue;
            }
            let pieces = ((b - a) / max_step).ceil().max(1.0) as usize;
            let h = (b - a) / pieces as f64;
            // right limit at a, interior points, left limit at b
            times.push((a, true));
            weights.push(0.5 * h);
            for k in 1..pieces {
                times.push((a + k as f64 * h, false));
                weights.push(h);
            }
            times.push((b, false));
            weights.push(0.5 * h);
        }

        let n = times.len();
        let mut z = DMatrix::zeros(n, p + 1);
        z.column_mut(0).fill(1.0);
        for (u, stream) in exp.streams().iter().enumerate() {
            let mut col = z.column_mut(u + 1);
            match kernel {
                Kernel::Exponential { rate } => {
                    let ts = stream.times();
                    let (mut x, mut last, mut next) = (0.0, 0.0, 0usize);
                    for (k, &(t, right)) in times.iter().enumerate() {
                        x *= (-rate * (t - last)).exp();
                        while next < ts.len() && (ts[next] < t || (right && ts[next] == t)) {
                            x += (-rate * (t - ts[next])).exp();
                            next += 1;
                        }
                        last = t;
                        col[k] = x;
                    }
                }
                Kernel::Tabulated { .. } => {
                    let mut window = Window::new(stream.times(), kernel);
                    for (k, &(t, right)) in times.iter().enumerate() {
                        col[k] = window.value(t, right);
                    }
                }
            }
        }
        Ok(Self {
            z,
            weights: DVector::from_vec(weights),
        })
    }

    /// Default step: 1% of the mean inter-event gap, floored so the grid
    /// stays under [`MAX_GRID_POINTS`].
    pub fn default_step(exp: &ExperimentData) -> f64 {
        let n = exp.total_events().max(1) as f64;
        let step = 0.01 * exp.horizon() / n;
        step.max(2.0 * exp.horizon() / MAX_GRID_POINTS as f64)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// `\int z z' dt`.
    pub fn gram(&self) -> DMatrix<f64> {
        let mut wz = self.z.clone();
        for (mut row, &w) in wz.row_iter_mut().zip(self.weights.iter()) {
            row *= w;
        }
        self.z.transpose() * wz
    }
}

/// `x(t-)` of every unit at each event time of `unit`, as rows `(1, x)`.
pub fn event_regressors(
    exp: &ExperimentData,
    kernel: &Kernel,
    unit: usize,
) -> Result<DMatrix<f64>> {
    let times = exp.stream(unit).times().to_vec();
    let path = integrated_path(exp, kernel, &times)?;
    let mut out = DMatrix::zeros(times.len(), exp.num_units() + 1);
    out.column_mut(0).fill(1.0);
    for k in 0..times.len() {
        for u in 0..exp.num_units() {
            out[(k, u + 1)] = path[(u, k)];
        }
    }
    Ok(out)
}

/// The path `z(t)` in a form that supports intensity-weighted integrals:
/// inter-event segments for exponential kernels (exact), quadrature nodes
/// otherwise.
#[derive(Debug, Clone)]
pub enum PathTable {
    Segments {
        rate: f64,
        lens: Vec<f64>,
        /// Row `k` is `x` at the start of segment `k`.
        x0: DMatrix<f64>,
    },
    Grid(QuadratureGrid),
}

impl PathTable {
    pub fn build(exp: &ExperimentData, kernel: &Kernel, step: Option<f64>) -> Result<Self> {
        kernel.validate()?;
        match kernel {
            Kernel::Exponential { rate } => {
                let p = exp.num_units();
                let mut lens = Vec::new();
                let mut flat = Vec::new();
                walk_exponential(
                    exp,
                    *rate,
                    |_, _, _| {},
                    |seg| {
                        lens.push(seg.len);
                        flat.extend_from_slice(seg.x0.as_slice());
                    },
                );
                let x0 = DMatrix::from_row_slice(lens.len(), p, &flat);
                Ok(PathTable::Segments {
                    rate: *rate,
                    lens,
                    x0,
                })
            }
            Kernel::Tabulated { .. } => {
                let step = step.unwrap_or_else(|| QuadratureGrid::default_step(exp));
                Ok(PathTable::Grid(QuadratureGrid::build(exp, kernel, step)?))
            }
        }
    }

    /// Per-piece values of `a' z` for each column `a` of `dirs`: the decaying
    /// part at the segment start, or the node value on a grid.
    pub(crate) fn project(&self, dirs: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            PathTable::Segments { x0, .. } => x0 * dirs.rows(1, dirs.nrows() - 1),
            PathTable::Grid(g) => &g.z * dirs,
        }
    }

    /// `\int (a_j' z)^2 max(b_j' z, 0) dt` for every column `a_j` of `dirs`,
    /// with `b_j` equal to `theta` except for a zero coefficient on regressor
    /// `j + 1`. `proj` is [`PathTable::project`] of `dirs`.
    pub(crate) fn null_weighted_squares(
        &self,
        dirs: &DMatrix<f64>,
        proj: &DMatrix<f64>,
        theta: &DVector<f64>,
    ) -> DVector<f64> {
        let n = dirs.ncols();
        let mut out = DVector::zeros(n);
        match self {
            PathTable::Segments { rate, lens, x0 } => {
                let b1_full = x0 * theta.rows(1, theta.len() - 1);
                for (k, &len) in lens.iter().enumerate() {
                    for j in 0..n {
                        let b1 = b1_full[k] - theta[j + 1] * x0[(k, j)];
                        out[j] +=
                            segment_cubic(dirs[(0, j)], proj[(k, j)], theta[0], b1, *rate, len);
                    }
                }
            }
            PathTable::Grid(g) => {
                let full = &g.z * theta;
                for r in 0..g.len() {
                    for j in 0..n {
                        let lam = (full[r] - theta[j + 1] * g.z[(r, j + 1)]).max(0.0);
                        out[j] += g.weights[r] * proj[(r, j)] * proj[(r, j)] * lam;
                    }
                }
            }
        }
        out
    }
}

/// `\int_0^L (a0 + a1 e^{-ru})^2 max(b0 + b1 e^{-ru}, 0) du`.
fn segment_cubic(a0: f64, a1: f64, b0: f64, b1: f64, rate: f64, len: f64) -> f64 {
    let coef = [
        a0 * a0 * b0,
        a0 * a0 * b1 + 2.0 * a0 * a1 * b0,
        2.0 * a0 * a1 * b1 + a1 * a1 * b0,
        a1 * a1 * b1,
    ];
    let piece = |u1: f64, u2: f64| -> f64 {
        coef.iter()
            .enumerate()
            .map(|(k, c)| {
                c * (-(k as f64) * rate * u1).exp() * decay_integral(rate, k as f64, u2 - u1)
            })
            .sum()
    };
    let start = b0 + b1;
    let end = b0 + b1 * (-rate * len).exp();
    match (start >= 0.0, end >= 0.0) {
        (true, true) => piece(0.0, len),
        (false, false) => 0.0,
        (pos_start, _) => {
            // b(u) = 0 at exp(-r u) = -b0 / b1
            let cross = ((-b0 / b1).ln() / -rate).clamp(0.0, len);
            if pos_start {
                piece(0.0, cross)
            } else {
                piece(cross, len)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn exp1() -> Kernel {
        Kernel::exponential(1.0).unwrap()
    }

    #[test]
    fn single_event_closed_form() {
        let s = EventStream::new(vec![1.0], 3.0).unwrap();
        let v = integrated_process(&s, &exp1(), 2.0).unwrap();
        assert!((v - 0.367879).abs() < 1e-6);
        assert!((v - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn empty_history_is_zero() {
        let s = EventStream::empty(3.0).unwrap();
        assert_eq!(integrated_process(&s, &exp1(), 2.5).unwrap(), 0.0);
    }

    #[test]
    fn two_events_sum() {
        let s = EventStream::new(vec![0.5, 1.5], 3.0).unwrap();
        let v = integrated_process(&s, &exp1(), 2.0).unwrap();
        assert!((v - ((-1.5f64).exp() + (-0.5f64).exp())).abs() < 1e-15);
        assert!((v - 0.829653).abs() < 1e-5);
    }

    #[test]
    fn left_limit_excludes_event_at_t() {
        let s = EventStream::new(vec![1.0, 2.0], 3.0).unwrap();
        let v = integrated_process(&s, &exp1(), 2.0).unwrap();
        assert!((v - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn outside_horizon_is_error() {
        let s = EventStream::new(vec![1.0], 3.0).unwrap();
        assert!(integrated_process(&s, &exp1(), 3.5).is_err());
        assert!(integrated_process(&s, &exp1(), -0.1).is_err());
    }

    #[test]
    fn path_examples() {
        let e = ExperimentData::from_times(vec![vec![1.0]], 3.0).unwrap();
        let m = integrated_path(&e, &exp1(), &[0.5, 2.0]).unwrap();
        assert_eq!(m[(0, 0)], 0.0);
        assert!((m[(0, 1)] - (-1.0f64).exp()).abs() < 1e-15);
        assert!(integrated_path(&e, &exp1(), &[2.0, 0.5]).is_err());
        let empty = ExperimentData::empty(3, 5.0).unwrap();
        let z = integrated_path(&empty, &exp1(), &[0.0, 1.0, 4.0]).unwrap();
        assert!(z.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn recursion_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let p = rng.random_range(1..4);
            let horizon = 20.0;
            let times: Vec<Vec<f64>> = (0..p)
                .map(|_| {
                    (0..rng.random_range(0..30))
                        .map(|_| rng.random::<f64>() * horizon)
                        .collect()
                })
                .collect();
            let e = ExperimentData::from_times(times, horizon).unwrap();
            let rate = rng.random_range(0.2..3.0);
            let k = Kernel::exponential(rate).unwrap();
            let mut grid: Vec<f64> = (0..25).map(|_| rng.random::<f64>() * horizon).collect();
            grid.sort_by(f64::total_cmp);
            let path = integrated_path(&e, &k, &grid).unwrap();
            for (c, &t) in grid.iter().enumerate() {
                for u in 0..p {
                    let direct = integrated_process(e.stream(u), &k, t).unwrap();
                    assert!((path[(u, c)] - direct).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn tabulated_path_matches_direct_sum() {
        let k = Kernel::tabulated(vec![0.0, 0.5, 2.0], vec![1.0, 0.8, 0.0]).unwrap();
        let e = ExperimentData::from_times(vec![vec![0.2, 1.0, 1.1, 4.0]], 6.0).unwrap();
        let grid = [0.0, 0.2, 0.7, 1.1, 2.5, 3.5, 4.0, 5.9];
        let path = integrated_path(&e, &k, &grid).unwrap();
        for (c, &t) in grid.iter().enumerate() {
            let direct = integrated_process(e.stream(0), &k, t).unwrap();
            assert!((path[(0, c)] - direct).abs() < 1e-14);
        }
    }

    #[test]
    fn grid_gram_approximates_exact_segments() {
        let e = ExperimentData::from_times(vec![vec![1.0, 2.5], vec![0.5, 3.0]], 5.0).unwrap();
        let g = QuadratureGrid::build(&e, &exp1(), 1e-3).unwrap();
        let q = g.gram();
        assert!((q[(0, 0)] - 5.0).abs() < 1e-12);
        let mut exact = 0.0;
        walk_exponential(
            &e,
            1.0,
            |_, _, _| {},
            |s| exact += s.x0[0] * decay_integral(1.0, 1.0, s.len),
        );
        assert!((q[(0, 1)] - exact).abs() < 1e-6);
    }

    #[test]
    fn event_regressors_use_left_limits() {
        let e = ExperimentData::from_times(vec![vec![1.0, 2.0], vec![1.0]], 3.0).unwrap();
        let r = event_regressors(&e, &exp1(), 0).unwrap();
        assert_eq!(r[(0, 1)], 0.0);
        assert_eq!(r[(0, 2)], 0.0);
        assert!((r[(1, 1)] - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn weighted_squares_match_fine_grid() {
        let exp = ExperimentData::from_times(
            vec![vec![0.5, 2.0, 2.1, 7.0], vec![1.0, 4.5], vec![3.3]],
            10.0,
        )
        .unwrap();
        let k = Kernel::exponential(1.3).unwrap();
        let exact = PathTable::build(&exp, &k, None).unwrap();
        let fine = PathTable::Grid(QuadratureGrid::build(&exp, &k, 1e-4).unwrap());
        let dirs = DMatrix::from_row_slice(
            4,
            3,
            &[
                0.3, -0.2, 1.0, 1.0, 0.5, -0.4, -0.7, 1.0, 0.2, 0.1, 0.3, 1.0,
            ],
        );
        // intercept 0.05 with a negative coefficient so the intensity crosses zero
        let theta = DVector::from_vec(vec![0.05, 0.4, -0.3, 0.2]);
        let a = exact.null_weighted_squares(&dirs, &exact.project(&dirs), &theta);
        let b = fine.null_weighted_squares(&dirs, &fine.project(&dirs), &theta);
        for j in 0..3 {
            assert!(
                (a[j] - b[j]).abs() < 1e-6 * b[j].abs().max(1.0),
                "{j}: {} vs {}",
                a[j],
                b[j]
            );
        }
    }
}
