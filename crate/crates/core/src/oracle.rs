//! An independent check of the chain trick: the history integrals are
//! computed by quadrature over periodic data and compared with the chain
//! coordinates, and candidate solutions are substituted back into the
//! original second order equation.

use thiserror::Error;

use crate::chain::{expand, ChainError, ProblemSpec};
use crate::kernel::Compensated;
use crate::orbit::{trajectory, OrbitError, StartingPoint, Trajectory, SAMPLES_PER_PERIOD};

/// Tail mass dropped when the history integral is truncated.
pub const TAIL_MASS: f64 = 1e-12;
/// Simpson panels over the truncated history.
pub const HISTORY_PANELS: usize = 4096;
/// Test times per period, aligned with every eighth sample.
pub const TEST_TIMES: usize = 64;
const LIFT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrackError {
    #[error("a periodic track needs at least 5 samples, got {0}")]
    TooShort(usize),
    #[error("track period must be positive and finite, got {0}")]
    Period(f64),
    #[error("track sample {0} is not finite")]
    NonFinite(usize),
}

/// A T-periodic scalar function known on `n` uniform points of `[0, T)`.
/// Evaluation interpolates with the periodic cubic through the four nearest
/// samples.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicTrack {
    period: f64,
    samples: Vec<f64>,
}

impl PeriodicTrack {
    pub fn new(period: f64, samples: Vec<f64>) -> Result<Self, TrackError> {
        if !(period.is_finite() && period > 0.0) {
            return Err(TrackError::Period(period));
        }
        if samples.len() < 5 {
            return Err(TrackError::TooShort(samples.len()));
        }
        if let Some(k) = samples.iter().position(|x| !x.is_finite()) {
            return Err(TrackError::NonFinite(k));
        }
        Ok(PeriodicTrack { period, samples })
    }

    /// Samples `f` on `n` uniform points of `[0, T)`.
    pub fn from_fn(period: f64, n: usize, f: impl Fn(f64) -> f64) -> Result<Self, TrackError> {
        PeriodicTrack::new(period, (0..n).map(|k| f(period * k as f64 / n as f64)).collect())
    }

    /// Coordinate `coord` of a one-period trajectory sampled at uniform
    /// times, dropping the closing sample at `t = T`.
    pub fn from_trajectory(traj: &Trajectory, coord: usize) -> Result<Self, TrackError> {
        let n = traj.times.len() - 1;
        let period = traj.times[n] - traj.times[0];
        PeriodicTrack::new(period, traj.states[..n].iter().map(|s| s[coord]).collect())
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    fn spacing(&self) -> f64 {
        self.period / self.samples.len() as f64
    }

    fn at(&self, k: i64) -> f64 {
        self.samples[k.rem_euclid(self.samples.len() as i64) as usize]
    }

    pub fn eval(&self, t: f64) -> f64 {
        let h = self.spacing();
        let s = t.rem_euclid(self.period) / h;
        let k = s.floor();
        let x = s - k;
        let k = k as i64;
        let (p0, p1, p2, p3) = (self.at(k - 1), self.at(k), self.at(k + 1), self.at(k + 2));
        // Lagrange cubic on nodes -1, 0, 1, 2
        -x * (x - 1.0) * (x - 2.0) / 6.0 * p0 + (x + 1.0) * (x - 1.0) * (x - 2.0) / 2.0 * p1
            - (x + 1.0) * x * (x - 2.0) / 2.0 * p2
            + (x + 1.0) * x * (x - 1.0) / 6.0 * p3
    }

    /// Fourth order central differences on the sample grid.
    pub fn derivative(&self) -> PeriodicTrack {
        let h = self.spacing();
        let samples = (0..self.samples.len() as i64)
            .map(|k| (-self.at(k + 2) + 8.0 * self.at(k + 1) - 8.0 * self.at(k - 1) + self.at(k - 2)) / (12.0 * h))
            .collect();
        PeriodicTrack {
            period: self.period,
            samples,
        }
    }

    fn map2(&self, other: &PeriodicTrack, f: impl Fn(f64, f64) -> Result<f64, ChainError>) -> Result<PeriodicTrack, ChainError> {
        assert_eq!(self.samples.len(), other.samples.len(), "tracks must share a grid");
        let samples = self.samples.iter().zip(&other.samples).map(|(a, b)| f(*a, *b)).collect::<Result<_, _>>()?;
        Ok(PeriodicTrack {
            period: self.period,
            samples,
        })
    }
}

/// Simpson nodes and kernel-weighted coefficients for
/// `∫_0^H γ_a^i(s) z(t - s) ds`; independent of `t` and `z`.
struct HistoryRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl HistoryRule {
    fn new(p: &ProblemSpec, i: u32, horizon_scale: f64) -> Self {
        let kernel = p.kernel().with_shape(i).expect("shape is at least 1");
        let horizon = horizon_scale * kernel.tail_horizon(TAIL_MASS);
        let panels = (horizon_scale * HISTORY_PANELS as f64).round() as usize;
        let h = horizon / (2 * panels) as f64;
        let nodes: Vec<f64> = (0..=2 * panels).map(|j| j as f64 * h).collect();
        let weights = nodes
            .iter()
            .enumerate()
            .map(|(j, s)| {
                let w = if j == 0 || j == 2 * panels {
                    1.0
                } else if j % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                w * h / 3.0 * kernel.eval(*s)
            })
            .collect();
        HistoryRule { nodes, weights }
    }

    fn apply(&self, z: &PeriodicTrack, t: f64) -> f64 {
        let mut acc = Compensated::default();
        for (s, w) in self.nodes.iter().zip(&self.weights) {
            acc.add(w * z.eval(t - s));
        }
        acc.value()
    }
}

/// `∫_0^H γ_a^i(s) z(t - s) ds` for a periodic `z`.
fn convolve(p: &ProblemSpec, z: &PeriodicTrack, i: u32, t: f64, horizon_scale: f64) -> f64 {
    HistoryRule::new(p, i, horizon_scale).apply(z, t)
}

fn history_track(p: &ProblemSpec, x: &PeriodicTrack, xdot: &PeriodicTrack) -> Result<PeriodicTrack, ChainError> {
    x.map2(xdot, |a, b| p.phi(a, b))
}

/// `y_i(t) = ∫_{-∞}^t γ_a^i(t - s) φ(x(s), x'(s)) ds` for T-periodic `x`,
/// truncated where the kernel's tail mass drops below 1e-12.
pub fn history_convolution(p: &ProblemSpec, x: &PeriodicTrack, xdot: &PeriodicTrack, i: u32, t: f64) -> Result<f64, ChainError> {
    assert!(i >= 1 && i <= p.kernel().shape(), "chain index out of range");
    Ok(convolve(p, &history_track(p, x, xdot)?, i, t, 1.0))
}

fn test_times(period: f64) -> impl Iterator<Item = (usize, f64)> {
    let stride = SAMPLES_PER_PERIOD / TEST_TIMES;
    (0..TEST_TIMES).map(move |j| (j * stride, period * (j * stride) as f64 / SAMPLES_PER_PERIOD as f64))
}

/// Largest gap between the chain coordinates `y_i(t)` of the orbit through
/// `sp` and the history integrals of its first two coordinates, over
/// 64 test times and every `i`.
pub fn verify_lift(p: &ProblemSpec, sp: &StartingPoint) -> Result<f64, OrbitError> {
    let field = expand(p.clone());
    let traj = trajectory(&field, sp.lambda, sp.xi0.as_slice(), 0.0, p.period(), LIFT_TOL)?;
    let x = PeriodicTrack::from_trajectory(&traj, 0).expect("integrated samples are finite");
    let xdot = PeriodicTrack::from_trajectory(&traj, 1).expect("integrated samples are finite");
    let z = history_track(p, &x, &xdot)?;
    let rules: Vec<HistoryRule> = (1..=p.kernel().shape()).map(|i| HistoryRule::new(p, i, 1.0)).collect();
    let mut worst = 0.0f64;
    for (k, t) in test_times(p.period()) {
        for (i, rule) in rules.iter().enumerate() {
            let y = traj.states[k][2 + i];
            worst = worst.max((y - rule.apply(&z, t)).abs());
        }
    }
    Ok(worst)
}

/// `max |x'' - g(x, x', y_b) - λ f(t, x, x')|` over 64 test times, with
/// derivatives of the track taken by finite differences and `y_b` from the
/// history integral.
pub fn direct_residual(p: &ProblemSpec, lambda: f64, x: &PeriodicTrack) -> Result<f64, ChainError> {
    let xdot = x.derivative();
    let xddot = xdot.derivative();
    let z = history_track(p, x, &xdot)?;
    let rule = HistoryRule::new(p, p.kernel().shape(), 1.0);
    let stride = x.samples.len() as f64 / TEST_TIMES as f64;
    let mut worst = 0.0f64;
    for j in 0..TEST_TIMES {
        let k = (j as f64 * stride).round() as usize;
        let t = k as f64 * x.spacing();
        let (u, v, acc) = (x.samples[k], xdot.samples[k], xddot.samples[k]);
        let mut rhs = p.g(u, v, rule.apply(&z, t))?;
        if lambda != 0.0 {
            rhs += lambda * p.forcing(t, u, v)?;
        }
        worst = worst.max((acc - rhs).abs());
    }
    Ok(worst)
}
