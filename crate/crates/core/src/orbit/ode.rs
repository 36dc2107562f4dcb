//! Dormand–Prince 5(4) integration with the fourth-order continuous
//! extension for uniform sampling.

use crate::chain::{ChainError, ExpandedField, VectorField};

use super::OrbitError;

pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn rhs(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<(), ChainError>;
}

/// `ξ' = G(ξ) + λ F(t, ξ)` at a fixed λ.
#[derive(Debug, Clone, Copy)]
pub struct ForcedSystem<'a> {
    pub field: &'a ExpandedField,
    pub lambda: f64,
}

impl OdeSystem for ForcedSystem<'_> {
    fn dim(&self) -> usize {
        self.field.dim()
    }

    fn rhs(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<(), ChainError> {
        self.field.rhs(t, self.lambda, x, out)
    }
}

/// Adapter turning any autonomous field into an ODE system.
#[derive(Debug, Clone, Copy)]
pub struct Autonomous<'a, V: ?Sized>(pub &'a V);

impl<V: VectorField + ?Sized> OdeSystem for Autonomous<'_, V> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn rhs(&self, _t: f64, x: &[f64], out: &mut [f64]) -> Result<(), ChainError> {
        self.0.eval(x, out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrateOptions {
    /// Used as both the absolute and the relative tolerance.
    pub tol: f64,
    /// Number of uniform intervals in the sampled output.
    pub samples: usize,
    pub max_steps: usize,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        IntegrateOptions {
            tol: 1e-10,
            samples: super::SAMPLES_PER_PERIOD,
            max_steps: 1_000_000,
        }
    }
}

/// Uniformly sampled solution, endpoints included.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn last(&self) -> &[f64] {
        self.states.last().expect("trajectory has samples")
    }

    /// The track of coordinate `i`.
    pub fn coordinate(&self, i: usize) -> Vec<f64> {
        self.states.iter().map(|s| s[i]).collect()
    }
}


const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];
const D: [f64; 7] = [
    -12715105075.0 / 11282082432.0,
    0.0,
    87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0,
];

struct Stepper<'s> {
    sys: &'s dyn OdeSystem,
    k: [Vec<f64>; 7],
    scratch: Vec<f64>,
    next: Vec<f64>,
}

impl<'s> Stepper<'s> {
    fn new(sys: &'s dyn OdeSystem) -> Self {
        let n = sys.dim();
        Stepper {
            sys,
            k: std::array::from_fn(|_| vec![0.0; n]),
            scratch: vec![0.0; n],
            next: vec![0.0; n],
        }
    }

    /// One trial step from `(t, x)` assuming `k[0] = f(t, x)`. Leaves the
    /// fifth-order result in `next` and `f(t+h, next)` in `k[6]`.
    fn step(&mut self, t: f64, x: &[f64], h: f64) -> Result<(), ChainError> {
        for s in 1..7 {
            for i in 0..x.len() {
                let mut acc = 0.0;
                for (j, a) in A[s][..s].iter().enumerate() {
                    acc += a * self.k[j][i];
                }
                self.scratch[i] = x[i] + h * acc;
            }
            self.sys.rhs(t + C[s] * h, &self.scratch, &mut self.k[s])?;
        }
        // The last stage is evaluated at the fifth-order solution (FSAL).
        self.next.copy_from_slice(&self.scratch);
        Ok(())
    }

    fn error_norm(&self, x: &[f64], h: f64, tol: f64) -> f64 {
        let mut acc = 0.0;
        for i in 0..x.len() {
            let mut e = 0.0;
            for (j, c) in E.iter().enumerate() {
                e += c * self.k[j][i];
            }
            let scale = tol + tol * x[i].abs().max(self.next[i].abs());
            acc += (h * e / scale).powi(2);
        }
        let norm = (acc / x.len() as f64).sqrt();
        if norm.is_finite() {
            norm
        } else {
            f64::INFINITY
        }
    }

    fn dense(&self, x: &[f64], h: f64, theta: f64, out: &mut [f64]) {
        let theta1 = 1.0 - theta;
        for i in 0..x.len() {
            let ydiff = self.next[i] - x[i];
            let bspl = h * self.k[0][i] - ydiff;
            let r4 = ydiff - h * self.k[6][i] - bspl;
            let mut r5 = 0.0;
            for (j, d) in D.iter().enumerate() {
                r5 += d * self.k[j][i];
            }
            r5 *= h;
            out[i] = x[i] + theta * (ydiff + theta1 * (bspl + theta * (r4 + theta1 * r5)));
        }
    }
}

fn initial_step(sys: &dyn OdeSystem, t0: f64, x: &[f64], f0: &[f64], span: f64, tol: f64) -> Result<f64, ChainError> {
    let scale = |i: usize| tol + tol * x[i].abs();
    let rms = |v: &dyn Fn(usize) -> f64| {
        ((0..x.len()).map(|i| v(i).powi(2)).sum::<f64>() / x.len() as f64).sqrt()
    };
    let d0 = rms(&|i| x[i] / scale(i));
    let d1 = rms(&|i| f0[i] / scale(i));
    let mut h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h0 = h0.min(span);
    let probe: Vec<f64> = x.iter().zip(f0).map(|(xi, fi)| xi + h0 * fi).collect();
    let mut f1 = vec![0.0; x.len()];
    sys.rhs(t0 + h0, &probe, &mut f1)?;
    let d2 = rms(&|i| (f1[i] - f0[i]) / scale(i)) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    Ok((100.0 * h0).min(h1).min(span))
}

/// Adaptive integration from `t0` to `t1`; returns the trajectory sampled at
/// `opts.samples + 1` uniform times, both endpoints included.
pub fn integrate(
    sys: &dyn OdeSystem,
    x0: &[f64],
    t0: f64,
    t1: f64,
    opts: &IntegrateOptions,
) -> Result<Trajectory, OrbitError> {
    let n = opts.samples.max(1);
    let dt = (t1 - t0) / n as f64;
    let mut times = Vec::with_capacity(n + 1);
    let mut states = Vec::with_capacity(n + 1);
    times.push(t0);
    states.push(x0.to_vec());
    let mut next_sample = 1usize;
    run(sys, x0, t0, t1, opts, |stepper, t, x, h, last| {
        while next_sample < n {
            let ts = t0 + next_sample as f64 * dt;
            if ts > t + h {
                break;
            }
            let mut out = vec![0.0; x.len()];
            stepper.dense(x, h, (ts - t) / h, &mut out);
            times.push(ts);
            states.push(out);
            next_sample += 1;
        }
        if last {
            times.push(t1);
            states.push(stepper.next.clone());
        }
    })?;
    Ok(Trajectory { times, states })
}

/// Adaptive integration returning only the final state.
pub fn advance(sys: &dyn OdeSystem, x0: &[f64], t0: f64, t1: f64, tol: f64) -> Result<Vec<f64>, OrbitError> {
    let opts = IntegrateOptions {
        tol,
        ..Default::default()
    };
    run(sys, x0, t0, t1, &opts, |_, _, _, _, _| {})
}

fn run(
    sys: &dyn OdeSystem,
    x0: &[f64],
    t0: f64,
    t1: f64,
    opts: &IntegrateOptions,
    mut on_accept: impl FnMut(&Stepper<'_>, f64, &[f64], f64, bool),
) -> Result<Vec<f64>, OrbitError> {
    assert!(t1 > t0, "integration interval must be increasing");
    let span = t1 - t0;
    let mut stepper = Stepper::new(sys);
    let mut x = x0.to_vec();
    let mut t = t0;
    sys.rhs(t, &x, &mut stepper.k[0]).map_err(OrbitError::Field)?;
    let mut h = initial_step(sys, t, &x, &stepper.k[0], span, opts.tol).map_err(OrbitError::Field)?;
    let mut accepted = 0usize;
    let mut last_rejected = false;
    loop {
        let remaining = t1 - t;
        let last = h >= remaining * (1.0 - 1e-12);
        if last {
            h = remaining;
        }
        if h < 1e-14 * t.abs().max(1.0) {
            return Err(OrbitError::StepUnderflow { t });
        }
        let err = match stepper.step(t, &x, h) {
            Ok(()) => stepper.error_norm(&x, h, opts.tol),
            Err(ChainError::Expr { source: crate::expr::ExprError::NonFinite(_), .. }) => f64::INFINITY,
            Err(e) => return Err(OrbitError::Field(e)),
        };
        if err <= 1.0 {
            on_accept(&stepper, t, &x, h, last);
            t = if last { t1 } else { t + h };
            x.copy_from_slice(&stepper.next);
            let (head, tail) = stepper.k.split_at_mut(6);
            head[0].copy_from_slice(&tail[0]);
            accepted += 1;
            if last {
                return Ok(x);
            }
            if accepted >= opts.max_steps {
                return Err(OrbitError::StepUnderflow { t });
            }
            let mut factor = (0.9 * err.powf(-0.2)).clamp(0.2, 5.0);
            if last_rejected {
                factor = factor.min(1.0);
            }
            h *= factor;
            last_rejected = false;
        } else {
            let factor = if err.is_finite() {
                (0.9 * err.powf(-0.2)).clamp(0.1, 1.0)
            } else {
                0.1
            };
            h *= factor;
            last_rejected = true;
        }
    }
}
