//! Periodic solutions of `ξ' = G(ξ) + λ F(t, ξ)`: shooting, Newton
//! correction of starting points and branch continuation in `(λ, ξ(0))`.

mod continuation;
mod ode;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{ChainError, ExpandedField, StatePoint};

pub use continuation::{continue_branch, trace_from_zero, Branch, ContinuationError, ContinuationParams, Termination};
pub use ode::{advance, integrate, Autonomous, ForcedSystem, IntegrateOptions, OdeSystem, Trajectory};

/// Dense-output samples per forcing period.
pub const SAMPLES_PER_PERIOD: usize = 512;
/// Finite-difference step for the directional derivatives of the field
/// that drive the monodromy columns.
pub const MONODROMY_STEP: f64 = 1e-7;
/// `M - I` counts as singular below this smallest singular value.
pub const SINGULAR_TOL: f64 = 1e-8;
/// Converged starting points satisfy `|ξ(T) - ξ(0)| <= 1e-8 (1 + |ξ|)`.
pub const RESIDUAL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OrbitError {
    #[error(transparent)]
    Field(#[from] ChainError),
    #[error("integration step underflow at t = {t}")]
    StepUnderflow { t: f64 },
    #[error("Newton did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("monodromy has a multiplier at 1 (smallest singular value of M - I is {sigma_min:e})")]
    SingularJacobian { sigma_min: f64 },
}

/// `(λ, ξ(0))` of a T-periodic solution of the expanded system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartingPoint {
    pub lambda: f64,
    pub xi0: StatePoint,
    /// `|ξ(T) - ξ(0)|_∞`.
    pub residual: f64,
}

/// A starting point on a traced branch with the metrics of its orbit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchPoint {
    pub sp: StartingPoint,
    pub sup_norm: f64,
    pub diameter: f64,
    pub arclength: f64,
}

impl BranchPoint {
    /// Integrates one period from `sp` and records the orbit metrics along
    /// with a fresh periodicity residual.
    pub fn evaluate(field: &ExpandedField, sp: StartingPoint, arclength: f64, tol: f64) -> Result<Self, OrbitError> {
        let (traj, residual) = orbit_of(field, &sp, tol)?;
        let (sup_norm, diameter) = orbit_metrics(&traj);
        Ok(BranchPoint {
            sp: StartingPoint { residual, ..sp },
            sup_norm,
            diameter,
            arclength,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub norm_max: f64,
    /// Integration tolerance.
    pub integration_tol: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            tol: 1e-10,
            max_iter: 25,
            norm_max: 1e3,
            integration_tol: 1e-10,
        }
    }
}

pub(crate) fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Integrates the forced system over `[t0, t1]`, sampling 512 points per
/// forcing period.
pub fn trajectory(field: &ExpandedField, lambda: f64, xi0: &[f64], t0: f64, t1: f64, tol: f64) -> Result<Trajectory, OrbitError> {
    let periods = (t1 - t0) / field.period();
    let opts = IntegrateOptions {
        tol,
        samples: ((SAMPLES_PER_PERIOD as f64 * periods).round() as usize).max(1),
        ..Default::default()
    };
    integrate(&ForcedSystem { field, lambda }, xi0, t0, t1, &opts)
}

/// The time-T map `ξ(0) ↦ ξ(T)`.
pub fn period_map(field: &ExpandedField, lambda: f64, xi0: &[f64], tol: f64) -> Result<Vec<f64>, OrbitError> {
    advance(&ForcedSystem { field, lambda }, xi0, 0.0, field.period(), tol)
}

/// The state, its monodromy columns and optionally `∂ξ/∂λ`, integrated
/// together. Column derivatives are central differences of the vector field
/// along each column, so the adaptive step control also sees the columns.
struct Variational<'a> {
    field: &'a ExpandedField,
    lambda: f64,
    n: usize,
    with_lambda: bool,
}

impl Variational<'_> {
    fn columns(&self) -> usize {
        self.n + usize::from(self.with_lambda)
    }

    fn start(&self, xi0: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y = vec![0.0; n * (1 + self.columns())];
        y[..n].copy_from_slice(xi0);
        for j in 0..n {
            y[n * (1 + j) + j] = 1.0;
        }
        y
    }
}

impl OdeSystem for Variational<'_> {
    fn dim(&self) -> usize {
        self.n * (1 + self.columns())
    }

    fn rhs(&self, t: f64, y: &[f64], out: &mut [f64]) -> Result<(), ChainError> {
        let n = self.n;
        let (xi, cols) = y.split_at(n);
        let (base, dcols) = out.split_at_mut(n);
        self.field.rhs(t, self.lambda, xi, base)?;
        let mut probe = vec![0.0; n];
        let mut plus = vec![0.0; n];
        let mut minus = vec![0.0; n];
        for (c, (col, dcol)) in cols.chunks(n).zip(dcols.chunks_mut(n)).enumerate() {
            let width = sup(col);
            if width == 0.0 {
                dcol.fill(0.0);
            } else {
                // probe displacement is MONODROMY_STEP in the sup norm
                let eps = MONODROMY_STEP / width;
                for i in 0..n {
                    probe[i] = xi[i] + eps * col[i];
                }
                self.field.rhs(t, self.lambda, &probe, &mut plus)?;
                for i in 0..n {
                    probe[i] = xi[i] - eps * col[i];
                }
                self.field.rhs(t, self.lambda, &probe, &mut minus)?;
                for i in 0..n {
                    dcol[i] = (plus[i] - minus[i]) / (2.0 * eps);
                }
            }
            if c == n {
                self.field.forcing(t, xi, &mut plus)?;
                for i in 0..n {
                    dcol[i] += plus[i];
                }
            }
        }
        Ok(())
    }
}

/// Derivatives of the time-T map from one shooting integration.
pub(crate) struct Shot {
    pub mono: DMatrix<f64>,
    pub dlambda: Option<DVector<f64>>,
}

/// Integrates the time-T map together with its monodromy matrix and, if
/// asked, `∂ξ(T)/∂λ`.
pub(crate) fn shoot(field: &ExpandedField, lambda: f64, xi0: &[f64], with_lambda: bool, tol: f64) -> Result<Shot, OrbitError> {
    let n = xi0.len();
    let sys = Variational { field, lambda, n, with_lambda };
    let y = advance(&sys, &sys.start(xi0), 0.0, field.period(), tol)?;
    let mono = DMatrix::from_column_slice(n, n, &y[n..n * (n + 1)]);
    let dlambda = with_lambda.then(|| DVector::from_column_slice(&y[n * (n + 1)..]));
    Ok(Shot {
        mono,
        dlambda,
    })
}

/// Monodromy matrix of the time-T map at `xi0`.
pub fn monodromy(field: &ExpandedField, lambda: f64, xi0: &[f64], tol: f64) -> Result<DMatrix<f64>, OrbitError> {
    Ok(shoot(field, lambda, xi0, false, tol)?.mono)
}

pub(crate) fn smallest_singular_value(m: &DMatrix<f64>) -> f64 {
    m.singular_values().min()
}

/// Solves `ξ(T) - ξ(0) = 0` at fixed λ by damped Newton iteration.
pub fn newton_periodic(
    field: &ExpandedField,
    lambda: f64,
    guess: &StatePoint,
    opts: &NewtonOptions,
) -> Result<StartingPoint, OrbitError> {
    let n = guess.dim();
    let mut xi = guess.0.clone();
    let norm_guard = |xi: &[f64], iterations: usize, residual: f64| {
        if !(sup(xi) <= opts.norm_max) {
            Err(OrbitError::NoConvergence { iterations, residual })
        } else {
            Ok(())
        }
    };
    norm_guard(&xi, 0, f64::INFINITY)?;
    let residual_of = |xi: &[f64]| -> Result<Vec<f64>, OrbitError> {
        let end = period_map(field, lambda, xi, opts.integration_tol)?;
        Ok(end.iter().zip(xi).map(|(e, x)| e - x).collect())
    };
    let mut r = residual_of(&xi)?;
    for it in 0..opts.max_iter {
        let scale = 1.0 + sup(&xi);
        if sup(&r) <= opts.tol * scale {
            return Ok(StartingPoint {
                lambda,
                xi0: StatePoint(xi),
                residual: sup(&r),
            });
        }
        let jac = monodromy(field, lambda, &xi, opts.integration_tol)? - DMatrix::identity(n, n);
        let sigma_min = smallest_singular_value(&jac);
        if sigma_min <= SINGULAR_TOL {
            return Err(OrbitError::SingularJacobian { sigma_min });
        }
        let delta = jac
            .lu()
            .solve(&DVector::from_iterator(n, r.iter().map(|x| -x)))
            .ok_or(OrbitError::SingularJacobian { sigma_min })?;
        let mut damping = 1.0;
        let min_damping = 1.0 / 64.0;
        (xi, r) = loop {
            let trial: Vec<f64> = xi.iter().zip(delta.iter()).map(|(x, d)| x + damping * d).collect();
            norm_guard(&trial, it + 1, sup(&r))?;
            match residual_of(&trial) {
                Ok(rt) if sup(&rt) < sup(&r) || damping <= min_damping => break (trial, rt),
                Err(e) if damping <= min_damping => return Err(e),
                _ => damping *= 0.5,
            }
        };
        // Converged in the step even if the residual floor sits slightly
        // above the requested tolerance.
        if sup(delta.as_slice()) * damping <= opts.tol * (1.0 + sup(&xi))
            && sup(&r) <= RESIDUAL_TOL * (1.0 + sup(&xi))
        {
            return Ok(StartingPoint {
                lambda,
                xi0: StatePoint(xi),
                residual: sup(&r),
            });
        }
    }
    let scale = 1.0 + sup(&xi);
    if sup(&r) <= opts.tol * scale {
        return Ok(StartingPoint {
            lambda,
            xi0: StatePoint(xi),
            residual: sup(&r),
        });
    }
    Err(OrbitError::NoConvergence {
        iterations: opts.max_iter,
        residual: sup(&r),
    })
}

/// `(max_t |x(t)|, max_t x(t) - min_t x(t))` of the first coordinate.
pub fn orbit_metrics(traj: &Trajectory) -> (f64, f64) {
    let (mut lo, mut hi, mut sup_norm) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64);
    for s in &traj.states {
        lo = lo.min(s[0]);
        hi = hi.max(s[0]);
        sup_norm = sup_norm.max(s[0].abs());
    }
    (sup_norm, (hi - lo).max(0.0))
}

/// Evaluates a converged starting point: integrates one period and returns
/// the sampled orbit along with the fresh periodicity residual.
pub fn orbit_of(field: &ExpandedField, sp: &StartingPoint, tol: f64) -> Result<(Trajectory, f64), OrbitError> {
    let traj = trajectory(field, sp.lambda, sp.xi0.as_slice(), 0.0, field.period(), tol)?;
    let residual = traj
        .last()
        .iter()
        .zip(sp.xi0.as_slice())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    Ok((traj, residual))
}

/// First return time of an autonomous orbit to the hyperplane through `x0`
/// orthogonal to the initial velocity, crossed in the initial direction.
/// Equals the minimal period when the orbit is periodic.
pub fn first_return_time(sys: &dyn OdeSystem, x0: &[f64], t_max: f64, tol: f64) -> Result<Option<f64>, OrbitError> {
    let n = x0.len();
    let mut normal = vec![0.0; n];
    sys.rhs(0.0, x0, &mut normal)?;
    if sup(&normal) == 0.0 {
        return Ok(None);
    }
    let section = |x: &[f64]| -> f64 { x.iter().zip(x0).zip(&normal).map(|((a, b), c)| (a - b) * c).sum() };
    // Sample finely enough to see every crossing, then refine by bisection on
    // re-integrated sub-intervals.
    let samples = 4096;
    let traj = integrate(sys, x0, 0.0, t_max, &IntegrateOptions { tol, samples, ..Default::default() })?;
    for k in 1..traj.times.len() - 1 {
        let (s0, s1) = (section(&traj.states[k]), section(&traj.states[k + 1]));
        if s0 < 0.0 && s1 >= 0.0 {
            let (mut lo, mut hi) = (traj.times[k], traj.times[k + 1]);
            let start = traj.states[k].clone();
            let t_start = lo;
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                let end = advance(sys, &start, t_start, mid, tol)?;
                if section(&end) < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo <= 1e-14 * hi {
                    break;
                }
            }
            return Ok(Some(0.5 * (lo + hi)));
        }
    }
    Ok(None)
}
