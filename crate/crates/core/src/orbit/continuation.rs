//! Pseudo-arclength continuation of starting points `z = (λ, ξ(0))`.
//!
//! The curve is the zero set of `R(λ, ξ) = ξ(T; λ, ξ) - ξ` in `R^(n+1)`.
//! Each step predicts along the unit tangent and corrects with Newton on the
//! bordered system `[R(z); t·(z - z_pred)] = 0`, so folds in λ are passed
//! like any other point of the curve.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    monodromy, newton_periodic, period_map, shoot, smallest_singular_value, sup,
    BranchPoint, NewtonOptions, OrbitError, StartingPoint, RESIDUAL_TOL, SINGULAR_TOL,
};
use crate::chain::{ExpandedField, StatePoint};

const CLOSED_LOOP_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContinuationParams {
    pub initial_step: f64,
    pub min_step: f64,
    pub max_step: f64,
    pub max_steps: usize,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub shrink: f64,
    pub grow: f64,
    pub lambda_max: f64,
    pub norm_max: f64,
    /// λ at which a branch is seeded off a trivial starting point.
    pub seed_lambda: f64,
    pub integration_tol: f64,
}

impl Default for ContinuationParams {
    fn default() -> Self {
        ContinuationParams {
            initial_step: 0.02,
            min_step: 1e-5,
            max_step: 0.1,
            max_steps: 1000,
            newton_tol: 1e-10,
            newton_max_iter: 25,
            shrink: 0.5,
            grow: 1.3,
            lambda_max: 2.0,
            norm_max: 100.0,
            seed_lambda: 1e-3,
            integration_tol: 1e-10,
        }
    }
}

impl ContinuationParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.min_step > 0.0 && self.min_step <= self.initial_step && self.initial_step <= self.max_step) {
            return Err("steps must satisfy 0 < min_step <= initial_step <= max_step".into());
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err("shrink must lie in (0, 1)".into());
        }
        if !(self.grow >= 1.0) {
            return Err("grow must be at least 1".into());
        }
        if !(self.newton_tol > 0.0 && self.integration_tol > 0.0) {
            return Err("tolerances must be positive".into());
        }
        if self.newton_max_iter == 0 {
            return Err("newton_max_iter must be positive".into());
        }
        if !(self.lambda_max >= 0.0 && self.norm_max > 0.0 && self.seed_lambda > 0.0) {
            return Err("lambda_max must be >= 0, norm_max and seed_lambda > 0".into());
        }
        Ok(())
    }

    fn newton(&self) -> NewtonOptions {
        NewtonOptions {
            tol: self.newton_tol,
            max_iter: self.newton_max_iter,
            norm_max: self.norm_max,
            integration_tol: self.integration_tol,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Crossed into λ < 0; the last point was placed on λ = 0.
    LambdaZero,
    LambdaMax,
    NormMax,
    MaxSteps,
    ClosedLoop,
    CorrectorFailure,
}

/// A traced branch in traversal order, with how each end terminated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub points: Vec<BranchPoint>,
    /// How the end at the first point terminated.
    pub start: Termination,
    /// How the end at the last point terminated.
    pub end: Termination,
}

impl Branch {
    pub fn max_lambda(&self) -> f64 {
        self.points.iter().map(|p| p.sp.lambda).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Indices of the turning points of λ along the branch.
    pub fn folds(&self) -> Vec<usize> {
        let l: Vec<f64> = self.points.iter().map(|p| p.sp.lambda).collect();
        (1..l.len().saturating_sub(1))
            .filter(|&i| (l[i] - l[i - 1]) * (l[i + 1] - l[i]) < 0.0)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ContinuationError {
    #[error(transparent)]
    Orbit(#[from] OrbitError),
    #[error("starting point lies in a degenerate λ = 0 slice: M - I is singular (σ_min = {sigma_min:e}); the branch cannot leave λ = 0")]
    Degenerate { sigma_min: f64 },
    #[error("corrector failed at the minimum step; {} points traced before failure", .partial.points.len())]
    CorrectorFailed { partial: Box<Branch> },
    #[error("invalid continuation parameters: {0}")]
    Params(String),
}

struct Tracer<'a> {
    field: &'a ExpandedField,
    params: &'a ContinuationParams,
}

struct Corrected {
    z: DVector<f64>,
    /// Extended Jacobian `[∂R/∂λ | M - I]` near `z`.
    jac: DMatrix<f64>,
    iterations: usize,
}

impl Tracer<'_> {
    fn n(&self) -> usize {
        self.field.dim()
    }

    fn residual(&self, z: &DVector<f64>) -> Result<DVector<f64>, OrbitError> {
        let xi = &z.as_slice()[1..];
        let end = period_map(self.field, z[0], xi, self.params.integration_tol)?;
        Ok(DVector::from_iterator(xi.len(), end.iter().zip(xi).map(|(e, x)| e - x)))
    }

    fn jacobian(&self, z: &DVector<f64>) -> Result<DMatrix<f64>, OrbitError> {
        let n = self.n();
        let shot = shoot(self.field, z[0], &z.as_slice()[1..], true, self.params.integration_tol)?;
        let mut jac = DMatrix::zeros(n, n + 1);
        jac.set_column(0, &shot.dlambda.expect("requested"));
        jac.view_mut((0, 1), (n, n)).copy_from(&(shot.mono - DMatrix::identity(n, n)));
        Ok(jac)
    }

    fn correct(&self, pred: &DVector<f64>, tangent: &DVector<f64>, h: f64) -> Option<Corrected> {
        let n = self.n();
        let mut w = pred.clone();
        let mut last_delta = f64::INFINITY;
        let mut jac: Option<DMatrix<f64>> = None;
        for it in 0..=self.params.newton_max_iter {
            let r = self.residual(&w).ok()?;
            let scale = 1.0 + sup(&w.as_slice()[1..]);
            let rn = r.amax();
            let done = rn <= self.params.newton_tol * scale
                || (last_delta <= 1e-11 * scale && rn <= RESIDUAL_TOL * scale);
            if done && it > 0 {
                return Some(Corrected {
                    z: w,
                    jac: jac.expect("set after first iteration"),
                    iterations: it,
                });
            }
            if it == self.params.newton_max_iter {
                return None;
            }
            let j = self.jacobian(&w).ok()?;
            let mut a = DMatrix::zeros(n + 1, n + 1);
            a.view_mut((0, 0), (n, n + 1)).copy_from(&j);
            a.set_row(n, &tangent.transpose());
            let mut rhs = DVector::zeros(n + 1);
            rhs.rows_mut(0, n).copy_from(&(-&r));
            rhs[n] = -tangent.dot(&(&w - pred));
            let delta = a.lu().solve(&rhs)?;
            w += &delta;
            last_delta = delta.amax();
            jac = Some(j);
            if !(w.iter().all(|x| x.is_finite())) || (&w - pred).amax() > h.max(1e-3) {
                return None;
            }
        }
        None
    }

    /// Unit null vector of the `n × (n+1)` Jacobian, oriented along `orient`.
    fn tangent(jac: &DMatrix<f64>, orient: &DVector<f64>) -> DVector<f64> {
        let n = jac.nrows();
        let mut a = DMatrix::zeros(n + 1, n + 1);
        a.view_mut((0, 0), (n, n + 1)).copy_from(jac);
        a.set_row(n, &orient.transpose());
        let mut e = DVector::zeros(n + 1);
        e[n] = 1.0;
        let t = a.lu().solve(&e).unwrap_or_else(|| Self::null_vector(jac));
        let t = t.normalize();
        if t.dot(orient) < 0.0 {
            -t
        } else {
            t
        }
    }

    fn null_vector(jac: &DMatrix<f64>) -> DVector<f64> {
        let n = jac.nrows();
        let mut a = DMatrix::zeros(n + 1, n + 1);
        a.view_mut((0, 0), (n, n + 1)).copy_from(jac);
        let svd = a.svd(false, true);
        let v_t = svd.v_t.expect("requested");
        let k = svd.singular_values.imin();
        v_t.row(k).transpose()
    }

    /// Traces from `start` along `tangent` until a termination condition.
    fn run(&self, start: &DVector<f64>, tangent: DVector<f64>) -> (Vec<DVector<f64>>, Termination) {
        let p = self.params;
        let mut out: Vec<DVector<f64>> = Vec::new();
        let mut tangents: Vec<DVector<f64>> = vec![tangent.clone()];
        let mut z = start.clone();
        let mut t = tangent;
        let mut h = p.initial_step;
        for _ in 0..p.max_steps {
            let pred = &z + &t * h;
            let Some(c) = self.correct(&pred, &t, h) else {
                h *= p.shrink;
                if h < p.min_step {
                    return (out, Termination::CorrectorFailure);
                }
                continue;
            };
            let new_t = Self::tangent(&c.jac, &t);
            if c.z[0] < 0.0 {
                if let Some(landed) = self.land_on_zero(&z, &c.z) {
                    out.push(landed);
                }
                return (out, Termination::LambdaZero);
            }
            if c.z[0] > p.lambda_max {
                return (out, Termination::LambdaMax);
            }
            if sup(&c.z.as_slice()[1..]) > p.norm_max {
                return (out, Termination::NormMax);
            }
            let history = out.len().saturating_sub(2);
            let closed = std::iter::once(start)
                .chain(out[..history].iter())
                .zip(&tangents)
                .any(|(old, old_t)| (&c.z - old).amax() <= CLOSED_LOOP_TOL && old_t.dot(&new_t) > 0.0);
            out.push(c.z.clone());
            tangents.push(new_t.clone());
            if closed {
                return (out, Termination::ClosedLoop);
            }
            z = c.z;
            t = new_t;
            if c.iterations <= 3 {
                h = (h * p.grow).min(p.max_step);
            }
        }
        (out, Termination::MaxSteps)
    }

    /// Places a point on `λ = 0` between `inside` (λ ≥ 0) and `outside`.
    fn land_on_zero(&self, inside: &DVector<f64>, outside: &DVector<f64>) -> Option<DVector<f64>> {
        let s = inside[0] / (inside[0] - outside[0]);
        let guess: Vec<f64> = (1..inside.len()).map(|i| inside[i] + s * (outside[i] - inside[i])).collect();
        let sp = newton_periodic(self.field, 0.0, &StatePoint(guess), &self.params.newton()).ok()?;
        let mut z = DVector::zeros(inside.len());
        z.rows_mut(1, inside.len() - 1).copy_from_slice(sp.xi0.as_slice());
        Some(z)
    }
}

fn to_z(sp: &StartingPoint) -> DVector<f64> {
    let mut z = Vec::with_capacity(sp.xi0.dim() + 1);
    z.push(sp.lambda);
    z.extend_from_slice(sp.xi0.as_slice());
    DVector::from_vec(z)
}

fn branch_point(field: &ExpandedField, z: &DVector<f64>, arclength: f64, tol: f64) -> Result<BranchPoint, OrbitError> {
    let sp = StartingPoint {
        lambda: z[0],
        xi0: StatePoint(z.as_slice()[1..].to_vec()),
        residual: 0.0,
    };
    BranchPoint::evaluate(field, sp, arclength, tol)
}

fn assemble(field: &ExpandedField, zs: &[DVector<f64>], tol: f64) -> Result<Vec<BranchPoint>, OrbitError> {
    let mut arclength = 0.0;
    let mut out = Vec::with_capacity(zs.len());
    for (k, z) in zs.iter().enumerate() {
        if k > 0 {
            arclength += (z - &zs[k - 1]).norm();
        }
        out.push(branch_point(field, z, arclength, tol)?);
    }
    Ok(out)
}

/// Fails when a λ = 0 starting point sits where `M - I` is singular, so
/// that no branch of forced solutions can be continued off it.
pub fn check_slice_nondegenerate(field: &ExpandedField, sp: &StartingPoint, tol: f64) -> Result<(), ContinuationError> {
    let n = sp.xi0.dim();
    let m = monodromy(field, sp.lambda, sp.xi0.as_slice(), tol)?;
    let sigma_min = smallest_singular_value(&(m - DMatrix::identity(n, n)));
    if sigma_min <= SINGULAR_TOL {
        return Err(ContinuationError::Degenerate { sigma_min });
    }
    Ok(())
}

/// Continues the branch through a converged `seed` in both tangent
/// directions. The result is in traversal order: the end reached by the
/// direction of decreasing λ comes first.
pub fn continue_branch(
    field: &ExpandedField,
    seed: &StartingPoint,
    params: &ContinuationParams,
) -> Result<Branch, ContinuationError> {
    params.validate().map_err(ContinuationError::Params)?;
    if seed.lambda == 0.0 {
        check_slice_nondegenerate(field, seed, params.integration_tol)?;
    }
    let tracer = Tracer { field, params };
    let z0 = to_z(seed);
    let jac = tracer.jacobian(&z0)?;
    let mut up = DVector::zeros(z0.len());
    up[0] = 1.0;
    let mut t = Tracer::null_vector(&jac);
    if t.dot(&up) < 0.0 || (t[0] == 0.0 && t.iter().find(|x| **x != 0.0).is_some_and(|x| *x < 0.0)) {
        t = -t;
    }
    if t[0].abs() <= SINGULAR_TOL && seed.lambda == 0.0 {
        return Err(ContinuationError::Degenerate { sigma_min: t[0].abs() });
    }

    let (mut back, start) = if params.lambda_max < seed.lambda {
        (Vec::new(), Termination::LambdaMax)
    } else {
        tracer.run(&z0, -&t)
    };
    let (fwd, end) = if params.lambda_max < seed.lambda {
        (Vec::new(), Termination::LambdaMax)
    } else {
        tracer.run(&z0, t)
    };
    back.reverse();
    back.push(z0);
    back.extend(fwd);
    let branch = Branch {
        points: assemble(field, &back, params.integration_tol)?,
        start,
        end,
    };
    if start == Termination::CorrectorFailure || end == Termination::CorrectorFailure {
        return Err(ContinuationError::CorrectorFailed {
            partial: Box::new(branch),
        });
    }
    Ok(branch)
}

/// Seeds a branch at the trivial starting point `(0, lifted zero of u)`:
/// verifies the trivial point, Newton-corrects at the seed λ from the lifted
/// zero and continues both ways. With `lambda_max` below the seed λ only the
/// trivial point is returned.
pub fn trace_from_zero(field: &ExpandedField, u: f64, params: &ContinuationParams) -> Result<Branch, ContinuationError> {
    params.validate().map_err(ContinuationError::Params)?;
    let lifted = field.lifted_zero(u).map_err(OrbitError::from)?;
    let trivial = match newton_periodic(field, 0.0, &lifted, &params.newton()) {
        Ok(sp) => sp,
        Err(OrbitError::SingularJacobian { sigma_min }) => return Err(ContinuationError::Degenerate { sigma_min }),
        Err(e) => return Err(e.into()),
    };
    check_slice_nondegenerate(field, &trivial, params.integration_tol)?;
    if params.lambda_max < params.seed_lambda {
        return Ok(Branch {
            points: assemble(field, &[to_z(&trivial)], params.integration_tol)?,
            start: Termination::LambdaMax,
            end: Termination::LambdaMax,
        });
    }
    let seed = newton_periodic(field, params.seed_lambda, &lifted, &params.newton())?;
    continue_branch(field, &seed, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{expand, ProblemSpec};

    fn example() -> ExpandedField {
        expand(ProblemSpec::parse("-x0*(1+x2)", "q-p", "1+x*sin(2*pi*t)", 2.0, 2, 1.0).unwrap())
    }

    #[test]
    fn params_validation() {
        assert!(ContinuationParams::default().validate().is_ok());
        let bad = ContinuationParams {
            min_step: 0.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn zero_lambda_max_keeps_only_trivial_point() {
        let field = example();
        let params = ContinuationParams {
            lambda_max: 0.0,
            ..Default::default()
        };
        let b = trace_from_zero(&field, 1.0, &params).unwrap();
        assert_eq!(b.points.len(), 1);
        assert_eq!(b.points[0].sp.lambda, 0.0);
        assert_eq!(b.points[0].sp.xi0.0, vec![1.0, 0.0, -1.0, -1.0]);
        assert_eq!(b.points[0].diameter, 0.0);
    }

    #[test]
    fn short_branch_near_zero() {
        let field = example();
        let params = ContinuationParams {
            lambda_max: 0.05,
            ..Default::default()
        };
        let b = trace_from_zero(&field, 0.0, &params).unwrap();
        assert_eq!(b.start, Termination::LambdaZero);
        assert_eq!(b.end, Termination::LambdaMax);
        let first = &b.points[0];
        assert_eq!(first.sp.lambda, 0.0);
        assert!(first.sp.xi0.sup_norm() < 1e-9);
        for p in &b.points {
            assert!(p.sp.residual <= RESIDUAL_TOL * (1.0 + p.sp.xi0.sup_norm()), "{p:?}");
            assert!(p.sp.lambda <= 0.05 && p.sp.lambda >= 0.0);
        }
        assert!(b.points.windows(2).all(|w| w[1].arclength > w[0].arclength));
    }
}
