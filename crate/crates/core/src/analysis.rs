//! Zeros of the bifurcation function `Φ(u) = g(u, 0, φ(u, 0))` and the
//! Brouwer degrees of `Φ` on an interval and of the expanded field on the
//! corresponding cylinder.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{expand, jacobian_fd, ChainError, ProblemSpec, StatePoint};

/// `|Φ(u)|` at or below this counts as a zero.
pub const ZERO_TOL: f64 = 1e-10;
/// Zeros with `|Φ'(ū)|` at or below this are degenerate.
pub const DEGENERACY_TOL: f64 = 1e-8;
/// Central-difference step for Jacobians and the fallback `Φ'`.
pub const FD_STEP: f64 = 1e-6;
/// Grid used when no resolution is given.
pub const DEFAULT_GRID: usize = 200;
const MERGE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Field(#[from] ChainError),
    #[error("interval ({alpha}, {beta}) is empty or not finite")]
    Interval { alpha: f64, beta: f64 },
    #[error("grid needs at least 2 cells, got {0}")]
    Grid(usize),
    #[error("Φ vanishes at the endpoint {u} (Φ = {value:e}); the interval is not admissible")]
    EndpointZero { u: f64, value: f64 },
    #[error("zero at {u_bar} is degenerate (Φ' = {phi_prime:e})")]
    Degenerate { u_bar: f64, phi_prime: f64 },
    #[error("degree cross-check failed: {what} gives {got}, expected {expected}")]
    Mismatch { what: &'static str, got: i32, expected: i32 },
}

/// A zero `ū` of Φ with its lift to the expanded system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroRecord {
    pub u_bar: f64,
    pub phi_prime: f64,
    pub lifted: StatePoint,
    /// Finite-difference determinant of the modified field's Jacobian at
    /// `lifted`.
    pub det_fd: f64,
    /// `(-1)^(b-1) a^b Φ'(ū)`.
    pub det_formula: f64,
    pub nondegenerate: bool,
    pub sign_change: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegreeReport {
    pub interval: (f64, f64),
    pub zeros: Vec<ZeroRecord>,
    pub deg_phi: i32,
    /// `(-1)^(b-1) deg_phi`.
    #[serde(rename = "deg_G")]
    pub deg_g: i32,
    /// Sum of `sign(det_fd)` over the lifted zeros; absent when a zero is
    /// degenerate.
    #[serde(rename = "deg_G_jacobian")]
    pub deg_g_jacobian: Option<i32>,
    pub admissible: bool,
}

pub fn phi_eval(p: &ProblemSpec, u: f64) -> Result<f64, AnalysisError> {
    Ok(p.bifurcation_fn(u)?)
}

/// `Φ'(u) = g_x(u, 0, w) + g_z(u, 0, w) φ_p(u, 0)` with `w = φ(u, 0)`,
/// from the symbolic derivatives. Falls back to a central difference of Φ
/// where those do not evaluate (e.g. at the kink of `abs`).
pub fn phi_prime(p: &ProblemSpec, u: f64) -> Result<f64, AnalysisError> {
    let symbolic = || -> Option<f64> {
        let w = p.phi(u, 0.0).ok()?;
        let at = [u, 0.0, w];
        let g_x = p.g_expr().diff("x0").ok()?.eval_slice(&at).ok()?;
        let g_z = p.g_expr().diff("x2").ok()?.eval_slice(&at).ok()?;
        let phi_p = p.phi_expr().diff("p").ok()?.eval_slice(&[u, 0.0]).ok()?;
        let d = g_x + g_z * phi_p;
        d.is_finite().then_some(d)
    };
    match symbolic() {
        Some(d) => Ok(d),
        None => Ok((phi_eval(p, u + FD_STEP)? - phi_eval(p, u - FD_STEP)?) / (2.0 * FD_STEP)),
    }
}

fn check_interval(alpha: f64, beta: f64) -> Result<(), AnalysisError> {
    if alpha.is_finite() && beta.is_finite() && alpha < beta {
        Ok(())
    } else {
        Err(AnalysisError::Interval { alpha, beta })
    }
}

fn endpoint_value(p: &ProblemSpec, u: f64) -> Result<f64, AnalysisError> {
    let value = phi_eval(p, u)?;
    if value.abs() <= ZERO_TOL {
        return Err(AnalysisError::EndpointZero { u, value });
    }
    Ok(value)
}

fn sign(x: f64) -> i32 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// Zeros of Φ in `(alpha, beta)`: sign changes on a uniform grid of
/// `grid_n` cells refined by bisection, plus grid points where Φ already
/// vanishes. Each zero is lifted and classified.
pub fn scan_zeros(p: &ProblemSpec, alpha: f64, beta: f64, grid_n: usize) -> Result<Vec<ZeroRecord>, AnalysisError> {
    check_interval(alpha, beta)?;
    if grid_n < 2 {
        return Err(AnalysisError::Grid(grid_n));
    }
    endpoint_value(p, alpha)?;
    endpoint_value(p, beta)?;
    let width = beta - alpha;
    let us: Vec<f64> = (0..=grid_n)
        .map(|k| if k == grid_n { beta } else { alpha + width * k as f64 / grid_n as f64 })
        .collect();
    let values = us.iter().map(|&u| phi_eval(p, u)).collect::<Result<Vec<_>, _>>()?;
    let signs: Vec<i32> = values.iter().map(|v| if v.abs() <= ZERO_TOL { 0 } else { sign(*v) }).collect();

    // (location, sign change)
    let mut found: Vec<(f64, bool)> = Vec::new();
    for k in 0..grid_n {
        if signs[k] == 0 {
            // nearest nonzero neighbours decide whether Φ crosses here
            let left = signs[..k].iter().rev().find(|s| **s != 0).copied().unwrap_or(0);
            let right = signs[k + 1..].iter().find(|s| **s != 0).copied().unwrap_or(0);
            found.push((us[k], left * right < 0));
        } else if signs[k] * signs[k + 1] < 0 {
            found.push((bisect(p, us[k], us[k + 1], signs[k])?, true));
        }
    }
    found.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut merged: Vec<(f64, bool)> = Vec::with_capacity(found.len());
    for (u, change) in found {
        match merged.last_mut() {
            Some(last) if (u - last.0).abs() <= MERGE_TOL => last.1 |= change,
            _ => merged.push((u, change)),
        }
    }
    merged.into_iter().map(|(u, change)| classify(p, u, change)).collect()
}

/// Bisection on a bracket whose left end has sign `left_sign`, down to a
/// width of `1e-12 (1 + |u|)`. Returns the end with the smaller `|Φ|`.
fn bisect(p: &ProblemSpec, mut lo: f64, mut hi: f64, left_sign: i32) -> Result<f64, AnalysisError> {
    while hi - lo > 1e-12 * (1.0 + lo.abs().max(hi.abs())) {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let v = phi_eval(p, mid)?;
        if v == 0.0 {
            return Ok(mid);
        }
        if sign(v) == left_sign {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (flo, fhi) = (phi_eval(p, lo)?.abs(), phi_eval(p, hi)?.abs());
    Ok(if flo <= fhi { lo } else { hi })
}

fn classify(p: &ProblemSpec, u_bar: f64, sign_change: bool) -> Result<ZeroRecord, AnalysisError> {
    let phi_prime = phi_prime(p, u_bar)?;
    let lifted = p.lifted_zero(u_bar)?;
    let field = expand(p.clone());
    let det_fd = jacobian_fd(&field.modified(), lifted.as_slice(), FD_STEP)?.determinant();
    let kernel = p.kernel();
    let b = kernel.shape();
    let parity = if b % 2 == 1 { 1.0 } else { -1.0 };
    let det_formula = parity * kernel.rate().powi(b as i32) * phi_prime;
    Ok(ZeroRecord {
        u_bar,
        phi_prime,
        lifted,
        det_fd,
        det_formula,
        nondegenerate: phi_prime.abs() > DEGENERACY_TOL,
        sign_change,
    })
}

/// `(sign Φ(β) - sign Φ(α)) / 2`.
fn boundary_degree(p: &ProblemSpec, alpha: f64, beta: f64) -> Result<i32, AnalysisError> {
    Ok((sign(endpoint_value(p, beta)?) - sign(endpoint_value(p, alpha)?)) / 2)
}

fn sign_sum(zeros: &[ZeroRecord]) -> Result<i32, AnalysisError> {
    zeros
        .iter()
        .map(|z| {
            if z.nondegenerate {
                Ok(sign(z.phi_prime))
            } else {
                Err(AnalysisError::Degenerate {
                    u_bar: z.u_bar,
                    phi_prime: z.phi_prime,
                })
            }
        })
        .sum()
}

/// `deg(Φ, (α, β))` as the sum of `sign Φ'(ū)` over the zeros, checked
/// against the boundary formula.
pub fn degree_phi(p: &ProblemSpec, alpha: f64, beta: f64) -> Result<i32, AnalysisError> {
    degree_phi_on_grid(p, alpha, beta, DEFAULT_GRID)
}

pub fn degree_phi_on_grid(p: &ProblemSpec, alpha: f64, beta: f64, grid_n: usize) -> Result<i32, AnalysisError> {
    let zeros = scan_zeros(p, alpha, beta, grid_n)?;
    let deg = sign_sum(&zeros)?;
    let expected = boundary_degree(p, alpha, beta)?;
    if deg != expected {
        return Err(AnalysisError::Mismatch {
            what: "sum of sign Φ'",
            got: deg,
            expected,
        });
    }
    Ok(deg)
}

/// Degree of the expanded field on `(α, β) × R^(b+1)`, computed as
/// `(-1)^(b-1) deg(Φ)` and independently as the sum of the Jacobian signs
/// of the modified field at the lifted zeros.
///
/// A degenerate zero across which Φ still changes sign does not stop the
/// report: `deg_phi` then comes from the boundary formula and the Jacobian
/// path is skipped.
pub fn degree_g(p: &ProblemSpec, alpha: f64, beta: f64) -> Result<DegreeReport, AnalysisError> {
    degree_g_on_grid(p, alpha, beta, DEFAULT_GRID)
}

pub fn degree_g_on_grid(p: &ProblemSpec, alpha: f64, beta: f64, grid_n: usize) -> Result<DegreeReport, AnalysisError> {
    let zeros = scan_zeros(p, alpha, beta, grid_n)?;
    let boundary = boundary_degree(p, alpha, beta)?;
    let b = p.kernel().shape();
    let parity = if b % 2 == 1 { 1 } else { -1 };
    let all_regular = zeros.iter().all(|z| z.nondegenerate);
    let (deg_phi, deg_g_jacobian) = if all_regular {
        let deg_phi = sign_sum(&zeros)?;
        if deg_phi != boundary {
            return Err(AnalysisError::Mismatch {
                what: "sum of sign Φ'",
                got: deg_phi,
                expected: boundary,
            });
        }
        let jac: i32 = zeros.iter().map(|z| sign(z.det_fd)).sum();
        if jac != parity * deg_phi {
            return Err(AnalysisError::Mismatch {
                what: "sum of Jacobian signs",
                got: jac,
                expected: parity * deg_phi,
            });
        }
        (deg_phi, Some(jac))
    } else if let Some(z) = zeros.iter().find(|z| !z.nondegenerate && !z.sign_change) {
        return Err(AnalysisError::Degenerate {
            u_bar: z.u_bar,
            phi_prime: z.phi_prime,
        });
    } else {
        (boundary, None)
    };
    Ok(DegreeReport {
        interval: (alpha, beta),
        zeros,
        deg_phi,
        deg_g: parity * deg_phi,
        deg_g_jacobian,
        admissible: true,
    })
}
