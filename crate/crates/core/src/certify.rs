//! Lipschitz estimates of G, Yorke's lower bound on the period of
//! nonconstant periodic orbits, and certification of ejecting zeros.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{scan_zeros, AnalysisError, ZeroRecord, DEFAULT_GRID, FD_STEP};
use crate::chain::{expand, jacobian_fd, ChainError, ProblemSpec, VectorField};

/// Axes sampled on the full grid; the remaining ones are only reached by
/// the Monte Carlo stage.
pub const DENSE_AXES: usize = 5;
pub const MONTE_CARLO_POINTS: usize = 10_000;
pub const SAMPLING_SEED: u64 = 0x5EED;
/// The sampled estimate is a lower bound, so it is inflated by this factor
/// before it is compared with the period.
pub const SAFETY_FACTOR: f64 = 1.1;
pub const DEFAULT_BOX_GRID: usize = 7;

/// Outcome of certifying one zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertReport {
    pub zero: ZeroRecord,
    pub box_radius: f64,
    /// Sampled Lipschitz estimate of G on the box (a lower bound).
    #[serde(rename = "L")]
    pub lipschitz: f64,
    /// `2π / L`; `null` in JSON when `L = 0`.
    #[serde(with = "infinite_as_null")]
    pub yorke_period_bound: f64,
    #[serde(rename = "T")]
    pub period: f64,
    pub ejecting_certified: bool,
    pub notes: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiplicityReport {
    pub interval: (f64, f64),
    pub certified_zeros: Vec<CertReport>,
    /// Number of sign-changing zeros that certified as ejecting.
    pub n: usize,
    /// Fold value of λ observed on a traced branch, when one was traced.
    pub lambda_star_hint: Option<f64>,
    pub verdict: String,
}

mod infinite_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.singular_values().max()
}

/// Largest operator 2-norm of the finite-difference Jacobian of `field`
/// over the box of half-width `radius` around `center`.
///
/// The first five axes are sampled on a uniform grid of `grid_per_axis`
/// points each, with the other coordinates at the centre. Higher
/// dimensional boxes get another 10⁴ uniformly random points over the whole
/// box. The result is a lower estimate of the Lipschitz constant on the box.
pub fn lipschitz_estimate(field: &dyn VectorField, center: &[f64], radius: f64, grid_per_axis: usize) -> Result<f64, ChainError> {
    assert!(radius > 0.0 && grid_per_axis >= 2, "need a positive radius and at least two points per axis");
    let n = field.dim();
    let dense = n.min(DENSE_AXES);
    let offset = |k: usize| -radius + 2.0 * radius * k as f64 / (grid_per_axis - 1) as f64;
    let mut best = 0.0f64;
    let mut point = center.to_vec();
    let mut index = vec![0usize; dense];
    loop {
        for (axis, &k) in index.iter().enumerate() {
            point[axis] = center[axis] + offset(k);
        }
        best = best.max(spectral_norm(&jacobian_fd(field, &point, FD_STEP)?));
        // odometer over the dense axes
        let mut axis = 0;
        while axis < dense {
            index[axis] += 1;
            if index[axis] < grid_per_axis {
                break;
            }
            index[axis] = 0;
            axis += 1;
        }
        if axis == dense {
            break;
        }
    }
    if n > DENSE_AXES {
        let mut rng = ChaCha8Rng::seed_from_u64(SAMPLING_SEED);
        for _ in 0..MONTE_CARLO_POINTS {
            for (x, c) in point.iter_mut().zip(center) {
                *x = c + rng.gen_range(-radius..=radius);
            }
            best = best.max(spectral_norm(&jacobian_fd(field, &point, FD_STEP)?));
        }
    }
    Ok(best)
}

/// Yorke's bound `2π / L` on the period of a nonconstant periodic orbit and
/// whether `period` lies strictly below it.
pub fn yorke_check(lipschitz: f64, period: f64) -> (f64, bool) {
    let bound = if lipschitz == 0.0 { f64::INFINITY } else { 2.0 * PI / lipschitz };
    (bound, period < bound)
}

/// `0.1 (1 + |P|_∞)` around the lifted zero.
pub fn default_radius(z: &ZeroRecord) -> f64 {
    0.1 * (1.0 + z.lifted.sup_norm())
}

/// Certifies the trivial pair at `z` as ejecting when the forcing period is
/// below Yorke's bound for `1.1 L` and Φ crosses zero transversally there.
pub fn certify_ejecting(p: &ProblemSpec, z: &ZeroRecord, radius: f64) -> Result<CertReport, ChainError> {
    certify_ejecting_on_grid(p, z, radius, DEFAULT_BOX_GRID)
}

pub fn certify_ejecting_on_grid(p: &ProblemSpec, z: &ZeroRecord, radius: f64, grid: usize) -> Result<CertReport, ChainError> {
    let field = expand(p.clone());
    let lipschitz = lipschitz_estimate(&field, z.lifted.as_slice(), radius, grid)?;
    let (bound, _) = yorke_check(lipschitz, p.period());
    let (_, passes) = yorke_check(SAFETY_FACTOR * lipschitz, p.period());
    let mut notes = format!("L = {lipschitz:.6} is a sampled lower estimate; compared as {SAFETY_FACTOR} L");
    if !passes {
        notes.push_str(&format!("; T = {} is not below 2π/(1.1 L)", p.period()));
    }
    if !z.nondegenerate {
        notes.push_str("; zero is degenerate");
    }
    if !z.sign_change {
        notes.push_str("; Φ does not change sign");
    }
    Ok(CertReport {
        zero: z.clone(),
        box_radius: radius,
        lipschitz,
        yorke_period_bound: bound,
        period: p.period(),
        ejecting_certified: passes && z.nondegenerate && z.sign_change,
        notes,
    })
}

/// Scans `(α, β)` for zeros and certifies each with the default box.
pub fn multiplicity_report(p: &ProblemSpec, alpha: f64, beta: f64) -> Result<MultiplicityReport, AnalysisError> {
    multiplicity_report_on_grid(p, alpha, beta, DEFAULT_GRID, None, DEFAULT_BOX_GRID)
}

/// As [`multiplicity_report`] with explicit scan resolution, box radius
/// (default per zero when `None`) and box grid.
pub fn multiplicity_report_on_grid(
    p: &ProblemSpec,
    alpha: f64,
    beta: f64,
    grid_n: usize,
    radius: Option<f64>,
    box_grid: usize,
) -> Result<MultiplicityReport, AnalysisError> {
    let zeros = scan_zeros(p, alpha, beta, grid_n)?;
    let certified_zeros = zeros
        .iter()
        .map(|z| certify_ejecting_on_grid(p, z, radius.unwrap_or_else(|| default_radius(z)), box_grid))
        .collect::<Result<Vec<_>, _>>()?;
    let crossing = certified_zeros.iter().filter(|c| c.zero.sign_change).count();
    let n = certified_zeros.iter().filter(|c| c.ejecting_certified && c.zero.sign_change).count();
    let verdict = if crossing == 0 {
        String::new()
    } else if n == crossing {
        format!("at least {n} T-periodic solutions for small λ > 0, with pairwise disjoint images, one near each ejecting zero")
    } else {
        format!("only {n} of {crossing} sign-changing zeros certified as ejecting; no multiplicity claim")
    };
    Ok(MultiplicityReport {
        interval: (alpha, beta),
        certified_zeros,
        n,
        lambda_star_hint: None,
        verdict,
    })
}

/// `ξ' = A ξ`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearField(pub DMatrix<f64>);

impl VectorField for LinearField {
    fn dim(&self) -> usize {
        self.0.nrows()
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) -> Result<(), ChainError> {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.0.row(i).iter().zip(x).map(|(a, b)| a * b).sum();
        }
        Ok(())
    }
}
