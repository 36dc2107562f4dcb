//! Linear chain reduction of the gamma-delay equation
//!
//! ```text
//! x'' = g(x, x', ∫ γ(t-s) φ(x(s), x'(s)) ds) + λ f(t, x, x')
//! ```
//!
//! to the first-order system `ξ' = G(ξ) + λ F(t, ξ)` on `R^(b+2)` with
//! `ξ = (u, v0, v1, …, vb)`:
//!
//! ```text
//! G(ξ) = (v0, g(u, v0, vb), a(φ(u, v0) - v1), a(v1 - v2), …, a(v(b-1) - vb))
//! F(t, ξ) = (0, f(t, u, v0), 0, …, 0)
//! ```

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{self, Expr, ExprError};
use crate::kernel::{GammaKernel, KernelError};
use crate::orbit::Trajectory;

pub const G_VARS: [&str; 3] = ["x0", "x1", "x2"];
pub const PHI_VARS: [&str; 2] = ["p", "q"];
pub const F_VARS: [&str; 3] = ["t", "x", "v"];

const PERIODICITY_SAMPLES: usize = 50;
const PERIODICITY_TOL: f64 = 1e-9;
const PERIODICITY_SEED: u64 = 0x5EED;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChainError {
    #[error("in `{which}`: {source}")]
    Expr {
        which: &'static str,
        #[source]
        source: ExprError,
    },
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("forcing period must be positive and finite, got {0}")]
    Period(f64),
    #[error("forcing is not periodic: f({t}, {x}, {v}) and f(t+T, ..) differ by {gap:e}")]
    NotPeriodic { t: f64, x: f64, v: f64, gap: f64 },
}

/// The data `(g, φ, f)`, kernel and forcing period of one problem.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    g: Expr,
    phi: Expr,
    f: Expr,
    kernel: GammaKernel,
    period: f64,
}

impl ProblemSpec {
    /// Parses the three expressions over their fixed variable names
    /// (`x0, x1, x2` for g; `p, q` for φ; `t, x, v` for f) and validates.
    pub fn parse(g: &str, phi: &str, f: &str, a: f64, b: u32, period: f64) -> Result<Self, ChainError> {
        let wrap = |which| move |source| ChainError::Expr { which, source };
        let g = expr::parse(g, &G_VARS).map_err(wrap("g"))?;
        let phi = expr::parse(phi, &PHI_VARS).map_err(wrap("phi"))?;
        let f = expr::parse(f, &F_VARS).map_err(wrap("f"))?;
        ProblemSpec::new(g, phi, f, GammaKernel::new(a, b)?, period)
    }

    pub fn new(g: Expr, phi: Expr, f: Expr, kernel: GammaKernel, period: f64) -> Result<Self, ChainError> {
        if !(period.is_finite() && period > 0.0) {
            return Err(ChainError::Period(period));
        }
        let spec = ProblemSpec {
            g,
            phi,
            f,
            kernel,
            period,
        };
        spec.check_periodic()?;
        Ok(spec)
    }

    fn check_periodic(&self) -> Result<(), ChainError> {
        let mut rng = ChaCha8Rng::seed_from_u64(PERIODICITY_SEED);
        for _ in 0..PERIODICITY_SAMPLES {
            let t = rng.gen_range(0.0..self.period);
            let x = rng.gen_range(-2.0..2.0);
            let v = rng.gen_range(-2.0..2.0);
            let now = self.forcing(t, x, v)?;
            let later = self.forcing(t + self.period, x, v)?;
            let gap = (now - later).abs();
            if gap > PERIODICITY_TOL * (1.0 + now.abs()) {
                return Err(ChainError::NotPeriodic { t, x, v, gap });
            }
        }
        Ok(())
    }

    pub fn g_expr(&self) -> &Expr {
        &self.g
    }

    pub fn phi_expr(&self) -> &Expr {
        &self.phi
    }

    pub fn f_expr(&self) -> &Expr {
        &self.f
    }

    pub fn kernel(&self) -> GammaKernel {
        self.kernel
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    /// Dimension `b + 2` of the expanded system.
    pub fn dim(&self) -> usize {
        self.kernel.shape() as usize + 2
    }

    pub fn g(&self, x: f64, xdot: f64, delayed: f64) -> Result<f64, ChainError> {
        self.g
            .eval_slice(&[x, xdot, delayed])
            .map_err(|source| ChainError::Expr { which: "g", source })
    }

    pub fn phi(&self, p: f64, q: f64) -> Result<f64, ChainError> {
        self.phi
            .eval_slice(&[p, q])
            .map_err(|source| ChainError::Expr { which: "phi", source })
    }

    pub fn forcing(&self, t: f64, x: f64, v: f64) -> Result<f64, ChainError> {
        self.f
            .eval_slice(&[t, x, v])
            .map_err(|source| ChainError::Expr { which: "f", source })
    }

    /// `Φ(u) = g(u, 0, φ(u, 0))`.
    pub fn bifurcation_fn(&self, u: f64) -> Result<f64, ChainError> {
        self.g(u, 0.0, self.phi(u, 0.0)?)
    }

    /// `(u, 0, φ(u,0), …, φ(u,0))`; a zero of G exactly when `Φ(u) = 0`.
    pub fn lifted_zero(&self, u: f64) -> Result<StatePoint, ChainError> {
        let w = self.phi(u, 0.0)?;
        let mut coords = vec![w; self.dim()];
        coords[0] = u;
        coords[1] = 0.0;
        Ok(StatePoint(coords))
    }
}

/// A point `(u, v0, v1, …, vb)` of the expanded phase space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StatePoint(pub Vec<f64>);

impl StatePoint {
    pub fn zeros(dim: usize) -> Self {
        StatePoint(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn u(&self) -> f64 {
        self.0[0]
    }

    /// `v_i`, `0 <= i <= b`.
    pub fn v(&self, i: usize) -> f64 {
        self.0[i + 1]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn sup_norm(&self) -> f64 {
        self.0.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

impl From<Vec<f64>> for StatePoint {
    fn from(v: Vec<f64>) -> Self {
        StatePoint(v)
    }
}

impl fmt::Display for StatePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, x) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{x}")?;
        }
        write!(f, ")")
    }
}

/// An autonomous vector field on `R^n`.
pub trait VectorField {
    fn dim(&self) -> usize;
    fn eval(&self, x: &[f64], out: &mut [f64]) -> Result<(), ChainError>;
}

/// The unperturbed field G together with the forcing F of one problem.
#[derive(Debug, Clone)]
pub struct ExpandedField {
    problem: Arc<ProblemSpec>,
}

pub fn expand(problem: ProblemSpec) -> ExpandedField {
    ExpandedField {
        problem: Arc::new(problem),
    }
}

impl ExpandedField {
    pub fn problem(&self) -> &ProblemSpec {
        &self.problem
    }

    pub fn dim(&self) -> usize {
        self.problem.dim()
    }

    pub fn period(&self) -> f64 {
        self.problem.period
    }

    fn chain_tail(&self, xi: &[f64], first_link: f64, out: &mut [f64]) {
        let a = self.problem.kernel.rate();
        out[2] = a * (first_link - xi[2]);
        for i in 3..xi.len() {
            out[i] = a * (xi[i - 1] - xi[i]);
        }
    }

    /// `G(ξ)`.
    pub fn unforced(&self, xi: &[f64], out: &mut [f64]) -> Result<(), ChainError> {
        let p = &self.problem;
        let last = xi[xi.len() - 1];
        out[0] = xi[1];
        out[1] = p.g(xi[0], xi[1], last)?;
        self.chain_tail(xi, p.phi(xi[0], xi[1])?, out);
        Ok(())
    }

    /// `F(t, ξ)`: zero except for the second component.
    pub fn forcing(&self, t: f64, xi: &[f64], out: &mut [f64]) -> Result<(), ChainError> {
        out.fill(0.0);
        out[1] = self.problem.forcing(t, xi[0], xi[1])?;
        Ok(())
    }

    /// `G(ξ) + λ F(t, ξ)`. The forcing is not evaluated at `λ = 0`.
    pub fn rhs(&self, t: f64, lambda: f64, xi: &[f64], out: &mut [f64]) -> Result<(), ChainError> {
        self.unforced(xi, out)?;
        if lambda != 0.0 {
            out[1] += lambda * self.problem.forcing(t, xi[0], xi[1])?;
        }
        Ok(())
    }

    /// The modified field whose third component couples back to `vb`
    /// instead of `v1`: `a(φ(u, v0) - vb)`. It has the same zeros as G and
    /// is admissibly homotopic to it, so both share a degree.
    pub fn modified(&self) -> ModifiedField<'_> {
        ModifiedField(self)
    }

    pub fn lifted_zero(&self, u: f64) -> Result<StatePoint, ChainError> {
        self.problem.lifted_zero(u)
    }
}

impl VectorField for ExpandedField {
    fn dim(&self) -> usize {
        self.problem.dim()
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) -> Result<(), ChainError> {
        self.unforced(x, out)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ModifiedField<'a>(&'a ExpandedField);

impl VectorField for ModifiedField<'_> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn eval(&self, xi: &[f64], out: &mut [f64]) -> Result<(), ChainError> {
        let p = &self.0.problem;
        let a = p.kernel.rate();
        let n = xi.len();
        out[0] = xi[1];
        out[1] = p.g(xi[0], xi[1], xi[n - 1])?;
        out[2] = a * (p.phi(xi[0], xi[1])? - xi[n - 1]);
        for i in 3..n {
            out[i] = a * (xi[i - 1] - xi[i]);
        }
        Ok(())
    }
}

/// Central-difference Jacobian of `field` at `x`.
pub fn jacobian_fd(field: &dyn VectorField, x: &[f64], step: f64) -> Result<DMatrix<f64>, ChainError> {
    let n = field.dim();
    let mut jac = DMatrix::zeros(n, n);
    let mut probe = x.to_vec();
    let (mut plus, mut minus) = (vec![0.0; n], vec![0.0; n]);
    for j in 0..n {
        probe[j] = x[j] + step;
        field.eval(&probe, &mut plus)?;
        probe[j] = x[j] - step;
        field.eval(&probe, &mut minus)?;
        probe[j] = x[j];
        for i in 0..n {
            jac[(i, j)] = (plus[i] - minus[i]) / (2.0 * step);
        }
    }
    Ok(jac)
}

/// Position and velocity tracks `(x, x')` of a sampled trajectory of the
/// expanded system: its first two coordinates.
pub fn project(traj: &Trajectory) -> (Vec<f64>, Vec<f64>) {
    traj.states
        .iter()
        .map(|s| (s[0], s[1]))
        .unzip()
}
