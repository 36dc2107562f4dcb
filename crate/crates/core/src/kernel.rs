//! Gamma delay kernels `a^b s^(b-1) e^(-a s) / (b-1)!`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KernelError {
    #[error("kernel rate a must be positive and finite, got {0}")]
    Rate(f64),
    #[error("kernel shape b must be at least 1, got {0}")]
    Shape(u32),
}

/// Gamma density with rate `a` (1/time) and integer shape `b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaKernel {
    a: f64,
    b: u32,
}

impl GammaKernel {
    pub fn new(a: f64, b: u32) -> Result<Self, KernelError> {
        if !(a.is_finite() && a > 0.0) {
            return Err(KernelError::Rate(a));
        }
        if b == 0 {
            return Err(KernelError::Shape(b));
        }
        Ok(GammaKernel { a, b })
    }

    pub fn rate(&self) -> f64 {
        self.a
    }

    pub fn shape(&self) -> u32 {
        self.b
    }

    /// Same rate, different shape. Used for the intermediate chain kernels.
    pub fn with_shape(&self, b: u32) -> Result<Self, KernelError> {
        GammaKernel::new(self.a, b)
    }

    /// Density at `s`; zero for negative `s`. For `b = 1` the value at the
    /// origin is the right limit `a`.
    pub fn eval(&self, s: f64) -> f64 {
        if s < 0.0 {
            return 0.0;
        }
        if s == 0.0 {
            return if self.b == 1 { self.a } else { 0.0 };
        }
        let k = f64::from(self.b);
        let log_fact: f64 = (1..self.b).map(|j| f64::from(j).ln()).sum();
        (k * self.a.ln() + (k - 1.0) * s.ln() - self.a * s - log_fact).exp()
    }

    /// `(mean, variance) = (b/a, b/a^2)`.
    pub fn moments(&self) -> (f64, f64) {
        let k = f64::from(self.b);
        (k / self.a, k / (self.a * self.a))
    }

    /// Panel width used by every quadrature over this kernel.
    pub fn panel(&self) -> f64 {
        self.moments().0 / 100.0
    }

    /// Smallest multiple `H` of the panel width whose tail mass
    /// `1 - ∫_0^H` is at most `eps`. Mass is accumulated panel by panel with
    /// composite Simpson on eight sub-panels each; a single Simpson panel
    /// leaves a quadrature bias near 1e-10.
    pub fn tail_horizon(&self, eps: f64) -> f64 {
        assert!(eps > 0.0 && eps <= 1.0, "tail mass must lie in (0, 1]");
        let h = self.panel();
        let mut mass = Compensated::default();
        let mut k = 0u64;
        while 1.0 - mass.value() > eps {
            let left = k as f64 * h;
            mass.add(simpson(|s| self.eval(s), left, left + h, 8));
            k += 1;
            // e^{-a s} has long since underflowed by here
            if k > 100_000_000 {
                break;
            }
        }
        k as f64 * h
    }
}

/// Composite Simpson rule on `panels` equal panels of `[lo, hi]`.
pub fn simpson(f: impl Fn(f64) -> f64, lo: f64, hi: f64, panels: usize) -> f64 {
    assert!(panels >= 1);
    let h = (hi - lo) / panels as f64;
    let mut acc = Compensated::default();
    acc.add(f(lo) + f(hi));
    for j in 0..panels {
        let left = lo + j as f64 * h;
        acc.add(4.0 * f(left + 0.5 * h));
        if j > 0 {
            acc.add(2.0 * f(left));
        }
    }
    acc.value() * h / 6.0
}

/// Neumaier summation.
#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct Compensated {
    sum: f64,
    carry: f64,
}

impl Compensated {
    pub(crate) fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub(crate) fn value(&self) -> f64 {
        self.sum + self.carry
    }
}
