//! Monotone one-dimensional transforms onto `[0, 1]`.
//!
//! Each family is a CDF: linear splines (Categorical), quadratic splines with
//! learnable knots, and mixtures of logistics (DMOL). Kernels are generic over
//! [`Real`] so the same code serves plain evaluation and differentiation.

mod linear;
mod mol;
mod quadratic;

pub use linear::LinearSpline;
pub use mol::{discretized_logistic_mass, Mixture, MIN_SCALE};
pub use quadratic::QuadraticSpline;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Real;

/// Closed interval `[lower, upper]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if lower.is_nan() || upper.is_nan() || lower > upper {
            return Err(Error::contract(format!("invalid interval [{lower}, {upper}]")));
        }
        Ok(Interval { lower, upper })
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Which monotone transform a layer uses, with its size.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "transform", rename_all = "lowercase")]
pub enum TransformFamily {
    Linear { bins: usize },
    Quadratic { bins: usize },
    Mol { mixtures: usize },
}

impl TransformFamily {
    /// Raw parameters per dimension.
    pub fn num_params(&self) -> usize {
        match *self {
            TransformFamily::Linear { bins } => bins,
            TransformFamily::Quadratic { bins } => 2 * bins + 1,
            TransformFamily::Mol { mixtures } => 3 * mixtures,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TransformFamily::Linear { .. } => "linear",
            TransformFamily::Quadratic { .. } => "quadratic",
            TransformFamily::Mol { .. } => "mol",
        }
    }
}

/// A monotone map `[0, Q] → [0, 1]` built from raw parameters.
///
/// For mixtures the domain endpoints act as `±∞`: `f(0) = 0`, `f(Q) = 1`, so
/// the extreme bins absorb the logistic tails exactly as in DMOL.
#[derive(Clone, Debug)]
pub enum Monotone<T = f64> {
    Linear(LinearSpline<T>),
    Quadratic(QuadraticSpline<T>),
    Mol { mixture: Mixture<T>, q: f64 },
}

impl<T: Real> Monotone<T> {
    pub fn build(family: TransformFamily, raw: &[T], q: f64) -> Self {
        debug_assert_eq!(raw.len(), family.num_params());
        match family {
            TransformFamily::Linear { .. } => Monotone::Linear(LinearSpline::from_logits(raw, q)),
            TransformFamily::Quadratic { bins } => {
                Monotone::Quadratic(QuadraticSpline::from_logits(&raw[..bins], &raw[bins..], q))
            }
            TransformFamily::Mol { .. } => Monotone::Mol { mixture: Mixture::from_raw(raw), q },
        }
    }

    pub fn domain(&self) -> f64 {
        match self {
            Monotone::Linear(s) => s.domain(),
            Monotone::Quadratic(s) => s.domain(),
            Monotone::Mol { q, .. } => *q,
        }
    }

    /// `f(y)` for `y ∈ [0, Q]`, unchecked.
    pub fn cdf(&self, y: T) -> T {
        match self {
            Monotone::Linear(s) => s.cdf(y),
            Monotone::Quadratic(s) => s.cdf(y),
            Monotone::Mol { mixture, q } => {
                if y.val() <= 0.0 {
                    T::cst(0.0)
                } else if y.val() >= *q {
                    T::cst(1.0)
                } else {
                    mixture.cdf(y)
                }
            }
        }
    }

    /// `log(f(hi) − f(lo))` for `0 ≤ lo ≤ hi ≤ Q`, computed from the
    /// transform's masses so small intervals keep full relative precision.
    pub fn log_interval_mass(&self, lo: T, hi: T) -> T {
        match self {
            Monotone::Linear(s) => s.log_interval_mass(lo, hi),
            Monotone::Quadratic(s) => s.log_interval_mass(lo, hi),
            Monotone::Mol { mixture, q } => {
                if hi.val() <= lo.val() {
                    return T::cst(f64::NEG_INFINITY);
                }
                let lo = if lo.val() <= 0.0 { T::cst(f64::NEG_INFINITY) } else { lo };
                let hi = if hi.val() >= *q { T::cst(f64::INFINITY) } else { hi };
                mixture.interval_mass(lo, hi).ln()
            }
        }
    }

    /// `log f'(y)` at an interior point.
    pub fn log_density(&self, y: T) -> T {
        match self {
            Monotone::Linear(s) => s.log_density(y),
            Monotone::Quadratic(s) => s.log_density(y),
            Monotone::Mol { mixture, .. } => mixture.log_density(y),
        }
    }
}

impl Monotone<f64> {
    fn check(&self, y: f64) -> Result<()> {
        let q = self.domain();
        if !(0.0..=q).contains(&y) {
            return Err(Error::domain(format!("transform input {y} outside [0, {q}]")));
        }
        Ok(())
    }

    pub fn forward(&self, y: f64) -> Result<f64> {
        self.check(y)?;
        Ok(self.cdf(y))
    }

    pub fn derivative(&self, y: f64) -> Result<f64> {
        self.check(y)?;
        Ok(self.log_density(y).exp())
    }

    /// Generalized inverse onto `[0, Q]`.
    pub fn inverse(&self, z: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&z) {
            return Err(Error::domain(format!("transform latent {z} outside [0, 1]")));
        }
        match self {
            Monotone::Linear(s) => s.inverse(z),
            Monotone::Quadratic(s) => s.inverse(z),
            Monotone::Mol { mixture, q } => {
                if z <= mixture.cdf(0.0) {
                    Ok(0.0)
                } else if z >= mixture.cdf(*q) {
                    Ok(*q)
                } else {
                    mixture.solve_bracketed(z, 0.0, *q)
                }
            }
        }
    }
}

/// Image of an interval under a monotone transform.
pub fn transform_interval(interval: Interval, f: &Monotone) -> Result<Interval> {
    let lower = f.forward(interval.lower)?;
    let upper = f.forward(interval.upper)?;
    Interval::new(lower, upper)
}
