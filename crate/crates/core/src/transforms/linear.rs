use crate::error::{Error, Result};
use crate::numerics::{log_sum_exp_real, Real};

/// Piecewise-linear CDF on `[0, Q]` with `K` equal-width bins and bin masses
/// `π = softmax(logits)`. With `Q = K` the knots sit on the integers and the
/// quantized distribution is exactly `Categorical(π)`.
#[derive(Clone, Debug)]
pub struct LinearSpline<T = f64> {
    log_probs: Vec<T>,
    probs: Vec<T>,
    /// `cum[k] = Σ_{l<k} π_l`, with `cum[0] = 0` and `cum[K] = 1`.
    cum: Vec<T>,
    q: f64,
}

impl<T: Real> LinearSpline<T> {
    pub fn from_logits(logits: &[T], q: f64) -> Self {
        assert!(!logits.is_empty(), "linear spline needs at least one bin");
        let lse = log_sum_exp_real(logits);
        let log_probs: Vec<T> = logits.iter().map(|&l| l - lse).collect();
        let probs: Vec<T> = log_probs.iter().map(|&l| l.exp()).collect();
        let mut cum = Vec::with_capacity(probs.len() + 1);
        cum.push(T::cst(0.0));
        for k in 0..probs.len() - 1 {
            let next = cum[k] + probs[k];
            cum.push(next);
        }
        cum.push(T::cst(1.0));
        LinearSpline { log_probs, probs, cum, q }
    }

    pub fn bins(&self) -> usize {
        self.probs.len()
    }

    pub fn domain(&self) -> f64 {
        self.q
    }

    fn bin_width(&self) -> f64 {
        self.q / self.bins() as f64
    }

    /// Half-open bin `[k·w, (k+1)·w)`; the top edge belongs to the last bin.
    fn bin_of(&self, y: f64) -> usize {
        let k = (y / self.bin_width()).floor();
        if k < 0.0 {
            0
        } else {
            (k as usize).min(self.bins() - 1)
        }
    }

    pub fn probs(&self) -> &[T] {
        &self.probs
    }

    /// Cumulative masses `z_0..z_K`.
    pub fn knots_z(&self) -> &[T] {
        &self.cum
    }

    /// `f(y)` without domain checks.
    pub fn cdf(&self, y: T) -> T {
        let yv = y.val();
        if yv >= self.q {
            return T::cst(1.0);
        }
        let k = self.bin_of(yv);
        let w = self.bin_width();
        let t = (y - T::cst(k as f64 * w)) / T::cst(w);
        self.cum[k] + self.probs[k] * t
    }

    /// Bin holding the left neighbourhood of `y`; a knot belongs to the bin below it.
    fn bin_left_of(&self, y: f64) -> usize {
        let k = (y / self.bin_width()).ceil() - 1.0;
        if k < 0.0 {
            0
        } else {
            (k as usize).min(self.bins() - 1)
        }
    }

    /// `log(f(hi) − f(lo))` from the bin masses, without differencing the CDF.
    pub fn log_interval_mass(&self, lo: T, hi: T) -> T {
        let (a, b) = (self.bin_of(lo.val()), self.bin_left_of(hi.val()));
        let w = self.bin_width();
        if hi.val() <= lo.val() {
            return T::cst(f64::NEG_INFINITY);
        }
        if a == b {
            return self.log_probs[a] + ((hi - lo) / T::cst(w)).ln();
        }
        let mut mass = self.probs[a] * (T::cst((a + 1) as f64 * w) - lo) / T::cst(w);
        for k in a + 1..b {
            mass = mass + self.probs[k];
        }
        mass = mass + self.probs[b] * (hi - T::cst(b as f64 * w)) / T::cst(w);
        mass.ln()
    }

    /// `log f'(y) = log π_k − log w`.
    pub fn log_density(&self, y: T) -> T {
        let k = self.bin_of(y.val());
        self.log_probs[k] - T::cst(self.bin_width().ln())
    }
}

impl LinearSpline<f64> {
    pub fn forward(&self, y: f64) -> Result<f64> {
        if !(0.0..=self.q).contains(&y) {
            return Err(Error::domain(format!("linear spline input {y} outside [0, {}]", self.q)));
        }
        Ok(self.cdf(y))
    }

    pub fn inverse(&self, z: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&z) {
            return Err(Error::domain(format!("linear spline latent {z} outside [0, 1]")));
        }
        if z >= 1.0 {
            return Ok(self.q);
        }
        let k = match self.cum.partition_point(|&c| c <= z) {
            0 => 0,
            p => (p - 1).min(self.bins() - 1),
        };
        let w = self.bin_width();
        let lo = k as f64 * w;
        let y = lo + w * (z - self.cum[k]) / self.probs[k];
        Ok(y.clamp(lo, lo + w))
    }

    pub fn derivative(&self, y: f64) -> Result<f64> {
        if !(0.0..=self.q).contains(&y) {
            return Err(Error::domain(format!("linear spline input {y} outside [0, {}]", self.q)));
        }
        Ok(self.log_density(y).exp())
    }
}
