use crate::error::{Error, Result};
use crate::numerics::ad::sigmoid_f64;
use crate::numerics::{log_sum_exp_real, Real};

/// Lower bound on mixture component scales.
pub const MIN_SCALE: f64 = 1e-3;

/// Offset between a value `y` and the logistic argument, so that the bin
/// `[x, x+1)` collects the logistic mass on `[x − ½, x + ½)`.
const HALF_OFFSET: f64 = 0.5;

/// CDF of a mixture of logistics, `f(y) = Σ_m π_m σ((y − ½ − μ_m)/s_m)`.
#[derive(Clone, Debug)]
pub struct Mixture<T = f64> {
    log_weights: Vec<T>,
    means: Vec<T>,
    scales: Vec<T>,
}

impl<T: Real> Mixture<T> {
    /// From raw `[logits | means | log-scales]`, each of length `M`.
    pub fn from_raw(raw: &[T]) -> Self {
        assert!(raw.len() % 3 == 0 && !raw.is_empty(), "mixture raw params must be 3·M");
        let m = raw.len() / 3;
        let lse = log_sum_exp_real(&raw[..m]);
        let log_weights = raw[..m].iter().map(|&l| l - lse).collect();
        let means = raw[m..2 * m].to_vec();
        let scales = raw[2 * m..]
            .iter()
            .map(|&ls| {
                let s = ls.exp();
                if s.val() < MIN_SCALE {
                    T::cst(MIN_SCALE)
                } else {
                    s
                }
            })
            .collect();
        Mixture { log_weights, means, scales }
    }

    pub fn components(&self) -> usize {
        self.means.len()
    }

    fn arg(&self, m: usize, y: T) -> T {
        (y - T::cst(HALF_OFFSET) - self.means[m]) / self.scales[m]
    }

    /// Mixture CDF at a finite `y`; `±∞` map to 1 and 0.
    pub fn cdf(&self, y: T) -> T {
        let yv = y.val();
        if yv == f64::NEG_INFINITY {
            return T::cst(0.0);
        }
        if yv == f64::INFINITY {
            return T::cst(1.0);
        }
        let mut acc = T::cst(0.0);
        for m in 0..self.components() {
            acc = acc + self.log_weights[m].exp() * self.arg(m, y).sigmoid();
        }
        acc
    }

    /// `log f'(y)`.
    pub fn log_density(&self, y: T) -> T {
        let terms: Vec<T> = (0..self.components())
            .map(|m| {
                let t = self.arg(m, y);
                self.log_weights[m] + t.ln_sigmoid() + (-t).ln_sigmoid() - self.scales[m].ln()
            })
            .collect();
        log_sum_exp_real(&terms)
    }

    /// `f(hi) − f(lo)` summed per component in whichever tail keeps precision.
    pub fn interval_mass(&self, lo: T, hi: T) -> T {
        let mut acc = T::cst(0.0);
        for m in 0..self.components() {
            let w = self.log_weights[m].exp();
            let part = match (lo.val() == f64::NEG_INFINITY, hi.val() == f64::INFINITY) {
                (true, true) => T::cst(1.0),
                (true, false) => self.arg(m, hi).sigmoid(),
                (false, true) => (-self.arg(m, lo)).sigmoid(),
                (false, false) => {
                    let a = self.arg(m, lo);
                    let b = self.arg(m, hi);
                    if a.val() > 0.0 {
                        (-a).sigmoid() - (-b).sigmoid()
                    } else {
                        b.sigmoid() - a.sigmoid()
                    }
                }
            };
            acc = acc + w * part;
        }
        acc
    }
}

impl Mixture<f64> {
    /// From explicit weights, means and scales.
    pub fn new(weights: &[f64], means: &[f64], scales: &[f64]) -> Result<Self> {
        let m = weights.len();
        if m == 0 || means.len() != m || scales.len() != m {
            return Err(Error::contract("mixture needs equal, non-zero component counts"));
        }
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|&w| w <= 0.0) || (total - 1.0).abs() > 1e-12 {
            return Err(Error::contract("mixture weights must be positive and sum to one"));
        }
        if scales.iter().any(|&s| s < MIN_SCALE) {
            return Err(Error::contract(format!("mixture scales must be at least {MIN_SCALE}")));
        }
        Ok(Mixture {
            log_weights: weights.iter().map(|w| w.ln()).collect(),
            means: means.to_vec(),
            scales: scales.to_vec(),
        })
    }

    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|l| l.exp()).collect()
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn forward(&self, y: f64) -> Result<f64> {
        if y.is_nan() {
            return Err(Error::domain("mixture CDF of NaN"));
        }
        Ok(self.cdf(y))
    }

    pub fn derivative(&self, y: f64) -> f64 {
        self.log_density(y).exp()
    }

    /// Inverse CDF on the real line: bracket, bisect, then Newton-polish until
    /// `|f(y) − z| < 1e-12`.
    pub fn inverse(&self, z: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&z) {
            return Err(Error::domain(format!("mixture latent {z} outside [0, 1]")));
        }
        if z == 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        if z == 1.0 {
            return Ok(f64::INFINITY);
        }
        let centre_lo = self.means.iter().copied().fold(f64::INFINITY, f64::min) + HALF_OFFSET;
        let centre_hi = self.means.iter().copied().fold(f64::NEG_INFINITY, f64::max) + HALF_OFFSET;
        let spread = self.scales.iter().copied().fold(0.0, f64::max).max(1.0);
        let mut lo = centre_lo - spread;
        let mut hi = centre_hi + spread;
        let mut step = spread;
        for _ in 0..2000 {
            if self.cdf(lo) <= z {
                break;
            }
            step *= 2.0;
            lo -= step;
        }
        step = spread;
        for _ in 0..2000 {
            if self.cdf(hi) >= z {
                break;
            }
            step *= 2.0;
            hi += step;
        }
        if !(self.cdf(lo) <= z && self.cdf(hi) >= z) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Numeric(format!("mixture inverse could not bracket z={z}")));
        }
        self.solve_bracketed(z, lo, hi)
    }

    /// Inverse restricted to `[lo, hi]`, assuming `f(lo) ≤ z ≤ f(hi)`.
    pub(crate) fn solve_bracketed(&self, z: f64, mut lo: f64, mut hi: f64) -> Result<f64> {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.cdf(mid) < z {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-9 * (1.0 + mid.abs()) {
                break;
            }
        }
        let mut y = 0.5 * (lo + hi);
        for _ in 0..50 {
            let err = self.cdf(y) - z;
            if err.abs() < 1e-13 {
                break;
            }
            let d = self.derivative(y);
            let next = y - err / d;
            if d > 0.0 && next.is_finite() && next >= lo && next <= hi {
                y = next;
            } else {
                if err < 0.0 {
                    lo = y;
                } else {
                    hi = y;
                }
                y = 0.5 * (lo + hi);
            }
        }
        let resid = (self.cdf(y) - z).abs();
        if resid >= 1e-12 {
            return Err(Error::Numeric(format!(
                "mixture inverse residual {resid:e} at z={z} (bracket [{lo}, {hi}])"
            )));
        }
        Ok(y)
    }
}

/// Discretized-logistic mass with absorbing tails at `0` and `levels − 1`.
pub fn discretized_logistic_mass(x: usize, mean: f64, scale: f64, levels: usize) -> f64 {
    let s = |t: f64| sigmoid_f64((t - mean) / scale);
    let xf = x as f64;
    if x == 0 {
        s(xf + 0.5)
    } else if x == levels - 1 {
        1.0 - s(xf - 0.5)
    } else {
        s(xf + 0.5) - s(xf - 0.5)
    }
}
