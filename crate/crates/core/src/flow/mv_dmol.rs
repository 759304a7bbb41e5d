//! The three-channel discretized mixture of logistics as an autoregressive
//! subset flow over channels.
//!
//! Channel `c` is a univariate DMOL whose means are shifted linearly by the
//! earlier channels and whose mixture weights are the component posteriors
//! given those channels.

use crate::error::{Error, Result};
use crate::numerics::log_sum_exp;
use crate::transforms::{Interval, Mixture};

/// Raw parameters of a multivariate DMOL over `C` channels with `M` components.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiDmolParams {
    /// Component logits, length `M`.
    pub logits: Vec<f64>,
    /// Per channel, length `M` each.
    pub means: Vec<Vec<f64>>,
    /// Per channel log-scales, length `M` each.
    pub log_scales: Vec<Vec<f64>>,
    /// Linear coefficients `r1, r2, r3`, length `M` each.
    pub coeffs: Vec<Vec<f64>>,
    pub levels: usize,
}

#[derive(Clone, Debug)]
pub struct MultiDmol {
    params: MultiDmolParams,
}

impl MultiDmol {
    pub fn new(params: MultiDmolParams) -> Result<Self> {
        let c = params.means.len();
        if c != 3 || params.log_scales.len() != 3 {
            return Err(Error::Unsupported(format!("multivariate DMOL is defined for 3 channels, got {c}")));
        }
        if params.coeffs.len() != 3 {
            return Err(Error::contract("multivariate DMOL needs three coefficient vectors"));
        }
        let m = params.logits.len();
        if m == 0
            || params.means.iter().chain(&params.log_scales).chain(&params.coeffs).any(|v| v.len() != m)
        {
            return Err(Error::contract("every parameter vector needs one entry per component"));
        }
        if params.levels < 2 {
            return Err(Error::contract("need at least two levels"));
        }
        Ok(MultiDmol { params })
    }

    pub fn components(&self) -> usize {
        self.params.logits.len()
    }

    pub fn levels(&self) -> usize {
        self.params.levels
    }

    /// Mean of component `m` for `channel`, shifted by the earlier channels.
    fn shifted_mean(&self, channel: usize, m: usize, x: &[usize; 3]) -> f64 {
        let p = &self.params;
        let (x1, x2) = (x[0] as f64, x[1] as f64);
        match channel {
            0 => p.means[0][m],
            1 => p.means[1][m] + p.coeffs[0][m] * x1,
            _ => p.means[2][m] + p.coeffs[1][m] * x1 + p.coeffs[2][m] * x2,
        }
    }

    /// Input interval of channel value `v`, with the outer bins open to `±∞`.
    fn edges(&self, v: usize) -> (f64, f64) {
        let lo = if v == 0 { f64::NEG_INFINITY } else { v as f64 };
        let hi = if v + 1 == self.params.levels { f64::INFINITY } else { v as f64 + 1.0 };
        (lo, hi)
    }

    /// `log P_m(x_c | earlier channels)` for each component.
    fn component_log_masses(&self, channel: usize, x: &[usize; 3]) -> Vec<f64> {
        let (lo, hi) = self.edges(x[channel]);
        (0..self.components())
            .map(|m| {
                let raw = [0.0, self.shifted_mean(channel, m, x), self.params.log_scales[channel][m]];
                Mixture::from_raw(&raw).interval_mass(lo, hi).ln()
            })
            .collect()
    }

    /// Conditional univariate DMOL of `channel` given the earlier channels.
    pub fn conditional(&self, channel: usize, x: &[usize; 3]) -> Result<Mixture> {
        if channel >= 3 {
            return Err(Error::contract("channel index out of range"));
        }
        let m = self.components();
        let mut log_w = self.params.logits.clone();
        for earlier in 0..channel {
            for (w, lm) in log_w.iter_mut().zip(self.component_log_masses(earlier, x)) {
                *w += lm;
            }
        }
        let lse = log_sum_exp(&log_w)?;
        let mut raw: Vec<f64> = log_w.iter().map(|w| w - lse).collect();
        raw.extend((0..m).map(|k| self.shifted_mean(channel, k, x)));
        raw.extend_from_slice(&self.params.log_scales[channel]);
        Ok(Mixture::from_raw(&raw))
    }

    fn check(&self, x: &[usize; 3]) -> Result<()> {
        if x.iter().any(|&v| v >= self.params.levels) {
            return Err(Error::domain(format!("channel values must be below {}", self.params.levels)));
        }
        Ok(())
    }

    /// Latent interval of each channel under the autoregressive flow.
    pub fn latent_intervals(&self, x: &[usize; 3]) -> Result<[Interval; 3]> {
        self.check(x)?;
        let mut out = [Interval { lower: 0.0, upper: 0.0 }; 3];
        for (c, slot) in out.iter_mut().enumerate() {
            let f = self.conditional(c, x)?;
            let (lo, hi) = self.edges(x[c]);
            *slot = Interval::new(f.cdf(lo), f.cdf(hi))?;
        }
        Ok(out)
    }

    /// `log P(x)` as the sum of per-channel latent interval log-widths. Widths
    /// are evaluated in whichever logistic tail keeps full precision.
    pub fn log_prob(&self, x: &[usize; 3]) -> Result<f64> {
        self.check(x)?;
        let mut total = 0.0;
        for c in 0..3 {
            let f = self.conditional(c, x)?;
            let (lo, hi) = self.edges(x[c]);
            total += f.interval_mass(lo, hi).ln();
        }
        Ok(total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transforms::discretized_logistic_mass;

    fn params(m: usize, levels: usize) -> MultiDmolParams {
        MultiDmolParams {
            logits: vec![0.0; m],
            means: vec![vec![2.0; m], vec![3.0; m], vec![4.5; m]],
            log_scales: vec![vec![0.0; m]; 3],
            coeffs: vec![vec![0.0; m]; 3],
            levels,
        }
    }

    #[test]
    fn rejects_other_channel_counts() {
        let mut p = params(2, 8);
        p.means.pop();
        p.log_scales.pop();
        assert!(matches!(MultiDmol::new(p), Err(Error::Unsupported(_))));
    }

    #[test]
    fn decoupled_case_factorizes() {
        let flow = MultiDmol::new(params(2, 8)).unwrap();
        let x = [1, 3, 7];
        let expected: f64 = [(1, 2.0), (3, 3.0), (7, 4.5)]
            .iter()
            .map(|&(v, mu)| discretized_logistic_mass(v, mu + 0.0, 1.0, 8).ln())
            .sum();
        assert!((flow.log_prob(&x).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn single_component_posterior_is_one() {
        let mut p = params(1, 8);
        p.coeffs = vec![vec![0.3], vec![-0.2], vec![0.5]];
        let flow = MultiDmol::new(p).unwrap();
        let x = [4, 2, 6];
        let w = flow.conditional(2, &x).unwrap().weights();
        assert!((w[0] - 1.0).abs() < 1e-15);
        let means = [2.0, 3.0 + 0.3 * 4.0, 4.5 - 0.2 * 4.0 + 0.5 * 2.0];
        let expected: f64 =
            (0..3).map(|c| discretized_logistic_mass(x[c], means[c], 1.0, 8).ln()).sum();
        assert!((flow.log_prob(&x).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn normalizes_over_all_outcomes() {
        let mut p = params(3, 8);
        p.logits = vec![0.2, -1.0, 0.7];
        p.means = vec![vec![1.0, 5.0, 3.0], vec![2.0, 6.5, 0.5], vec![4.0, 1.0, 7.0]];
        p.log_scales = vec![vec![0.1, -0.5, 0.4], vec![0.0, 0.3, -0.2], vec![-0.1, 0.2, 0.5]];
        p.coeffs = vec![vec![0.5, -0.3, 0.1], vec![0.2, 0.4, -0.6], vec![-0.1, 0.3, 0.8]];
        let flow = MultiDmol::new(p).unwrap();
        let mut total = 0.0;
        for a in 0..8 {
            for b in 0..8 {
                for c in 0..8 {
                    total += flow.log_prob(&[a, b, c]).unwrap().exp();
                }
            }
        }
        assert!((total - 1.0).abs() < 1e-12);
    }
}
