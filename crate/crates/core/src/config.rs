//! TOML run configuration.
//!
//! ```toml
//! [model]
//! bin_conditioning = true
//!
//! [[model.layers]]
//! transform = "quadratic"
//! bins = 16
//! hidden = [64, 64]
//! order = "raster"
//!
//! [train]
//! objective = "exact"
//! lr = 1e-3
//! batch = 64
//! epochs = 20
//! seed = 0
//! lr_decay = [[10, 0.5]]
//!
//! [eval]
//! estimators = ["exact", "elbo", "iwbo"]
//! k_list = [10, 100]
//! mc_samples = 1
//! ```

use serde::{Deserialize, Serialize};

use crate::dequant::{Estimator, Objective};
use crate::error::{Error, Result};
use crate::flow::ModelSpec;
use crate::numerics::LrSchedule;

fn default_dequant_hidden() -> Vec<usize> {
    vec![32]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub objective: Objective,
    pub lr: f64,
    pub batch: usize,
    pub epochs: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub lr_decay: Vec<(u32, f64)>,
    /// Hidden widths of the variational dequantizer network.
    #[serde(default = "default_dequant_hidden")]
    pub dequant_hidden: Vec<usize>,
}

impl TrainConfig {
    pub fn schedule(&self) -> LrSchedule {
        LrSchedule(self.lr_decay.clone())
    }
}

/// Estimator names accepted in configs and on the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Exact,
    Elbo,
    Iwbo,
}

impl std::str::FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(EstimatorKind::Exact),
            "elbo" => Ok(EstimatorKind::Elbo),
            "iwbo" => Ok(EstimatorKind::Iwbo),
            other => Err(Error::Config(format!("unknown estimator '{other}' (expected exact, elbo or iwbo)"))),
        }
    }
}

fn default_estimators() -> Vec<EstimatorKind> {
    vec![EstimatorKind::Exact, EstimatorKind::Elbo, EstimatorKind::Iwbo]
}

fn default_k_list() -> Vec<usize> {
    vec![10, 100]
}

fn default_mc_samples() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default = "default_estimators")]
    pub estimators: Vec<EstimatorKind>,
    #[serde(default = "default_k_list")]
    pub k_list: Vec<usize>,
    #[serde(default = "default_mc_samples")]
    pub mc_samples: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { estimators: default_estimators(), k_list: default_k_list(), mc_samples: default_mc_samples() }
    }
}

/// Expands estimator kinds into concrete estimators, one IWBO per `k`.
pub fn expand_estimators(kinds: &[EstimatorKind], k_list: &[usize]) -> Result<Vec<Estimator>> {
    let mut out = Vec::new();
    for kind in kinds {
        match kind {
            EstimatorKind::Exact => out.push(Estimator::Exact),
            EstimatorKind::Elbo => out.push(Estimator::Elbo),
            EstimatorKind::Iwbo => {
                if k_list.is_empty() {
                    return Err(Error::Config("iwbo requested with an empty k list".into()));
                }
                for &k in k_list {
                    if k == 0 {
                        return Err(Error::Config("iwbo needs k ≥ 1".into()));
                    }
                    out.push(Estimator::Iwbo(k));
                }
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

impl RunConfig {
    /// Parses and validates a TOML document.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let t = &self.train;
        if self.train.objective == Objective::Exact && !self.model.exact_capable() {
            return Err(Error::Config(
                "objective = \"exact\" requires bin_conditioning = true and one shared layer order".into(),
            ));
        }
        if !(t.lr > 0.0 && t.lr.is_finite()) {
            return Err(Error::Config(format!("train.lr must be positive, got {}", t.lr)));
        }
        if t.batch == 0 {
            return Err(Error::Config("train.batch must be positive".into()));
        }
        if t.lr_decay.iter().any(|&(_, f)| !(f > 0.0 && f.is_finite())) {
            return Err(Error::Config("train.lr_decay factors must be positive".into()));
        }
        if t.dequant_hidden.iter().any(|&h| h == 0) {
            return Err(Error::Config("train.dequant_hidden widths must be positive".into()));
        }
        if self.eval.mc_samples == 0 {
            return Err(Error::Config("eval.mc_samples must be positive".into()));
        }
        expand_estimators(&self.eval.estimators, &self.eval.k_list)?;
        Ok(())
    }
}
