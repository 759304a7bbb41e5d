use serde::{Deserialize, Serialize};

use super::{DequantKind, Dequantizer};
use crate::error::{Error, Result};
use crate::flow::SubsetFlowModel;
use crate::numerics::{Graph, Rng, Tensor};

/// What training maximizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    Exact,
    ElboUniform,
    ElboVariational,
}

impl Objective {
    pub fn name(&self) -> &'static str {
        match self {
            Objective::Exact => "exact",
            Objective::ElboUniform => "elbo-uniform",
            Objective::ElboVariational => "elbo-variational",
        }
    }

    pub fn dequant_kind(&self) -> Option<DequantKind> {
        match self {
            Objective::Exact => None,
            Objective::ElboUniform => Some(DequantKind::Uniform),
            Objective::ElboVariational => Some(DequantKind::Variational),
        }
    }
}

/// Mean negative objective (nats per example) and its gradients.
#[derive(Clone, Debug)]
pub struct ObjectiveOutput {
    pub loss: f64,
    pub model_grads: Vec<Tensor>,
    pub dequant_grads: Vec<Tensor>,
}

/// Loss and gradients on one batch. Uniforms for the dequantizer are drawn
/// from `rng` in row-major order.
pub fn train_objective(
    model: &SubsetFlowModel,
    deq: &Dequantizer,
    objective: Objective,
    batch: &[Vec<usize>],
    rng: &mut Rng,
) -> Result<ObjectiveOutput> {
    if batch.is_empty() {
        return Err(Error::contract("empty training batch"));
    }
    if let Some(kind) = objective.dequant_kind() {
        if kind != deq.kind() {
            return Err(Error::Config(format!(
                "objective {} needs a {kind:?} dequantizer",
                objective.name()
            )));
        }
    }
    let mut g = Graph::new();
    let mvars = model.bind(&mut g, true);
    let dvars = deq.bind(&mut g, objective == Objective::ElboVariational);
    let per_example = match objective {
        Objective::Exact => {
            model.require_exact()?;
            model.exact_log_likelihood_graph(&mut g, &mvars, batch)?
        }
        Objective::ElboUniform | Objective::ElboVariational => {
            for x in batch {
                model.check_x(x)?;
            }
            let eps: Vec<Vec<f64>> =
                batch.iter().map(|x| x.iter().map(|_| rng.uniform()).collect()).collect();
            let (y, log_q) = deq.sample_graph(&mut g, &dvars, batch, &eps);
            let (_, log_p) = model.push_graph(&mut g, &mvars, y)?;
            g.sub(log_p, log_q)
        }
    };
    let mean = g.mean(per_example);
    let loss_var = g.scale(mean, -1.0);
    let loss = g.value(loss_var).item();
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("non-finite training loss {loss}")));
    }
    let mut wrt = mvars.clone();
    wrt.extend(&dvars);
    let mut grads = g.grad(loss_var, &wrt)?;
    let dequant_grads = grads.split_off(mvars.len());
    Ok(ObjectiveOutput { loss, model_grads: grads, dequant_grads })
}
