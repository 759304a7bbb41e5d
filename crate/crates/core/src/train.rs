//! Minibatch training with Adam.

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::data::Dataset;
use crate::dequant::{bits_per_dim, train_objective, DequantKind, Dequantizer};
use crate::error::{Error, Result};
use crate::flow::SubsetFlowModel;
use crate::numerics::{OptimState, Rng, Tensor};

/// Substreams of the run seed.
const INIT_STREAM: u64 = 1;
const DEQUANT_STREAM: u64 = 2;
const TRAIN_STREAM: u64 = 3;

/// Mean training loss of one epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: u32,
    /// Negative objective, nats per example.
    pub loss: f64,
    pub bits_per_dim: f64,
}

/// Trains from scratch and returns the final checkpoint. `on_epoch` sees
/// each epoch's mean loss.
pub fn train(
    cfg: &RunConfig,
    config_text: &str,
    data: &Dataset,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Checkpoint> {
    cfg.validate()?;
    let (dims, levels) = (data.dims(), data.levels());
    if levels < 2 {
        return Err(Error::Config("training data needs at least two levels".into()));
    }
    let root = Rng::new(cfg.train.seed);
    let mut model = SubsetFlowModel::new(&cfg.model, dims, levels, &mut root.split(INIT_STREAM))?;
    let mut deq = match cfg.train.objective.dequant_kind() {
        Some(DequantKind::Variational) => {
            Dequantizer::variational(dims, levels, &cfg.train.dequant_hidden, &mut root.split(DEQUANT_STREAM))
        }
        _ => Dequantizer::uniform(dims, levels),
    };
    let mut rng = root.split(TRAIN_STREAM);
    let mut params: Vec<Tensor> = model.tensors().into_iter().chain(deq.tensors()).cloned().collect();
    let mut optim = OptimState::new(&params, cfg.train.lr, cfg.train.schedule());
    let split = model.tensors().len();
    let rows = data.rows();
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let mut step = 0u64;
    for epoch in 0..cfg.train.epochs {
        rng.shuffle(&mut order);
        let mut total = 0.0;
        let mut seen = 0usize;
        for chunk in order.chunks(cfg.train.batch) {
            let batch: Vec<Vec<usize>> = chunk.iter().map(|&i| rows[i].clone()).collect();
            let out = train_objective(&model, &deq, cfg.train.objective, &batch, &mut rng)?;
            let mut grads = out.model_grads;
            grads.extend(out.dequant_grads);
            optim.adam_step(&mut params, &grads, epoch)?;
            model.set_tensors(params[..split].to_vec())?;
            deq.set_tensors(params[split..].to_vec())?;
            total += out.loss * batch.len() as f64;
            seen += batch.len();
            step += 1;
        }
        if seen > 0 {
            let loss = total / seen as f64;
            on_epoch(&EpochLog { epoch, loss, bits_per_dim: bits_per_dim(-loss, dims) });
        }
    }
    let mut tensors: Vec<(String, Tensor)> = model.tensor_names().into_iter().zip(params[..split].iter().cloned()).collect();
    tensors.extend(deq.tensor_names().into_iter().zip(params[split..].iter().cloned()));
    Ok(Checkpoint {
        config_text: config_text.to_string(),
        dims,
        levels,
        tensors,
        optimizer: optim,
        rng: rng.state(),
        step,
        epoch: cfg.train.epochs,
    })
}
