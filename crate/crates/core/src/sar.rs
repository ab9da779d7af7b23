//! Local client training with the pruning-rate-scaled proximal term
//! `λ · ρ · ‖W − W̃‖²` anchored at the dispatched submodel `W̃`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::linalg::sq_norm_diff;
use crate::nn::{ce_loss_and_grads, sgd_step, Batch, LayerStack};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SarConfig {
    pub lambda: f64,
    pub local_epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for SarConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            local_epochs: 5,
            lr: 0.001,
            batch_size: 256,
        }
    }
}

impl SarConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig {
                field: "sar.lambda",
                reason: format!("must be >= 0, got {}", self.lambda),
            });
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig {
                field: "sar.lr",
                reason: format!("must be > 0, got {}", self.lr),
            });
        }
        if self.local_epochs == 0 {
            return Err(Error::InvalidConfig {
                field: "sar.local_epochs",
                reason: "must be >= 1".into(),
            });
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig {
                field: "sar.batch_size",
                reason: "must be >= 1".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    /// Mean minibatch cross-entropy over the epoch.
    pub ce: f64,
    /// `ρ · ‖W − W̃‖²` at the end of the epoch (before the `λ` factor).
    pub sar: f64,
}

#[derive(Debug, Clone)]
pub struct LocalTrainReport {
    pub final_model: LayerStack,
    /// `‖W − W̃‖²` at the end of training.
    pub drift_sq: f64,
    pub loss_trace: Vec<EpochLoss>,
}

impl LocalTrainReport {
    pub fn last_loss(&self) -> EpochLoss {
        *self.loss_trace.last().expect("at least one epoch")
    }
}

pub fn sar_loss(model: &LayerStack, anchor: &LayerStack, rho: f64) -> Result<f64> {
    Ok(rho * sq_norm_diff(model, anchor)?)
}

/// Value and gradient of `L_CE + λ·ρ·‖W − W̃‖²` on one batch.
#[derive(Debug, Clone)]
pub struct SarObjective {
    pub ce: f64,
    pub total: f64,
    pub grads: LayerStack,
}

pub fn sar_objective_and_grads(
    model: &LayerStack,
    anchor: &LayerStack,
    batch: &Batch,
    rho: f64,
    lambda: f64,
) -> Result<SarObjective> {
    let (ce, mut grads) = ce_loss_and_grads(model, batch)?;
    let strength = lambda * rho;
    if strength == 0.0 {
        return Ok(SarObjective {
            ce,
            total: ce,
            grads,
        });
    }
    let diff = model.lincomb(1.0, anchor, -1.0)?;
    grads.add_scaled(&diff, 2.0 * strength)?;
    Ok(SarObjective {
        ce,
        total: ce + strength * sq_norm_diff(model, anchor)?,
        grads,
    })
}

/// Fisher-Yates minibatch order for every epoch from one seeded stream.
pub struct EpochShuffler {
    rng: ChaCha8Rng,
    order: Vec<usize>,
}

impl EpochShuffler {
    pub fn new(len: usize, seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            order: (0..len).collect(),
        }
    }

    /// Reshuffles and returns this epoch's sample order.
    pub fn next_epoch(&mut self) -> &[usize] {
        self.order.shuffle(&mut self.rng);
        &self.order
    }
}

/// Runs `cfg.local_epochs` epochs of minibatch SGD from `anchor` on the SAR
/// objective. With `λ·ρ = 0` this is plain SGD on cross-entropy.
pub fn local_train(
    anchor: &LayerStack,
    data: &LabeledDataset,
    rho: f64,
    cfg: &SarConfig,
    seed: u64,
) -> Result<LocalTrainReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut model = anchor.clone();
    let mut shuffler = EpochShuffler::new(data.len(), seed);
    let mut trace = Vec::with_capacity(cfg.local_epochs);
    for epoch in 0..cfg.local_epochs {
        let order = shuffler.next_epoch();
        let mut ce_sum = 0.0;
        let mut batches = 0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch = data.samples.subset(idx);
            let obj = sar_objective_and_grads(&model, anchor, &batch, rho, cfg.lambda)?;
            if !obj.total.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            let step = sgd_step(&model, &obj.grads, cfg.lr)?;
            if !step.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            model = step;
            ce_sum += obj.ce;
            batches += 1;
        }
        trace.push(EpochLoss {
            ce: ce_sum / batches as f64,
            sar: sar_loss(&model, anchor, rho)?,
        });
    }
    let drift_sq = sq_norm_diff(&model, anchor)?;
    Ok(LocalTrainReport {
        final_model: model,
        drift_sq,
        loss_trace: trace,
    })
}
