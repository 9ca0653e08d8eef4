use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss;
use super::optim::{Optimizer, OptimizerConfig};
use super::Sequential;
use crate::data::batches;
use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Rows per chunk for full-dataset evaluation passes.
const EVAL_CHUNK: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    /// Relative improvement required to reset the patience counter.
    pub min_delta: f64,
    pub seed: u64,
    pub optimizer: OptimizerConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 128,
            patience: 10,
            min_delta: 1e-4,
            seed: 0,
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if !(self.min_delta >= 0.0 && self.min_delta.is_finite()) {
            return Err(Error::Config("min_delta must be a finite non-negative number".into()));
        }
        self.optimizer.validate()
    }
}

/// Metrics after one epoch, computed by an eval-mode pass over the full set.
/// Epoch 0 describes the network before any update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: Option<f64>,
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochStats>,
    pub stopped_early: bool,
}

impl TrainLog {
    pub fn last(&self) -> Option<&EpochStats> {
        self.epochs.last()
    }

    /// Number of epochs with parameter updates.
    pub fn epochs_run(&self) -> usize {
        self.epochs.len().saturating_sub(1)
    }
}

#[derive(Clone, Copy)]
enum Objective {
    SquaredError,
    CrossEntropy,
}

impl Objective {
    fn loss<T: Scalar>(self, out: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
        match self {
            Objective::SquaredError => loss::mean_squared_error(out, target),
            Objective::CrossEntropy => loss::cross_entropy(out, target),
        }
    }

    fn grad<T: Scalar>(self, out: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Objective::SquaredError => loss::mean_squared_error_grad(out, target),
            Objective::CrossEntropy => loss::cross_entropy_grad(out, target),
        }
    }

    fn evaluate<T: Scalar>(
        self,
        net: &Sequential<T>,
        x: &Tensor<T>,
        target: &Tensor<T>,
    ) -> Result<(f64, Option<f64>)> {
        let out = net.predict_batched(x, EVAL_CHUNK)?;
        let l = self.loss(&out, target)?;
        let acc = match self {
            Objective::SquaredError => None,
            Objective::CrossEntropy => Some(loss::accuracy(&out, target)?),
        };
        Ok((l, acc))
    }
}

/// Trains `net` to regress `targets` under mean squared error.
///
/// Only non-frozen parameters are updated. `validation` is evaluated after
/// every epoch for logging and never influences training.
pub fn fit_regression<T: Scalar>(
    net: &mut Sequential<T>,
    x: &Tensor<T>,
    targets: &Tensor<T>,
    cfg: &TrainConfig,
    validation: Option<(&Tensor<T>, &Tensor<T>)>,
) -> Result<TrainLog> {
    fit(net, x, targets, cfg, validation, Objective::SquaredError)
}

/// Trains every layer of `net` end to end under softmax cross-entropy.
pub fn fit_classification_joint<T: Scalar>(
    net: &mut Sequential<T>,
    x: &Tensor<T>,
    labels_onehot: &Tensor<T>,
    cfg: &TrainConfig,
    validation: Option<(&Tensor<T>, &Tensor<T>)>,
) -> Result<TrainLog> {
    net.set_all_frozen(false);
    fit(net, x, labels_onehot, cfg, validation, Objective::CrossEntropy)
}

fn check_targets<T: Scalar>(net: &Sequential<T>, x: &Tensor<T>, targets: &Tensor<T>) -> Result<()> {
    let expected = [x.rows(), net.num_outputs()];
    if targets.shape() != expected {
        return Err(Error::Dimension {
            op: "training targets",
            left: targets.shape().to_vec(),
            right: expected.to_vec(),
        });
    }
    Ok(())
}

fn fit<T: Scalar>(
    net: &mut Sequential<T>,
    x: &Tensor<T>,
    targets: &Tensor<T>,
    cfg: &TrainConfig,
    validation: Option<(&Tensor<T>, &Tensor<T>)>,
    objective: Objective,
) -> Result<TrainLog> {
    cfg.validate()?;
    check_targets(net, x, targets)?;
    if let Some((vx, vy)) = validation {
        check_targets(net, vx, vy)?;
    }
    if net.trainable_count() == 0 {
        return Err(Error::Config("network has no trainable parameters".into()));
    }

    let record = |net: &Sequential<T>, epoch: usize| -> Result<EpochStats> {
        let (train_loss, train_acc) = objective.evaluate(net, x, targets)?;
        if !train_loss.is_finite() {
            return Err(Error::Divergence { epoch, loss: train_loss });
        }
        let (val_loss, val_acc) = match validation {
            Some((vx, vy)) => {
                let (l, a) = objective.evaluate(net, vx, vy)?;
                (Some(l), a)
            }
            None => (None, None),
        };
        log::debug!("epoch {epoch}: train loss {train_loss:.6e}");
        Ok(EpochStats { epoch, train_loss, train_acc, val_loss, val_acc })
    };

    let mut log = TrainLog::default();
    let initial = record(net, 0)?;
    let mut best = initial.train_loss;
    log.epochs.push(initial);
    if best == 0.0 {
        return Ok(log);
    }

    let mut optimizer = Optimizer::new(cfg.optimizer, &net.params_mut())?;
    // Dropout masks draw from their own stream so batch order stays a pure
    // function of (seed, epoch).
    let mut layer_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut stale = 0;
    for epoch in 1..=cfg.epochs {
        for batch in batches(x.rows(), cfg.batch_size, cfg.seed.wrapping_add(epoch as u64))? {
            let bx = x.select_rows(&batch)?;
            let by = targets.select_rows(&batch)?;
            let (out, caches) = net.forward(&bx, Mode::Train, &mut layer_rng)?;
            if !out.is_finite() {
                return Err(Error::Divergence { epoch, loss: f64::NAN });
            }
            let grad = objective.grad(&out, &by)?;
            net.zero_grads();
            net.backward(&grad, &caches)?;
            optimizer.step(net.params_mut())?;
        }
        let stats = record(net, epoch)?;
        let loss = stats.train_loss;
        log.epochs.push(stats);
        if loss < best * (1.0 - cfg.min_delta) {
            best = loss;
            stale = 0;
        } else {
            best = best.min(loss);
            stale += 1;
            if stale >= cfg.patience {
                log.stopped_early = epoch < cfg.epochs;
                break;
            }
        }
        if loss == 0.0 {
            break;
        }
    }
    Ok(log)
}
