//! The boosted ensemble and its stagewise training loop.
//!
//! `F_0` is a constant offset (zero by default). Iteration `t` fits a
//! regression network to `y - softmax(F_{t-1})`, picks per-class
//! multipliers `rho` by line search, folds `nu * rho` into the network's
//! output head and adds the network to the ensemble, so that
//! `F_t = F_{t-1} + S_t`.

mod line_search;

pub use line_search::{line_search, LineSearchConfig, RhoObjective};

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::network::{build_network, clone_and_grow, fit_regression, loss, ConvStack, Sequential, TrainConfig, TrainLog};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Rows per chunk when evaluating stages over a full dataset.
const EVAL_CHUNK: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScore {
    /// `F_0 = 0`.
    Zero,
    /// `F_0 = log` of the training class frequencies.
    ClassPrior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoostConfig {
    pub iterations: usize,
    pub hidden_width: usize,
    pub shrinkage: f64,
    /// Stop once an iteration lowers the training cross-entropy by less
    /// than this fraction of its previous value.
    pub tolerance: f64,
    pub line_search: LineSearchConfig,
    pub init: InitScore,
    /// Present for GB-CNN, absent for GB-DNN.
    pub conv: Option<ConvStack>,
    pub stage: TrainConfig,
}

impl Default for BoostConfig {
    fn default() -> Self {
        Self {
            iterations: 10,
            hidden_width: 20,
            shrinkage: 0.1,
            tolerance: 1e-4,
            line_search: LineSearchConfig::default(),
            init: InitScore::Zero,
            conv: None,
            stage: TrainConfig::default(),
        }
    }
}

impl BoostConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("boosting needs at least 1 iteration".into()));
        }
        if self.hidden_width == 0 {
            return Err(Error::Config("hidden_width must be at least 1".into()));
        }
        if !(self.shrinkage > 0.0 && self.shrinkage <= 1.0) {
            return Err(Error::Config(format!("shrinkage must lie in (0, 1], got {}", self.shrinkage)));
        }
        if !(self.tolerance >= 0.0 && self.tolerance.is_finite()) {
            return Err(Error::Config("tolerance must be a finite non-negative number".into()));
        }
        if let Some(conv) = &self.conv {
            conv.validate()?;
        }
        self.line_search.validate()?;
        self.stage.validate()
    }
}

/// Additive ensemble whose raw output is `offset + sum of stage outputs`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct BoostedEnsemble<T: Scalar> {
    pub stages: Vec<Sequential<T>>,
    pub shrinkage: f64,
    pub num_classes: usize,
    pub init: InitScore,
    pub offset: Vec<T>,
}

impl<T: Scalar> BoostedEnsemble<T> {
    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    pub fn input_shape(&self) -> Option<&[usize]> {
        self.stages.first().map(|s| s.input_shape())
    }

    fn offset_rows(&self, n: usize) -> Result<Tensor<T>> {
        if self.offset.len() != self.num_classes {
            return Err(Error::Format("ensemble offset does not match the class count".into()));
        }
        Tensor::new(vec![n, self.num_classes], self.offset.iter().copied().cycle().take(n * self.num_classes).collect())
    }

    /// Raw scores after each prefix of stages: element `t` uses stages `0..=t`.
    pub fn staged_raw(&self, x: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        if self.stages.is_empty() {
            return Err(Error::Usage("ensemble has no stages".into()));
        }
        let mut acc = self.offset_rows(x.rows())?;
        let mut out = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            acc.add_assign(&stage.predict_batched(x, EVAL_CHUNK)?)?;
            out.push(acc.clone());
        }
        Ok(out)
    }

    pub fn predict_raw(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if self.stages.is_empty() {
            return Err(Error::Usage("ensemble has no stages".into()));
        }
        let mut acc = self.offset_rows(x.rows())?;
        for stage in &self.stages {
            acc.add_assign(&stage.predict_batched(x, EVAL_CHUNK)?)?;
        }
        Ok(acc)
    }

    pub fn predict_proba(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.predict_raw(x)?.softmax_rows()
    }

    pub fn predict_label(&self, x: &Tensor<T>) -> Result<Vec<usize>> {
        Ok(self.predict_raw(x)?.argmax_rows())
    }
}

/// `labels - softmax(raw)`: the negative gradient of the cross-entropy
/// with respect to the raw scores.
pub fn pseudo_residuals<T: Scalar>(labels: &Tensor<T>, raw: &Tensor<T>) -> Result<Tensor<T>> {
    if labels.shape() != raw.shape() {
        return Err(Error::Dimension {
            op: "pseudo_residuals",
            left: labels.shape().to_vec(),
            right: raw.shape().to_vec(),
        });
    }
    let (_, k) = labels.expect_matrix("pseudo_residuals")?;
    for (i, row) in labels.data().chunks(k).enumerate() {
        let ones = row.iter().filter(|&&v| v == T::one()).count();
        let zeros = row.iter().filter(|&&v| v == T::zero()).count();
        if ones != 1 || ones + zeros != k {
            return Err(Error::Data(format!("label row {i} is not one-hot")));
        }
    }
    if !raw.is_finite() {
        return Err(Error::Numeric("raw scores contain non-finite values".into()));
    }
    labels.sub(&raw.softmax_rows()?)
}

/// Scales output column `k` of the stage head (weights and bias) by `nu * rho[k]`.
pub fn fold_rho<T: Scalar>(stage: &mut Sequential<T>, rho: &[f64], nu: f64) -> Result<()> {
    let factors: Vec<T> = rho.iter().map(|&r| T::lit(nu * r)).collect();
    stage.head_mut().scale_outputs(&factors)
}

/// Ensemble metrics after one boosting iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// Number of stages in the ensemble, starting at 1.
    pub iteration: usize,
    pub rho: Vec<f64>,
    pub train_ce: f64,
    pub train_acc: f64,
    pub val_ce: Option<f64>,
    pub val_acc: Option<f64>,
    /// Per-epoch regression loss of the stage on the residuals.
    pub stage: TrainLog,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostLog {
    /// Metrics of `F_0`, before any stage.
    pub initial_train_ce: f64,
    pub initial_train_acc: f64,
    pub initial_val_ce: Option<f64>,
    pub initial_val_acc: Option<f64>,
    pub iterations: Vec<IterationRecord>,
    /// True if the loop ended on the loss-improvement tolerance rather than
    /// the iteration limit.
    pub converged: bool,
}

impl BoostLog {
    /// Training cross-entropy for 0, 1, 2, ... stages.
    pub fn train_ce_curve(&self) -> Vec<f64> {
        std::iter::once(self.initial_train_ce)
            .chain(self.iterations.iter().map(|r| r.train_ce))
            .collect()
    }
}

fn initial_offset<T: Scalar>(init: InitScore, labels: &Tensor<T>) -> Result<Vec<T>> {
    let k = labels.row_len();
    match init {
        InitScore::Zero => Ok(vec![T::zero(); k]),
        InitScore::ClassPrior => {
            let counts = labels.reduce_sum(0)?;
            let n = labels.rows() as f64;
            Ok(counts
                .data()
                .iter()
                .map(|&c| {
                    // Unseen classes get half a count so the offset stays finite.
                    let c = c.widen().max(0.5);
                    T::lit((c / n).ln())
                })
                .collect())
        }
    }
}

fn broadcast<T: Scalar>(offset: &[T], n: usize) -> Result<Tensor<T>> {
    Tensor::new(vec![n, offset.len()], offset.iter().copied().cycle().take(n * offset.len()).collect())
}

/// Runs the boosting loop on `train`. `validation`, when given, is only
/// evaluated for the metrics log.
pub fn boost_fit<T: Scalar, R: Rng + ?Sized>(
    train: &Dataset<T>,
    cfg: &BoostConfig,
    validation: Option<&Dataset<T>>,
    rng: &mut R,
) -> Result<(BoostedEnsemble<T>, BoostLog)> {
    boost_fit_with(train, cfg, validation, rng, |_| {})
}

/// [`boost_fit`] with a callback invoked after every iteration.
pub fn boost_fit_with<T: Scalar, R: Rng + ?Sized>(
    train: &Dataset<T>,
    cfg: &BoostConfig,
    validation: Option<&Dataset<T>>,
    rng: &mut R,
    mut on_iteration: impl FnMut(&IterationRecord),
) -> Result<(BoostedEnsemble<T>, BoostLog)> {
    cfg.validate()?;
    let k = train.num_classes();
    if train.is_empty() || k < 2 {
        return Err(Error::Data("boosting needs a non-empty dataset with at least 2 classes".into()));
    }
    if let Some(v) = validation {
        if v.num_classes() != k || v.sample_shape() != train.sample_shape() {
            return Err(Error::Data("validation set does not match the training set's shape".into()));
        }
    }
    let (x, y) = (&train.features, &train.labels);
    let offset = initial_offset(cfg.init, y)?;
    let mut f = broadcast(&offset, x.rows())?;
    let mut f_val = validation.map(|v| broadcast(&offset, v.len())).transpose()?;

    let metrics = |f: &Tensor<T>, y: &Tensor<T>| -> Result<(f64, f64)> {
        Ok((loss::cross_entropy(f, y)?, loss::accuracy(f, y)?))
    };
    let (initial_train_ce, initial_train_acc) = metrics(&f, y)?;
    let initial_val = match (validation, &f_val) {
        (Some(v), Some(fv)) => Some(metrics(fv, &v.labels)?),
        _ => None,
    };
    let mut log = BoostLog {
        initial_train_ce,
        initial_train_acc,
        initial_val_ce: initial_val.map(|m| m.0),
        initial_val_acc: initial_val.map(|m| m.1),
        iterations: Vec::new(),
        converged: false,
    };

    let mut stages: Vec<Sequential<T>> = Vec::new();
    let mut prev_ce = initial_train_ce;
    for t in 0..cfg.iterations {
        let started = Instant::now();
        let stage_err = |e: Error| Error::Stage { iteration: t + 1, source: Box::new(e) };

        let residuals = pseudo_residuals(y, &f)?;
        let val_residuals = match (validation, &f_val) {
            (Some(v), Some(fv)) => Some(pseudo_residuals(&v.labels, fv)?),
            _ => None,
        };
        let mut net = match stages.last() {
            None => build_network(train.sample_shape(), cfg.conv.as_ref(), &[cfg.hidden_width], k, rng),
            Some(prev) => clone_and_grow(prev, cfg.hidden_width, rng),
        }
        .map_err(stage_err)?;

        let stage_cfg = TrainConfig {
            seed: cfg.stage.seed.wrapping_add((t as u64).wrapping_mul(1_000_003)),
            ..cfg.stage.clone()
        };
        let val_pair = validation.zip(val_residuals.as_ref()).map(|(v, r)| (&v.features, r));
        let stage_log = fit_regression(&mut net, x, &residuals, &stage_cfg, val_pair).map_err(stage_err)?;

        let s = net.predict_batched(x, EVAL_CHUNK)?;
        let rho = line_search(&f, &s, y, &cfg.line_search).map_err(stage_err)?;
        fold_rho(&mut net, &rho, cfg.shrinkage)?;
        f.add_assign(&net.predict_batched(x, EVAL_CHUNK)?)?;
        if let (Some(v), Some(fv)) = (validation, f_val.as_mut()) {
            fv.add_assign(&net.predict_batched(&v.features, EVAL_CHUNK)?)?;
        }
        stages.push(net);

        let (train_ce, train_acc) = metrics(&f, y)?;
        let val = match (validation, &f_val) {
            (Some(v), Some(fv)) => Some(metrics(fv, &v.labels)?),
            _ => None,
        };
        let record = IterationRecord {
            iteration: t + 1,
            rho,
            train_ce,
            train_acc,
            val_ce: val.map(|m| m.0),
            val_acc: val.map(|m| m.1),
            stage: stage_log,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "iteration {}: train ce {:.6}, train acc {:.4}, rho mean {:.3}",
            t + 1,
            train_ce,
            train_acc,
            record.rho.iter().sum::<f64>() / k as f64
        );
        on_iteration(&record);
        log.iterations.push(record);

        if prev_ce - train_ce < cfg.tolerance * prev_ce {
            log.converged = true;
            break;
        }
        prev_ce = train_ce;
    }

    let ensemble = BoostedEnsemble { stages, shrinkage: cfg.shrinkage, num_classes: k, init: cfg.init, offset };
    Ok((ensemble, log))
}
