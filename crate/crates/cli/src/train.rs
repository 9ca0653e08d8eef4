//! `gbnet train`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{ensure, Context, Result};
use gbnet::boosting::boost_fit;
use gbnet::data::{holdout, kfold, preprocess, Dataset, Fold, PreprocessMode};
use gbnet::network::{build_network, fit_classification_joint};
use gbnet::persist::{Model, ModelFile};
use gbnet::Scalar;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ModelSpec, Overrides, Protocol, RunConfig, ScalarKind};
use crate::input::load_spec;
use crate::metrics::{boost_rows, epoch_rows, write_rows, MetricsRow};
use crate::output::Outputs;

/// Final figures of one fitted model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub run_id: String,
    pub train_samples: usize,
    pub test_samples: Option<usize>,
    /// Stages kept by a boosted model.
    pub ensemble_size: Option<usize>,
    pub converged: Option<bool>,
    /// Epochs run by a baseline.
    pub epochs: Option<usize>,
    pub train_accuracy: f64,
    pub train_cross_entropy: f64,
    pub test_accuracy: Option<f64>,
    pub test_cross_entropy: Option<f64>,
    pub wall_seconds: Option<f64>,
}

pub struct FitOutput<T: Scalar> {
    pub file: ModelFile<T>,
    pub rows: Vec<MetricsRow>,
    pub summary: RunSummary,
}

/// Preprocesses with statistics of `train` only, fits `spec`, and scores
/// both sets.
pub fn fit_model<T: Scalar>(
    spec: &ModelSpec,
    train: &Dataset<T>,
    test: Option<&Dataset<T>>,
    mode: PreprocessMode,
    seed: u64,
    timing: bool,
    run_id: &str,
) -> Result<FitOutput<T>> {
    let start = Instant::now();
    if let Some(t) = test {
        ensure!(
            t.sample_shape() == train.sample_shape(),
            "test samples have shape {:?} but training samples have shape {:?}",
            t.sample_shape(),
            train.sample_shape()
        );
    }
    let (train, prep) = preprocess(train, mode)?;
    let test = test.map(|t| prep.apply(t)).transpose()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut summary = RunSummary {
        run_id: run_id.into(),
        train_samples: train.len(),
        test_samples: test.as_ref().map(Dataset::len),
        ensemble_size: None,
        converged: None,
        epochs: None,
        train_accuracy: 0.0,
        train_cross_entropy: 0.0,
        test_accuracy: None,
        test_cross_entropy: None,
        wall_seconds: None,
    };
    let (model, rows) = if spec.model.is_boosted() {
        let cfg = spec.boost_config(seed);
        let (ensemble, log) = boost_fit(&train, &cfg, test.as_ref(), &mut rng)?;
        let last = log.iterations.last().context("boosting produced no stages")?;
        summary.ensemble_size = Some(ensemble.len());
        summary.converged = Some(log.converged);
        summary.train_accuracy = last.train_acc;
        summary.train_cross_entropy = last.train_ce;
        summary.test_accuracy = last.val_acc;
        summary.test_cross_entropy = last.val_ce;
        (Model::Ensemble(ensemble), boost_rows(run_id, &log, timing))
    } else {
        let hidden = vec![spec.architecture.width(spec.model); spec.architecture.layers(spec.model)];
        let conv = spec.model.has_conv().then_some(&spec.architecture.conv);
        let mut net = build_network(train.sample_shape(), conv, &hidden, train.num_classes(), &mut rng)?;
        let log = fit_classification_joint(
            &mut net,
            &train.features,
            &train.labels,
            &spec.train_config(seed),
            test.as_ref().map(|t| (&t.features, &t.labels)),
        )?;
        let last = log.last().context("training produced no epochs")?;
        summary.epochs = Some(log.epochs_run());
        summary.train_accuracy = last.train_acc.context("missing training accuracy")?;
        summary.train_cross_entropy = last.train_loss;
        summary.test_accuracy = last.val_acc;
        summary.test_cross_entropy = last.val_loss;
        let mut rows = epoch_rows(run_id, &log);
        rows.push(MetricsRow {
            run_id: run_id.into(),
            train_ce: Some(summary.train_cross_entropy),
            test_ce: summary.test_cross_entropy,
            train_acc: Some(summary.train_accuracy),
            test_acc: summary.test_accuracy,
            wall_seconds: timing.then(|| start.elapsed().as_secs_f64()),
            ..MetricsRow::default()
        });
        (Model::Network(net), rows)
    };
    if timing {
        summary.wall_seconds = Some(start.elapsed().as_secs_f64());
    }
    let file = ModelFile::new(model, train.class_names.clone(), prep)?;
    Ok(FitOutput { file, rows, summary })
}

#[derive(Serialize)]
struct SummaryFile<'a> {
    model: String,
    runs_completed: usize,
    mean_test_accuracy: Option<f64>,
    std_test_accuracy: Option<f64>,
    runs: &'a [RunSummary],
    config: &'a RunConfig,
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub struct TrainReport {
    pub summaries: Vec<RunSummary>,
    pub files: Vec<PathBuf>,
}

pub fn cmd_train(config_path: &Path, overrides: &Overrides) -> Result<TrainReport> {
    let cfg = RunConfig::load(config_path, overrides)?;
    match cfg.scalar {
        ScalarKind::F32 => train_with::<f32>(&cfg),
        ScalarKind::F64 => train_with::<f64>(&cfg),
    }
}

fn split<T: Scalar>(data: &Dataset<T>, fold: &Fold) -> Result<(Dataset<T>, Dataset<T>)> {
    Ok((data.subset(&fold.train)?, data.subset(&fold.test)?))
}

pub fn train_with<T: Scalar>(cfg: &RunConfig) -> Result<TrainReport> {
    let (data, test) = load_spec::<T>(&cfg.data)?;
    let jobs: Vec<(String, Dataset<T>, Option<Dataset<T>>)> = match (cfg.protocol, test) {
        (_, Some(test)) => vec![("holdout".into(), data, Some(test))],
        (Protocol::Holdout { test_fraction }, None) => {
            let (tr, te) = split(&data, &holdout(data.len(), test_fraction, cfg.seed)?)?;
            vec![("holdout".into(), tr, Some(te))]
        }
        (Protocol::Kfold { k }, None) => kfold(data.len(), k, cfg.seed)?
            .folds
            .iter()
            .enumerate()
            .map(|(i, f)| split(&data, f).map(|(tr, te)| (format!("fold-{}", i + 1), tr, Some(te))))
            .collect::<Result<_>>()?,
    };
    let spec = cfg.spec();
    let mode = cfg.data.preprocess_mode();
    let results: Vec<Result<FitOutput<T>>> = jobs
        .par_iter()
        .map(|(id, tr, te)| {
            log::info!("{id}: fitting {} on {} samples", spec.model, tr.len());
            fit_model(&spec, tr, te.as_ref(), mode, cfg.seed, cfg.timing, id).with_context(|| format!("run {id}"))
        })
        .collect();
    let outputs = results.into_iter().collect::<Result<Vec<_>>>()?;

    let mut out = Outputs::new(&cfg.out_dir)?;
    let rows: Vec<MetricsRow> = outputs.iter().flat_map(|o| o.rows.iter().cloned()).collect();
    let mut metrics = Vec::new();
    write_rows(&mut metrics, &rows)?;
    out.write("metrics.csv", metrics)?;
    for o in &outputs {
        let name = if outputs.len() == 1 { "model.json".to_string() } else { format!("model-{}.json", o.summary.run_id) };
        let path = out.stage(&name);
        o.file.save(&path).with_context(|| format!("writing {}", path.display()))?;
    }
    let summaries: Vec<RunSummary> = outputs.into_iter().map(|o| o.summary).collect();
    let accs: Option<Vec<f64>> = summaries.iter().map(|s| s.test_accuracy).collect();
    let (mean, std) = match accs.as_deref() {
        Some(a) if !a.is_empty() => {
            let (m, s) = mean_std(a);
            (Some(m), Some(s))
        }
        _ => (None, None),
    };
    let file = SummaryFile {
        model: spec.display_name(),
        runs_completed: summaries.len(),
        mean_test_accuracy: mean,
        std_test_accuracy: std,
        runs: &summaries,
        config: cfg,
    };
    out.write("summary.toml", toml::to_string(&file).context("serializing summary")?)?;
    let files = out.commit()?;
    Ok(TrainReport { summaries, files })
}
