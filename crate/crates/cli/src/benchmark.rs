//! `gbnet benchmark`: outer k-fold cross-validation with an inner grid search.
//!
//! For every model and outer fold, each grid point is scored by its mean
//! accuracy over the inner splits of that fold's training part. The best
//! point (ties go to the smaller learning rate, then the smaller shrinkage)
//! is refitted on the whole training part and scored on the held-out fold.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use gbnet::data::{holdout, kfold, Dataset, Fold};
use gbnet::Scalar;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{BenchmarkConfig, ModelSpec, Overrides, Protocol, ScalarKind};
use crate::input::load_spec;
use crate::metrics::{write_rows, MetricsRow};
use crate::output::Outputs;
use crate::train::{fit_model, mean_std};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridPoint {
    pub learning_rate: f64,
    /// `None` for baselines.
    pub shrinkage: Option<f64>,
}

impl GridPoint {
    fn apply(&self, spec: &ModelSpec) -> ModelSpec {
        let mut s = spec.clone();
        s.train.optimizer.learning_rate = self.learning_rate;
        if let Some(nu) = self.shrinkage {
            s.boost.get_or_insert_with(Default::default).shrinkage = nu;
        }
        s
    }
}

/// Grid points in ascending (learning rate, shrinkage) order.
pub fn grid_points(cfg: &BenchmarkConfig, spec: &ModelSpec) -> Vec<GridPoint> {
    let mut lrs = cfg.grid.learning_rate.clone();
    lrs.sort_by(f64::total_cmp);
    lrs.dedup();
    let mut nus: Vec<Option<f64>> = if spec.model.is_boosted() {
        let mut v = cfg.grid.shrinkage.clone();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v.into_iter().map(Some).collect()
    } else {
        vec![None]
    };
    nus.dedup();
    lrs.iter()
        .flat_map(|&lr| nus.iter().map(move |&nu| GridPoint { learning_rate: lr, shrinkage: nu }))
        .collect()
}

/// Index of the highest score; earlier points win ties.
pub fn select(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldResult {
    pub model: String,
    pub fold: usize,
    pub learning_rate: f64,
    pub shrinkage: Option<f64>,
    /// Mean inner accuracy of the chosen point; empty for a one-point grid.
    pub inner_accuracy: Option<f64>,
    pub test_accuracy: f64,
    pub test_cross_entropy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelResult {
    pub dataset: String,
    pub model: String,
    pub folds: usize,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
}

pub struct BenchmarkReport {
    pub models: Vec<ModelResult>,
    pub folds: Vec<FoldResult>,
    pub files: Vec<PathBuf>,
}

pub fn cmd_benchmark(config_path: &Path, overrides: &Overrides) -> Result<BenchmarkReport> {
    let cfg = BenchmarkConfig::load(config_path, overrides)?;
    run_benchmark(&cfg)
}

fn inner_splits(cfg: &BenchmarkConfig, n: usize, fold: usize) -> Result<Vec<Fold>> {
    let seed = cfg.seed.wrapping_add(1 + fold as u64);
    Ok(match cfg.inner {
        Protocol::Holdout { test_fraction } => vec![holdout(n, test_fraction, seed)?],
        Protocol::Kfold { k } => kfold(n, k, seed)?.folds,
    })
}

struct FoldOutput {
    result: FoldResult,
    rows: Vec<MetricsRow>,
}

fn run_fold<T: Scalar>(
    cfg: &BenchmarkConfig,
    spec: &ModelSpec,
    data: &Dataset<T>,
    outer: &Fold,
    fold: usize,
) -> Result<FoldOutput> {
    let name = spec.display_name();
    let mode = cfg.data.preprocess_mode();
    let train = data.subset(&outer.train)?;
    let test = data.subset(&outer.test)?;
    let points = grid_points(cfg, spec);
    let (chosen, inner_accuracy) = if points.len() == 1 {
        (points[0], None)
    } else {
        let splits = inner_splits(cfg, train.len(), fold)?;
        let mut scores = Vec::with_capacity(points.len());
        for p in &points {
            let s = p.apply(spec);
            let mut total = 0.0;
            for (j, split) in splits.iter().enumerate() {
                let (tr, te) = (train.subset(&split.train)?, train.subset(&split.test)?);
                let out = fit_model(&s, &tr, Some(&te), mode, cfg.seed, false, "inner")
                    .with_context(|| format!("grid point {p:?}, inner split {}", j + 1))?;
                total += out.summary.test_accuracy.context("inner split has no test part")?;
            }
            let score = total / splits.len() as f64;
            log::info!("{name} fold {fold}: {p:?} inner accuracy {score:.4}");
            scores.push(score);
        }
        let best = select(&scores);
        (points[best], Some(scores[best]))
    };
    let run_id = format!("{name}/fold-{fold}");
    let out = fit_model(&chosen.apply(spec), &train, Some(&test), mode, cfg.seed, cfg.timing, &run_id)?;
    let result = FoldResult {
        model: name,
        fold,
        learning_rate: chosen.learning_rate,
        shrinkage: chosen.shrinkage,
        inner_accuracy,
        test_accuracy: out.summary.test_accuracy.context("outer fold has no test part")?,
        test_cross_entropy: out.summary.test_cross_entropy.context("outer fold has no test part")?,
    };
    Ok(FoldOutput { result, rows: out.rows })
}

fn run_model<T: Scalar>(cfg: &BenchmarkConfig, spec: &ModelSpec, data: &Dataset<T>, plan: &[Fold]) -> Result<Vec<FoldOutput>> {
    let results: Vec<Result<FoldOutput>> = plan
        .par_iter()
        .enumerate()
        .map(|(i, outer)| run_fold(cfg, spec, data, outer, i + 1))
        .collect();
    // Report the lowest failing fold regardless of scheduling order.
    results
        .into_iter()
        .enumerate()
        .map(|(i, r)| r.with_context(|| format!("model {}, fold {}", spec.display_name(), i + 1)))
        .collect()
}

pub fn run_benchmark(cfg: &BenchmarkConfig) -> Result<BenchmarkReport> {
    let (data, _) = load_spec::<f64>(&cfg.data)?;
    let plan = kfold(data.len(), cfg.folds, cfg.seed)?.folds;
    let data32 = cfg.models.iter().any(|m| m.scalar == ScalarKind::F32).then(|| data.cast::<f32>());
    let dataset = cfg.dataset.clone().unwrap_or_else(|| match &cfg.data.train {
        crate::config::DataFiles::Csv(p) | crate::config::DataFiles::Idx { images: p, .. } => {
            p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
        }
    });

    let mut models = Vec::new();
    let mut folds = Vec::new();
    let mut rows = Vec::new();
    for spec in &cfg.models {
        let outputs = match (spec.scalar, &data32) {
            (ScalarKind::F32, Some(d)) => run_model(cfg, spec, d, &plan)?,
            _ => run_model(cfg, spec, &data, &plan)?,
        };
        let accs: Vec<f64> = outputs.iter().map(|o| o.result.test_accuracy).collect();
        let (mean, std) = mean_std(&accs);
        models.push(ModelResult {
            dataset: dataset.clone(),
            model: spec.display_name(),
            folds: plan.len(),
            mean_accuracy: mean,
            std_accuracy: std,
        });
        for o in outputs {
            folds.push(o.result);
            rows.extend(o.rows);
        }
    }

    let mut out = Outputs::new(&cfg.out_dir)?;
    let mut table = csv::Writer::from_writer(Vec::new());
    for m in &models {
        table.serialize(m)?;
    }
    out.write("benchmark.csv", table.into_inner().context("buffering benchmark.csv")?)?;
    let mut per_fold = csv::Writer::from_writer(Vec::new());
    for f in &folds {
        per_fold.serialize(f)?;
    }
    out.write("folds.csv", per_fold.into_inner().context("buffering folds.csv")?)?;
    let mut metrics = Vec::new();
    write_rows(&mut metrics, &rows)?;
    out.write("metrics.csv", metrics)?;
    let files = out.commit()?;
    Ok(BenchmarkReport { models, folds, files })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelKind;

    fn cfg() -> BenchmarkConfig {
        toml::from_str("[data]\ntrain = \"x.csv\"\n[[models]]\nmodel = \"gb-dnn\"\n").unwrap()
    }

    #[test]
    fn grid_is_sorted_and_baselines_skip_shrinkage() {
        let mut c = cfg();
        c.grid.learning_rate = vec![0.1, 0.001, 0.01];
        c.grid.shrinkage = vec![1.0, 0.1];
        let boosted = grid_points(&c, &c.models[0]);
        let lr: Vec<f64> = boosted.iter().map(|p| p.learning_rate).collect();
        assert_eq!(lr, [0.001, 0.001, 0.01, 0.01, 0.1, 0.1]);
        assert_eq!(boosted[0].shrinkage, Some(0.1));
        assert_eq!(boosted[1].shrinkage, Some(1.0));
        let mut base = c.models[0].clone();
        base.model = ModelKind::Dnn;
        assert_eq!(grid_points(&c, &base).len(), 3);
        assert!(grid_points(&c, &base).iter().all(|p| p.shrinkage.is_none()));
    }

    #[test]
    fn ties_prefer_the_earlier_point() {
        assert_eq!(select(&[0.9, 0.95, 0.95, 0.94]), 1);
        assert_eq!(select(&[0.5]), 0);
    }

    #[test]
    fn grid_point_sets_hyper_parameters() {
        let c = cfg();
        let s = GridPoint { learning_rate: 0.01, shrinkage: Some(0.5) }.apply(&c.models[0]);
        assert_eq!(s.train.optimizer.learning_rate, 0.01);
        assert_eq!(s.boost_config(0).shrinkage, 0.5);
    }
}
