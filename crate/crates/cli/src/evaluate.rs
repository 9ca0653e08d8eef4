//! `gbnet evaluate`.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use gbnet::data::CsvOptions;
use gbnet::network::loss;
use gbnet::persist::{peek_scalar, Model, ModelFile};
use gbnet::tensor::Tensor;
use gbnet::Scalar;
use serde::Serialize;

use crate::config::DataFiles;
use crate::input::load_files;
use crate::output::Outputs;

/// Data to score: one CSV file or an IDX image/label pair.
pub struct EvalData {
    pub files: DataFiles,
    pub csv: CsvOptions,
}

impl EvalData {
    pub fn from_paths(paths: &[PathBuf], csv: CsvOptions) -> Result<Self> {
        let files = match paths {
            [csv] => DataFiles::Csv(csv.clone()),
            [images, labels] => DataFiles::Idx { images: images.clone(), labels: labels.clone() },
            _ => bail!("expected one CSV file or an IDX images/labels pair, got {} paths", paths.len()),
        };
        Ok(Self { files, csv })
    }
}

/// Scores of the full model, or of its first `stages` stages.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub stages: Option<usize>,
    pub accuracy: f64,
    pub cross_entropy: f64,
}

pub struct Evaluation {
    pub samples: usize,
    pub accuracy: f64,
    pub cross_entropy: f64,
    /// One row per ensemble prefix; a single row for plain networks.
    pub rows: Vec<EvalRow>,
    pub file: PathBuf,
}

/// Scores `model_path` on `data` and writes `evaluation.csv` to `out_dir`
/// (default: the model's directory).
pub fn cmd_evaluate(model_path: &Path, data: &EvalData, out_dir: Option<&Path>) -> Result<Evaluation> {
    let scalar = peek_scalar(model_path).with_context(|| format!("reading {}", model_path.display()))?;
    let dir = match out_dir {
        Some(d) => d.to_path_buf(),
        None => model_path.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    match scalar.as_str() {
        "f32" => evaluate_with::<f32>(model_path, data, &dir),
        "f64" => evaluate_with::<f64>(model_path, data, &dir),
        other => bail!("{}: unsupported scalar type {other:?}", model_path.display()),
    }
}

fn score<T: Scalar>(raw: &Tensor<T>, labels: &Tensor<T>, stages: Option<usize>) -> Result<EvalRow> {
    Ok(EvalRow {
        stages,
        accuracy: loss::accuracy(raw, labels)?,
        cross_entropy: loss::cross_entropy(raw, labels)?,
    })
}

fn evaluate_with<T: Scalar>(model_path: &Path, data: &EvalData, dir: &Path) -> Result<Evaluation> {
    let file = ModelFile::<T>::load(model_path).with_context(|| format!("loading {}", model_path.display()))?;
    let ds = load_files::<T>(&data.files, &data.csv, Some(&file.class_names))?;
    ensure!(
        ds.sample_shape() == file.input_shape.as_slice(),
        "data samples have shape {:?} but the model expects {:?}",
        ds.sample_shape(),
        file.input_shape
    );
    let ds = file.preprocessing.apply(&ds)?;
    let rows = match &file.model {
        Model::Ensemble(e) => e
            .staged_raw(&ds.features)?
            .iter()
            .enumerate()
            .map(|(i, raw)| score(raw, &ds.labels, Some(i + 1)))
            .collect::<Result<Vec<_>>>()?,
        Model::Network(n) => vec![score(&n.predict_batched(&ds.features, 512)?, &ds.labels, None)?],
    };
    let last = rows.last().context("model has no stages")?.clone();

    let mut out = Outputs::new(dir)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in &rows {
        w.serialize(row)?;
    }
    out.write("evaluation.csv", w.into_inner().context("buffering evaluation.csv")?)?;
    let file = out.commit()?.pop().context("no output written")?;
    Ok(Evaluation {
        samples: ds.len(),
        accuracy: last.accuracy,
        cross_entropy: last.cross_entropy,
        rows,
        file,
    })
}
