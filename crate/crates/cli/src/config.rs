//! TOML run files.
//!
//! Relative paths are resolved against the directory of the file that
//! names them. Values given on the command line take precedence over the
//! file, which takes precedence over the built-in defaults.

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gbnet::boosting::{BoostConfig, InitScore, LineSearchConfig};
use gbnet::data::{CsvOptions, LabelColumn, PreprocessMode};
use gbnet::network::{ConvStack, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "gb-cnn")]
    GbCnn,
    #[serde(rename = "gb-dnn")]
    GbDnn,
    #[serde(rename = "cnn")]
    Cnn,
    #[serde(rename = "dnn")]
    Dnn,
}

impl ModelKind {
    pub fn is_boosted(self) -> bool {
        matches!(self, ModelKind::GbCnn | ModelKind::GbDnn)
    }

    pub fn has_conv(self) -> bool {
        matches!(self, ModelKind::GbCnn | ModelKind::Cnn)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::GbCnn => "gb-cnn",
            ModelKind::GbDnn => "gb-dnn",
            ModelKind::Cnn => "cnn",
            ModelKind::Dnn => "dnn",
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalarKind {
    F32,
    #[default]
    F64,
}

/// Network shape. Dense defaults depend on the model kind: image models use
/// width 20 and 10 baseline layers, tabular models width 100 and 3 layers.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Architecture {
    pub conv: ConvStack,
    /// Width of every dense hidden layer, boosted or not.
    pub dense_width: Option<usize>,
    /// Number of dense hidden layers in the jointly trained baselines.
    pub dense_layers: Option<usize>,
}

impl Architecture {
    pub fn width(&self, kind: ModelKind) -> usize {
        self.dense_width.unwrap_or(if kind.has_conv() { 20 } else { 100 })
    }

    pub fn layers(&self, kind: ModelKind) -> usize {
        self.dense_layers.unwrap_or(if kind.has_conv() { 10 } else { 3 })
    }
}

/// Boosting settings; ignored with a warning by the baselines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoostSection {
    /// Defaults to 10 for gb-cnn and 3 for gb-dnn.
    pub iterations: Option<usize>,
    pub shrinkage: f64,
    pub tolerance: f64,
    pub init: InitScore,
    pub line_search: LineSearchConfig,
}

impl Default for BoostSection {
    fn default() -> Self {
        let d = BoostConfig::default();
        Self {
            iterations: None,
            shrinkage: d.shrinkage,
            tolerance: d.tolerance,
            init: d.init,
            line_search: d.line_search,
        }
    }
}

/// One model to train: kind, numeric type and hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub model: ModelKind,
    /// Display name; defaults to the model kind.
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub scalar: ScalarKind,
    #[serde(default)]
    pub architecture: Architecture,
    #[serde(default)]
    pub boost: Option<BoostSection>,
    #[serde(default)]
    pub train: TrainConfig,
}

impl ModelSpec {
    pub fn display_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.model.to_string())
    }

    /// Drops boosting settings from baselines, with a warning.
    pub fn normalize(&mut self) {
        if !self.model.is_boosted() && self.boost.take().is_some() {
            log::warn!("model {} is not boosted; ignoring the [boost] section", self.model);
        }
    }

    pub fn boost_config(&self, seed: u64) -> BoostConfig {
        let b = self.boost.clone().unwrap_or_default();
        BoostConfig {
            iterations: b.iterations.unwrap_or(if self.model.has_conv() { 10 } else { 3 }),
            hidden_width: self.architecture.width(self.model),
            shrinkage: b.shrinkage,
            tolerance: b.tolerance,
            line_search: b.line_search,
            init: b.init,
            conv: self.model.has_conv().then(|| self.architecture.conv.clone()),
            stage: self.train_config(seed),
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig { seed, ..self.train.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let arch = &self.architecture;
        if arch.dense_width == Some(0) {
            bail!("architecture.dense_width: must be at least 1");
        }
        if arch.dense_layers == Some(0) {
            bail!("architecture.dense_layers: must be at least 1");
        }
        if self.model.has_conv() {
            arch.conv.validate().context("architecture.conv")?;
        }
        self.train.validate().context("train")?;
        if self.model.is_boosted() {
            let cfg = self.boost_config(0);
            if cfg.iterations == 0 {
                bail!("boost.iterations: must be at least 1");
            }
            cfg.validate().context("boost")?;
        }
        Ok(())
    }
}

/// A data file: one CSV, or an IDX image/label pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DataFiles {
    Csv(PathBuf),
    Idx { images: PathBuf, labels: PathBuf },
}

impl DataFiles {
    pub fn resolve(&mut self, base: &Path) {
        match self {
            DataFiles::Csv(p) => *p = base.join(&*p),
            DataFiles::Idx { images, labels } => {
                *images = base.join(&*images);
                *labels = base.join(&*labels);
            }
        }
    }

    pub fn is_image(&self) -> bool {
        matches!(self, DataFiles::Idx { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    pub train: DataFiles,
    /// Separate test set; otherwise the protocol splits `train`.
    #[serde(default)]
    pub test: Option<DataFiles>,
    /// CSV label column, by 0-based index or header name. Defaults to the last column.
    #[serde(default)]
    pub label_column: Option<LabelColumn>,
    #[serde(default = "yes")]
    pub has_header: bool,
    /// Fixed class order; otherwise order of first appearance (CSV) or
    /// sorted label values (IDX).
    #[serde(default)]
    pub classes: Option<Vec<String>>,
    /// Defaults to `standardize` for CSV and `rescale` for IDX.
    #[serde(default)]
    pub preprocess: Option<PreprocessMode>,
}

fn yes() -> bool {
    true
}

impl DataSpec {
    pub fn csv_options(&self) -> CsvOptions {
        CsvOptions {
            label_column: self.label_column.clone(),
            has_header: self.has_header,
            classes: self.classes.clone(),
        }
    }

    pub fn preprocess_mode(&self) -> PreprocessMode {
        self.preprocess.unwrap_or(if self.train.is_image() {
            PreprocessMode::Rescale
        } else {
            PreprocessMode::Standardize
        })
    }

    fn resolve(&mut self, base: &Path) {
        self.train.resolve(base);
        if let Some(t) = &mut self.test {
            t.resolve(base);
        }
    }

    fn validate(&self) -> Result<()> {
        if let Some(test) = &self.test {
            if test.is_image() != self.train.is_image() {
                bail!("data.test: must have the same format as data.train");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Protocol {
    Holdout {
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
    },
    Kfold {
        k: usize,
    },
}

fn default_test_fraction() -> f64 {
    0.2
}

impl Default for Protocol {
    fn default() -> Self {
        Protocol::Holdout { test_fraction: default_test_fraction() }
    }
}

impl Protocol {
    fn validate(&self, field: &str) -> Result<()> {
        match *self {
            Protocol::Holdout { test_fraction } if !(test_fraction > 0.0 && test_fraction < 1.0) => {
                bail!("{field}.test_fraction: must lie in (0, 1), got {test_fraction}")
            }
            Protocol::Kfold { k } if k < 2 => bail!("{field}.k: must be at least 2, got {k}"),
            _ => Ok(()),
        }
    }
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs")
}

/// `gbnet train` run file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelKind,
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub scalar: ScalarKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// Record wall-clock seconds in the metrics file. Off by default so that
    /// repeated runs produce identical files.
    #[serde(default)]
    pub timing: bool,
    pub data: DataSpec,
    #[serde(default)]
    pub protocol: Protocol,
    #[serde(default)]
    pub architecture: Architecture,
    #[serde(default)]
    pub boost: Option<BoostSection>,
    #[serde(default)]
    pub train: TrainConfig,
}

/// Command-line values that take precedence over the run file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

impl RunConfig {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let mut cfg: RunConfig = read_toml(path)?;
        let base = base_dir(path);
        cfg.data.resolve(&base);
        cfg.out_dir = base.join(&cfg.out_dir);
        cfg.apply(overrides);
        cfg.finish()?;
        Ok(cfg)
    }

    pub fn from_toml_str(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).context("invalid config")?;
        cfg.data.resolve(base);
        cfg.out_dir = base.join(&cfg.out_dir);
        cfg.finish()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(dir) = &o.out_dir {
            self.out_dir = dir.clone();
        }
    }

    fn finish(&mut self) -> Result<()> {
        if !self.model.is_boosted() && self.boost.take().is_some() {
            log::warn!("model {} is not boosted; ignoring the [boost] section", self.model);
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        self.spec().validate()?;
        self.data.validate()?;
        self.protocol.validate("protocol")?;
        if self.data.test.is_some() && matches!(self.protocol, Protocol::Kfold { .. }) {
            bail!("protocol.kind: kfold cannot be combined with data.test");
        }
        Ok(())
    }

    pub fn spec(&self) -> ModelSpec {
        ModelSpec {
            model: self.model,
            name: self.name.clone(),
            scalar: self.scalar,
            architecture: self.architecture.clone(),
            boost: self.boost.clone(),
            train: self.train.clone(),
        }
    }
}

/// Hyper-parameter grid searched inside each outer training fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Grid {
    pub learning_rate: Vec<f64>,
    /// Only used by boosted models.
    pub shrinkage: Vec<f64>,
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            learning_rate: vec![0.1, 0.01, 0.001],
            shrinkage: vec![0.1, 0.25, 0.5, 1.0],
        }
    }
}

/// `gbnet benchmark` run file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    /// Label for the dataset column of the results table.
    #[serde(default)]
    pub dataset: Option<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub timing: bool,
    /// Outer cross-validation folds.
    #[serde(default = "default_folds")]
    pub folds: usize,
    /// Split used to score grid points inside each outer training fold.
    #[serde(default = "default_inner")]
    pub inner: Protocol,
    #[serde(default)]
    pub grid: Grid,
    pub data: DataSpec,
    pub models: Vec<ModelSpec>,
}

fn default_folds() -> usize {
    10
}

fn default_inner() -> Protocol {
    Protocol::Kfold { k: 3 }
}

impl BenchmarkConfig {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let mut cfg: BenchmarkConfig = read_toml(path)?;
        let base = base_dir(path);
        cfg.data.resolve(&base);
        cfg.out_dir = base.join(&cfg.out_dir);
        if let Some(seed) = overrides.seed {
            cfg.seed = seed;
        }
        if let Some(dir) = &overrides.out_dir {
            cfg.out_dir = dir.clone();
        }
        for m in &mut cfg.models {
            m.normalize();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            bail!("models: at least one [[models]] entry is required");
        }
        for (i, m) in self.models.iter().enumerate() {
            m.validate().with_context(|| format!("models[{i}]"))?;
        }
        if self.data.test.is_some() {
            bail!("data.test: benchmarks split data.train by cross-validation");
        }
        self.data.validate()?;
        if self.folds < 2 {
            bail!("folds: must be at least 2, got {}", self.folds);
        }
        self.inner.validate("inner")?;
        if self.grid.learning_rate.is_empty() || self.grid.shrinkage.is_empty() {
            bail!("grid: learning_rate and shrinkage need at least one value each");
        }
        if let Some(lr) = self.grid.learning_rate.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            bail!("grid.learning_rate: {lr} is not a positive number");
        }
        if let Some(nu) = self.grid.shrinkage.iter().find(|v| !(**v > 0.0 && **v <= 1.0)) {
            bail!("grid.shrinkage: {nu} is outside (0, 1]");
        }
        Ok(())
    }
}
