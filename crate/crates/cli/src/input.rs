//! Dataset loading for run files and the evaluate command.

use anyhow::{Context, Result};
use gbnet::data::{load_csv, load_idx, CsvOptions, Dataset};
use gbnet::Scalar;

use crate::config::{DataFiles, DataSpec};

/// Loads `files`, encoding labels with `classes` when given.
pub fn load_files<T: Scalar>(files: &DataFiles, opts: &CsvOptions, classes: Option<&[String]>) -> Result<Dataset<T>> {
    match files {
        DataFiles::Csv(path) => {
            let mut opts = opts.clone();
            if let Some(c) = classes {
                opts.classes = Some(c.to_vec());
            }
            load_csv(path, &opts).with_context(|| format!("loading {}", path.display()))
        }
        DataFiles::Idx { images, labels } => load_idx(images, labels, classes)
            .with_context(|| format!("loading {} and {}", images.display(), labels.display())),
    }
}

/// Training set and optional separate test set, sharing one class encoding.
pub fn load_spec<T: Scalar>(spec: &DataSpec) -> Result<(Dataset<T>, Option<Dataset<T>>)> {
    let opts = spec.csv_options();
    let train: Dataset<T> = load_files(&spec.train, &opts, spec.classes.as_deref())?;
    let test = match &spec.test {
        Some(files) => Some(load_files(files, &opts, Some(&train.class_names))?),
        None => None,
    };
    Ok((train, test))
}
