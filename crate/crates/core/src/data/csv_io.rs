use std::fs::File;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{csv_error, DataKind, Dataset, LabelEncoder};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Zero-based column index or header name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelColumn {
    Index(usize),
    Name(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvOptions {
    /// `None` selects the last column.
    pub label_column: Option<LabelColumn>,
    pub has_header: bool,
    /// Fixed class list; labels outside it are rejected. When absent,
    /// classes are numbered by first appearance.
    pub classes: Option<Vec<String>>,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self { label_column: None, has_header: true, classes: None }
    }
}

pub fn load_csv<T: Scalar>(path: impl AsRef<Path>, opts: &CsvOptions) -> Result<Dataset<T>> {
    let path = path.as_ref();
    let file = File::open(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    read_csv(file, opts)
}

pub fn read_csv<T: Scalar, R: Read>(reader: R, opts: &CsvOptions) -> Result<Dataset<T>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(opts.has_header)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let header: Option<Vec<String>> = if opts.has_header {
        Some(rdr.headers().map_err(csv_error)?.iter().map(str::to_string).collect())
    } else {
        None
    };

    let mut encoder = LabelEncoder::new(opts.classes.as_deref());
    let mut features: Vec<T> = Vec::new();
    let mut classes = Vec::new();
    let mut width: Option<usize> = None;
    let mut label_at = None;

    for (i, record) in rdr.records().enumerate() {
        let record = record.map_err(csv_error)?;
        let row = record.position().map_or(i + 1, |p| p.line() as usize);
        let columns = record.len();
        let label = match label_at {
            Some(l) => l,
            None => {
                let l = resolve_label(opts.label_column.as_ref(), header.as_deref(), columns)?;
                label_at = Some(l);
                l
            }
        };
        if *width.get_or_insert(columns) != columns {
            return Err(Error::Parse {
                row,
                column: columns.min(width.unwrap_or(0)) + 1,
                message: format!("expected {} columns, found {columns}", width.unwrap_or(0)),
            });
        }
        for (c, cell) in record.iter().enumerate() {
            if c == label {
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                column: c + 1,
                message: if cell.is_empty() {
                    "missing value".into()
                } else {
                    format!("not a number: {cell:?}")
                },
            })?;
            features.push(T::lit(v));
        }
        let cell = &record[label];
        if cell.is_empty() {
            return Err(Error::Parse { row, column: label + 1, message: "missing label".into() });
        }
        match encoder.encode(cell) {
            Some(c) => classes.push(c),
            None => {
                return Err(Error::Parse {
                    row,
                    column: label + 1,
                    message: format!("unknown class {cell:?}"),
                })
            }
        }
    }

    let n = classes.len();
    if n == 0 {
        return Err(Error::Data("CSV contains no data rows".into()));
    }
    let f = width.unwrap_or(1) - 1;
    if f == 0 {
        return Err(Error::Data("CSV has no feature columns".into()));
    }
    let names = encoder.into_names();
    if names.len() < 2 {
        return Err(Error::Data(format!("CSV contains a single class ({:?})", names.first())));
    }
    Dataset::new(Tensor::new(vec![n, f], features)?, &classes, names, DataKind::Tabular)
}

fn resolve_label(spec: Option<&LabelColumn>, header: Option<&[String]>, columns: usize) -> Result<usize> {
    let idx = match spec {
        None => columns.checked_sub(1).ok_or_else(|| Error::Data("empty CSV record".into()))?,
        Some(LabelColumn::Index(i)) => *i,
        Some(LabelColumn::Name(name)) => header
            .ok_or_else(|| Error::Config(format!("label column {name:?} given by name but the CSV has no header")))?
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Data(format!("no column named {name:?} in CSV header")))?,
    };
    if idx >= columns {
        return Err(Error::Data(format!("label column {idx} out of range for {columns} columns")));
    }
    Ok(idx)
}
