//! Metrics CSV rows.
//!
//! Boosted runs write a row for the initial score (iteration 0), then for
//! every iteration its stage's per-epoch regression losses followed by one
//! summary row with an empty epoch. Baselines leave the iteration empty and
//! write one row per epoch plus a final summary row. Cells that do not
//! apply are empty; `wall_seconds` is only filled when timing is enabled.

use std::io::Write;

use anyhow::Result;
use gbnet::boosting::BoostLog;
use gbnet::network::TrainLog;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub run_id: String,
    pub iteration: Option<usize>,
    pub epoch: Option<usize>,
    pub train_ce: Option<f64>,
    pub test_ce: Option<f64>,
    pub train_acc: Option<f64>,
    pub test_acc: Option<f64>,
    pub stage_train_mse: Option<f64>,
    pub stage_test_mse: Option<f64>,
    pub wall_seconds: Option<f64>,
}

pub const COLUMNS: [&str; 10] = [
    "run_id",
    "iteration",
    "epoch",
    "train_ce",
    "test_ce",
    "train_acc",
    "test_acc",
    "stage_train_mse",
    "stage_test_mse",
    "wall_seconds",
];

pub fn boost_rows(run_id: &str, log: &BoostLog, timing: bool) -> Vec<MetricsRow> {
    let mut rows = vec![MetricsRow {
        run_id: run_id.into(),
        iteration: Some(0),
        train_ce: Some(log.initial_train_ce),
        test_ce: log.initial_val_ce,
        train_acc: Some(log.initial_train_acc),
        test_acc: log.initial_val_acc,
        ..MetricsRow::default()
    }];
    for it in &log.iterations {
        rows.extend(it.stage.epochs.iter().map(|e| MetricsRow {
            run_id: run_id.into(),
            iteration: Some(it.iteration),
            epoch: Some(e.epoch),
            stage_train_mse: Some(e.train_loss),
            stage_test_mse: e.val_loss,
            ..MetricsRow::default()
        }));
        rows.push(MetricsRow {
            run_id: run_id.into(),
            iteration: Some(it.iteration),
            train_ce: Some(it.train_ce),
            test_ce: it.val_ce,
            train_acc: Some(it.train_acc),
            test_acc: it.val_acc,
            wall_seconds: timing.then_some(it.wall_seconds),
            ..MetricsRow::default()
        });
    }
    rows
}

pub fn epoch_rows(run_id: &str, log: &TrainLog) -> Vec<MetricsRow> {
    log.epochs
        .iter()
        .map(|e| MetricsRow {
            run_id: run_id.into(),
            epoch: Some(e.epoch),
            train_ce: Some(e.train_loss),
            test_ce: e.val_loss,
            train_acc: e.train_acc,
            test_acc: e.val_acc,
            ..MetricsRow::default()
        })
        .collect()
}

pub fn write_rows<W: Write>(writer: W, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.write_record(COLUMNS)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<R: std::io::Read>(reader: R) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_reader(reader);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    anyhow::ensure!(header == COLUMNS, "unexpected metrics header {header:?}");
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}
