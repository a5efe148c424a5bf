//! CSV emitters. UTF-8, LF line endings, mandatory header row. Floats are
//! written in Rust's shortest round-trip form, so parsing reproduces them
//! bitwise.
//!
//! | file     | columns |
//! |----------|---------|
//! | curves   | `scheme,seed,epoch,train_loss,val_accuracy` |
//! | results  | `scheme,seed,dataset,init,epoch0_val_accuracy,final_test_accuracy` |
//! | history  | `epoch,learning_rate,train_loss,train_accuracy` |

use std::path::Path;

use super::write_file;
use crate::error::{Error, Result};
use crate::nn::EpochMetrics;

pub const CURVES_HEADER: [&str; 5] = ["scheme", "seed", "epoch", "train_loss", "val_accuracy"];
pub const RESULTS_HEADER: [&str; 6] = [
    "scheme",
    "seed",
    "dataset",
    "init",
    "epoch0_val_accuracy",
    "final_test_accuracy",
];
pub const HISTORY_HEADER: [&str; 4] = ["epoch", "learning_rate", "train_loss", "train_accuracy"];

#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub scheme: String,
    pub seed: u64,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub scheme: String,
    pub seed: u64,
    pub dataset: String,
    pub init: String,
    pub epoch0_val_accuracy: f64,
    pub final_test_accuracy: f64,
}

fn emit<const N: usize>(header: [&str; N], rows: impl Iterator<Item = [String; N]>) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.into_inner().map_err(|e| Error::Csv(e.to_string()))
}

fn records<const N: usize>(bytes: &[u8], header: [&str; N]) -> Result<Vec<csv::StringRecord>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let got = r.headers()?.clone();
    if got.iter().ne(header.iter().copied()) {
        return Err(Error::Csv(format!("unexpected header {:?}, expected {header:?}", got)));
    }
    Ok(r.records().collect::<std::result::Result<_, _>>()?)
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, name: &str) -> Result<T> {
    let line = rec.position().map_or(0, |p| p.line());
    rec[i]
        .parse()
        .map_err(|_| Error::Csv(format!("line {line}: bad {name} {:?}", &rec[i])))
}

pub fn encode_curves(rows: &[CurveRow]) -> Result<Vec<u8>> {
    emit(
        CURVES_HEADER,
        rows.iter().map(|r| {
            [
                r.scheme.clone(),
                r.seed.to_string(),
                r.epoch.to_string(),
                r.train_loss.to_string(),
                r.val_accuracy.to_string(),
            ]
        }),
    )
}

pub fn parse_curves(bytes: &[u8]) -> Result<Vec<CurveRow>> {
    records(bytes, CURVES_HEADER)?
        .iter()
        .map(|rec| {
            Ok(CurveRow {
                scheme: rec[0].to_string(),
                seed: field(rec, 1, "seed")?,
                epoch: field(rec, 2, "epoch")?,
                train_loss: field(rec, 3, "train_loss")?,
                val_accuracy: field(rec, 4, "val_accuracy")?,
            })
        })
        .collect()
}

pub fn encode_results(rows: &[ResultRow]) -> Result<Vec<u8>> {
    emit(
        RESULTS_HEADER,
        rows.iter().map(|r| {
            [
                r.scheme.clone(),
                r.seed.to_string(),
                r.dataset.clone(),
                r.init.clone(),
                r.epoch0_val_accuracy.to_string(),
                r.final_test_accuracy.to_string(),
            ]
        }),
    )
}

pub fn parse_results(bytes: &[u8]) -> Result<Vec<ResultRow>> {
    records(bytes, RESULTS_HEADER)?
        .iter()
        .map(|rec| {
            Ok(ResultRow {
                scheme: rec[0].to_string(),
                seed: field(rec, 1, "seed")?,
                dataset: rec[2].to_string(),
                init: rec[3].to_string(),
                epoch0_val_accuracy: field(rec, 4, "epoch0_val_accuracy")?,
                final_test_accuracy: field(rec, 5, "final_test_accuracy")?,
            })
        })
        .collect()
}

pub fn encode_history(history: &[EpochMetrics]) -> Result<Vec<u8>> {
    emit(
        HISTORY_HEADER,
        history.iter().map(|e| {
            [
                e.epoch.to_string(),
                e.learning_rate.to_string(),
                e.train_loss.to_string(),
                e.train_accuracy.to_string(),
            ]
        }),
    )
}

/// `(epoch, learning_rate, train_loss, train_accuracy)` rows.
pub fn parse_history(bytes: &[u8]) -> Result<Vec<(usize, f64, f64, f64)>> {
    records(bytes, HISTORY_HEADER)?
        .iter()
        .map(|rec| {
            Ok((
                field(rec, 0, "epoch")?,
                field(rec, 1, "learning_rate")?,
                field(rec, 2, "train_loss")?,
                field(rec, 3, "train_accuracy")?,
            ))
        })
        .collect()
}

pub fn write_curves(rows: &[CurveRow], path: &Path) -> Result<()> {
    write_file(path, &encode_curves(rows)?)
}

pub fn write_results(rows: &[ResultRow], path: &Path) -> Result<()> {
    write_file(path, &encode_results(rows)?)
}

pub fn write_history(history: &[EpochMetrics], path: &Path) -> Result<()> {
    write_file(path, &encode_history(history)?)
}
