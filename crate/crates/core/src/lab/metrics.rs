//! Metrics CSV with a fixed header.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const HEADER: [&str; 13] = [
    "step",
    "method",
    "loss",
    "acc",
    "acc_hundreds",
    "acc_tens",
    "acc_units",
    "acc_hard",
    "teacher_entropy",
    "teacher_top1",
    "teacher_acc",
    "grad_norm",
    "ms",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: usize,
    pub method: String,
    /// Mean training loss over the steps since the previous row.
    pub loss: f64,
    pub acc: f64,
    pub acc_hundreds: f64,
    pub acc_tens: f64,
    pub acc_units: f64,
    pub acc_hard: f64,
    pub teacher_entropy: f64,
    pub teacher_top1: f64,
    pub teacher_acc: f64,
    /// Mean gradient norm over the steps since the previous row.
    pub grad_norm: f64,
    /// Mean wall-clock milliseconds per step; 0 when timing is off.
    pub ms: f64,
}

impl MetricsRow {
    pub fn check(&self) -> std::result::Result<(), String> {
        for (name, v) in [
            ("acc", self.acc),
            ("acc_hundreds", self.acc_hundreds),
            ("acc_tens", self.acc_tens),
            ("acc_units", self.acc_units),
            ("acc_hard", self.acc_hard),
            ("teacher_acc", self.teacher_acc),
            ("teacher_top1", self.teacher_top1),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{name} = {v} outside [0, 1]"));
            }
        }
        if !(self.teacher_entropy >= 0.0) {
            return Err(format!(
                "teacher_entropy = {} negative",
                self.teacher_entropy
            ));
        }
        Ok(())
    }
}

pub fn write_metrics_to<W: Write>(out: W, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    w.write_record(HEADER).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    write_metrics_to(std::fs::File::create(path)?, rows)
}

pub fn read_metrics_from<R: Read>(input: R) -> Result<Vec<MetricsRow>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(input);
    let mut records = r.records();
    let header = match records.next() {
        Some(h) => h.map_err(csv_err)?,
        None => return Err(Error::Metrics("missing header".into())),
    };
    if header.iter().ne(HEADER) {
        return Err(Error::Metrics(format!(
            "header mismatch: expected '{}', found '{}'",
            HEADER.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut rows = Vec::new();
    for rec in records {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let row: MetricsRow = rec.deserialize(None).map_err(|e| Error::MetricsRow {
            line,
            reason: e.to_string(),
        })?;
        row.check()
            .map_err(|reason| Error::MetricsRow { line, reason })?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    read_metrics_from(std::fs::File::open(path)?)
}

fn csv_err(e: csv::Error) -> Error {
    match e.position() {
        Some(p) => Error::MetricsRow {
            line: p.line(),
            reason: e.to_string(),
        },
        None => Error::Metrics(e.to_string()),
    }
}
