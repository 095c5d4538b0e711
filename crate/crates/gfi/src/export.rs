//! CSV views of histories, reports and grids. Missing values are empty cells.

use std::path::Path;

use gfi_core::eval::{Grid, MetricReport};
use gfi_core::training::TrainHistory;
use serde::Serialize;

use crate::error::Result;
use crate::io;

pub fn to_csv<R: Serialize>(rows: impl IntoIterator<Item = R>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| csv::Error::from(e.into_error()).into())
}

pub fn write_csv<R: Serialize>(path: &Path, rows: impl IntoIterator<Item = R>) -> Result<()> {
    io::write_bytes(path, &to_csv(rows)?)
}

#[derive(Serialize)]
struct EpochRow {
    epoch: usize,
    stage: u8,
    lr: f64,
    total: f64,
    forward: Option<f64>,
    inverse: Option<f64>,
    cycle: Option<f64>,
    reconstruction: Option<f64>,
    val_forward_mae: Option<f64>,
    val_forward_mse: Option<f64>,
    val_forward_ssim: Option<f64>,
    val_inverse_mae: Option<f64>,
    val_inverse_mse: Option<f64>,
    val_inverse_ssim: Option<f64>,
}

pub fn history_csv(h: &TrainHistory) -> Result<Vec<u8>> {
    to_csv(h.epochs.iter().map(|e| EpochRow {
        epoch: e.epoch,
        stage: e.stage,
        lr: e.lr,
        total: e.total,
        forward: e.forward,
        inverse: e.inverse,
        cycle: e.cycle,
        reconstruction: e.reconstruction,
        val_forward_mae: e.val_forward.map(|m| m.mae),
        val_forward_mse: e.val_forward.map(|m| m.mse),
        val_forward_ssim: e.val_forward.map(|m| m.ssim),
        val_inverse_mae: e.val_inverse.map(|m| m.mae),
        val_inverse_mse: e.val_inverse.map(|m| m.mse),
        val_inverse_ssim: e.val_inverse.map(|m| m.ssim),
    }))
}

pub fn steps_csv(h: &TrainHistory) -> Result<Vec<u8>> {
    to_csv(&h.steps)
}

#[derive(Serialize)]
struct ReportRow<'a> {
    dataset: &'a str,
    checkpoint: &'a str,
    direction: &'a str,
    /// Sample index, or `mean` for the aggregate row.
    sample: String,
    mae: f64,
    mse: f64,
    ssim: f64,
}

pub fn report_csv(r: &MetricReport) -> Result<Vec<u8>> {
    let row = |sample: String, mae, mse, ssim| ReportRow {
        dataset: &r.dataset,
        checkpoint: &r.checkpoint,
        direction: r.direction.name(),
        sample,
        mae,
        mse,
        ssim,
    };
    let per = r.samples.iter().map(|s| row(s.index.to_string(), s.mae, s.mse, s.ssim));
    to_csv(per.chain([row("mean".into(), r.mae, r.mse, r.ssim)]))
}

#[derive(Serialize)]
struct GridRow<'a> {
    direction: &'a str,
    trained_on: &'a str,
    evaluated_on: &'a str,
    mae: f64,
    mse: f64,
    ssim: f64,
}

/// Long format: one row per (trained_on, evaluated_on) cell, row-major.
pub fn grid_csv(g: &Grid) -> Result<Vec<u8>> {
    let mut rows = Vec::with_capacity(g.rows.len() * g.cols.len());
    for (i, r) in g.rows.iter().enumerate() {
        for (j, c) in g.cols.iter().enumerate() {
            let (mae, mse, ssim) = g.cell(i, j);
            rows.push(GridRow { direction: g.direction.name(), trained_on: r, evaluated_on: c, mae, mse, ssim });
        }
    }
    to_csv(rows)
}
