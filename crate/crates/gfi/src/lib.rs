//! File formats, dataset building, and the `gfi` command line on top of `gfi-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod export;
pub mod io;
pub mod render;

use gfi_core::datagen::Norms;
use gfi_core::eval::{evaluate_indices, EvalSet, MetricReport, SampleMetrics};
use gfi_core::models::{Direction, GfiModel};
use gfi_core::Real;
use rayon::prelude::*;

pub use error::{CliError, Result};

const CHUNK: usize = 16;

/// Parallel [`gfi_core::eval::evaluate`]: chunks run concurrently and are
/// reassembled in index order, so the report does not depend on thread count.
pub fn evaluate<T: Real + Send + Sync>(
    model: &GfiModel<T>,
    norms: &Norms,
    set: &EvalSet,
    direction: Direction,
    checkpoint: &str,
) -> Result<MetricReport> {
    let idx: Vec<usize> = (0..set.data.len()).collect();
    let parts = idx
        .par_chunks(CHUNK)
        .map(|c| evaluate_indices(model, norms, set, direction, c))
        .collect::<gfi_core::Result<Vec<Vec<SampleMetrics>>>>()?;
    Ok(MetricReport::from_samples(direction, &set.name, checkpoint, parts.concat())?)
}

/// Thread count from the environment: `GFI_DETERMINISTIC=1` forces one
/// thread, otherwise `GFI_THREADS` caps it (0 or unset lets rayon decide).
pub fn thread_count() -> Result<Option<usize>> {
    if std::env::var("GFI_DETERMINISTIC").is_ok_and(|v| v == "1") {
        return Ok(Some(1));
    }
    match std::env::var("GFI_THREADS") {
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(0) => Ok(None),
            Ok(n) => Ok(Some(n)),
            Err(_) => Err(CliError::Usage(format!("GFI_THREADS must be a non-negative integer, got `{s}`"))),
        },
        Err(_) => Ok(None),
    }
}

pub fn configure_threads() -> Result<()> {
    if let Some(n) = thread_count()? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    }
    Ok(())
}
