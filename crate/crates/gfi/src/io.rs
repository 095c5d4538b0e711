//! File helpers that attach the offending path to every error.

use std::fs;
use std::path::Path;

use gfi_core::gft::{self, AnyTensor};
use gfi_core::{Real, Tensor};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{require, CliError, Result};

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    require(path)?;
    fs::read(path).map_err(|e| CliError::io(path, e))
}

/// Writes `bytes`, creating parent directories as needed.
pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn read_gft(path: &Path) -> Result<AnyTensor> {
    let bytes = read_bytes(path)?;
    gft::decode_exact(&bytes).map_err(|e| CliError::Format { path: path.to_path_buf(), msg: e.to_string() })
}

pub fn read_tensor<T: Real>(path: &Path) -> Result<Tensor<T>> {
    Ok(read_gft(path)?.into_real())
}

pub fn write_gft<T: Real>(path: &Path, t: &Tensor<T>) -> Result<()> {
    write_bytes(path, &gft::encode(t))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|source| CliError::Json { path: path.to_path_buf(), source })
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|source| CliError::Json { path: path.to_path_buf(), source })?;
    s.push('\n');
    write_bytes(path, s.as_bytes())
}
