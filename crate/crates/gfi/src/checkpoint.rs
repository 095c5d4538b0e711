//! Checkpoint files.
//!
//! Layout: magic `GFCK`, u32 little-endian header length, a JSON header, then
//! one GFT1 record per parameter in declaration order.

use std::path::Path;

use gfi_core::datagen::Norms;
use gfi_core::gft;
use gfi_core::models::{GfiModel, ModelConfig};
use gfi_core::training::TrainMode;
use gfi_core::{DType, Real};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::io;

pub const MAGIC: [u8; 4] = *b"GFCK";
pub const FORMAT: &str = "gfi-checkpoint/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format: String,
    pub model: ModelConfig,
    pub train_mode: Option<TrainMode>,
    pub norms: Norms,
    /// Name of the dataset the parameters were fitted on.
    pub dataset: String,
    /// Epoch after which the parameters were taken.
    pub epoch: Option<usize>,
    pub dtype: String,
    pub params: Vec<ParamEntry>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub header: Header,
    pub model: GfiModel<f32>,
}

pub struct Meta<'a> {
    pub train_mode: Option<TrainMode>,
    pub norms: Norms,
    pub dataset: &'a str,
    pub epoch: Option<usize>,
}

pub fn encode<T: Real>(model: &GfiModel<T>, meta: &Meta) -> Vec<u8> {
    let header = Header {
        format: FORMAT.into(),
        model: model.config.clone(),
        train_mode: meta.train_mode,
        norms: meta.norms,
        dataset: meta.dataset.into(),
        epoch: meta.epoch,
        dtype: match T::DTYPE {
            DType::F32 => "f32",
            DType::F64 => "f64",
        }
        .into(),
        params: model.store.iter().map(|(_, n, t)| ParamEntry { name: n.into(), shape: t.shape().to_vec() }).collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(8 + json.len() + 4 * model.param_count());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, _, t) in model.store.iter() {
        gft::encode_into(t, &mut out);
    }
    out
}

pub fn save<T: Real>(path: &Path, model: &GfiModel<T>, meta: &Meta) -> Result<()> {
    io::write_bytes(path, &encode(model, meta))
}

pub fn decode(bytes: &[u8]) -> std::result::Result<Checkpoint, String> {
    if bytes.len() < 8 || bytes[..4] != MAGIC {
        return Err("not a checkpoint (bad magic)".into());
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let body = bytes.get(8..8 + n).ok_or("truncated header")?;
    let header: Header = serde_json::from_slice(body).map_err(|e| format!("header: {e}"))?;
    if header.format != FORMAT {
        return Err(format!("unsupported checkpoint format `{}`", header.format));
    }
    let mut model = GfiModel::<f32>::new(header.model.clone()).map_err(|e| e.to_string())?;
    if model.store.len() != header.params.len() {
        return Err(format!("header lists {} parameters, the model declares {}", header.params.len(), model.store.len()));
    }
    let mut at = 8 + n;
    let ids: Vec<_> = model.store.ids().collect();
    for (id, entry) in ids.into_iter().zip(&header.params) {
        let (t, used) = gft::decode(&bytes[at..]).map_err(|e| format!("parameter `{}`: {e}", entry.name))?;
        at += used;
        let t = t.into_real::<f32>();
        if entry.name != model.store.name(id) || t.shape() != entry.shape || t.shape() != model.store.get(id).shape() {
            return Err(format!("parameter `{}` does not match the architecture", entry.name));
        }
        model.store.get_mut(id).data_mut().copy_from_slice(t.data());
    }
    if at != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - at));
    }
    Ok(Checkpoint { header, model })
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    decode(&io::read_bytes(path)?).map_err(|msg| CliError::Format { path: path.to_path_buf(), msg })
}
