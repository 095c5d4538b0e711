//! On-disk paired datasets.
//!
//! A dataset directory holds `manifest.json`, `velocity.gft` with shape
//! `(N,1,H,W)` and `waveform.gft` with shape `(N,S,T,R)`. Train and test
//! samples share the two files and are told apart by the index ranges in the
//! manifest; normalization statistics come from the train range only.

use std::ops::Range;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use gfi_core::datagen::{generate_sample, FamilySpec, NormScheme, Norms, PairedData, Summary};
use gfi_core::eval::EvalSet;
use gfi_core::wave::SimConfig;
use gfi_core::Tensor;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{require, CliError, Result};
use crate::io;

pub const MANIFEST: &str = "manifest.json";
pub const VELOCITY_FILE: &str = "velocity.gft";
pub const WAVEFORM_FILE: &str = "waveform.gft";
pub const FORMAT: &str = "gfi-dataset/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRanges {
    pub train: Range<usize>,
    pub test: Range<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summaries {
    pub velocity: Summary,
    pub waveform: Summary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Files {
    pub velocity: String,
    pub waveform: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub name: String,
    pub family: FamilySpec,
    pub sim: SimConfig,
    pub split: SplitRanges,
    /// Statistics of the train split.
    pub summary: Summaries,
    pub norms: Norms,
    pub files: Files,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Part {
    Train,
    Test,
    All,
}

impl FromStr for Part {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Part::Train),
            "test" => Ok(Part::Test),
            "all" => Ok(Part::All),
            _ => Err(CliError::Usage(format!("unknown split `{s}` (expected train, test or all)"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct BuildRequest {
    pub name: String,
    pub family: FamilySpec,
    pub sim: SimConfig,
    pub n_train: usize,
    pub n_test: usize,
    pub velocity_scheme: NormScheme,
    pub waveform_scheme: NormScheme,
}

/// Simulates samples `range` of a family, in parallel, in index order.
pub fn generate(spec: &FamilySpec, sim: &SimConfig, range: Range<usize>) -> Result<PairedData> {
    let samples: Vec<(Tensor<f32>, Tensor<f32>)> =
        range.into_par_iter().map(|i| generate_sample(spec, sim, i)).collect::<gfi_core::Result<_>>()?;
    let (vs, ps): (Vec<_>, Vec<_>) = samples.into_iter().unzip();
    Ok(PairedData::new(Tensor::stack(&vs)?, Tensor::stack(&ps)?)?)
}

pub fn build(req: &BuildRequest, out: &Path) -> Result<Manifest> {
    if req.n_train == 0 {
        return Err(CliError::Usage("a dataset needs at least one training sample".into()));
    }
    req.family.validate()?;
    req.sim.validate()?;
    let n = req.n_train + req.n_test;
    let data = generate(&req.family, &req.sim, 0..n)?;
    let train: Vec<usize> = (0..req.n_train).collect();
    let tr = data.subset(&train);
    let summary = Summaries { velocity: Summary::of(tr.velocity.data()), waveform: Summary::of(tr.waveform.data()) };
    let norms = Norms {
        velocity: summary.velocity.stats(req.velocity_scheme)?,
        waveform: summary.waveform.stats(req.waveform_scheme)?,
    };
    let manifest = Manifest {
        format: FORMAT.into(),
        name: req.name.clone(),
        family: req.family.clone(),
        sim: req.sim.clone(),
        split: SplitRanges { train: 0..req.n_train, test: req.n_train..n },
        summary,
        norms,
        files: Files { velocity: VELOCITY_FILE.into(), waveform: WAVEFORM_FILE.into() },
    };
    io::write_gft(&out.join(VELOCITY_FILE), &data.velocity)?;
    io::write_gft(&out.join(WAVEFORM_FILE), &data.waveform)?;
    io::write_json(&out.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub data: PairedData,
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self> {
        require(dir)?;
        let path = dir.join(MANIFEST);
        let manifest: Manifest = io::read_json(&path)?;
        if manifest.format != FORMAT {
            return Err(CliError::Format { path, msg: format!("unsupported dataset format `{}`", manifest.format) });
        }
        let velocity = io::read_tensor::<f32>(&dir.join(&manifest.files.velocity))?;
        let waveform = io::read_tensor::<f32>(&dir.join(&manifest.files.waveform))?;
        let data = PairedData::new(velocity, waveform)?;
        if data.len() != manifest.split.test.end || manifest.split.train.end != manifest.split.test.start {
            return Err(CliError::Format {
                path,
                msg: format!("split {:?} does not cover the {} stored samples", manifest.split, data.len()),
            });
        }
        Ok(Dataset { dir: dir.to_path_buf(), manifest, data })
    }

    pub fn indices(&self, part: Part) -> Range<usize> {
        match part {
            Part::Train => self.manifest.split.train.clone(),
            Part::Test => self.manifest.split.test.clone(),
            Part::All => 0..self.data.len(),
        }
    }

    pub fn part(&self, part: Part) -> PairedData {
        let idx: Vec<usize> = self.indices(part).collect();
        self.data.subset(&idx)
    }

    /// Raw samples of `part` with the manifest's statistics, ready for evaluation.
    pub fn eval_set(&self, part: Part) -> Result<EvalSet> {
        let data = self.part(part);
        if data.is_empty() {
            return Err(CliError::Usage(format!("dataset {} has no {part:?} samples", self.dir.display())));
        }
        Ok(EvalSet {
            name: self.manifest.name.clone(),
            data,
            norms: self.manifest.norms,
            summary_v: self.manifest.summary.velocity,
            summary_p: self.manifest.summary.waveform,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use gfi_core::datagen::{Complexity, Family};

    fn request(n_train: usize, n_test: usize) -> BuildRequest {
        let sim = SimConfig::desk();
        BuildRequest {
            name: "flat-A".into(),
            family: FamilySpec::preset(Family::Flat, Complexity::A, sim.nz, sim.nx, 3),
            sim,
            n_train,
            n_test,
            velocity_scheme: NormScheme::Minmax,
            waveform_scheme: NormScheme::Standardize,
        }
    }

    #[test]
    fn build_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let m = build(&request(3, 2), dir.path()).unwrap();
        let d = Dataset::load(dir.path()).unwrap();
        assert_eq!(d.manifest, m);
        assert_eq!(d.data.velocity.shape(), &[5, 1, 32, 32]);
        assert_eq!(d.data.waveform.shape(), &[5, 3, 250, 32]);
        let train = d.part(Part::Train);
        assert!(train.velocity.data().iter().all(|&v| (m.summary.velocity.min..=m.summary.velocity.max).contains(&(v as f64))));
        assert_eq!(d.part(Part::Test).len(), 2);
        // sample 3 of the file is generator index 3, independent of the split
        let (v3, _) = generate_sample(&m.family, &m.sim, 3).unwrap();
        assert_eq!(d.data.velocity.item(3), v3);
    }

    #[test]
    fn empty_train_split_is_a_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(build(&request(0, 2), dir.path()).unwrap_err().exit_code(), 2);
        assert_eq!(Dataset::load(&dir.path().join("missing")).unwrap_err().exit_code(), 2);
    }
}
