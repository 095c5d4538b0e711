//! Subcommands of the `gfi` binary.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use gfi_core::datagen::{Complexity, Family, FamilySpec, NormScheme};
use gfi_core::eval::{Grid, MetricReport};
use gfi_core::models::{Direction, GfiModel, ModelConfig, ModelKind, Preset, TranslatorSpec};
use gfi_core::training::{train, TrainConfig, TrainData, TrainMode, TrainOutcome};
use gfi_core::wave::{simulate_survey, SimConfig, VelocityMap};
use gfi_core::Tensor;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, Checkpoint, Meta};
use crate::dataset::{self, BuildRequest, Dataset, Part};
use crate::error::{require, CliError, Result};
use crate::{config, evaluate, export, io, render};

#[derive(Parser, Debug)]
#[command(name = "gfi", version, about = "Latent-space forward and inverse seismic modelling toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a paired velocity/waveform dataset
    GenData(GenDataArgs),
    /// Simulate shot gathers for velocity maps
    Simulate(SimulateArgs),
    /// Train a model on a dataset
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split
    Eval(EvalArgs),
    /// Evaluate checkpoints across datasets
    ZeroShot(ZeroShotArgs),
    /// Sweep latent spatial size and skip connections
    AblateLatent(AblateArgs),
    /// Render a velocity map or survey as PPM/PGM
    Render(RenderArgs),
}

fn parse_with<T>(what: &'static str, f: fn(&str) -> Option<T>) -> impl Fn(&str) -> std::result::Result<T, String> + Clone {
    move |s| f(s).ok_or_else(|| format!("unknown {what} `{s}`"))
}

#[derive(Args, Debug, Clone)]
pub struct Layering {
    /// JSON file applied on top of the preset
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// key=value override applied last (repeatable), e.g. train.epochs=20
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[arg(long, value_parser = parse_with("family", Family::parse))]
    pub family: Family,
    #[arg(long, value_parser = parse_with("complexity", Complexity::parse), default_value = "A")]
    pub complexity: Complexity,
    #[arg(long)]
    pub train: usize,
    #[arg(long, default_value_t = 0)]
    pub test: usize,
    #[arg(long, value_parser = parse_with("preset", Preset::parse), default_value = "desk")]
    pub preset: Preset,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Dataset label used in reports; defaults to `<family>-<complexity>`
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long, value_parser = parse_with("normalization", NormScheme::parse), default_value = "minmax")]
    pub velocity_norm: NormScheme,
    #[arg(long, value_parser = parse_with("normalization", NormScheme::parse), default_value = "standardize")]
    pub waveform_norm: NormScheme,
    #[command(flatten)]
    pub layering: Layering,
    #[arg(long)]
    pub out: PathBuf,
}

/// Generation settings open to `--config` / `--set` (`family.*`, `sim.*`).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GenConfig {
    pub family: FamilySpec,
    pub sim: SimConfig,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// GFT1 velocity map, (1,H,W) or (N,1,H,W)
    #[arg(long)]
    pub velocity: PathBuf,
    /// Simulate only this map of a batch
    #[arg(long)]
    pub index: Option<usize>,
    #[arg(long, value_parser = parse_with("preset", Preset::parse), default_value = "desk")]
    pub preset: Preset,
    #[command(flatten)]
    pub layering: Layering,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long, value_parser = parse_with("model", ModelKind::parse))]
    pub model: ModelKind,
    #[arg(long, value_parser = parse_with("training mode", TrainMode::parse))]
    pub mode: TrainMode,
    /// Dataset directory
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_parser = parse_with("preset", Preset::parse), default_value = "desk")]
    pub preset: Preset,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub stage1_epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Train joint-cycle on disjoint halves: velocities from one, waveforms from the other
    #[arg(long)]
    pub unpaired: bool,
    #[command(flatten)]
    pub layering: Layering,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

/// Training settings open to `--config` / `--set` (`model.*`, `train.*`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Defaults to inverse when the checkpoint serves it, forward otherwise
    #[arg(long, value_parser = parse_with("direction", Direction::parse))]
    pub direction: Option<Direction>,
    #[arg(long, default_value = "test")]
    pub split: Part,
    /// CSV report path
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ZeroShotArgs {
    /// Checkpoint, one row each (repeatable)
    #[arg(long = "checkpoint", required = true)]
    pub checkpoints: Vec<PathBuf>,
    /// Dataset directory, one column each (repeatable)
    #[arg(long = "data", required = true)]
    pub datasets: Vec<PathBuf>,
    /// Checkpoints of a second model family, row for row; adds a difference grid
    #[arg(long = "compare")]
    pub compare: Vec<PathBuf>,
    #[arg(long, value_parser = parse_with("direction", Direction::parse), default_value = "inverse")]
    pub direction: Direction,
    #[arg(long, default_value = "test")]
    pub split: Part,
    /// Output directory for grid.csv (and compare.csv, diff.csv)
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_parser = parse_with("model", ModelKind::parse), default_value = "latent-unet-small")]
    pub model: ModelKind,
    #[arg(long, value_parser = parse_with("training mode", TrainMode::parse), default_value = "inverse")]
    pub mode: TrainMode,
    #[arg(long, value_parser = parse_with("preset", Preset::parse), default_value = "desk")]
    pub preset: Preset,
    /// Latent spatial sizes (square)
    #[arg(long, value_delimiter = ',', default_value = "8,16,32")]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub layering: Layering,
    /// CSV with one row per configuration
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum RenderKind {
    Velocity,
    Waveform,
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub kind: RenderKind,
    /// Sample of a batched tensor
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => gen_data(&a),
        Command::Simulate(a) => simulate(&a),
        Command::Train(a) => train_cmd(&a),
        Command::Eval(a) => eval_cmd(&a),
        Command::ZeroShot(a) => zero_shot(&a),
        Command::AblateLatent(a) => ablate(&a),
        Command::Render(a) => render_cmd(&a),
    }
}

fn sim_preset(p: Preset) -> SimConfig {
    match p {
        Preset::Desk => SimConfig::desk(),
        Preset::Full => SimConfig::full(),
    }
}

fn complexity_name(c: Complexity) -> &'static str {
    match c {
        Complexity::A => "A",
        Complexity::B => "B",
    }
}

fn gen_data(a: &GenDataArgs) -> Result<()> {
    let sim = sim_preset(a.preset);
    let base = GenConfig { family: FamilySpec::preset(a.family, a.complexity, sim.nz, sim.nx, a.seed), sim };
    let cfg = config::layer(&base, a.layering.config.as_deref(), &a.layering.sets)?;
    let req = BuildRequest {
        name: a.name.clone().unwrap_or_else(|| format!("{}-{}", a.family.name(), complexity_name(a.complexity))),
        family: cfg.family,
        sim: cfg.sim,
        n_train: a.train,
        n_test: a.test,
        velocity_scheme: a.velocity_norm,
        waveform_scheme: a.waveform_norm,
    };
    let m = dataset::build(&req, &a.out)?;
    log::info!(
        "wrote {} ({} train, {} test) to {}; velocity {:.0}..{:.0} m/s",
        m.name,
        m.split.train.len(),
        m.split.test.len(),
        a.out.display(),
        m.summary.velocity.min,
        m.summary.velocity.max
    );
    Ok(())
}

fn simulate(a: &SimulateArgs) -> Result<()> {
    let sim = config::layer(&sim_preset(a.preset), a.layering.config.as_deref(), &a.layering.sets)?;
    let v = io::read_tensor::<f64>(&a.velocity)?;
    let batched = v.ndim() == 4 && a.index.is_none();
    let maps: Vec<Tensor<f64>> = match (v.ndim(), a.index) {
        (3, _) => vec![v],
        (4, Some(i)) if i < v.shape()[0] => vec![v.item(i)],
        (4, Some(i)) => return Err(CliError::Usage(format!("index {i} is out of range for {} maps", v.shape()[0]))),
        (4, None) => (0..v.shape()[0]).map(|i| v.item(i)).collect(),
        _ => return Err(CliError::Usage(format!("expected (1,H,W) or (N,1,H,W) velocities, got {:?}", v.shape()))),
    };
    let cubes: Vec<Tensor<f64>> = maps
        .into_par_iter()
        .map(|m| Ok(simulate_survey(&VelocityMap::new(m)?, &sim)?.values))
        .collect::<Result<_>>()?;
    let out = if batched { Tensor::stack(&cubes)? } else { cubes.into_iter().next().expect("one map") };
    io::write_gft(&a.out, &out.cast::<f32>())
}

/// Preset model and schedule for a training run, before file and `--set` overrides.
pub fn base_run(kind: ModelKind, mode: TrainMode, preset: Preset, seed: u64) -> RunConfig {
    let train = TrainConfig {
        seed,
        ..match preset {
            Preset::Desk => TrainConfig::desk(mode),
            Preset::Full => TrainConfig::full(mode),
        }
    };
    RunConfig { model: ModelConfig::preset(kind, preset, mode.model_mode(kind), seed), train }
}

fn train_cmd(a: &TrainArgs) -> Result<()> {
    let ds = Dataset::load(&a.data)?;
    let mut base = base_run(a.model, a.mode, a.preset, a.seed.unwrap_or(0));
    if let Some(e) = a.epochs {
        base.train.epochs = e;
    }
    if let Some(e) = a.stage1_epochs {
        base.train.stage1_epochs = e;
    }
    if a.unpaired {
        base.train.pure_unpaired = true;
    }
    let cfg = config::layer(&base, a.layering.config.as_deref(), &a.layering.sets)?;
    let shapes = (ds.data.velocity.shape()[1..].to_vec(), ds.data.waveform.shape()[1..].to_vec());
    if shapes.0 != cfg.model.velocity_shape || shapes.1 != cfg.model.waveform_shape {
        return Err(CliError::Usage(format!(
            "dataset shapes {:?}/{:?} do not match the {} preset {:?}/{:?}",
            shapes.0,
            shapes.1,
            a.preset.name(),
            cfg.model.velocity_shape,
            cfg.model.waveform_shape
        )));
    }
    let raw = ds.part(Part::Train);
    let data = if a.unpaired {
        let half = raw.len() / 2;
        if half == 0 {
            return Err(CliError::Usage("unpaired training needs at least two training samples".into()));
        }
        let (vi, pi): (Vec<usize>, Vec<usize>) = ((0..half).collect(), (half..raw.len()).collect());
        TrainData::unpaired(&raw.velocity.gather(&vi), &raw.waveform.gather(&pi), ds.manifest.norms)?
    } else {
        TrainData::paired(&raw, ds.manifest.norms)?
    };
    let mut model = GfiModel::<f32>::new(cfg.model.clone())?;
    log::info!(
        "training {} ({} parameters) in {} mode on {} for {} epochs",
        cfg.model.kind.name(),
        model.param_count(),
        cfg.train.mode.name(),
        ds.manifest.name,
        cfg.train.epochs
    );
    let out = train(&mut model, &data, &cfg.train)?;
    write_run(&a.out, &cfg, &model, &out, &ds)
}

fn write_run(dir: &Path, cfg: &RunConfig, model: &GfiModel<f32>, out: &TrainOutcome<f32>, ds: &Dataset) -> Result<()> {
    for e in &out.history.epochs {
        log::debug!("epoch {:>4} lr {:.2e} loss {:.6}", e.epoch, e.lr, e.total);
    }
    let meta = |epoch| Meta { train_mode: Some(cfg.train.mode), norms: ds.manifest.norms, dataset: &ds.manifest.name, epoch };
    let last = out.history.epochs.last().map(|e| e.epoch);
    checkpoint::save(&dir.join("checkpoint.gfck"), model, &meta(last))?;
    if let Some((epoch, store)) = &out.best {
        let best = GfiModel { store: store.clone(), ..model.clone() };
        checkpoint::save(&dir.join("best.gfck"), &best, &meta(Some(*epoch)))?;
    }
    if let Some(store) = &out.stage1 {
        let s1 = GfiModel { store: store.clone(), ..model.clone() };
        checkpoint::save(&dir.join("stage1.gfck"), &s1, &meta(Some(cfg.train.stage1_epochs - 1)))?;
    }
    io::write_bytes(&dir.join("history.csv"), &export::history_csv(&out.history)?)?;
    io::write_bytes(&dir.join("steps.csv"), &export::steps_csv(&out.history)?)?;
    io::write_json(&dir.join("config.json"), cfg)?;
    if let Some(e) = out.history.epochs.last() {
        log::info!("final loss {:.6} after {} epochs; wrote {}", e.total, out.history.epochs.len(), dir.display());
    }
    Ok(())
}

fn default_direction(c: &Checkpoint) -> Direction {
    if c.model.supports(Direction::Inverse) {
        Direction::Inverse
    } else {
        Direction::Forward
    }
}

fn eval_cmd(a: &EvalArgs) -> Result<()> {
    let c = checkpoint::load(&a.checkpoint)?;
    let ds = Dataset::load(&a.data)?;
    let d = a.direction.unwrap_or_else(|| default_direction(&c));
    let set = ds.eval_set(a.split)?;
    let label = a.checkpoint.display().to_string();
    let report = evaluate(&c.model, &c.header.norms, &set, d, &label)?;
    println!("{}", report.summary_line());
    if let Some(out) = &a.out {
        io::write_bytes(out, &export::report_csv(&report)?)?;
    }
    Ok(())
}

fn grid_for(paths: &[PathBuf], sets: &[gfi_core::eval::EvalSet], d: Direction) -> Result<Grid> {
    let cks = paths.iter().map(|p| checkpoint::load(p)).collect::<Result<Vec<_>>>()?;
    let mut reports: Vec<MetricReport> = Vec::with_capacity(cks.len() * sets.len());
    for (c, p) in cks.iter().zip(paths) {
        for s in sets {
            reports.push(evaluate(&c.model, &c.header.norms, s, d, &p.display().to_string())?);
        }
    }
    let rows = cks.iter().map(|c| c.header.dataset.clone()).collect();
    let cols = sets.iter().map(|s| s.name.clone()).collect();
    Ok(Grid::from_reports(d, rows, cols, &reports)?)
}

fn print_grid(title: &str, g: &Grid) {
    println!("{title} ({}, SSIM)", g.direction.name());
    print!("{:>16}", "trained \\ eval");
    for c in &g.cols {
        print!(" {c:>12}");
    }
    println!();
    for (i, r) in g.rows.iter().enumerate() {
        print!("{r:>16}");
        for j in 0..g.cols.len() {
            print!(" {:>12.4}", g.cell(i, j).2);
        }
        println!();
    }
}

fn zero_shot(a: &ZeroShotArgs) -> Result<()> {
    if !a.compare.is_empty() && a.compare.len() != a.checkpoints.len() {
        return Err(CliError::Usage(format!(
            "--compare needs one checkpoint per --checkpoint ({} vs {})",
            a.compare.len(),
            a.checkpoints.len()
        )));
    }
    for p in a.checkpoints.iter().chain(&a.compare) {
        require(p)?;
    }
    let sets = a
        .datasets
        .iter()
        .map(|p| Dataset::load(p).and_then(|d| d.eval_set(a.split)))
        .collect::<Result<Vec<_>>>()?;
    let grid = grid_for(&a.checkpoints, &sets, a.direction)?;
    io::write_bytes(&a.out.join("grid.csv"), &export::grid_csv(&grid)?)?;
    print_grid("zero-shot", &grid);
    if !a.compare.is_empty() {
        let other = grid_for(&a.compare, &sets, a.direction)?;
        let diff = grid.difference(&other)?;
        io::write_bytes(&a.out.join("compare.csv"), &export::grid_csv(&other)?)?;
        io::write_bytes(&a.out.join("diff.csv"), &export::grid_csv(&diff)?)?;
        print_grid("difference", &diff);
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct AblationRow {
    latent_size: usize,
    skip_connections: bool,
    params: usize,
    epochs: usize,
    final_train_loss: f64,
    direction: &'static str,
    test_mae: f64,
    test_mse: f64,
    test_ssim: f64,
}

fn ablate(a: &AblateArgs) -> Result<()> {
    let ds = Dataset::load(&a.data)?;
    let mut base = base_run(a.model, a.mode, a.preset, a.seed);
    base.train.epochs = a.epochs;
    let base = config::layer(&base, a.layering.config.as_deref(), &a.layering.sets)?;
    if !matches!(base.model.translator, TranslatorSpec::Unet { .. }) {
        return Err(CliError::Usage(format!("ablate-latent sweeps U-Net translators; {} has none", a.model.name())));
    }
    if a.sizes.is_empty() || a.sizes.contains(&0) {
        return Err(CliError::Usage("latent sizes must be positive".into()));
    }
    let data = TrainData::paired(&ds.part(Part::Train), ds.manifest.norms)?;
    let test = ds.eval_set(if ds.manifest.split.test.is_empty() { Part::Train } else { Part::Test })?;
    let mut rows = Vec::new();
    for &size in &a.sizes {
        for skip in [true, false] {
            let mut cfg = base.clone();
            cfg.model.latent = [cfg.model.latent[0], size, size];
            if let TranslatorSpec::Unet { skip_connections, .. } = &mut cfg.model.translator {
                *skip_connections = skip;
            }
            let mut m = GfiModel::<f32>::new(cfg.model.clone())?;
            let out = train(&mut m, &data, &cfg.train)?;
            let d = if m.supports(Direction::Inverse) { Direction::Inverse } else { Direction::Forward };
            let r = evaluate(&m, &ds.manifest.norms, &test, d, "ablation")?;
            log::info!("latent {size}x{size} skip {skip}: {}", r.summary_line());
            rows.push(AblationRow {
                latent_size: size,
                skip_connections: skip,
                params: m.param_count(),
                epochs: cfg.train.epochs,
                final_train_loss: out.history.epochs.last().map_or(f64::NAN, |e| e.total),
                direction: d.name(),
                test_mae: r.mae,
                test_mse: r.mse,
                test_ssim: r.ssim,
            });
        }
    }
    export::write_csv(&a.out, &rows)?;
    println!("{:>6} {:>6} {:>12} {:>8}", "size", "skip", "test MAE", "SSIM");
    for r in &rows {
        println!("{:>6} {:>6} {:>12.3} {:>8.4}", r.latent_size, r.skip_connections, r.test_mae, r.test_ssim);
    }
    Ok(())
}

fn render_cmd(a: &RenderArgs) -> Result<()> {
    let t = io::read_tensor::<f32>(&a.input)?;
    // velocity (1,H,W) and surveys (S,T,R) are both 3-D; a 4-D tensor is a batch
    let t = if t.ndim() == 4 {
        if a.index >= t.shape()[0] {
            return Err(CliError::Usage(format!("index {} is out of range for {} samples", a.index, t.shape()[0])));
        }
        t.item(a.index)
    } else {
        t
    };
    let img = match a.kind {
        RenderKind::Velocity => render::velocity_ppm(&t, None)?,
        RenderKind::Waveform => render::waveform_pgm(&t)?,
    };
    io::write_bytes(&a.out, &img)
}
