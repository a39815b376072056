//! Command-line surface. `main.rs` only forwards to [`main_with_args`].

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::decoders::{parameter_breakdown, DecoderConfig, SegModel, Variant};
use crate::error::{Error, Result};
use crate::gradsuite::{run_suite, SuiteOptions, GRAD_TOL};
use crate::io::{
    dump_slice, load_checkpoint, read_vvol, save_checkpoint, write_vvol, CheckpointKind, CheckpointMeta, DType,
    LoadMode, RunConfig, SliceMode, Volume,
};
use crate::labels::Labels;
use crate::metrics::evaluate;
use crate::pretrain::{
    ablation_sweep, apply_mask, generate_mask, pretrain, PretrainModel, PretrainState, SweepCell, SweepConfig,
};
use crate::runtime::{fit, sliding_window_infer, synth_dataset, Blend, SegSample, SynthConfig};
use crate::swin::{skip_shapes, EncoderConfig, NUM_SKIPS};
use crate::tensor::no_grad;

/// Reference totals the `params` diagnostic compares against, in millions.
pub const REFERENCE_PARAMS_CNN: f64 = 58.96;
pub const REFERENCE_PARAMS_TRANSFORMER: f64 = 24.44;
/// Accepted relative deviation from the reference totals.
pub const PARAMS_TOLERANCE: f64 = 0.20;

#[derive(Debug, Parser)]
#[command(
    name = "unetformer",
    version,
    about = "Volumetric segmentation with shifted-window transformer encoders"
)]
pub struct Cli {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the finite-difference gradient suite; exits 1 if any check fails.
    Gradcheck(GradcheckArgs),
    /// Print skip-feature and decoder output shapes for an input size.
    Shapes(ShapesArgs),
    /// Masked-volume pre-training of the encoder.
    Pretrain(PretrainArgs),
    /// Masking ratio x patch size grid of pre-training runs.
    Sweep(SweepArgs),
    /// Segmentation training, optionally starting from a checkpoint.
    Train(TrainArgs),
    /// Sliding-window inference on a VVOL volume.
    Infer(InferArgs),
    /// Dice and Hausdorff report for a predicted label volume.
    Eval(EvalArgs),
    /// Write original, masked and reconstructed slices as PGM images.
    MaskDemo(MaskDemoArgs),
    /// Parameter counts of both variants against the reference totals.
    Params(ParamsArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Use the small test configuration (C=8, one block per stage, window 2).
    #[arg(long)]
    pub tiny: bool,
    /// Embedding width C.
    #[arg(long)]
    pub embed_dim: Option<usize>,
    /// Window size M.
    #[arg(long)]
    pub window: Option<usize>,
}

impl ModelArgs {
    fn encoder(&self, cfg: &RunConfig) -> Result<EncoderConfig> {
        let mut enc = if self.tiny {
            EncoderConfig::tiny()
        } else {
            cfg.encoder.clone()
        };
        if let Some(c) = self.embed_dim {
            enc.embed_dim = c;
        }
        if let Some(m) = self.window {
            enc.window = m;
        }
        enc.validate()?;
        Ok(enc)
    }
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Skip the end-to-end model checks.
    #[arg(long)]
    pub ops_only: bool,
    /// Coordinates sampled per parameter tensor in the model checks.
    #[arg(long, default_value_t = 2)]
    pub coords: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ShapesArgs {
    /// Cubic input edge (a multiple of 32).
    #[arg(long, default_value_t = 96)]
    pub input: usize,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Number of classes K.
    #[arg(long)]
    pub classes: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[arg(long)]
    pub mask_ratio: Option<f64>,
    #[arg(long)]
    pub patch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Edge of the synthetic volumes (ignored with --input).
    #[arg(long, default_value_t = 96)]
    pub size: usize,
    /// Number of synthetic volumes.
    #[arg(long, default_value_t = 2)]
    pub volumes: usize,
    /// VVOL volumes to pre-train on instead of synthetic data.
    #[arg(long)]
    pub input: Vec<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Checkpoint written at the end.
    #[arg(long, default_value = "pretrain.ufck")]
    pub out: PathBuf,
    /// JSON-lines log of {step, lr, loss}.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, value_delimiter = ',', default_value = "0.2,0.4,0.6,0.8")]
    pub ratios: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "8,16,32")]
    pub patches: Vec<usize>,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 2)]
    pub volumes: usize,
    /// Pre-training steps per cell.
    #[arg(long, default_value_t = 10)]
    pub steps: usize,
    /// Segmentation fine-tuning epochs per cell; 0 leaves the Dice column empty.
    #[arg(long, default_value_t = 0)]
    pub finetune_epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value = "sweep.csv")]
    pub csv: PathBuf,
    #[arg(long, default_value = "sweep.json")]
    pub json: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub variant: Option<Variant>,
    /// Pre-training or segmentation checkpoint; encoder weights transfer by name.
    #[arg(long)]
    pub from_checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub classes: Option<usize>,
    /// Stop once validation Dice exceeds this value.
    #[arg(long)]
    pub target_dice: Option<f64>,
    /// Disable augmentation.
    #[arg(long)]
    pub no_augment: bool,
    /// Edge of the synthetic volumes (ignored with --image).
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 1)]
    pub samples: usize,
    /// Training images (VVOL); pair each with a --label.
    #[arg(long)]
    pub image: Vec<PathBuf>,
    #[arg(long)]
    pub label: Vec<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Best-validation checkpoint.
    #[arg(long, default_value = "model.ufck")]
    pub out: PathBuf,
    /// JSON-lines log of {step, lr, loss, val_dice?}.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Segmentation checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    /// Predicted labels (u16 VVOL).
    #[arg(long)]
    pub output: PathBuf,
    /// Class probabilities (f64 VVOL, K channels).
    #[arg(long)]
    pub probs: Option<PathBuf>,
    /// Cubic window edge (a multiple of 32).
    #[arg(long)]
    pub roi: Option<usize>,
    #[arg(long)]
    pub overlap: Option<f64>,
    #[arg(long, value_enum)]
    pub blend: Option<Blend>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// Number of classes; defaults to one more than the largest label present.
    #[arg(long)]
    pub classes: Option<usize>,
    /// Write the report here as well as to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MaskDemoArgs {
    /// VVOL volume; a synthetic one is generated when absent.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, default_value_t = 96)]
    pub size: usize,
    #[arg(long)]
    pub mask_ratio: Option<f64>,
    #[arg(long)]
    pub patch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Pre-training checkpoint used for the reconstruction.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Slice axis (0, 1 or 2).
    #[arg(long, default_value_t = 0)]
    pub axis: usize,
    /// Slice index; defaults to the middle.
    #[arg(long)]
    pub index: Option<usize>,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct ParamsArgs {
    #[command(flatten)]
    pub model: ModelArgs,
}

/// Parses `args` and runs the command, writing reports to stdout. Returns
/// the process exit code: 0 on success, 1 on a runtime failure, 2 on a
/// usage error.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let stdout = std::io::stdout();
    match execute(&cli, &mut stdout.lock()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// Runs a parsed command. `Ok` carries the exit code for commands that
/// can fail without an error (a failing gradient check).
pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<i32> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    match &cli.command {
        Command::Gradcheck(a) => gradcheck_cmd(a, out),
        Command::Shapes(a) => shapes_cmd(a, &cfg, out).map(|_| 0),
        Command::Pretrain(a) => pretrain_cmd(a, &cfg, out).map(|_| 0),
        Command::Sweep(a) => sweep_cmd(a, &cfg, out).map(|_| 0),
        Command::Train(a) => train_cmd(a, &cfg, out).map(|_| 0),
        Command::Infer(a) => infer_cmd(a, &cfg, out).map(|_| 0),
        Command::Eval(a) => eval_cmd(a, out).map(|_| 0),
        Command::MaskDemo(a) => mask_demo_cmd(a, &cfg, out).map(|_| 0),
        Command::Params(a) => params_cmd(a, &cfg, out).map(|_| 0),
    }
}

fn gradcheck_cmd(a: &GradcheckArgs, out: &mut dyn Write) -> Result<i32> {
    let opts = SuiteOptions {
        models: !a.ops_only,
        model_coords: a.coords,
        seed: a.seed,
    };
    writeln!(out, "{:<28} {:>12} {:>8}  status", "check", "max rel err", "coords")?;
    let mut io_err = None;
    let reports = run_suite(opts, &mut |r| {
        let status = if r.passes(GRAD_TOL) { "ok" } else { "FAIL" };
        if let Err(e) = writeln!(
            out,
            "{:<28} {:>12.3e} {:>8}  {status}",
            r.op_name, r.max_rel_error, r.coordinates_checked
        ) {
            io_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = io_err {
        return Err(e.into());
    }
    let failed = reports.iter().filter(|r| !r.passes(GRAD_TOL)).count();
    writeln!(
        out,
        "{} checks, {failed} failed (tolerance {GRAD_TOL:e})",
        reports.len()
    )?;
    Ok(if failed == 0 { 0 } else { 1 })
}

fn shapes_cmd(a: &ShapesArgs, cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let enc = a.model.encoder(cfg)?;
    let k = a.classes.unwrap_or(cfg.decoder.num_classes);
    let shapes = skip_shapes(&enc, [a.input; 3])?;
    writeln!(out, "input    [1, 1, {0}, {0}, {0}]", a.input)?;
    for (i, s) in shapes.iter().enumerate() {
        writeln!(out, "skip {i}   {s:?}")?;
    }
    writeln!(out, "logits   [1, {k}, {0}, {0}, {0}]", a.input)?;
    for (i, level) in [1usize, 2].iter().enumerate() {
        writeln!(
            out,
            "aux {}    [1, {k}, {e}, {e}, {e}] upsampled to input",
            i + 1,
            e = a.input >> level
        )?;
    }
    debug_assert_eq!(shapes.len(), NUM_SKIPS);
    Ok(())
}

fn open_log(path: &Option<PathBuf>) -> Result<Option<std::io::BufWriter<std::fs::File>>> {
    Ok(match path {
        Some(p) => Some(std::io::BufWriter::new(std::fs::File::create(p)?)),
        None => None,
    })
}

fn read_image(path: &Path) -> Result<crate::tensor::Tensor> {
    let v = read_vvol(path)?;
    if v.header.channels != 1 {
        return Err(Error::shape(format!(
            "{}: expected a single-channel image, got {} channels",
            path.display(),
            v.header.channels
        )));
    }
    v.to_tensor()
}

fn pretrain_cmd(a: &PretrainArgs, cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let enc = a.model.encoder(cfg)?;
    let mut pcfg = cfg.pretrain.clone();
    if let Some(r) = a.mask_ratio {
        pcfg.mask_ratio = r;
    }
    if let Some(p) = a.patch_size {
        pcfg.patch_size = p;
    }
    if let Some(s) = a.seed {
        pcfg.seed = s;
    }
    if let Some(s) = a.steps {
        pcfg.steps = s;
    }
    if let Some(lr) = a.lr {
        pcfg.lr = lr;
    }
    let volumes = if a.input.is_empty() {
        synth_dataset(a.volumes, a.size, 3, pcfg.seed, SynthConfig::default())?
            .into_iter()
            .map(|s| s.image)
            .collect()
    } else {
        a.input.iter().map(|p| read_image(p)).collect::<Result<Vec<_>>>()?
    };
    let mut state = PretrainState::new(PretrainModel::new(&enc, pcfg.seed)?, pcfg.optimizer);
    let mut log = open_log(&a.log)?;
    let losses = pretrain(&mut state, &volumes, &pcfg, log.as_mut().map(|w| w as &mut dyn Write))?;
    if let Some(mut w) = log {
        w.flush()?;
    }
    let mut meta = CheckpointMeta::pretrain(&state.model, state.step as u64, pcfg.seed);
    meta.pretrain = Some(pcfg.clone());
    save_checkpoint(&a.out, &state.model.params, &meta)?;
    serde_json::to_writer(
        &mut *out,
        &serde_json::json!({
            "mask_ratio": pcfg.mask_ratio,
            "patch_size": pcfg.patch_size,
            "steps": losses.len(),
            "first_loss": losses.first(),
            "final_loss": losses.last(),
            "checkpoint": a.out,
        }),
    )?;
    writeln!(out)?;
    Ok(())
}

/// CSV `ratio,patch,final_loss,dice`; absent values are empty fields.
pub fn sweep_csv(cells: &[SweepCell]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(["ratio", "patch", "final_loss", "dice"])
        .map_err(csv_err)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for c in cells {
        w.write_record([c.ratio.to_string(), c.patch.to_string(), opt(c.final_loss), opt(c.dice)])
            .map_err(csv_err)?;
    }
    w.into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

fn sweep_cmd(a: &SweepArgs, cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let scfg = SweepConfig {
        encoder: if a.model.tiny || a.model.embed_dim.is_some() || a.model.window.is_some() {
            a.model.encoder(cfg)?
        } else {
            EncoderConfig::tiny()
        },
        vol_size: a.size,
        volumes: a.volumes,
        pretrain: crate::pretrain::PretrainConfig {
            steps: a.steps,
            warmup_steps: (a.steps / 10).max(1).min(a.steps),
            ..cfg.pretrain.clone()
        },
        finetune_epochs: a.finetune_epochs,
        finetune: cfg.train.clone(),
        num_classes: cfg.decoder.num_classes,
        seed: a.seed,
    };
    let cells = ablation_sweep(&a.ratios, &a.patches, &scfg)?;
    for c in cells.iter().filter(|c| c.skipped.is_some()) {
        eprintln!(
            "warning: skipped ratio {} patch {}: {}",
            c.ratio,
            c.patch,
            c.skipped.as_deref().unwrap_or_default()
        );
    }
    crate::io::atomic_write(&a.csv, &sweep_csv(&cells)?)?;
    crate::io::atomic_write(&a.json, &serde_json::to_vec_pretty(&cells)?)?;
    out.write_all(&sweep_csv(&cells)?)?;
    Ok(())
}

fn train_cmd(a: &TrainArgs, cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let enc = a.model.encoder(cfg)?;
    let mut dec = cfg.decoder.clone();
    if let Some(v) = a.variant {
        dec.variant = v;
    }
    if let Some(k) = a.classes {
        dec.num_classes = k;
    }
    let mut tcfg = cfg.train.clone();
    if let Some(e) = a.epochs {
        tcfg.epochs = e;
    }
    if let Some(lr) = a.lr {
        tcfg.lr = lr;
    }
    if let Some(s) = a.seed {
        tcfg.seed = s;
    }
    if a.target_dice.is_some() {
        tcfg.target_dice = a.target_dice;
    }
    if a.no_augment {
        tcfg.augment = crate::runtime::AugmentFlags::none();
    }
    let data = if a.image.is_empty() {
        synth_dataset(a.samples, a.size, dec.num_classes, tcfg.seed, SynthConfig::default())?
    } else {
        if a.image.len() != a.label.len() {
            return Err(Error::config(format!(
                "{} --image but {} --label arguments",
                a.image.len(),
                a.label.len()
            )));
        }
        a.image
            .iter()
            .zip(&a.label)
            .map(|(i, l)| {
                let img = read_vvol(i)?;
                let lab = read_vvol(l)?.to_labels()?;
                SegSample::new(img.to_tensor()?, lab, img.header.spacing)
            })
            .collect::<Result<Vec<_>>>()?
    };
    let model = SegModel::new(&enc, &dec, tcfg.seed)?;
    if let Some(p) = &a.from_checkpoint {
        let ck = load_checkpoint(p)?;
        let report = ck.apply(&model.params, LoadMode::Transfer)?;
        if !report.shape_mismatches.is_empty() {
            return Err(Error::Checkpoint(format!(
                "{} shape mismatches, first: {}",
                report.shape_mismatches.len(),
                report.shape_mismatches[0]
            )));
        }
        eprintln!(
            "loaded {}: {} matched, {} left initialized, {} ignored",
            p.display(),
            report.matched.len(),
            report.missing.len(),
            report.unexpected.len()
        );
    }
    let mut log = open_log(&a.log)?;
    let result = fit(
        &model,
        &data,
        &[],
        &tcfg,
        log.as_mut().map(|w| w as &mut dyn Write),
        Some(&a.out),
    )?;
    if let Some(mut w) = log {
        w.flush()?;
    }
    serde_json::to_writer(
        &mut *out,
        &serde_json::json!({
            "steps": result.records.len(),
            "final_loss": result.records.last().map(|r| r.loss),
            "best_val_dice": result.best_val_dice,
            "best_step": result.best_step,
            "reached_target_at": result.reached_target_at,
            "checkpoint": a.out,
        }),
    )?;
    writeln!(out)?;
    Ok(())
}

fn infer_cmd(a: &InferArgs, cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let ck = load_checkpoint(&a.checkpoint)?;
    if ck.meta.kind != CheckpointKind::Segmentation {
        return Err(Error::Checkpoint(format!(
            "{} is a {:?} checkpoint; inference needs a segmentation model",
            a.checkpoint.display(),
            ck.meta.kind
        )));
    }
    let dec = ck.meta.decoder.clone().unwrap_or_else(|| cfg.decoder.clone());
    let model = SegModel::with_params(crate::nn::Params::zeros(), &ck.meta.encoder, &dec)?;
    ck.apply(&model.params, LoadMode::Strict)?;
    let mut sw = cfg.sliding;
    if let Some(r) = a.roi {
        sw.roi = [r; 3];
    }
    if let Some(o) = a.overlap {
        sw.overlap = o;
    }
    if let Some(b) = a.blend {
        sw.blend = b;
    }
    let input = read_vvol(&a.input)?;
    let image = read_image(&a.input)?;
    let probs = sliding_window_infer(&|w| Ok(model.forward(w)?.logits), &image, &sw)?;
    let labels = Labels::argmax(&probs)?;
    write_vvol(&a.output, &Volume::from_labels(&labels, input.header.spacing))?;
    if let Some(p) = &a.probs {
        write_vvol(p, &Volume::from_tensor(&probs, input.header.spacing, DType::F64)?)?;
    }
    let counts: Vec<usize> = (0..dec.num_classes as u16).map(|c| labels.count(c)).collect();
    serde_json::to_writer(
        &mut *out,
        &serde_json::json!({"output": a.output, "class_voxels": counts}),
    )?;
    writeln!(out)?;
    Ok(())
}

fn eval_cmd(a: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let pred_vol = read_vvol(&a.pred)?;
    let pred = pred_vol.to_labels()?;
    let gt = read_vvol(&a.gt)?.to_labels()?;
    let k = a.classes.unwrap_or(pred.max_class().max(gt.max_class()) as usize + 1);
    let result = evaluate(&pred, &gt, k, pred_vol.header.spacing)?;
    let text = serde_json::to_vec_pretty(&result)?;
    if let Some(p) = &a.out {
        crate::io::atomic_write(p, &text)?;
    }
    out.write_all(&text)?;
    writeln!(out)?;
    Ok(())
}

fn mask_demo_cmd(a: &MaskDemoArgs, cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let ratio = a.mask_ratio.unwrap_or(cfg.pretrain.mask_ratio);
    let patch = a.patch_size.unwrap_or(cfg.pretrain.patch_size);
    let seed = a.seed.unwrap_or(cfg.pretrain.seed);
    let image = match &a.input {
        Some(p) => read_image(p)?,
        None => {
            synth_dataset(1, a.size, 3, seed, SynthConfig::default())?
                .remove(0)
                .image
        }
    };
    let dims = {
        let s = image.shape();
        [s[2], s[3], s[4]]
    };
    let mask = generate_mask(dims, patch, ratio, seed)?;
    let masked = apply_mask(&image, &mask, cfg.pretrain.fill)?;
    let model = match &a.checkpoint {
        Some(p) => {
            let ck = load_checkpoint(p)?;
            let m = PretrainModel::with_params(crate::nn::Params::zeros(), &ck.meta.encoder)?;
            ck.apply(&m.params, LoadMode::Strict)?;
            m
        }
        None => PretrainModel::new(&a.model.encoder(cfg)?, seed)?,
    };
    let recon = no_grad(|| model.recon_forward(&masked))?;
    let index = a.index.unwrap_or(dims.get(a.axis).copied().unwrap_or(0) / 2);
    std::fs::create_dir_all(&a.out_dir)?;
    let mut written = Vec::new();
    for (name, t) in [("original", &image), ("masked", &masked), ("reconstruction", &recon)] {
        let path = a.out_dir.join(format!("{name}.pgm"));
        dump_slice(&t.to_vec(), dims, a.axis, index, &path, SliceMode::Gray)?;
        written.push(path);
    }
    serde_json::to_writer(
        &mut *out,
        &serde_json::json!({
            "mask_ratio": ratio,
            "patch_size": patch,
            "masked_cubes": mask.masked_cubes.len(),
            "total_cubes": mask.total_cubes(),
            "axis": a.axis,
            "index": index,
            "images": written,
        }),
    )?;
    writeln!(out)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct ParamsRow {
    pub embed_dim: usize,
    pub variant: Variant,
    pub encoder: usize,
    pub decoder: usize,
    pub total: usize,
    pub reference_millions: f64,
    pub deviation: f64,
    pub within_tolerance: bool,
}

/// Parameter totals of both variants for `enc`, compared with the reference.
pub fn params_rows(enc: &EncoderConfig, dec: &DecoderConfig) -> Result<Vec<ParamsRow>> {
    [Variant::Cnn, Variant::Transformer]
        .into_iter()
        .map(|variant| {
            let n = parameter_breakdown(enc, &DecoderConfig { variant, ..dec.clone() })?;
            let reference = match variant {
                Variant::Cnn => REFERENCE_PARAMS_CNN,
                Variant::Transformer => REFERENCE_PARAMS_TRANSFORMER,
            };
            let deviation = n.total as f64 / 1e6 / reference - 1.0;
            Ok(ParamsRow {
                embed_dim: enc.embed_dim,
                variant,
                encoder: n.encoder,
                decoder: n.decoder,
                total: n.total,
                reference_millions: reference,
                deviation,
                within_tolerance: deviation.abs() <= PARAMS_TOLERANCE,
            })
        })
        .collect()
}

fn params_cmd(a: &ParamsArgs, cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let enc = a.model.encoder(cfg)?;
    let mut configs = vec![enc.clone()];
    if a.model.embed_dim.is_none() && !a.model.tiny && enc.embed_dim != 48 {
        configs.push(EncoderConfig {
            embed_dim: 48,
            ..enc.clone()
        });
    }
    writeln!(
        out,
        "{:<12} {:>4} {:>10} {:>10} {:>10} {:>10} {:>9}  within ±{:.0}%",
        "variant",
        "C",
        "encoder",
        "decoder",
        "total",
        "reference",
        "deviation",
        PARAMS_TOLERANCE * 100.0
    )?;
    for (i, e) in configs.iter().enumerate() {
        for r in params_rows(e, &cfg.decoder)? {
            writeln!(
                out,
                "{:<12} {:>4} {:>9.2}M {:>9.2}M {:>9.2}M {:>9.2}M {:>+8.1}%  {}{}",
                format!("{:?}", r.variant).to_lowercase(),
                r.embed_dim,
                r.encoder as f64 / 1e6,
                r.decoder as f64 / 1e6,
                r.total as f64 / 1e6,
                r.reference_millions,
                r.deviation * 100.0,
                if r.within_tolerance { "yes" } else { "no" },
                if i == 0 { "" } else { "  (comparison width)" }
            )?;
        }
    }
    writeln!(
        out,
        "diagnostic only: head counts and MLP ratio behind the reference totals are not published"
    )?;
    Ok(())
}
