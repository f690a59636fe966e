use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{Args, ValueEnum};
use listenhead::audiofeat::{provider_from_spec, read_wav, tokenize, AudioClip};
use listenhead::coeffspace::{load_coefficient_sequence, save_coefficient_sequence, CoefficientFrame, CoefficientSequence};
use listenhead::metrics::{aggregate_reports, evaluate_pair, load_pairs, CpbdConfig, EvalOptions};
use listenhead::synthdata::{generate_dataset, load_split, write_dataset, DyadConfig, Split};
use listenhead::trainer::{
    format_epoch_log, gradient_check, init_checkpoint, load_checkpoint, prepare_dyads, run_epochs, save_checkpoint,
    GradCheckOptions, InferenceModel, TrainConfig,
};
use listenhead::Real;

use crate::Failure;

type CmdResult = Result<(), Failure>;

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output directory; receives one directory per dyad and manifest.txt.
    #[arg(long)]
    out: PathBuf,
    /// Number of dyads.
    #[arg(long, default_value_t = 200)]
    n: usize,
    /// Seed of the first dyad; dyad i uses seed + i.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Clip length in seconds.
    #[arg(long, default_value_t = 64.0 / 30.0)]
    duration: f64,
    #[arg(long, default_value_t = 30.0)]
    fps: f64,
    #[arg(long, default_value_t = 16000)]
    sample_rate: u32,
    /// How strongly listener pitch follows smoothed speech energy, in [0, 1].
    #[arg(long, default_value_t = 0.9)]
    coupling_nod: f64,
    /// How strongly listener expression mirrors the speaker's, in [0, 1].
    #[arg(long, default_value_t = 0.9)]
    coupling_expr: f64,
    /// Listener reaction lag in frames.
    #[arg(long, default_value_t = 3)]
    lag: usize,
    /// Standard deviation of the noise on coupled listener channels.
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    /// Train, validation and test fractions.
    #[arg(long, default_value = "0.8,0.1,0.1")]
    split: String,
}

fn parse_split(s: &str) -> anyhow::Result<(f64, f64, f64)> {
    let parts = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| anyhow!("bad split fraction `{p}`")))
        .collect::<anyhow::Result<Vec<f64>>>()?;
    match parts[..] {
        [a, b, c] => Ok((a, b, c)),
        _ => bail!("--split needs three comma-separated fractions, got `{s}`"),
    }
}

pub fn synth(a: SynthArgs) -> CmdResult {
    let base = DyadConfig {
        seed: a.seed,
        duration_s: a.duration,
        fps: a.fps,
        sample_rate: a.sample_rate,
        coupling_nod: a.coupling_nod,
        coupling_expr: a.coupling_expr,
        lag_frames: a.lag,
        noise_sigma: a.noise,
    };
    let splits = generate_dataset::<f64>(&base, a.n, parse_split(&a.split)?)?;
    let entries = write_dataset(&splits, &a.out)?;
    println!(
        "wrote {} dyads ({} train, {} val, {} test) to {}",
        entries.len(),
        splits.train.len(),
        splits.val.len(),
        splits.test.len(),
        a.out.display()
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// `key = value` training config; defaults apply to missing keys.
    #[arg(long, conflicts_with = "resume")]
    config: Option<PathBuf>,
    /// Dataset manifest written by `synth`.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    /// Epoch log CSV [default: <out>.log.csv].
    #[arg(long)]
    log: Option<PathBuf>,
    /// Continue from this checkpoint (its config is used).
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Override the total number of epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Override the seed (fresh runs only).
    #[arg(long, conflicts_with = "resume")]
    seed: Option<u64>,
    /// Do not print per-epoch progress.
    #[arg(long)]
    quiet: bool,
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn train(a: TrainArgs) -> CmdResult {
    let train_set: Vec<_> = load_split::<f64>(&a.data, Split::Train)?.into_iter().map(|(_, s)| s).collect();
    let val_set: Vec<_> = load_split::<f64>(&a.data, Split::Val)?.into_iter().map(|(_, s)| s).collect();
    if train_set.is_empty() || val_set.is_empty() {
        return Err(anyhow!("{} needs both train and val samples", a.data.display()).into());
    }
    let mut ckpt = match &a.resume {
        Some(path) => load_checkpoint(path)?,
        None => {
            let mut cfg = match &a.config {
                Some(path) => TrainConfig::load(path)?,
                None => TrainConfig::default(),
            };
            if let Some(seed) = a.seed {
                cfg.seed = seed;
            }
            init_checkpoint(&cfg, &train_set)?
        }
    };
    if let Some(e) = a.epochs {
        ckpt.config.epochs = e;
    }
    let cfg = ckpt.config.clone();
    let tr = prepare_dyads(&train_set, &ckpt.norm, &cfg)?;
    let va = prepare_dyads(&val_set, &ckpt.norm, &cfg)?;
    let quiet = a.quiet;
    run_epochs(&mut ckpt, &tr, &va, cfg.epochs, &mut |e| {
        if !quiet {
            eprintln!(
                "epoch {:>4}  train reg {:.5} con {:.5}  val reg {:.5} con {:.5}",
                e.epoch, e.train_reg, e.train_con, e.val_reg, e.val_con
            );
        }
    })?;
    save_checkpoint(&ckpt, &a.out)?;
    let log = a.log.unwrap_or_else(|| with_suffix(&a.out, ".log.csv"));
    fs::write(&log, format_epoch_log(&ckpt.log)).with_context(|| format!("writing {}", log.display()))?;
    println!("saved {} after {} epochs; log in {}", a.out.display(), ckpt.epoch, log.display());
    Ok(())
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Precision {
    F32,
    F64,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    ckpt: PathBuf,
    /// Speaker audio (mono WAV, 16-bit PCM or 32-bit float).
    #[arg(long, requires_all = ["speaker", "out"], conflicts_with = "data")]
    audio: Option<PathBuf>,
    /// Speaker coefficient CSV.
    #[arg(long)]
    speaker: Option<PathBuf>,
    /// Transcript text file, whitespace-tokenized.
    #[arg(long)]
    transcript: Option<PathBuf>,
    /// Text embedding provider: `stub` or `file:<csv>` with one row per frame.
    #[arg(long, default_value = "stub")]
    text_provider: String,
    /// CSV whose first frame is the listener's initial state, needed by models
    /// trained with init conditioning or residual output.
    #[arg(long)]
    listener_init: Option<PathBuf>,
    /// Output coefficient CSV (single-clip mode).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dataset manifest (batch mode); ground-truth first frames serve as the
    /// listener's initial state.
    #[arg(long, requires = "out_dir")]
    data: Option<PathBuf>,
    /// Split to predict in batch mode.
    #[arg(long, default_value = "test", value_parser = ["train", "val", "test"])]
    split: String,
    /// Batch-mode output directory; receives `<dyad>.csv` per sample.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Arithmetic precision of the forward pass.
    #[arg(long, value_enum, default_value_t = Precision::F64)]
    precision: Precision,
}

pub fn infer(a: InferArgs) -> CmdResult {
    match a.precision {
        Precision::F64 => infer_as::<f64>(&a),
        Precision::F32 => infer_as::<f32>(&a),
    }
}

fn first_frame<S: Real>(seq: &CoefficientSequence<S>) -> CoefficientFrame<S> {
    seq.frames()[0].clone()
}

fn infer_as<S: Real>(a: &InferArgs) -> CmdResult {
    let ckpt = load_checkpoint(&a.ckpt)?;
    let model = InferenceModel::<S>::from_checkpoint(&ckpt);
    if let (Some(data), Some(out_dir)) = (&a.data, &a.out_dir) {
        if a.text_provider != "stub" {
            return Err(anyhow!("batch mode uses the stub text provider").into());
        }
        let split: Split = a.split.parse()?;
        fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
        let samples = load_split::<S>(data, split)?;
        for (dir, s) in &samples {
            let init = first_frame(&s.listener_coeffs);
            let pred = model.infer(&s.speaker_audio, &s.speaker_coeffs, &s.transcript_tokens, Some(&init))?;
            let name = dir.file_name().and_then(|n| n.to_str()).ok_or_else(|| anyhow!("bad sample dir {}", dir.display()))?;
            save_coefficient_sequence(&pred, out_dir.join(format!("{name}.csv")))?;
        }
        println!("wrote {} predictions to {}", samples.len(), out_dir.display());
        return Ok(());
    }
    let (Some(audio), Some(speaker), Some(out)) = (&a.audio, &a.speaker, &a.out) else {
        return Err(anyhow!("give either --audio, --speaker and --out, or --data and --out-dir").into());
    };
    let clip: AudioClip<S> = read_wav(audio)?;
    let speaker: CoefficientSequence<S> = load_coefficient_sequence(speaker)?;
    let tokens = match &a.transcript {
        Some(p) => tokenize(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?),
        None => Vec::new(),
    };
    let init = a
        .listener_init
        .as_ref()
        .map(|p| load_coefficient_sequence::<S>(p).map(|s| first_frame(&s)))
        .transpose()?;
    let embedder = provider_from_spec::<S>(&a.text_provider, ckpt.config.d_text)?;
    let pred = model.infer_with(embedder.as_ref(), &clip, &speaker, &tokens, init.as_ref())?;
    save_coefficient_sequence(&pred, out)?;
    println!("wrote {} frames to {}", pred.len(), out.display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Prediction directory: `<name>.csv` coefficient files, optional
    /// `<name>/` with PNG/PGM frames, features.csv and identity.csv.
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth directory in the same layout; `<name>/listener.csv` is
    /// also accepted for coefficients.
    #[arg(long)]
    gt: PathBuf,
    /// Write `<name>.txt` per pair and aggregate.txt here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Report Fréchet distances unsquared.
    #[arg(long)]
    unsquared_fd: bool,
    /// CPBD blur-probability exponent.
    #[arg(long, default_value_t = 3.6)]
    cpbd_beta: f64,
    /// CPBD just-noticeable blur probability.
    #[arg(long, default_value_t = 0.63)]
    cpbd_p_jnb: f64,
}

pub fn eval(a: EvalArgs) -> CmdResult {
    let opts = EvalOptions {
        unsquared_fd: a.unsquared_fd,
        cpbd: CpbdConfig {
            beta: a.cpbd_beta,
            p_jnb: a.cpbd_p_jnb,
            ..CpbdConfig::default()
        },
    };
    let pairs = load_pairs(&a.pred, &a.gt)?;
    let mut reports = Vec::with_capacity(pairs.len());
    for (name, pair) in &pairs {
        let r = evaluate_pair(pair, &opts).with_context(|| format!("evaluating `{name}`"))?;
        reports.push((name, r));
    }
    let aggregate = aggregate_reports(&reports.iter().map(|(_, r)| r.clone()).collect::<Vec<_>>());
    if let Some(out) = &a.out {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        for (name, r) in &reports {
            let p = out.join(format!("{name}.txt"));
            fs::write(&p, r.to_string()).with_context(|| format!("writing {}", p.display()))?;
        }
        let p = out.join("aggregate.txt");
        fs::write(&p, aggregate.to_string()).with_context(|| format!("writing {}", p.display()))?;
    }
    print!("{aggregate}");
    Ok(())
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Training config to check; must have hidden ≤ 8. A tiny built-in model
    /// is used otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    /// Seed for the model, the synthetic samples and the negatives.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of synthetic dyads in the batch.
    #[arg(long, default_value_t = 2)]
    samples: usize,
    /// Frames per dyad (at most 8 are used).
    #[arg(long, default_value_t = 8)]
    frames: usize,
    /// Start from all-zero parameters.
    #[arg(long)]
    zero_init: bool,
    /// Negate the analytic gradient of this parameter block (fault injection).
    #[arg(long)]
    corrupt: Option<String>,
}

/// A model small enough for exhaustive finite differences.
pub fn tiny_config() -> TrainConfig {
    TrainConfig {
        batch_size: 2,
        t_train: 8,
        n_mfcc: 8,
        d_text: 6,
        enc_width: 5,
        d_proj: 4,
        d_fused: 6,
        d_xm: 6,
        hidden: 4,
        layers: 2,
        se_ratio: 2,
        k_negatives: 5,
        ..TrainConfig::default()
    }
}

pub fn gradcheck(a: GradcheckArgs) -> CmdResult {
    let cfg = match &a.config {
        Some(p) => TrainConfig::load(p)?,
        None => tiny_config(),
    };
    if a.samples == 0 || a.frames == 0 {
        return Err(anyhow!("--samples and --frames must be positive").into());
    }
    let base = DyadConfig {
        seed: a.seed,
        duration_s: a.frames as f64 / 30.0,
        ..DyadConfig::default()
    };
    let samples = (0..a.samples as u64)
        .map(|i| listenhead::synthdata::generate_dyad(&DyadConfig { seed: a.seed + i, ..base.clone() }))
        .collect::<listenhead::Result<Vec<_>>>()?;
    let opts = GradCheckOptions {
        zero_init: a.zero_init,
        seed: a.seed,
        corrupt_block: a.corrupt.clone(),
    };
    let report = gradient_check(&cfg, &samples, a.tolerance, &opts)?;
    println!("{report}");
    if report.passed() {
        Ok(())
    } else {
        let names: Vec<&str> = report.failing().iter().map(|b| b.name.as_str()).collect();
        Err(Failure::Check(format!("gradient mismatch in {}", names.join(", "))))
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum PlotPart {
    Pose,
    Expression,
}

#[derive(Args, Debug)]
pub struct PlotArgs {
    /// Predicted coefficient CSV (drawn in red).
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth coefficient CSV (drawn in black).
    #[arg(long)]
    gt: PathBuf,
    /// Output PNG.
    #[arg(long)]
    out: PathBuf,
    /// Which coefficients to draw.
    #[arg(long, value_enum, default_value_t = PlotPart::Pose)]
    part: PlotPart,
    /// Comma-separated channel indices within the part [default: all pose
    /// channels, or expression channels 0-3].
    #[arg(long, value_delimiter = ',')]
    channels: Option<Vec<usize>>,
    #[arg(long, default_value_t = 1200)]
    width: u32,
    /// Height of each channel panel.
    #[arg(long, default_value_t = 160)]
    panel_height: u32,
}

pub fn plot(a: PlotArgs) -> CmdResult {
    let pred = load_coefficient_sequence::<f64>(&a.pred)?;
    let gt = load_coefficient_sequence::<f64>(&a.gt)?;
    let (pm, gm, width) = match a.part {
        PlotPart::Pose => (pred.pose_matrix(), gt.pose_matrix(), listenhead::coeffspace::POSE_DIM),
        PlotPart::Expression => (pred.beta_matrix(), gt.beta_matrix(), listenhead::coeffspace::BETA_DIM),
    };
    let channels = a.channels.clone().unwrap_or_else(|| match a.part {
        PlotPart::Pose => (0..width).collect(),
        PlotPart::Expression => (0..4).collect(),
    });
    if channels.is_empty() {
        return Err(anyhow!("no channels selected").into());
    }
    if let Some(&c) = channels.iter().find(|&&c| c >= width) {
        return Err(anyhow!("channel {c} is out of range for {width} coefficients").into());
    }
    if a.width < 64 || a.panel_height < 32 {
        return Err(anyhow!("image is too small").into());
    }
    let series: Vec<(Vec<f64>, Vec<f64>)> = channels
        .iter()
        .map(|&c| (pm.column(c).to_vec(), gm.column(c).to_vec()))
        .collect();
    crate::plot::draw_panels(&a.out, a.width, a.panel_height, &series)?;
    println!("wrote {}", a.out.display());
    Ok(())
}
