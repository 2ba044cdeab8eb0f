//! Command-line front end. `run` parses arguments, executes one subcommand
//! and returns the process exit code.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 non-finite loss.
//!
//! The single `--seed` is handed to the library, which derives per-stage
//! seeds as `seed::derive(seed, stage, index)` (simulation, split, weight
//! init, shuffling, augmentation).

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::audio::{generate_cw, read_wav, write_wav, write_wav_stereo, CwConfig, StereoWaveform};
use crate::augment::{inject_noise, AugmentPolicy, NoiseInjectionParams};
use crate::dataset::{
    clip_images, load_corpus, FusionMode, ImageCache, Manifest, ManifestRow, PipelineConfig, Split,
    MANIFEST_FILE,
};
use crate::doppler::{synth_corpus, GestureClass, SimConfig};
use crate::dsp::{write_pgm, CropWindow, DspConfig, StftConfig, Window};
use crate::error::{Error, Result};
use crate::models::{
    evaluate_on_manifest, train_on_manifest, Experiment, FusionModel, DEFAULT_VAL_FRACTION,
};
use crate::nn::{Classifier, ConfusionMatrix, TrainConfig};
use crate::seed::{self, stage};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

/// File name of the image cache written by `preprocess`.
pub const CACHE_FILE: &str = "images.cache";

#[derive(Debug, Parser)]
#[command(
    name = "sonar-gesture",
    version,
    about = "Ultrasonic Doppler hand-gesture recognition"
)]
struct Cli {
    /// Master seed; every stage derives its own stream from it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a continuous-wave probe tone as a stereo WAV.
    GenTone(GenToneArgs),
    /// Synthesize a labeled two-microphone gesture corpus (synthetic motion
    /// profiles, not recorded data).
    Simulate(SimulateArgs),
    /// Write spectrogram images (PGM) and an image cache for a corpus.
    Preprocess(PreprocessArgs),
    /// Write a corpus with noise-injected copies of the training clips.
    Augment(AugmentArgs),
    /// Train a fusion model; writes a checkpoint and a history CSV.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split; writes metrics JSON.
    Eval(EvalArgs),
    /// Tabulate accuracies from metrics JSON files.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct GenToneArgs {
    #[arg(long, default_value_t = 20_000.0)]
    freq: f64,
    #[arg(long, default_value_t = 3.0)]
    dur: f64,
    #[arg(long, default_value_t = 44_100)]
    sr: u32,
    #[arg(long, default_value_t = 0.9)]
    amp: f64,
    #[arg(long, default_value = "tone.wav")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Training clips per class.
    #[arg(long, default_value_t = 100)]
    per_class: usize,
    /// Test clips per class [default: round(0.3 * per-class)].
    #[arg(long)]
    test_per_class: Option<usize>,
    #[arg(long, default_value = "corpus")]
    out: PathBuf,
    #[arg(long, default_value_t = SimConfig::default().hand_speed)]
    hand_speed: f64,
    #[arg(long, default_value_t = SimConfig::default().echo_ratio)]
    echo_ratio: f64,
    #[arg(long, default_value_t = SimConfig::default().noise_fraction)]
    noise_fraction: f64,
    #[arg(long, default_value_t = SimConfig::default().duration_s)]
    duration: f64,
}

#[derive(Debug, Clone, Copy, Args)]
struct DspArgs {
    #[arg(long, default_value_t = StftConfig::default().n_fft)]
    n_fft: usize,
    #[arg(long, default_value_t = StftConfig::default().hop)]
    hop: usize,
    /// Use a rectangular instead of a Hann window.
    #[arg(long)]
    rectangular: bool,
    #[arg(long, default_value_t = CropWindow::default().f_lo)]
    f_lo: f64,
    #[arg(long, default_value_t = CropWindow::default().f_hi)]
    f_hi: f64,
    #[arg(long, default_value_t = CropWindow::default().t_lo)]
    t_lo: f64,
    #[arg(long, default_value_t = CropWindow::default().t_hi)]
    t_hi: f64,
}

impl DspArgs {
    fn config(&self) -> DspConfig {
        DspConfig {
            stft: StftConfig {
                n_fft: self.n_fft,
                hop: self.hop,
                window: if self.rectangular {
                    Window::Rectangular
                } else {
                    Window::Hann
                },
            },
            crop: CropWindow {
                f_lo: self.f_lo,
                f_hi: self.f_hi,
                t_lo: self.t_lo,
                t_hi: self.t_hi,
            },
        }
    }
}

#[derive(Debug, Args)]
struct PreprocessArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    dsp: DspArgs,
}

#[derive(Debug, Args)]
struct AugmentArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Noise half-width relative to each clip's peak.
    #[arg(long, default_value_t = NoiseInjectionParams::default().alpha)]
    alpha: f64,
    /// Noisy copies per training clip.
    #[arg(long, default_value_t = 1)]
    copies: usize,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "early")]
    mode: FusionMode,
    #[arg(long, default_value_t = TrainConfig::default().epochs)]
    epochs: usize,
    #[arg(long, default_value_t = TrainConfig::default().learning_rate)]
    lr: f64,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    batch: usize,
    /// Share of each training class held out for validation.
    #[arg(long, default_value_t = DEFAULT_VAL_FRACTION)]
    val_fraction: f64,
    /// Gaussian-noise image copies per training clip.
    #[arg(long, default_value_t = AugmentPolicy::default().gaussian_copies)]
    gauss_copies: usize,
    #[arg(long, default_value_t = AugmentPolicy::default().gaussian_mean)]
    gauss_mean: f64,
    #[arg(long, default_value_t = AugmentPolicy::default().gaussian_variance)]
    gauss_var: f64,
    /// Width-shifted image copies per training clip.
    #[arg(long, default_value_t = AugmentPolicy::default().shift_copies)]
    shift_copies: usize,
    #[arg(long, default_value_t = AugmentPolicy::default().max_shift_fraction)]
    max_shift: f64,
    /// Image cache from `preprocess`; must match the DSP flags.
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long, default_value = "model.ckpt")]
    out: PathBuf,
    #[arg(long, default_value = "history.csv")]
    history: PathBuf,
    #[command(flatten)]
    dsp: DspArgs,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Refuse checkpoints of any other mode.
    #[arg(long)]
    mode: Option<FusionMode>,
    #[arg(long, default_value = "test")]
    split: SplitArg,
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long, default_value = "metrics.json")]
    out: PathBuf,
    #[command(flatten)]
    dsp: DspArgs,
}

#[derive(Debug, Clone, Copy)]
struct SplitArg(Split);

impl std::str::FromStr for SplitArg {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.parse().map(SplitArg)
    }
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Metrics JSON files written by `eval`.
    #[arg(required = true)]
    metrics: Vec<PathBuf>,
}

/// Metrics file written by `eval` and read by `report`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: FusionMode,
    pub split: Split,
    pub n: u64,
    pub accuracy: f64,
    pub classes: Vec<String>,
    /// Rows are true classes, columns predictions, in `classes` order.
    pub confusion: ConfusionMatrix,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
}

impl EvalReport {
    pub fn new(mode: FusionMode, split: Split, cm: ConfusionMatrix) -> Self {
        Self {
            mode,
            split,
            n: cm.total(),
            accuracy: cm.accuracy(),
            classes: GestureClass::ALL
                .iter()
                .map(|g| g.code().to_string())
                .collect(),
            precision: cm.precision().to_vec(),
            recall: cm.recall().to_vec(),
            confusion: cm,
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidArgument(_) => EXIT_USAGE,
        Error::NonFiniteLoss { .. } => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// exit code. Errors are reported on stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::GenTone(a) => gen_tone(a),
        Command::Simulate(a) => simulate(a, seed),
        Command::Preprocess(a) => preprocess(a),
        Command::Augment(a) => augment(a, seed),
        Command::Train(a) => train_cmd(a, seed),
        Command::Eval(a) => eval_cmd(a),
        Command::Report(a) => report(a),
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

fn gen_tone(a: GenToneArgs) -> Result<()> {
    let w = generate_cw(&CwConfig {
        frequency_hz: a.freq,
        sample_rate_hz: a.sr,
        duration_s: a.dur,
        amplitude: a.amp,
    })?;
    create_parent(&a.out)?;
    write_wav(&a.out, &[&w, &w])?;
    println!(
        "wrote {} ({} samples per channel)",
        a.out.display(),
        w.len()
    );
    Ok(())
}

fn simulate(a: SimulateArgs, seed: u64) -> Result<()> {
    let cfg = SimConfig {
        hand_speed: a.hand_speed,
        echo_ratio: a.echo_ratio,
        noise_fraction: a.noise_fraction,
        duration_s: a.duration,
        ..SimConfig::default()
    };
    let test = a
        .test_per_class
        .unwrap_or_else(|| (a.per_class as f64 * 0.3).round() as usize);
    create_dir(&a.out)?;
    let m = synth_corpus(a.per_class, test, &cfg, seed, &a.out)?;
    println!(
        "wrote {} clips to {} ({} train, {} test)",
        m.len(),
        a.out.display(),
        m.split(Split::Train).count(),
        m.split(Split::Test).count()
    );
    Ok(())
}

fn preprocess(a: PreprocessArgs) -> Result<()> {
    let manifest = load_corpus(&a.data)?;
    let pipeline = PipelineConfig {
        dsp: a.dsp.config(),
        raw_noise: None,
    };
    let mut cache = ImageCache::new(pipeline.dsp);
    for row in manifest.rows() {
        let path = a.data.join(&row.path);
        let images = clip_images(&read_wav(&path)?, &pipeline).map_err(|e| match e {
            Error::ClipTooShort(m) => Error::ClipTooShort(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let stem = row.path.with_extension("");
        let dir = a.out.join(stem.parent().unwrap_or(Path::new("")));
        create_dir(&dir)?;
        let name = stem
            .file_name()
            .unwrap_or_default()
            .to_string_lossy()
            .into_owned();
        for (suffix, img) in [
            ("top", &images.top),
            ("bottom", &images.bottom),
            ("mix", &images.mix),
        ] {
            write_pgm(dir.join(format!("{name}_{suffix}.pgm")), img)?;
        }
        cache.insert(&row.path, images);
    }
    let cache_path = a.out.join(CACHE_FILE);
    cache.write(&cache_path)?;
    println!(
        "wrote {} x 3 images and {}",
        cache.len(),
        cache_path.display()
    );
    Ok(())
}

fn augment(a: AugmentArgs, seed: u64) -> Result<()> {
    let manifest = load_corpus(&a.data)?;
    create_dir(&a.out)?;
    let mut rows = Vec::new();
    for (i, row) in manifest.rows().iter().enumerate() {
        let src = a.data.join(&row.path);
        let clip = read_wav(&src)?;
        let dst = a.out.join(&row.path);
        create_parent(&dst)?;
        write_wav_stereo(&dst, &clip)?;
        rows.push(row.clone());
        if row.split != Split::Train {
            continue;
        }
        for k in 0..a.copies {
            let s = seed::derive(seed, stage::NOISE, ((i as u64) << 16) | k as u64);
            let noisy = StereoWaveform::new(
                inject_noise(
                    clip.top(),
                    &NoiseInjectionParams {
                        alpha: a.alpha,
                        seed: seed::derive(s, 0, 0),
                    },
                )?,
                inject_noise(
                    clip.bottom(),
                    &NoiseInjectionParams {
                        alpha: a.alpha,
                        seed: seed::derive(s, 0, 1),
                    },
                )?,
            )?;
            let stem = row.path.file_stem().unwrap_or_default().to_string_lossy();
            let rel = row.path.with_file_name(format!("{stem}_noise{k}.wav"));
            write_wav_stereo(a.out.join(&rel), &noisy)?;
            rows.push(ManifestRow {
                path: rel,
                seed: Some(s),
                ..row.clone()
            });
        }
    }
    let m = Manifest::new(rows)?;
    m.write_csv(a.out.join(MANIFEST_FILE))?;
    println!("wrote {} clips to {}", m.len(), a.out.display());
    Ok(())
}

fn open_cache(path: &Option<PathBuf>, dsp: &DspConfig) -> Result<Option<ImageCache>> {
    path.as_ref().map(|p| ImageCache::read(p, dsp)).transpose()
}

fn train_cmd(a: TrainArgs, seed: u64) -> Result<()> {
    let manifest = load_corpus(&a.data)?;
    let dsp = a.dsp.config();
    let cache = open_cache(&a.cache, &dsp)?;
    let exp = Experiment {
        mode: a.mode,
        train: TrainConfig {
            learning_rate: a.lr,
            epochs: a.epochs,
            batch_size: a.batch,
            seed,
            augment: AugmentPolicy {
                gaussian_copies: a.gauss_copies,
                gaussian_mean: a.gauss_mean,
                gaussian_variance: a.gauss_var,
                shift_copies: a.shift_copies,
                max_shift_fraction: a.max_shift,
            },
        },
        pipeline: PipelineConfig {
            dsp,
            raw_noise: None,
        },
        val_fraction: a.val_fraction,
    };
    let (model, history) = train_on_manifest(&a.data, &manifest, &exp, cache.as_ref())?;
    create_parent(&a.out)?;
    model.save(&a.out)?;
    create_parent(&a.history)?;
    history.write_csv(&a.history)?;
    let last = history.epochs.last().expect("at least one epoch");
    println!(
        "trained {} model ({} parameters): final train loss {:.4}, train accuracy {:.3}; wrote {} and {}",
        a.mode,
        model.param_count(),
        last.train_loss,
        last.train_acc,
        a.out.display(),
        a.history.display()
    );
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let model = match a.mode {
        Some(m) => FusionModel::load_for_mode(&a.model, m)?,
        None => FusionModel::load(&a.model)?,
    };
    let manifest = load_corpus(&a.data)?;
    let dsp = a.dsp.config();
    let cache = open_cache(&a.cache, &dsp)?;
    let pipeline = PipelineConfig {
        dsp,
        raw_noise: None,
    };
    let (_, cm) = evaluate_on_manifest(
        &model,
        &a.data,
        &manifest,
        a.split.0,
        &pipeline,
        cache.as_ref(),
    )?;
    let report = EvalReport::new(model.mode(), a.split.0, cm);
    create_parent(&a.out)?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    fs::write(&a.out, json + "\n").map_err(|e| Error::io(&a.out, e))?;
    println!(
        "{} model on {} split: accuracy {:.2}% over {} clips\n{}",
        report.mode,
        report.split.as_str(),
        100.0 * report.accuracy,
        report.n,
        report.confusion
    );
    Ok(())
}

/// Accuracy table over metrics files, one row per file in argument order.
pub fn render_report(reports: &[(String, EvalReport)]) -> String {
    let label = |r: &EvalReport| match r.mode {
        FusionMode::Single => "Single-input CNN".to_string(),
        FusionMode::Early => "Early Fusion CNN".to_string(),
        FusionMode::Late => "Late Fusion CNN".to_string(),
    };
    let width = reports
        .iter()
        .map(|(_, r)| label(r).len())
        .max()
        .unwrap_or(0)
        .max("Model".len());
    let mut out = format!(
        "{:<width$} | {:>12} | {:>5} | source\n",
        "Model", "Accuracy (%)", "n"
    );
    out.push_str(&format!(
        "{}-+-{}-+-{}-+-------\n",
        "-".repeat(width),
        "-".repeat(12),
        "-".repeat(5)
    ));
    for (src, r) in reports {
        out.push_str(&format!(
            "{:<width$} | {:>12.2} | {:>5} | {src}\n",
            label(r),
            100.0 * r.accuracy,
            r.n
        ));
    }
    out
}

fn report(a: ReportArgs) -> Result<()> {
    let mut reports = Vec::new();
    for p in &a.metrics {
        let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        let r: EvalReport = serde_json::from_str(&text)
            .map_err(|e| Error::Data(format!("{}: not a metrics file: {e}", p.display())))?;
        reports.push((p.display().to_string(), r));
    }
    print!("{}", render_report(&reports));
    Ok(())
}
