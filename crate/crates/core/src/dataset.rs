//! Corpus manifests, ingestion, stratified splits and assembly of the
//! per-mode network inputs.
//!
//! On-disk layout: `<root>/<split>/<gesture code>/<clip>.wav`, with an
//! optional `<root>/manifest.csv` whose paths are relative to `<root>`.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::audio::{mixdown, read_wav, StereoWaveform};
use crate::augment::{
    add_gaussian_noise, draw_shift, inject_noise, shift_columns, AugmentPolicy,
    GaussianNoiseParams, NoiseInjectionParams,
};
use crate::doppler::GestureClass;
use crate::dsp::{waveform_to_image, DspConfig, SpectrogramImage, IMAGE_SIZE};
use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::seed::{self, stage};

pub const MANIFEST_FILE: &str = "manifest.csv";
const MANIFEST_HEADER: [&str; 5] = ["path", "gesture", "subject", "split", "seed"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Data(format!("unknown split '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    /// Relative to the corpus root.
    pub path: PathBuf,
    pub gesture: GestureClass,
    pub subject: Option<String>,
    pub split: Split,
    pub seed: Option<u64>,
}

/// Labeled clip list, unique by path and kept sorted by path.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest {
    rows: Vec<ManifestRow>,
}

fn path_key(p: &Path) -> String {
    p.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

impl Manifest {
    pub fn new(mut rows: Vec<ManifestRow>) -> Result<Self> {
        rows.sort_by_key(|r| path_key(&r.path));
        let mut seen = HashSet::new();
        for r in &rows {
            if !seen.insert(path_key(&r.path)) {
                return Err(Error::Data(format!(
                    "duplicate manifest path {}",
                    r.path.display()
                )));
            }
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[ManifestRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRow> {
        self.rows.iter().filter(move |r| r.split == split)
    }

    /// Row counts per (split, class).
    pub fn counts(&self) -> BTreeMap<(Split, GestureClass), usize> {
        let mut m = BTreeMap::new();
        for r in &self.rows {
            *m.entry((r.split, r.gesture)).or_insert(0) += 1;
        }
        m
    }

    pub fn class_histogram(&self, split: Split) -> [usize; GestureClass::COUNT] {
        let mut h = [0; GestureClass::COUNT];
        for r in self.split(split) {
            h[r.gesture.index()] += 1;
        }
        h
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| Error::Data(format!("manifest CSV: {e}"));
        w.write_record(MANIFEST_HEADER).map_err(err)?;
        for r in &self.rows {
            w.write_record([
                path_key(&r.path),
                r.gesture.code().to_string(),
                r.subject.clone().unwrap_or_default(),
                r.split.as_str().to_string(),
                r.seed.map(|s| s.to_string()).unwrap_or_default(),
            ])
            .map_err(err)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::Data(format!("manifest CSV: {e}")))?;
        Ok(String::from_utf8(bytes).expect("CSV writer emits UTF-8"))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let err = |e: csv::Error| Error::Data(format!("manifest CSV: {e}"));
        let header = r.headers().map_err(err)?.clone();
        if header.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
            return Err(Error::Data(format!(
                "manifest header must be `{}`",
                MANIFEST_HEADER.join(",")
            )));
        }
        let mut rows = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(err)?;
            let at = |m: String| Error::Data(format!("manifest row {}: {m}", line + 1));
            let gesture = GestureClass::from_code(&rec[1])
                .ok_or_else(|| at(format!("unknown gesture code '{}'", &rec[1])))?;
            let seed = match &rec[4] {
                "" => None,
                s => Some(s.parse().map_err(|_| at(format!("bad seed '{s}'")))?),
            };
            rows.push(ManifestRow {
                path: PathBuf::from(&rec[0]),
                gesture,
                subject: (!rec[2].is_empty()).then(|| rec[2].to_string()),
                split: rec[3].parse().map_err(|e: Error| at(e.to_string()))?,
                seed,
            });
        }
        Self::new(rows)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = self.to_csv()?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text)
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<fs::DirEntry>> {
    let mut entries: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(dir, e))?;
    entries.sort_by_key(|e| e.file_name());
    Ok(entries)
}

fn check_wav_signature(path: &Path) -> Result<()> {
    let mut head = [0u8; 12];
    let mut f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    f.read_exact(&mut head).map_err(|e| Error::io(path, e))?;
    if &head[0..4] != b"RIFF" || &head[8..12] != b"WAVE" {
        return Err(Error::Wav {
            path: path.to_path_buf(),
            source: crate::error::WavError::MalformedHeader("missing RIFF/WAVE signature".into()),
        });
    }
    Ok(())
}

/// Scans `<dir>/<split>/<code>/*.wav`. Unknown split or class directory
/// names are errors; other files are skipped with a log line.
pub fn ingest(dir: &Path) -> Result<Manifest> {
    let mut rows = Vec::new();
    for split_entry in sorted_entries(dir)? {
        let split_path = split_entry.path();
        if !split_path.is_dir() {
            continue;
        }
        let name = split_entry.file_name().to_string_lossy().into_owned();
        let split: Split = name.parse().map_err(|_| {
            Error::Data(format!(
                "{}: unknown split directory (expected train/val/test)",
                split_path.display()
            ))
        })?;
        let mut present = HashSet::new();
        for class_entry in sorted_entries(&split_path)? {
            let class_path = class_entry.path();
            if !class_path.is_dir() {
                log::info!("ignoring stray file {}", class_path.display());
                continue;
            }
            let code = class_entry.file_name().to_string_lossy().into_owned();
            let gesture = GestureClass::from_code(&code).ok_or_else(|| {
                Error::Data(format!(
                    "{}: unknown gesture directory (expected one of LR, RL, P, B, UD, DU)",
                    class_path.display()
                ))
            })?;
            let mut n = 0;
            for clip in sorted_entries(&class_path)? {
                let p = clip.path();
                let is_wav = p
                    .extension()
                    .map(|e| e.eq_ignore_ascii_case("wav"))
                    .unwrap_or(false);
                if !p.is_file() || !is_wav {
                    log::info!("ignoring non-WAV entry {}", p.display());
                    continue;
                }
                check_wav_signature(&p)?;
                rows.push(ManifestRow {
                    path: PathBuf::from(split.as_str())
                        .join(&code)
                        .join(clip.file_name()),
                    gesture,
                    subject: None,
                    split,
                    seed: None,
                });
                n += 1;
            }
            if n == 0 {
                log::warn!("class {code} in split {name} has no clips");
            } else {
                present.insert(gesture);
            }
        }
        for g in GestureClass::ALL {
            if !present.contains(&g) {
                log::warn!("class {} is empty in split {name}", g.code());
            }
        }
    }
    let manifest = Manifest::new(rows)?;
    for ((split, g), n) in manifest.counts() {
        log::info!("{} {}: {n} clips", split.as_str(), g.code());
    }
    Ok(manifest)
}

/// `manifest.csv` when the corpus has one, otherwise a directory scan.
pub fn load_corpus(dir: &Path) -> Result<Manifest> {
    let m = dir.join(MANIFEST_FILE);
    if m.is_file() {
        Manifest::read_csv(m)
    } else {
        ingest(dir)
    }
}

/// Moves `round(n_c * val_fraction)` training rows of every class `c` to the
/// validation split, chosen by a per-class shuffle seeded from `seed`.
pub fn stratified_split(m: &Manifest, val_fraction: f64, seed: u64) -> Result<Manifest> {
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::invalid(format!(
            "validation fraction must be in [0, 1), got {val_fraction}"
        )));
    }
    let mut rows = m.rows.clone();
    for g in GestureClass::ALL {
        let mut idx: Vec<usize> = rows
            .iter()
            .enumerate()
            .filter(|(_, r)| r.split == Split::Train && r.gesture == g)
            .map(|(i, _)| i)
            .collect();
        let n_val = (idx.len() as f64 * val_fraction).round() as usize;
        idx.shuffle(&mut seed::rng(seed::derive(
            seed,
            stage::SPLIT,
            g.index() as u64,
        )));
        for &i in &idx[..n_val] {
            rows[i].split = Split::Val;
        }
    }
    Manifest::new(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    /// Mixdown spectrogram only.
    Single,
    /// `[top, bottom, mixdown]` stacked as three input channels.
    Early,
    /// Top and bottom through separate trunks.
    Late,
}

impl FusionMode {
    pub const ALL: [FusionMode; 3] = [FusionMode::Single, FusionMode::Early, FusionMode::Late];

    pub fn as_str(self) -> &'static str {
        match self {
            FusionMode::Single => "single",
            FusionMode::Early => "early",
            FusionMode::Late => "late",
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            FusionMode::Single => 0,
            FusionMode::Early => 1,
            FusionMode::Late => 2,
        }
    }

    pub fn from_tag(t: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.tag() == t)
    }
}

impl std::fmt::Display for FusionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown fusion mode '{s}'")))
    }
}

/// Network input for one clip.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelInput {
    /// `[1, 100, 100]` mixdown.
    Single(Tensor),
    /// `[3, 100, 100]` channels `[top, bottom, mixdown]`.
    Early(Tensor),
    /// `([1, 100, 100] top, [1, 100, 100] bottom)`.
    Late(Tensor, Tensor),
}

impl ModelInput {
    pub fn mode(&self) -> FusionMode {
        match self {
            ModelInput::Single(_) => FusionMode::Single,
            ModelInput::Early(_) => FusionMode::Early,
            ModelInput::Late(..) => FusionMode::Late,
        }
    }

    /// Inputs in trunk order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        match self {
            ModelInput::Single(t) | ModelInput::Early(t) => vec![t],
            ModelInput::Late(a, b) => vec![a, b],
        }
    }
}

fn plane(img: &SpectrogramImage) -> Tensor {
    Tensor::from_parts(vec![1, IMAGE_SIZE, IMAGE_SIZE], img.pixels().to_vec())
}

/// The three per-clip images every mode draws from.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipImages {
    pub top: SpectrogramImage,
    pub bottom: SpectrogramImage,
    pub mix: SpectrogramImage,
}

impl ClipImages {
    pub fn pack(&self, mode: FusionMode) -> ModelInput {
        match mode {
            FusionMode::Single => ModelInput::Single(plane(&self.mix)),
            FusionMode::Early => ModelInput::Early(
                Tensor::stack_channels(&[
                    &plane(&self.top),
                    &plane(&self.bottom),
                    &plane(&self.mix),
                ])
                .expect("equal planes"),
            ),
            FusionMode::Late => ModelInput::Late(plane(&self.top), plane(&self.bottom)),
        }
    }

    pub fn map(&self, f: impl Fn(&SpectrogramImage) -> Result<SpectrogramImage>) -> Result<Self> {
        Ok(Self {
            top: f(&self.top)?,
            bottom: f(&self.bottom)?,
            mix: f(&self.mix)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PipelineConfig {
    pub dsp: DspConfig,
    /// Raw-audio noise injected into each channel before the mixdown.
    pub raw_noise: Option<NoiseInjectionParams>,
}

/// Runs the DSP chain on both channels and the mixdown.
pub fn clip_images(s: &StereoWaveform, cfg: &PipelineConfig) -> Result<ClipImages> {
    let needed = cfg.dsp.crop.t_hi;
    if needed.is_finite() && s.duration_s() < needed {
        return Err(Error::ClipTooShort(format!(
            "clip lasts {:.3} s but the crop window ends at {needed} s",
            s.duration_s()
        )));
    }
    let stereo = match cfg.raw_noise {
        Some(p) => StereoWaveform::new(
            inject_noise(
                s.top(),
                &NoiseInjectionParams {
                    seed: seed::derive(p.seed, stage::AUGMENT, 0),
                    ..p
                },
            )?,
            inject_noise(
                s.bottom(),
                &NoiseInjectionParams {
                    seed: seed::derive(p.seed, stage::AUGMENT, 1),
                    ..p
                },
            )?,
        )?,
        None => s.clone(),
    };
    Ok(ClipImages {
        top: waveform_to_image(stereo.top(), &cfg.dsp)?,
        bottom: waveform_to_image(stereo.bottom(), &cfg.dsp)?,
        mix: waveform_to_image(&mixdown(&stereo), &cfg.dsp)?,
    })
}

/// Reads a clip and packs it for `mode`.
pub fn assemble(clip_path: &Path, mode: FusionMode, cfg: &PipelineConfig) -> Result<ModelInput> {
    let s = read_wav(clip_path)?;
    let images = clip_images(&s, cfg).map_err(|e| match e {
        Error::ClipTooShort(m) => Error::ClipTooShort(format!("{}: {m}", clip_path.display())),
        other => other,
    })?;
    Ok(images.pack(mode))
}

/// Loads images for every row, in manifest order.
pub fn load_images<'a>(
    root: &Path,
    rows: impl IntoIterator<Item = &'a ManifestRow>,
    cfg: &PipelineConfig,
    cache: Option<&ImageCache>,
) -> Result<Vec<(ClipImages, usize)>> {
    rows.into_iter()
        .map(|r| {
            let images = match cache.and_then(|c| c.get(&r.path)) {
                Some(hit) => hit.clone(),
                None => {
                    let path = root.join(&r.path);
                    clip_images(&read_wav(&path)?, cfg).map_err(|e| match e {
                        Error::ClipTooShort(m) => {
                            Error::ClipTooShort(format!("{}: {m}", path.display()))
                        }
                        other => other,
                    })?
                }
            };
            Ok((images, r.gesture.index()))
        })
        .collect()
}

/// Appends the policy's augmented copies after the originals. Shifts use one
/// draw per clip so all channels stay aligned.
pub fn augment_images(
    set: &[(ClipImages, usize)],
    policy: &AugmentPolicy,
    seed: u64,
) -> Result<Vec<(ClipImages, usize)>> {
    let mut out = set.to_vec();
    for (i, (img, label)) in set.iter().enumerate() {
        for k in 0..policy.gaussian_copies {
            let base = seed::derive(seed, stage::AUGMENT, ((i as u64) << 16) | k as u64);
            let noisy = ClipImages {
                top: add_gaussian_noise(&img.top, &gauss(policy, seed::derive(base, 0, 0)))?,
                bottom: add_gaussian_noise(&img.bottom, &gauss(policy, seed::derive(base, 0, 1)))?,
                mix: add_gaussian_noise(&img.mix, &gauss(policy, seed::derive(base, 0, 2)))?,
            };
            out.push((noisy, *label));
        }
        for k in 0..policy.shift_copies {
            let s = seed::derive(
                seed,
                stage::AUGMENT,
                (1 << 40) | ((i as u64) << 16) | k as u64,
            );
            let d = draw_shift(policy.max_shift_fraction, s)?;
            out.push((img.map(|p| Ok(shift_columns(p, d)))?, *label));
        }
    }
    Ok(out)
}

fn gauss(policy: &AugmentPolicy, seed: u64) -> GaussianNoiseParams {
    GaussianNoiseParams {
        mean: policy.gaussian_mean,
        variance: policy.gaussian_variance,
        seed,
    }
}

const CACHE_MAGIC: &[u8; 8] = b"SGIMGC01";

/// Preprocessed images keyed by manifest path, tagged with the DSP settings
/// they were computed with.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageCache {
    dsp: DspConfig,
    entries: BTreeMap<String, ClipImages>,
}

impl ImageCache {
    pub fn new(dsp: DspConfig) -> Self {
        Self {
            dsp,
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, path: &Path, images: ClipImages) {
        self.entries.insert(path_key(path), images);
    }

    pub fn get(&self, path: &Path) -> Option<&ClipImages> {
        self.entries.get(&path_key(path))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dsp(&self) -> &DspConfig {
        &self.dsp
    }

    fn dsp_words(dsp: &DspConfig) -> [f64; 7] {
        [
            dsp.stft.n_fft as f64,
            dsp.stft.hop as f64,
            match dsp.stft.window {
                crate::dsp::Window::Hann => 0.0,
                crate::dsp::Window::Rectangular => 1.0,
            },
            dsp.crop.f_lo,
            dsp.crop.f_hi,
            dsp.crop.t_lo,
            dsp.crop.t_hi,
        ]
    }

    /// Little-endian: magic, 7 DSP words (f64), entry count (u32), then per
    /// entry a length-prefixed UTF-8 path and 3 x 10000 f64 pixels.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        out.extend_from_slice(CACHE_MAGIC);
        for w in Self::dsp_words(&self.dsp) {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (k, v) in &self.entries {
            out.extend_from_slice(&(k.len() as u32).to_le_bytes());
            out.extend_from_slice(k.as_bytes());
            for img in [&v.top, &v.bottom, &v.mix] {
                for p in img.pixels() {
                    out.extend_from_slice(&p.to_le_bytes());
                }
            }
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&out).map_err(|e| Error::io(path, e))
    }

    /// Loads a cache, refusing one built with different DSP settings.
    pub fn read(path: &Path, expected: &DspConfig) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let bad = |m: &str| Error::Data(format!("{}: {m}", path.display()));
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            let s = bytes
                .get(pos..pos + n)
                .ok_or_else(|| bad("truncated image cache"))?;
            pos += n;
            Ok(s)
        };
        if take(8)? != CACHE_MAGIC {
            return Err(bad("not an image cache"));
        }
        for w in Self::dsp_words(expected) {
            let v = f64::from_le_bytes(take(8)?.try_into().unwrap());
            if v != w {
                return Err(bad("image cache was built with different DSP settings"));
            }
        }
        let n = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let mut cache = Self::new(*expected);
        let px = IMAGE_SIZE * IMAGE_SIZE;
        for _ in 0..n {
            let len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
            let key = String::from_utf8(take(len)?.to_vec()).map_err(|_| bad("bad path"))?;
            let mut imgs = Vec::with_capacity(3);
            for _ in 0..3 {
                let raw = take(px * 8)?;
                let pixels = raw
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                imgs.push(SpectrogramImage::new(pixels)?);
            }
            let mix = imgs.pop().unwrap();
            let bottom = imgs.pop().unwrap();
            let top = imgs.pop().unwrap();
            cache.entries.insert(key, ClipImages { top, bottom, mix });
        }
        Ok(cache)
    }
}
