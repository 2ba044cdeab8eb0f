//! STFT magnitude spectrograms, band/time cropping and CNN input images.

use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::audio::Waveform;
use crate::error::{Error, Result};

pub const IMAGE_SIZE: usize = 100;
pub const LOG_REFERENCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    /// Periodic Hann, `0.5 - 0.5 cos(2πn/N)`.
    Hann,
    Rectangular,
}

impl Window {
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / n as f64).cos())
                .collect(),
            Window::Rectangular => vec![1.0; n],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftConfig {
    pub n_fft: usize,
    pub hop: usize,
    pub window: Window,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            n_fft: 2048,
            hop: 512,
            window: Window::Hann,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.n_fft.is_power_of_two() || self.n_fft < 2 {
            return Err(Error::invalid(format!(
                "n_fft must be a power of two >= 2, got {}",
                self.n_fft
            )));
        }
        if self.hop == 0 || self.hop > self.n_fft {
            return Err(Error::invalid(format!(
                "hop must be in 1..={}, got {}",
                self.n_fft, self.hop
            )));
        }
        Ok(())
    }
}

/// Magnitude grid indexed `[freq_bin][frame]`, stored bin-major.
///
/// `freq_offset_bin` and `time_offset_frame` give the absolute index of the
/// first stored bin/frame in the uncropped STFT.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    magnitudes: Vec<f64>,
    n_bins: usize,
    n_frames: usize,
    sample_rate: u32,
    n_fft: usize,
    hop: usize,
    pub freq_offset_bin: usize,
    pub time_offset_frame: usize,
}

impl Spectrogram {
    /// Wraps a raw grid. Magnitudes must be finite and non-negative.
    pub fn from_grid(
        magnitudes: Vec<f64>,
        n_bins: usize,
        n_frames: usize,
        sample_rate: u32,
        n_fft: usize,
        hop: usize,
    ) -> Result<Self> {
        if magnitudes.len() != n_bins * n_frames {
            return Err(Error::ShapeMismatch {
                expected: vec![n_bins, n_frames],
                actual: vec![magnitudes.len()],
            });
        }
        if magnitudes.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(Error::invalid("magnitudes must be finite and non-negative"));
        }
        Ok(Self {
            magnitudes,
            n_bins,
            n_frames,
            sample_rate,
            n_fft,
            hop,
            freq_offset_bin: 0,
            time_offset_frame: 0,
        })
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn magnitudes(&self) -> &[f64] {
        &self.magnitudes
    }

    pub fn get(&self, bin: usize, frame: usize) -> f64 {
        self.magnitudes[bin * self.n_frames + frame]
    }

    pub fn bin_hz(&self) -> f64 {
        self.sample_rate as f64 / self.n_fft as f64
    }

    pub fn frame_s(&self) -> f64 {
        self.hop as f64 / self.sample_rate as f64
    }

    /// Center frequency of stored bin `i`.
    pub fn bin_frequency(&self, i: usize) -> f64 {
        (self.freq_offset_bin + i) as f64 * self.bin_hz()
    }

    /// Start time of stored frame `j`.
    pub fn frame_time(&self, j: usize) -> f64 {
        (self.time_offset_frame + j) as f64 * self.frame_s()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            magnitudes: self.magnitudes.iter().map(|m| m * c).collect(),
            ..self.clone()
        }
    }
}

/// Windowed-DFT magnitudes for a single frame of length `n_fft`.
pub(crate) struct FrameTransform {
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    buf: Vec<Complex<f64>>,
    scratch: Vec<Complex<f64>>,
}

impl FrameTransform {
    pub(crate) fn new(cfg: &StftConfig) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(cfg.n_fft);
        let scratch = vec![Complex::default(); fft.get_inplace_scratch_len()];
        Self {
            fft,
            window: cfg.window.coefficients(cfg.n_fft),
            buf: vec![Complex::default(); cfg.n_fft],
            scratch,
        }
    }

    /// Writes the `n_fft/2 + 1` one-sided magnitudes of `frame` into `out`.
    pub(crate) fn magnitudes(&mut self, frame: &[f64], out: &mut [f64]) {
        for ((b, x), w) in self.buf.iter_mut().zip(frame).zip(&self.window) {
            *b = Complex::new(x * w, 0.0);
        }
        self.fft
            .process_with_scratch(&mut self.buf, &mut self.scratch);
        for (o, c) in out.iter_mut().zip(&self.buf) {
            *o = c.norm();
        }
    }
}

/// Unscaled, uncentered STFT magnitudes: `frames = floor((len - n_fft) / hop) + 1`,
/// `bins = n_fft / 2 + 1`.
pub fn stft(w: &Waveform, cfg: &StftConfig) -> Result<Spectrogram> {
    cfg.validate()?;
    let x = w.samples();
    if x.len() < cfg.n_fft {
        return Err(Error::ClipTooShort(format!(
            "{} samples is shorter than one {}-sample STFT frame",
            x.len(),
            cfg.n_fft
        )));
    }
    let n_frames = (x.len() - cfg.n_fft) / cfg.hop + 1;
    let n_bins = cfg.n_fft / 2 + 1;
    let mut transform = FrameTransform::new(cfg);
    let mut column = vec![0.0; n_bins];
    let mut magnitudes = vec![0.0; n_bins * n_frames];
    for f in 0..n_frames {
        let start = f * cfg.hop;
        transform.magnitudes(&x[start..start + cfg.n_fft], &mut column);
        for (k, m) in column.iter().enumerate() {
            magnitudes[k * n_frames + f] = *m;
        }
    }
    Ok(Spectrogram {
        magnitudes,
        n_bins,
        n_frames,
        sample_rate: w.sample_rate(),
        n_fft: cfg.n_fft,
        hop: cfg.hop,
        freq_offset_bin: 0,
        time_offset_frame: 0,
    })
}

/// Crop window: frequency band closed on both ends, time half-open.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropWindow {
    pub f_lo: f64,
    pub f_hi: f64,
    pub t_lo: f64,
    pub t_hi: f64,
}

impl Default for CropWindow {
    fn default() -> Self {
        Self {
            f_lo: 19_700.0,
            f_hi: 20_300.0,
            t_lo: 1.3,
            t_hi: 2.7,
        }
    }
}

impl CropWindow {
    pub fn full() -> Self {
        Self {
            f_lo: 0.0,
            f_hi: f64::INFINITY,
            t_lo: 0.0,
            t_hi: f64::INFINITY,
        }
    }
}

/// Keeps bins whose center lies in `[f_lo, f_hi]` and frames whose start
/// lies in `[t_lo, t_hi)`.
pub fn band_time_crop(s: &Spectrogram, win: &CropWindow) -> Result<Spectrogram> {
    let bins: Vec<usize> = (0..s.n_bins)
        .filter(|&i| {
            let f = s.bin_frequency(i);
            f >= win.f_lo && f <= win.f_hi
        })
        .collect();
    let frames: Vec<usize> = (0..s.n_frames)
        .filter(|&j| {
            let t = s.frame_time(j);
            t >= win.t_lo && t < win.t_hi
        })
        .collect();
    if bins.is_empty() {
        return Err(Error::EmptyCrop {
            axis: "frequency",
            detail: format!(
                "no bin center in [{}, {}] Hz (grid covers {:.1}..={:.1} Hz)",
                win.f_lo,
                win.f_hi,
                s.bin_frequency(0),
                s.bin_frequency(s.n_bins.saturating_sub(1))
            ),
        });
    }
    if frames.is_empty() {
        return Err(Error::EmptyCrop {
            axis: "time",
            detail: format!(
                "no frame start in [{}, {}) s (grid covers {:.3}..={:.3} s)",
                win.t_lo,
                win.t_hi,
                s.frame_time(0),
                s.frame_time(s.n_frames.saturating_sub(1))
            ),
        });
    }
    // membership is monotone, so both index sets are contiguous
    let (b0, f0) = (bins[0], frames[0]);
    let (nb, nf) = (bins.len(), frames.len());
    let mut magnitudes = Vec::with_capacity(nb * nf);
    for b in b0..b0 + nb {
        let row = b * s.n_frames;
        magnitudes.extend_from_slice(&s.magnitudes[row + f0..row + f0 + nf]);
    }
    Ok(Spectrogram {
        magnitudes,
        n_bins: nb,
        n_frames: nf,
        sample_rate: s.sample_rate,
        n_fft: s.n_fft,
        hop: s.hop,
        freq_offset_bin: s.freq_offset_bin + b0,
        time_offset_frame: s.time_offset_frame + f0,
    })
}

/// 100x100 grayscale image in `[0, 1]`; row 0 is the lowest frequency,
/// column 0 the earliest frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrogramImage {
    pixels: Vec<f64>,
}

impl SpectrogramImage {
    pub fn new(pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != IMAGE_SIZE * IMAGE_SIZE {
            return Err(Error::ShapeMismatch {
                expected: vec![IMAGE_SIZE, IMAGE_SIZE],
                actual: vec![pixels.len()],
            });
        }
        if pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid("image pixels must lie in [0, 1]"));
        }
        Ok(Self { pixels })
    }

    pub fn zeros() -> Self {
        Self {
            pixels: vec![0.0; IMAGE_SIZE * IMAGE_SIZE],
        }
    }

    pub fn filled(v: f64) -> Result<Self> {
        Self::new(vec![v; IMAGE_SIZE * IMAGE_SIZE])
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * IMAGE_SIZE + col]
    }

    /// Root-mean-square pixel difference.
    pub fn rms_diff(&self, other: &Self) -> f64 {
        let ss: f64 = self
            .pixels
            .iter()
            .zip(&other.pixels)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        (ss / self.pixels.len() as f64).sqrt()
    }
}

/// Bilinear resampling with corner-aligned grids; equal sizes give the
/// identity.
fn resize_bilinear(src: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    let coord = |i: usize, n_out: usize, n_in: usize| -> (usize, usize, f64) {
        if n_out == 1 || n_in == 1 {
            return (0, 0, 0.0);
        }
        let x = i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
        let lo = (x.floor() as usize).min(n_in - 1);
        let hi = (lo + 1).min(n_in - 1);
        (lo, hi, x - lo as f64)
    };
    let cols: Vec<_> = (0..out_w).map(|j| coord(j, out_w, w)).collect();
    let mut out = Vec::with_capacity(out_h * out_w);
    for i in 0..out_h {
        let (r0, r1, fr) = coord(i, out_h, h);
        for &(c0, c1, fc) in &cols {
            let top = src[r0 * w + c0] * (1.0 - fc) + src[r0 * w + c1] * fc;
            let bot = src[r1 * w + c0] * (1.0 - fc) + src[r1 * w + c1] * fc;
            out.push((top * (1.0 - fr) + bot * fr).clamp(0.0, 1.0));
        }
    }
    out
}

/// `log10(1 + m / 1e-6)`, min-max normalized per image (constant input maps
/// to zeros), then resampled to 100x100.
pub fn to_image(s: &Spectrogram) -> Result<SpectrogramImage> {
    if s.n_bins < 2 || s.n_frames < 2 {
        return Err(Error::invalid(format!(
            "spectrogram of {}x{} is degenerate; need at least 2 bins and 2 frames",
            s.n_bins, s.n_frames
        )));
    }
    let logged: Vec<f64> = s
        .magnitudes
        .iter()
        .map(|m| (1.0 + m / LOG_REFERENCE).log10())
        .collect();
    let (lo, hi) = logged
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(*v), hi.max(*v))
        });
    let range = hi - lo;
    let normalized: Vec<f64> = if range > 0.0 {
        logged
            .iter()
            .map(|v| ((v - lo) / range).clamp(0.0, 1.0))
            .collect()
    } else {
        vec![0.0; logged.len()]
    };
    let pixels = resize_bilinear(&normalized, s.n_bins, s.n_frames, IMAGE_SIZE, IMAGE_SIZE);
    Ok(SpectrogramImage { pixels })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DspConfig {
    pub stft: StftConfig,
    pub crop: CropWindow,
}

/// Waveform to CNN input: STFT, crop, image.
pub fn waveform_to_image(w: &Waveform, cfg: &DspConfig) -> Result<SpectrogramImage> {
    let s = stft(w, &cfg.stft)?;
    to_image(&band_time_crop(&s, &cfg.crop)?)
}

/// Binary PGM (P5, maxval 255). The highest frequency is written first so
/// the file displays with frequency increasing upward.
pub fn encode_pgm(img: &SpectrogramImage) -> Vec<u8> {
    let mut out = format!("P5\n{IMAGE_SIZE} {IMAGE_SIZE}\n255\n").into_bytes();
    for row in (0..IMAGE_SIZE).rev() {
        for col in 0..IMAGE_SIZE {
            out.push((img.get(row, col) * 255.0 + 0.5).floor() as u8);
        }
    }
    out
}

pub fn write_pgm(path: impl AsRef<Path>, img: &SpectrogramImage) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_pgm(img)).map_err(|e| Error::io(path, e))
}

/// Parses a 100x100 P5 file written by [`encode_pgm`].
pub fn decode_pgm(bytes: &[u8]) -> Result<SpectrogramImage> {
    let bad = |m: &str| Error::Data(format!("PGM: {m}"));
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header"))?);
    }
    pos += 1;
    if fields[0] != "P5" {
        return Err(bad("not a binary graymap"));
    }
    let dims: Vec<usize> = fields[1..]
        .iter()
        .map(|f| f.parse().map_err(|_| bad("bad header number")))
        .collect::<Result<_>>()?;
    if dims != [IMAGE_SIZE, IMAGE_SIZE, 255] {
        return Err(bad("expected 100x100 with maxval 255"));
    }
    let body = bytes
        .get(pos..pos + IMAGE_SIZE * IMAGE_SIZE)
        .ok_or_else(|| bad("truncated"))?;
    let mut pixels = vec![0.0; IMAGE_SIZE * IMAGE_SIZE];
    for (r, line) in body.chunks_exact(IMAGE_SIZE).enumerate() {
        let row = IMAGE_SIZE - 1 - r;
        for (c, v) in line.iter().enumerate() {
            pixels[row * IMAGE_SIZE + c] = *v as f64 / 255.0;
        }
    }
    SpectrogramImage::new(pixels)
}
