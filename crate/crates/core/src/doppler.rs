//! Doppler physics and the synthetic gesture generator.
//!
//! Every clip is the CW carrier recorded on two channels, plus an echo off
//! the moving hand whose instantaneous frequency follows the two-way
//! Doppler shift of the hand's radial velocity on that channel.

use std::fs;
use std::path::Path;

use rand::Rng;

use crate::audio::{tone_cycles, write_wav_stereo, StereoWaveform, Waveform};
use crate::dataset::{Manifest, ManifestRow, Split, MANIFEST_FILE};
use crate::error::{Error, Result};
use crate::seed::{self, stage};

pub const SPEED_OF_SOUND: f64 = 343.0;
pub const MAX_HAND_SPEED: f64 = 2.0;

/// Inputs of the classical Doppler relation `f (v + v_o) / (v - v_s)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DopplerParams {
    pub f_emit: f64,
    pub v_sound: f64,
    /// Observer velocity, positive toward the source.
    pub v_observer: f64,
    /// Source velocity, positive toward the observer.
    pub v_source: f64,
}

impl DopplerParams {
    pub fn new(f_emit: f64, v_observer: f64, v_source: f64) -> Self {
        Self {
            f_emit,
            v_sound: SPEED_OF_SOUND,
            v_observer,
            v_source,
        }
    }
}

/// Observed frequency `f (v + v_o) / (v - v_s)`.
pub fn doppler_shift(p: &DopplerParams) -> Result<f64> {
    if !(p.v_sound > 0.0) {
        return Err(Error::invalid("speed of sound must be positive"));
    }
    if p.v_source >= p.v_sound || p.v_source <= -p.v_sound {
        return Err(Error::invalid(format!(
            "source speed {} m/s must be below the speed of sound {} m/s",
            p.v_source, p.v_sound
        )));
    }
    Ok(p.f_emit * (p.v_sound + p.v_observer) / (p.v_sound - p.v_source))
}

/// Frequency of the echo off a reflector moving at `v_hand` (positive =
/// approaching): the hand first observes the probe as a moving observer,
/// then re-emits it as a moving source.
pub fn echo_frequency(f_emit: f64, v_hand: f64, v_sound: f64) -> Result<f64> {
    if !(v_sound > 0.0) {
        return Err(Error::invalid("speed of sound must be positive"));
    }
    if v_hand.abs() >= v_sound {
        return Err(Error::invalid(format!(
            "hand speed {v_hand} m/s must be below the speed of sound {v_sound} m/s"
        )));
    }
    Ok(f_emit * (v_sound + v_hand) / (v_sound - v_hand))
}

/// The six gestures, in the canonical class-index order used by labels and
/// confusion matrices: `[LR, RL, P, B, UD, DU]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GestureClass {
    SwipeRight,
    SwipeLeft,
    Push,
    Block,
    SwipeDown,
    SwipeUp,
}

impl GestureClass {
    pub const COUNT: usize = 6;
    pub const ALL: [GestureClass; 6] = [
        GestureClass::SwipeRight,
        GestureClass::SwipeLeft,
        GestureClass::Push,
        GestureClass::Block,
        GestureClass::SwipeDown,
        GestureClass::SwipeUp,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn code(self) -> &'static str {
        match self {
            GestureClass::SwipeRight => "LR",
            GestureClass::SwipeLeft => "RL",
            GestureClass::Push => "P",
            GestureClass::Block => "B",
            GestureClass::SwipeDown => "UD",
            GestureClass::SwipeUp => "DU",
        }
    }

    pub fn from_code(code: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|g| g.code() == code)
    }

    pub fn name(self) -> &'static str {
        match self {
            GestureClass::SwipeRight => "swipe_right",
            GestureClass::SwipeLeft => "swipe_left",
            GestureClass::Push => "push",
            GestureClass::Block => "block",
            GestureClass::SwipeDown => "swipe_down",
            GestureClass::SwipeUp => "swipe_up",
        }
    }
}

impl std::fmt::Display for GestureClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.code())
    }
}

impl std::str::FromStr for GestureClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::from_code(s)
            .or_else(|| Self::ALL.iter().copied().find(|g| g.name() == s))
            .ok_or_else(|| Error::invalid(format!("unknown gesture class '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub duration_s: f64,
    /// Interval holding the gesture, before timing jitter.
    pub active_window: (f64, f64),
    pub echo_ratio: f64,
    /// Half-width of the uniform additive noise, as a fraction of full scale.
    pub noise_fraction: f64,
    pub carrier_hz: f64,
    pub carrier_amplitude: f64,
    pub sample_rate: u32,
    pub v_sound: f64,
    /// Nominal peak hand speed before the per-clip ±15% jitter.
    pub hand_speed: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            duration_s: 3.0,
            active_window: (1.4, 2.6),
            echo_ratio: 0.15,
            noise_fraction: 0.002,
            carrier_hz: 20_000.0,
            carrier_amplitude: 0.8,
            sample_rate: 44_100,
            v_sound: SPEED_OF_SOUND,
            hand_speed: 1.2,
        }
    }
}

const SPEED_JITTER: f64 = 0.15;
const TIMING_JITTER_S: f64 = 0.1;
const BLOCK_MIN_GAIN: f64 = 0.15;

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let (a, b) = self.active_window;
        if !(self.duration_s >= 2.7) {
            return Err(Error::invalid(format!(
                "clip duration {} s is shorter than the 2.7 s crop window",
                self.duration_s
            )));
        }
        if !(0.0 <= a && a < b && b <= self.duration_s) {
            return Err(Error::invalid(format!(
                "active window [{a}, {b}] must lie inside [0, {}]",
                self.duration_s
            )));
        }
        if a - TIMING_JITTER_S < 0.0 || b + TIMING_JITTER_S > self.duration_s {
            return Err(Error::invalid(
                "active window leaves no room for timing jitter",
            ));
        }
        if self.sample_rate == 0 || self.carrier_hz >= self.sample_rate as f64 / 2.0 {
            return Err(Error::invalid("carrier must sit below Nyquist"));
        }
        if !(self.echo_ratio >= 0.0 && self.noise_fraction >= 0.0 && self.carrier_amplitude > 0.0) {
            return Err(Error::invalid(
                "echo ratio, noise fraction and carrier amplitude must be non-negative",
            ));
        }
        if self.carrier_amplitude * (1.0 + self.echo_ratio) + self.noise_fraction > 1.0 {
            return Err(Error::invalid(
                "carrier amplitude, echo ratio and noise can exceed full scale",
            ));
        }
        if !(self.v_sound > 0.0) {
            return Err(Error::invalid("speed of sound must be positive"));
        }
        if !(self.hand_speed >= 0.0 && self.hand_speed * (1.0 + SPEED_JITTER) <= MAX_HAND_SPEED) {
            return Err(Error::invalid(format!(
                "hand speed {} m/s (+15% jitter) exceeds {MAX_HAND_SPEED} m/s",
                self.hand_speed
            )));
        }
        Ok(())
    }

    fn n_samples(&self) -> usize {
        (self.duration_s * self.sample_rate as f64).round() as usize
    }
}

/// One microphone's view of the gesture, sampled at the clip rate.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTrack {
    /// Radial hand velocity, m/s, positive = approaching.
    pub velocity: Vec<f64>,
    /// Echo amplitude envelope in `[0, 1]`.
    pub echo_envelope: Vec<f64>,
    /// Direct-path gain in `[0, 1]`.
    pub direct_gain: Vec<f64>,
    pub noise_seed: u64,
}

impl ChannelTrack {
    fn idle(n: usize, noise_seed: u64) -> Self {
        Self {
            velocity: vec![0.0; n],
            echo_envelope: vec![0.0; n],
            direct_gain: vec![1.0; n],
            noise_seed,
        }
    }

    /// Adds a motion pulse over `[t0, t1]`: the echo fades in and out with a
    /// half-sine envelope while the velocity follows `shape(u)`, `u` in [0, 1].
    fn add_pulse(&mut self, sr: f64, t0: f64, t1: f64, speed: f64, shape: impl Fn(f64) -> f64) {
        for (n, u) in window_positions(self.velocity.len(), sr, t0, t1) {
            self.velocity[n] += speed * shape(u);
            let env = (std::f64::consts::PI * u).sin();
            self.echo_envelope[n] = self.echo_envelope[n].max(env);
        }
    }
}

fn window_positions(len: usize, sr: f64, t0: f64, t1: f64) -> impl Iterator<Item = (usize, f64)> {
    let start = (t0 * sr).ceil().max(0.0) as usize;
    let end = ((t1 * sr).floor() as usize).min(len.saturating_sub(1));
    (start..=end).filter_map(move |n| {
        let u = (n as f64 / sr - t0) / (t1 - t0);
        (0.0..=1.0).contains(&u).then_some((n, u))
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionProfile {
    pub top: ChannelTrack,
    pub bottom: ChannelTrack,
    pub sample_rate: u32,
}

impl MotionProfile {
    fn exchanged(self) -> Self {
        Self {
            top: self.bottom,
            bottom: self.top,
            sample_rate: self.sample_rate,
        }
    }
}

fn half_sine(u: f64) -> f64 {
    (std::f64::consts::PI * u).sin()
}

fn full_sine(u: f64) -> f64 {
    (std::f64::consts::TAU * u).sin()
}

/// Builds the per-channel motion tracks for a gesture.
///
/// Deterministic in `seed`; the seed draws a ±15% speed factor and a
/// ±100 ms time offset. `SwipeDown` is `SwipeUp` with the two channel tracks
/// (noise streams included) exchanged.
pub fn motion_profile(g: GestureClass, cfg: &SimConfig, seed: u64) -> MotionProfile {
    if g == GestureClass::SwipeDown {
        return motion_profile(GestureClass::SwipeUp, cfg, seed).exchanged();
    }
    let mut rng = seed::rng(seed::derive(seed, stage::JITTER, 0));
    let speed = cfg.hand_speed * (1.0 + rng.random_range(-SPEED_JITTER..=SPEED_JITTER));
    let shift = rng.random_range(-TIMING_JITTER_S..=TIMING_JITTER_S);

    let n = cfg.n_samples();
    let sr = cfg.sample_rate as f64;
    let mut a = ChannelTrack::idle(n, seed::derive(seed, stage::NOISE, 0));
    let mut b = ChannelTrack::idle(n, seed::derive(seed, stage::NOISE, 1));

    let (w0, w1) = (cfg.active_window.0 + shift, cfg.active_window.1 + shift);
    let len = w1 - w0;
    let (p0, p1) = (w0 + 0.1 * len, w1 - 0.1 * len);
    // staggered halves for the lateral swipes
    let (lead0, lead1) = (w0, w0 + 0.6 * len);
    let (lag0, lag1) = (w0 + 0.4 * len, w1);

    match g {
        GestureClass::Push => {
            a.add_pulse(sr, p0, p1, speed, half_sine);
            b.add_pulse(sr, p0, p1, speed, half_sine);
        }
        GestureClass::SwipeUp => {
            // a = top approaches, b = bottom recedes
            a.add_pulse(sr, p0, p1, speed, half_sine);
            b.add_pulse(sr, p0, p1, -speed, half_sine);
        }
        GestureClass::SwipeRight => {
            // bottom leads, approach-then-recede on each channel
            b.add_pulse(sr, lead0, lead1, speed, full_sine);
            a.add_pulse(sr, lag0, lag1, speed, full_sine);
        }
        GestureClass::SwipeLeft => {
            // top leads, recede-then-approach on each channel
            a.add_pulse(sr, lead0, lead1, -speed, full_sine);
            b.add_pulse(sr, lag0, lag1, -speed, full_sine);
        }
        GestureClass::Block => {
            for track in [&mut a, &mut b] {
                for (i, u) in window_positions(n, sr, w0, w1) {
                    let dip = (1.0 - BLOCK_MIN_GAIN) * half_sine(u).powi(2);
                    track.direct_gain[i] = 1.0 - dip;
                }
            }
        }
        GestureClass::SwipeDown => unreachable!(),
    }

    MotionProfile {
        top: a,
        bottom: b,
        sample_rate: cfg.sample_rate,
    }
}

fn render_channel(track: &ChannelTrack, cfg: &SimConfig) -> Result<Waveform> {
    let sr = cfg.sample_rate as f64;
    let amp = cfg.carrier_amplitude;
    let mut noise = seed::rng(track.noise_seed);
    let mut out = Vec::with_capacity(track.velocity.len());
    // echo phase in cycles, kept in [0, 1)
    let mut echo_cycles = 0.0f64;
    let mut prev_f = echo_frequency(cfg.carrier_hz, track.velocity[0], cfg.v_sound)?;
    for n in 0..track.velocity.len() {
        let f = echo_frequency(cfg.carrier_hz, track.velocity[n], cfg.v_sound)?;
        if n > 0 {
            echo_cycles = (echo_cycles + 0.5 * (prev_f + f) / sr).fract();
        }
        prev_f = f;
        let direct = track.direct_gain[n]
            * (std::f64::consts::TAU * tone_cycles(cfg.carrier_hz, n, sr)).sin();
        let echo =
            cfg.echo_ratio * track.echo_envelope[n] * (std::f64::consts::TAU * echo_cycles).sin();
        let eta = if cfg.noise_fraction > 0.0 {
            noise.random_range(-cfg.noise_fraction..=cfg.noise_fraction)
        } else {
            0.0
        };
        out.push(amp * (direct + echo) + eta);
    }
    Waveform::new(out, cfg.sample_rate)
}

/// Renders a profile into a stereo clip:
/// `y_c = A (g_c sin(2πF t) + r a_c sin φ_c) + noise`, `φ_c` the
/// trapezoidal integral of the echo frequency.
pub fn render_profile(profile: &MotionProfile, cfg: &SimConfig) -> Result<StereoWaveform> {
    cfg.validate()?;
    StereoWaveform::new(
        render_channel(&profile.top, cfg)?,
        render_channel(&profile.bottom, cfg)?,
    )
}

pub fn synth_gesture(g: GestureClass, cfg: &SimConfig, seed: u64) -> Result<StereoWaveform> {
    cfg.validate()?;
    render_profile(&motion_profile(g, cfg, seed), cfg)
}

fn synth_split(
    split: Split,
    n_per_class: usize,
    cfg: &SimConfig,
    seed: u64,
    out_dir: &Path,
) -> Result<Vec<ManifestRow>> {
    let tag = match split {
        Split::Test => stage::SIM_TEST,
        _ => stage::SIM_TRAIN,
    };
    let mut rows = Vec::with_capacity(n_per_class * GestureClass::COUNT);
    for g in GestureClass::ALL {
        let rel_dir = Path::new(split.as_str()).join(g.code());
        let dir = out_dir.join(&rel_dir);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for i in 0..n_per_class {
            let clip_seed = seed::derive(seed, tag, ((g.index() as u64) << 32) | i as u64);
            let clip = synth_gesture(g, cfg, clip_seed)?;
            let name = format!("{}_{:05}.wav", g.code(), i);
            write_wav_stereo(dir.join(&name), &clip)?;
            rows.push(ManifestRow {
                path: rel_dir.join(name),
                gesture: g,
                subject: None,
                split,
                seed: Some(clip_seed),
            });
        }
    }
    Ok(rows)
}

/// Writes `6 * n_per_class` training clips under `out_dir/train/<code>/`
/// plus `manifest.csv`.
pub fn synth_dataset(
    n_per_class: usize,
    cfg: &SimConfig,
    seed: u64,
    out_dir: &Path,
) -> Result<Manifest> {
    synth_corpus(n_per_class, 0, cfg, seed, out_dir)
}

/// Train and test splits in one corpus; the splits draw from disjoint seed
/// streams.
pub fn synth_corpus(
    train_per_class: usize,
    test_per_class: usize,
    cfg: &SimConfig,
    seed: u64,
    out_dir: &Path,
) -> Result<Manifest> {
    if train_per_class == 0 {
        return Err(Error::invalid("n_per_class must be at least 1"));
    }
    cfg.validate()?;
    let mut rows = synth_split(Split::Train, train_per_class, cfg, seed, out_dir)?;
    if test_per_class > 0 {
        rows.extend(synth_split(
            Split::Test,
            test_per_class,
            cfg,
            seed,
            out_dir,
        )?);
    }
    let manifest = Manifest::new(rows)?;
    manifest.write_csv(out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}
