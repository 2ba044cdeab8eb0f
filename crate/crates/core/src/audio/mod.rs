//! Time-domain audio: waveforms, the continuous-wave probe, PCM16 and WAV I/O.

mod pcm;
mod wav;

pub use pcm::{pcm16_decode, pcm16_encode, quantize};
pub use wav::{decode_wav, encode_wav, read_wav, write_wav, write_wav_stereo};

use crate::error::{Error, Result};

pub const DEFAULT_SAMPLE_RATE: u32 = 44_100;
pub const DEFAULT_CARRIER_HZ: f64 = 20_000.0;

/// Mono sample buffer with its sample rate.
///
/// Samples are finite and nominally in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::invalid(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Largest absolute sample value (0 for an empty buffer).
    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }
}

/// Two-microphone recording. By convention WAV channel 0 is the top
/// microphone and channel 1 the bottom one.
#[derive(Debug, Clone, PartialEq)]
pub struct StereoWaveform {
    top: Waveform,
    bottom: Waveform,
}

impl StereoWaveform {
    pub fn new(top: Waveform, bottom: Waveform) -> Result<Self> {
        if top.sample_rate != bottom.sample_rate {
            return Err(Error::invalid(format!(
                "channel sample rates differ: {} vs {}",
                top.sample_rate, bottom.sample_rate
            )));
        }
        if top.len() != bottom.len() {
            return Err(Error::invalid(format!(
                "channel lengths differ: {} vs {}",
                top.len(),
                bottom.len()
            )));
        }
        Ok(Self { top, bottom })
    }

    /// Both channels carry the same signal.
    pub fn duplicated(w: Waveform) -> Self {
        Self {
            top: w.clone(),
            bottom: w,
        }
    }

    pub fn top(&self) -> &Waveform {
        &self.top
    }

    pub fn bottom(&self) -> &Waveform {
        &self.bottom
    }

    pub fn sample_rate(&self) -> u32 {
        self.top.sample_rate
    }

    pub fn len(&self) -> usize {
        self.top.len()
    }

    pub fn is_empty(&self) -> bool {
        self.top.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.top.duration_s()
    }
}

/// Separates a stereo recording into its (top, bottom) channels without
/// resampling or scaling.
pub fn split_channels(s: StereoWaveform) -> (Waveform, Waveform) {
    (s.top, s.bottom)
}

/// Sample-wise mean of the two channels.
pub fn mixdown(s: &StereoWaveform) -> Waveform {
    let samples = s
        .top
        .samples
        .iter()
        .zip(&s.bottom.samples)
        .map(|(a, b)| (a + b) * 0.5)
        .collect();
    Waveform {
        samples,
        sample_rate: s.sample_rate(),
    }
}

/// Continuous-wave probe parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CwConfig {
    pub frequency_hz: f64,
    pub sample_rate_hz: u32,
    pub duration_s: f64,
    pub amplitude: f64,
}

impl Default for CwConfig {
    fn default() -> Self {
        Self {
            frequency_hz: DEFAULT_CARRIER_HZ,
            sample_rate_hz: DEFAULT_SAMPLE_RATE,
            duration_s: 3.0,
            amplitude: 0.9,
        }
    }
}

impl CwConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_rate_hz == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        let nyquist = self.sample_rate_hz as f64 / 2.0;
        if !(self.frequency_hz.is_finite() && self.frequency_hz >= 0.0) {
            return Err(Error::invalid("frequency must be finite and non-negative"));
        }
        if self.frequency_hz >= nyquist {
            return Err(Error::invalid(format!(
                "frequency {} Hz is at or above Nyquist ({nyquist} Hz)",
                self.frequency_hz
            )));
        }
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(Error::invalid("duration must be positive"));
        }
        if !(self.amplitude > 0.0 && self.amplitude <= 1.0) {
            return Err(Error::invalid("amplitude must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Phase of a tone at sample `n`, in cycles, reduced to `[0, 1)`.
///
/// The product `freq * n` is exact for integral frequencies below 2^53, so
/// whole-cycle instants land on exactly zero phase.
pub(crate) fn tone_cycles(freq: f64, n: usize, sample_rate: f64) -> f64 {
    (freq * n as f64).rem_euclid(sample_rate) / sample_rate
}

/// `amplitude * sin(2π F n / sample_rate)` for `n` in `0..round(duration * sample_rate)`.
pub fn generate_cw(config: &CwConfig) -> Result<Waveform> {
    config.validate()?;
    let sr = config.sample_rate_hz as f64;
    let len = (config.duration_s * sr).round() as usize;
    let samples = (0..len)
        .map(|n| {
            config.amplitude
                * (std::f64::consts::TAU * tone_cycles(config.frequency_hz, n, sr)).sin()
        })
        .collect();
    Waveform::new(samples, config.sample_rate_hz)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cw(freq: f64, dur: f64, amp: f64) -> Waveform {
        generate_cw(&CwConfig {
            frequency_hz: freq,
            duration_s: dur,
            amplitude: amp,
            ..CwConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn cw_sample_values() {
        let w = cw(20_000.0, 1.5, 1.0);
        assert_eq!(w.len(), 66_150);
        assert_eq!(w.samples()[0], 0.0);
        assert!(w.samples()[44_100].abs() < 1e-9);
        let expected = (2.0 * std::f64::consts::PI * 20_000.0 / 44_100.0).sin();
        assert!((w.samples()[1] - expected).abs() < 1e-12);
    }

    #[test]
    fn cw_amplitude_scales_samples() {
        let a = cw(20_000.0, 0.01, 1.0);
        let b = cw(20_000.0, 0.01, 0.5);
        for (x, y) in a.samples().iter().zip(b.samples()) {
            assert!((x * 0.5 - y).abs() < 1e-15);
        }
    }

    #[test]
    fn cw_rejects_bad_config() {
        let nyq = CwConfig {
            frequency_hz: 22_050.0,
            ..CwConfig::default()
        };
        assert!(generate_cw(&nyq).is_err());
        let zero = CwConfig {
            duration_s: 0.0,
            ..CwConfig::default()
        };
        assert!(generate_cw(&zero).is_err());
        let neg = CwConfig {
            duration_s: -1.0,
            ..CwConfig::default()
        };
        assert!(generate_cw(&neg).is_err());
    }

    #[test]
    fn waveform_rejects_nan_and_zero_rate() {
        assert!(Waveform::new(vec![0.0, f64::NAN], 44_100).is_err());
        assert!(Waveform::new(vec![0.0], 0).is_err());
    }

    #[test]
    fn stereo_requires_matching_channels() {
        let a = Waveform::new(vec![0.0; 4], 44_100).unwrap();
        let b = Waveform::new(vec![0.0; 5], 44_100).unwrap();
        let c = Waveform::new(vec![0.0; 4], 48_000).unwrap();
        assert!(StereoWaveform::new(a.clone(), b).is_err());
        assert!(StereoWaveform::new(a, c).is_err());
    }

    #[test]
    fn split_is_projection_and_inverse_of_pairing() {
        let top = Waveform::new(vec![1.0, 2.0], 44_100).unwrap();
        let bottom = Waveform::new(vec![3.0, 4.0], 44_100).unwrap();
        let s = StereoWaveform::new(top.clone(), bottom.clone()).unwrap();
        let (t, b) = split_channels(s.clone());
        assert_eq!(t.samples(), &[1.0, 2.0]);
        assert_eq!(b.samples(), &[3.0, 4.0]);
        assert_eq!(StereoWaveform::new(t, b).unwrap(), s);
    }

    #[test]
    fn mixdown_examples() {
        let w = Waveform::new(vec![0.25, -0.5, 0.75], 44_100).unwrap();
        assert_eq!(mixdown(&StereoWaveform::duplicated(w.clone())), w);
        let s = StereoWaveform::new(
            Waveform::new(vec![1.0, 0.0], 44_100).unwrap(),
            Waveform::new(vec![0.0, 1.0], 44_100).unwrap(),
        )
        .unwrap();
        assert_eq!(mixdown(&s).samples(), &[0.5, 0.5]);
    }

    fn stereo(a: Vec<f64>, b: Vec<f64>) -> StereoWaveform {
        StereoWaveform::new(
            Waveform::new(a, 44_100).unwrap(),
            Waveform::new(b, 44_100).unwrap(),
        )
        .unwrap()
    }

    proptest! {
        #[test]
        fn mixdown_bounded_by_channel_magnitudes(
            pairs in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..64)
        ) {
            let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let m = mixdown(&stereo(a.clone(), b.clone()));
            for ((x, y), z) in a.iter().zip(&b).zip(m.samples()) {
                prop_assert!(z.abs() <= x.abs().max(y.abs()));
            }
        }

        #[test]
        fn mixdown_is_linear(
            quads in prop::collection::vec(
                (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0), 1..64)
        ) {
            let a = stereo(quads.iter().map(|q| q.0).collect(), quads.iter().map(|q| q.1).collect());
            let b = stereo(quads.iter().map(|q| q.2).collect(), quads.iter().map(|q| q.3).collect());
            let sum = stereo(
                quads.iter().map(|q| q.0 + q.2).collect(),
                quads.iter().map(|q| q.1 + q.3).collect(),
            );
            let lhs = mixdown(&sum);
            let (ma, mb) = (mixdown(&a), mixdown(&b));
            for ((l, x), y) in lhs.samples().iter().zip(ma.samples()).zip(mb.samples()) {
                prop_assert!((l - (x + y)).abs() < 1e-12);
            }
        }
    }
}
