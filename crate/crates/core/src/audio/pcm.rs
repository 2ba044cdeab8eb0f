use super::Waveform;
use crate::error::{Error, Result};

const FULL_SCALE: f64 = 32767.0;

/// `round(clamp(x, -1, 1) * 32767)`.
pub fn quantize(x: f64) -> i16 {
    (x.clamp(-1.0, 1.0) * FULL_SCALE).round() as i16
}

pub(crate) fn dequantize(v: i16) -> f64 {
    v as f64 / FULL_SCALE
}

/// Little-endian signed 16-bit encoding of the clamped samples.
pub fn pcm16_encode(w: &Waveform) -> Vec<u8> {
    w.samples()
        .iter()
        .flat_map(|&s| quantize(s).to_le_bytes())
        .collect()
}

pub fn pcm16_decode(bytes: &[u8], sample_rate: u32) -> Result<Waveform> {
    if !bytes.len().is_multiple_of(2) {
        return Err(Error::OddPcmLength(bytes.len()));
    }
    let samples = bytes
        .chunks_exact(2)
        .map(|c| dequantize(i16::from_le_bytes([c[0], c[1]])))
        .collect();
    Waveform::new(samples, sample_rate)
}
