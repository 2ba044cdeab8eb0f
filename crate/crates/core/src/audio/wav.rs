//! RIFF/WAVE PCM16 reader and writer.
//!
//! The writer always emits the canonical 44-byte header (`RIFF`, `fmt ` of
//! 16 bytes, `data`). The reader walks chunks, skipping ones it does not
//! know (`LIST`, `fact`, ...), and accepts format tag 1 or
//! `WAVE_FORMAT_EXTENSIBLE` with a PCM sub-format.

use std::fs;
use std::path::Path;

use super::pcm::{dequantize, quantize};
use super::{StereoWaveform, Waveform, DEFAULT_SAMPLE_RATE};
use crate::error::{Error, Result, WavError};

const FORMAT_PCM: u16 = 1;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

/// Interleaves the given channels (1 or 2) into a canonical PCM16 WAV image.
pub fn encode_wav(channels: &[&Waveform]) -> Result<Vec<u8>> {
    let n_ch = channels.len();
    if !(1..=2).contains(&n_ch) {
        return Err(Error::invalid(format!(
            "WAV writer accepts 1 or 2 channels, got {n_ch}"
        )));
    }
    let sr = channels[0].sample_rate();
    let len = channels[0].len();
    if channels
        .iter()
        .any(|c| c.sample_rate() != sr || c.len() != len)
    {
        return Err(Error::invalid(
            "WAV channels must share sample rate and length",
        ));
    }
    let block_align = 2 * n_ch as u16;
    let data_len = len * block_align as usize;
    if data_len > (u32::MAX - 36) as usize {
        return Err(Error::invalid("clip too long for a RIFF container"));
    }

    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&(n_ch as u16).to_le_bytes());
    out.extend_from_slice(&sr.to_le_bytes());
    out.extend_from_slice(&(sr * block_align as u32).to_le_bytes());
    out.extend_from_slice(&block_align.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for i in 0..len {
        for c in channels {
            out.extend_from_slice(&quantize(c.samples()[i]).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn write_wav(path: impl AsRef<Path>, channels: &[&Waveform]) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_wav(channels)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes channel 0 = top, channel 1 = bottom.
pub fn write_wav_stereo(path: impl AsRef<Path>, s: &StereoWaveform) -> Result<()> {
    write_wav(path, &[s.top(), s.bottom()])
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<StereoWaveform> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_wav(&bytes).map_err(|e| match e {
        Error::WavStream(source) => Error::Wav {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })
}

struct Format {
    channels: u16,
    sample_rate: u32,
    block_align: u16,
}

fn le_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn le_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

fn parse_fmt(body: &[u8]) -> Result<Format, WavError> {
    if body.len() < 16 {
        return Err(WavError::MalformedHeader(format!(
            "fmt chunk is {} bytes, need at least 16",
            body.len()
        )));
    }
    let mut tag = le_u16(body, 0);
    let channels = le_u16(body, 2);
    let sample_rate = le_u32(body, 4);
    let block_align = le_u16(body, 12);
    let bits = le_u16(body, 14);
    if tag == FORMAT_EXTENSIBLE {
        // cbSize(2) validBits(2) channelMask(4) subFormat GUID(16)
        if body.len() < 40 {
            return Err(WavError::MalformedHeader(
                "extensible fmt chunk too short".into(),
            ));
        }
        tag = le_u16(body, 24);
    }
    if tag != FORMAT_PCM {
        return Err(WavError::UnsupportedCodec(tag));
    }
    if bits != 16 {
        return Err(WavError::UnsupportedBitDepth(bits));
    }
    if !(1..=2).contains(&channels) {
        return Err(WavError::UnsupportedChannels(channels));
    }
    if sample_rate == 0 {
        return Err(WavError::MalformedHeader("zero sample rate".into()));
    }
    if block_align != 2 * channels {
        return Err(WavError::MalformedHeader(format!(
            "block align {block_align} inconsistent with {channels} x 16-bit"
        )));
    }
    Ok(Format {
        channels,
        sample_rate,
        block_align,
    })
}

/// Decodes a PCM16 WAV image. Mono input is promoted to a stereo pair with
/// identical channels.
pub fn decode_wav(bytes: &[u8]) -> Result<StereoWaveform> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(WavError::MalformedHeader("missing RIFF/WAVE signature".into()).into());
    }
    let mut pos = 12;
    let mut format: Option<Format> = None;
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = le_u32(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let available = bytes.len() - body_start;
        match id {
            b"fmt " => {
                if size > available {
                    return Err(WavError::MalformedHeader("fmt chunk overruns file".into()).into());
                }
                format = Some(parse_fmt(&bytes[body_start..body_start + size])?);
            }
            b"data" => {
                if format.is_none() {
                    return Err(
                        WavError::MalformedHeader("data chunk precedes fmt chunk".into()).into(),
                    );
                }
                if size > available {
                    return Err(WavError::TruncatedData {
                        declared: size,
                        available,
                    }
                    .into());
                }
                data = Some(&bytes[body_start..body_start + size]);
                break;
            }
            _ => {}
        }
        // chunks are word aligned
        pos = body_start.saturating_add(size).saturating_add(size & 1);
    }
    let format = format.ok_or_else(|| WavError::MalformedHeader("no fmt chunk".into()))?;
    let data = data.ok_or_else(|| WavError::MalformedHeader("no data chunk".into()))?;
    if data.len() % format.block_align as usize != 0 {
        return Err(WavError::TruncatedData {
            declared: data.len(),
            available: data.len() - data.len() % format.block_align as usize,
        }
        .into());
    }
    if format.sample_rate != DEFAULT_SAMPLE_RATE {
        log::warn!(
            "WAV sample rate is {} Hz (dataset clips are expected at {} Hz)",
            format.sample_rate,
            DEFAULT_SAMPLE_RATE
        );
    }

    let frames = data.len() / format.block_align as usize;
    let ch = format.channels as usize;
    let mut chans = vec![Vec::with_capacity(frames); ch];
    for frame in data.chunks_exact(format.block_align as usize) {
        for (c, buf) in chans.iter_mut().enumerate() {
            buf.push(dequantize(i16::from_le_bytes([
                frame[2 * c],
                frame[2 * c + 1],
            ])));
        }
    }
    let mut it = chans.into_iter();
    let top = Waveform::new(it.next().unwrap_or_default(), format.sample_rate)?;
    match it.next() {
        Some(bottom) => StereoWaveform::new(top, Waveform::new(bottom, format.sample_rate)?),
        None => Ok(StereoWaveform::duplicated(top)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{generate_cw, pcm16_encode, CwConfig};

    fn header(tag: u16, channels: u16, bits: u16, data_len: u32) -> Vec<u8> {
        let block = channels * bits / 8;
        let mut h = Vec::new();
        h.extend_from_slice(b"RIFF");
        h.extend_from_slice(&(36 + data_len).to_le_bytes());
        h.extend_from_slice(b"WAVE");
        h.extend_from_slice(b"fmt ");
        h.extend_from_slice(&16u32.to_le_bytes());
        h.extend_from_slice(&tag.to_le_bytes());
        h.extend_from_slice(&channels.to_le_bytes());
        h.extend_from_slice(&44_100u32.to_le_bytes());
        h.extend_from_slice(&(44_100 * block as u32).to_le_bytes());
        h.extend_from_slice(&block.to_le_bytes());
        h.extend_from_slice(&bits.to_le_bytes());
        h.extend_from_slice(b"data");
        h.extend_from_slice(&data_len.to_le_bytes());
        h
    }

    #[test]
    fn canonical_header_is_44_bytes() {
        let w = Waveform::new(vec![0.1; 10], 44_100).unwrap();
        let bytes = encode_wav(&[&w, &w]).unwrap();
        assert_eq!(bytes.len(), 44 + 40);
        assert_eq!(&bytes[36..40], b"data");
        assert_eq!(le_u32(&bytes, 40), 40);
    }

    #[test]
    fn stereo_cw_round_trip_is_bit_identical() {
        let top = generate_cw(&CwConfig::default()).unwrap();
        let bottom = generate_cw(&CwConfig {
            amplitude: 0.3,
            ..CwConfig::default()
        })
        .unwrap();
        let bytes = encode_wav(&[&top, &bottom]).unwrap();
        let back = decode_wav(&bytes).unwrap();
        assert_eq!(back.len(), 132_300);
        assert_eq!(encode_wav(&[back.top(), back.bottom()]).unwrap(), bytes);
        assert_eq!(pcm16_encode(back.top()), pcm16_encode(&top));
    }

    #[test]
    fn mono_promoted_to_duplicated_stereo() {
        let samples: Vec<i16> = vec![0, 1000, -2000, 32767];
        let mut bytes = header(1, 1, 16, 8);
        for s in &samples {
            bytes.extend_from_slice(&s.to_le_bytes());
        }
        let s = decode_wav(&bytes).unwrap();
        assert_eq!(s.top(), s.bottom());
        assert_eq!(s.top().samples()[1], 1000.0 / 32767.0);
    }

    #[test]
    fn eight_bit_rejected() {
        let mut bytes = header(1, 1, 8, 4);
        bytes.extend_from_slice(&[128, 128, 128, 128]);
        assert!(matches!(
            decode_wav(&bytes),
            Err(Error::WavStream(WavError::UnsupportedBitDepth(8)))
        ));
    }

    #[test]
    fn float_codec_rejected() {
        let mut bytes = header(3, 1, 16, 2);
        bytes.extend_from_slice(&[0, 0]);
        assert!(matches!(
            decode_wav(&bytes),
            Err(Error::WavStream(WavError::UnsupportedCodec(3)))
        ));
    }

    #[test]
    fn truncated_data_reported() {
        let mut bytes = header(1, 2, 16, 400);
        bytes.extend_from_slice(&[0; 100]);
        assert!(matches!(
            decode_wav(&bytes),
            Err(Error::WavStream(WavError::TruncatedData {
                declared: 400,
                available: 100
            }))
        ));
    }

    #[test]
    fn malformed_signature_reported() {
        assert!(matches!(
            decode_wav(b"RIFX\0\0\0\0WAVE"),
            Err(Error::WavStream(WavError::MalformedHeader(_)))
        ));
        assert!(matches!(
            decode_wav(b"RI"),
            Err(Error::WavStream(WavError::MalformedHeader(_)))
        ));
    }

    #[test]
    fn unknown_chunks_are_skipped() {
        let w = Waveform::new(vec![0.5, -0.5], 44_100).unwrap();
        let canonical = encode_wav(&[&w]).unwrap();
        let mut bytes = canonical[..36].to_vec();
        bytes.extend_from_slice(b"LIST");
        bytes.extend_from_slice(&3u32.to_le_bytes());
        bytes.extend_from_slice(&[1, 2, 3, 0]); // odd size plus pad byte
        bytes.extend_from_slice(&canonical[36..]);
        let s = decode_wav(&bytes).unwrap();
        assert_eq!(
            s.top().samples(),
            decode_wav(&canonical).unwrap().top().samples()
        );
    }

    #[test]
    fn writer_rejects_three_channels() {
        let w = Waveform::new(vec![0.0], 44_100).unwrap();
        assert!(encode_wav(&[&w, &w, &w]).is_err());
        assert!(encode_wav(&[]).is_err());
    }
}
