//! RIFF PCM WAV read/write: mono, 16 kHz, 16-bit signed little-endian.
//!
//! Integer samples map to [-1, 1) by division by 32768; writing rounds and
//! clamps to the i16 range.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::signal::{Waveform, SAMPLE_RATE};

const I16_SCALE: f64 = 32768.0;

/// Reads a mono 16 kHz 16-bit PCM WAV file.
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_wav(&bytes).map_err(|detail| Error::format(path, detail))
}

fn decode_wav(bytes: &[u8]) -> std::result::Result<Waveform, String> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err("not a RIFF/WAVE file".into());
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_start = pos + 8;
        let body_end = body_start + size;
        if body_end > bytes.len() {
            return Err(format!("chunk '{}' overruns file", String::from_utf8_lossy(id)));
        }
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err("fmt chunk too short".into());
                }
                let audio_format = u16::from_le_bytes(body[0..2].try_into().unwrap());
                let channels = u16::from_le_bytes(body[2..4].try_into().unwrap());
                let sample_rate = u32::from_le_bytes(body[4..8].try_into().unwrap());
                let bits = u16::from_le_bytes(body[14..16].try_into().unwrap());
                fmt = Some((audio_format, channels, sample_rate, bits));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        // Chunks are word-aligned.
        pos = body_end + (size & 1);
    }
    let (audio_format, channels, sample_rate, bits) = fmt.ok_or("missing fmt chunk")?;
    if audio_format != 1 {
        return Err(format!("unsupported audio format {audio_format}, want PCM"));
    }
    if channels != 1 {
        return Err(format!("unsupported channel count {channels}, want mono"));
    }
    if sample_rate != SAMPLE_RATE {
        return Err(format!("unsupported sample rate {sample_rate}, want {SAMPLE_RATE}"));
    }
    if bits != 16 {
        return Err(format!("unsupported bit depth {bits}, want 16"));
    }
    let data = data.ok_or("missing data chunk")?;
    if data.len() % 2 != 0 {
        return Err("data chunk has odd byte length".into());
    }
    let samples: Vec<f64> = data
        .chunks_exact(2)
        .map(|b| i16::from_le_bytes([b[0], b[1]]) as f64 / I16_SCALE)
        .collect();
    Waveform::new(samples).map_err(|e| e.to_string())
}

/// Writes a mono 16 kHz 16-bit PCM WAV file. Samples are scaled by 32768,
/// rounded to nearest, and clamped to the i16 range.
pub fn write_wav(path: &Path, wave: &Waveform) -> Result<()> {
    let mut out = Vec::with_capacity(44 + wave.len() * 2);
    let data_len = (wave.len() * 2) as u32;
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&SAMPLE_RATE.to_le_bytes());
    out.extend_from_slice(&(SAMPLE_RATE * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in wave.samples() {
        let q = (s * I16_SCALE).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&out).map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn round_trip_exact_for_quantized_samples() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let samples: Vec<f64> = (-5..5).map(|k| k as f64 * 1000.0 / I16_SCALE).collect();
        let w = Waveform::new(samples.clone()).unwrap();
        write_wav(&path, &w).unwrap();
        let r = read_wav(&path).unwrap();
        assert_eq!(r.samples(), &samples[..]);
    }

    #[test]
    fn rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.wav");
        std::fs::write(&path, b"not a wav at all").unwrap();
        assert!(matches!(read_wav(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn rejects_truncated() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("good.wav");
        let w = Waveform::new(vec![0.1; 100]).unwrap();
        write_wav(&good, &w).unwrap();
        let bytes = std::fs::read(&good).unwrap();
        let bad = dir.path().join("trunc.wav");
        std::fs::write(&bad, &bytes[..50]).unwrap();
        assert!(read_wav(&bad).is_err());
    }

    proptest! {
        // Quantize once, then the file round trip is the identity.
        #[test]
        fn prop_double_round_trip_stable(raw in proptest::collection::vec(-1.2f64..1.2, 1..256)) {
            let dir = tempfile::tempdir().unwrap();
            let p1 = dir.path().join("p1.wav");
            let p2 = dir.path().join("p2.wav");
            let w = Waveform::new(raw).unwrap();
            write_wav(&p1, &w).unwrap();
            let r1 = read_wav(&p1).unwrap();
            write_wav(&p2, &r1).unwrap();
            let b1 = std::fs::read(&p1).unwrap();
            let b2 = std::fs::read(&p2).unwrap();
            prop_assert_eq!(b1, b2);
        }
    }
}
