//! Log-mel feature extraction and pairing of enhanced/observed features for
//! the switching model.
//!
//! Frames are 256 samples wide with a 128-sample hop, Hann windowed, run
//! through a 256-point FFT and a 256-filter triangular mel bank spanning
//! 0-8000 Hz. With only 129 unique spectral bins the filters overlap
//! heavily; each triangle's half-width is floored at one FFT bin so that
//! every filter keeps at least one nonzero weight.

use std::path::Path;
use std::sync::Arc;

use ndarray::{concatenate, Array2, Axis};
use rustfft::{num_complex::Complex, Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::signal::Waveform;

pub const WINDOW_SIZE: usize = 256;
pub const HOP_SIZE: usize = 128;
pub const DEFAULT_N_MELS: usize = 256;
const LOG_FLOOR: f64 = 1e-10;
const MAX_FREQ_HZ: f64 = 8000.0;

/// Frame count for an input of `len` samples: floor((T - 256)/128) + 1.
pub fn frame_count(len: usize) -> Result<usize> {
    if len < WINDOW_SIZE {
        return Err(Error::invalid(format!(
            "input of {len} samples is shorter than one {WINDOW_SIZE}-sample frame"
        )));
    }
    Ok((len - WINDOW_SIZE) / HOP_SIZE + 1)
}

/// A frames x dims matrix of finite feature values.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    values: Array2<f64>,
}

impl FeatureMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::invalid("feature matrix must be non-empty"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("feature matrix contains non-finite values"));
        }
        Ok(FeatureMatrix { values })
    }

    pub fn frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn dims(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Log-mel extractor with a precomputed window, FFT plan, and filter bank.
pub struct LogMelExtractor {
    n_mels: usize,
    window: Vec<f64>,
    // Per filter: (first bin index, weights over consecutive bins).
    filters: Vec<(usize, Vec<f64>)>,
    centers_hz: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl LogMelExtractor {
    pub fn new(n_mels: usize) -> Self {
        let window: Vec<f64> = (0..WINDOW_SIZE)
            .map(|n| {
                0.5 * (1.0 - (2.0 * std::f64::consts::PI * n as f64 / WINDOW_SIZE as f64).cos())
            })
            .collect();
        let n_bins = WINDOW_SIZE / 2 + 1;
        let bin_hz = crate::signal::SAMPLE_RATE as f64 / WINDOW_SIZE as f64;

        let mel_max = hz_to_mel(MAX_FREQ_HZ);
        let grid: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(mel_max * i as f64 / (n_mels + 1) as f64))
            .collect();

        let mut filters = Vec::with_capacity(n_mels);
        let mut centers_hz = Vec::with_capacity(n_mels);
        for m in 0..n_mels {
            let center = grid[m + 1];
            // Floor each half-width at one bin so narrow low-frequency
            // triangles still cover a bin center.
            let left = grid[m].min(center - bin_hz);
            let right = grid[m + 2].max(center + bin_hz);
            let mut first_bin = None;
            let mut weights = Vec::new();
            for k in 0..n_bins {
                let f = k as f64 * bin_hz;
                let w = ((f - left) / (center - left))
                    .min((right - f) / (right - center))
                    .min(1.0);
                if w > 0.0 {
                    if first_bin.is_none() {
                        first_bin = Some(k);
                    }
                    weights.push(w);
                } else if first_bin.is_some() {
                    break;
                }
            }
            // Every filter covers at least the bin nearest its center.
            let first_bin = first_bin.expect("mel filter with no nonzero weight");
            filters.push((first_bin, weights));
            centers_hz.push(center);
        }

        let fft = FftPlanner::new().plan_fft_forward(WINDOW_SIZE);
        LogMelExtractor {
            n_mels,
            window,
            filters,
            centers_hz,
            fft,
        }
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    /// Center frequency of each mel filter in Hz.
    pub fn filter_centers_hz(&self) -> &[f64] {
        &self.centers_hz
    }

    /// Filter weights as a dense (n_mels x n_bins) matrix.
    pub fn filter_matrix(&self) -> Array2<f64> {
        let n_bins = WINDOW_SIZE / 2 + 1;
        let mut mat = Array2::zeros((self.n_mels, n_bins));
        for (m, (first, weights)) in self.filters.iter().enumerate() {
            for (off, w) in weights.iter().enumerate() {
                mat[[m, first + off]] = *w;
            }
        }
        mat
    }

    /// Extracts log-mel features: per frame, windowed power spectrum through
    /// the mel bank, then ln(energy + 1e-10).
    pub fn logmel(&self, wave: &Waveform) -> Result<FeatureMatrix> {
        let samples = wave.samples();
        let frames = frame_count(samples.len())?;
        let n_bins = WINDOW_SIZE / 2 + 1;
        let mut out = Array2::zeros((frames, self.n_mels));
        let mut buf = vec![Complex::new(0.0, 0.0); WINDOW_SIZE];
        let mut power = vec![0.0f64; n_bins];
        for t in 0..frames {
            let start = t * HOP_SIZE;
            for n in 0..WINDOW_SIZE {
                buf[n] = Complex::new(samples[start + n] * self.window[n], 0.0);
            }
            self.fft.process(&mut buf);
            for (k, p) in power.iter_mut().enumerate() {
                *p = buf[k].norm_sqr();
            }
            for (m, (first, weights)) in self.filters.iter().enumerate() {
                let e: f64 = weights
                    .iter()
                    .zip(&power[*first..])
                    .map(|(w, p)| w * p)
                    .sum();
                out[[t, m]] = (e + LOG_FLOOR).ln();
            }
        }
        FeatureMatrix::new(out)
    }

    /// Frame-wise concatenation [logmel(enhanced) ‖ logmel(observed)].
    pub fn pair_features(
        &self,
        observed: &Waveform,
        enhanced: &Waveform,
    ) -> Result<FeatureMatrix> {
        if observed.len() != enhanced.len() {
            return Err(Error::invalid(format!(
                "length mismatch: observed {} vs enhanced {}",
                observed.len(),
                enhanced.len()
            )));
        }
        let fe = self.logmel(enhanced)?;
        let fo = self.logmel(observed)?;
        let paired = concatenate(Axis(1), &[fe.values().view(), fo.values().view()])
            .expect("frame counts match for equal-length inputs");
        FeatureMatrix::new(paired)
    }
}

/// In-place per-corpus mean/variance normalization across all frames of all
/// matrices. Off by default in the pipeline; exposed for experiments.
pub fn normalize_corpus(features: &mut [FeatureMatrix]) {
    let dims = match features.first() {
        Some(f) => f.dims(),
        None => return,
    };
    let mut mean = vec![0.0f64; dims];
    let mut count = 0usize;
    for f in features.iter() {
        for row in f.values.rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        count += f.frames();
    }
    for m in mean.iter_mut() {
        *m /= count as f64;
    }
    let mut var = vec![0.0f64; dims];
    for f in features.iter() {
        for row in f.values.rows() {
            for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
                let d = x - m;
                *v += d * d;
            }
        }
    }
    let std: Vec<f64> = var
        .iter()
        .map(|v| (v / count as f64).sqrt().max(1e-12))
        .collect();
    for f in features.iter_mut() {
        for mut row in f.values.rows_mut() {
            for ((x, m), s) in row.iter_mut().zip(&mean).zip(&std) {
                *x = (*x - m) / s;
            }
        }
    }
}

/// Writes a feature dump: u32 LE frames, u32 LE dims, then row-major f32 LE.
pub fn write_features(path: &Path, features: &FeatureMatrix) -> Result<()> {
    let mut bytes = Vec::with_capacity(8 + features.frames() * features.dims() * 4);
    bytes.extend_from_slice(&(features.frames() as u32).to_le_bytes());
    bytes.extend_from_slice(&(features.dims() as u32).to_le_bytes());
    for v in features.values().iter() {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: &Path) -> Result<FeatureMatrix> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 8 {
        return Err(Error::format(path, "feature dump shorter than header"));
    }
    let frames = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let dims = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let expected = 8 + frames * dims * 4;
    if bytes.len() != expected {
        return Err(Error::format(
            path,
            format!("expected {expected} bytes for {frames}x{dims}, got {}", bytes.len()),
        ));
    }
    let mut values = Array2::zeros((frames, dims));
    for (i, chunk) in bytes[8..].chunks_exact(4).enumerate() {
        values[[i / dims, i % dims]] = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
    }
    FeatureMatrix::new(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn extractor() -> LogMelExtractor {
        LogMelExtractor::new(DEFAULT_N_MELS)
    }

    #[test]
    fn zero_input_hits_log_floor() {
        let w = Waveform::new(vec![0.0; 512]).unwrap();
        let f = extractor().logmel(&w).unwrap();
        assert_eq!(f.frames(), 3);
        assert_eq!(f.dims(), 256);
        for v in f.values().iter() {
            assert_abs_diff_eq!(*v, LOG_FLOOR.ln(), epsilon = 1e-12);
        }
    }

    #[test]
    fn boundary_frame_count() {
        let w = Waveform::new(vec![0.1; 256]).unwrap();
        assert_eq!(extractor().logmel(&w).unwrap().frames(), 1);
        assert!(extractor().logmel(&Waveform::new(vec![0.1; 255]).unwrap()).is_err());
    }

    #[test]
    fn sine_peaks_at_nearest_filter() {
        let ex = extractor();
        let freq = 1000.0;
        let samples: Vec<f64> = (0..2048)
            .map(|n| (2.0 * std::f64::consts::PI * freq * n as f64 / 16000.0).sin() * 0.5)
            .collect();
        let f = ex.logmel(&Waveform::new(samples).unwrap()).unwrap();
        // Nearest filter center computed analytically from the mel grid.
        let nearest = ex
            .filter_centers_hz()
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| {
                (*a - freq).abs().partial_cmp(&(*b - freq).abs()).unwrap()
            })
            .map(|(i, _)| i)
            .unwrap();
        for row in f.values().rows() {
            let argmax = row
                .iter()
                .enumerate()
                .max_by(|(_, a), (_, b)| a.partial_cmp(b).unwrap())
                .map(|(i, _)| i)
                .unwrap();
            assert_eq!(argmax, nearest);
        }
    }

    #[test]
    fn filter_bank_weights_valid() {
        let ex = extractor();
        let mat = ex.filter_matrix();
        assert!(mat.iter().all(|w| w.is_finite() && *w >= 0.0));
        for (m, row) in mat.rows().into_iter().enumerate() {
            assert!(row.iter().any(|w| *w > 0.0), "filter {m} has no nonzero weight");
        }
    }

    #[test]
    fn pair_features_layout() {
        let ex = extractor();
        let a = Waveform::new((0..1024).map(|n| ((n as f64) * 0.01).sin()).collect()).unwrap();
        let b = Waveform::new((0..1024).map(|n| ((n as f64) * 0.03).cos()).collect()).unwrap();

        // Identical inputs: first 256 dims equal last 256 dims per frame.
        let same = ex.pair_features(&a, &a).unwrap();
        assert_eq!(same.frames(), 7);
        assert_eq!(same.dims(), 512);
        for row in same.values().rows() {
            for d in 0..256 {
                assert_eq!(row[d], row[d + 256]);
            }
        }

        // Swapping arguments permutes the two 256-blocks.
        let ab = ex.pair_features(&a, &b).unwrap();
        let ba = ex.pair_features(&b, &a).unwrap();
        for (rab, rba) in ab.values().rows().into_iter().zip(ba.values().rows()) {
            for d in 0..256 {
                assert_eq!(rab[d], rba[d + 256]);
                assert_eq!(rab[d + 256], rba[d]);
            }
        }
    }

    #[test]
    fn pair_features_rejects_length_mismatch() {
        let ex = extractor();
        let a = Waveform::new(vec![0.1; 512]).unwrap();
        let b = Waveform::new(vec![0.1; 640]).unwrap();
        assert!(ex.pair_features(&a, &b).is_err());
    }

    #[test]
    fn prepending_hop_zeros_adds_one_frame() {
        let ex = extractor();
        let n = 1000;
        let base: Vec<f64> = (0..n).map(|k| ((k as f64) * 0.013).sin()).collect();
        let mut padded = vec![0.0; HOP_SIZE];
        padded.extend_from_slice(&base);
        let f0 = ex.logmel(&Waveform::new(base).unwrap()).unwrap();
        let f1 = ex.logmel(&Waveform::new(padded).unwrap()).unwrap();
        assert_eq!(f1.frames(), f0.frames() + 1);
    }

    #[test]
    fn scaling_never_decreases_logmel() {
        let ex = extractor();
        let base: Vec<f64> = (0..1024).map(|k| ((k as f64) * 0.02).sin() * 0.3).collect();
        let w = Waveform::new(base.clone()).unwrap();
        let g = 2.0;
        let scaled = w.scaled(g);
        let f = ex.logmel(&w).unwrap();
        let fs = ex.logmel(&scaled).unwrap();
        let mut strict_seen = false;
        for (a, b) in f.values().iter().zip(fs.values().iter()) {
            assert!(b >= a);
            // Where energy dominates the floor the gain is ~2 ln g.
            if *a > LOG_FLOOR.ln() + 12.0 {
                assert_abs_diff_eq!(b - a, 2.0 * g.ln(), epsilon = 1e-3);
                strict_seen = true;
            }
        }
        assert!(strict_seen);
    }

    #[test]
    fn feature_dump_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.bin");
        let ex = extractor();
        let w = Waveform::new((0..700).map(|k| ((k as f64) * 0.05).sin()).collect()).unwrap();
        let f = ex.logmel(&w).unwrap();
        write_features(&path, &f).unwrap();
        let r = read_features(&path).unwrap();
        assert_eq!(r.frames(), f.frames());
        assert_eq!(r.dims(), f.dims());
        for (a, b) in f.values().iter().zip(r.values().iter()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-5);
        }
        // Truncated dump is rejected.
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(read_features(&path).is_err());
    }

    #[test]
    fn corpus_normalization_zero_mean_unit_var() {
        let ex = extractor();
        let mut feats: Vec<FeatureMatrix> = (0..3)
            .map(|i| {
                let w = Waveform::new(
                    (0..800).map(|k| ((k as f64) * (0.01 + 0.01 * i as f64)).sin()).collect(),
                )
                .unwrap();
                ex.logmel(&w).unwrap()
            })
            .collect();
        normalize_corpus(&mut feats);
        let dims = feats[0].dims();
        let total: usize = feats.iter().map(|f| f.frames()).sum();
        for d in 0..dims {
            let mean: f64 = feats
                .iter()
                .flat_map(|f| f.values().column(d).to_vec())
                .sum::<f64>()
                / total as f64;
            assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-9);
        }
    }
}
