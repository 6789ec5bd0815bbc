//! Rule-based switching: estimate SIR and SNR from enhanced components and
//! a VAD-derived noise power, then switch on a threshold.

use crate::error::{Error, Result};
use crate::features::{frame_count, HOP_SIZE, WINDOW_SIZE};
use crate::policy::{Decision, SwitchChoice};
use crate::signal::{level_db, Waveform};

/// Frames at or above this mean-square level (dB) count as active even when
/// the relative percentile test says otherwise; keeps constant loud signals
/// from being classified as silence.
const VAD_LOUD_DB: f64 = -20.0;
const VAD_TINY: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct RuleConfig {
    /// Decision threshold λ in dB: use the observed mixture when
    /// SIR − SNR ≥ λ.
    pub lambda_db: f64,
    /// Offset above the utterance 10th-percentile frame energy for a frame
    /// to count as speech-active.
    pub vad_energy_floor_db: f64,
    /// Frames appended to the end of each active run.
    pub vad_hangover_frames: usize,
}

impl Default for RuleConfig {
    fn default() -> Self {
        RuleConfig {
            lambda_db: 10.0,
            vad_energy_floor_db: 10.0,
            vad_hangover_frames: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimateSource {
    Estimated,
    Oracle,
}

/// SIR/SNR estimate for one utterance.
#[derive(Debug, Clone, Copy)]
pub struct SirSnrEstimate {
    pub sir_db: f64,
    pub snr_db: f64,
    pub noise_power: f64,
    pub source: EstimateSource,
}

fn frame_energies_db(w: &Waveform) -> Result<Vec<f64>> {
    let frames = frame_count(w.len())?;
    let samples = w.samples();
    Ok((0..frames)
        .map(|t| {
            let frame = &samples[t * HOP_SIZE..t * HOP_SIZE + WINDOW_SIZE];
            let mean_sq = frame.iter().map(|s| s * s).sum::<f64>() / WINDOW_SIZE as f64;
            10.0 * (mean_sq + VAD_TINY).log10()
        })
        .collect())
}

/// Energy-based voice activity detection over 256-sample frames with a
/// 128-sample hop. A frame is active when its log energy exceeds the
/// utterance 10th percentile by `vad_energy_floor_db` (or is loud in
/// absolute terms); active runs are extended by the hangover.
pub fn energy_vad(w: &Waveform, cfg: &RuleConfig) -> Result<Vec<bool>> {
    let energies = frame_energies_db(w)?;
    let mut sorted = energies.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pct_idx = (sorted.len() - 1) / 10;
    let percentile = sorted[pct_idx];
    let threshold = (percentile + cfg.vad_energy_floor_db).min(VAD_LOUD_DB);
    let mut mask: Vec<bool> = energies.iter().map(|e| *e > threshold).collect();
    if cfg.vad_hangover_frames > 0 {
        let mut extend_until = None;
        for t in 0..mask.len() {
            if mask[t] {
                extend_until = Some(t + cfg.vad_hangover_frames);
            } else if let Some(end) = extend_until {
                if t <= end {
                    mask[t] = true;
                }
            }
        }
    }
    Ok(mask)
}

/// Noise power over frames where both speakers are inactive, scaled to the
/// utterance length so it is comparable to full-utterance squared norms.
pub fn estimate_noise_power(
    mixture: &Waveform,
    target_mask: &[bool],
    interf_mask: &[bool],
) -> Result<f64> {
    let frames = frame_count(mixture.len())?;
    if target_mask.len() != frames || interf_mask.len() != frames {
        return Err(Error::invalid(format!(
            "mask length {} / {} does not match frame count {frames}",
            target_mask.len(),
            interf_mask.len()
        )));
    }
    let samples = mixture.samples();
    let mut acc = 0.0;
    let mut count = 0usize;
    for t in 0..frames {
        if !target_mask[t] && !interf_mask[t] {
            let frame = &samples[t * HOP_SIZE..t * HOP_SIZE + WINDOW_SIZE];
            acc += frame.iter().map(|s| s * s).sum::<f64>() / WINDOW_SIZE as f64;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EstimationUnavailable(
            "no frame where both speakers are inactive".into(),
        ));
    }
    Ok(acc / count as f64 * mixture.len() as f64)
}

/// SIR/SNR from the two enhanced signals and an externally estimated noise
/// power.
pub fn estimate_sir_snr(
    enh_target: &Waveform,
    enh_interf: &Waveform,
    noise_power: f64,
) -> Result<SirSnrEstimate> {
    let sir_db = level_db(enh_target.power(), enh_interf.power())?;
    let snr_db = level_db(enh_target.power(), noise_power)?;
    Ok(SirSnrEstimate {
        sir_db,
        snr_db,
        noise_power,
        source: EstimateSource::Estimated,
    })
}

/// The switching rule: keep the observed mixture when SIR − SNR ≥ λ,
/// otherwise use the enhanced signal.
pub fn rule_decide(est: &SirSnrEstimate, cfg: &RuleConfig) -> Decision {
    let choice = if est.sir_db - est.snr_db >= cfg.lambda_db {
        SwitchChoice::UseObserved
    } else {
        SwitchChoice::UseEnhanced
    };
    Decision::new(choice)
}
