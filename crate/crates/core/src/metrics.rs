//! Edit distance, character error rate, and ground-truth switch-label
//! generation from paired ASR outputs.

use std::fmt;
use std::path::Path;

use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

/// A transcript normalized for scoring: NFC, trimmed, internal whitespace
/// runs collapsed to a single space. Comparison is code-point-wise.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Transcript {
    chars: Vec<char>,
}

impl Transcript {
    pub fn new(text: &str) -> Self {
        let normalized: String = text.nfc().collect();
        let mut chars = Vec::with_capacity(normalized.len());
        let mut pending_space = false;
        for c in normalized.chars() {
            if c.is_whitespace() {
                if !chars.is_empty() {
                    pending_space = true;
                }
            } else {
                if pending_space {
                    chars.push(' ');
                    pending_space = false;
                }
                chars.push(c);
            }
        }
        Transcript { chars }
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }
}

impl fmt::Display for Transcript {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.chars {
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

/// Levenshtein distance with unit insertion/deletion/substitution costs.
pub fn edit_distance(a: &Transcript, b: &Transcript) -> usize {
    let (short, long) = if a.len() <= b.len() {
        (a.chars(), b.chars())
    } else {
        (b.chars(), a.chars())
    };
    if short.is_empty() {
        return long.len();
    }
    let m = short.len();
    let mut prev: Vec<usize> = (0..=m).collect();
    let mut curr = vec![0usize; m + 1];
    for (i, lc) in long.iter().enumerate() {
        curr[0] = i + 1;
        for (j, sc) in short.iter().enumerate() {
            let cost = usize::from(lc != sc);
            curr[j + 1] = (prev[j + 1] + 1).min(curr[j] + 1).min(prev[j] + cost);
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[m]
}

/// Character error rate: edit distance divided by reference length. Can
/// exceed 1.0 for hypotheses longer than the reference.
pub fn cer(reference: &Transcript, hypothesis: &Transcript) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::invalid("CER reference transcript is empty"));
    }
    Ok(edit_distance(reference, hypothesis) as f64 / reference.len() as f64)
}

/// Ground-truth switching target: `[1, 0]` when ASR on the observed mixture
/// was strictly better, `[0, 1]` otherwise. `tie` marks equal CERs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwitchLabel {
    pub p: [f64; 2],
    pub tie: bool,
}

impl SwitchLabel {
    pub fn mixture_better() -> Self {
        SwitchLabel {
            p: [1.0, 0.0],
            tie: false,
        }
    }

    pub fn enhanced_better(tie: bool) -> Self {
        SwitchLabel {
            p: [0.0, 1.0],
            tie,
        }
    }

    /// Index of the one-hot class: 0 = mixture better, 1 = enhanced
    /// better-or-tie.
    pub fn class(&self) -> usize {
        usize::from(self.p[1] == 1.0)
    }
}

/// Labels one utterance from the reference and the two hypotheses.
pub fn make_label(
    reference: &Transcript,
    hyp_mixture: &Transcript,
    hyp_enhanced: &Transcript,
) -> Result<(SwitchLabel, f64, f64)> {
    let cer_mixture = cer(reference, hyp_mixture)?;
    let cer_enhanced = cer(reference, hyp_enhanced)?;
    let label = if cer_mixture < cer_enhanced {
        SwitchLabel::mixture_better()
    } else {
        SwitchLabel::enhanced_better(cer_mixture == cer_enhanced)
    };
    Ok((label, cer_mixture, cer_enhanced))
}

/// One labeled utterance of the switching dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledRecord {
    pub utt_id: String,
    pub label: SwitchLabel,
    pub cer_mixture: f64,
    pub cer_enhanced: f64,
}

/// Drops tie records, preserving order.
pub fn filter_ties(records: &[LabeledRecord]) -> Vec<LabeledRecord> {
    records.iter().filter(|r| !r.label.tie).cloned().collect()
}

/// Writes the labeled dataset: one record per line with tab-separated
/// utterance id, label bit, tie bit, mixture CER, enhanced CER.
pub fn write_labels(path: &Path, records: &[LabeledRecord]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&format!(
            "{}\t{}\t{}\t{:.6}\t{:.6}\n",
            r.utt_id,
            r.label.class(),
            u8::from(r.label.tie),
            r.cer_mixture,
            r.cer_enhanced
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_labels(path: &Path) -> Result<Vec<LabeledRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(Error::format(
                path,
                format!("line {}: expected 5 tab-separated fields", lineno + 1),
            ));
        }
        let parse_f = |s: &str, what: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::format(path, format!("line {}: bad {what}", lineno + 1)))
        };
        let class: u8 = fields[1]
            .parse()
            .map_err(|_| Error::format(path, format!("line {}: bad label bit", lineno + 1)))?;
        let tie: u8 = fields[2]
            .parse()
            .map_err(|_| Error::format(path, format!("line {}: bad tie bit", lineno + 1)))?;
        let label = match (class, tie) {
            (0, 0) => SwitchLabel::mixture_better(),
            (1, t) => SwitchLabel::enhanced_better(t == 1),
            _ => {
                return Err(Error::format(
                    path,
                    format!("line {}: inconsistent label/tie bits", lineno + 1),
                ))
            }
        };
        records.push(LabeledRecord {
            utt_id: fields[0].to_string(),
            label,
            cer_mixture: parse_f(fields[3], "mixture CER")?,
            cer_enhanced: parse_f(fields[4], "enhanced CER")?,
        });
    }
    Ok(records)
}
