//! Alignment loss over frame-level label distributions.
//!
//! The loss marginalizes over every frame path that collapses (repeats
//! merged, then blanks removed) to the target label sequence, using the
//! standard forward recursion over the blank-extended label string in
//! log space. A label sequence no path can produce has probability zero
//! and comes back as +infinity rather than an error: infeasibility is a
//! property of the data, not a misuse of the API.
//!
//! Also hosts the greedy frame-level decode used for quick sanity reads
//! of encoder output: argmax per frame, then the same collapse.

use crate::error::{PipelineError, Result};
use crate::math::argmax;

/// Log-domain sentinel for "no path": far enough down that adding real
/// log-probabilities to it never climbs back into the plausible range,
/// without the NaN hazards of arithmetic on true infinities.
const LOG_ZERO: f64 = -1e30;

/// Anything at or below this is treated as log-zero when deciding
/// whether a final score means "unreachable".
const LOG_ZERO_GATE: f64 = -1e29;

fn log_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi <= LOG_ZERO_GATE {
        LOG_ZERO
    } else {
        hi + (lo - hi).exp().ln_1p()
    }
}

/// Log-softmax of one row of raw scores; a convenience for callers that
/// produce logits.
#[must_use]
pub fn log_softmax(row: &[f32]) -> Vec<f32> {
    let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
    let denom = row.iter().map(|&v| (v as f64 - max).exp()).sum::<f64>().ln();
    row.iter().map(|&v| (v as f64 - max - denom) as f32).collect()
}

/// Negative log-probability of `labels` under per-frame log
/// distributions `log_probs` (row per frame). Returns +infinity when no
/// frame path can produce the labels.
pub fn ctc_loss(log_probs: &[Vec<f32>], labels: &[usize], blank: usize) -> Result<f64> {
    if log_probs.is_empty() {
        return Err(PipelineError::EmptySegment);
    }
    let v = log_probs[0].len();
    if blank >= v {
        return Err(PipelineError::InvalidConfig(format!(
            "blank id {blank} outside vocabulary of {v}"
        )));
    }
    for (t, row) in log_probs.iter().enumerate() {
        if row.len() != v {
            return Err(PipelineError::DimMismatch {
                stage: "alignment loss",
                expected: v,
                actual: row.len(),
            });
        }
        if row.iter().any(|p| p.is_nan()) {
            return Err(PipelineError::NonFinite {
                stage: "alignment loss",
                frame: t,
            });
        }
    }
    for &l in labels {
        if l == blank {
            return Err(PipelineError::InvalidConfig(
                "labels must not contain the blank id".into(),
            ));
        }
        if l >= v {
            return Err(PipelineError::InvalidConfig(format!(
                "label id {l} outside vocabulary of {v}"
            )));
        }
    }

    // Blank-extended string: blank, l1, blank, l2, ..., blank.
    let s_len = 2 * labels.len() + 1;
    let ext = |s: usize| -> usize {
        if s % 2 == 0 {
            blank
        } else {
            labels[s / 2]
        }
    };

    let lp = |t: usize, sym: usize| -> f64 {
        let p = log_probs[t][sym] as f64;
        if p <= LOG_ZERO_GATE {
            LOG_ZERO
        } else {
            p
        }
    };

    let mut alpha = vec![LOG_ZERO; s_len];
    alpha[0] = lp(0, blank);
    if s_len > 1 {
        alpha[1] = lp(0, ext(1));
    }
    let mut next = vec![LOG_ZERO; s_len];
    for t in 1..log_probs.len() {
        for s in 0..s_len {
            let mut acc = alpha[s];
            if s >= 1 {
                acc = log_add(acc, alpha[s - 1]);
            }
            // Skipping over the separating blank is only legal between
            // distinct labels.
            if s >= 2 && ext(s) != blank && ext(s) != ext(s - 2) {
                acc = log_add(acc, alpha[s - 2]);
            }
            next[s] = if acc <= LOG_ZERO_GATE {
                LOG_ZERO
            } else {
                acc + lp(t, ext(s))
            };
        }
        std::mem::swap(&mut alpha, &mut next);
    }

    let mut total = alpha[s_len - 1];
    if s_len > 1 {
        total = log_add(total, alpha[s_len - 2]);
    }
    if total <= LOG_ZERO_GATE {
        Ok(f64::INFINITY)
    } else {
        Ok(-total)
    }
}

/// Argmax per frame (ties to the lowest id), repeats merged, blanks
/// dropped.
#[must_use]
pub fn greedy_labels(rows: &[Vec<f32>], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for row in rows {
        let s = argmax(row);
        if Some(s) != prev && s != blank {
            out.push(s);
        }
        prev = Some(s);
    }
    out
}

// ======================================================================
// Tests
// ======================================================================
