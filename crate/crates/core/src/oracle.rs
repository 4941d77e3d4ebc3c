//! Slow reference implementations used to cross-check the fast paths.
//!
//! Everything here is written directly from first principles in f64,
//! favours clarity over speed, and shares no state or helper code with
//! the streaming implementations it checks. Exponential-cost functions
//! are only usable on tiny inputs, which is the point: over a small
//! domain they are obviously correct.

use crate::uma::{classify_point, UmaEventKind};

// ======================================================================
// Aggregation reference
// ======================================================================

#[derive(Debug, Clone)]
pub struct ScanEvent {
    pub kind: UmaEventKind,
    pub frame: usize,
    pub seg_start: usize,
    pub embedding: Vec<f64>,
}

/// Offline re-derivation of the aggregation event stream: classify every
/// interior frame with the three-point rule (suppressing frames equal to
/// their predecessor), append the closing valley, then compute each
/// event's aggregate by direct summation over its span.
#[must_use]
pub fn aggregate_by_scan(frames: &[Vec<f32>], alphas: &[f64]) -> Vec<ScanEvent> {
    assert_eq!(frames.len(), alphas.len());
    let t = alphas.len();
    if t == 0 {
        return Vec::new();
    }

    let mut fired: Vec<(usize, UmaEventKind)> = Vec::new();
    for i in 1..t.saturating_sub(1) {
        if alphas[i] == alphas[i - 1] {
            continue;
        }
        if let Some(kind) =
            classify_point(alphas[i - 1] as f32, alphas[i] as f32, alphas[i + 1] as f32)
        {
            fired.push((i, kind));
        }
    }
    fired.push((t - 1, UmaEventKind::Valley));

    let span_average = |lo: usize, hi: usize| -> Vec<f64> {
        let d = frames[0].len();
        let mut num = vec![0.0f64; d];
        let mut den = 0.0f64;
        for i in lo..=hi {
            for (n, &x) in num.iter_mut().zip(&frames[i]) {
                *n += alphas[i] * x as f64;
            }
            den += alphas[i];
        }
        num.iter().map(|n| n / den).collect()
    };

    let mut out = Vec::with_capacity(fired.len());
    let mut seg_start = 0usize;
    for (frame, kind) in fired {
        out.push(ScanEvent {
            kind,
            frame,
            seg_start,
            embedding: span_average(seg_start, frame),
        });
        if kind == UmaEventKind::Valley {
            seg_start = frame;
        }
    }
    out
}

// ======================================================================
// Alignment-loss reference
// ======================================================================

/// Removes repeats, then blanks: the collapse that maps a frame-level
/// path to its label sequence.
#[must_use]
pub fn collapse_path(path: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &s in path {
        if Some(s) != prev && s != blank {
            out.push(s);
        }
        prev = Some(s);
    }
    out
}

/// Alignment loss by full enumeration: walk all V^T frame paths, sum the
/// probability of every path that collapses to `labels`, and return the
/// negative log of the total. Infeasible label sequences come back as
/// +infinity. `log_probs` is row-per-frame, already log-normalized.
#[must_use]
pub fn alignment_loss_by_enumeration(
    log_probs: &[Vec<f64>],
    labels: &[usize],
    blank: usize,
) -> f64 {
    let t = log_probs.len();
    let v = log_probs[0].len();
    let mut total = 0.0f64;
    let mut path = vec![0usize; t];
    loop {
        if collapse_path(&path, blank) == labels {
            total += path
                .iter()
                .enumerate()
                .map(|(i, &s)| log_probs[i][s])
                .sum::<f64>()
                .exp();
        }
        // Odometer increment over the V^T path space.
        let mut pos = 0;
        loop {
            if pos == t {
                return if total > 0.0 { -total.ln() } else { f64::INFINITY };
            }
            path[pos] += 1;
            if path[pos] < v {
                break;
            }
            path[pos] = 0;
            pos += 1;
        }
    }
}

// ======================================================================
// Tests
// ======================================================================
