//! Wall-clock scaling measurements for the encoder recurrence.
//!
//! The recurrence does constant work per frame, so doubling the input
//! length should roughly double its runtime. To make that visible the
//! harness times the scan at a ladder of lengths next to a deliberately
//! naive full self-attention pass over the same lengths, whose cost
//! grows with the square of the length. Medians over repeated runs keep
//! scheduler noise from polluting individual points.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{PipelineError, Result};
use crate::ssm::{ssm_scan, SsmCoreParams};
use crate::weights::{init_random, ModelConfig};

/// Head width of the attention reference. Kept small so the quadratic
/// term, not the per-pair dot product, dominates.
pub const ATTENTION_HEAD_DIM: usize = 8;

// ======================================================================
// Measurements
// ======================================================================

/// One measured ladder point: sequence length, median scan time, median
/// attention-reference time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingPoint {
    pub len: usize,
    pub encoder_ms: f64,
    pub attention_ms: f64,
}

/// Median of a sample set. Averages the middle pair on even counts.
#[must_use]
pub fn median_ms(samples: &mut [f64]) -> f64 {
    assert!(!samples.is_empty(), "median of no samples");
    samples.sort_by(|a, b| a.partial_cmp(b).expect("finite timings"));
    let mid = samples.len() / 2;
    if samples.len() % 2 == 1 {
        samples[mid]
    } else {
        0.5 * (samples[mid - 1] + samples[mid])
    }
}

fn time_median_ms(reps: usize, mut work: impl FnMut()) -> f64 {
    let mut samples = Vec::with_capacity(reps);
    for _ in 0..reps {
        let start = Instant::now();
        work();
        samples.push(start.elapsed().as_secs_f64() * 1e3);
    }
    median_ms(&mut samples)
}

/// Full softmax attention with no caching or blocking: for every query
/// position, score against every position, normalize, mix the values.
/// Quadratic in the sequence length by construction.
#[must_use]
pub fn naive_attention(q: &[Vec<f32>], k: &[Vec<f32>], v: &[Vec<f32>]) -> Vec<Vec<f32>> {
    let t = q.len();
    let dh = if t == 0 { 0 } else { q[0].len() };
    let scale = 1.0 / (dh.max(1) as f32).sqrt();
    let mut out = Vec::with_capacity(t);
    let mut scores = vec![0.0f32; t];
    for qi in q {
        for (s, ki) in scores.iter_mut().zip(k) {
            let mut dot = 0.0f32;
            for (a, b) in qi.iter().zip(ki) {
                dot += a * b;
            }
            *s = dot * scale;
        }
        let max = scores.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let mut z = 0.0f32;
        for s in scores.iter_mut() {
            *s = (*s - max).exp();
            z += *s;
        }
        let mut row = vec![0.0f32; dh];
        for (s, vi) in scores.iter().zip(v) {
            let w = s / z;
            for (r, x) in row.iter_mut().zip(vi) {
                *r += w * x;
            }
        }
        out.push(row);
    }
    out
}

/// Times the encoder recurrence and the attention reference at each
/// requested length. Reports the median of `reps` runs per point; the
/// weights and inputs are drawn once per length from `seed`.
pub fn run_scaling(lengths: &[usize], reps: usize, seed: u64) -> Result<Vec<ScalingPoint>> {
    if reps == 0 {
        return Err(PipelineError::InvalidConfig(
            "benchmark needs at least one repetition".to_string(),
        ));
    }
    let cfg = ModelConfig::with_dims(64, 2, 16);
    let bundle = init_random(&cfg, seed)
        .map_err(|e| PipelineError::InvalidConfig(format!("benchmark weights: {e}")))?;
    let core = SsmCoreParams::bind(&cfg, &bundle, 0)
        .map_err(|e| PipelineError::InvalidConfig(format!("benchmark weights: {e}")))?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xbe9c_4a11);
    let mut points = Vec::with_capacity(lengths.len());
    for &len in lengths {
        if len == 0 {
            return Err(PipelineError::InvalidConfig(
                "benchmark length must be positive".to_string(),
            ));
        }
        let inner = core.inner_dim();
        let u_seq: Vec<Vec<f32>> = (0..len)
            .map(|_| (0..inner).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let encoder_ms = time_median_ms(reps, || {
            let out = ssm_scan(&core, &u_seq).expect("benchmark scan");
            std::hint::black_box(out.len());
        });

        let mk = |rng: &mut ChaCha8Rng| -> Vec<Vec<f32>> {
            (0..len)
                .map(|_| {
                    (0..ATTENTION_HEAD_DIM)
                        .map(|_| rng.gen_range(-1.0..1.0))
                        .collect()
                })
                .collect()
        };
        let (q, k, v) = (mk(&mut rng), mk(&mut rng), mk(&mut rng));
        let attention_ms = time_median_ms(reps, || {
            let out = naive_attention(&q, &k, &v);
            std::hint::black_box(out.len());
        });

        points.push(ScalingPoint {
            len,
            encoder_ms,
            attention_ms,
        });
    }
    Ok(points)
}

// ======================================================================
// Ratio analysis
// ======================================================================

/// Runtime growth across one length doubling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoublingRatio {
    pub from_len: usize,
    pub to_len: usize,
    pub encoder_ratio: f64,
    pub attention_ratio: f64,
}

/// Ratios between consecutive points whose lengths exactly double.
/// Non-doubling neighbours are skipped rather than interpolated.
#[must_use]
pub fn doubling_ratios(points: &[ScalingPoint]) -> Vec<DoublingRatio> {
    points
        .windows(2)
        .filter(|w| w[1].len == 2 * w[0].len)
        .map(|w| DoublingRatio {
            from_len: w[0].len,
            to_len: w[1].len,
            encoder_ratio: w[1].encoder_ms / w[0].encoder_ms,
            attention_ratio: w[1].attention_ms / w[0].attention_ms,
        })
        .collect()
}

/// CSV rendering: header plus one row per measured point.
#[must_use]
pub fn format_csv(points: &[ScalingPoint]) -> String {
    let mut out = String::from("T,encoder_ms,attention_reference_ms\n");
    for p in points {
        out.push_str(&format!(
            "{},{:.3},{:.3}\n",
            p.len, p.encoder_ms, p.attention_ms
        ));
    }
    out
}

// ======================================================================
// Tests
// ======================================================================
