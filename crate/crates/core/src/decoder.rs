//! Causal self-attention decoder over aggregated token embeddings.
//!
//! Each incoming embedding is tagged with a sinusoidal position, run
//! through pre-norm attention blocks (multi-head attention over all
//! embeddings seen so far, then a ReLU feed-forward, both residual), and
//! projected to vocabulary logits. The per-stream key/value cache makes
//! one call cost O(position) instead of re-running the whole prefix.
//!
//! Speculative decoding needs to try a step and take it back: `snapshot`
//! captures the cache length and `restore` truncates back to it. A
//! snapshot is bound to the state it came from, so crossing streams or
//! restoring to a point the cache no longer contains is an error rather
//! than silent corruption.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{PipelineError, Result};
use crate::math::{layer_norm_into, matvec_into};
use crate::weights::{BundleError, ModelConfig, TensorBundle};

static NEXT_STREAM_ID: AtomicU64 = AtomicU64::new(1);

// ======================================================================
// Parameters
// ======================================================================

struct DecBlockParams<'a> {
    norm1_g: &'a [f32],
    q_w: &'a [f32],
    k_w: &'a [f32],
    v_w: &'a [f32],
    o_w: &'a [f32],
    norm2_g: &'a [f32],
    ff_w1: &'a [f32],
    ff_w2: &'a [f32],
}

pub struct DecoderParams<'a> {
    blocks: Vec<DecBlockParams<'a>>,
    posenc: &'a [f32],
    norm_out_g: &'a [f32],
    out_w: &'a [f32],
    d: usize,
    heads: usize,
    ff: usize,
    vocab: usize,
    max_positions: usize,
}

impl<'a> DecoderParams<'a> {
    pub fn bind(
        cfg: &ModelConfig,
        bundle: &'a TensorBundle,
    ) -> std::result::Result<Self, BundleError> {
        let d = cfg.model_dim;
        let ff = cfg.decoder_ff;
        let blocks = (0..cfg.decoder_blocks)
            .map(|i| {
                Ok(DecBlockParams {
                    norm1_g: bundle.expect(&format!("dec.{i}.norm1.g"), &[d])?.data(),
                    q_w: bundle.expect(&format!("dec.{i}.attn.q.w"), &[d, d])?.data(),
                    k_w: bundle.expect(&format!("dec.{i}.attn.k.w"), &[d, d])?.data(),
                    v_w: bundle.expect(&format!("dec.{i}.attn.v.w"), &[d, d])?.data(),
                    o_w: bundle.expect(&format!("dec.{i}.attn.o.w"), &[d, d])?.data(),
                    norm2_g: bundle.expect(&format!("dec.{i}.norm2.g"), &[d])?.data(),
                    ff_w1: bundle.expect(&format!("dec.{i}.ff.w1"), &[ff, d])?.data(),
                    ff_w2: bundle.expect(&format!("dec.{i}.ff.w2"), &[d, ff])?.data(),
                })
            })
            .collect::<std::result::Result<_, BundleError>>()?;
        Ok(DecoderParams {
            blocks,
            posenc: bundle.expect("dec.posenc", &[cfg.max_positions, d])?.data(),
            norm_out_g: bundle.expect("dec.norm_out.g", &[d])?.data(),
            out_w: bundle.expect("dec.out.w", &[cfg.vocab_size, d])?.data(),
            d,
            heads: cfg.decoder_heads,
            ff,
            vocab: cfg.vocab_size,
            max_positions: cfg.max_positions,
        })
    }

    #[must_use]
    pub fn vocab_size(&self) -> usize {
        self.vocab
    }
}

// ======================================================================
// State, snapshots
// ======================================================================

struct LayerCache {
    keys: Vec<f32>,
    values: Vec<f32>,
}

pub struct DecoderState {
    layers: Vec<LayerCache>,
    position: usize,
    stream_id: u64,
}

/// A restore point: the cache length at the moment it was taken, bound
/// to the owning state.
#[derive(Debug, Clone, Copy)]
pub struct Snapshot {
    position: usize,
    stream_id: u64,
}

impl Snapshot {
    #[must_use]
    pub fn position(&self) -> usize {
        self.position
    }
}

impl DecoderState {
    #[must_use]
    pub fn new(p: &DecoderParams) -> Self {
        DecoderState {
            layers: (0..p.blocks.len())
                .map(|_| LayerCache {
                    keys: Vec::new(),
                    values: Vec::new(),
                })
                .collect(),
            position: 0,
            stream_id: NEXT_STREAM_ID.fetch_add(1, Ordering::Relaxed),
        }
    }

    /// Embeddings decoded so far.
    #[must_use]
    pub fn position(&self) -> usize {
        self.position
    }

    #[must_use]
    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            position: self.position,
            stream_id: self.stream_id,
        }
    }

    /// Rolls the cache back to where the snapshot was taken. Snapshots
    /// from another state, or ones describing a longer cache than this
    /// state still holds, are rejected.
    pub fn restore(&mut self, snap: Snapshot, d: usize) -> Result<()> {
        if snap.stream_id != self.stream_id || snap.position > self.position {
            return Err(PipelineError::SnapshotMismatch);
        }
        for layer in &mut self.layers {
            layer.keys.truncate(snap.position * d);
            layer.values.truncate(snap.position * d);
        }
        self.position = snap.position;
        Ok(())
    }
}

// ======================================================================
// Stepping
// ======================================================================

/// Decodes one embedding: appends it to the cache and returns the
/// vocabulary logits conditioned on everything decoded so far.
pub fn decoder_step(p: &DecoderParams, state: &mut DecoderState, c: &[f32]) -> Result<Vec<f32>> {
    if c.len() != p.d {
        return Err(PipelineError::DimMismatch {
            stage: "decoder",
            expected: p.d,
            actual: c.len(),
        });
    }
    if state.position >= p.max_positions {
        return Err(PipelineError::PositionOverflow {
            position: state.position,
            limit: p.max_positions,
        });
    }
    if c.iter().any(|v| !v.is_finite()) {
        return Err(PipelineError::NonFinite {
            stage: "decoder",
            frame: state.position,
        });
    }

    let d = p.d;
    let pos = state.position;
    let head_dim = d / p.heads;
    let scale = 1.0 / (head_dim as f64).sqrt();

    let mut x: Vec<f32> = c
        .iter()
        .zip(&p.posenc[pos * d..(pos + 1) * d])
        .map(|(a, b)| a + b)
        .collect();

    let mut normed = vec![0.0f32; d];
    let mut q = vec![0.0f32; d];
    let mut k = vec![0.0f32; d];
    let mut v = vec![0.0f32; d];
    let mut ctx = vec![0.0f32; d];
    let mut proj = vec![0.0f32; d];
    let mut hidden = vec![0.0f32; p.ff];

    for (block, cache) in p.blocks.iter().zip(state.layers.iter_mut()) {
        layer_norm_into(&x, block.norm1_g, &mut normed);
        matvec_into(block.q_w, &normed, &mut q);
        matvec_into(block.k_w, &normed, &mut k);
        matvec_into(block.v_w, &normed, &mut v);
        cache.keys.extend_from_slice(&k);
        cache.values.extend_from_slice(&v);
        let rows = pos + 1;

        for h in 0..p.heads {
            let hq = &q[h * head_dim..(h + 1) * head_dim];
            // Softmax over all cached rows, computed in f64 with the
            // usual max-subtraction so long contexts stay stable.
            let mut scores = Vec::with_capacity(rows);
            let mut max_s = f64::NEG_INFINITY;
            for r in 0..rows {
                let kr = &cache.keys[r * d + h * head_dim..r * d + (h + 1) * head_dim];
                let mut s = 0.0f64;
                for (a, b) in hq.iter().zip(kr) {
                    s += *a as f64 * *b as f64;
                }
                s *= scale;
                max_s = max_s.max(s);
                scores.push(s);
            }
            let mut denom = 0.0f64;
            for s in scores.iter_mut() {
                *s = (*s - max_s).exp();
                denom += *s;
            }
            for (c, out) in ctx[h * head_dim..(h + 1) * head_dim].iter_mut().enumerate() {
                let mut acc = 0.0f64;
                for (r, w) in scores.iter().enumerate() {
                    acc += w * cache.values[r * d + h * head_dim + c] as f64;
                }
                *out = (acc / denom) as f32;
            }
        }

        matvec_into(block.o_w, &ctx, &mut proj);
        for (xv, &pv) in x.iter_mut().zip(&proj) {
            *xv += pv;
        }

        layer_norm_into(&x, block.norm2_g, &mut normed);
        matvec_into(block.ff_w1, &normed, &mut hidden);
        for h in hidden.iter_mut() {
            *h = h.max(0.0);
        }
        matvec_into(block.ff_w2, &hidden, &mut proj);
        for (xv, &pv) in x.iter_mut().zip(&proj) {
            *xv += pv;
        }
    }

    layer_norm_into(&x, p.norm_out_g, &mut normed);
    let mut logits = vec![0.0f32; p.vocab];
    matvec_into(p.out_w, &normed, &mut logits);
    state.position += 1;
    Ok(logits)
}

/// Offline form: a fresh state stepped over the whole sequence.
pub fn decoder_forward(p: &DecoderParams, cs: &[Vec<f32>]) -> Result<Vec<Vec<f32>>> {
    let mut state = DecoderState::new(p);
    cs.iter().map(|c| decoder_step(p, &mut state, c)).collect()
}

// ======================================================================
// Tests
// ======================================================================
