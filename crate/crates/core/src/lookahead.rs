//! Convolutional lookahead over encoder output.
//!
//! A same-padded time convolution with odd kernel k lets each frame see
//! (k-1)/2 future frames, followed by Swish and a gain-only LayerNorm.
//! Output t reads inputs t-(k-1)/2 ..= t+(k-1)/2 with zeros outside the
//! stream, so the module adds exactly (k-1)/2 frames of algorithmic
//! delay and nothing else. k = 1 degenerates to a per-frame pointwise
//! map with no delay.
//!
//! The streaming form buffers the last k inputs and emits output t as
//! soon as input t+(k-1)/2 arrives; `finalize` flushes the tail outputs
//! whose windows run past the end. Both forms assemble each output
//! window the same way and hand it to one shared kernel, so streaming
//! and offline results are bit-identical.

use std::collections::VecDeque;

use crate::error::{PipelineError, Result};
use crate::math::{layer_norm_into, silu};
use crate::weights::{BundleError, ModelConfig, TensorBundle};

// ======================================================================
// Parameters
// ======================================================================

pub struct LookaheadParams<'a> {
    conv_w: &'a [f32],
    conv_b: &'a [f32],
    norm_g: &'a [f32],
    d: usize,
    k: usize,
    depthwise: bool,
}

impl<'a> LookaheadParams<'a> {
    pub fn bind(
        cfg: &ModelConfig,
        bundle: &'a TensorBundle,
    ) -> std::result::Result<Self, BundleError> {
        let d = cfg.model_dim;
        let k = cfg.lookahead_kernel;
        let conv_w = if cfg.lookahead_depthwise {
            bundle.expect("la.conv.w", &[d, k])?.data()
        } else {
            bundle.expect("la.conv.w", &[d, d, k])?.data()
        };
        Ok(LookaheadParams {
            conv_w,
            conv_b: bundle.expect("la.conv.b", &[d])?.data(),
            norm_g: bundle.expect("la.norm.g", &[d])?.data(),
            d,
            k,
            depthwise: cfg.lookahead_depthwise,
        })
    }

    /// Frames of future context each output consumes, which is also the
    /// delay the streaming form introduces.
    #[must_use]
    pub fn delay(&self) -> usize {
        (self.k - 1) / 2
    }

    #[must_use]
    pub fn kernel(&self) -> usize {
        self.k
    }
}

// ======================================================================
// Shared kernel
// ======================================================================

/// Computes one output from its assembled window of k frames (None for
/// positions padded past the stream bounds). Both the streaming and the
/// offline path funnel through here, tap order ascending in time.
fn produce(p: &LookaheadParams, window: &[Option<&[f32]>]) -> Vec<f32> {
    debug_assert_eq!(window.len(), p.k);
    let mut conv = vec![0.0f32; p.d];
    for c in 0..p.d {
        let mut acc = p.conv_b[c] as f64;
        for (j, frame) in window.iter().enumerate() {
            let Some(x) = frame else { continue };
            if p.depthwise {
                acc += p.conv_w[c * p.k + j] as f64 * x[c] as f64;
            } else {
                for (cin, &xv) in x.iter().enumerate() {
                    acc += p.conv_w[(c * p.d + cin) * p.k + j] as f64 * xv as f64;
                }
            }
        }
        conv[c] = silu(acc as f32);
    }
    let mut out = vec![0.0f32; p.d];
    layer_norm_into(&conv, p.norm_g, &mut out);
    out
}

// ======================================================================
// Streaming state
// ======================================================================

pub struct LookaheadState {
    buf: VecDeque<Vec<f32>>,
    pushed: usize,
    emitted: usize,
    finalized: bool,
}

impl LookaheadState {
    #[must_use]
    pub fn new() -> Self {
        LookaheadState {
            buf: VecDeque::new(),
            pushed: 0,
            emitted: 0,
        finalized: false,
        }
    }

    /// Outputs produced so far, which trails pushes by the delay.
    #[must_use]
    pub fn emitted(&self) -> usize {
        self.emitted
    }

    fn window_for(&self, p: &LookaheadParams, t: usize) -> Vec<Option<&[f32]>> {
        let delay = p.delay() as isize;
        let base = self.pushed - self.buf.len();
        (-delay..=delay)
            .map(|off| {
                let i = t as isize + off;
                if i < 0 || i as usize >= self.pushed {
                    None
                } else {
                    Some(self.buf[i as usize - base].as_slice())
                }
            })
            .collect()
    }
}

impl Default for LookaheadState {
    fn default() -> Self {
        Self::new()
    }
}

/// Feeds one frame; returns the next output once enough future context
/// has arrived (always, when k = 1).
pub fn lookahead_push(
    p: &LookaheadParams,
    state: &mut LookaheadState,
    x: &[f32],
) -> Result<Option<Vec<f32>>> {
    if state.finalized {
        return Err(PipelineError::Finalized("lookahead"));
    }
    if x.len() != p.d {
        return Err(PipelineError::DimMismatch {
            stage: "lookahead",
            expected: p.d,
            actual: x.len(),
        });
    }
    state.buf.push_back(x.to_vec());
    if state.buf.len() > p.k {
        state.buf.pop_front();
    }
    state.pushed += 1;
    if state.pushed > p.delay() {
        let t = state.emitted;
        let window = state.window_for(p, t);
        let out = produce(p, &window);
        state.emitted += 1;
        Ok(Some(out))
    } else {
        Ok(None)
    }
}

/// Flushes the (k-1)/2 pending outputs whose windows extend past the last
/// input (fewer if the stream was shorter than the delay). Errors on a
/// second call.
pub fn lookahead_finalize(
    p: &LookaheadParams,
    state: &mut LookaheadState,
) -> Result<Vec<Vec<f32>>> {
    if state.finalized {
        return Err(PipelineError::Finalized("lookahead"));
    }
    state.finalized = true;
    let mut out = Vec::with_capacity(state.pushed - state.emitted);
    for t in state.emitted..state.pushed {
        let window = state.window_for(p, t);
        out.push(produce(p, &window));
    }
    state.emitted = state.pushed;
    Ok(out)
}

/// Offline form: T frames in, T frames out, windows zero-padded at both
/// ends.
pub fn lookahead_forward(p: &LookaheadParams, xs: &[Vec<f32>]) -> Result<Vec<Vec<f32>>> {
    let delay = p.delay() as isize;
    let mut out = Vec::with_capacity(xs.len());
    for t in 0..xs.len() as isize {
        for x in xs.iter() {
            if x.len() != p.d {
                return Err(PipelineError::DimMismatch {
                    stage: "lookahead",
                    expected: p.d,
                    actual: x.len(),
                });
            }
        }
        let window: Vec<Option<&[f32]>> = (-delay..=delay)
            .map(|off| {
                let i = t + off;
                if i < 0 || i as usize >= xs.len() {
                    None
                } else {
                    Some(xs[i as usize].as_slice())
                }
            })
            .collect();
        out.push(produce(p, &window));
    }
    Ok(out)
}

// ======================================================================
// Tests
// ======================================================================
