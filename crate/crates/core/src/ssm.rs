//! Selective state-space recurrence and the gated encoder blocks built
//! around it.
//!
//! Per frame and channel the recurrence is
//!
//! ```text
//! h_t = a_bar (.) h_{t-1} + b_bar * u_t        a_bar = exp(delta * A)
//! y_t = c_t . h_t + skip * u_t                 b_bar = delta * b_t
//! ```
//!
//! with diagonal A = -exp(a_log) kept strictly negative so every
//! discretized coefficient lies in (0, 1). The projections b_t, c_t and a
//! shared step-size logit are read off the current input; the step size
//! becomes positive per channel through a softplus affine map. A block
//! wraps the recurrence with an RMS-normed in-projection that expands D to
//! E*D and splits off a gate, a per-channel causal conv of kernel 4, SiLU,
//! the recurrence, gating, and an out-projection back to D with a residual.
//!
//! Streaming (`*_step`) and offline (`*_forward`, `ssm_scan`) forms share
//! the same sequential arithmetic, so their outputs agree bit for bit.

use crate::error::{PipelineError, Result};
use crate::math::{matvec_into, rms_norm_into, silu, softplus};
use crate::weights::{BundleError, ModelConfig, TensorBundle};

// ======================================================================
// Discretization
// ======================================================================

/// Zero-order-hold step for the diagonal transition and Euler step for the
/// input: a_bar = exp(delta * -exp(a_log)), b_bar = delta * b.
pub fn discretize(delta: f32, a_log: &[f32], b: &[f32]) -> Result<(Vec<f32>, Vec<f32>)> {
    if !(delta > 0.0) {
        return Err(PipelineError::NonPositiveDelta(delta));
    }
    let mut a_bar = vec![0.0f32; a_log.len()];
    let mut b_bar = vec![0.0f32; b.len()];
    discretize_into(delta, a_log, b, &mut a_bar, &mut b_bar);
    Ok((a_bar, b_bar))
}

/// Inner form; accepts delta = 0 as the frozen-state limit (a_bar = 1,
/// b_bar = 0), which softplus underflow can produce for extreme logits.
fn discretize_into(delta: f32, a_log: &[f32], b: &[f32], a_bar: &mut [f32], b_bar: &mut [f32]) {
    for (o, &al) in a_bar.iter_mut().zip(a_log) {
        *o = (delta * -al.exp()).exp();
    }
    for (o, &bv) in b_bar.iter_mut().zip(b) {
        *o = delta * bv;
    }
}

// ======================================================================
// Core recurrence
// ======================================================================

/// Weight views for the recurrence of one block: input-dependent b/c/step
/// projections, per-channel decay and skip terms.
pub struct SsmCoreParams<'a> {
    x_bcd_w: &'a [f32],
    dt_w: &'a [f32],
    dt_b: &'a [f32],
    a_log: &'a [f32],
    skip_d: &'a [f32],
    inner: usize,
    state: usize,
}

impl<'a> SsmCoreParams<'a> {
    pub fn bind(
        cfg: &ModelConfig,
        bundle: &'a TensorBundle,
        block: usize,
    ) -> std::result::Result<Self, BundleError> {
        let inner = cfg.inner_dim();
        let n = cfg.state_size;
        Ok(SsmCoreParams {
            x_bcd_w: bundle
                .expect(&format!("enc.{block}.x_bcd.w"), &[2 * n + 1, inner])?
                .data(),
            dt_w: bundle.expect(&format!("enc.{block}.dt.w"), &[inner])?.data(),
            dt_b: bundle.expect(&format!("enc.{block}.dt.b"), &[inner])?.data(),
            a_log: bundle.expect(&format!("enc.{block}.a_log"), &[inner, n])?.data(),
            skip_d: bundle.expect(&format!("enc.{block}.skip_d"), &[inner])?.data(),
            inner,
            state: n,
        })
    }

    #[must_use]
    pub fn inner_dim(&self) -> usize {
        self.inner
    }

    #[must_use]
    pub fn state_size(&self) -> usize {
        self.state
    }

    /// One recurrence step. `bcd` is scratch of size 2N+1; `y` receives
    /// the per-channel outputs.
    fn step_into(&self, h: &mut [f32], u: &[f32], bcd: &mut [f32], y: &mut [f32]) {
        let n = self.state;
        matvec_into(self.x_bcd_w, u, bcd);
        let (b, rest) = bcd.split_at(n);
        let (c, dt_raw) = rest.split_at(n);
        let raw = dt_raw[0];
        for ch in 0..self.inner {
            let delta = softplus(self.dt_w[ch] * raw + self.dt_b[ch]);
            let hs = &mut h[ch * n..(ch + 1) * n];
            let al = &self.a_log[ch * n..(ch + 1) * n];
            let uv = u[ch];
            let mut dot = 0.0f64;
            for j in 0..n {
                let a_bar = (delta * -al[j].exp()).exp();
                let b_bar = delta * b[j];
                hs[j] = a_bar * hs[j] + b_bar * uv;
                dot += c[j] as f64 * hs[j] as f64;
            }
            y[ch] = (dot + self.skip_d[ch] as f64 * uv as f64) as f32;
        }
    }
}

/// Recurrent state: one length-N vector per expanded channel, plus a step
/// counter for error reporting.
#[derive(Debug, Clone)]
pub struct SsmState {
    h: Vec<f32>,
    steps: usize,
}

impl SsmState {
    #[must_use]
    pub fn new(inner: usize, state: usize) -> Self {
        SsmState {
            h: vec![0.0; inner * state],
            steps: 0,
        }
    }

    #[must_use]
    pub fn h(&self) -> &[f32] {
        &self.h
    }

    #[must_use]
    pub fn steps(&self) -> usize {
        self.steps
    }
}

/// Advances the recurrence by one frame and returns the channel outputs.
pub fn ssm_step(p: &SsmCoreParams, state: &mut SsmState, u: &[f32]) -> Result<Vec<f32>> {
    if u.len() != p.inner {
        return Err(PipelineError::DimMismatch {
            stage: "ssm",
            expected: p.inner,
            actual: u.len(),
        });
    }
    if u.iter().any(|v| !v.is_finite()) {
        return Err(PipelineError::NonFinite {
            stage: "ssm",
            frame: state.steps,
        });
    }
    let mut bcd = vec![0.0f32; 2 * p.state + 1];
    let mut y = vec![0.0f32; p.inner];
    p.step_into(&mut state.h, u, &mut bcd, &mut y);
    state.steps += 1;
    Ok(y)
}

/// Offline scan over a whole sequence from a zero state. Sequential, so
/// row t is bit-identical to t repeated `ssm_step` calls.
pub fn ssm_scan(p: &SsmCoreParams, u_seq: &[Vec<f32>]) -> Result<Vec<Vec<f32>>> {
    let mut state = SsmState::new(p.inner, p.state);
    let mut bcd = vec![0.0f32; 2 * p.state + 1];
    let mut out = Vec::with_capacity(u_seq.len());
    for (t, u) in u_seq.iter().enumerate() {
        if u.len() != p.inner {
            return Err(PipelineError::DimMismatch {
                stage: "ssm",
                expected: p.inner,
                actual: u.len(),
            });
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(PipelineError::NonFinite { stage: "ssm", frame: t });
        }
        let mut y = vec![0.0f32; p.inner];
        p.step_into(&mut state.h, u, &mut bcd, &mut y);
        out.push(y);
    }
    Ok(out)
}

// ======================================================================
// Gated block
// ======================================================================

/// Weight views for one full encoder block.
pub struct SsmBlockParams<'a> {
    norm_g: &'a [f32],
    in_proj_w: &'a [f32],
    conv_w: &'a [f32],
    conv_b: &'a [f32],
    pub core: SsmCoreParams<'a>,
    out_proj_w: &'a [f32],
    d: usize,
    inner: usize,
}

impl<'a> SsmBlockParams<'a> {
    pub fn bind(
        cfg: &ModelConfig,
        bundle: &'a TensorBundle,
        block: usize,
    ) -> std::result::Result<Self, BundleError> {
        let d = cfg.model_dim;
        let inner = cfg.inner_dim();
        Ok(SsmBlockParams {
            norm_g: bundle.expect(&format!("enc.{block}.norm.g"), &[d])?.data(),
            in_proj_w: bundle
                .expect(&format!("enc.{block}.in_proj.w"), &[2 * inner, d])?
                .data(),
            conv_w: bundle.expect(&format!("enc.{block}.conv.w"), &[inner, 4])?.data(),
            conv_b: bundle.expect(&format!("enc.{block}.conv.b"), &[inner])?.data(),
            core: SsmCoreParams::bind(cfg, bundle, block)?,
            out_proj_w: bundle
                .expect(&format!("enc.{block}.out_proj.w"), &[d, inner])?
                .data(),
            d,
            inner,
        })
    }
}

/// Per-block streaming state: the last three pre-conv inputs (oldest
/// first) and the recurrent state.
#[derive(Debug, Clone)]
pub struct BlockState {
    conv_tail: Vec<f32>,
    pub ssm: SsmState,
}

impl BlockState {
    #[must_use]
    pub fn new(inner: usize, state: usize) -> Self {
        BlockState {
            conv_tail: vec![0.0; 3 * inner],
            ssm: SsmState::new(inner, state),
        }
    }
}

/// Kernel-4 causal conv over the channel dimension: taps cover u_{t-3..t},
/// so anything older than three steps cannot influence the output.
fn causal_conv4_into(
    conv_w: &[f32],
    conv_b: &[f32],
    tail: &[f32],
    u: &[f32],
    out: &mut [f32],
) {
    let inner = u.len();
    for ch in 0..inner {
        let w = &conv_w[ch * 4..ch * 4 + 4];
        let acc = w[0] as f64 * tail[ch] as f64
            + w[1] as f64 * tail[inner + ch] as f64
            + w[2] as f64 * tail[2 * inner + ch] as f64
            + w[3] as f64 * u[ch] as f64
            + conv_b[ch] as f64;
        out[ch] = acc as f32;
    }
}

/// One block applied to one frame: RMS-norm, in-projection with gate
/// split, causal conv + SiLU, recurrence, gating, out-projection,
/// residual.
pub fn ssm_block_step(
    p: &SsmBlockParams,
    state: &mut BlockState,
    x: &[f32],
) -> Result<Vec<f32>> {
    if x.len() != p.d {
        return Err(PipelineError::DimMismatch {
            stage: "encoder block",
            expected: p.d,
            actual: x.len(),
        });
    }
    let inner = p.inner;
    let mut normed = vec![0.0f32; p.d];
    rms_norm_into(x, p.norm_g, &mut normed);
    let mut xz = vec![0.0f32; 2 * inner];
    matvec_into(p.in_proj_w, &normed, &mut xz);
    let (u_pre, gate) = xz.split_at(inner);

    let mut u = vec![0.0f32; inner];
    causal_conv4_into(p.conv_w, p.conv_b, &state.conv_tail, u_pre, &mut u);
    for v in u.iter_mut() {
        *v = silu(*v);
    }
    state.conv_tail.copy_within(inner.., 0);
    state.conv_tail[2 * inner..].copy_from_slice(u_pre);

    let y = ssm_step(&p.core, &mut state.ssm, &u)?;

    let mut gated = vec![0.0f32; inner];
    for ((o, &yv), &g) in gated.iter_mut().zip(&y).zip(gate) {
        *o = yv * silu(g);
    }
    let mut out = vec![0.0f32; p.d];
    matvec_into(p.out_proj_w, &gated, &mut out);
    for (o, &xv) in out.iter_mut().zip(x) {
        *o += xv;
    }
    Ok(out)
}

/// Offline form of one block over a whole sequence.
pub fn ssm_block_forward(p: &SsmBlockParams, xs: &[Vec<f32>]) -> Result<Vec<Vec<f32>>> {
    let mut state = BlockState::new(p.inner, p.core.state);
    xs.iter().map(|x| ssm_block_step(p, &mut state, x)).collect()
}

// ======================================================================
// Encoder stack
// ======================================================================

pub struct EncoderParams<'a> {
    pub blocks: Vec<SsmBlockParams<'a>>,
    model_dim: usize,
}

impl<'a> EncoderParams<'a> {
    pub fn bind(
        cfg: &ModelConfig,
        bundle: &'a TensorBundle,
    ) -> std::result::Result<Self, BundleError> {
        let blocks = (0..cfg.encoder_blocks)
            .map(|i| SsmBlockParams::bind(cfg, bundle, i))
            .collect::<std::result::Result<_, _>>()?;
        Ok(EncoderParams {
            blocks,
            model_dim: cfg.model_dim,
        })
    }

    #[must_use]
    pub fn model_dim(&self) -> usize {
        self.model_dim
    }
}

#[derive(Debug)]
pub struct EncoderState {
    pub blocks: Vec<BlockState>,
    frames_seen: usize,
}

impl EncoderState {
    #[must_use]
    pub fn new(params: &EncoderParams) -> Self {
        EncoderState {
            blocks: params
                .blocks
                .iter()
                .map(|b| BlockState::new(b.inner, b.core.state))
                .collect(),
            frames_seen: 0,
        }
    }

    #[must_use]
    pub fn frames_seen(&self) -> usize {
        self.frames_seen
    }
}

/// All blocks applied to one frame, strictly causal.
pub fn encoder_step(p: &EncoderParams, state: &mut EncoderState, x: &[f32]) -> Result<Vec<f32>> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(PipelineError::NonFinite {
            stage: "encoder",
            frame: state.frames_seen,
        });
    }
    let mut cur = x.to_vec();
    for (bp, bs) in p.blocks.iter().zip(state.blocks.iter_mut()) {
        cur = ssm_block_step(bp, bs, &cur)?;
    }
    state.frames_seen += 1;
    Ok(cur)
}

/// Offline encoder over a whole sequence; sequential, so bit-identical to
/// streaming the frames one by one.
pub fn encoder_forward(p: &EncoderParams, xs: &[Vec<f32>]) -> Result<Vec<Vec<f32>>> {
    let mut state = EncoderState::new(p);
    xs.iter().map(|x| encoder_step(p, &mut state, x)).collect()
}

// ======================================================================
// Tests
// ======================================================================

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::init_random;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg_small() -> ModelConfig {
        let mut cfg = ModelConfig::with_dims(8, 2, 4);
        cfg.encoder_blocks = 2;
        cfg.decoder_blocks = 1;
        cfg.decoder_heads = 2;
        cfg.decoder_ff = 16;
        cfg.vocab_size = 5;
        cfg.max_positions = 16;
        cfg
    }

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize, scale: f32) -> Vec<f32> {
        (0..n).map(|_| (rng.gen::<f32>() * 2.0 - 1.0) * scale).collect()
    }

    // ------------------------------------------------------------------
    // discretize
    // ------------------------------------------------------------------

    #[test]
    fn discretize_halves_at_the_right_decay() {
        // a_bar = exp(delta * -exp(a_log)); picking a_log = ln(ln 2) with
        // delta = 1 lands exactly on 1/2.
        let a_log = [(std::f64::consts::LN_2.ln()) as f32];
        let (a_bar, b_bar) = discretize(1.0, &a_log, &[2.0]).unwrap();
        assert!((a_bar[0] - 0.5).abs() < 1e-6, "got {}", a_bar[0]);
        assert_eq!(b_bar[0], 2.0, "Euler input step is delta * b");
    }

    #[test]
    fn discretize_freezes_as_delta_vanishes() {
        let (a_bar, b_bar) = discretize(1e-9, &[0.0, 1.0], &[3.0, -4.0]).unwrap();
        for &a in &a_bar {
            assert!((a - 1.0).abs() < 1e-6, "a_bar -> 1, got {a}");
        }
        for &b in &b_bar {
            assert!(b.abs() < 1e-6, "b_bar -> 0, got {b}");
        }
    }

    #[test]
    fn discretize_rejects_non_positive_delta() {
        assert!(matches!(
            discretize(0.0, &[0.0], &[1.0]),
            Err(PipelineError::NonPositiveDelta(_))
        ));
        assert!(discretize(-1.0, &[0.0], &[1.0]).is_err());
        assert!(discretize(f32::NAN, &[0.0], &[1.0]).is_err());
    }

    #[test]
    fn discretize_matches_f64_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..200 {
            let delta = rng.gen::<f32>() * 2.0 + 1e-3;
            let a_log = rand_vec(&mut rng, 6, 2.0);
            let b = rand_vec(&mut rng, 6, 3.0);
            let (a_bar, b_bar) = discretize(delta, &a_log, &b).unwrap();
            for j in 0..6 {
                let want_a = (delta as f64 * -(a_log[j] as f64).exp()).exp();
                let want_b = delta as f64 * b[j] as f64;
                assert!((a_bar[j] as f64 - want_a).abs() < 1e-6);
                assert!((b_bar[j] as f64 - want_b).abs() < 1e-6);
                assert!(a_bar[j] > 0.0 && a_bar[j] < 1.0, "decay in (0,1)");
            }
        }
    }

    // ------------------------------------------------------------------
    // Core recurrence
    // ------------------------------------------------------------------

    /// Float64 replica of the recurrence, written directly from the update
    /// equations rather than the implementation.
    struct F64Ssm {
        x_bcd: Vec<f64>,
        dt_w: Vec<f64>,
        dt_b: Vec<f64>,
        a_log: Vec<f64>,
        skip: Vec<f64>,
        inner: usize,
        n: usize,
        h: Vec<f64>,
    }

    impl F64Ssm {
        fn from_params(p: &SsmCoreParams) -> Self {
            F64Ssm {
                x_bcd: p.x_bcd_w.iter().map(|&v| v as f64).collect(),
                dt_w: p.dt_w.iter().map(|&v| v as f64).collect(),
                dt_b: p.dt_b.iter().map(|&v| v as f64).collect(),
                a_log: p.a_log.iter().map(|&v| v as f64).collect(),
                skip: p.skip_d.iter().map(|&v| v as f64).collect(),
                inner: p.inner,
                n: p.state,
                h: vec![0.0; p.inner * p.state],
            }
        }

        fn step(&mut self, u: &[f32]) -> Vec<f64> {
            let n = self.n;
            let cols = self.inner;
            let mut bcd = vec![0.0f64; 2 * n + 1];
            for (r, o) in bcd.iter_mut().enumerate() {
                *o = (0..cols).map(|c| self.x_bcd[r * cols + c] * u[c] as f64).sum();
            }
            let raw = bcd[2 * n];
            let mut y = vec![0.0f64; self.inner];
            for ch in 0..self.inner {
                let x = self.dt_w[ch] * raw + self.dt_b[ch];
                let delta = if x > 20.0 {
                    x + (-x).exp().ln_1p()
                } else {
                    x.exp().ln_1p()
                };
                let mut dot = 0.0;
                for j in 0..n {
                    let a_bar = (delta * -self.a_log[ch * n + j].exp()).exp();
                    let b_bar = delta * bcd[j];
                    let idx = ch * n + j;
                    self.h[idx] = a_bar * self.h[idx] + b_bar * u[ch] as f64;
                    dot += bcd[n + j] * self.h[idx];
                }
                y[ch] = dot + self.skip[ch] * u[ch] as f64;
            }
            y
        }
    }

    #[test]
    fn zero_input_is_a_fixed_point() {
        let cfg = cfg_small();
        let bundle = init_random(&cfg, 1).unwrap();
        let p = SsmCoreParams::bind(&cfg, &bundle, 0).unwrap();
        let mut state = SsmState::new(p.inner, p.state);
        for _ in 0..5 {
            let y = ssm_step(&p, &mut state, &vec![0.0; p.inner]).unwrap();
            assert!(y.iter().all(|&v| v == 0.0), "zero in, zero out");
            assert!(state.h().iter().all(|&v| v == 0.0), "state stays zero");
        }
    }

    #[test]
    fn fast_decay_makes_the_step_memoryless() {
        // a_log = 8 puts the transition at exp(-delta * e^8), which
        // underflows to exactly zero, so step two keeps nothing of step
        // one: y = c . (delta * b * u) + skip * u.
        let cfg = cfg_small();
        let mut bundle = init_random(&cfg, 2).unwrap();
        bundle.get_mut("enc.0.a_log").unwrap().data_mut().fill(8.0);
        let p = SsmCoreParams::bind(&cfg, &bundle, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u1 = rand_vec(&mut rng, p.inner, 1.0);
        let u2 = rand_vec(&mut rng, p.inner, 1.0);
        let mut state = SsmState::new(p.inner, p.state);
        ssm_step(&p, &mut state, &u1).unwrap();
        let y2 = ssm_step(&p, &mut state, &u2).unwrap();

        let n = p.state;
        let mut bcd = vec![0.0f64; 2 * n + 1];
        for (r, o) in bcd.iter_mut().enumerate() {
            *o = (0..p.inner)
                .map(|c| p.x_bcd_w[r * p.inner + c] as f64 * u2[c] as f64)
                .sum();
        }
        for ch in 0..p.inner {
            let x = p.dt_w[ch] as f64 * bcd[2 * n] + p.dt_b[ch] as f64;
            let delta = x.exp().ln_1p();
            let want: f64 = (0..n)
                .map(|j| bcd[n + j] * delta * bcd[j] * u2[ch] as f64)
                .sum::<f64>()
                + p.skip_d[ch] as f64 * u2[ch] as f64;
            assert!(
                (y2[ch] as f64 - want).abs() < 1e-5,
                "channel {ch}: {} vs memoryless form {want}",
                y2[ch]
            );
        }
    }

    #[test]
    fn twenty_steps_track_the_f64_reference() {
        let cfg = cfg_small();
        let bundle = init_random(&cfg, 4).unwrap();
        let p = SsmCoreParams::bind(&cfg, &bundle, 1).unwrap();
        let mut state = SsmState::new(p.inner, p.state);
        let mut reference = F64Ssm::from_params(&p);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for step in 0..20 {
            let u = rand_vec(&mut rng, p.inner, 1.0);
            let y = ssm_step(&p, &mut state, &u).unwrap();
            let want = reference.step(&u);
            for ch in 0..p.inner {
                assert!(
                    (y[ch] as f64 - want[ch]).abs() < 1e-5,
                    "step {step} channel {ch}: {} vs {}",
                    y[ch],
                    want[ch]
                );
            }
            for (idx, &hv) in state.h().iter().enumerate() {
                assert!((hv as f64 - reference.h[idx]).abs() < 1e-5, "state drift at {idx}");
            }
        }
    }

    #[test]
    fn non_finite_input_reports_the_frame() {
        let cfg = cfg_small();
        let bundle = init_random(&cfg, 1).unwrap();
        let p = SsmCoreParams::bind(&cfg, &bundle, 0).unwrap();
        let mut state = SsmState::new(p.inner, p.state);
        ssm_step(&p, &mut state, &vec![0.1; p.inner]).unwrap();
        let mut bad = vec![0.1; p.inner];
        bad[2] = f32::NAN;
        match ssm_step(&p, &mut state, &bad) {
            Err(PipelineError::NonFinite { frame, .. }) => assert_eq!(frame, 1),
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn scan_equals_stepping() {
        let cfg = cfg_small();
        let bundle = init_random(&cfg, 6).unwrap();
        let p = SsmCoreParams::bind(&cfg, &bundle, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let seq: Vec<Vec<f32>> = (0..50).map(|_| rand_vec(&mut rng, p.inner, 1.0)).collect();
        let scanned = ssm_scan(&p, &seq).unwrap();
        assert_eq!(scanned.len(), 50);
        let mut state = SsmState::new(p.inner, p.state);
        for (t, u) in seq.iter().enumerate() {
            let y = ssm_step(&p, &mut state, u).unwrap();
            for (a, b) in y.iter().zip(&scanned[t]) {
                assert_eq!(a.to_bits(), b.to_bits(), "row {t} differs from stepping");
            }
        }
        // T=1 degenerate case.
        let one = ssm_scan(&p, &seq[..1]).unwrap();
        let mut fresh = SsmState::new(p.inner, p.state);
        let y = ssm_step(&p, &mut fresh, &seq[0]).unwrap();
        assert_eq!(one[0], y);
    }

    #[test]
    fn state_stays_bounded_over_long_streams() {
        let mut cfg = cfg_small();
        cfg.encoder_blocks = 1;
        let bundle = init_random(&cfg, 8).unwrap();
        let p = SsmCoreParams::bind(&cfg, &bundle, 0).unwrap();
        let mut state = SsmState::new(p.inner, p.state);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut max_h = 0.0f32;
        for step in 0..100_000 {
            let u: Vec<f32> = (0..p.inner)
                .map(|c| ((step as f32 * 0.01 + c as f32).sin() + rng.gen::<f32>()) * 0.8)
                .collect();
            ssm_step(&p, &mut state, &u).unwrap();
            if step % 1000 == 0 {
                for &hv in state.h() {
                    assert!(hv.is_finite(), "state blew up at step {step}");
                    max_h = max_h.max(hv.abs());
                }
            }
        }
        assert!(max_h < 1e6, "state magnitude {max_h} is not plausibly bounded");
    }

    // ------------------------------------------------------------------
    // Block and encoder
    // ------------------------------------------------------------------

    #[test]
    fn zero_weights_make_the_block_an_identity() {
        let cfg = cfg_small();
        let mut bundle = init_random(&cfg, 10).unwrap();
        for name in [
            "enc.0.norm.g",
            "enc.0.in_proj.w",
            "enc.0.conv.w",
            "enc.0.conv.b",
            "enc.0.x_bcd.w",
            "enc.0.dt.w",
            "enc.0.dt.b",
            "enc.0.a_log",
            "enc.0.skip_d",
            "enc.0.out_proj.w",
        ] {
            bundle.get_mut(name).unwrap().data_mut().fill(0.0);
        }
        let p = SsmBlockParams::bind(&cfg, &bundle, 0).unwrap();
        let mut state = BlockState::new(p.inner, p.core.state);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..6 {
            let x = rand_vec(&mut rng, cfg.model_dim, 2.0);
            let y = ssm_block_step(&p, &mut state, &x).unwrap();
            assert_eq!(y, x, "residual path must pass x through unchanged");
        }
    }

    #[test]
    fn conv_window_spans_exactly_four_steps() {
        // With an instant-forgetting recurrence the block output at t is a
        // function of x_{t-3..t} alone: a change four steps back must not
        // show, a change three steps back must.
        let cfg = cfg_small();
        let mut bundle = init_random(&cfg, 12).unwrap();
        bundle.get_mut("enc.0.a_log").unwrap().data_mut().fill(8.0);
        let p = SsmBlockParams::bind(&cfg, &bundle, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let xs: Vec<Vec<f32>> = (0..8).map(|_| rand_vec(&mut rng, cfg.model_dim, 1.0)).collect();

        let run = |xs: &[Vec<f32>]| ssm_block_forward(&p, xs).unwrap();
        let base = run(&xs);
        let mut early = xs.clone();
        early[1][0] += 0.5;
        let changed = run(&early);
        assert_ne!(base[1], changed[1], "current frame must matter");
        assert_ne!(base[4], changed[4], "t-3 is inside the conv window");
        for t in 5..8 {
            assert_eq!(base[t], changed[t], "t-{} is outside the conv window", t - 1);
        }
    }

    #[test]
    fn single_block_stack_equals_the_block() {
        let mut cfg = cfg_small();
        cfg.encoder_blocks = 1;
        let bundle = init_random(&cfg, 14).unwrap();
        let enc = EncoderParams::bind(&cfg, &bundle).unwrap();
        let blk = SsmBlockParams::bind(&cfg, &bundle, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let xs: Vec<Vec<f32>> = (0..10).map(|_| rand_vec(&mut rng, cfg.model_dim, 1.0)).collect();
        let a = encoder_forward(&enc, &xs).unwrap();
        let b = ssm_block_forward(&blk, &xs).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn encoder_is_strictly_causal() {
        let cfg = cfg_small();
        let bundle = init_random(&cfg, 16).unwrap();
        let enc = EncoderParams::bind(&cfg, &bundle).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let xs: Vec<Vec<f32>> = (0..20).map(|_| rand_vec(&mut rng, cfg.model_dim, 1.0)).collect();
        let cut = 12;
        let mut other = xs.clone();
        for frame in other.iter_mut().skip(cut + 1) {
            for v in frame.iter_mut() {
                *v = -*v + 0.25;
            }
        }
        let a = encoder_forward(&enc, &xs).unwrap();
        let b = encoder_forward(&enc, &other).unwrap();
        for t in 0..=cut {
            for (x, y) in a[t].iter().zip(&b[t]) {
                assert_eq!(x.to_bits(), y.to_bits(), "future frames leaked into frame {t}");
            }
        }
        assert_ne!(a[cut + 1], b[cut + 1]);
    }

    #[test]
    fn encoder_streaming_equals_offline() {
        let cfg = cfg_small();
        let bundle = init_random(&cfg, 18).unwrap();
        let enc = EncoderParams::bind(&cfg, &bundle).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let xs: Vec<Vec<f32>> = (0..200).map(|_| rand_vec(&mut rng, cfg.model_dim, 1.0)).collect();
        let offline = encoder_forward(&enc, &xs).unwrap();
        let mut state = EncoderState::new(&enc);
        for (t, x) in xs.iter().enumerate() {
            let y = encoder_step(&enc, &mut state, x).unwrap();
            for (a, b) in y.iter().zip(&offline[t]) {
                assert_eq!(a.to_bits(), b.to_bits(), "frame {t}");
            }
        }
        assert_eq!(state.frames_seen(), 200);
    }

    #[test]
    fn encoder_rejects_non_finite_frames() {
        let cfg = cfg_small();
        let bundle = init_random(&cfg, 20).unwrap();
        let enc = EncoderParams::bind(&cfg, &bundle).unwrap();
        let mut state = EncoderState::new(&enc);
        encoder_step(&enc, &mut state, &vec![0.0; cfg.model_dim]).unwrap();
        let mut bad = vec![0.0; cfg.model_dim];
        bad[1] = f32::INFINITY;
        match encoder_step(&enc, &mut state, &bad) {
            Err(PipelineError::NonFinite { frame, .. }) => assert_eq!(frame, 1),
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }
}
