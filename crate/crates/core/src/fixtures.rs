//! Hand-designed weight bundles whose behavior is predictable in closed form.
//!
//! Used by tests that need to force specific recognition outcomes (a
//! peak that decodes a token early, a valley that repeats it, a decode
//! that lands on blank) without training anything. The construction
//! makes every stage either transparent or a known closed form:
//!
//!  - subsampler: picks feature bins 0, 4, 8, ..., 4(D-1) of every
//!    fourth frame straight through, so feature frame 4t dictates
//!    encoder input t exactly;
//!  - encoder blocks: all-zero weights, pure residual passthrough;
//!  - lookahead: identity center tap, so only Swish plus LayerNorm act,
//!    and the delay is still (k-1)/2 frames;
//!  - aggregation weight reads coordinate 0 only;
//!  - decoder blocks: zeroed (passthrough); the output head votes on
//!    the signs of two coordinate pairs.
//!
//! Inputs are built from `FrameSpec` values: a scalar `s` that steers
//! the aggregation weight monotonically (bigger s, bigger alpha), and
//! two payload bits that steer the decoded token. Coordinates ride on a
//! large positive base so the subsampler's ReLU and the Swish stay out
//! of the way, and each pair sums to a constant so payload changes do
//! not disturb the alpha channel.

use crate::weights::{tensor_layout, ModelConfig, Tensor, TensorBundle};

/// Token voted by payload pair one (coordinates 2 and 3).
pub const TOKEN_A: usize = 5;
/// Token voted by payload pair two (coordinates 4 and 5).
pub const TOKEN_B: usize = 7;
/// Payload half-swing on the token coordinate pairs.
pub const PAYLOAD: f32 = 3.0;
/// Base offset keeping every designed coordinate far from zero.
pub const BASE: f32 = 20.0;

const DIM: usize = 6;

/// Config the designed bundle is built for. The lookahead kernel and
/// the early-termination switch stay free so tests can sweep them.
#[must_use]
pub fn fixture_config(lookahead_kernel: usize, et_enabled: bool) -> ModelConfig {
    let mut cfg = ModelConfig::with_dims(DIM, 2, 2);
    cfg.feat_dim = 4 * DIM;
    cfg.sub_channels1 = 1;
    cfg.sub_channels2 = 1;
    cfg.encoder_blocks = 1;
    cfg.lookahead_kernel = lookahead_kernel;
    cfg.lookahead_depthwise = true;
    cfg.decoder_blocks = 1;
    cfg.decoder_heads = 2;
    cfg.decoder_ff = 8;
    cfg.vocab_size = 8;
    cfg.max_positions = 64;
    cfg.et_enabled = et_enabled;
    cfg.validate().expect("fixture config is well formed");
    cfg
}

/// Builds the designed bundle: everything zero except the passthrough
/// taps, the norms that must stay active, and the output vote rows.
#[must_use]
pub fn fixture_bundle(cfg: &ModelConfig) -> TensorBundle {
    let mut bundle = TensorBundle::new();
    for spec in tensor_layout(cfg) {
        bundle
            .insert(Tensor::zeros(spec.name, spec.shape).expect("layout shapes are valid"))
            .expect("layout names are unique");
    }
    let set = |b: &mut TensorBundle, name: &str, f: &dyn Fn(&mut [f32])| {
        f(b.get_mut(name).expect("tensor exists").data_mut());
    };

    // Stride-2 convs read kernel row 2 (the current frame) at kernel
    // column 1 (the center tap, input bin 2f): with a single one there,
    // each layer halves the bin index and drops nothing else in.
    set(&mut bundle, "sub.conv1.w", &|w| w[7] = 1.0);
    set(&mut bundle, "sub.conv2.w", &|w| w[7] = 1.0);
    set(&mut bundle, "sub.proj.w", &|w| {
        for i in 0..DIM {
            w[i * DIM + i] = 1.0;
        }
    });

    let k = cfg.lookahead_kernel;
    set(&mut bundle, "la.conv.w", &|w| {
        for c in 0..DIM {
            w[c * k + (k - 1) / 2] = 1.0;
        }
    });
    set(&mut bundle, "la.norm.g", &|g| g.fill(1.0));

    // Aggregation weight: alpha = sigmoid of normalized coordinate 0.
    set(&mut bundle, "uma.w", &|w| w[0] = 1.0);

    // Decoder: blocks stay zero (residual passthrough), final norm
    // active, head rows vote on the two payload pairs. The blank row is
    // the exact opposite vote, so blank wins when both pairs are off.
    set(&mut bundle, "dec.norm_out.g", &|g| g.fill(1.0));
    set(&mut bundle, "dec.out.w", &|w| {
        let row = |tok: usize, c_pos: usize, c_neg: usize, w: &mut [f32], sign: f32| {
            w[tok * DIM + c_pos] += sign;
            w[tok * DIM + c_neg] -= sign;
        };
        row(TOKEN_A, 2, 3, w, 1.0);
        row(TOKEN_B, 4, 5, w, 1.0);
        row(0, 2, 3, w, -1.0);
        row(0, 4, 5, w, -1.0);
    });

    bundle
}

/// One designed encoder-rate frame: `s` drives alpha, the payload bits
/// drive which token the span votes for.
#[derive(Debug, Clone, Copy)]
pub struct FrameSpec {
    pub s: f32,
    pub token_a: bool,
    pub token_b: bool,
}

impl FrameSpec {
    #[must_use]
    pub fn new(s: f32, token_a: bool, token_b: bool) -> Self {
        FrameSpec { s, token_a, token_b }
    }
}

/// The encoder input the designed pipeline reconstructs for a spec.
#[must_use]
pub fn designed_embedding(spec: FrameSpec) -> [f32; DIM] {
    let pa = if spec.token_a { PAYLOAD } else { -PAYLOAD };
    let pb = if spec.token_b { PAYLOAD } else { -PAYLOAD };
    [
        BASE + spec.s,
        BASE - spec.s,
        BASE + pa,
        BASE - pa,
        BASE + pb,
        BASE - pb,
    ]
}

/// Feature frames realizing the given spec sequence: spec t occupies
/// feature frame 4t (bins 0, 4, ..., 20), padded with zero frames in
/// between so the subsampler's stride lands exactly on the designed
/// frames.
#[must_use]
pub fn feature_frames(specs: &[FrameSpec], feat_dim: usize) -> Vec<Vec<f32>> {
    let mut out = Vec::new();
    for (i, &spec) in specs.iter().enumerate() {
        let e = designed_embedding(spec);
        let mut frame = vec![0.0f32; feat_dim];
        for (d, &v) in e.iter().enumerate() {
            frame[4 * d] = v;
        }
        out.push(frame);
        if i + 1 < specs.len() {
            out.extend(std::iter::repeat(vec![0.0f32; feat_dim]).take(3));
        }
    }
    out
}

/// Float64 prediction of the aggregation weight for one spec, following
/// the designed path: Swish, gain-one LayerNorm, sigmoid of coordinate
/// zero. Strictly increasing in `s`; payload bits perturb it only at
/// rounding level because each pair contributes the same value multiset
/// either way.
#[must_use]
pub fn reference_alpha(spec: FrameSpec) -> f64 {
    let e = designed_embedding(spec);
    let w: Vec<f64> = e
        .iter()
        .map(|&x| {
            let x = x as f64;
            x / (1.0 + (-x).exp())
        })
        .collect();
    let mean = w.iter().sum::<f64>() / DIM as f64;
    let var = w.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / DIM as f64;
    let y0 = (w[0] - mean) / (var + 1e-5).sqrt();
    1.0 / (1.0 + (-y0).exp())
}

// ======================================================================
// Tests
// ======================================================================

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{offline_recognize, ModelParams, RunOptions, Trigger};
    use crate::frontend::{subsample_forward, SubsampleParams};
    use crate::lookahead::{lookahead_forward, LookaheadParams};
    use crate::ssm::{encoder_forward, EncoderParams};

    fn specs_simple() -> Vec<FrameSpec> {
        vec![
            FrameSpec::new(-2.0, true, false),
            FrameSpec::new(4.0, true, false),
            FrameSpec::new(1.0, true, false),
        ]
    }

    #[test]
    fn subsampler_reconstructs_the_designed_embeddings() {
        let cfg = fixture_config(1, false);
        let bundle = fixture_bundle(&cfg);
        let sub = SubsampleParams::bind(&cfg, &bundle).unwrap();
        let specs = specs_simple();
        let features = feature_frames(&specs, cfg.feat_dim);
        let got = subsample_forward(&sub, &features).unwrap();
        assert_eq!(got.len(), specs.len());
        for (t, spec) in specs.iter().enumerate() {
            assert_eq!(got[t], designed_embedding(*spec).to_vec(), "frame {t}");
        }
    }

    #[test]
    fn zeroed_encoder_blocks_pass_frames_through() {
        let cfg = fixture_config(1, false);
        let bundle = fixture_bundle(&cfg);
        let enc = EncoderParams::bind(&cfg, &bundle).unwrap();
        let xs: Vec<Vec<f32>> = specs_simple()
            .iter()
            .map(|&s| designed_embedding(s).to_vec())
            .collect();
        assert_eq!(encoder_forward(&enc, &xs).unwrap(), xs);
    }

    #[test]
    fn lookahead_identity_tap_reduces_to_swish_and_norm() {
        for k in [1usize, 5] {
            let cfg = fixture_config(k, false);
            let bundle = fixture_bundle(&cfg);
            let la = LookaheadParams::bind(&cfg, &bundle).unwrap();
            let xs: Vec<Vec<f32>> = specs_simple()
                .iter()
                .map(|&s| designed_embedding(s).to_vec())
                .collect();
            let got = lookahead_forward(&la, &xs).unwrap();
            // Each output depends on its own frame alone: the center tap
            // ignores the zero-padded neighbours entirely.
            for (t, row) in got.iter().enumerate() {
                let e = designed_embedding(specs_simple()[t]);
                let w: Vec<f64> = e
                    .iter()
                    .map(|&x| x as f64 / (1.0 + (-x as f64).exp()))
                    .collect();
                let mean = w.iter().sum::<f64>() / 6.0;
                let var = w.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 6.0;
                for (c, &v) in row.iter().enumerate() {
                    let want = (w[c] - mean) / (var + 1e-5).sqrt();
                    assert!(
                        (v as f64 - want).abs() < 1e-5,
                        "k={k} t={t} c={c}: {v} vs {want}"
                    );
                }
            }
        }
    }

    #[test]
    fn alpha_tracks_s_monotonically() {
        let cfg = fixture_config(1, false);
        let bundle = fixture_bundle(&cfg);
        let params = ModelParams::bind(&cfg, &bundle).unwrap();
        let specs: Vec<FrameSpec> = [-6.0f32, -3.0, 0.0, 2.0, 5.0]
            .iter()
            .map(|&s| FrameSpec::new(s, true, false))
            .collect();
        let features = feature_frames(&specs, cfg.feat_dim);
        let opts = RunOptions {
            dump_alpha: true,
            ..RunOptions::default()
        };
        let result = offline_recognize(&params, &features, opts).unwrap();
        assert_eq!(result.alphas.len(), specs.len());
        for pair in result.alphas.windows(2) {
            assert!(pair[0] < pair[1], "alpha must rise with s: {:?}", result.alphas);
        }
        for (a, spec) in result.alphas.iter().zip(&specs) {
            assert!(
                (*a as f64 - reference_alpha(*spec)).abs() < 1e-5,
                "alpha {a} vs reference {}",
                reference_alpha(*spec)
            );
        }
    }

    #[test]
    fn payload_bits_choose_the_decoded_token() {
        for (a, b, expect) in [
            (true, false, vec![TOKEN_A]),
            (false, true, vec![TOKEN_B]),
            (false, false, vec![]),
        ] {
            let cfg = fixture_config(1, false);
            let bundle = fixture_bundle(&cfg);
            let params = ModelParams::bind(&cfg, &bundle).unwrap();
            let specs: Vec<FrameSpec> = [-2.0f32, 4.0, 1.0]
                .iter()
                .map(|&s| FrameSpec::new(s, a, b))
                .collect();
            let features = feature_frames(&specs, cfg.feat_dim);
            let result = offline_recognize(&params, &features, RunOptions::default()).unwrap();
            let tokens: Vec<usize> = result.emissions.iter().map(|e| e.token_id).collect();
            assert_eq!(tokens, expect, "payload ({a}, {b})");
        }
    }

    #[test]
    fn an_interior_valley_splits_the_stream_into_two_tokens() {
        let cfg = fixture_config(1, false);
        let bundle = fixture_bundle(&cfg);
        let params = ModelParams::bind(&cfg, &bundle).unwrap();
        // Rise-fall-rise-fall in s; payload flips at the interior valley.
        let specs = vec![
            FrameSpec::new(-2.0, true, false),
            FrameSpec::new(5.0, true, false),
            FrameSpec::new(-4.0, true, false),
            FrameSpec::new(4.0, false, true),
            FrameSpec::new(0.0, false, true),
        ];
        let features = feature_frames(&specs, cfg.feat_dim);
        let result = offline_recognize(&params, &features, RunOptions::default()).unwrap();
        let got: Vec<(usize, Trigger, usize)> = result
            .emissions
            .iter()
            .map(|e| (e.token_id, e.trigger, e.trigger_frame))
            .collect();
        assert_eq!(
            got,
            vec![
                (TOKEN_A, Trigger::Valley, 2),
                (TOKEN_B, Trigger::Valley, 4),
            ]
        );
    }
}
