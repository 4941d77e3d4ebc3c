//! Audio input, log-mel feature extraction, and the causal convolutional
//! subsampler that turns 8 ms feature frames into 32 ms model frames.
//!
//! Feature framing: 32 ms Hann window (512 samples at 16 kHz), 8 ms hop
//! (128 samples), 512-point FFT, 80 triangular mel filters over 0-8000 Hz,
//! natural log of (energy + 1e-10). Frame t covers samples
//! [t*128, t*128 + 512), so audio shorter than one window yields no frames.
//!
//! Subsampling: two 3x3 convolutions, stride 2 in time and frequency,
//! ReLU, causal in time (each kernel covers frames t-2..t with zero left
//! padding). One output frame leaves per four input frames; the flattened
//! channel-by-frequency map is projected to the model width.

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

use crate::error::{PipelineError, Result};
use crate::weights::{BundleError, ModelConfig, TensorBundle};

pub const SAMPLE_RATE: u32 = 16_000;
pub const FFT_SIZE: usize = 512;
pub const HOP: usize = 128;
pub const MEL_FLOOR: f64 = 1e-10;
pub const FMAX_HZ: f64 = 8_000.0;

// ======================================================================
// Audio input
// ======================================================================

/// Mono 16 kHz audio. Samples are finite float32, nominally in [-1, 1].
#[derive(Debug, Clone)]
pub struct AudioBuffer {
    samples: Vec<f32>,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f32>) -> Result<Self> {
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(PipelineError::Audio(format!("non-finite sample at index {i}")));
        }
        Ok(AudioBuffer { samples })
    }

    #[must_use]
    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    #[must_use]
    pub fn sample_rate(&self) -> u32 {
        SAMPLE_RATE
    }

    #[must_use]
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Parses a 16-bit PCM little-endian WAV file; mono 16 kHz only.
pub fn parse_wav(bytes: &[u8]) -> Result<AudioBuffer> {
    let bad = |m: &str| Err(PipelineError::Audio(format!("wav: {m}")));
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return bad("not a RIFF/WAVE file");
    }
    let mut pos = 12usize;
    let mut format: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_start = pos + 8;
        if body_start + size > bytes.len() {
            return bad("chunk extends past end of file");
        }
        let body = &bytes[body_start..body_start + size];
        match id {
            b"fmt " => {
                if size < 16 {
                    return bad("fmt chunk too short");
                }
                let tag = u16::from_le_bytes(body[0..2].try_into().unwrap());
                let channels = u16::from_le_bytes(body[2..4].try_into().unwrap());
                let rate = u32::from_le_bytes(body[4..8].try_into().unwrap());
                let bits = u16::from_le_bytes(body[14..16].try_into().unwrap());
                format = Some((tag, channels, rate, bits));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        // Chunks are word aligned; odd sizes carry one pad byte.
        pos = body_start + size + (size & 1);
    }
    let Some((tag, channels, rate, bits)) = format else {
        return bad("missing fmt chunk");
    };
    if tag != 1 {
        return bad(&format!("only PCM supported, got format tag {tag}"));
    }
    if channels != 1 {
        return bad(&format!("only mono supported, got {channels} channels"));
    }
    if rate != SAMPLE_RATE {
        return bad(&format!("only {SAMPLE_RATE} Hz supported, got {rate}"));
    }
    if bits != 16 {
        return bad(&format!("only 16-bit samples supported, got {bits}"));
    }
    let Some(data) = data else {
        return bad("missing data chunk");
    };
    if data.len() % 2 != 0 {
        return bad("data chunk has odd byte length");
    }
    let samples = data
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]) as f32 / 32768.0)
        .collect();
    AudioBuffer::new(samples)
}

/// Parses raw little-endian float32 samples (no header), mono 16 kHz.
pub fn parse_f32_raw(bytes: &[u8]) -> Result<AudioBuffer> {
    if bytes.len() % 4 != 0 {
        return Err(PipelineError::Audio(format!(
            "raw f32: byte length {} is not a multiple of 4",
            bytes.len()
        )));
    }
    let samples = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    AudioBuffer::new(samples)
}

// ======================================================================
// Log-mel filterbank
// ======================================================================

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Number of feature frames produced for `n_samples` of audio.
#[must_use]
pub fn frame_count(n_samples: usize) -> usize {
    if n_samples < FFT_SIZE {
        0
    } else {
        (n_samples - FFT_SIZE) / HOP + 1
    }
}

/// Log-mel extractor; holds the FFT plan, Hann window, and filter shapes.
pub struct FbankExtractor {
    n_mels: usize,
    fft: Arc<dyn Fft<f32>>,
    window: Vec<f32>,
    /// Per filter: (first_bin, weights...), covering only nonzero taps.
    filters: Vec<(usize, Vec<f32>)>,
}

impl FbankExtractor {
    #[must_use]
    pub fn new(n_mels: usize) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(FFT_SIZE);
        let window: Vec<f32> = (0..FFT_SIZE)
            .map(|i| {
                let phase = 2.0 * std::f64::consts::PI * i as f64 / FFT_SIZE as f64;
                (0.5 - 0.5 * phase.cos()) as f32
            })
            .collect();
        FbankExtractor {
            n_mels,
            fft,
            window,
            filters: mel_filters(n_mels),
        }
    }

    /// Extracts all feature frames of `audio`; frame t covers samples
    /// [t*HOP, t*HOP + FFT_SIZE).
    #[must_use]
    pub fn frames(&self, audio: &AudioBuffer) -> Vec<Vec<f32>> {
        let samples = audio.samples();
        let n_frames = frame_count(samples.len());
        let mut spectrum = vec![Complex::new(0.0f32, 0.0f32); FFT_SIZE];
        let mut out = Vec::with_capacity(n_frames);
        for t in 0..n_frames {
            let start = t * HOP;
            for i in 0..FFT_SIZE {
                spectrum[i] = Complex::new(samples[start + i] * self.window[i], 0.0);
            }
            self.fft.process(&mut spectrum);
            let mut frame = Vec::with_capacity(self.n_mels);
            for (first_bin, weights) in &self.filters {
                let mut energy = 0.0f64;
                for (j, &w) in weights.iter().enumerate() {
                    energy += w as f64 * spectrum[first_bin + j].norm() as f64;
                }
                frame.push((energy + MEL_FLOOR).ln() as f32);
            }
            out.push(frame);
        }
        out
    }

    #[must_use]
    pub fn n_mels(&self) -> usize {
        self.n_mels
    }
}

/// Triangular mel filters spanning 0-8000 Hz, evaluated at FFT bin centers.
fn mel_filters(n_mels: usize) -> Vec<(usize, Vec<f32>)> {
    let n_bins = FFT_SIZE / 2 + 1;
    let bin_hz = SAMPLE_RATE as f64 / FFT_SIZE as f64;
    let mel_max = hz_to_mel(FMAX_HZ);
    let points: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_max * i as f64 / (n_mels + 1) as f64))
        .collect();
    let mut filters = Vec::with_capacity(n_mels);
    for m in 0..n_mels {
        let (left, center, right) = (points[m], points[m + 1], points[m + 2]);
        let mut first_bin = None;
        let mut weights = Vec::new();
        for b in 0..n_bins {
            let f = b as f64 * bin_hz;
            let w = if f <= left || f >= right {
                0.0
            } else if f <= center {
                (f - left) / (center - left)
            } else {
                (right - f) / (right - center)
            };
            if w > 0.0 {
                if first_bin.is_none() {
                    first_bin = Some(b);
                }
                weights.push(w as f32);
            } else if first_bin.is_some() {
                break;
            }
        }
        filters.push((first_bin.unwrap_or(0), weights));
    }
    filters
}

// ======================================================================
// Causal stride-2 subsampler
// ======================================================================

/// Weight views for the two convolutions and the output projection.
pub struct SubsampleParams<'a> {
    conv1_w: &'a [f32],
    conv1_b: &'a [f32],
    conv2_w: &'a [f32],
    conv2_b: &'a [f32],
    proj_w: &'a [f32],
    proj_b: &'a [f32],
    feat_dim: usize,
    c1: usize,
    c2: usize,
    f1: usize,
    f2: usize,
    model_dim: usize,
}

impl<'a> SubsampleParams<'a> {
    pub fn bind(cfg: &ModelConfig, bundle: &'a TensorBundle) -> std::result::Result<Self, BundleError> {
        let (c1, c2) = (cfg.sub_channels1, cfg.sub_channels2);
        let f1 = cfg.feat_dim.div_ceil(2);
        let f2 = f1.div_ceil(2);
        let d = cfg.model_dim;
        Ok(SubsampleParams {
            conv1_w: bundle.expect("sub.conv1.w", &[c1, 1, 3, 3])?.data(),
            conv1_b: bundle.expect("sub.conv1.b", &[c1])?.data(),
            conv2_w: bundle.expect("sub.conv2.w", &[c2, c1, 3, 3])?.data(),
            conv2_b: bundle.expect("sub.conv2.b", &[c2])?.data(),
            proj_w: bundle.expect("sub.proj.w", &[d, c2 * f2])?.data(),
            proj_b: bundle.expect("sub.proj.b", &[d])?.data(),
            feat_dim: cfg.feat_dim,
            c1,
            c2,
            f1,
            f2,
            model_dim: d,
        })
    }

    /// One stride-2 conv application at a single output time step.
    /// `window` holds the most recent input frames, oldest first, aligned
    /// so the last entry is the current step; missing history is zero.
    /// Input frames are channel-major [in_ch * in_f]; output likewise.
    fn conv_step(
        w: &[f32],
        b: &[f32],
        window: &[&[f32]],
        in_ch: usize,
        in_f: usize,
        out_ch: usize,
        out_f: usize,
    ) -> Vec<f32> {
        debug_assert!(window.len() <= 3 && !window.is_empty());
        let mut out = vec![0.0f32; out_ch * out_f];
        for o in 0..out_ch {
            for f in 0..out_f {
                let mut acc = b[o] as f64;
                for kt in 0..3usize {
                    // Kernel row kt corresponds to input frame t-2+kt.
                    let Some(wi) = (window.len() + kt).checked_sub(3) else {
                        continue;
                    };
                    if wi >= window.len() {
                        continue;
                    }
                    let frame = window[wi];
                    for ci in 0..in_ch {
                        for kf in 0..3usize {
                            let q = (2 * f + kf) as isize - 1;
                            if q < 0 || q as usize >= in_f {
                                continue;
                            }
                            let wv = w[((o * in_ch + ci) * 3 + kt) * 3 + kf];
                            acc += wv as f64 * frame[ci * in_f + q as usize] as f64;
                        }
                    }
                }
                out[o * out_f + f] = (acc.max(0.0)) as f32;
            }
        }
        out
    }

    fn project(&self, flat: &[f32]) -> Vec<f32> {
        let cols = self.c2 * self.f2;
        let mut out = Vec::with_capacity(self.model_dim);
        for d in 0..self.model_dim {
            let row = &self.proj_w[d * cols..(d + 1) * cols];
            let mut acc = self.proj_b[d] as f64;
            for (wv, xv) in row.iter().zip(flat) {
                acc += *wv as f64 * *xv as f64;
            }
            out.push(acc as f32);
        }
        out
    }
}

/// Streaming state: ring windows of raw frames and first-layer outputs.
#[derive(Debug, Default)]
pub struct SubsampleState {
    raw: Vec<Vec<f32>>,
    raw_seen: usize,
    mid: Vec<Vec<f32>>,
    mid_seen: usize,
}

impl SubsampleState {
    #[must_use]
    pub fn new() -> Self {
        SubsampleState::default()
    }

    /// Raw 8 ms frames consumed so far.
    #[must_use]
    pub fn frames_seen(&self) -> usize {
        self.raw_seen
    }
}

/// Consumes one feature frame; emits one model frame per four inputs.
/// Output frame i becomes available exactly when input frame 4i arrives.
pub fn subsample_step(
    params: &SubsampleParams,
    state: &mut SubsampleState,
    frame: &[f32],
) -> Result<Option<Vec<f32>>> {
    if frame.len() != params.feat_dim {
        return Err(PipelineError::DimMismatch {
            stage: "subsample",
            expected: params.feat_dim,
            actual: frame.len(),
        });
    }
    state.raw.push(frame.to_vec());
    if state.raw.len() > 3 {
        state.raw.remove(0);
    }
    let t = state.raw_seen;
    state.raw_seen += 1;
    if t % 2 != 0 {
        return Ok(None);
    }
    let window: Vec<&[f32]> = state.raw.iter().map(Vec::as_slice).collect();
    let mid = SubsampleParams::conv_step(
        params.conv1_w,
        params.conv1_b,
        &window,
        1,
        params.feat_dim,
        params.c1,
        params.f1,
    );
    state.mid.push(mid);
    if state.mid.len() > 3 {
        state.mid.remove(0);
    }
    let j = state.mid_seen;
    state.mid_seen += 1;
    if j % 2 != 0 {
        return Ok(None);
    }
    let window: Vec<&[f32]> = state.mid.iter().map(Vec::as_slice).collect();
    let low = SubsampleParams::conv_step(
        params.conv2_w,
        params.conv2_b,
        &window,
        params.c1,
        params.f1,
        params.c2,
        params.f2,
    );
    Ok(Some(params.project(&low)))
}

/// Whole-sequence form; identical arithmetic to repeated `subsample_step`.
pub fn subsample_forward(
    params: &SubsampleParams,
    frames: &[Vec<f32>],
) -> Result<Vec<Vec<f32>>> {
    let mut state = SubsampleState::new();
    let mut out = Vec::with_capacity(frames.len() / 4 + 1);
    for frame in frames {
        if let Some(v) = subsample_step(params, &mut state, frame)? {
            out.push(v);
        }
    }
    Ok(out)
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

    #[test]
    fn frame_count_matches_direct_formula() {
        // Independent count: slide a 512 window by 128 until it overruns.
        let oracle = |n: usize| {
            let mut count = 0;
            let mut start = 0;
            while start + FFT_SIZE <= n {
                count += 1;
                start += HOP;
            }
            count
        };
        for n in [0, 511, 512, 513, 639, 640, 16_000, 16_001, 44_100] {
            assert_eq!(frame_count(n), oracle(n), "n_samples = {n}");
        }
        assert_eq!(frame_count(16_000), 122, "one second of 16 kHz audio");
    }

    #[test]
    fn silence_hits_the_log_floor() {
        let fb = FbankExtractor::new(80);
        let audio = AudioBuffer::new(vec![0.0; 16_000]).unwrap();
        let frames = fb.frames(&audio);
        assert_eq!(frames.len(), 122);
        let floor = (MEL_FLOOR).ln() as f32;
        for frame in &frames {
            assert_eq!(frame.len(), 80);
            for &v in frame {
                assert!((v - floor).abs() < 1e-4, "expected log floor, got {v}");
            }
        }
    }

    #[test]
    fn short_audio_yields_no_frames() {
        let fb = FbankExtractor::new(80);
        let audio = AudioBuffer::new(vec![0.1; 511]).unwrap();
        assert!(fb.frames(&audio).is_empty());
    }

    #[test]
    fn pure_tone_peaks_in_one_constant_bin() {
        let fb = FbankExtractor::new(80);
        let samples: Vec<f32> = (0..16_000)
            .map(|i| (2.0 * std::f64::consts::PI * 1000.0 * i as f64 / 16_000.0).sin() as f32)
            .collect();
        let frames = fb.frames(&AudioBuffer::new(samples).unwrap());
        let argmax = |f: &[f32]| {
            f.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0
        };
        let first = argmax(&frames[0]);
        for (t, frame) in frames.iter().enumerate() {
            assert_eq!(argmax(frame), first, "argmax moved at frame {t}");
        }
        // 1 kHz sits well inside the band, away from both edges.
        assert!(first > 10 && first < 70, "implausible peak bin {first}");
    }

    /// Direct-DFT reference for one frame: fresh Hann window, naive f64
    /// DFT, and freshly constructed triangular filters.
    fn reference_frame(samples: &[f32], t: usize, n_mels: usize) -> Vec<f64> {
        let start = t * HOP;
        let windowed: Vec<f64> = (0..FFT_SIZE)
            .map(|i| {
                let w = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / FFT_SIZE as f64).cos();
                samples[start + i] as f64 * w
            })
            .collect();
        let n_bins = FFT_SIZE / 2 + 1;
        let mut mags = vec![0.0f64; n_bins];
        for (b, mag) in mags.iter_mut().enumerate() {
            let (mut re, mut im) = (0.0f64, 0.0f64);
            for (i, &x) in windowed.iter().enumerate() {
                let phase = -2.0 * std::f64::consts::PI * b as f64 * i as f64 / FFT_SIZE as f64;
                re += x * phase.cos();
                im += x * phase.sin();
            }
            *mag = (re * re + im * im).sqrt();
        }
        let mel = |hz: f64| 2595.0 * (1.0 + hz / 700.0).log10();
        let inv_mel = |m: f64| 700.0 * (10f64.powf(m / 2595.0) - 1.0);
        let top = mel(8000.0);
        let pts: Vec<f64> = (0..n_mels + 2)
            .map(|i| inv_mel(top * i as f64 / (n_mels + 1) as f64))
            .collect();
        (0..n_mels)
            .map(|m| {
                let (l, c, r) = (pts[m], pts[m + 1], pts[m + 2]);
                let mut e = 0.0;
                for (b, &mag) in mags.iter().enumerate() {
                    let f = b as f64 * SAMPLE_RATE as f64 / FFT_SIZE as f64;
                    let w = if f <= l || f >= r {
                        0.0
                    } else if f <= c {
                        (f - l) / (c - l)
                    } else {
                        (r - f) / (r - c)
                    };
                    e += w * mag;
                }
                (e + MEL_FLOOR).ln()
            })
            .collect()
    }

    #[test]
    fn fbank_matches_direct_dft_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let samples: Vec<f32> = (0..FFT_SIZE + 2 * HOP)
            .map(|i| {
                let tone =
                    (2.0 * std::f64::consts::PI * 740.0 * i as f64 / 16_000.0).sin() * 0.5;
                (tone + rng.gen::<f64>() * 0.1) as f32
            })
            .collect();
        let fb = FbankExtractor::new(80);
        let frames = fb.frames(&AudioBuffer::new(samples.clone()).unwrap());
        assert_eq!(frames.len(), 3);
        for t in [0usize, 1] {
            let want = reference_frame(&samples, t, 80);
            for (m, (&got, want)) in frames[t].iter().zip(&want).enumerate() {
                assert!(
                    (got as f64 - want).abs() < 1e-3,
                    "frame {t} mel {m}: {got} vs reference {want}"
                );
            }
        }
    }

    #[test]
    fn wav_roundtrip_and_rejections() {
        // Hand-assembled 16-bit mono 16 kHz WAV with four samples.
        let samples: [i16; 4] = [0, 16384, -16384, -32768];
        let mut wav = Vec::new();
        wav.extend_from_slice(b"RIFF");
        wav.extend_from_slice(&(36u32 + 8).to_le_bytes());
        wav.extend_from_slice(b"WAVE");
        wav.extend_from_slice(b"fmt ");
        wav.extend_from_slice(&16u32.to_le_bytes());
        wav.extend_from_slice(&1u16.to_le_bytes()); // PCM
        wav.extend_from_slice(&1u16.to_le_bytes()); // mono
        wav.extend_from_slice(&16_000u32.to_le_bytes());
        wav.extend_from_slice(&32_000u32.to_le_bytes()); // byte rate
        wav.extend_from_slice(&2u16.to_le_bytes()); // block align
        wav.extend_from_slice(&16u16.to_le_bytes()); // bits
        wav.extend_from_slice(b"data");
        wav.extend_from_slice(&8u32.to_le_bytes());
        for s in samples {
            wav.extend_from_slice(&s.to_le_bytes());
        }
        let audio = parse_wav(&wav).unwrap();
        assert_eq!(audio.len(), 4);
        assert_eq!(audio.samples()[0], 0.0);
        assert!((audio.samples()[1] - 0.5).abs() < 1e-6);
        assert!((audio.samples()[3] + 1.0).abs() < 1e-6);

        let mut bad_rate = wav.clone();
        bad_rate[24..28].copy_from_slice(&8_000u32.to_le_bytes());
        assert!(parse_wav(&bad_rate).is_err());
        let mut stereo = wav.clone();
        stereo[22..24].copy_from_slice(&2u16.to_le_bytes());
        assert!(parse_wav(&stereo).is_err());
        assert!(parse_wav(&wav[..20]).is_err());
        assert!(parse_wav(b"not audio at all").is_err());
    }

    #[test]
    fn raw_f32_parsing() {
        let mut bytes = Vec::new();
        for v in [0.25f32, -0.5, 1.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let audio = parse_f32_raw(&bytes).unwrap();
        assert_eq!(audio.samples(), &[0.25, -0.5, 1.0]);
        assert!(parse_f32_raw(&bytes[..5]).is_err());
        let nan = f32::NAN.to_le_bytes();
        assert!(parse_f32_raw(&nan).is_err());
    }

    // ------------------------------------------------------------------
    // Subsampler
    // ------------------------------------------------------------------

    fn sub_cfg() -> ModelConfig {
        let mut cfg = ModelConfig::with_dims(8, 2, 4);
        cfg.sub_channels1 = 3;
        cfg.sub_channels2 = 5;
        cfg.encoder_blocks = 1;
        cfg.decoder_blocks = 1;
        cfg.decoder_heads = 2;
        cfg.decoder_ff = 16;
        cfg.vocab_size = 5;
        cfg.max_positions = 32;
        cfg
    }

    fn random_frames(n: usize, dim: usize, seed: u64) -> Vec<Vec<f32>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..dim).map(|_| rng.gen::<f32>() * 2.0 - 1.0).collect())
            .collect()
    }

    #[test]
    fn one_output_per_four_inputs() {
        let cfg = sub_cfg();
        let bundle = init_random(&cfg, 5).unwrap();
        let params = SubsampleParams::bind(&cfg, &bundle).unwrap();
        for (n_in, n_out) in [(0usize, 0usize), (1, 1), (4, 1), (5, 2), (8, 2), (100, 25)] {
            let frames = random_frames(n_in, cfg.feat_dim, 17);
            let out = subsample_forward(&params, &frames).unwrap();
            assert_eq!(out.len(), n_out, "{n_in} inputs");
            for f in &out {
                assert_eq!(f.len(), cfg.model_dim);
            }
        }
    }

    #[test]
    fn zero_weights_give_zero_outputs() {
        let cfg = sub_cfg();
        let mut bundle = init_random(&cfg, 5).unwrap();
        for name in [
            "sub.conv1.w",
            "sub.conv1.b",
            "sub.conv2.w",
            "sub.conv2.b",
            "sub.proj.w",
            "sub.proj.b",
        ] {
            bundle.get_mut(name).unwrap().data_mut().fill(0.0);
        }
        let params = SubsampleParams::bind(&cfg, &bundle).unwrap();
        let frames = random_frames(12, cfg.feat_dim, 3);
        for f in subsample_forward(&params, &frames).unwrap() {
            assert!(f.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn streaming_equals_offline_bit_for_bit() {
        let cfg = sub_cfg();
        let bundle = init_random(&cfg, 9).unwrap();
        let params = SubsampleParams::bind(&cfg, &bundle).unwrap();
        let frames = random_frames(41, cfg.feat_dim, 23);
        let offline = subsample_forward(&params, &frames).unwrap();
        let mut state = SubsampleState::new();
        let mut streamed = Vec::new();
        for f in &frames {
            if let Some(v) = subsample_step(&params, &mut state, f).unwrap() {
                streamed.push(v);
            }
        }
        assert_eq!(offline.len(), streamed.len());
        for (a, b) in offline.iter().zip(&streamed) {
            for (x, y) in a.iter().zip(b) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn outputs_are_causal_in_input_frames() {
        let cfg = sub_cfg();
        let bundle = init_random(&cfg, 13).unwrap();
        let params = SubsampleParams::bind(&cfg, &bundle).unwrap();
        let base = random_frames(17, cfg.feat_dim, 29);
        let mut bumped = base.clone();
        let changed = 9;
        bumped[changed][0] += 1.0;
        let a = subsample_forward(&params, &base).unwrap();
        let b = subsample_forward(&params, &bumped).unwrap();
        // Output i consumes inputs up to frame 4i: outputs 0..=2 precede
        // the change at input 9, output 3 (input window ..12) sees it.
        for i in 0..=2 {
            assert_eq!(a[i], b[i], "output {i} depends on a future input");
        }
        assert_ne!(a[3], b[3], "change at input {changed} never surfaced");
    }

    #[test]
    fn wrong_feature_width_is_rejected() {
        let cfg = sub_cfg();
        let bundle = init_random(&cfg, 5).unwrap();
        let params = SubsampleParams::bind(&cfg, &bundle).unwrap();
        let mut state = SubsampleState::new();
        let err = subsample_step(&params, &mut state, &vec![0.0; cfg.feat_dim + 1]).unwrap_err();
        assert!(matches!(err, PipelineError::DimMismatch { .. }));
    }
}
