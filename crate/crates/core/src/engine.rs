//! End-to-end recognition: feature frames in, token emissions out.
//!
//! The pipeline per stream is subsample -> encoder -> lookahead ->
//! aggregation -> decoder. Aggregation valleys close a token span and
//! trigger a decode; with early termination enabled, peaks additionally
//! trigger a speculative decode, since by the peak most of the token has
//! been heard:
//!
//!  - peak decode is non-blank: emit it now, keep the decoder step, and
//!    remember the token;
//!  - peak decode is blank: roll the decoder back and wait for the
//!    valley as usual;
//!  - at the valley, decode from the current state and drop the result
//!    if it repeats the remembered peak token (the token was already
//!    emitted early). A differing valley token is emitted as well by
//!    default, so a wrong peak shows up as an insertion, not a deletion.
//!
//! Emission timing charges every known delay to the token: one frame of
//! classification delay (a turning point needs its successor's alpha)
//! plus the lookahead delay of (k-1)/2 frames. The rule also applies to
//! tokens flushed at finalize, keeping timestamps comparable across a
//! corpus.
//!
//! `offline_recognize` runs the batch forms of the same stages over a
//! complete utterance and must produce identical emissions; the
//! streaming path differs in its ring buffers and carried state, which
//! is exactly what the equivalence tests pin down.

use crate::decoder::{decoder_step, DecoderParams, DecoderState, Snapshot};
use crate::error::{PipelineError, Result};
use crate::frontend::{subsample_forward, subsample_step, SubsampleParams, SubsampleState};
use crate::lookahead::{
    lookahead_finalize, lookahead_forward, lookahead_push, LookaheadParams, LookaheadState,
};
use crate::math::argmax;
use crate::ssm::{encoder_forward, encoder_step, EncoderParams, EncoderState};
use crate::uma::{uma_finalize, uma_push, UmaEvent, UmaEventKind, UmaParams, UmaState};
use crate::weights::{BundleError, ModelConfig, TensorBundle, BLANK};

// ======================================================================
// Bound model
// ======================================================================

/// All stage parameters bound against one weight bundle. Immutable and
/// shareable across any number of concurrent streams.
pub struct ModelParams<'a> {
    pub cfg: ModelConfig,
    sub: SubsampleParams<'a>,
    enc: EncoderParams<'a>,
    la: LookaheadParams<'a>,
    uma: UmaParams<'a>,
    dec: DecoderParams<'a>,
}

impl<'a> ModelParams<'a> {
    pub fn bind(
        cfg: &ModelConfig,
        bundle: &'a TensorBundle,
    ) -> std::result::Result<Self, BundleError> {
        Ok(ModelParams {
            cfg: cfg.clone(),
            sub: SubsampleParams::bind(cfg, bundle)?,
            enc: EncoderParams::bind(cfg, bundle)?,
            la: LookaheadParams::bind(cfg, bundle)?,
            uma: UmaParams::bind(cfg, bundle)?,
            dec: DecoderParams::bind(cfg, bundle)?,
        })
    }

    /// Total delay charged to each emission on top of its trigger frame.
    #[must_use]
    pub fn emission_delay(&self) -> usize {
        1 + self.la.delay()
    }
}

// ======================================================================
// Emissions
// ======================================================================

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trigger {
    /// Decoded at a span-closing valley.
    Valley,
    /// Decoded speculatively at a peak (early termination).
    PeakET,
}

impl std::fmt::Display for Trigger {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Trigger::Valley => write!(f, "valley"),
            Trigger::PeakET => write!(f, "peak_et"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Emission {
    pub token_id: usize,
    pub trigger: Trigger,
    /// Frame the aggregation event fired on (encoder frame rate).
    pub trigger_frame: usize,
    /// Frame the token was actually decodable: trigger_frame plus one
    /// frame of classification delay plus the lookahead delay.
    pub emit_frame: usize,
    pub timestamp_ms: u64,
}

/// Options that vary per run rather than per model.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Record the per-frame aggregation weights.
    pub dump_alpha: bool,
    /// Experiment gate: when a peak token is pending at a valley,
    /// suppress the valley emission even if the tokens differ.
    pub et_suppress_mismatch: bool,
    /// Experiment gate: when the valley token differs from the pending
    /// peak token, rewind the decoder to its pre-peak state and decode
    /// the valley span from there instead.
    pub et_rollback_on_mismatch: bool,
}

/// Everything a finished run produced.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub emissions: Vec<Emission>,
    /// Per-frame aggregation weights; empty unless dump_alpha was set.
    pub alphas: Vec<f32>,
    /// Decoder invocations, including speculative ones.
    pub decode_count: usize,
}

// ======================================================================
// Decode policy
// ======================================================================

/// The event-to-token half of the pipeline, shared verbatim by the
/// streaming and batch drivers: aggregation state, decoder state, and
/// the early-termination bookkeeping.
struct DecodeCore<'a, 'b> {
    params: &'b ModelParams<'a>,
    options: RunOptions,
    uma: UmaState,
    dec: DecoderState,
    last_peak: Option<(usize, Snapshot)>,
    last_valley_token: Option<usize>,
    emissions: Vec<Emission>,
    alphas: Vec<f32>,
    decode_count: usize,
}

impl<'a, 'b> DecodeCore<'a, 'b> {
    fn new(params: &'b ModelParams<'a>, options: RunOptions) -> Result<Self> {
        if options.et_suppress_mismatch && options.et_rollback_on_mismatch {
            return Err(PipelineError::InvalidConfig(
                "et_suppress_mismatch and et_rollback_on_mismatch are mutually exclusive".into(),
            ));
        }
        Ok(DecodeCore {
            params,
            options,
            uma: UmaState::new(params.cfg.model_dim),
            dec: DecoderState::new(&params.dec),
            last_peak: None,
            last_valley_token: None,
            emissions: Vec::new(),
            alphas: Vec::new(),
            decode_count: 0,
        })
    }

    fn emission(&self, token_id: usize, trigger: Trigger, trigger_frame: usize) -> Emission {
        let emit_frame = trigger_frame + self.params.emission_delay();
        Emission {
            token_id,
            trigger,
            trigger_frame,
            emit_frame,
            timestamp_ms: emit_frame as u64 * u64::from(self.params.cfg.frame_shift_ms),
        }
    }

    fn decode(&mut self, embedding: &[f32]) -> Result<usize> {
        let logits = decoder_step(&self.params.dec, &mut self.dec, embedding)?;
        self.decode_count += 1;
        Ok(argmax(&logits))
    }

    fn handle_event(&mut self, event: &UmaEvent, out: &mut Vec<Emission>) -> Result<()> {
        match event.kind {
            UmaEventKind::Peak => {
                if !self.params.cfg.et_enabled {
                    return Ok(());
                }
                let snap = self.dec.snapshot();
                let tok = self.decode(&event.embedding)?;
                if tok != BLANK {
                    self.last_peak = Some((tok, snap));
                    out.push(self.emission(tok, Trigger::PeakET, event.frame));
                } else {
                    // Nothing worth saying yet: undo the speculative
                    // step and let the valley decide.
                    self.dec.restore(snap, self.params.cfg.model_dim)?;
                }
            }
            UmaEventKind::Valley => {
                let mut tok = self.decode(&event.embedding)?;
                let pending = self.last_peak.take();
                self.last_valley_token = Some(tok);
                match pending {
                    Some((peak_tok, _)) if tok == peak_tok => {
                        // Already emitted at the peak; the repeat at the
                        // valley is dropped.
                    }
                    Some(_) if self.options.et_suppress_mismatch => {}
                    Some((peak_tok, snap))
                        if self.options.et_rollback_on_mismatch && tok != BLANK =>
                    {
                        // Treat the peak as a misfire: erase it (and the
                        // valley step just taken) from the decoder
                        // history and decode the span cleanly.
                        self.dec.restore(snap, self.params.cfg.model_dim)?;
                        tok = self.decode(&event.embedding)?;
                        self.last_valley_token = Some(tok);
                        if tok != BLANK && tok != peak_tok {
                            out.push(self.emission(tok, Trigger::Valley, event.frame));
                        }
                    }
                    _ => {
                        if tok != BLANK {
                            out.push(self.emission(tok, Trigger::Valley, event.frame));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Feeds one lookahead-rate frame through aggregation and decoding.
    fn consume(&mut self, frame: &[f32], out: &mut Vec<Emission>) -> Result<()> {
        let (alpha, event) = uma_push(&self.params.uma, &mut self.uma, frame)?;
        if self.options.dump_alpha {
            self.alphas.push(alpha);
        }
        if let Some(ev) = event {
            self.handle_event(&ev, out)?;
        }
        Ok(())
    }

    /// Closes the final span. A stream that never produced a frame has
    /// nothing to close and emits nothing.
    fn finish(&mut self, out: &mut Vec<Emission>) -> Result<()> {
        if self.uma.frames_seen() == 0 {
            return Ok(());
        }
        let ev = uma_finalize(&self.params.uma, &mut self.uma)?;
        self.handle_event(&ev, out)
    }

    fn into_result(self) -> RunResult {
        RunResult {
            emissions: self.emissions,
            alphas: self.alphas,
            decode_count: self.decode_count,
        }
    }
}

// ======================================================================
// Streaming driver
// ======================================================================

/// One live stream. Single-owner; share the `ModelParams` across as
/// many handles as needed.
pub struct StreamHandle<'a, 'b> {
    core: DecodeCore<'a, 'b>,
    sub: SubsampleState,
    enc: EncoderState,
    la: LookaheadState,
    frame_clock: usize,
    finalized: bool,
}

impl<'a, 'b> StreamHandle<'a, 'b> {
    pub fn new(params: &'b ModelParams<'a>, options: RunOptions) -> Result<Self> {
        Ok(StreamHandle {
            core: DecodeCore::new(params, options)?,
            sub: SubsampleState::new(),
            enc: EncoderState::new(&params.enc),
            la: LookaheadState::new(),
            frame_clock: 0,
            finalized: false,
        })
    }

    /// Feeds one feature frame; returns any tokens it settled. At most
    /// one aggregation event can resolve per frame, so the list holds
    /// zero or one emissions.
    pub fn push_frame(&mut self, frame: &[f32]) -> Result<Vec<Emission>> {
        if self.finalized {
            return Err(PipelineError::Finalized("engine"));
        }
        let params = self.core.params;
        let mut out = Vec::new();
        if let Some(enc_in) = subsample_step(&params.sub, &mut self.sub, frame)? {
            let enc_out = encoder_step(&params.enc, &mut self.enc, &enc_in)?;
            self.frame_clock += 1;
            if let Some(la_out) = lookahead_push(&params.la, &mut self.la, &enc_out)? {
                self.core.consume(&la_out, &mut out)?;
            }
        }
        self.core.emissions.extend(out.iter().cloned());
        Ok(out)
    }

    /// Ends the stream: flushes the lookahead tail and closes the last
    /// span. Errors on a second call.
    pub fn finalize(&mut self) -> Result<Vec<Emission>> {
        if self.finalized {
            return Err(PipelineError::Finalized("engine"));
        }
        self.finalized = true;
        let params = self.core.params;
        let mut out = Vec::new();
        for la_out in lookahead_finalize(&params.la, &mut self.la)? {
            self.core.consume(&la_out, &mut out)?;
        }
        self.core.finish(&mut out)?;
        self.core.emissions.extend(out.iter().cloned());
        Ok(out)
    }

    /// Every emission so far, in order.
    #[must_use]
    pub fn emitted(&self) -> &[Emission] {
        &self.core.emissions
    }

    /// Encoder-rate frames consumed so far.
    #[must_use]
    pub fn frame_clock(&self) -> usize {
        self.frame_clock
    }

    #[must_use]
    pub fn decode_count(&self) -> usize {
        self.core.decode_count
    }

    /// Consumes the handle; valid after finalize.
    #[must_use]
    pub fn into_result(self) -> RunResult {
        self.core.into_result()
    }
}

// ======================================================================
// Batch driver
// ======================================================================

/// Recognizes a complete utterance using the batch forms of every
/// stage. Produces emissions identical to pushing the same frames
/// through a `StreamHandle` and finalizing.
pub fn offline_recognize(
    params: &ModelParams,
    features: &[Vec<f32>],
    options: RunOptions,
) -> Result<RunResult> {
    let enc_in = subsample_forward(&params.sub, features)?;
    let enc_out = encoder_forward(&params.enc, &enc_in)?;
    let la_out = lookahead_forward(&params.la, &enc_out)?;
    let mut core = DecodeCore::new(params, options)?;
    let mut out = Vec::new();
    for frame in &la_out {
        core.consume(frame, &mut out)?;
    }
    core.finish(&mut out)?;
    core.emissions = out;
    Ok(core.into_result())
}

/// Formats one emission as the tab-separated log line consumed by the
/// latency tooling: utterance id, token id, trigger, emit milliseconds.
#[must_use]
pub fn emission_log_line(utt_id: &str, e: &Emission) -> String {
    format!("{utt_id}\t{}\t{}\t{}", e.token_id, e.trigger, e.timestamp_ms)
}

// ======================================================================
// Tests
// ======================================================================
