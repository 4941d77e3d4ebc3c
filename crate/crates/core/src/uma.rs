//! Unimodal aggregation: collapsing frame embeddings into token-level
//! vectors.
//!
//! Each frame gets a scalar weight alpha = sigmoid(w . e + b). Over one
//! token the weights are expected to rise and then fall, so valleys of
//! the alpha curve mark token boundaries and the frames between two
//! valleys are averaged, weighted by alpha, into a single embedding:
//!
//! ```text
//! c = sum(alpha_t * e_t) / sum(alpha_t)    over one valley-to-valley span
//! ```
//!
//! Boundary frames belong to both neighbouring spans. A peak between two
//! valleys means most of the token has been heard already, which the
//! early-termination decode path exploits; a peak event therefore carries
//! a snapshot of the running aggregate without closing the span.
//!
//! Event rules, applied to each frame once its successor's alpha is
//! known: the first and last frame never classify (the stream edges are
//! not evidence of a turning point), ties count as both valley and peak
//! with valley winning, and a frame equal to its predecessor never fires
//! so a flat run yields at most one event at its first frame. `finalize`
//! always closes the last span with a valley at the final frame.

use crate::error::{PipelineError, Result};
use crate::weights::{BundleError, ModelConfig, TensorBundle};

// ======================================================================
// Classification
// ======================================================================

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UmaEventKind {
    /// Token boundary: the span up to this frame is complete.
    Valley,
    /// Interior maximum: the running span is mostly heard.
    Peak,
}

/// Pure three-point rule. A point no higher than both neighbours is a
/// valley, one no lower than both is a peak; a point that is both (a
/// flat neighbourhood) counts as a valley.
#[must_use]
pub fn classify_point(prev: f32, cur: f32, next: f32) -> Option<UmaEventKind> {
    let valley = cur <= prev && cur <= next;
    let peak = cur >= prev && cur >= next;
    if valley {
        Some(UmaEventKind::Valley)
    } else if peak {
        Some(UmaEventKind::Peak)
    } else {
        None
    }
}

// ======================================================================
// Parameters and events
// ======================================================================

pub struct UmaParams<'a> {
    w: &'a [f32],
    b: f32,
    d: usize,
}

impl<'a> UmaParams<'a> {
    pub fn bind(
        cfg: &ModelConfig,
        bundle: &'a TensorBundle,
    ) -> std::result::Result<Self, BundleError> {
        let d = cfg.model_dim;
        Ok(UmaParams {
            w: bundle.expect("uma.w", &[d])?.data(),
            b: bundle.expect("uma.b", &[1])?.data()[0],
            d,
        })
    }

    /// Frame weight in (0, 1).
    #[must_use]
    pub fn alpha(&self, e: &[f32]) -> f32 {
        let mut dot = self.b as f64;
        for (w, x) in self.w.iter().zip(e) {
            dot += *w as f64 * *x as f64;
        }
        (1.0 / (1.0 + (-dot).exp())) as f32
    }
}

#[derive(Debug, Clone)]
pub struct UmaEvent {
    pub kind: UmaEventKind,
    /// Frame the event fired on.
    pub frame: usize,
    /// First frame contributing to the aggregate.
    pub seg_start: usize,
    /// Alpha at the firing frame.
    pub alpha: f32,
    /// Weighted average embedding over seg_start ..= frame.
    pub embedding: Vec<f32>,
}

// ======================================================================
// Streaming state
// ======================================================================

/// Running aggregation state. A frame is held pending until the next
/// frame's alpha arrives and settles its classification; accumulators
/// are kept in f64 so long spans do not drift.
pub struct UmaState {
    num: Vec<f64>,
    den: f64,
    seg_start: usize,
    pending: Option<(Vec<f32>, f32)>,
    alpha_before_pending: Option<f32>,
    frames: usize,
    finalized: bool,
}

impl UmaState {
    #[must_use]
    pub fn new(d: usize) -> Self {
        UmaState {
            num: vec![0.0; d],
            den: 0.0,
            seg_start: 0,
            pending: None,
            alpha_before_pending: None,
            frames: 0,
            finalized: false,
        }
    }

    #[must_use]
    pub fn frames_seen(&self) -> usize {
        self.frames
    }

    fn accumulate(&mut self, e: &[f32], alpha: f32) {
        for (n, &x) in self.num.iter_mut().zip(e) {
            *n += alpha as f64 * x as f64;
        }
        self.den += alpha as f64;
    }

    fn aggregate(&self) -> Vec<f32> {
        self.num.iter().map(|&n| (n / self.den) as f32).collect()
    }
}

/// Feeds one frame embedding. Returns this frame's alpha and at most one
/// event, which always concerns the previous frame.
pub fn uma_push(
    p: &UmaParams,
    state: &mut UmaState,
    e: &[f32],
) -> Result<(f32, Option<UmaEvent>)> {
    if state.finalized {
        return Err(PipelineError::Finalized("aggregation"));
    }
    if e.len() != p.d {
        return Err(PipelineError::DimMismatch {
            stage: "aggregation",
            expected: p.d,
            actual: e.len(),
        });
    }
    if e.iter().any(|v| !v.is_finite()) {
        return Err(PipelineError::NonFinite {
            stage: "aggregation",
            frame: state.frames,
        });
    }
    let alpha_now = p.alpha(e);
    let mut event = None;
    if let Some((e_p, a_p)) = state.pending.take() {
        let frame = state.frames - 1;
        state.accumulate(&e_p, a_p);
        if frame >= 1 {
            let a_prev = state
                .alpha_before_pending
                .expect("frame >= 1 implies a recorded predecessor");
            // A frame equal to its predecessor never fires: flat runs
            // classify once, at their first frame.
            if a_p != a_prev {
                match classify_point(a_prev, a_p, alpha_now) {
                    Some(UmaEventKind::Valley) => {
                        event = Some(UmaEvent {
                            kind: UmaEventKind::Valley,
                            frame,
                            seg_start: state.seg_start,
                            alpha: a_p,
                            embedding: state.aggregate(),
                        });
                        // The boundary frame opens the next span too.
                        state.num.fill(0.0);
                        state.den = 0.0;
                        state.accumulate(&e_p, a_p);
                        state.seg_start = frame;
                    }
                    Some(UmaEventKind::Peak) => {
                        event = Some(UmaEvent {
                            kind: UmaEventKind::Peak,
                            frame,
                            seg_start: state.seg_start,
                            alpha: a_p,
                            embedding: state.aggregate(),
                        });
                    }
                    None => {}
                }
            }
        }
        state.alpha_before_pending = Some(a_p);
    }
    state.pending = Some((e.to_vec(), alpha_now));
    state.frames += 1;
    Ok((alpha_now, event))
}

/// Closes the stream: the last frame always ends a span, so this emits
/// one final valley event. Erroring on an empty stream keeps downstream
/// code from dividing by an empty span.
pub fn uma_finalize(p: &UmaParams, state: &mut UmaState) -> Result<UmaEvent> {
    let _ = p;
    if state.finalized {
        return Err(PipelineError::Finalized("aggregation"));
    }
    state.finalized = true;
    let Some((e_p, a_p)) = state.pending.take() else {
        return Err(PipelineError::EmptySegment);
    };
    let frame = state.frames - 1;
    state.accumulate(&e_p, a_p);
    Ok(UmaEvent {
        kind: UmaEventKind::Valley,
        frame,
        seg_start: state.seg_start,
        alpha: a_p,
        embedding: state.aggregate(),
    })
}

// ======================================================================
// Tests
// ======================================================================

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Params over d=2 with w = [1, 0], b = 0, so alpha = sigmoid(e[0])
    /// and e[1] can carry arbitrary payload.
    struct Probe {
        w: Vec<f32>,
    }

    impl Probe {
        fn new() -> Self {
            Probe { w: vec![1.0, 0.0] }
        }

        fn params(&self) -> UmaParams<'_> {
            UmaParams {
                w: &self.w,
                b: 0.0,
                d: 2,
            }
        }
    }

    /// Embedding whose alpha is exactly `a` under the probe params.
    fn frame_with_alpha(a: f64, payload: f32) -> Vec<f32> {
        let logit = (a / (1.0 - a)).ln();
        vec![logit as f32, payload]
    }

    fn run(
        p: &UmaParams,
        frames: &[Vec<f32>],
    ) -> (Vec<f32>, Vec<UmaEvent>) {
        let mut state = UmaState::new(2);
        let mut alphas = Vec::new();
        let mut events = Vec::new();
        for f in frames {
            let (a, ev) = uma_push(p, &mut state, f).unwrap();
            alphas.push(a);
            events.extend(ev);
        }
        events.push(uma_finalize(p, &mut state).unwrap());
        (alphas, events)
    }

    #[test]
    fn classify_point_rules() {
        use UmaEventKind::*;
        assert_eq!(classify_point(0.8, 0.2, 0.9), Some(Valley));
        assert_eq!(classify_point(0.2, 0.8, 0.1), Some(Peak));
        assert_eq!(classify_point(0.1, 0.5, 0.9), None, "rising flank");
        assert_eq!(classify_point(0.9, 0.5, 0.1), None, "falling flank");
        assert_eq!(classify_point(0.5, 0.5, 0.5), Some(Valley), "flat ties break to valley");
        assert_eq!(classify_point(0.5, 0.5, 0.9), Some(Valley), "tie with prev, below next");
        assert_eq!(classify_point(0.9, 0.5, 0.5), Some(Valley));
        assert_eq!(classify_point(0.5, 0.9, 0.9), Some(Peak));
    }

    #[test]
    fn rise_then_fall_gives_one_peak_and_the_closing_valley() {
        let probe = Probe::new();
        let p = probe.params();
        let frames = vec![
            frame_with_alpha(0.2, 10.0),
            frame_with_alpha(0.8, 20.0),
            frame_with_alpha(0.1, 30.0),
        ];
        let (alphas, events) = run(&p, &frames);
        assert!((alphas[0] - 0.2).abs() < 1e-6);
        assert!((alphas[1] - 0.8).abs() < 1e-6);
        assert!((alphas[2] - 0.1).abs() < 1e-6);

        assert_eq!(events.len(), 2);
        assert_eq!(events[0].kind, UmaEventKind::Peak);
        assert_eq!(events[0].frame, 1);
        assert_eq!(events[0].seg_start, 0);
        // Snapshot over frames 0..=1: (0.2*10 + 0.8*20) / (0.2 + 0.8).
        assert!((events[0].embedding[1] as f64 - 18.0).abs() < 1e-5);

        assert_eq!(events[1].kind, UmaEventKind::Valley);
        assert_eq!(events[1].frame, 2);
        assert_eq!(events[1].seg_start, 0);
        // Whole stream: (0.2*10 + 0.8*20 + 0.1*30) / 1.1.
        assert!((events[1].embedding[1] as f64 - 21.0 / 1.1).abs() < 1e-5);
    }

    #[test]
    fn monotone_rise_only_closes_at_the_end() {
        let probe = Probe::new();
        let p = probe.params();
        let frames: Vec<Vec<f32>> = [0.1, 0.2, 0.3, 0.4]
            .iter()
            .map(|&a| frame_with_alpha(a, a as f32 * 100.0))
            .collect();
        let (_, events) = run(&p, &frames);
        assert_eq!(events.len(), 1, "no interior turning point");
        assert_eq!(events[0].kind, UmaEventKind::Valley);
        assert_eq!(events[0].frame, 3);
        assert_eq!(events[0].seg_start, 0);
    }

    #[test]
    fn first_frame_never_fires_even_on_a_falling_start() {
        let probe = Probe::new();
        let p = probe.params();
        let frames = vec![
            frame_with_alpha(0.9, 1.0),
            frame_with_alpha(0.1, 2.0),
            frame_with_alpha(0.5, 3.0),
        ];
        let (_, events) = run(&p, &frames);
        let frames_fired: Vec<usize> = events.iter().map(|e| e.frame).collect();
        assert_eq!(frames_fired, vec![1, 2], "valley at 1, closing valley at 2");
        assert_eq!(events[0].kind, UmaEventKind::Valley);
    }

    #[test]
    fn valley_boundary_frame_is_shared_by_both_spans() {
        let probe = Probe::new();
        let p = probe.params();
        let frames = vec![
            frame_with_alpha(0.8, 4.0),
            frame_with_alpha(0.2, 6.0),
            frame_with_alpha(0.9, 8.0),
        ];
        let (_, events) = run(&p, &frames);
        assert_eq!(events.len(), 2);
        // First span 0..=1: (0.8*4 + 0.2*6) / 1.0.
        assert_eq!(events[0].frame, 1);
        assert!((events[0].embedding[1] as f64 - 4.4).abs() < 1e-5);
        // Second span re-opens at frame 1: (0.2*6 + 0.9*8) / 1.1.
        assert_eq!(events[1].seg_start, 1);
        assert!((events[1].embedding[1] as f64 - 8.4 / 1.1).abs() < 1e-5);
    }

    #[test]
    fn flat_run_fires_at_most_once() {
        let probe = Probe::new();
        let p = probe.params();
        let flat: Vec<Vec<f32>> = (0..4).map(|i| frame_with_alpha(0.5, i as f32)).collect();
        let (_, events) = run(&p, &flat);
        assert_eq!(events.len(), 1, "an all-flat stream has no interior events");
        assert_eq!(events[0].frame, 3);

        let plateau = vec![
            frame_with_alpha(0.3, 0.0),
            frame_with_alpha(0.7, 1.0),
            frame_with_alpha(0.7, 2.0),
            frame_with_alpha(0.2, 3.0),
        ];
        let (_, events) = run(&p, &plateau);
        let peaks: Vec<usize> = events
            .iter()
            .filter(|e| e.kind == UmaEventKind::Peak)
            .map(|e| e.frame)
            .collect();
        assert_eq!(peaks, vec![1], "the plateau peaks once, at its first frame");
    }

    #[test]
    fn single_frame_stream_returns_its_own_embedding() {
        let probe = Probe::new();
        let p = probe.params();
        let mut state = UmaState::new(2);
        let frame = frame_with_alpha(0.3, 7.5);
        uma_push(&p, &mut state, &frame).unwrap();
        let ev = uma_finalize(&p, &mut state).unwrap();
        assert_eq!(ev.frame, 0);
        assert_eq!(ev.seg_start, 0);
        for (got, want) in ev.embedding.iter().zip(&frame) {
            assert!((got - want).abs() < 1e-6, "weights cancel on a single frame");
        }
    }

    #[test]
    fn two_frames_classify_nothing_until_finalize() {
        let probe = Probe::new();
        let p = probe.params();
        let (_, events) = run(
            &p,
            &[frame_with_alpha(0.9, 1.0), frame_with_alpha(0.1, 2.0)],
        );
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].frame, 1);
    }

    #[test]
    fn random_streams_match_the_brute_force_scan() {
        let probe = Probe::new();
        let p = probe.params();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for case in 0..200 {
            let t = rng.gen_range(1..=40);
            // Quantized alphas provoke ties and flat runs often.
            let frames: Vec<Vec<f32>> = (0..t)
                .map(|_| {
                    let a = rng.gen_range(1..=9) as f64 / 10.0;
                    frame_with_alpha(a, rng.gen::<f32>() * 10.0 - 5.0)
                })
                .collect();

            let mut state = UmaState::new(2);
            let mut alphas = Vec::new();
            let mut got = Vec::new();
            for f in &frames {
                let (a, ev) = uma_push(&p, &mut state, f).unwrap();
                alphas.push(a as f64);
                got.extend(ev);
            }
            got.push(uma_finalize(&p, &mut state).unwrap());

            let want = oracle::aggregate_by_scan(&frames, &alphas);
            assert_eq!(got.len(), want.len(), "case {case}: event count");
            for (g, w) in got.iter().zip(&want) {
                assert_eq!(g.frame, w.frame, "case {case}");
                assert_eq!(g.kind, w.kind, "case {case} frame {}", g.frame);
                assert_eq!(g.seg_start, w.seg_start, "case {case} frame {}", g.frame);
                for (a, b) in g.embedding.iter().zip(&w.embedding) {
                    assert!(
                        (*a as f64 - b).abs() < 1e-6,
                        "case {case} frame {}: {a} vs {b}",
                        g.frame
                    );
                }
            }
        }
    }

    #[test]
    fn finalize_guards() {
        let probe = Probe::new();
        let p = probe.params();
        let mut state = UmaState::new(2);
        assert!(matches!(
            uma_finalize(&p, &mut state),
            Err(PipelineError::EmptySegment)
        ));
        let mut state = UmaState::new(2);
        uma_push(&p, &mut state, &frame_with_alpha(0.5, 0.0)).unwrap();
        uma_finalize(&p, &mut state).unwrap();
        assert!(matches!(
            uma_push(&p, &mut state, &frame_with_alpha(0.5, 0.0)),
            Err(PipelineError::Finalized(_))
        ));
        assert!(matches!(
            uma_finalize(&p, &mut state),
            Err(PipelineError::Finalized(_))
        ));
    }

    #[test]
    fn bad_frames_are_rejected() {
        let probe = Probe::new();
        let p = probe.params();
        let mut state = UmaState::new(2);
        assert!(matches!(
            uma_push(&p, &mut state, &[1.0]),
            Err(PipelineError::DimMismatch { .. })
        ));
        assert!(matches!(
            uma_push(&p, &mut state, &[f32::NAN, 0.0]),
            Err(PipelineError::NonFinite { .. })
        ));
    }
}
