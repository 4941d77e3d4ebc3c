//! Recognition latency measurement.
//!
//! Latency of a token is its emission timestamp minus the ground-truth
//! end time of the spoken token, matched positionally within each
//! utterance. Tokens are pooled across the whole test set, the largest
//! 10 percent (floor) are dropped as outliers, and three summary
//! numbers come out of the remainder:
//!
//!  - Avg: mean over all surviving tokens;
//!  - FT: mean over utterances of the first token's latency, skipping
//!    utterances whose first token was dropped as an outlier;
//!  - LT: the same for last tokens.
//!
//! Outlier selection orders ties by utterance id and token index, so
//! the report never depends on input ordering. Emission-count and
//! alignment-count mismatches are tolerated: the unmatched tail tokens
//! are counted but never scored.
//!
//! Also provides the chunk emission rule used when comparing against
//! chunk-based systems, where a token's emission time is the end of the
//! chunk it falls in: the least multiple of the chunk size at or after
//! the token's own time.

use std::collections::HashMap;

use crate::engine::Trigger;
use crate::error::{PipelineError, Result};

// ======================================================================
// Input types
// ======================================================================

/// One token line from an emission log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoggedToken {
    pub token_id: usize,
    pub trigger: Trigger,
    pub emit_ms: u64,
}

/// All emissions of one utterance, in emission order.
#[derive(Debug, Clone)]
pub struct UttEmissions {
    pub utt_id: String,
    pub tokens: Vec<LoggedToken>,
}

/// Ground-truth token end times for one utterance, in token order.
#[derive(Debug, Clone)]
pub struct GroundTruthAlignment {
    utt_id: String,
    end_ms: Vec<u64>,
}

impl GroundTruthAlignment {
    /// End times must be nondecreasing: tokens cannot end out of order.
    pub fn new(utt_id: impl Into<String>, end_ms: Vec<u64>) -> Result<Self> {
        let utt_id = utt_id.into();
        if end_ms.windows(2).any(|w| w[1] < w[0]) {
            return Err(PipelineError::Parse(format!(
                "alignment for {utt_id}: end times must be nondecreasing"
            )));
        }
        Ok(GroundTruthAlignment { utt_id, end_ms })
    }

    #[must_use]
    pub fn utt_id(&self) -> &str {
        &self.utt_id
    }

    #[must_use]
    pub fn end_ms(&self) -> &[u64] {
        &self.end_ms
    }
}

// ======================================================================
// Report
// ======================================================================

#[derive(Debug, Clone, PartialEq)]
pub struct LatencyReport {
    pub ft_ms: f64,
    pub lt_ms: f64,
    pub avg_ms: f64,
    /// Positionally matched tokens pooled across utterances.
    pub tokens_total: usize,
    /// Outliers dropped: exactly floor(0.10 * tokens_total).
    pub tokens_excluded: usize,
    /// Tail tokens without a positional counterpart; counted, not scored.
    pub tokens_unmatched: usize,
}

/// Pools matched tokens, applies the 10 percent outlier rule, and
/// summarizes. Errors when nothing matches at all, or when outlier
/// exclusion removed every first (or last) token, leaving that measure
/// undefined.
pub fn compute_latency(
    emissions: &[UttEmissions],
    truths: &[GroundTruthAlignment],
) -> Result<LatencyReport> {
    let mut truth_index: HashMap<&str, &GroundTruthAlignment> = HashMap::new();
    for t in truths {
        if truth_index.insert(t.utt_id.as_str(), t).is_some() {
            return Err(PipelineError::Parse(format!(
                "duplicate alignment for utterance {}",
                t.utt_id
            )));
        }
    }
    let mut seen: HashMap<&str, ()> = HashMap::new();
    for e in emissions {
        if seen.insert(e.utt_id.as_str(), ()).is_some() {
            return Err(PipelineError::Parse(format!(
                "duplicate emissions for utterance {}",
                e.utt_id
            )));
        }
    }

    struct Matched<'a> {
        utt_id: &'a str,
        token_index: usize,
        latency: i64,
        first: bool,
        last: bool,
    }

    let mut pool: Vec<Matched> = Vec::new();
    let mut unmatched = 0usize;
    for e in emissions {
        let Some(truth) = truth_index.get(e.utt_id.as_str()) else {
            unmatched += e.tokens.len();
            continue;
        };
        let m = e.tokens.len().min(truth.end_ms.len());
        unmatched += e.tokens.len() - m + truth.end_ms.len() - m;
        for i in 0..m {
            pool.push(Matched {
                utt_id: &e.utt_id,
                token_index: i,
                latency: e.tokens[i].emit_ms as i64 - truth.end_ms[i] as i64,
                first: i == 0,
                last: i == m - 1,
            });
        }
    }
    for t in truths {
        if !emissions.iter().any(|e| e.utt_id == t.utt_id) {
            unmatched += t.end_ms.len();
        }
    }

    if pool.is_empty() {
        return Err(PipelineError::EmptySegment);
    }

    // Worst 10 percent, pooled. The order (latency descending, then
    // utterance id, then token index) is total, so the excluded set is
    // a function of the data alone.
    let total = pool.len();
    let exclude = total / 10;
    let mut order: Vec<usize> = (0..total).collect();
    order.sort_by(|&a, &b| {
        pool[b]
            .latency
            .cmp(&pool[a].latency)
            .then_with(|| pool[a].utt_id.cmp(pool[b].utt_id))
            .then_with(|| pool[a].token_index.cmp(&pool[b].token_index))
    });
    let mut excluded = vec![false; total];
    for &i in &order[..exclude] {
        excluded[i] = true;
    }

    let mut sum = 0.0f64;
    let mut ft = (0.0f64, 0usize);
    let mut lt = (0.0f64, 0usize);
    for (i, m) in pool.iter().enumerate() {
        if excluded[i] {
            continue;
        }
        sum += m.latency as f64;
        if m.first {
            ft = (ft.0 + m.latency as f64, ft.1 + 1);
        }
        if m.last {
            lt = (lt.0 + m.latency as f64, lt.1 + 1);
        }
    }
    if ft.1 == 0 || lt.1 == 0 {
        return Err(PipelineError::InvalidConfig(
            "outlier exclusion removed every first or last token; report undefined".into(),
        ));
    }

    Ok(LatencyReport {
        ft_ms: ft.0 / ft.1 as f64,
        lt_ms: lt.0 / lt.1 as f64,
        avg_ms: sum / (total - exclude) as f64,
        tokens_total: total,
        tokens_excluded: exclude,
        tokens_unmatched: unmatched,
    })
}

/// Emission times under a chunk-based regime: each token surfaces at
/// the end of its chunk, the least multiple of `chunk_ms` at or after
/// the token's time.
pub fn chunk_timestamp_rule(token_ms: &[u64], chunk_ms: u64) -> Result<Vec<u64>> {
    if chunk_ms == 0 {
        return Err(PipelineError::InvalidConfig(
            "chunk size must be positive".into(),
        ));
    }
    Ok(token_ms
        .iter()
        .map(|&t| t.div_ceil(chunk_ms) * chunk_ms)
        .collect())
}

// ======================================================================
// Text formats
// ======================================================================

/// Parses the tab-separated emission log produced by the recognizer:
/// `utt_id<TAB>token_id<TAB>trigger<TAB>emit_ms`, with `#` comments.
/// Utterances keep first-appearance order.
pub fn parse_emission_log(text: &str) -> Result<Vec<UttEmissions>> {
    let mut order: Vec<String> = Vec::new();
    let mut by_utt: HashMap<String, Vec<LoggedToken>> = HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split('\t');
        let bad = |what: &str| {
            PipelineError::Parse(format!("emission log line {}: {what}", lineno + 1))
        };
        let utt = fields.next().filter(|s| !s.is_empty()).ok_or_else(|| bad("missing utterance id"))?;
        let token_id = fields
            .next()
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| bad("bad token id"))?;
        let trigger = match fields.next() {
            Some("valley") => Trigger::Valley,
            Some("peak_et") => Trigger::PeakET,
            _ => return Err(bad("trigger must be valley or peak_et")),
        };
        let emit_ms = fields
            .next()
            .and_then(|s| s.parse::<u64>().ok())
            .ok_or_else(|| bad("bad emit time"))?;
        if fields.next().is_some() {
            return Err(bad("too many fields"));
        }
        if !by_utt.contains_key(utt) {
            order.push(utt.to_string());
        }
        by_utt.entry(utt.to_string()).or_default().push(LoggedToken {
            token_id,
            trigger,
            emit_ms,
        });
    }
    Ok(order
        .into_iter()
        .map(|utt_id| {
            let tokens = by_utt.remove(&utt_id).unwrap_or_default();
            UttEmissions { utt_id, tokens }
        })
        .collect())
}

/// Parses alignment rows `utt_id,token_index,end_ms` (optional header,
/// `#` comments). Indices per utterance must be dense from zero; rows
/// may arrive in any order.
pub fn parse_alignments_csv(text: &str) -> Result<Vec<GroundTruthAlignment>> {
    let mut order: Vec<String> = Vec::new();
    let mut by_utt: HashMap<String, Vec<(usize, u64)>> = HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line == "utt_id,token_index,end_ms" {
            continue;
        }
        let bad = |what: &str| {
            PipelineError::Parse(format!("alignment line {}: {what}", lineno + 1))
        };
        let mut fields = line.split(',');
        let utt = fields.next().filter(|s| !s.is_empty()).ok_or_else(|| bad("missing utterance id"))?;
        let idx = fields
            .next()
            .and_then(|s| s.trim().parse::<usize>().ok())
            .ok_or_else(|| bad("bad token index"))?;
        let end_ms = fields
            .next()
            .and_then(|s| s.trim().parse::<u64>().ok())
            .ok_or_else(|| bad("bad end time"))?;
        if fields.next().is_some() {
            return Err(bad("too many fields"));
        }
        if !by_utt.contains_key(utt) {
            order.push(utt.to_string());
        }
        by_utt.entry(utt.to_string()).or_default().push((idx, end_ms));
    }
    order
        .into_iter()
        .map(|utt_id| {
            let mut rows = by_utt.remove(&utt_id).unwrap_or_default();
            rows.sort_by_key(|&(idx, _)| idx);
            for (expect, &(idx, _)) in rows.iter().enumerate() {
                if idx != expect {
                    return Err(PipelineError::Parse(format!(
                        "alignment for {utt_id}: token indices must be dense from 0 (found {idx} at position {expect})"
                    )));
                }
            }
            GroundTruthAlignment::new(utt_id, rows.into_iter().map(|(_, ms)| ms).collect())
        })
        .collect()
}

// ======================================================================
// Tests
// ======================================================================
