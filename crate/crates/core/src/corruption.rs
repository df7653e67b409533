//! Span corruption for self-supervised pre-training.
//!
//! A fraction of the tokens is removed in contiguous spans; each span is
//! replaced in the input by a sentinel (`<extra_id_0>`, `<extra_id_1>`, …)
//! and the target lists every sentinel followed by the tokens it hides.
//!
//! The number of masked tokens is `round(rate × len)`. Span lengths are
//! geometric with the requested mean, truncated to the remaining budget.
//! Spans are always separated by at least one kept token, so when too few
//! tokens are kept the trailing spans are merged. Randomness comes from
//! `ChaCha8Rng::seed_from_u64(seed)` and only integer draws (`gen_bool`,
//! `gen_range`) are used, so output is identical across platforms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::tokenize_simple;
use crate::par::{self, Execution};

pub const DEFAULT_RATE: f64 = 0.15;
pub const DEFAULT_MEAN_SPAN_LEN: f64 = 3.0;

const SENTINEL_PREFIX: &str = "<extra_id_";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CorruptionError {
    #[error("corruption rate {0} is outside [0, 1]")]
    RateOutOfRange(f64),
    #[error("mean span length must be positive, got {0}")]
    NonPositiveSpan(f64),
    #[error("cannot corrupt an empty token sequence at a positive rate")]
    EmptyTokens,
    #[error("sentinel mismatch: {0}")]
    SentinelMismatch(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedExample {
    pub input_tokens: Vec<String>,
    pub target_tokens: Vec<String>,
    pub n_spans: usize,
    pub seed: u64,
}

fn sentinel(prefix: &str, index: usize) -> String {
    format!("{prefix}{index}>")
}

/// Index of `token` if it is a sentinel under `prefix`.
fn sentinel_index(prefix: &str, token: &str) -> Option<usize> {
    let digits = token.strip_prefix(prefix)?.strip_suffix('>')?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

/// Shortest `<extra_id_`, `<extra_id__`, … prefix that no input token
/// starts with, so sentinels can never collide with text.
fn choose_prefix<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut prefix = SENTINEL_PREFIX.to_string();
    while tokens.iter().any(|t| t.as_ref().starts_with(&prefix)) {
        prefix.push('_');
    }
    prefix
}

fn check_params(rate: f64, mean_span_len: f64) -> Result<(), CorruptionError> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(CorruptionError::RateOutOfRange(rate));
    }
    if mean_span_len.is_nan() || mean_span_len <= 0.0 || mean_span_len.is_infinite() {
        return Err(CorruptionError::NonPositiveSpan(mean_span_len));
    }
    Ok(())
}

/// Masks spans of `tokens`. Deterministic in all arguments.
pub fn corrupt<S: AsRef<str>>(
    tokens: &[S],
    rate: f64,
    mean_span_len: f64,
    seed: u64,
) -> Result<MaskedExample, CorruptionError> {
    check_params(rate, mean_span_len)?;
    let n = tokens.len();
    if n == 0 && rate > 0.0 {
        return Err(CorruptionError::EmptyTokens);
    }
    let owned = || tokens.iter().map(|t| t.as_ref().to_string());
    let budget = ((rate * n as f64).round() as usize).min(n);
    if budget == 0 {
        return Ok(MaskedExample {
            input_tokens: owned().collect(),
            target_tokens: Vec::new(),
            n_spans: 0,
            seed,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stop = (1.0 / mean_span_len).min(1.0);
    let mut spans = Vec::new();
    let mut remaining = budget;
    while remaining > 0 {
        let mut len = 1;
        while len < remaining && !rng.gen_bool(stop) {
            len += 1;
        }
        spans.push(len);
        remaining -= len;
    }

    let kept = n - budget;
    while spans.len() > kept + 1 {
        let last = spans.pop().expect("more than one span");
        *spans.last_mut().expect("at least one span left") += last;
    }
    let k = spans.len();
    // Gaps before, between and after spans; interior gaps hold at least one token.
    let mut gaps = vec![0usize; k + 1];
    for gap in gaps.iter_mut().take(k).skip(1) {
        *gap = 1;
    }
    for _ in 0..kept - (k - 1) {
        gaps[rng.gen_range(0..=k)] += 1;
    }

    let prefix = choose_prefix(tokens);
    let mut source = owned();
    let mut input = Vec::with_capacity(kept + k);
    let mut target = Vec::with_capacity(budget + k);
    for (i, &len) in spans.iter().enumerate() {
        input.extend(source.by_ref().take(gaps[i]));
        let s = sentinel(&prefix, i);
        input.push(s.clone());
        target.push(s);
        target.extend(source.by_ref().take(len));
    }
    input.extend(source.by_ref().take(gaps[k]));
    debug_assert!(source.next().is_none());

    Ok(MaskedExample {
        input_tokens: input,
        target_tokens: target,
        n_spans: k,
        seed,
    })
}

/// Splices the target spans back into the input at their sentinels.
pub fn reconstruct(example: &MaskedExample) -> Result<Vec<String>, CorruptionError> {
    let mismatch = |m: String| Err(CorruptionError::SentinelMismatch(m));
    let Some(first) = example.target_tokens.first() else {
        if example.n_spans != 0 {
            return mismatch(format!("{} spans declared but target is empty", example.n_spans));
        }
        return Ok(example.input_tokens.clone());
    };
    let Some(prefix) = first.strip_suffix("0>").filter(|p| p.starts_with('<')) else {
        return mismatch(format!("target starts with `{first}`, not a first sentinel"));
    };

    let mut segments: Vec<&[String]> = Vec::new();
    let mut start = 0;
    for (i, tok) in example.target_tokens.iter().enumerate() {
        if let Some(idx) = sentinel_index(prefix, tok) {
            if i > 0 {
                segments.push(&example.target_tokens[start..i]);
            }
            if idx != segments.len() {
                return mismatch(format!("target sentinel `{tok}` out of order"));
            }
            start = i + 1;
        }
    }
    segments.push(&example.target_tokens[start..]);
    if segments.len() != example.n_spans {
        return mismatch(format!(
            "target holds {} spans but {} were declared",
            segments.len(),
            example.n_spans
        ));
    }

    let mut out = Vec::new();
    let mut next = 0;
    for tok in &example.input_tokens {
        match sentinel_index(prefix, tok) {
            Some(idx) if idx == next && idx < segments.len() => {
                out.extend(segments[idx].iter().cloned());
                next += 1;
            }
            Some(_) => return mismatch(format!("input sentinel `{tok}` out of order or unknown")),
            None => out.push(tok.clone()),
        }
    }
    if next != segments.len() {
        return mismatch(format!("input holds {next} sentinels, target {}", segments.len()));
    }
    Ok(out)
}

/// Sub-seed for the report at `index`: the top seed plus a SplitMix64 hash
/// of the index.
pub fn sub_seed(seed: u64, index: usize) -> u64 {
    let mut z = (index as u64).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    seed.wrapping_add(z ^ (z >> 31))
}

/// Corrupts every report (tokenized with
/// [`tokenize_simple`]) under its own sub-seed, preserving input order.
pub fn corrupt_corpus<S: AsRef<str> + Sync>(
    reports: &[S],
    rate: f64,
    mean_span_len: f64,
    seed: u64,
) -> Result<Vec<MaskedExample>, CorruptionError> {
    corrupt_corpus_with(reports, rate, mean_span_len, seed, Execution::default())
}

pub fn corrupt_corpus_with<S: AsRef<str> + Sync>(
    reports: &[S],
    rate: f64,
    mean_span_len: f64,
    seed: u64,
    execution: Execution,
) -> Result<Vec<MaskedExample>, CorruptionError> {
    check_params(rate, mean_span_len)?;
    par::try_map_indexed(reports, execution, |i, text| {
        corrupt(&tokenize_simple(text.as_ref()), rate, mean_span_len, sub_seed(seed, i))
    })
}

/// One line of a masked corpus file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskedRecord {
    pub id: String,
    pub input: String,
    pub target: String,
    pub seed: u64,
    pub rate: f64,
}

impl MaskedExample {
    pub fn to_record(&self, id: &str, rate: f64) -> MaskedRecord {
        MaskedRecord {
            id: id.to_string(),
            input: self.input_tokens.join(" "),
            target: self.target_tokens.join(" "),
            seed: self.seed,
            rate,
        }
    }
}

impl MaskedRecord {
    pub fn to_example(&self) -> MaskedExample {
        let target_tokens: Vec<String> = self.target.split_whitespace().map(String::from).collect();
        let n_spans = target_tokens
            .first()
            .and_then(|first| first.strip_suffix("0>"))
            .map(|prefix| {
                target_tokens
                    .iter()
                    .filter(|t| sentinel_index(prefix, t).is_some())
                    .count()
            })
            .unwrap_or(0);
        MaskedExample {
            input_tokens: self.input.split_whitespace().map(String::from).collect(),
            target_tokens,
            n_spans,
            seed: self.seed,
        }
    }
}
