//! Evaluation metrics: ROUGE-1/2/L, corpus BLEU (with brevity penalty,
//! length ratio and per-order precisions), key-value exact match over
//! flattened ReportQL, and Cohen's kappa.
//!
//! Corpus scoring collects integer sufficient statistics per report into a
//! [`CorpusStats`], which merges associatively and commutatively, so the
//! per-report work can be split across threads without changing results.

use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;

use serde::Serialize;
use thiserror::Error;

use crate::par::{self, Execution};
use crate::reportql::{diff_reports, flatten, parse_report, ParseError, ReportDoc};

/// Default stand-in for a zero n-gram precision inside the BLEU logarithm.
pub const DEFAULT_SMOOTHING_EPSILON: f64 = 1e-9;
pub const DEFAULT_BLEU_ORDER: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("length mismatch: {left} candidates/labels vs {right} references/labels")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty input")]
    Empty,
    #[error("n-gram order must be at least 1")]
    ZeroOrder,
    #[error("gold report {index} is not valid ReportQL: {source}")]
    GoldParse { index: usize, source: ParseError },
}

fn harmonic_mean(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn ratio_or(num: u64, den: u64, empty: f64) -> f64 {
    if den == 0 {
        empty
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    pub fn new(precision: f64, recall: f64) -> Self {
        RougeScore {
            precision,
            recall,
            f1: harmonic_mean(precision, recall),
        }
    }

    fn from_counts(c: OverlapCounts) -> Self {
        RougeScore::new(
            c.overlap as f64 / c.candidate.max(1) as f64,
            c.overlap as f64 / c.reference.max(1) as f64,
        )
    }
}

/// Overlap count plus candidate and reference unit counts (n-grams for
/// ROUGE-N, tokens for ROUGE-L).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OverlapCounts {
    pub overlap: u64,
    pub candidate: u64,
    pub reference: u64,
}

impl OverlapCounts {
    fn add(self, o: OverlapCounts) -> Self {
        OverlapCounts {
            overlap: self.overlap + o.overlap,
            candidate: self.candidate + o.candidate,
            reference: self.reference + o.reference,
        }
    }
}

/// Lowercases and splits on whitespace.
pub fn tokenize_simple(text: &str) -> Vec<String> {
    text.split_whitespace().map(|t| t.to_lowercase()).collect()
}

/// Like [`tokenize_simple`], but every character that is neither
/// alphanumeric nor whitespace becomes a token of its own.
pub fn tokenize_canonical(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            word.extend(c.to_lowercase());
            continue;
        }
        if !word.is_empty() {
            out.push(std::mem::take(&mut word));
        }
        if !c.is_whitespace() {
            out.push(c.to_lowercase().collect());
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], u64> {
    let mut counts = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

fn ngram_total(len: usize, n: usize) -> u64 {
    (len + 1).saturating_sub(n) as u64
}

/// Clipped n-gram overlap between candidate and reference.
pub fn ngram_overlap<T: Eq + Hash>(candidate: &[T], reference: &[T], n: usize) -> OverlapCounts {
    assert!(n >= 1, "n-gram order must be at least 1");
    let cand = ngram_counts(candidate, n);
    let refs = ngram_counts(reference, n);
    let overlap = cand
        .iter()
        .map(|(gram, &c)| c.min(refs.get(gram).copied().unwrap_or(0)))
        .sum();
    OverlapCounts {
        overlap,
        candidate: ngram_total(candidate.len(), n),
        reference: ngram_total(reference.len(), n),
    }
}

/// ROUGE-N. Panics if `n == 0`.
pub fn rouge_n<T: Eq + Hash>(candidate: &[T], reference: &[T], n: usize) -> RougeScore {
    RougeScore::from_counts(ngram_overlap(candidate, reference, n))
}

/// Length of the longest common subsequence.
pub fn lcs_len<T: Eq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn lcs_counts<T: Eq>(candidate: &[T], reference: &[T]) -> OverlapCounts {
    OverlapCounts {
        overlap: lcs_len(candidate, reference) as u64,
        candidate: candidate.len() as u64,
        reference: reference.len() as u64,
    }
}

/// ROUGE-L from the longest common subsequence.
pub fn rouge_l<T: Eq>(candidate: &[T], reference: &[T]) -> RougeScore {
    let c = lcs_counts(candidate, reference);
    RougeScore::new(
        ratio_or(c.overlap, c.candidate, 0.0),
        ratio_or(c.overlap, c.reference, 0.0),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BleuScore {
    pub score: f64,
    pub brevity_penalty: f64,
    pub length_ratio: f64,
    pub precisions: Vec<f64>,
}

impl BleuScore {
    /// `bp * exp(mean(ln p))`, the composition of a BLEU score from its
    /// parts. Zero precisions are replaced by `epsilon` inside the log.
    pub fn recompose(precisions: &[f64], brevity_penalty: f64, epsilon: f64) -> f64 {
        if precisions.is_empty() {
            return 0.0;
        }
        let log_sum: f64 = precisions
            .iter()
            .map(|&p| if p > 0.0 { p.ln() } else { epsilon.ln() })
            .sum();
        brevity_penalty * (log_sum / precisions.len() as f64).exp()
    }
}

/// Brevity penalty for a candidate/reference length ratio.
pub fn brevity_penalty(length_ratio: f64) -> f64 {
    if length_ratio >= 1.0 {
        1.0
    } else if length_ratio <= 0.0 {
        0.0
    } else {
        (1.0 - 1.0 / length_ratio).exp()
    }
}

/// Corpus-level BLEU sufficient statistics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BleuStats {
    pub matches: Vec<u64>,
    pub totals: Vec<u64>,
    pub candidate_len: u64,
    pub reference_len: u64,
}

impl BleuStats {
    pub fn new(max_order: usize) -> Self {
        BleuStats {
            matches: vec![0; max_order],
            totals: vec![0; max_order],
            candidate_len: 0,
            reference_len: 0,
        }
    }

    pub fn from_pair<T: Eq + Hash>(candidate: &[T], reference: &[T], max_order: usize) -> Self {
        let mut stats = BleuStats::new(max_order);
        for n in 1..=max_order {
            let c = ngram_overlap(candidate, reference, n);
            stats.matches[n - 1] = c.overlap;
            stats.totals[n - 1] = c.candidate;
        }
        stats.candidate_len = candidate.len() as u64;
        stats.reference_len = reference.len() as u64;
        stats
    }

    pub fn merge(mut self, other: &BleuStats) -> Self {
        assert_eq!(self.matches.len(), other.matches.len(), "BLEU orders differ");
        for n in 0..self.matches.len() {
            self.matches[n] += other.matches[n];
            self.totals[n] += other.totals[n];
        }
        self.candidate_len += other.candidate_len;
        self.reference_len += other.reference_len;
        self
    }

    /// Precisions are `matches / totals` (0 for an order with no candidate
    /// n-grams). The length ratio is candidate over reference length; an
    /// empty reference side gives ratio 1 when the candidates are empty too
    /// and the candidate length otherwise.
    pub fn score(&self, epsilon: f64) -> BleuScore {
        let precisions: Vec<f64> = self
            .matches
            .iter()
            .zip(&self.totals)
            .map(|(&m, &t)| ratio_or(m, t, 0.0))
            .collect();
        let length_ratio = match (self.candidate_len, self.reference_len) {
            (0, 0) => 1.0,
            (c, 0) => c as f64,
            (c, r) => c as f64 / r as f64,
        };
        let bp = brevity_penalty(length_ratio);
        BleuScore {
            score: BleuScore::recompose(&precisions, bp, epsilon),
            brevity_penalty: bp,
            length_ratio,
            precisions,
        }
    }
}

/// Corpus BLEU over parallel candidate/reference token lists.
pub fn bleu_corpus<T: Eq + Hash>(
    candidates: &[Vec<T>],
    references: &[Vec<T>],
    max_order: usize,
    smoothing_epsilon: f64,
) -> Result<BleuScore, MetricsError> {
    if candidates.len() != references.len() {
        return Err(MetricsError::LengthMismatch {
            left: candidates.len(),
            right: references.len(),
        });
    }
    if candidates.is_empty() {
        return Err(MetricsError::Empty);
    }
    if max_order == 0 {
        return Err(MetricsError::ZeroOrder);
    }
    let stats = candidates
        .iter()
        .zip(references)
        .fold(BleuStats::new(max_order), |acc, (c, r)| {
            acc.merge(&BleuStats::from_pair(c, r, max_order))
        });
    Ok(stats.score(smoothing_epsilon))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExactMatchScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub matched: u64,
    pub missing: u64,
    pub spurious: u64,
}

impl ExactMatchScore {
    /// Precision and recall are 1 when their denominators are 0.
    pub fn from_counts(matched: u64, missing: u64, spurious: u64) -> Self {
        let precision = ratio_or(matched, matched + spurious, 1.0);
        let recall = ratio_or(matched, matched + missing, 1.0);
        ExactMatchScore {
            precision,
            recall,
            f1: harmonic_mean(precision, recall),
            matched,
            missing,
            spurious,
        }
    }
}

/// Key-value exact match between two reports.
pub fn exact_match(pred: &ReportDoc, gold: &ReportDoc) -> ExactMatchScore {
    let d = diff_reports(pred, gold);
    ExactMatchScore::from_counts(d.matched.len() as u64, d.missing.len() as u64, d.spurious.len() as u64)
}

/// Two annotators' labels over the same ordered items.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KappaInput<L> {
    first: Vec<L>,
    second: Vec<L>,
}

impl<L> KappaInput<L> {
    pub fn new(first: Vec<L>, second: Vec<L>) -> Result<Self, MetricsError> {
        if first.len() != second.len() {
            return Err(MetricsError::LengthMismatch {
                left: first.len(),
                right: second.len(),
            });
        }
        if first.is_empty() {
            return Err(MetricsError::Empty);
        }
        Ok(KappaInput { first, second })
    }

    pub fn len(&self) -> usize {
        self.first.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first.is_empty()
    }

    pub fn first(&self) -> &[L] {
        &self.first
    }

    pub fn second(&self) -> &[L] {
        &self.second
    }
}

/// Cohen's kappa, `(p_o - p_e) / (1 - p_e)`. When chance agreement is total
/// (both annotators used one and the same label throughout) the result is 1.
///
/// Computed from integer counts as `(n·agree − Σ a_k·b_k) / (n² − Σ a_k·b_k)`
/// so small fixtures come out exact.
pub fn cohen_kappa<L: Eq + Hash>(input: &KappaInput<L>) -> f64 {
    let n = input.len() as u128;
    let mut agree: u128 = 0;
    let mut marginals: HashMap<&L, (u128, u128)> = HashMap::new();
    for (a, b) in input.first.iter().zip(&input.second) {
        if a == b {
            agree += 1;
        }
        marginals.entry(a).or_default().0 += 1;
        marginals.entry(b).or_default().1 += 1;
    }
    let chance: u128 = marginals.values().map(|(a, b)| a * b).sum();
    let denom = n * n - chance;
    if denom == 0 {
        return 1.0;
    }
    let numer = (n * agree) as i128 - chance as i128;
    numer as f64 / denom as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreOptions {
    /// Pool ROUGE counts over the corpus instead of averaging per report.
    pub pooled_rouge: bool,
    pub bleu_max_order: usize,
    pub smoothing_epsilon: f64,
    pub execution: Execution,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        ScoreOptions {
            pooled_rouge: false,
            bleu_max_order: DEFAULT_BLEU_ORDER,
            smoothing_epsilon: DEFAULT_SMOOTHING_EPSILON,
            execution: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreReport {
    pub rouge1: RougeScore,
    pub rouge2: RougeScore,
    #[serde(rename = "rougeL")]
    pub rouge_l: RougeScore,
    pub bleu: BleuScore,
    pub bleu_canonical: BleuScore,
    pub exact_match: ExactMatchScore,
    pub n_reports: usize,
}

/// Flat JSON layout of a [`ScoreReport`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlatScoreReport {
    pub n_reports: usize,
    pub rouge1: f64,
    pub rouge2: f64,
    #[serde(rename = "rougeL")]
    pub rouge_l: f64,
    pub bleu: f64,
    pub bleu_canonical: f64,
    pub brevity_penalty: f64,
    pub length_ratio: f64,
    pub precisions: Vec<f64>,
    pub bleu_canonical_brevity_penalty: f64,
    pub bleu_canonical_length_ratio: f64,
    pub bleu_canonical_precisions: Vec<f64>,
    pub exact_match_p: f64,
    pub exact_match_r: f64,
    pub exact_match_f1: f64,
    pub exact_match_matched: u64,
    pub exact_match_missing: u64,
    pub exact_match_spurious: u64,
}

impl ScoreReport {
    pub fn to_flat(&self) -> FlatScoreReport {
        FlatScoreReport {
            n_reports: self.n_reports,
            rouge1: self.rouge1.f1,
            rouge2: self.rouge2.f1,
            rouge_l: self.rouge_l.f1,
            bleu: self.bleu.score,
            bleu_canonical: self.bleu_canonical.score,
            brevity_penalty: self.bleu.brevity_penalty,
            length_ratio: self.bleu.length_ratio,
            precisions: self.bleu.precisions.clone(),
            bleu_canonical_brevity_penalty: self.bleu_canonical.brevity_penalty,
            bleu_canonical_length_ratio: self.bleu_canonical.length_ratio,
            bleu_canonical_precisions: self.bleu_canonical.precisions.clone(),
            exact_match_p: self.exact_match.precision,
            exact_match_r: self.exact_match.recall,
            exact_match_f1: self.exact_match.f1,
            exact_match_matched: self.exact_match.matched,
            exact_match_missing: self.exact_match.missing,
            exact_match_spurious: self.exact_match.spurious,
        }
    }
}

/// Integer statistics for one prediction/gold pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairStats {
    pub rouge1: OverlapCounts,
    pub rouge2: OverlapCounts,
    pub rouge_l: OverlapCounts,
    pub matched: u64,
    pub missing: u64,
    pub spurious: u64,
}

/// Mergeable corpus statistics keyed by report index.
///
/// `merge` is associative and commutative for partials built from disjoint
/// report indices; [`CorpusStats::finish`] reads reports in index order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusStats {
    pub reports: BTreeMap<usize, PairStats>,
    pub bleu: BleuStats,
    pub bleu_canonical: BleuStats,
}

impl CorpusStats {
    pub fn new(max_order: usize) -> Self {
        CorpusStats {
            reports: BTreeMap::new(),
            bleu: BleuStats::new(max_order),
            bleu_canonical: BleuStats::new(max_order),
        }
    }

    /// Statistics for the single pair at `index`. Fails only if the gold
    /// text is not valid ReportQL; an unparseable prediction counts every
    /// gold pair as missing.
    pub fn for_pair(index: usize, pred: &str, gold: &str, max_order: usize) -> Result<Self, MetricsError> {
        let gold_doc = parse_report(gold)
            .map_err(|source| MetricsError::GoldParse { index, source })?
            .doc;
        let (matched, missing, spurious) = match parse_report(pred) {
            Ok(p) => {
                let d = diff_reports(&p.doc, &gold_doc);
                (d.matched.len() as u64, d.missing.len() as u64, d.spurious.len() as u64)
            }
            Err(_) => (0, flatten(&gold_doc).pairs.len() as u64, 0),
        };
        let pt = tokenize_simple(pred);
        let gt = tokenize_simple(gold);
        let stats = PairStats {
            rouge1: ngram_overlap(&pt, &gt, 1),
            rouge2: ngram_overlap(&pt, &gt, 2),
            rouge_l: lcs_counts(&pt, &gt),
            matched,
            missing,
            spurious,
        };
        let mut reports = BTreeMap::new();
        reports.insert(index, stats);
        Ok(CorpusStats {
            reports,
            bleu: BleuStats::from_pair(&pt, &gt, max_order),
            bleu_canonical: BleuStats::from_pair(&tokenize_canonical(pred), &tokenize_canonical(gold), max_order),
        })
    }

    pub fn merge(mut self, other: CorpusStats) -> Self {
        self.bleu = self.bleu.merge(&other.bleu);
        self.bleu_canonical = self.bleu_canonical.merge(&other.bleu_canonical);
        self.reports.extend(other.reports);
        self
    }

    pub fn finish(&self, options: &ScoreOptions) -> Result<ScoreReport, MetricsError> {
        let n = self.reports.len();
        if n == 0 {
            return Err(MetricsError::Empty);
        }
        let rouge = |pick: fn(&PairStats) -> OverlapCounts, lcs: bool| -> RougeScore {
            let score = |c: OverlapCounts| {
                if lcs {
                    RougeScore::new(
                        ratio_or(c.overlap, c.candidate, 0.0),
                        ratio_or(c.overlap, c.reference, 0.0),
                    )
                } else {
                    RougeScore::from_counts(c)
                }
            };
            if options.pooled_rouge {
                score(
                    self.reports
                        .values()
                        .map(pick)
                        .fold(OverlapCounts::default(), OverlapCounts::add),
                )
            } else {
                let (mut p, mut r, mut f) = (0.0, 0.0, 0.0);
                for s in self.reports.values() {
                    let one = score(pick(s));
                    p += one.precision;
                    r += one.recall;
                    f += one.f1;
                }
                let n = n as f64;
                RougeScore {
                    precision: p / n,
                    recall: r / n,
                    f1: f / n,
                }
            }
        };
        let (m, miss, sp) = self.reports.values().fold((0, 0, 0), |(m, miss, sp), s| {
            (m + s.matched, miss + s.missing, sp + s.spurious)
        });
        Ok(ScoreReport {
            rouge1: rouge(|s| s.rouge1, false),
            rouge2: rouge(|s| s.rouge2, false),
            rouge_l: rouge(|s| s.rouge_l, true),
            bleu: self.bleu.score(options.smoothing_epsilon),
            bleu_canonical: self.bleu_canonical.score(options.smoothing_epsilon),
            exact_match: ExactMatchScore::from_counts(m, miss, sp),
            n_reports: n,
        })
    }
}

/// Scores predicted reports against gold reports with default options.
pub fn score_corpus<S: AsRef<str> + Sync>(preds: &[S], golds: &[S]) -> Result<ScoreReport, MetricsError> {
    score_corpus_with(preds, golds, &ScoreOptions::default())
}

/// ROUGE is computed per report (macro-averaged unless `pooled_rouge`),
/// BLEU at corpus level with both tokenizers, and exact match on pooled
/// pair counts.
pub fn score_corpus_with<S: AsRef<str> + Sync>(
    preds: &[S],
    golds: &[S],
    options: &ScoreOptions,
) -> Result<ScoreReport, MetricsError> {
    if preds.len() != golds.len() {
        return Err(MetricsError::LengthMismatch {
            left: preds.len(),
            right: golds.len(),
        });
    }
    if preds.is_empty() {
        return Err(MetricsError::Empty);
    }
    if options.bleu_max_order == 0 {
        return Err(MetricsError::ZeroOrder);
    }
    let order = options.bleu_max_order;
    let partials = par::try_map_indexed(preds, options.execution, |i, pred| {
        CorpusStats::for_pair(i, pred.as_ref(), golds[i].as_ref(), order)
    })?;
    partials
        .into_iter()
        .fold(CorpusStats::new(order), CorpusStats::merge)
        .finish(options)
}
