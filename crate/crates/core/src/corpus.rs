//! Report corpora and the files exchanged with a model.
//!
//! All files are UTF-8 JSON lines:
//!
//! | file        | fields                                       |
//! |-------------|----------------------------------------------|
//! | corpus      | `id`, `report`, `target?`, `annotator?`      |
//! | prepared    | `id`, `input`, `target?`                     |
//! | predictions | `id`, `prediction`                           |
//!
//! Split manifests are a single JSON object `{seed, fraction, train, test}`.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{cohen_kappa, KappaInput, MetricsError};
use crate::reportql::{flatten, parse_report, serialize_canonical, Entry, ParseError, ReportDoc};
use crate::schema::{linearize_schema, list_slot_paths, SchemaError, SchemaSet, SlotKind, SlotNode};

/// Marker between the linearized schema and the report text.
pub const DEFAULT_SEPARATOR: &str = "[REPORT]";
pub const DEFAULT_TRAIN_FRACTION: f64 = 0.8;
/// Agreement label for a slot an annotator left unfilled.
pub const ABSENT_LABEL: &str = "ABSENT";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: duplicate id `{id}`")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: target of `{id}` is not valid ReportQL: {source}")]
    BadTarget {
        line: usize,
        id: String,
        source: ParseError,
    },
    #[error("line {line}: unknown id `{id}`")]
    UnknownId { line: usize, id: String },
    #[error("need at least 2 records to split, got {0}")]
    TooFewRecords(usize),
    #[error("train fraction {0} is outside (0, 1)")]
    FractionOutOfRange(f64),
    #[error("report `{id}` already contains the separator `{separator}`")]
    SeparatorInText { id: String, separator: String },
    #[error("record `{0}` has no target annotation")]
    MissingTarget(String),
    #[error("annotation sets differ: `{0}` is present in only one of them")]
    IdMismatch(String),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Who annotated a record: one annotator id or a pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AnnotatorIds {
    One(String),
    Pair(String, String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportRecord {
    pub id: String,
    #[serde(rename = "report")]
    pub report_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotator: Option<AnnotatorIds>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreparedExample {
    pub id: String,
    #[serde(rename = "input")]
    pub input_text: String,
    #[serde(rename = "target", default, skip_serializing_if = "Option::is_none")]
    pub target_text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub prediction: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub fraction: f64,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

/// Deserializes every non-blank line, reporting 1-based line numbers.
pub fn parse_jsonl<T: DeserializeOwned>(text: &str) -> Result<Vec<(usize, T)>, CorpusError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map(|v| (i + 1, v))
                .map_err(|e| CorpusError::Malformed {
                    line: i + 1,
                    message: e.to_string(),
                })
        })
        .collect()
}

pub fn write_jsonl<T: Serialize, W: Write>(items: &[T], mut out: W) -> io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

fn read_file(path: &Path) -> Result<String, CorpusError> {
    fs::read_to_string(path).map_err(io_err(path))
}

fn write_file<T: Serialize>(items: &[T], path: &Path) -> Result<(), CorpusError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    write_jsonl(items, io::BufWriter::new(file)).map_err(io_err(path))
}

/// Parses corpus JSON lines. Ids must be unique and non-empty; targets are
/// validated and rewritten in canonical form.
pub fn parse_corpus(text: &str) -> Result<Vec<ReportRecord>, CorpusError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (line, mut rec) in parse_jsonl::<ReportRecord>(text)? {
        if rec.id.trim().is_empty() {
            return Err(CorpusError::Malformed {
                line,
                message: "empty id".into(),
            });
        }
        if !seen.insert(rec.id.clone()) {
            return Err(CorpusError::DuplicateId { line, id: rec.id });
        }
        if let Some(target) = &rec.target {
            let doc = parse_report(target)
                .map_err(|source| CorpusError::BadTarget {
                    line,
                    id: rec.id.clone(),
                    source,
                })?
                .doc;
            rec.target = Some(serialize_canonical(&doc));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<ReportRecord>, CorpusError> {
    parse_corpus(&read_file(path.as_ref())?)
}

pub fn save_corpus(records: &[ReportRecord], path: impl AsRef<Path>) -> Result<(), CorpusError> {
    write_file(records, path.as_ref())
}

/// Seeded random train/test partition. The train side gets
/// `floor(fraction × n)` records, clamped so neither side is empty; each
/// side keeps corpus order.
pub fn split(records: &[ReportRecord], train_fraction: f64, seed: u64) -> Result<SplitManifest, CorpusError> {
    let n = records.len();
    if n < 2 {
        return Err(CorpusError::TooFewRecords(n));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(CorpusError::FractionOutOfRange(train_fraction));
    }
    // The small offset keeps products such as 0.7 × 10 from flooring to 6.
    let train_n = ((train_fraction * n as f64 + 1e-9).floor() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut in_train = vec![false; n];
    for &i in &order[..train_n] {
        in_train[i] = true;
    }
    let (mut train, mut test) = (Vec::with_capacity(train_n), Vec::with_capacity(n - train_n));
    for (rec, &is_train) in records.iter().zip(&in_train) {
        if is_train {
            train.push(rec.id.clone());
        } else {
            test.push(rec.id.clone());
        }
    }
    Ok(SplitManifest {
        seed,
        fraction: train_fraction,
        train,
        test,
    })
}

/// Assembly settings for [`assemble_input`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InputOptions<'a> {
    pub organs: Option<&'a [&'a str]>,
    pub separator: &'a str,
}

impl Default for InputOptions<'_> {
    fn default() -> Self {
        InputOptions {
            organs: None,
            separator: DEFAULT_SEPARATOR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assembled {
    pub example: PreparedExample,
    pub warnings: Vec<String>,
}

/// Builds `linearized schema + " [REPORT] " + report text`. With an organ
/// filter, the schema is restricted to those organs and the target is pruned
/// to the matching top-level entries.
pub fn assemble_input(
    record: &ReportRecord,
    schema: &SchemaSet,
    options: &InputOptions<'_>,
) -> Result<Assembled, CorpusError> {
    let context = linearize_schema(schema, options.organs)?;
    if record.report_text.contains(options.separator) || context.contains(options.separator) {
        return Err(CorpusError::SeparatorInText {
            id: record.id.clone(),
            separator: options.separator.to_string(),
        });
    }
    let input_text = format!("{context} {} {}", options.separator, record.report_text);
    let mut warnings = Vec::new();
    let target_text = match (&record.target, options.organs) {
        (Some(target), Some(organs)) => {
            let doc = parse_report(target)
                .map_err(|source| CorpusError::BadTarget {
                    line: 0,
                    id: record.id.clone(),
                    source,
                })?
                .doc;
            let pruned = doc.retain_organs(organs);
            if pruned.is_empty() && !doc.is_empty() {
                warnings.push(format!(
                    "`{}`: target has no entries for the selected organs",
                    record.id
                ));
            }
            Some(serialize_canonical(&pruned))
        }
        (target, _) => target.clone(),
    };
    Ok(Assembled {
        example: PreparedExample {
            id: record.id.clone(),
            input_text,
            target_text,
        },
        warnings,
    })
}

pub fn export_prepared(examples: &[PreparedExample], path: impl AsRef<Path>) -> Result<(), CorpusError> {
    write_file(examples, path.as_ref())
}

pub fn import_prepared(path: impl AsRef<Path>) -> Result<Vec<PreparedExample>, CorpusError> {
    parse_prepared(&read_file(path.as_ref())?)
}

pub fn parse_prepared(text: &str) -> Result<Vec<PreparedExample>, CorpusError> {
    let mut seen = HashSet::new();
    parse_jsonl::<PreparedExample>(text)?
        .into_iter()
        .map(|(line, ex)| {
            if seen.insert(ex.id.clone()) {
                Ok(ex)
            } else {
                Err(CorpusError::DuplicateId { line, id: ex.id })
            }
        })
        .collect()
}

/// Parses a predictions file, rejecting ids outside `known_ids` and repeated
/// ids. Ids may be a strict subset of `known_ids`.
pub fn parse_predictions<S: AsRef<str>>(text: &str, known_ids: &[S]) -> Result<Vec<Prediction>, CorpusError> {
    let known: HashSet<&str> = known_ids.iter().map(|s| s.as_ref()).collect();
    let mut seen = HashSet::new();
    parse_jsonl::<Prediction>(text)?
        .into_iter()
        .map(|(line, p)| {
            if !known.contains(p.id.as_str()) {
                Err(CorpusError::UnknownId { line, id: p.id })
            } else if !seen.insert(p.id.clone()) {
                Err(CorpusError::DuplicateId { line, id: p.id })
            } else {
                Ok(p)
            }
        })
        .collect()
}

pub fn import_predictions<S: AsRef<str>>(
    path: impl AsRef<Path>,
    known_ids: &[S],
) -> Result<Vec<Prediction>, CorpusError> {
    parse_predictions(&read_file(path.as_ref())?, known_ids)
}

pub fn export_predictions(predictions: &[Prediction], path: impl AsRef<Path>) -> Result<(), CorpusError> {
    write_file(predictions, path.as_ref())
}

/// Prediction text for each of `ids`, in that order; ids without a
/// prediction get the empty string.
pub fn align_predictions<S: AsRef<str>>(ids: &[S], predictions: &[Prediction]) -> Vec<String> {
    let by_id: HashMap<&str, &str> = predictions
        .iter()
        .map(|p| (p.id.as_str(), p.prediction.as_str()))
        .collect();
    ids.iter()
        .map(|id| by_id.get(id.as_ref()).copied().unwrap_or("").to_string())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlotAgreement {
    pub path: String,
    pub items: usize,
    pub agreements: usize,
    pub kappa: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgreementReport {
    pub kappa: f64,
    pub items: usize,
    pub per_slot: Vec<SlotAgreement>,
}

/// Label an annotation gives a slot path: its normalized value(s), sorted
/// and joined with ` | ` when repeated, or [`ABSENT_LABEL`].
fn slot_labels(doc: &ReportDoc, paths: &[Vec<String>]) -> Vec<String> {
    let mut values: HashMap<Vec<String>, Vec<String>> = HashMap::new();
    for pair in flatten(doc).pairs {
        let (path, value) = pair.key();
        values.entry(path).or_default().push(value);
    }
    paths
        .iter()
        .map(|p| match values.get_mut(p) {
            Some(vs) => {
                vs.sort();
                vs.join(" | ")
            }
            None => ABSENT_LABEL.to_string(),
        })
        .collect()
}

/// Cohen's kappa between two annotations of the same reports, with one
/// item per (report, schema leaf slot) pair. Records of `second` are
/// matched to `first` by id.
pub fn agreement(
    first: &[ReportRecord],
    second: &[ReportRecord],
    schema: &SchemaSet,
) -> Result<AgreementReport, CorpusError> {
    let by_id: HashMap<&str, &ReportRecord> = second.iter().map(|r| (r.id.as_str(), r)).collect();
    let first_ids: HashSet<&str> = first.iter().map(|r| r.id.as_str()).collect();
    if let Some(r) = second.iter().find(|r| !first_ids.contains(r.id.as_str())) {
        return Err(CorpusError::IdMismatch(r.id.clone()));
    }
    let paths = list_slot_paths(schema);
    let keys: Vec<Vec<String>> = paths.iter().map(|p| p.normalized()).collect();
    let target_doc = |r: &ReportRecord| -> Result<ReportDoc, CorpusError> {
        let text = r
            .target
            .as_ref()
            .ok_or_else(|| CorpusError::MissingTarget(r.id.clone()))?;
        parse_report(text)
            .map(|p| p.doc)
            .map_err(|source| CorpusError::BadTarget {
                line: 0,
                id: r.id.clone(),
                source,
            })
    };

    let mut per_path: Vec<(Vec<String>, Vec<String>)> = vec![(Vec::new(), Vec::new()); paths.len()];
    let (mut all_a, mut all_b) = (Vec::new(), Vec::new());
    for rec in first {
        let other = by_id
            .get(rec.id.as_str())
            .ok_or_else(|| CorpusError::IdMismatch(rec.id.clone()))?;
        let a = slot_labels(&target_doc(rec)?, &keys);
        let b = slot_labels(&target_doc(other)?, &keys);
        for (k, (la, lb)) in a.into_iter().zip(b).enumerate() {
            per_path[k].0.push(la.clone());
            per_path[k].1.push(lb.clone());
            all_a.push(la);
            all_b.push(lb);
        }
    }
    let items = all_a.len();
    let kappa = cohen_kappa(&KappaInput::new(all_a, all_b)?);
    let per_slot = paths
        .iter()
        .zip(per_path)
        .map(|(path, (a, b))| {
            let agreements = a.iter().zip(&b).filter(|(x, y)| x == y).count();
            let items = a.len();
            let kappa = cohen_kappa(&KappaInput::new(a, b)?);
            Ok(SlotAgreement {
                path: path.to_string(),
                items,
                agreements,
                kappa,
            })
        })
        .collect::<Result<Vec<_>, MetricsError>>()?;
    Ok(AgreementReport { kappa, items, per_slot })
}

/// Phrases used for free-text slots in synthetic reports.
const FREE_TEXT_VALUES: &[&str] = &["up to 7 mm", "about 5 mm", "12 mm", "3 cm", "not measured"];

/// Generates clearly labelled synthetic records from `schema`: each report
/// mentions a random subset of organs and slots through a few fixed
/// sentence templates, and the target is the matching ReportQL.
pub fn synthetic_corpus(schema: &SchemaSet, n: usize, seed: u64) -> Vec<ReportRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let mut sentences = Vec::new();
            let mut entries = Vec::new();
            for organ in schema.organs() {
                if !rng.gen_bool(0.8) {
                    continue;
                }
                let mut children = Vec::new();
                for slot in &organ.slots {
                    if matches!(slot.kind, SlotKind::Composite(_)) && !rng.gen_bool(0.3) {
                        continue;
                    }
                    if let Some(entry) = synth_slot(slot, &organ.name, &mut rng, &mut sentences) {
                        children.push(entry);
                    }
                }
                if !children.is_empty() {
                    entries.push(Entry::node(&organ.name, children));
                }
            }
            ReportRecord {
                id: format!("synthetic-{:03}", i + 1),
                report_text: sentences.join(" "),
                target: Some(serialize_canonical(&ReportDoc::new(entries))),
                annotator: Some(AnnotatorIds::One("synthetic".into())),
            }
        })
        .collect()
}

fn synth_slot(slot: &SlotNode, owner: &str, rng: &mut ChaCha8Rng, sentences: &mut Vec<String>) -> Option<Entry> {
    match &slot.kind {
        SlotKind::Composite(children) => {
            let entries: Vec<Entry> = children
                .iter()
                .filter_map(|c| synth_slot(c, &format!("{owner} {}", slot.name), rng, sentences))
                .collect();
            (!entries.is_empty()).then(|| Entry::node(&slot.name, entries))
        }
        kind => {
            let value = match kind {
                SlotKind::Categorical(values) => values[rng.gen_range(0..values.len())].clone(),
                _ => FREE_TEXT_VALUES[rng.gen_range(0..FREE_TEXT_VALUES.len())].to_string(),
            };
            let sentence = match rng.gen_range(0..3) {
                0 => format!("The {owner} {} is {value}.", slot.name),
                1 => format!("{} of the {owner}: {value}.", capitalize(&slot.name)),
                _ => format!("{} {}: {value}.", capitalize(owner), slot.name),
            };
            sentences.push(sentence);
            Some(Entry::node(&slot.name, vec![Entry::leaf(&value)]))
        }
    }
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}
