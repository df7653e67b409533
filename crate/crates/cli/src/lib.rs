//! `rqlkit` command-line front end.
//!
//! Every subcommand reads files (or stdin) and writes machine output to
//! stdout and diagnostics to stderr. Exit codes: 0 success, 1 findings
//! (ReportQL syntax errors, schema violations), 2 usage or input-format
//! errors, 3 I/O errors.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use rqlkit::corpus::{
    self, assemble_input, load_corpus, parse_predictions, split, synthetic_corpus, write_jsonl, CorpusError,
    InputOptions, SplitManifest,
};
use rqlkit::corruption::{corrupt_corpus, DEFAULT_MEAN_SPAN_LEN, DEFAULT_RATE};
use rqlkit::metrics::{score_corpus_with, FlatScoreReport, ScoreOptions};
use rqlkit::reportql::{diff_reports, flatten, parse_report, serialize_canonical, validate_against_schema, Parsed};
use rqlkit::schema::{linearize_schema, list_slot_paths, parse_schema, SchemaSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Success = 0,
    Findings = 1,
    Usage = 2,
    Io = 3,
}

#[derive(Debug)]
struct Failure {
    status: ExitStatus,
    message: String,
}

impl Failure {
    fn usage(message: impl ToString) -> Self {
        Failure {
            status: ExitStatus::Usage,
            message: message.to_string(),
        }
    }

    fn findings(message: impl ToString) -> Self {
        Failure {
            status: ExitStatus::Findings,
            message: message.to_string(),
        }
    }

    fn io(path: &Path, err: io::Error) -> Self {
        Failure {
            status: ExitStatus::Io,
            message: format!("{}: {err}", path.display()),
        }
    }
}

impl From<CorpusError> for Failure {
    fn from(e: CorpusError) -> Self {
        let status = match e {
            CorpusError::Io { .. } => ExitStatus::Io,
            _ => ExitStatus::Usage,
        };
        Failure {
            status,
            message: e.to_string(),
        }
    }
}

type CmdResult = Result<ExitStatus, Failure>;

#[derive(Parser, Debug)]
#[command(name = "rqlkit", version, about = "Structured radiology report toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check or linearize a schema file
    Schema {
        #[command(subcommand)]
        action: SchemaCmd,
    },
    /// Parse, format, flatten or diff ReportQL
    Rql {
        #[command(subcommand)]
        action: RqlCmd,
    },
    /// Span-corrupt the reports of a corpus file into a masked corpus
    Mask {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = DEFAULT_RATE)]
        rate: f64,
        #[arg(long = "mean-span", default_value_t = DEFAULT_MEAN_SPAN_LEN)]
        mean_span: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Random train/test split of a corpus file
    Split {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = corpus::DEFAULT_TRAIN_FRACTION)]
        fraction: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build model inputs (schema context + report) from a corpus file
    Prepare {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        schema: PathBuf,
        /// Comma-separated organ names to keep
        #[arg(long, value_delimiter = ',')]
        organs: Option<Vec<String>>,
        /// Split manifest; only records of `--part` are prepared
        #[arg(long, requires = "part")]
        manifest: Option<PathBuf>,
        #[arg(long, value_enum, requires = "manifest")]
        part: Option<Part>,
        #[arg(long, default_value = corpus::DEFAULT_SEPARATOR)]
        separator: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score line-aligned plain-text predictions against references
    Score {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long, value_enum, default_value_t = Metric::All)]
        metric: Metric,
        /// Pool ROUGE counts over the corpus instead of averaging per report
        #[arg(long)]
        pooled: bool,
    },
    /// Score a predictions file against gold annotations by id
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        pooled: bool,
    },
    /// Inter-annotator agreement between two annotated corpus files
    Agreement {
        #[arg(long)]
        first: PathBuf,
        #[arg(long)]
        second: PathBuf,
        #[arg(long)]
        schema: PathBuf,
    },
    /// Generate a synthetic templated corpus from a schema
    Synth {
        #[arg(long)]
        schema: PathBuf,
        #[arg(long, default_value_t = 30)]
        count: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand, Debug)]
enum SchemaCmd {
    /// Validate a schema and print a summary
    Check { file: PathBuf },
    /// Print the single-line rendering used as model context
    Linearize {
        file: PathBuf,
        #[arg(long, value_delimiter = ',')]
        organs: Option<Vec<String>>,
    },
}

#[derive(Subcommand, Debug)]
enum RqlCmd {
    /// Parse and print the tree as JSON; with --schema also validate
    Parse {
        /// Input file, `-` or nothing for stdin
        file: Option<PathBuf>,
        #[arg(long)]
        schema: Option<PathBuf>,
    },
    /// Print the canonical single-line form
    Fmt { file: Option<PathBuf> },
    /// Print flattened key-value pairs as JSON lines
    Flatten { file: Option<PathBuf> },
    /// Compare a predicted report with a gold report
    Diff {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gold: PathBuf,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Part {
    Train,
    Test,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
#[value(rename_all = "snake_case")]
enum Metric {
    All,
    Rouge1,
    Rouge2,
    #[value(name = "rougeL")]
    RougeL,
    Bleu,
    BleuCanonical,
    ExactMatch,
}

/// Runs the CLI on `args` (including the program name).
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() {
                let _ = write!(stderr, "{e}");
                ExitStatus::Usage
            } else {
                let _ = write!(stdout, "{e}");
                ExitStatus::Success
            };
            return code as i32;
        }
    };
    let mut out = Vec::new();
    let result = dispatch(cli.command, &mut out, stderr);
    let status = match result {
        Ok(status) => status,
        Err(f) => {
            let _ = writeln!(stderr, "error: {}", f.message);
            out.clear();
            f.status
        }
    };
    if stdout.write_all(&out).and_then(|_| stdout.flush()).is_err() {
        return ExitStatus::Io as i32;
    }
    status as i32
}

fn read_input(path: Option<&Path>) -> Result<String, Failure> {
    match path {
        None => read_stdin(),
        Some(p) if p == Path::new("-") => read_stdin(),
        Some(p) => fs::read_to_string(p).map_err(|e| Failure::io(p, e)),
    }
}

fn read_stdin() -> Result<String, Failure> {
    let mut s = String::new();
    io::stdin()
        .read_to_string(&mut s)
        .map_err(|e| Failure::io(Path::new("<stdin>"), e))?;
    Ok(s)
}

fn load_schema(path: &Path) -> Result<SchemaSet, Failure> {
    let text = read_input(Some(path))?;
    parse_schema(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn parse_rql(text: &str, origin: &str) -> Result<Parsed, Failure> {
    parse_report(text).map_err(|e| Failure::findings(format!("{origin}: {e}")))
}

fn origin(path: Option<&Path>) -> String {
    path.map(|p| p.display().to_string())
        .unwrap_or_else(|| "<stdin>".into())
}

fn emit_json<T: Serialize>(value: &T, out: &mut Vec<u8>) -> Result<(), Failure> {
    serde_json::to_writer_pretty(&mut *out, value).map_err(|e| Failure::usage(e.to_string()))?;
    out.push(b'\n');
    Ok(())
}

fn emit_jsonl<T: Serialize>(items: &[T], dest: Option<&Path>, out: &mut Vec<u8>) -> Result<(), Failure> {
    match dest {
        Some(path) => {
            let file = fs::File::create(path).map_err(|e| Failure::io(path, e))?;
            write_jsonl(items, io::BufWriter::new(file)).map_err(|e| Failure::io(path, e))
        }
        None => write_jsonl(items, &mut *out).map_err(|e| Failure::io(Path::new("<stdout>"), e)),
    }
}

fn dispatch(command: Command, out: &mut Vec<u8>, err: &mut dyn Write) -> CmdResult {
    match command {
        Command::Schema { action } => schema_cmd(action, out),
        Command::Rql { action } => rql_cmd(action, out, err),
        Command::Mask {
            input,
            rate,
            mean_span,
            seed,
            out: dest,
        } => {
            let records = load_corpus(&input)?;
            let texts: Vec<&str> = records.iter().map(|r| r.report_text.as_str()).collect();
            let masked = corrupt_corpus(&texts, rate, mean_span, seed).map_err(Failure::usage)?;
            let lines: Vec<_> = records
                .iter()
                .zip(&masked)
                .map(|(r, m)| m.to_record(&r.id, rate))
                .collect();
            emit_jsonl(&lines, dest.as_deref(), out)?;
            Ok(ExitStatus::Success)
        }
        Command::Split {
            input,
            fraction,
            seed,
            out: dest,
        } => {
            let manifest = split(&load_corpus(&input)?, fraction, seed)?;
            match dest {
                Some(path) => {
                    let mut buf = Vec::new();
                    emit_json(&manifest, &mut buf)?;
                    fs::write(&path, buf).map_err(|e| Failure::io(&path, e))?;
                }
                None => emit_json(&manifest, out)?,
            }
            Ok(ExitStatus::Success)
        }
        Command::Prepare {
            input,
            schema,
            organs,
            manifest,
            part,
            separator,
            out: dest,
        } => prepare_cmd(
            &input,
            &schema,
            organs,
            manifest.zip(part),
            &separator,
            dest.as_deref(),
            out,
            err,
        ),
        Command::Score {
            pred,
            gold,
            metric,
            pooled,
        } => {
            let preds = read_lines(&pred)?;
            let golds = read_lines(&gold)?;
            let report = score_corpus_with(&preds, &golds, &options(pooled)).map_err(Failure::usage)?;
            emit_json(&select_metric(&report.to_flat(), metric), out)?;
            Ok(ExitStatus::Success)
        }
        Command::Evaluate { pred, gold, pooled } => evaluate_cmd(&pred, &gold, pooled, out, err),
        Command::Agreement { first, second, schema } => {
            let schema = load_schema(&schema)?;
            let report = corpus::agreement(&load_corpus(&first)?, &load_corpus(&second)?, &schema)?;
            emit_json(&report, out)?;
            Ok(ExitStatus::Success)
        }
        Command::Synth {
            schema,
            count,
            seed,
            out: dest,
        } => {
            let records = synthetic_corpus(&load_schema(&schema)?, count, seed);
            emit_jsonl(&records, dest.as_deref(), out)?;
            Ok(ExitStatus::Success)
        }
    }
}

#[derive(Serialize)]
struct SchemaSummary {
    version: String,
    organs: Vec<String>,
    slot_paths: Vec<String>,
}

fn schema_cmd(action: SchemaCmd, out: &mut Vec<u8>) -> CmdResult {
    match action {
        SchemaCmd::Check { file } => {
            let schema = load_schema(&file)?;
            let summary = SchemaSummary {
                version: schema.version().to_string(),
                organs: schema.organs().iter().map(|o| o.name.clone()).collect(),
                slot_paths: list_slot_paths(&schema).iter().map(|p| p.to_string()).collect(),
            };
            emit_json(&summary, out)?;
        }
        SchemaCmd::Linearize { file, organs } => {
            let schema = load_schema(&file)?;
            let names: Option<Vec<&str>> = organs.as_ref().map(|v| v.iter().map(|s| s.trim()).collect());
            let text = linearize_schema(&schema, names.as_deref()).map_err(Failure::usage)?;
            writeln!(out, "{text}").expect("writing to memory");
        }
    }
    Ok(ExitStatus::Success)
}

#[derive(Serialize)]
struct ParseOutput<'a> {
    entries: &'a [rqlkit::reportql::Entry],
    warnings: &'a [rqlkit::reportql::ParseWarning],
    #[serde(skip_serializing_if = "Option::is_none")]
    violations: Option<Vec<rqlkit::reportql::Violation>>,
}

#[derive(Serialize)]
struct DiffOutput {
    matched: Vec<rqlkit::reportql::SlotPair>,
    missing: Vec<rqlkit::reportql::SlotPair>,
    spurious: Vec<rqlkit::reportql::SlotPair>,
    exact_match: rqlkit::metrics::ExactMatchScore,
}

fn rql_cmd(action: RqlCmd, out: &mut Vec<u8>, err: &mut dyn Write) -> CmdResult {
    match action {
        RqlCmd::Parse { file, schema } => {
            let text = read_input(file.as_deref())?;
            let schema = schema.as_deref().map(load_schema).transpose()?;
            let parsed = parse_rql(&text, &origin(file.as_deref()))?;
            for w in &parsed.warnings {
                let _ = writeln!(err, "warning: {w}");
            }
            let violations = schema.map(|s| validate_against_schema(&parsed.doc, &s));
            for v in violations.iter().flatten() {
                let _ = writeln!(err, "violation: {v}");
            }
            let status = if violations.as_ref().is_some_and(|v| !v.is_empty()) {
                ExitStatus::Findings
            } else {
                ExitStatus::Success
            };
            emit_json(
                &ParseOutput {
                    entries: &parsed.doc.entries,
                    warnings: &parsed.warnings,
                    violations,
                },
                out,
            )?;
            Ok(status)
        }
        RqlCmd::Fmt { file } => {
            let text = read_input(file.as_deref())?;
            let parsed = parse_rql(&text, &origin(file.as_deref()))?;
            writeln!(out, "{}", serialize_canonical(&parsed.doc)).expect("writing to memory");
            Ok(ExitStatus::Success)
        }
        RqlCmd::Flatten { file } => {
            let text = read_input(file.as_deref())?;
            let flat = flatten(&parse_rql(&text, &origin(file.as_deref()))?.doc);
            for w in &flat.warnings {
                let rqlkit::reportql::FlattenWarning::TopLevelLeaf { phrase } = w;
                let _ = writeln!(err, "warning: top-level entry `{phrase}` recorded as present");
            }
            emit_jsonl(&flat.pairs, None, out)?;
            Ok(ExitStatus::Success)
        }
        RqlCmd::Diff { pred, gold } => {
            let p = parse_rql(&read_input(Some(&pred))?, &origin(Some(&pred)))?.doc;
            let g = parse_rql(&read_input(Some(&gold))?, &origin(Some(&gold)))?.doc;
            let d = diff_reports(&p, &g);
            let exact_match = rqlkit::metrics::exact_match(&p, &g);
            emit_json(
                &DiffOutput {
                    matched: d.matched,
                    missing: d.missing,
                    spurious: d.spurious,
                    exact_match,
                },
                out,
            )?;
            Ok(ExitStatus::Success)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn prepare_cmd(
    input: &Path,
    schema: &Path,
    organs: Option<Vec<String>>,
    selection: Option<(PathBuf, Part)>,
    separator: &str,
    dest: Option<&Path>,
    out: &mut Vec<u8>,
    err: &mut dyn Write,
) -> CmdResult {
    let schema = load_schema(schema)?;
    let mut records = load_corpus(input)?;
    if let Some((manifest_path, part)) = selection {
        let text = read_input(Some(&manifest_path))?;
        let manifest: SplitManifest =
            serde_json::from_str(&text).map_err(|e| Failure::usage(format!("{}: {e}", manifest_path.display())))?;
        let keep = match part {
            Part::Train => manifest.train,
            Part::Test => manifest.test,
        };
        if let Some(id) = keep.iter().find(|id| !records.iter().any(|r| &r.id == *id)) {
            return Err(Failure::usage(format!(
                "manifest id `{id}` is not in {}",
                input.display()
            )));
        }
        records.retain(|r| keep.contains(&r.id));
    }
    let names: Option<Vec<&str>> = organs.as_ref().map(|v| v.iter().map(|s| s.trim()).collect());
    let opts = InputOptions {
        organs: names.as_deref(),
        separator,
    };
    let mut examples = Vec::with_capacity(records.len());
    for rec in &records {
        let assembled = assemble_input(rec, &schema, &opts)?;
        for w in &assembled.warnings {
            let _ = writeln!(err, "warning: {w}");
        }
        examples.push(assembled.example);
    }
    emit_jsonl(&examples, dest, out)?;
    Ok(ExitStatus::Success)
}

fn read_lines(path: &Path) -> Result<Vec<String>, Failure> {
    Ok(read_input(Some(path))?.lines().map(String::from).collect())
}

fn options(pooled: bool) -> ScoreOptions {
    ScoreOptions {
        pooled_rouge: pooled,
        ..ScoreOptions::default()
    }
}

fn select_metric(flat: &FlatScoreReport, metric: Metric) -> serde_json::Value {
    let full = serde_json::to_value(flat).expect("score report serializes");
    let keys: &[&str] = match metric {
        Metric::All => return full,
        Metric::Rouge1 => &["rouge1"],
        Metric::Rouge2 => &["rouge2"],
        Metric::RougeL => &["rougeL"],
        Metric::Bleu => &["bleu", "brevity_penalty", "length_ratio", "precisions"],
        Metric::BleuCanonical => &[
            "bleu_canonical",
            "bleu_canonical_brevity_penalty",
            "bleu_canonical_length_ratio",
            "bleu_canonical_precisions",
        ],
        Metric::ExactMatch => &[
            "exact_match_p",
            "exact_match_r",
            "exact_match_f1",
            "exact_match_matched",
            "exact_match_missing",
            "exact_match_spurious",
        ],
    };
    let mut selected = serde_json::Map::new();
    selected.insert("n_reports".into(), full["n_reports"].clone());
    for k in keys {
        selected.insert((*k).into(), full[*k].clone());
    }
    serde_json::Value::Object(selected)
}

/// A gold line: a corpus or prepared record (`target`), or a predictions
/// record (`prediction`) when scoring a file against itself.
#[derive(Deserialize)]
struct GoldLine {
    id: String,
    target: Option<String>,
    prediction: Option<String>,
}

/// A predictions line; `target` is accepted as a fallback field name.
#[derive(Deserialize)]
struct PredLine {
    id: String,
    prediction: Option<String>,
    target: Option<String>,
}

fn evaluate_cmd(pred: &Path, gold: &Path, pooled: bool, out: &mut Vec<u8>, err: &mut dyn Write) -> CmdResult {
    let located = |path: &Path, e: CorpusError| Failure::from(e).with_origin(path);
    let gold_lines = corpus::parse_jsonl::<GoldLine>(&read_input(Some(gold))?).map_err(|e| located(gold, e))?;
    let mut ids = Vec::with_capacity(gold_lines.len());
    let mut golds = Vec::with_capacity(gold_lines.len());
    for (line, g) in gold_lines {
        let text = g.target.or(g.prediction).ok_or_else(|| {
            Failure::usage(format!(
                "{}: line {line}: gold record `{}` has no target",
                gold.display(),
                g.id
            ))
        })?;
        if ids.contains(&g.id) {
            return Err(Failure::usage(format!(
                "{}: line {line}: duplicate id `{}`",
                gold.display(),
                g.id
            )));
        }
        ids.push(g.id);
        golds.push(text);
    }

    let pred_text = read_input(Some(pred))?;
    let mut normalized = Vec::new();
    for (line, p) in corpus::parse_jsonl::<PredLine>(&pred_text).map_err(|e| located(pred, e))? {
        let prediction = p.prediction.or(p.target).ok_or_else(|| {
            Failure::usage(format!(
                "{}: line {line}: record `{}` has no prediction",
                pred.display(),
                p.id
            ))
        })?;
        normalized.push(corpus::Prediction { id: p.id, prediction });
    }
    // Re-run the id checks of the predictions format on the normalized lines.
    let mut buf = Vec::new();
    write_jsonl(&normalized, &mut buf).expect("writing to memory");
    let predictions =
        parse_predictions(std::str::from_utf8(&buf).expect("utf-8 JSON"), &ids).map_err(|e| located(pred, e))?;
    let missing = ids.len() - predictions.len();
    if missing > 0 {
        let _ = writeln!(
            err,
            "warning: {missing} gold records have no prediction; scored as empty"
        );
    }
    let preds = corpus::align_predictions(&ids, &predictions);
    let report = score_corpus_with(&preds, &golds, &options(pooled)).map_err(|e| Failure::usage(e.to_string()))?;
    emit_json(&report.to_flat(), out)?;
    Ok(ExitStatus::Success)
}

impl Failure {
    fn with_origin(mut self, path: &Path) -> Self {
        if self.status != ExitStatus::Io {
            self.message = format!("{}: {}", path.display(), self.message);
        }
        self
    }
}
