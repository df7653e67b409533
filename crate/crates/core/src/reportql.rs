//! ReportQL: the bracketed structured-report language.
//!
//! ```text
//! document := entry*
//! entry    := phrase block?
//! block    := '{' entry* '}'
//! phrase   := word+
//! ```
//!
//! Tokens are maximal runs of non-whitespace characters, except that `{` and
//! `}` are always tokens of their own, so `size{normal}` reads the same as
//! `size { normal }`. Commas are ordinary word characters.
//!
//! Because a phrase is every word up to the next brace, a blockless entry
//! swallows any words that follow it. Trees produced by the parser therefore
//! only ever have a blockless entry in the last position of its sibling
//! list; [`ReportDoc::is_well_formed`] checks that shape, and only
//! well-formed trees survive a serialize/parse round trip unchanged.

use std::collections::HashMap;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::schema::{SchemaSet, SlotKind, SlotNode};
use crate::text::normalize_phrase;

/// Value recorded for a top-level entry that has no block.
pub const PRESENCE_MARKER: &str = "present";

/// Location in the source text. `line` and `column` are 1-based, `column`
/// counts characters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Position {
    pub offset: usize,
    pub line: usize,
    pub column: usize,
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}, column {}", self.line, self.column)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("unbalanced braces: unmatched `}}` at {0}")]
    UnmatchedClose(Position),
    #[error("unbalanced braces: `{{` opened at {0} is never closed")]
    Unclosed(Position),
    #[error("block with no preceding phrase at {0}")]
    BlockWithoutPhrase(Position),
}

impl ParseError {
    pub fn position(&self) -> Position {
        match self {
            ParseError::UnmatchedClose(p) | ParseError::Unclosed(p) | ParseError::BlockWithoutPhrase(p) => *p,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParseWarning {
    /// A top-level phrase with no block, e.g. a stray `normal study`.
    TopLevelLeaf {
        phrase: String,
        position: Position,
    },
    EmptyBlock {
        phrase: String,
        position: Position,
    },
}

impl fmt::Display for ParseWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseWarning::TopLevelLeaf { phrase, position } => {
                write!(f, "top-level entry `{phrase}` has no block ({position})")
            }
            ParseWarning::EmptyBlock { phrase, position } => {
                write!(f, "entry `{phrase}` has an empty block ({position})")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Entry {
    pub phrase: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub block: Option<Vec<Entry>>,
}

impl Entry {
    /// Blockless entry from a space-separated phrase.
    pub fn leaf(phrase: &str) -> Self {
        Entry {
            phrase: phrase.split_whitespace().map(String::from).collect(),
            block: None,
        }
    }

    pub fn node(phrase: &str, children: Vec<Entry>) -> Self {
        Entry {
            phrase: phrase.split_whitespace().map(String::from).collect(),
            block: Some(children),
        }
    }

    pub fn phrase_text(&self) -> String {
        self.phrase.join(" ")
    }

    pub fn is_leaf(&self) -> bool {
        self.block.is_none()
    }

    pub fn children(&self) -> &[Entry] {
        self.block.as_deref().unwrap_or(&[])
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ReportDoc {
    pub entries: Vec<Entry>,
}

impl ReportDoc {
    pub fn new(entries: Vec<Entry>) -> Self {
        ReportDoc { entries }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// True when every phrase is non-empty, no word contains whitespace or a
    /// brace, and blockless entries only appear last among their siblings.
    pub fn is_well_formed(&self) -> bool {
        fn siblings_ok(entries: &[Entry]) -> bool {
            let n = entries.len();
            entries.iter().enumerate().all(|(i, e)| {
                let words_ok = !e.phrase.is_empty()
                    && e.phrase
                        .iter()
                        .all(|w| !w.is_empty() && !w.chars().any(|c| c.is_whitespace() || c == '{' || c == '}'));
                let shape_ok = match &e.block {
                    None => i + 1 == n,
                    Some(children) => siblings_ok(children),
                };
                words_ok && shape_ok
            })
        }
        siblings_ok(&self.entries)
    }

    /// Number of blockless entries anywhere in the tree.
    pub fn leaf_count(&self) -> usize {
        fn count(entries: &[Entry]) -> usize {
            entries
                .iter()
                .map(|e| match &e.block {
                    None => 1,
                    Some(children) => count(children),
                })
                .sum()
        }
        count(&self.entries)
    }

    /// Keeps only the top-level entries whose phrase names one of `organs`
    /// (compared case-insensitively).
    pub fn retain_organs(&self, organs: &[&str]) -> ReportDoc {
        let keys: Vec<String> = organs.iter().map(|o| normalize_phrase(o)).collect();
        ReportDoc {
            entries: self
                .entries
                .iter()
                .filter(|e| keys.contains(&normalize_phrase(&e.phrase_text())))
                .cloned()
                .collect(),
        }
    }
}

impl fmt::Display for ReportDoc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serialize_canonical(self))
    }
}

/// A parsed document together with its non-fatal findings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Parsed {
    pub doc: ReportDoc,
    pub warnings: Vec<ParseWarning>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Token<'a> {
    Word(&'a str),
    Open,
    Close,
}

fn tokenize(source: &str) -> Vec<(Token<'_>, Position)> {
    let mut tokens = Vec::new();
    let mut line = 1;
    let mut column = 1;
    let mut word_start: Option<(usize, Position)> = None;

    for (offset, c) in source.char_indices() {
        let pos = Position { offset, line, column };
        let is_brace = c == '{' || c == '}';
        if c.is_whitespace() || is_brace {
            if let Some((start, start_pos)) = word_start.take() {
                tokens.push((Token::Word(&source[start..offset]), start_pos));
            }
            if is_brace {
                tokens.push((if c == '{' { Token::Open } else { Token::Close }, pos));
            }
        } else if word_start.is_none() {
            word_start = Some((offset, pos));
        }
        if c == '\n' {
            line += 1;
            column = 1;
        } else {
            column += 1;
        }
    }
    if let Some((start, start_pos)) = word_start {
        tokens.push((Token::Word(&source[start..]), start_pos));
    }
    tokens
}

struct Frame {
    entries: Vec<Entry>,
    phrase: Vec<String>,
    phrase_pos: Option<Position>,
    /// Phrase, phrase position and brace position of the entry that opened
    /// this block.
    owner: Option<(Vec<String>, Position, Position)>,
}

impl Frame {
    fn new(owner: Option<(Vec<String>, Position, Position)>) -> Self {
        Frame {
            entries: Vec::new(),
            phrase: Vec::new(),
            phrase_pos: None,
            owner,
        }
    }

    fn flush_leaf(&mut self) -> Option<Position> {
        if self.phrase.is_empty() {
            return None;
        }
        self.entries.push(Entry {
            phrase: std::mem::take(&mut self.phrase),
            block: None,
        });
        self.phrase_pos.take()
    }
}

/// Parses ReportQL text. Empty or whitespace-only input yields an empty
/// document.
pub fn parse_report(source: &str) -> Result<Parsed, ParseError> {
    let mut warnings = Vec::new();
    let mut stack = vec![Frame::new(None)];

    for (token, pos) in tokenize(source) {
        let top = stack.last_mut().expect("root frame is never popped");
        match token {
            Token::Word(w) => {
                if top.phrase.is_empty() {
                    top.phrase_pos = Some(pos);
                }
                top.phrase.push(w.to_string());
            }
            Token::Open => {
                if top.phrase.is_empty() {
                    return Err(ParseError::BlockWithoutPhrase(pos));
                }
                let phrase = std::mem::take(&mut top.phrase);
                let start = top.phrase_pos.take().unwrap_or(pos);
                stack.push(Frame::new(Some((phrase, start, pos))));
            }
            Token::Close => {
                if stack.len() == 1 {
                    return Err(ParseError::UnmatchedClose(pos));
                }
                let mut frame = stack.pop().expect("checked depth");
                frame.flush_leaf();
                let (phrase, start, _) = frame.owner.expect("nested frames have an owner");
                if frame.entries.is_empty() {
                    warnings.push(ParseWarning::EmptyBlock {
                        phrase: phrase.join(" "),
                        position: start,
                    });
                }
                stack
                    .last_mut()
                    .expect("root frame is never popped")
                    .entries
                    .push(Entry {
                        phrase,
                        block: Some(frame.entries),
                    });
            }
        }
    }
    if stack.len() > 1 {
        let (_, _, brace) = stack.pop().and_then(|f| f.owner).expect("nested frame");
        return Err(ParseError::Unclosed(brace));
    }
    let mut root = stack.pop().expect("root frame");
    let trailing = root.flush_leaf();
    let n = root.entries.len();
    for (i, entry) in root.entries.iter().enumerate() {
        if entry.is_leaf() {
            let position = if i + 1 == n { trailing } else { None };
            warnings.push(ParseWarning::TopLevelLeaf {
                phrase: entry.phrase_text(),
                position: position.unwrap_or(Position {
                    offset: 0,
                    line: 1,
                    column: 1,
                }),
            });
        }
    }
    Ok(Parsed {
        doc: ReportDoc { entries: root.entries },
        warnings,
    })
}

/// Single-line canonical form: words separated by single spaces, one space
/// on either side of every brace, no leading or trailing whitespace.
pub fn serialize_canonical(doc: &ReportDoc) -> String {
    let mut out = String::new();
    write_entries(&doc.entries, &mut out);
    out
}

fn write_entries(entries: &[Entry], out: &mut String) {
    for (i, entry) in entries.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&entry.phrase.join(" "));
        if let Some(children) = &entry.block {
            out.push_str(" {");
            if !children.is_empty() {
                out.push(' ');
                write_entries(children, out);
            }
            out.push_str(" }");
        }
    }
}

/// Parses and re-serializes in canonical form.
pub fn format_report(source: &str) -> Result<String, ParseError> {
    parse_report(source).map(|p| serialize_canonical(&p.doc))
}

/// One flattened (key path, value) unit.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct SlotPair {
    pub path: Vec<String>,
    pub value: String,
}

impl SlotPair {
    pub fn new(path: &[&str], value: &str) -> Self {
        SlotPair {
            path: path.iter().map(|s| s.to_string()).collect(),
            value: value.to_string(),
        }
    }

    /// Case- and whitespace-insensitive matching key.
    pub fn key(&self) -> (Vec<String>, String) {
        (
            self.path.iter().map(|p| normalize_phrase(p)).collect(),
            normalize_phrase(&self.value),
        )
    }
}

impl fmt::Display for SlotPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} = {}", self.path.join("/"), self.value)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FlattenWarning {
    /// A top-level blockless entry, recorded as `[phrase] = present`.
    TopLevelLeaf { phrase: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Flattened {
    pub pairs: Vec<SlotPair>,
    pub warnings: Vec<FlattenWarning>,
}

/// Turns every blockless entry into a pair whose path is its chain of
/// ancestor phrases. Document order and duplicates are preserved.
pub fn flatten(doc: &ReportDoc) -> Flattened {
    let mut out = Flattened::default();
    for entry in &doc.entries {
        match &entry.block {
            None => {
                let phrase = entry.phrase_text();
                out.warnings
                    .push(FlattenWarning::TopLevelLeaf { phrase: phrase.clone() });
                out.pairs.push(SlotPair {
                    path: vec![phrase],
                    value: PRESENCE_MARKER.to_string(),
                });
            }
            Some(children) => {
                let mut path = vec![entry.phrase_text()];
                flatten_into(children, &mut path, &mut out.pairs);
            }
        }
    }
    out
}

fn flatten_into(entries: &[Entry], path: &mut Vec<String>, pairs: &mut Vec<SlotPair>) {
    for entry in entries {
        match &entry.block {
            None => pairs.push(SlotPair {
                path: path.clone(),
                value: entry.phrase_text(),
            }),
            Some(children) => {
                path.push(entry.phrase_text());
                flatten_into(children, path, pairs);
                path.pop();
            }
        }
    }
}

/// A disagreement between a report and a schema.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    UnknownOrgan {
        organ: String,
    },
    UnknownSlot {
        path: Vec<String>,
    },
    InvalidValue {
        path: Vec<String>,
        value: String,
        allowed: Vec<String>,
    },
    /// The tree shape does not fit the schema, e.g. a categorical slot
    /// holding a nested block, or a composite slot given a bare value.
    Structure {
        path: Vec<String>,
        message: String,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::UnknownOrgan { organ } => write!(f, "unknown organ `{organ}`"),
            Violation::UnknownSlot { path } => write!(f, "unknown slot `{}`", path.join("/")),
            Violation::InvalidValue { path, value, allowed } => write!(
                f,
                "value `{value}` not allowed at `{}` (allowed: {})",
                path.join("/"),
                allowed.join(" | ")
            ),
            Violation::Structure { path, message } => write!(f, "`{}`: {message}", path.join("/")),
        }
    }
}

/// Lists every place where `doc` disagrees with `schema`; empty means the
/// report conforms. Free-text slots accept any value.
pub fn validate_against_schema(doc: &ReportDoc, schema: &SchemaSet) -> Vec<Violation> {
    let mut out = Vec::new();
    for entry in &doc.entries {
        let name = entry.phrase_text();
        let Some(organ) = schema.organ(&name) else {
            out.push(Violation::UnknownOrgan { organ: name });
            continue;
        };
        match &entry.block {
            None => out.push(Violation::Structure {
                path: vec![name],
                message: "organ has no block".into(),
            }),
            Some(children) => {
                let mut path = vec![name];
                for child in children {
                    check_slot(child, &organ.slots, &mut path, &mut out);
                }
            }
        }
    }
    out
}

fn check_slot(entry: &Entry, slots: &[SlotNode], path: &mut Vec<String>, out: &mut Vec<Violation>) {
    let name = entry.phrase_text();
    let Some(children) = &entry.block else {
        out.push(Violation::Structure {
            path: path.clone(),
            message: format!("value `{name}` is not attached to a slot"),
        });
        return;
    };
    path.push(name.clone());
    let key = normalize_phrase(&name);
    match slots.iter().find(|s| normalize_phrase(&s.name) == key) {
        None => out.push(Violation::UnknownSlot { path: path.clone() }),
        Some(slot) => match &slot.kind {
            SlotKind::Composite(sub) => {
                for child in children {
                    check_slot(child, sub, path, out);
                }
            }
            SlotKind::Categorical(_) | SlotKind::FreeText => {
                for value in children {
                    if value.block.is_some() {
                        out.push(Violation::Structure {
                            path: path.clone(),
                            message: format!("`{}` is a leaf slot but holds a nested block", slot.name),
                        });
                    } else if !slot.accepts(&value.phrase_text()) {
                        out.push(Violation::InvalidValue {
                            path: path.clone(),
                            value: value.phrase_text(),
                            allowed: slot.allowed_values().unwrap_or(&[]).to_vec(),
                        });
                    }
                }
            }
        },
    }
    path.pop();
}

/// Multiset comparison of two flattened reports.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct ReportDiff {
    /// Gold pairs also present in the prediction, in gold order.
    pub matched: Vec<SlotPair>,
    /// Gold pairs the prediction lacks, in gold order.
    pub missing: Vec<SlotPair>,
    /// Predicted pairs with no gold counterpart, in prediction order.
    pub spurious: Vec<SlotPair>,
}

/// Matches flattened pairs on normalized `(path, value)` with multiset
/// semantics, so repeated findings are counted individually.
pub fn diff_reports(pred: &ReportDoc, gold: &ReportDoc) -> ReportDiff {
    diff_pairs(&flatten(pred).pairs, &flatten(gold).pairs)
}

pub fn diff_pairs(pred: &[SlotPair], gold: &[SlotPair]) -> ReportDiff {
    let mut available: HashMap<(Vec<String>, String), usize> = HashMap::new();
    for p in pred {
        *available.entry(p.key()).or_default() += 1;
    }
    let mut diff = ReportDiff::default();
    let mut used: HashMap<(Vec<String>, String), usize> = HashMap::new();
    for g in gold {
        let key = g.key();
        match available.get_mut(&key) {
            Some(n) if *n > 0 => {
                *n -= 1;
                *used.entry(key).or_default() += 1;
                diff.matched.push(g.clone());
            }
            _ => diff.missing.push(g.clone()),
        }
    }
    for p in pred {
        let key = p.key();
        match used.get_mut(&key) {
            Some(n) if *n > 0 => *n -= 1,
            _ => diff.spurious.push(p.clone()),
        }
    }
    diff
}

#[cfg(test)]
mod tests {
    use super::*;

    const LIVER: &str = "liver { size { normal } echogenicity { normal } lesion { no } bile duct { no } }";

    #[test]
    fn parses_liver_fragment() {
        let parsed = parse_report(LIVER).unwrap();
        assert!(parsed.warnings.is_empty());
        let doc = parsed.doc;
        assert_eq!(doc.entries.len(), 1);
        let liver = &doc.entries[0];
        assert_eq!(liver.phrase_text(), "liver");
        assert_eq!(liver.children().len(), 4);
        for slot in liver.children() {
            assert_eq!(slot.children().len(), 1);
            assert!(slot.children()[0].is_leaf());
        }
        assert_eq!(liver.children()[3].phrase, ["bile", "duct"]);
    }

    #[test]
    fn empty_input_is_empty_document() {
        for src in ["", "   \n\t "] {
            let parsed = parse_report(src).unwrap();
            assert!(parsed.doc.is_empty());
            assert!(parsed.warnings.is_empty());
        }
        assert_eq!(serialize_canonical(&ReportDoc::default()), "");
    }

    #[test]
    fn braces_need_no_whitespace() {
        let tight = parse_report("liver{size{normal}}").unwrap().doc;
        let loose = parse_report("liver { size { normal } }").unwrap().doc;
        assert_eq!(tight, loose);
        assert_eq!(serialize_canonical(&tight), "liver { size { normal } }");
    }

    #[test]
    fn commas_are_word_characters() {
        let doc = parse_report("stones {quantity {few}, size {up to 7 mm}}").unwrap().doc;
        let pairs = flatten(&doc).pairs;
        assert_eq!(pairs[0], SlotPair::new(&["stones", "quantity"], "few"));
        assert_eq!(pairs[1], SlotPair::new(&["stones", ", size"], "up to 7 mm"));
    }

    #[test]
    fn unbalanced_braces_report_positions() {
        assert_eq!(
            parse_report("liver { size { normal }").unwrap_err(),
            ParseError::Unclosed(Position {
                offset: 6,
                line: 1,
                column: 7
            })
        );
        assert_eq!(
            parse_report("a { b } }").unwrap_err(),
            ParseError::UnmatchedClose(Position {
                offset: 8,
                line: 1,
                column: 9
            })
        );
        assert_eq!(
            parse_report("a {\n  { b } }").unwrap_err(),
            ParseError::BlockWithoutPhrase(Position {
                offset: 6,
                line: 2,
                column: 3
            })
        );
        assert_eq!(
            parse_report("x {\n y { z }").unwrap_err(),
            ParseError::Unclosed(Position {
                offset: 2,
                line: 1,
                column: 3
            })
        );
        assert_eq!(
            parse_report("x { y\n {").unwrap_err(),
            ParseError::Unclosed(Position {
                offset: 7,
                line: 2,
                column: 2
            })
        );
    }

    #[test]
    fn warnings_for_top_level_leaves_and_empty_blocks() {
        let parsed = parse_report("liver { } normal study").unwrap();
        assert_eq!(parsed.warnings.len(), 2);
        assert!(matches!(&parsed.warnings[0], ParseWarning::EmptyBlock { phrase, .. } if phrase == "liver"));
        assert!(matches!(
            &parsed.warnings[1],
            ParseWarning::TopLevelLeaf { phrase, position } if phrase == "normal study" && position.column == 11
        ));
        assert_eq!(serialize_canonical(&parsed.doc), "liver { } normal study");
    }

    #[test]
    fn canonical_form() {
        let doc = ReportDoc::new(vec![Entry::node(
            "liver",
            vec![Entry::node("size", vec![Entry::leaf("normal")])],
        )]);
        assert_eq!(serialize_canonical(&doc), "liver { size { normal } }");
        let messy = "  liver{ size   {normal}\n echogenicity {  normal }}  ";
        let once = format_report(messy).unwrap();
        assert_eq!(once, "liver { size { normal } echogenicity { normal } }");
        assert_eq!(format_report(&once).unwrap(), once);
    }

    #[test]
    fn well_formedness() {
        assert!(parse_report(LIVER).unwrap().doc.is_well_formed());
        let merged = ReportDoc::new(vec![Entry::node("a", vec![Entry::leaf("b"), Entry::leaf("c")])]);
        assert!(!merged.is_well_formed());
        assert_eq!(serialize_canonical(&merged), "a { b c }");
        let bad_word = ReportDoc::new(vec![Entry {
            phrase: vec!["a{".into()],
            block: None,
        }]);
        assert!(!bad_word.is_well_formed());
    }

    #[test]
    fn flattens_liver_fragment() {
        let doc = parse_report(LIVER).unwrap().doc;
        let flat = flatten(&doc);
        assert!(flat.warnings.is_empty());
        assert_eq!(
            flat.pairs,
            vec![
                SlotPair::new(&["liver", "size"], "normal"),
                SlotPair::new(&["liver", "echogenicity"], "normal"),
                SlotPair::new(&["liver", "lesion"], "no"),
                SlotPair::new(&["liver", "bile duct"], "no"),
            ]
        );
    }

    #[test]
    fn flattens_paired_organs_and_composites() {
        let doc = parse_report("right kidney { stone { no } } left kidney { stone { no } }")
            .unwrap()
            .doc;
        let pairs = flatten(&doc).pairs;
        assert_eq!(pairs.len(), 2);
        assert_ne!(pairs[0].path, pairs[1].path);

        let doc = parse_report("stones { quantity { few } size { up to 7 mm } location { upper pole } }")
            .unwrap()
            .doc;
        assert_eq!(
            flatten(&doc).pairs,
            vec![
                SlotPair::new(&["stones", "quantity"], "few"),
                SlotPair::new(&["stones", "size"], "up to 7 mm"),
                SlotPair::new(&["stones", "location"], "upper pole"),
            ]
        );
    }

    #[test]
    fn top_level_leaf_flattens_to_presence() {
        let doc = parse_report("ascites").unwrap().doc;
        let flat = flatten(&doc);
        assert_eq!(flat.pairs, vec![SlotPair::new(&["ascites"], PRESENCE_MARKER)]);
        assert_eq!(flat.warnings.len(), 1);
    }

    #[test]
    fn diff_counts() {
        let gold = parse_report(LIVER).unwrap().doc;
        let same = diff_reports(&gold, &gold);
        assert_eq!(same.matched.len(), 4);
        assert!(same.missing.is_empty() && same.spurious.is_empty());

        let pred = parse_report("liver { size { normal } echogenicity { normal } bile duct { no } }")
            .unwrap()
            .doc;
        let d = diff_reports(&pred, &gold);
        assert_eq!((d.matched.len(), d.missing.len(), d.spurious.len()), (3, 1, 0));
        assert_eq!(d.missing[0], SlotPair::new(&["liver", "lesion"], "no"));

        let pred = parse_report("GB { stone { yes } }").unwrap().doc;
        let gold = parse_report("GB { stone { no } }").unwrap().doc;
        let d = diff_reports(&pred, &gold);
        assert_eq!((d.matched.len(), d.missing.len(), d.spurious.len()), (0, 1, 1));
    }

    #[test]
    fn diff_normalizes_case_and_keeps_duplicates() {
        let pred = parse_report("Liver { Lesion { YES } lesion { yes } }").unwrap().doc;
        let gold = parse_report("liver { lesion { yes } }").unwrap().doc;
        let d = diff_reports(&pred, &gold);
        assert_eq!((d.matched.len(), d.missing.len(), d.spurious.len()), (1, 0, 1));
        assert_eq!(d.spurious[0].path, ["Liver", "lesion"]);
    }

    fn liver_schema() -> SchemaSet {
        crate::schema::parse_schema(
            "organ liver\nslot size = normal | enlarged | small\nslot note = *\nslot stones :\n  sub quantity = few | many\n",
        )
        .unwrap()
    }

    #[test]
    fn validation_findings() {
        let s = liver_schema();
        assert!(validate_against_schema(
            &parse_report("liver { size { Normal } note { anything at all } stones { quantity { few } } }")
                .unwrap()
                .doc,
            &s
        )
        .is_empty());
        assert_eq!(
            validate_against_schema(&parse_report("liver { size { purple } }").unwrap().doc, &s),
            vec![Violation::InvalidValue {
                path: vec!["liver".into(), "size".into()],
                value: "purple".into(),
                allowed: vec!["normal".into(), "enlarged".into(), "small".into()],
            }]
        );
        assert_eq!(
            validate_against_schema(&parse_report("brain { size { normal } }").unwrap().doc, &s),
            vec![Violation::UnknownOrgan { organ: "brain".into() }]
        );
        assert_eq!(
            validate_against_schema(&parse_report("liver { shape { round } }").unwrap().doc, &s),
            vec![Violation::UnknownSlot {
                path: vec!["liver".into(), "shape".into()]
            }]
        );
        let structural = validate_against_schema(
            &parse_report("liver { size { normal { x } } stones { few } } liver")
                .unwrap()
                .doc,
            &s,
        );
        assert_eq!(structural.len(), 3);
        assert!(structural.iter().all(|v| matches!(v, Violation::Structure { .. })));
    }

    #[test]
    fn retain_organs_filters_top_level() {
        let doc = parse_report("liver { size { normal } } GB { seen { yes } }")
            .unwrap()
            .doc;
        assert_eq!(serialize_canonical(&doc.retain_organs(&["gb"])), "GB { seen { yes } }");
        assert!(doc.retain_organs(&["spleen"]).is_empty());
    }
}
