//! Hierarchical information schemas.
//!
//! A schema lists, per organ, the slots a structured report may fill. Slots
//! are categorical (closed value list), free text, or composite (nested
//! sub-slots such as a stone's quantity, size and location).
//!
//! # File format
//!
//! ```text
//! # comment
//! version abdominopelvic-1
//! organ GB
//! slot seen = yes | no
//! slot wall thickening = yes | no
//! organ left kidney
//! slot stones :
//!   sub quantity = single | few | multiple
//!   sub size = *
//! ```
//!
//! `slot` lines sit at column zero; each `sub` nesting level is indented by
//! two more spaces than its parent. `= *` declares a free-text slot and a
//! trailing `:` a composite one.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::text::{collapse_whitespace, normalize_phrase};

/// Deepest slot nesting accepted below an organ.
pub const MAX_SLOT_DEPTH: usize = 6;

/// Separator placed between organs in [`linearize_schema`] output.
pub const ORGAN_SEPARATOR: &str = " ; ";

/// Characters that may not appear in organ, slot or value names.
const RESERVED: &[char] = &['{', '}', '(', ')', '[', ']', '|', ',', ';', '=', ':', '#', '*'];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SchemaError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("duplicate name `{name}` in {scope} (line {line})")]
    DuplicateName { line: usize, name: String, scope: String },
    #[error("invariant violation at line {line}: {message}")]
    Invariant { line: usize, message: String },
    #[error("non-empty: at least one organ")]
    Empty,
    #[error("unknown organ `{0}`")]
    UnknownOrgan(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SlotKind {
    /// Closed list of allowed values.
    Categorical(Vec<String>),
    FreeText,
    Composite(Vec<SlotNode>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotNode {
    pub name: String,
    pub kind: SlotKind,
}

impl SlotNode {
    pub fn categorical<S: Into<String>>(name: S, values: &[&str]) -> Self {
        SlotNode {
            name: name.into(),
            kind: SlotKind::Categorical(values.iter().map(|v| v.to_string()).collect()),
        }
    }

    pub fn free_text<S: Into<String>>(name: S) -> Self {
        SlotNode {
            name: name.into(),
            kind: SlotKind::FreeText,
        }
    }

    pub fn composite<S: Into<String>>(name: S, children: Vec<SlotNode>) -> Self {
        SlotNode {
            name: name.into(),
            kind: SlotKind::Composite(children),
        }
    }

    pub fn is_leaf(&self) -> bool {
        !matches!(self.kind, SlotKind::Composite(_))
    }

    pub fn allowed_values(&self) -> Option<&[String]> {
        match &self.kind {
            SlotKind::Categorical(values) => Some(values),
            _ => None,
        }
    }

    pub fn children(&self) -> &[SlotNode] {
        match &self.kind {
            SlotKind::Composite(children) => children,
            _ => &[],
        }
    }

    /// Child slot by name, compared case-insensitively.
    pub fn child(&self, name: &str) -> Option<&SlotNode> {
        find_slot(self.children(), name)
    }

    /// Whether `value` is acceptable for this leaf slot.
    pub fn accepts(&self, value: &str) -> bool {
        match &self.kind {
            SlotKind::Categorical(values) => {
                let key = normalize_phrase(value);
                values.iter().any(|v| normalize_phrase(v) == key)
            }
            SlotKind::FreeText => true,
            SlotKind::Composite(_) => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrganSchema {
    pub name: String,
    pub slots: Vec<SlotNode>,
}

impl OrganSchema {
    pub fn new<S: Into<String>>(name: S, slots: Vec<SlotNode>) -> Self {
        OrganSchema {
            name: name.into(),
            slots,
        }
    }

    pub fn slot(&self, name: &str) -> Option<&SlotNode> {
        find_slot(&self.slots, name)
    }
}

fn find_slot<'a>(slots: &'a [SlotNode], name: &str) -> Option<&'a SlotNode> {
    let key = normalize_phrase(name);
    slots.iter().find(|s| normalize_phrase(&s.name) == key)
}

/// A validated collection of organ schemas.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemaSet {
    version: String,
    organs: Vec<OrganSchema>,
}

/// Organ/slot/.../leaf chain naming one reportable property.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SlotPath(pub Vec<String>);

impl SlotPath {
    /// Lowercased, whitespace-collapsed segments, used for matching.
    pub fn normalized(&self) -> Vec<String> {
        self.0.iter().map(|s| normalize_phrase(s)).collect()
    }
}

impl fmt::Display for SlotPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join("/"))
    }
}

impl SchemaSet {
    /// Builds a schema set, normalizing whitespace in every name and checking
    /// all structural invariants.
    pub fn new<S: Into<String>>(version: S, organs: Vec<OrganSchema>) -> Result<Self, SchemaError> {
        let organs: Vec<OrganSchema> = organs
            .into_iter()
            .map(|o| OrganSchema {
                name: collapse_whitespace(&o.name),
                slots: o.slots.into_iter().map(normalize_node).collect(),
            })
            .collect();
        if organs.is_empty() {
            return Err(SchemaError::Empty);
        }
        let mut seen = Vec::new();
        for organ in &organs {
            check_name(&organ.name, 0)?;
            let key = normalize_phrase(&organ.name);
            if seen.contains(&key) {
                return Err(SchemaError::DuplicateName {
                    line: 0,
                    name: organ.name.clone(),
                    scope: "schema set".into(),
                });
            }
            seen.push(key);
            if organ.slots.is_empty() {
                return Err(SchemaError::Invariant {
                    line: 0,
                    message: format!("organ `{}` declares no slots", organ.name),
                });
            }
            check_siblings(&organ.slots, &organ.name, 1)?;
        }
        Ok(SchemaSet {
            version: collapse_whitespace(&version.into()),
            organs,
        })
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn organs(&self) -> &[OrganSchema] {
        &self.organs
    }

    /// Organ by name, compared case-insensitively.
    pub fn organ(&self, name: &str) -> Option<&OrganSchema> {
        let key = normalize_phrase(name);
        self.organs.iter().find(|o| normalize_phrase(&o.name) == key)
    }

    /// Writes the schema back in the file format accepted by [`parse_schema`].
    pub fn serialize(&self) -> String {
        self.to_string()
    }
}

fn normalize_node(node: SlotNode) -> SlotNode {
    let kind = match node.kind {
        SlotKind::Categorical(values) => SlotKind::Categorical(values.iter().map(|v| collapse_whitespace(v)).collect()),
        SlotKind::FreeText => SlotKind::FreeText,
        SlotKind::Composite(children) => SlotKind::Composite(children.into_iter().map(normalize_node).collect()),
    };
    SlotNode {
        name: collapse_whitespace(&node.name),
        kind,
    }
}

fn check_name(name: &str, line: usize) -> Result<(), SchemaError> {
    if name.is_empty() {
        return Err(SchemaError::Invariant {
            line,
            message: "empty name".into(),
        });
    }
    if let Some(c) = name.chars().find(|c| RESERVED.contains(c)) {
        return Err(SchemaError::Invariant {
            line,
            message: format!("name `{name}` contains reserved character `{c}`"),
        });
    }
    Ok(())
}

fn check_siblings(slots: &[SlotNode], parent: &str, depth: usize) -> Result<(), SchemaError> {
    if depth > MAX_SLOT_DEPTH {
        return Err(SchemaError::Invariant {
            line: 0,
            message: format!("slots under `{parent}` exceed the maximum depth of {MAX_SLOT_DEPTH}"),
        });
    }
    let mut seen = Vec::new();
    for slot in slots {
        check_name(&slot.name, 0)?;
        let key = normalize_phrase(&slot.name);
        if seen.contains(&key) {
            return Err(SchemaError::DuplicateName {
                line: 0,
                name: slot.name.clone(),
                scope: format!("`{parent}`"),
            });
        }
        seen.push(key);
        match &slot.kind {
            SlotKind::Categorical(values) => check_values(values, &slot.name, 0)?,
            SlotKind::FreeText => {}
            SlotKind::Composite(children) => {
                if children.is_empty() {
                    return Err(SchemaError::Invariant {
                        line: 0,
                        message: format!("composite slot `{}` has no children", slot.name),
                    });
                }
                check_siblings(children, &slot.name, depth + 1)?;
            }
        }
    }
    Ok(())
}

fn check_values(values: &[String], slot: &str, line: usize) -> Result<(), SchemaError> {
    if values.is_empty() {
        return Err(SchemaError::Invariant {
            line,
            message: format!("categorical slot `{slot}` has no allowed values"),
        });
    }
    let mut seen = Vec::new();
    for v in values {
        check_name(v, line)?;
        let key = normalize_phrase(v);
        if seen.contains(&key) {
            return Err(SchemaError::DuplicateName {
                line,
                name: v.clone(),
                scope: format!("values of `{slot}`"),
            });
        }
        seen.push(key);
    }
    Ok(())
}

impl fmt::Display for SchemaSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if !self.version.is_empty() {
            writeln!(f, "version {}", self.version)?;
        }
        for organ in &self.organs {
            writeln!(f, "organ {}", organ.name)?;
            for slot in &organ.slots {
                write_slot(f, slot, 0)?;
            }
        }
        Ok(())
    }
}

fn write_slot(f: &mut fmt::Formatter<'_>, slot: &SlotNode, level: usize) -> fmt::Result {
    let keyword = if level == 0 { "slot" } else { "sub" };
    let indent = "  ".repeat(level);
    match &slot.kind {
        SlotKind::Categorical(values) => {
            writeln!(f, "{indent}{keyword} {} = {}", slot.name, values.join(" | "))
        }
        SlotKind::FreeText => writeln!(f, "{indent}{keyword} {} = *", slot.name),
        SlotKind::Composite(children) => {
            writeln!(f, "{indent}{keyword} {} :", slot.name)?;
            for child in children {
                write_slot(f, child, level + 1)?;
            }
            Ok(())
        }
    }
}

impl FromStr for SchemaSet {
    type Err = SchemaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_schema(s)
    }
}

/// A node under construction: declared depth, source line, and node.
struct Pending {
    depth: usize,
    line: usize,
    node: SlotNode,
}

struct OrganBuilder {
    line: usize,
    organ: OrganSchema,
    stack: Vec<Pending>,
}

impl OrganBuilder {
    /// Closes every pending node at `depth` or deeper.
    fn unwind_to(&mut self, depth: usize) -> Result<(), SchemaError> {
        while self.stack.last().is_some_and(|p| p.depth >= depth) {
            let done = self.stack.pop().expect("checked non-empty");
            if let SlotKind::Composite(children) = &done.node.kind {
                if children.is_empty() {
                    return Err(SchemaError::Invariant {
                        line: done.line,
                        message: format!("composite slot `{}` has no children", done.node.name),
                    });
                }
            }
            let siblings = match self.stack.last_mut() {
                Some(parent) => match &mut parent.node.kind {
                    SlotKind::Composite(children) => children,
                    _ => unreachable!("only composite nodes accept children"),
                },
                None => &mut self.organ.slots,
            };
            let key = normalize_phrase(&done.node.name);
            if siblings.iter().any(|s| normalize_phrase(&s.name) == key) {
                return Err(SchemaError::DuplicateName {
                    line: done.line,
                    name: done.node.name,
                    scope: "sibling slots".into(),
                });
            }
            siblings.push(done.node);
        }
        Ok(())
    }

    fn finish(mut self) -> Result<OrganSchema, SchemaError> {
        self.unwind_to(1)?;
        if self.organ.slots.is_empty() {
            return Err(SchemaError::Invariant {
                line: self.line,
                message: format!("organ `{}` declares no slots", self.organ.name),
            });
        }
        Ok(self.organ)
    }
}

/// Parses the schema file format (see the module docs).
pub fn parse_schema(source: &str) -> Result<SchemaSet, SchemaError> {
    let mut version = String::new();
    let mut organs: Vec<OrganSchema> = Vec::new();
    let mut current: Option<OrganBuilder> = None;

    for (idx, raw) in source.lines().enumerate() {
        let line_no = idx + 1;
        let content = raw.split('#').next().unwrap_or("");
        if content.trim().is_empty() {
            continue;
        }
        if let Some(pos) = content.find('\t') {
            return Err(SchemaError::Syntax {
                line: line_no,
                column: pos + 1,
                message: "tabs are not allowed; indent with two spaces per level".into(),
            });
        }
        let indent = content.len() - content.trim_start().len();
        let body = content.trim();
        let (keyword, rest) = match body.split_once(char::is_whitespace) {
            Some((k, r)) => (k, r.trim()),
            None => (body, ""),
        };
        let syntax = |message: String| SchemaError::Syntax {
            line: line_no,
            column: indent + 1,
            message,
        };

        match keyword {
            "version" if indent == 0 => {
                if !organs.is_empty() || current.is_some() {
                    return Err(syntax("`version` must precede the first organ".into()));
                }
                version = collapse_whitespace(rest);
            }
            "organ" if indent == 0 => {
                let name = collapse_whitespace(rest);
                check_name(&name, line_no)?;
                if let Some(done) = current.take() {
                    organs.push(done.finish()?);
                }
                let key = normalize_phrase(&name);
                if organs.iter().any(|o| normalize_phrase(&o.name) == key) {
                    return Err(SchemaError::DuplicateName {
                        line: line_no,
                        name,
                        scope: "schema set".into(),
                    });
                }
                current = Some(OrganBuilder {
                    line: line_no,
                    organ: OrganSchema::new(name, Vec::new()),
                    stack: Vec::new(),
                });
            }
            "slot" | "sub" => {
                let depth = match (keyword, indent) {
                    ("slot", 0) => 1,
                    ("sub", n) if n > 0 && n % 2 == 0 => n / 2 + 1,
                    ("slot", _) => return Err(syntax("`slot` lines must not be indented".into())),
                    _ => {
                        return Err(syntax(
                            "`sub` lines must be indented by a positive multiple of two spaces".into(),
                        ))
                    }
                };
                if depth > MAX_SLOT_DEPTH {
                    return Err(SchemaError::Invariant {
                        line: line_no,
                        message: format!("slot nesting exceeds the maximum depth of {MAX_SLOT_DEPTH}"),
                    });
                }
                let builder = current
                    .as_mut()
                    .ok_or_else(|| syntax(format!("`{keyword}` before any `organ` line")))?;
                let node = parse_slot_body(rest, line_no, indent + keyword.len() + 2)?;
                builder.unwind_to(depth)?;
                match builder.stack.last() {
                    Some(parent) if parent.depth + 1 != depth => {
                        return Err(syntax(format!(
                            "indentation skips a level below `{}`",
                            parent.node.name
                        )));
                    }
                    Some(parent) if !matches!(parent.node.kind, SlotKind::Composite(_)) => {
                        return Err(SchemaError::Invariant {
                            line: line_no,
                            message: format!("`{}` is not composite and cannot have children", parent.node.name),
                        });
                    }
                    None if depth != 1 => {
                        return Err(syntax("`sub` without an enclosing composite slot".into()));
                    }
                    _ => {}
                }
                builder.stack.push(Pending {
                    depth,
                    line: line_no,
                    node,
                });
            }
            other => {
                return Err(syntax(format!(
                    "expected `organ`, `slot`, `sub` or `version`, found `{other}`"
                )))
            }
        }
    }
    if let Some(done) = current.take() {
        organs.push(done.finish()?);
    }
    if organs.is_empty() {
        return Err(SchemaError::Empty);
    }
    SchemaSet::new(version, organs)
}

fn parse_slot_body(rest: &str, line: usize, column: usize) -> Result<SlotNode, SchemaError> {
    let syntax = |message: &str| SchemaError::Syntax {
        line,
        column,
        message: message.into(),
    };
    if let Some((name, values)) = rest.split_once('=') {
        let name = collapse_whitespace(name);
        check_name(&name, line)?;
        let values = values.trim();
        if values == "*" {
            return Ok(SlotNode::free_text(name));
        }
        if values.is_empty() {
            return Err(syntax("expected `*` or a `|`-separated value list after `=`"));
        }
        let values: Vec<String> = values.split('|').map(collapse_whitespace).collect();
        check_values(&values, &name, line)?;
        Ok(SlotNode {
            name,
            kind: SlotKind::Categorical(values),
        })
    } else if let Some(name) = rest.strip_suffix(':') {
        let name = collapse_whitespace(name);
        check_name(&name, line)?;
        Ok(SlotNode::composite(name, Vec::new()))
    } else {
        Err(syntax("slot declaration needs `= values`, `= *` or a trailing `:`"))
    }
}

/// Single-line rendering of the schema used as model context.
///
/// Organs appear in declared order as `organ : slot ( v1 | v2 ) , slot`,
/// composite slots wrap their children in parentheses, and organs are
/// joined by [`ORGAN_SEPARATOR`]. With a filter, only the named organs are
/// rendered (still in declared order).
pub fn linearize_schema(schema: &SchemaSet, organs: Option<&[&str]>) -> Result<String, SchemaError> {
    let selected: Vec<&OrganSchema> = match organs {
        None => schema.organs.iter().collect(),
        Some(filter) => {
            let keys: Vec<String> = filter.iter().map(|n| normalize_phrase(n)).collect();
            for (key, name) in keys.iter().zip(filter) {
                if !schema.organs.iter().any(|o| &normalize_phrase(&o.name) == key) {
                    return Err(SchemaError::UnknownOrgan(name.to_string()));
                }
            }
            schema
                .organs
                .iter()
                .filter(|o| keys.contains(&normalize_phrase(&o.name)))
                .collect()
        }
    };
    let rendered: Vec<String> = selected
        .iter()
        .map(|organ| {
            let slots: Vec<String> = organ.slots.iter().map(render_slot).collect();
            format!("{} : {}", organ.name, slots.join(" , "))
        })
        .collect();
    Ok(rendered.join(ORGAN_SEPARATOR))
}

fn render_slot(slot: &SlotNode) -> String {
    match &slot.kind {
        SlotKind::Categorical(values) => format!("{} ( {} )", slot.name, values.join(" | ")),
        SlotKind::FreeText => slot.name.clone(),
        SlotKind::Composite(children) => {
            let inner: Vec<String> = children.iter().map(render_slot).collect();
            format!("{} ( {} )", slot.name, inner.join(" , "))
        }
    }
}

/// Depth-first list of every leaf slot path, organ first.
pub fn list_slot_paths(schema: &SchemaSet) -> Vec<SlotPath> {
    let mut out = Vec::new();
    for organ in &schema.organs {
        let mut prefix = vec![organ.name.clone()];
        for slot in &organ.slots {
            collect_paths(slot, &mut prefix, &mut out);
        }
    }
    out
}

fn collect_paths(slot: &SlotNode, prefix: &mut Vec<String>, out: &mut Vec<SlotPath>) {
    prefix.push(slot.name.clone());
    match &slot.kind {
        SlotKind::Composite(children) => {
            for child in children {
                collect_paths(child, prefix, out);
            }
        }
        _ => out.push(SlotPath(prefix.clone())),
    }
    prefix.pop();
}
