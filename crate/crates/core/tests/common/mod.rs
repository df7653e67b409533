#![allow(dead_code)]

use proptest::collection::vec;
use proptest::prelude::*;
use rqlkit::reportql::{Entry, ReportDoc};

pub fn word() -> impl Strategy<Value = String> {
    "[a-z0-9,.:-]{1,7}"
}

pub fn phrase() -> impl Strategy<Value = Vec<String>> {
    vec(word(), 1..4)
}

/// Sibling list of well-formed shape: block entries, then an optional
/// blockless entry. Never more than six siblings; lists far from the leaves
/// are kept narrow so trees stay small.
pub fn entries(depth: u32) -> BoxedStrategy<Vec<Entry>> {
    let leaf = proptest::option::of(phrase());
    if depth == 0 {
        return leaf
            .prop_map(|l| l.map(|p| vec![Entry { phrase: p, block: None }]).unwrap_or_default())
            .boxed();
    }
    let node = (phrase(), entries(depth - 1)).prop_map(|(phrase, children)| Entry {
        phrase,
        block: Some(children),
    });
    let max_nodes = if depth >= 3 { 2 } else { 5 };
    (vec(node, 0..=max_nodes), leaf)
        .prop_map(|(mut nodes, leaf)| {
            if let Some(p) = leaf {
                nodes.push(Entry { phrase: p, block: None });
            }
            nodes
        })
        .boxed()
}

/// Well-formed documents of depth at most five.
pub fn doc() -> impl Strategy<Value = ReportDoc> {
    (1u32..=5).prop_flat_map(entries).prop_map(ReportDoc::new)
}

/// Documents whose top level holds only block entries, built from a fixed
/// organ vocabulary so that organ filters select something.
pub fn organ_doc() -> impl Strategy<Value = ReportDoc> {
    let organ = prop::sample::select(vec!["liver", "GB", "spleen", "right kidney", "bladder"]);
    vec((organ, entries(2)), 0..6).prop_map(|items| {
        ReportDoc::new(
            items
                .into_iter()
                .map(|(o, children)| Entry {
                    phrase: o.split(' ').map(String::from).collect(),
                    block: Some(children),
                })
                .collect(),
        )
    })
}

/// Leaf paths and values collected by an explicit stack walk.
pub fn leaf_pairs(doc: &ReportDoc) -> Vec<(Vec<String>, String)> {
    let mut out = Vec::new();
    let mut stack: Vec<(Vec<String>, &Entry)> = doc.entries.iter().rev().map(|e| (Vec::new(), e)).collect();
    while let Some((path, e)) = stack.pop() {
        let text = e.phrase.join(" ");
        match &e.block {
            None if path.is_empty() => out.push((vec![text], "present".to_string())),
            None => out.push((path, text)),
            Some(children) => {
                let mut p = path.clone();
                p.push(text);
                for c in children.iter().rev() {
                    stack.push((p.clone(), c));
                }
            }
        }
    }
    out
}

pub fn reverse_siblings(entries: &[Entry]) -> Vec<Entry> {
    entries
        .iter()
        .rev()
        .map(|e| Entry {
            phrase: e.phrase.clone(),
            block: e.block.as_ref().map(|c| reverse_siblings(c)),
        })
        .collect()
}
