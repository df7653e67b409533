//! Toolkit for turning free-text radiology reports into structured reports.
//!
//! The crate covers the whole non-model side of the pipeline:
//!
//! * [`schema`]: hierarchical organ/slot schemas, their file format and the
//!   single-line rendering fed to a sequence-to-sequence model as context.
//! * [`reportql`]: the bracketed structured-report language
//!   (`liver { size { normal } }`), with parser, canonical serializer,
//!   flattening into key-value pairs, schema validation and diffing.
//! * [`metrics`]: ROUGE-1/2/L, corpus BLEU with its components, a
//!   punctuation-splitting BLEU variant, key-value exact match and Cohen's kappa.
//! * [`corruption`]: span-masking (sentinel) pre-training pairs.
//! * [`corpus`]: JSON-lines corpora, train/test splits, model input assembly,
//!   prediction files and inter-annotator agreement.
//!
//! Per-report work (scoring, masking) runs on rayon when the `parallel`
//! feature is enabled and falls back to plain iterators otherwise; see [`par`].

pub mod corpus;
pub mod corruption;
pub mod metrics;
pub mod par;
pub mod reportql;
pub mod schema;
mod text;

pub use text::normalize_phrase;
