use proptest::prelude::*;
use rqlkit::corpus::{
    assemble_input, load_corpus, parse_corpus, save_corpus, split, synthetic_corpus, InputOptions, ReportRecord,
    DEFAULT_SEPARATOR,
};
use rqlkit::reportql::parse_report;
use rqlkit::schema::parse_schema;

fn shipped_schema() -> rqlkit::schema::SchemaSet {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/schemas/abdominopelvic.schema");
    parse_schema(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn records(n: usize) -> Vec<ReportRecord> {
    (0..n)
        .map(|i| ReportRecord {
            id: format!("r{i:03}"),
            report_text: format!("report {i}"),
            target: None,
            annotator: None,
        })
        .collect()
}

proptest! {
    #[test]
    fn split_partitions_the_corpus(n in 2usize..200, fraction in 0.0f64..=1.0, seed in any::<u64>()) {
        let recs = records(n);
        let m = split(&recs, fraction, seed).unwrap();
        let expected_train = ((fraction * n as f64 + 1e-9).floor() as usize).clamp(1, n - 1);
        prop_assert_eq!(m.train.len(), expected_train);
        prop_assert_eq!(m.train.len() + m.test.len(), n);
        let mut all: Vec<&String> = m.train.iter().chain(&m.test).collect();
        all.sort();
        all.dedup();
        prop_assert_eq!(all.len(), n);
        for side in [&m.train, &m.test] {
            prop_assert!(side.windows(2).all(|w| w[0] < w[1]), "corpus order kept");
        }
        prop_assert_eq!(split(&recs, fraction, seed).unwrap(), m);
    }
}

#[test]
fn split_rejects_tiny_corpora_and_bad_fractions() {
    assert!(split(&records(1), 0.8, 0).is_err());
    assert!(split(&records(10), 1.5, 0).is_err());
    assert!(split(&records(10), f64::NAN, 0).is_err());
}

#[test]
fn assembled_inputs_keep_schema_and_report_apart() {
    let schema = shipped_schema();
    let corpus = synthetic_corpus(&schema, 30, 8);
    let opts = InputOptions::default();
    for rec in &corpus {
        let a = assemble_input(rec, &schema, &opts).unwrap();
        let (context, report) = a
            .example
            .input_text
            .split_once(&format!(" {DEFAULT_SEPARATOR} "))
            .unwrap();
        assert!(!context.contains(['{', '}']));
        assert_eq!(report, rec.report_text);
        assert_eq!(a.example.target_text, rec.target);
    }
}

#[test]
fn organ_filter_prunes_targets() {
    let schema = shipped_schema();
    let rec = ReportRecord {
        id: "x".into(),
        report_text: "text".into(),
        target: Some("liver { size { normal } } GB { seen { yes } } spleen { size { normal } }".into()),
        annotator: None,
    };
    let organs = ["spleen", "liver"];
    let a = assemble_input(
        &rec,
        &schema,
        &InputOptions {
            organs: Some(&organs),
            ..InputOptions::default()
        },
    )
    .unwrap();
    assert_eq!(
        a.example.target_text.as_deref(),
        Some("liver { size { normal } } spleen { size { normal } }")
    );
    assert!(a.example.input_text.starts_with("liver : "));
    assert!(!a.example.input_text.contains("GB :"));
}

#[test]
fn synthetic_targets_validate_against_their_schema() {
    let schema = shipped_schema();
    let corpus = synthetic_corpus(&schema, 50, 1);
    assert_eq!(corpus.len(), 50);
    for rec in &corpus {
        let doc = parse_report(rec.target.as_ref().unwrap()).unwrap().doc;
        assert!(
            rqlkit::reportql::validate_against_schema(&doc, &schema).is_empty(),
            "{}",
            rec.id
        );
    }
    assert_eq!(synthetic_corpus(&schema, 50, 1), corpus);
}

#[test]
fn corpus_files_round_trip() {
    let schema = shipped_schema();
    let corpus = synthetic_corpus(&schema, 12, 3);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("corpus.jsonl");
    save_corpus(&corpus, &path).unwrap();
    assert_eq!(load_corpus(&path).unwrap(), corpus);
}

#[test]
fn corpus_parsing_reports_line_numbers() {
    let text = "{\"id\":\"a\",\"report\":\"x\"}\n\n{\"id\":\"a\",\"report\":\"y\"}\n";
    let err = parse_corpus(text).unwrap_err().to_string();
    assert!(err.contains("line 3"), "{err}");
    let err = parse_corpus("{\"id\":\"a\",\"report\":\"x\",\"target\":\"liver {\"}\n")
        .unwrap_err()
        .to_string();
    assert!(err.contains("line 1"), "{err}");
}
