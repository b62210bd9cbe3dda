mod common;

use std::fs;

use stamp_core::embedding::{load_with_cache, LoadOptions};
use stamp_core::grouping::{detect_sensitive_spans_rulebased, Gazetteers};
use stamp_core::pipeline::{self, inspect, read_jsonl, write_jsonl, OutputRecord, RunConfig, SEED_ENV};
use stamp_core::{load_text_embeddings, Document, EmbeddingStore, Error, GroupLabel, RuleBasedDetector};

const GLOVE: &str = "the 0.1 0.2 0.3\nalice 0.5 -0.1 0.9\nparis -0.4 0.4 0.2\nvisited 0.3 0.3 -0.6\n. 0.01 0.02 0.03\n";

#[test]
fn loads_with_and_without_header() {
    let dir = tempfile::tempdir().unwrap();
    let plain = dir.path().join("plain.txt");
    let headed = dir.path().join("headed.txt");
    fs::write(&plain, GLOVE).unwrap();
    fs::write(&headed, format!("5 3\n{GLOVE}")).unwrap();
    let a: EmbeddingStore<f64> = load_text_embeddings(&plain, LoadOptions::default()).unwrap();
    let b: EmbeddingStore<f64> = load_text_embeddings(&headed, LoadOptions::default()).unwrap();
    assert_eq!(a.vocab(), b.vocab());
    assert_eq!(a.matrix(), b.matrix());
    assert_eq!((a.len(), a.dim()), (5, 3));
    assert_eq!(a.token(1), "alice");
    let f: EmbeddingStore<f32> = load_text_embeddings(&plain, LoadOptions::default()).unwrap();
    assert_eq!(f.row(2), &[-0.4f32, 0.4, 0.2]);
}

#[test]
fn rejects_bad_files() {
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, body: &str| {
        let p = dir.path().join(name);
        fs::write(&p, body).unwrap();
        p
    };
    let zero = write("zero.txt", "a 1 2\nb 0 0\n");
    let err = load_text_embeddings::<f64>(&zero, LoadOptions::default()).unwrap_err();
    assert!(err.to_string().contains("zero-norm embedding"), "{err}");
    let dup = write("dup.txt", "a 1 2\nb 1 0\na 0 1\n");
    assert!(matches!(load_text_embeddings::<f64>(&dup, LoadOptions::default()), Err(Error::DuplicateToken { .. })));
    let ragged = write("ragged.txt", "a 1 2\nb 1 0 3\n");
    assert!(load_text_embeddings::<f64>(&ragged, LoadOptions::default()).is_err());
    let wrong_dim = LoadOptions { expected_dim: Some(4), ..LoadOptions::default() };
    let ok = write("ok.txt", "a 1 2\nb 1 0\n");
    assert!(matches!(load_text_embeddings::<f64>(&ok, wrong_dim), Err(Error::DimensionMismatch { .. })));
    assert!(load_text_embeddings::<f64>(dir.path().join("missing.txt"), LoadOptions::default()).is_err());
}

#[test]
fn lowercase_folding() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("e.txt");
    fs::write(&p, "Alice 1 0\nbob 0 1\n").unwrap();
    let exact: EmbeddingStore<f64> = load_text_embeddings(&p, LoadOptions::default()).unwrap();
    assert!(exact.contains("Alice") && !exact.contains("alice"));
    let folded: EmbeddingStore<f64> =
        load_text_embeddings(&p, LoadOptions { lowercase: true, ..LoadOptions::default() }).unwrap();
    assert!(folded.contains("ALICE") && folded.contains("alice"));
}

#[test]
fn binary_cache_round_trip_and_invalidation() {
    let dir = tempfile::tempdir().unwrap();
    let text = dir.path().join("e.txt");
    let cache = dir.path().join("e.cache");
    fs::write(&text, GLOVE).unwrap();
    let first: EmbeddingStore<f64> = load_with_cache(&text, &cache, LoadOptions::default()).unwrap();
    assert!(cache.exists());
    let second: EmbeddingStore<f64> = load_with_cache(&text, &cache, LoadOptions::default()).unwrap();
    assert_eq!(first.matrix(), second.matrix());
    assert_eq!(first.vocab(), second.vocab());
    // changing the source invalidates the cache
    fs::write(&text, "x 1 0 0\ny 0 1 0\n").unwrap();
    let third: EmbeddingStore<f64> = load_with_cache(&text, &cache, LoadOptions::default()).unwrap();
    assert_eq!(third.vocab(), ["x", "y"]);
    // a corrupt cache is rebuilt, not trusted
    fs::write(&cache, b"garbage").unwrap();
    let fourth: EmbeddingStore<f64> = load_with_cache(&text, &cache, LoadOptions::default()).unwrap();
    assert_eq!(fourth.vocab(), ["x", "y"]);
}

#[test]
fn config_file_and_seed_override() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("run.json");
    fs::write(
        &p,
        r#"{"mechanism":{"kind":"normalized_polar"},"strategy":{"kind":"ratio"},"base_eps":50,"seed":7}"#,
    )
    .unwrap();
    std::env::remove_var(SEED_ENV);
    let cfg = RunConfig::load(&p).unwrap();
    assert_eq!(cfg.seed, 7);
    assert_eq!(cfg.budgets().unwrap().as_array(), [100.0, 50.0, 200.0, 150.0]);
    std::env::set_var(SEED_ENV, "99");
    assert_eq!(RunConfig::load(&p).unwrap().seed, 99);
    std::env::set_var(SEED_ENV, "nope");
    assert!(RunConfig::load(&p).is_err());
    std::env::remove_var(SEED_ENV);

    assert!(RunConfig::from_json(r#"{"bogus": 1}"#).is_err());
    assert!(RunConfig::from_json(r#"{"tau": 2.0}"#).is_err());
    assert!(RunConfig::from_json(r#"{"mechanism":{"kind":"full_polar"}}"#).is_err());
    let fp = RunConfig::from_json(
        r#"{"mechanism":{"kind":"full_polar","radial_epsilon":1,"radial_sensitivity":2}}"#,
    )
    .unwrap();
    assert_eq!(fp.mechanism.radial_sensitivity, Some(2.0));
}

#[test]
fn jsonl_round_trip_and_inspect() {
    let dir = tempfile::tempdir().unwrap();
    let store = common::gaussian_store(30, 8, 3);
    let mut docs = common::random_corpus(&store, 5, 12, 4);
    docs.push(Document::new("empty", ""));
    docs[0].text.push_str(" unknownword");
    let input = dir.path().join("in.jsonl");
    write_jsonl(&docs, fs::File::create(&input).unwrap()).unwrap();
    let back: Vec<Document> = read_jsonl(&input).unwrap();
    assert_eq!(back, docs);

    let out = pipeline::privatize_corpus(&back, &store, &RuleBasedDetector::default(), &RunConfig::default()).unwrap();
    let out_path = dir.path().join("out.jsonl");
    write_jsonl(out.iter().map(OutputRecord::from), fs::File::create(&out_path).unwrap()).unwrap();
    let records: Vec<OutputRecord> = read_jsonl(&out_path).unwrap();
    assert_eq!(records.len(), 6);
    let summary = inspect(&records);
    assert_eq!(summary.documents, 6);
    assert_eq!(summary.tokens, 61);
    assert_eq!(summary.masked, 1);
    assert_eq!(records[0].tokens_private.last().unwrap(), "[MASK]");
    for r in &records {
        assert_eq!(r.tokens_private.len(), r.labels.len());
        assert_eq!(r.receipt.per_token_eps.len(), r.labels.len());
    }

    let bad = dir.path().join("bad.jsonl");
    fs::write(&bad, "{\"id\":\"a\",\"text\":\"x\"}\nnot json\n").unwrap();
    assert!(matches!(read_jsonl::<Document>(&bad), Err(Error::Parse { line: 2, .. })));
}

#[test]
fn gazetteer_file_drives_detection() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("places.txt");
    fs::write(&p, "new york\nparis\n\n").unwrap();
    let mut g = Gazetteers::new();
    g.load_file("location", &p).unwrap();
    let tokens: Vec<String> = "we flew from new york to paris".split(' ').map(String::from).collect();
    let spans = detect_sensitive_spans_rulebased(&tokens, &g);
    let covered: Vec<(usize, usize, &str)> = spans.iter().map(|s| (s.start, s.end, s.category.as_str())).collect();
    assert_eq!(covered, [(3, 5, "location"), (6, 7, "location")]);

    let store = common::gaussian_store(4, 3, 1);
    let labels = stamp_core::assign_groups(&tokens, &store, &RuleBasedDetector::new(g), None);
    assert_eq!(labels[3], GroupLabel::SensitiveUnimportant);
    assert_eq!(labels[0], GroupLabel::PublicUnimportant);
}
