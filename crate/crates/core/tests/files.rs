use std::fs;

use forgery_ensemble::oracle::{generate, preset};
use forgery_ensemble::score_io::{
    read_json, read_manifest, read_score_file, read_scores, write_json, write_manifest, write_scores,
    ReadError, StoreError,
};

#[test]
fn files_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = preset("specialists").unwrap();
    cfg.samples_per_class = 10;
    let (manifest, scores) = generate(&cfg).unwrap();

    let mpath = dir.path().join("manifest.tsv");
    let spath = dir.path().join("scores.tsv");
    write_manifest(&manifest, fs::File::create(&mpath).unwrap()).unwrap();
    write_scores(&scores, fs::File::create(&spath).unwrap()).unwrap();

    let m = read_manifest(&mpath).unwrap();
    assert_eq!(m.to_canonical_string(), manifest.to_canonical_string());
    assert_eq!(read_score_file(&spath).unwrap(), scores);
    let store = read_scores(&spath, &m).unwrap();
    assert_eq!(store.sample_count(), m.len());
    assert!(store.coverage_gaps().is_empty());

    let cpath = dir.path().join("config.json");
    write_json(&cfg, fs::File::create(&cpath).unwrap()).unwrap();
    let back: forgery_ensemble::oracle::OracleConfig = read_json(&cpath).unwrap();
    assert_eq!(back, cfg);
}

#[test]
fn read_errors_name_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.tsv");
    assert!(matches!(read_manifest(&missing), Err(ReadError::Io { .. })));

    let bad = dir.path().join("bad.tsv");
    fs::write(&bad, "format\tfe-manifest\t9\n").unwrap();
    let err = read_manifest(&bad).unwrap_err();
    assert!(matches!(err, ReadError::Format { .. }));
    assert!(err.to_string().contains("bad.tsv"));
    assert!(err.to_string().contains("line 1"));
}

#[test]
fn scores_for_unknown_samples_are_a_store_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = preset("confident").unwrap();
    cfg.samples_per_class = 2;
    let (manifest, scores) = generate(&cfg).unwrap();
    cfg.samples_per_class = 1;
    let (smaller, _) = generate(&cfg).unwrap();
    let spath = dir.path().join("scores.tsv");
    fs::write(&spath, scores.to_canonical_string()).unwrap();
    assert!(read_scores(&spath, &manifest).is_ok());
    let err = read_scores(&spath, &smaller).unwrap_err();
    assert!(matches!(err, ReadError::Store { source: StoreError::UnknownSample { .. }, .. }));
}
