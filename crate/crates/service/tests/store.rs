use std::io::Write;

use cgmqa_core::data::{write_cgm_csv, CsvSchema};
use cgmqa_core::fixtures::two_week_fixture;
use cgmqa_service::{StoreError, SubjectStore};

#[test]
fn ingest_reports_rate_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let (series, _) = two_week_fixture();
    let src = dir.path().join("export.csv");
    write_cgm_csv(&series, &src).unwrap();

    let store = SubjectStore::create(dir.path().join("data")).unwrap();
    let summary = store.ingest(&src, "alice", &CsvSchema::default()).unwrap();
    assert_eq!(summary.rate_minutes, 5);
    assert_eq!(summary.rows, series.len());
    assert!(!summary.replaced);
    assert!(summary.missing_pct > 0.0 && summary.missing_pct < 100.0);
    assert_eq!(store.load("alice").unwrap().readings(), series.readings());

    let again = store.ingest(&src, "alice", &CsvSchema::default()).unwrap();
    assert!(again.replaced);
    assert_eq!(store.ids().unwrap(), ["alice"]);
    assert_eq!(store.load_all().unwrap()["alice"].rate_minutes, 5);
}

#[test]
fn ingest_rejects_empty_files_and_bad_ids() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("empty.csv");
    writeln!(std::fs::File::create(&src).unwrap(), "timestamp,glucose_mg_dl").unwrap();
    let store = SubjectStore::create(dir.path()).unwrap();
    assert!(matches!(
        store.ingest(&src, "bob", &CsvSchema::default()),
        Err(StoreError::Data { .. })
    ));
    assert!(matches!(store.path("../etc"), Err(StoreError::InvalidId(_))));
    assert!(matches!(store.load("carol"), Err(StoreError::UnknownSubject(_))));
}

#[test]
fn open_requires_an_existing_directory() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(SubjectStore::open(dir.path().join("missing")), Err(StoreError::MissingDir(_))));
    assert!(SubjectStore::open(dir.path()).unwrap().ids().unwrap().is_empty());
}
