use std::io::Cursor;
use std::path::{Path, PathBuf};

use clap::Parser;

use cgmqa_cli::{build_service, run, BackendArgs, Cli, ServeArgs};
use cgmqa_core::benchgen::{read_benchmark, read_runs, write_runs};
use cgmqa_core::data::write_cgm_csv;
use cgmqa_core::fixtures::two_week_fixture;
use cgmqa_service::SubjectStore;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

/// Runs the CLI in-process and returns stdout or the error chain.
fn cgmqa(args: &[&str], stdin: &str) -> Result<String, String> {
    let cli = Cli::try_parse_from(std::iter::once("cgmqa").chain(args.iter().copied())).map_err(|e| e.to_string())?;
    let mut out = Vec::new();
    let mut input = Cursor::new(stdin.as_bytes().to_vec());
    let result = run(cli, &mut out, &mut input);
    let text = String::from_utf8(out).unwrap();
    result.map(|_| text).map_err(|e| format!("{e:#}"))
}

/// A store holding the two-week fixture as `fx` and a synthetic subject `syn`.
fn store() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let (series, _) = two_week_fixture();
    SubjectStore::create(dir.path()).unwrap().save("fx", &series).unwrap();
    let d = dir.path().to_str().unwrap();
    cgmqa(
        &["--data-dir", d, "synth", "--subject", "syn", "--start", "2024-03-04", "--days", "21", "--missing-days", "4", "--seed", "7"],
        "",
    )
    .unwrap();
    dir
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

#[test]
fn ingest_summarizes_and_warns_on_overwrite() {
    let dir = tempfile::tempdir().unwrap();
    let (series, _) = two_week_fixture();
    let csv = dir.path().join("export.csv");
    write_cgm_csv(&series, &csv).unwrap();
    let data = p(dir.path(), "data");
    let csv = csv.to_str().unwrap();

    let first = cgmqa(&["--data-dir", &data, "ingest", csv, "--subject", "amy"], "").unwrap();
    assert!(first.starts_with("subject amy: "), "{first}");
    assert!(first.contains("rate 5 min"));
    assert!(!first.contains("warning"));
    let again = cgmqa(&["--data-dir", &data, "ingest", csv, "--subject", "amy"], "").unwrap();
    assert!(again.starts_with("warning: replaced existing subject `amy`"));

    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "timestamp,glucose_mg_dl\n").unwrap();
    assert!(cgmqa(&["--data-dir", &data, "ingest", empty.to_str().unwrap(), "--subject", "bo"], "").is_err());
}

#[test]
fn scripted_ask_matches_golden_output() {
    let dir = store();
    let d = dir.path().to_str().unwrap();
    let script = fixtures().join("ask_script.json");
    let trace = p(dir.path(), "trace.json");
    let out = cgmqa(
        &[
            "--data-dir", d, "ask", "--subject", "fx", "--reference", "2024-01-14 21:00", "--backend", "scripted",
            "--script", script.to_str().unwrap(), "--trace-out", &trace, "What was my TIR on 2024-01-10?",
        ],
        "",
    )
    .unwrap();
    let body: String = out.lines().filter(|l| !l.starts_with("trace: ")).map(|l| format!("{l}\n")).collect();
    let golden = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/ask_tir.txt")).unwrap();
    assert_eq!(body, golden);
    assert!(out.ends_with(&format!("trace: {trace}\n")));
    let saved: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&trace).unwrap()).unwrap();
    assert_eq!(saved["tasks"][0]["tool_calls"][0]["call"]["name"], "extract_features_json");
}

#[test]
fn interactive_ask_prompts_once() {
    let dir = store();
    let d = dir.path().to_str().unwrap();
    let out = cgmqa(
        &[
            "--data-dir", d, "ask", "--subject", "fx", "--reference", "2024-01-14 09:00", "--interactive",
            "--trace-out", &p(dir.path(), "t.json"), "What is the SD of my glucose around dawn?",
        ],
        "4 AM to 6 AM on 2024-01-10\n",
    )
    .unwrap();
    assert_eq!(out.matches("clarify: ").count(), 1, "{out}");
    assert!(out.contains("period: "));
}

#[test]
fn ablation_trace_has_no_input_processor_record() {
    let dir = store();
    let d = dir.path().to_str().unwrap();
    let trace = p(dir.path(), "ablation.json");
    cgmqa(
        &[
            "--data-dir", d, "ask", "--subject", "fx", "--reference", "2024-01-14 21:00", "--no-input-processor",
            "--trace-out", &trace, "What's my TIR this week?",
        ],
        "",
    )
    .unwrap();
    let saved: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&trace).unwrap()).unwrap();
    assert!(saved["refined"].is_null());
    assert!(saved["layer_latency_ms"].get("input_processor").is_none());
    assert!(saved["layer_latency_ms"].get("router").is_some());
}

#[test]
fn failed_ask_attributes_the_layer_and_keeps_the_trace() {
    let dir = store();
    let d = dir.path().to_str().unwrap();
    let script = dir.path().join("empty_script.json");
    std::fs::write(&script, "[]").unwrap();
    let trace = p(dir.path(), "fail.json");
    let err = cgmqa(
        &["--data-dir", d, "ask", "--subject", "fx", "--backend", "scripted", "--script", script.to_str().unwrap(), "--trace-out", &trace, "hi"],
        "",
    )
    .unwrap_err();
    assert!(err.starts_with("input_processor failed"), "{err}");
    assert!(Path::new(&trace).exists());
}

#[test]
fn generation_is_deterministic_and_runs_round_trip() {
    let dir = store();
    let d = dir.path().to_str().unwrap();
    let (a, b) = (p(dir.path(), "a.jsonl"), p(dir.path(), "b.jsonl"));
    let gen = |out: &str| {
        cgmqa(&["--data-dir", d, "bench-generate", "--subjects", "syn", "-n", "30", "--seed", "11", "--out", out], "").unwrap()
    };
    let msg = gen(&a);
    assert!(msg.starts_with("wrote 30 items"), "{msg}");
    gen(&b);
    let bytes = std::fs::read(&a).unwrap();
    assert_eq!(bytes, std::fs::read(&b).unwrap());
    assert_eq!(String::from_utf8(bytes).unwrap().lines().count(), 31);

    let runs = p(dir.path(), "runs.jsonl");
    let summary = cgmqa(
        &["--data-dir", d, "bench-run", "--benchmark", &a, "--backend", "aligned", "--jobs", "4", "--keep-traces", "--out", &runs],
        "",
    )
    .unwrap();
    assert!(summary.starts_with("ran 30 items: 30 ok, 0 failed"), "{summary}");
    assert!(summary.contains("privacy: 0 raw readings"));

    let report = cgmqa(&["eval", "--benchmark", &a, "--runs", &runs, "--latency", "--readability"], "").unwrap();
    assert!(report.contains("P=1.0000 R=1.0000 F1=1.0000 value_acc=1.0000"), "{report}");
    assert!(report.contains("bypass violations: 0"));
    assert!(report.contains("latency (s)"));
    assert!(report.contains("median="));
    assert!(report.contains("p95="));
    assert!(report.contains("readability"));

    // rerun: identical apart from wall-clock fields
    let runs2 = p(dir.path(), "runs2.jsonl");
    cgmqa(&["--data-dir", d, "bench-run", "--benchmark", &a, "--backend", "aligned", "--out", &runs2], "").unwrap();
    let strip = |path: &str| {
        let mut recs = read_runs(std::fs::File::open(path).unwrap()).unwrap();
        for r in &mut recs {
            r.latency_ms = 0.0;
            r.layer_latency_ms.clear();
            r.trace = None;
        }
        recs
    };
    assert_eq!(strip(&runs), strip(&runs2));
}

#[test]
fn failing_item_is_recorded_and_run_continues() {
    let dir = store();
    let d = dir.path().to_str().unwrap();
    let bench = p(dir.path(), "bench.jsonl");
    cgmqa(&["--data-dir", d, "bench-generate", "--subjects", "syn", "-n", "5", "--seed", "3", "--out", &bench], "").unwrap();
    let mut items = read_benchmark(Path::new(&bench)).unwrap();
    items[2].subject_id = "ghost".into();
    cgmqa_core::benchgen::write_benchmark(&items, Path::new(&bench)).unwrap();
    let runs = p(dir.path(), "runs.jsonl");
    let out = cgmqa(&["--data-dir", d, "bench-run", "--benchmark", &bench, "--backend", "aligned", "--out", &runs], "").unwrap();
    assert!(out.starts_with("ran 5 items: 4 ok, 1 failed"), "{out}");
    assert!(out.contains(&format!("{} [setup] no data loaded for subject `ghost`", items[2].id)));
}

#[test]
fn layer_one_eval_on_a_hand_matrix() {
    let dir = store();
    let d = dir.path().to_str().unwrap();
    let bench = p(dir.path(), "bench.jsonl");
    cgmqa(
        &["--data-dir", d, "bench-generate", "--subjects", "syn", "-n", "10", "--mix", "template=0.6,unanswerable=0.4", "--seed", "5", "--out", &bench],
        "",
    )
    .unwrap();
    let runs = p(dir.path(), "runs.jsonl");
    cgmqa(&["--data-dir", d, "bench-run", "--benchmark", &bench, "--backend", "aligned", "--out", &runs], "").unwrap();
    let items = read_benchmark(Path::new(&bench)).unwrap();
    let mut recs = read_runs(std::fs::File::open(&runs).unwrap()).unwrap();
    // tp 4, fn 2, fp 1, tn 3
    let (mut flipped_pos, mut flipped_neg) = (0, 0);
    for (item, r) in items.iter().zip(&mut recs) {
        if item.is_answerable && flipped_pos < 2 {
            r.predicted_answerable = Some(false);
            r.tool_calls.clear();
            flipped_pos += 1;
        } else if !item.is_answerable && flipped_neg < 1 {
            r.predicted_answerable = Some(true);
            flipped_neg += 1;
        }
    }
    write_runs(&recs, std::fs::File::create(&runs).unwrap()).unwrap();
    let report = cgmqa(&["eval", "--benchmark", &bench, "--runs", &runs, "--layer", "1"], "").unwrap();
    assert!(report.contains("n=10    acc=0.7000 P=0.8000 R=0.6667 F1=0.7273"), "{report}");
    assert!(!report.contains("layer 2"));
}

#[test]
fn eval_rejects_runs_for_unknown_items() {
    let dir = store();
    let d = dir.path().to_str().unwrap();
    let bench = p(dir.path(), "bench.jsonl");
    cgmqa(&["--data-dir", d, "bench-generate", "--subjects", "syn", "-n", "3", "--out", &bench], "").unwrap();
    let runs = p(dir.path(), "runs.jsonl");
    cgmqa(&["--data-dir", d, "bench-run", "--benchmark", &bench, "--backend", "aligned", "--out", &runs], "").unwrap();
    let mut recs = read_runs(std::fs::File::open(&runs).unwrap()).unwrap();
    recs[0].item_id = "item-99999".into();
    write_runs(&recs, std::fs::File::create(&runs).unwrap()).unwrap();
    let err = cgmqa(&["eval", "--benchmark", &bench, "--runs", &runs], "").unwrap_err();
    assert!(err.contains("item-99999"), "{err}");
}

#[test]
fn eval_with_a_scripted_judge_reports_agreement() {
    let dir = store();
    let d = dir.path().to_str().unwrap();
    let bench = p(dir.path(), "bench.jsonl");
    cgmqa(&["--data-dir", d, "bench-generate", "--subjects", "syn", "-n", "4", "--mix", "template=1", "--out", &bench], "").unwrap();
    let runs = p(dir.path(), "runs.jsonl");
    cgmqa(&["--data-dir", d, "bench-run", "--benchmark", &bench, "--backend", "aligned", "--out", &runs], "").unwrap();
    let judge = fixtures().join("judge_script.json");
    let report = cgmqa(
        &["eval", "--benchmark", &bench, "--runs", &runs, "--judge", "scripted", "--judge-script", judge.to_str().unwrap()],
        "",
    )
    .unwrap();
    assert!(report.contains("judge agreement over 4 items"), "{report}");
}

#[test]
fn config_file_supplies_defaults() {
    let dir = store();
    let cfg = dir.path().join("cgmqa.toml");
    std::fs::write(
        &cfg,
        format!("data_dir = {:?}\n\n[vague_terms]\n\"sunrise\" = \"05:00-07:00\"\n", dir.path().to_str().unwrap()),
    )
    .unwrap();
    let out = cgmqa(
        &[
            "--config", cfg.to_str().unwrap(), "ask", "--subject", "fx", "--reference", "2024-01-14 21:00",
            "--trace-out", &p(dir.path(), "t.json"), "What was my mean glucose at sunrise on 2024-01-10?",
        ],
        "",
    )
    .unwrap();
    assert!(out.contains("05:00"), "{out}");

    std::fs::write(&cfg, "colour = \"blue\"\n").unwrap();
    let err = cgmqa(&["--config", cfg.to_str().unwrap(), "ask", "--subject", "fx", "q"], "").unwrap_err();
    assert!(err.contains("parsing"), "{err}");
}

#[test]
fn serve_rejects_a_bad_data_dir() {
    let args = || ServeArgs {
        host: None,
        port: Some(0),
        ui: None,
        reference: None,
        backend: BackendArgs {
            backend: None,
            script: None,
            prompts: None,
        },
    };
    assert!(build_service(None, Some("/nonexistent/cgmqa".into()), args()).is_err());
    let dir = store();
    let (_, addr) = build_service(None, Some(dir.path().to_path_buf()), args()).unwrap();
    assert!(addr.ip().is_loopback());
    let missing_ui = ServeArgs {
        ui: Some(dir.path().join("no-ui")),
        ..args()
    };
    assert!(build_service(None, Some(dir.path().to_path_buf()), missing_ui).is_err());
}
