use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use desatkit::ingest::write_trace_csv;
use desatkit::synth::generate_trace;
use desatkit::{SampledTrace, SynthSpec};

fn desatkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_desatkit"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("JSON on stdout")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn analyze_reports_odi_of_clean_synthetic_trace() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        seed: 4,
        n_subjects: 1,
        event_rate_range: [3.0, 3.0],
        ..SynthSpec::default()
    };
    let (trace, truth) = generate_trace(0, &spec).unwrap();
    assert_eq!(truth.events.len(), 24);
    let csv = dir.path().join("trace.csv");
    write_trace_csv(&trace, &csv).unwrap();
    let events = dir.path().join("events.csv");

    let out = desatkit(&["analyze", path(&csv), "--events-csv", path(&events)]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report = json(&out);
    assert_eq!(report["odi"].as_f64(), Some(3.0));
    assert_eq!(report["n_events"].as_u64(), Some(24));
    assert_eq!(report["valid_duration"].as_f64(), Some(28800.0));
    assert_eq!(report["schema"], "desatkit/1");
    let lines = fs::read_to_string(&events).unwrap().lines().count();
    assert_eq!(lines, 25);
}

#[test]
fn analyze_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.csv");
    fs::write(&empty, "").unwrap();
    assert_eq!(desatkit(&["analyze", path(&empty)]).status.code(), Some(2));

    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "t_s,spo2_pct\n0,97\n1,97\n2,105\n").unwrap();
    let out = desatkit(&["analyze", path(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 4"));

    let short = dir.path().join("short.csv");
    write_trace_csv(&SampledTrace::from_values(&[97.0; 600]).unwrap(), &short).unwrap();
    let out = desatkit(&["analyze", path(&short)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ODI undefined"));
}

#[test]
fn analyze_flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    // one 4% dip of 10 s in an hour
    let mut v = vec![97.0; 3600];
    for x in &mut v[100..110] {
        *x = 93.0;
    }
    let csv = dir.path().join("t.csv");
    write_trace_csv(&SampledTrace::from_values(&v).unwrap(), &csv).unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "[detect]\ndrop_threshold = 5.0\n").unwrap();

    let with_file = json(&desatkit(&["analyze", path(&csv), "--config", path(&cfg)]));
    assert_eq!(with_file["n_events"].as_u64(), Some(0));
    let overridden = json(&desatkit(&[
        "analyze",
        path(&csv),
        "--config",
        path(&cfg),
        "--drop-pct",
        "3",
    ]));
    assert_eq!(overridden["n_events"].as_u64(), Some(1));
    let longer = json(&desatkit(&["analyze", path(&csv), "--min-dur-s", "10"]));
    assert_eq!(longer["n_events"].as_u64(), Some(0));
}

#[test]
fn cohort_with_one_subject_is_degenerate() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("a.csv");
    write_trace_csv(&SampledTrace::from_values(&[97.0; 3600]).unwrap(), &csv).unwrap();
    let manifest = dir.path().join("m.json");
    fs::write(
        &manifest,
        r#"{"subjects": [{"id": "S01", "ahi_ref": 20, "traces": {"fingertip": "a.csv"}}]}"#,
    )
    .unwrap();
    let out = desatkit(&["cohort", path(&manifest)]);
    assert_eq!(out.status.code(), Some(3));
    let report = json(&out);
    let cells = report["screening_matrix"].as_array().unwrap();
    // every configured site x cutoff, none usable
    assert_eq!(cells.len(), 9);
    assert!(cells.iter().all(|c| c["status"] == "degenerate"));
}

#[test]
fn synth_then_cohort_writes_report_and_exports() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = desatkit(&[
        "synth",
        "--seed",
        "42",
        "--n-subjects",
        "10",
        "--duration-s",
        "7200",
        "--out-dir",
        path(&data),
        "--jobs",
        "2",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(fs::read_dir(data.join("traces")).unwrap().count(), 30);

    let reports = dir.path().join("reports");
    let out = desatkit(&[
        "cohort",
        path(&data.join("manifest.json")),
        "--cutoffs",
        "15",
        "--site",
        "fingertip,wrist",
        "--out-dir",
        path(&reports),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(reports.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["schema"], "desatkit/1");
    assert_eq!(report["n_subjects"], 10);
    assert_eq!(report["screening_matrix"].as_array().unwrap().len(), 2);
    for name in [
        "roc_fingertip_ahi15.csv",
        "scatter_fingertip.csv",
        "scatter_wrist.csv",
    ] {
        assert!(reports.join(name).exists(), "{name}");
    }
    let roc = fs::read_to_string(reports.join("roc_fingertip_ahi15.csv")).unwrap();
    assert!(roc.starts_with("threshold,fpr,tpr\n"));
}

#[test]
fn calibrate_and_roc_on_scores_file() {
    let dir = tempfile::tempdir().unwrap();
    let scores = dir.path().join("scores.csv");
    fs::write(
        &scores,
        "subject_id,score,label\nA,1,0\nB,2,0\nC,10,1\nD,11,1\n",
    )
    .unwrap();

    let cal = desatkit(&["calibrate", path(&scores)]);
    assert!(cal.status.success());
    let v = json(&cal);
    assert_eq!(v["threshold"].as_f64(), Some(6.0));
    assert_eq!(v["objective"].as_f64(), Some(2.0));
    assert_eq!(v["metrics"]["sensitivity"].as_f64(), Some(100.0));

    let roc = desatkit(&["roc", path(&scores)]);
    assert!(roc.status.success());
    let text = String::from_utf8(roc.stdout).unwrap();
    assert!(text.starts_with("threshold,fpr,tpr\n11,0,0\n"), "{text}");
    assert!(String::from_utf8_lossy(&roc.stderr).contains("auc 1.000000"));

    let one_class = dir.path().join("pos.csv");
    fs::write(&one_class, "subject_id,score,label\nA,1,1\nB,2,true\n").unwrap();
    assert_eq!(
        desatkit(&["calibrate", path(&one_class)]).status.code(),
        Some(3)
    );
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(desatkit(&["cohort"]).status.code(), Some(2));
    assert_eq!(desatkit(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(desatkit(&["--help"]).status.code(), Some(0));
}
