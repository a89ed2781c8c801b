use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn cdsm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cdsm"))
        .args(args)
        .output()
        .expect("failed to launch cdsm")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Small two-assignment dataset with one frequent and one dependent plant.
fn small_dataset(dir: &Path) -> (PathBuf, PathBuf) {
    let data = dir.join("data");
    let o = cdsm(&[
        "synth",
        "--out",
        s(&data),
        "--n-high",
        "15",
        "--n-low",
        "15",
        "--assignments",
        "A1,A2",
        "--length-mean",
        "80",
        "--length-spread",
        "5",
        "--plant",
        "FH@0.9,0.1:EDIT-PST VAR EDIT-PST VAR",
        "--plant",
        "DL@1,0,3:FILE EDIT-DEL FILE",
        "--seed",
        "3",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    (data.join("events.csv"), data.join("labels.csv"))
}

const FAST: &[&str] = &["--max-length", "4", "--rounds", "10"];

fn with_fast(mut args: Vec<&str>) -> Vec<&str> {
    args.extend_from_slice(FAST);
    args
}

#[test]
fn synth_writes_all_outputs() {
    let tmp = TempDir::new().unwrap();
    let (events, labels) = small_dataset(tmp.path());
    assert!(events.exists() && labels.exists());
    assert!(tmp.path().join("data/manifest.json").exists());
    let header = fs::read_to_string(&labels).unwrap();
    assert!(header.starts_with("SubjectID,A1,A2"));
}

#[test]
fn min_support_above_one_is_a_validation_error() {
    let tmp = TempDir::new().unwrap();
    let (events, labels) = small_dataset(tmp.path());
    let out = tmp.path().join("out");
    let o = cdsm(&[
        "mine",
        "--events",
        s(&events),
        "--labels",
        s(&labels),
        "--out",
        s(&out),
        "--min-support",
        "1.5",
    ]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("min-support"), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);
    assert!(!out.join("patterns.json").exists());
}

#[test]
fn missing_input_is_an_io_error() {
    let tmp = TempDir::new().unwrap();
    let missing = tmp.path().join("nope.csv");
    let o = cdsm(&["ingest", "--events", s(&missing), "--out", s(tmp.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope.csv"));
    assert_eq!(stderr(&o).trim_end().lines().count(), 1);
}

#[test]
fn usage_errors_exit_one_with_one_line() {
    for args in [
        vec!["mine", "--bogus"],
        vec!["frobnicate"],
        vec!["mine", "--scheme", "fancy"],
        vec!["mine"],
    ] {
        let o = cdsm(&args);
        assert_eq!(o.status.code(), Some(1), "{args:?}");
        assert_eq!(
            stderr(&o).trim_end().lines().count(),
            1,
            "{args:?}: {}",
            stderr(&o)
        );
    }
}

#[test]
fn malformed_event_table_is_a_validation_error() {
    let tmp = TempDir::new().unwrap();
    let events = tmp.path().join("events.csv");
    fs::write(&events, "SubjectID,AssignmentID\nS1,A1\n").unwrap();
    let o = cdsm(&["ingest", "--events", s(&events), "--out", s(tmp.path())]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn config_file_is_read_and_flags_win() {
    let tmp = TempDir::new().unwrap();
    let (events, labels) = small_dataset(tmp.path());
    let config = tmp.path().join("cdsm.conf");
    fs::write(
        &config,
        format!(
            "# test config\nevents = {}\nlabels = {}\nmin-support = 2\nmax-length = 4\n",
            events.display(),
            labels.display()
        ),
    )
    .unwrap();
    let out = tmp.path().join("out");
    let o = cdsm(&["mine", "--config", s(&config), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("min-support"));

    let o = cdsm(&[
        "mine",
        "--config",
        s(&config),
        "--out",
        s(&out),
        "--min-support",
        "0.4",
        "--trial",
        "1",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let patterns: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("patterns.json")).unwrap()).unwrap();
    assert_eq!(patterns["params"]["mining"]["max_length"], 4);
    assert_eq!(patterns["params"]["mining"]["min_percentile_support"], 0.4);
    assert_eq!(patterns["assignments"].as_array().unwrap().len(), 1);

    fs::write(&config, "max-gap = lots\n").unwrap();
    let o = cdsm(&["mine", "--config", s(&config)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("max-gap"));
    fs::write(&config, "unknown-key = 1\n").unwrap();
    assert_eq!(
        cdsm(&["mine", "--config", s(&config)]).status.code(),
        Some(1)
    );
}

#[test]
fn report_top_fraction_writes_report_files() {
    let tmp = TempDir::new().unwrap();
    let (events, labels) = small_dataset(tmp.path());
    let out = tmp.path().join("out");
    let base = with_fast(vec![
        "--events",
        s(&events),
        "--labels",
        s(&labels),
        "--out",
        s(&out),
    ]);
    let o = cdsm(&[&["mine"], base.as_slice()].concat());
    assert!(o.status.success(), "{}", stderr(&o));
    let o = cdsm(&[&["report", "--top-fraction", "0.15"], base.as_slice()].concat());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("report.json").exists());
    let text = fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(text.contains("fraction 0.15"));
    let o = cdsm(&[&["report", "--top-fraction", "1.5"], base.as_slice()].concat());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("top-fraction"));
}

#[test]
fn pipeline_writes_per_fold_evaluation() {
    let tmp = TempDir::new().unwrap();
    let (events, labels) = small_dataset(tmp.path());
    let out = tmp.path().join("out");
    let args = with_fast(vec![
        "pipeline",
        "--trial",
        "1",
        "--scheme",
        "general",
        "--events",
        s(&events),
        "--labels",
        s(&labels),
        "--out",
        s(&out),
    ]);
    let o = cdsm(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.lines().any(|l| l.starts_with("M1 ")), "{stdout}");
    let eval: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("M1/evaluation.json")).unwrap()).unwrap();
    assert_eq!(eval["cdsm"]["folds"].as_array().unwrap().len(), 10);
    assert!(eval["expert"]["aggregate"]["accuracy"].is_number());
    assert!(!out.join("M2").exists());
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

#[test]
fn pipeline_equals_manual_stages() {
    let tmp = TempDir::new().unwrap();
    let (events, labels) = small_dataset(tmp.path());
    let auto = tmp.path().join("auto");
    let manual = tmp.path().join("manual");
    let common = with_fast(vec!["--labels", s(&labels), "--seed", "7"]);

    let o = cdsm(
        &[
            &[
                "pipeline",
                "--trial",
                "2",
                "--events",
                s(&events),
                "--out",
                s(&auto),
            ],
            common.as_slice(),
        ]
        .concat(),
    );
    assert!(o.status.success(), "{}", stderr(&o));

    let o = cdsm(
        &[
            &["ingest", "--events", s(&events), "--out", s(&manual)],
            common.as_slice(),
        ]
        .concat(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let seqs = manual.join("sequences.jsonl");
    for trial in ["1", "2"] {
        let dir = manual.join(format!("M{trial}"));
        let mut args = common.clone();
        args.extend(["--trial", trial, "--out", s(&dir)]);
        for (cmd, ev) in [
            ("mine", &seqs),
            ("featurize", &seqs),
            ("report", &seqs),
            ("train", &seqs),
            ("evaluate", &events),
        ] {
            let o = cdsm(&[&[cmd, "--events", s(ev)], args.as_slice()].concat());
            assert!(o.status.success(), "{cmd}: {}", stderr(&o));
        }
    }

    let auto_files = files_under(&auto);
    let manual_files = files_under(&manual);
    let expected: Vec<PathBuf> = auto_files
        .iter()
        .filter(|p| !p.starts_with("summary.json") && !p.starts_with("summary.txt"))
        .cloned()
        .collect();
    assert_eq!(expected, manual_files);
    for f in &manual_files {
        assert_eq!(
            fs::read(auto.join(f)).unwrap(),
            fs::read(manual.join(f)).unwrap(),
            "{}",
            f.display()
        );
    }
}

#[test]
fn evaluate_without_raw_events_skips_expert() {
    let tmp = TempDir::new().unwrap();
    let (events, labels) = small_dataset(tmp.path());
    let out = tmp.path().join("out");
    let o = cdsm(&["ingest", "--events", s(&events), "--out", s(&out)]);
    assert!(o.status.success());
    let seqs = out.join("sequences.jsonl");
    let args = with_fast(vec![
        "evaluate",
        "--events",
        s(&seqs),
        "--labels",
        s(&labels),
        "--out",
        s(&out),
        "--trial",
        "1",
    ]);
    let o = cdsm(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let eval: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("evaluation.json")).unwrap()).unwrap();
    assert!(eval["expert"].is_null());
}

#[test]
fn threads_flag_does_not_change_outputs() {
    let tmp = TempDir::new().unwrap();
    let (events, labels) = small_dataset(tmp.path());
    let mut files = Vec::new();
    for threads in ["1", "3"] {
        let out = tmp.path().join(format!("t{threads}"));
        let args = with_fast(vec![
            "mine",
            "--events",
            s(&events),
            "--labels",
            s(&labels),
            "--out",
            s(&out),
            "--threads",
            threads,
        ]);
        let o = cdsm(&args);
        assert!(o.status.success(), "{}", stderr(&o));
        files.push(fs::read(out.join("patterns.json")).unwrap());
    }
    assert_eq!(files[0], files[1]);
    assert_eq!(cdsm(&["mine", "--threads", "0"]).status.code(), Some(1));
}
