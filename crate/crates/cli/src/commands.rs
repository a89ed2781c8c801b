use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use cdsm::features::{Discretizer, FeatureTable};
use cdsm::ingest::{
    categorize_with_summary, parse_progsnap2, read_sequences_jsonl, write_sequences_jsonl,
    EventSequence, RawEvent,
};
use cdsm::model::{median_split, train_adaboost, FeatureMatrix, GradeBook, Label};
use cdsm::pipeline::{
    format_summary, mine_trial, raw_features, run_trial, trial_assignments, CdsmParams, FittedCdsm,
    MinedAssignment, TrialSummary,
};
use cdsm::report::{build_report, render_text, Report};
use cdsm::synth::{generate, write_events_csv, SynthConfig};

use crate::config::Settings;
use crate::Failure;

pub const SEQUENCES: &str = "sequences.jsonl";
pub const INGEST_SUMMARY: &str = "ingest_summary.json";
pub const PATTERNS: &str = "patterns.json";
pub const FEATURES_RAW: &str = "features_raw.csv";
pub const FEATURES: &str = "features.csv";
pub const DISCRETIZER: &str = "discretizer.json";
pub const MODEL: &str = "model.json";
pub const EVALUATION: &str = "evaluation.json";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TEXT: &str = "report.txt";

/// Output of `mine`: classified patterns of every assignment in the trial.
#[derive(Debug, Serialize, Deserialize)]
struct PatternsFile {
    trial: usize,
    params: CdsmParams,
    assignments: Vec<MinedAssignment>,
}

struct Events {
    raw: Option<Vec<RawEvent>>,
    sequences: Vec<EventSequence>,
}

fn open(path: &Path) -> Result<BufReader<File>, Failure> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Failure::io(path, e))
}

fn with_path(path: &Path) -> impl Fn(cdsm::Error) -> Failure + '_ {
    move |e| match Failure::from(e) {
        Failure::Usage(m) => Failure::Usage(format!("{}: {m}", path.display())),
        Failure::Io(m) => Failure::Io(format!("{}: {m}", path.display())),
    }
}

fn output(dir: &Path, name: &str) -> Result<(PathBuf, BufWriter<File>), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))?;
    let path = dir.join(name);
    let file = File::create(&path).map_err(|e| Failure::io(&path, e))?;
    Ok((path, BufWriter::new(file)))
}

fn finish(path: &Path, mut w: BufWriter<File>) -> Result<(), Failure> {
    w.flush().map_err(|e| Failure::io(path, e))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), Failure> {
    let (path, mut w) = output(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Failure::io(&path, e))?;
    w.write_all(b"\n").map_err(|e| Failure::io(&path, e))?;
    finish(&path, w)
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<(), Failure> {
    let (path, mut w) = output(dir, name)?;
    w.write_all(text.as_bytes())
        .map_err(|e| Failure::io(&path, e))?;
    finish(&path, w)
}

fn write_table(dir: &Path, name: &str, table: &FeatureTable) -> Result<(), Failure> {
    let (path, mut w) = output(dir, name)?;
    table.write_csv(&mut w).map_err(with_path(&path))?;
    finish(&path, w)
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    serde_json::from_reader(open(path)?)
        .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn load_events(settings: &Settings) -> Result<Events, Failure> {
    let path = settings.events()?;
    if path.extension().is_some_and(|e| e == "jsonl") {
        let sequences = read_sequences_jsonl(open(path)?).map_err(with_path(path))?;
        return Ok(Events {
            raw: None,
            sequences,
        });
    }
    let raw = parse_progsnap2(open(path)?, &settings.mapping).map_err(with_path(path))?;
    let (sequences, _) = categorize_with_summary(&raw, settings.scheme);
    Ok(Events {
        raw: Some(raw),
        sequences,
    })
}

fn load_grades(settings: &Settings) -> Result<(GradeBook, BTreeMap<String, Label>), Failure> {
    let path = settings.labels()?;
    let grades = GradeBook::read_csv(open(path)?).map_err(with_path(path))?;
    let labels = median_split(&grades.final_grades())?;
    Ok((grades, labels))
}

fn trial_of(settings: &Settings, grades: &GradeBook) -> usize {
    settings.trial.unwrap_or(grades.assignments.len())
}

fn ingest_stage(
    raw: &[RawEvent],
    settings: &Settings,
    dir: &Path,
) -> Result<Vec<EventSequence>, Failure> {
    let (sequences, summary) = categorize_with_summary(raw, settings.scheme);
    let (path, mut w) = output(dir, SEQUENCES)?;
    write_sequences_jsonl(&mut w, &sequences).map_err(with_path(&path))?;
    finish(&path, w)?;
    write_json(dir, INGEST_SUMMARY, &summary)?;
    println!(
        "ingest: {} rows, {} kept, {} dropped, {} sequences",
        summary.rows, summary.kept, summary.dropped, summary.sequences
    );
    Ok(sequences)
}

fn mine_stage(
    trial: usize,
    grades: &GradeBook,
    sequences: &[EventSequence],
    labels: &BTreeMap<String, Label>,
    settings: &Settings,
    dir: &Path,
) -> Result<PatternsFile, Failure> {
    settings.params.validate()?;
    let assignments = trial_assignments(grades, trial)?;
    let mined = mine_trial(&assignments, sequences, labels, &settings.params)?;
    let file = PatternsFile {
        trial,
        params: settings.params.clone(),
        assignments: mined,
    };
    write_json(dir, PATTERNS, &file)?;
    let labeled: usize = file
        .assignments
        .iter()
        .map(|m| {
            m.patterns
                .iter()
                .filter(|p| p.class != cdsm::stats::PatternClass::Discarded)
                .count()
        })
        .sum();
    println!(
        "mine: M{trial}, {} assignments, {labeled} labeled patterns",
        file.assignments.len()
    );
    Ok(file)
}

fn featurize_stage(
    patterns: &PatternsFile,
    sequences: &[EventSequence],
    labels: &BTreeMap<String, Label>,
    dir: &Path,
) -> Result<(Discretizer, FeatureTable), Failure> {
    let subjects: Vec<String> = labels.keys().cloned().collect();
    let raw = raw_features(
        &patterns.assignments,
        sequences,
        &subjects,
        patterns.params.mining.max_gap,
    )?;
    let discretizer = Discretizer::fit(&raw);
    let table = discretizer.apply(&raw)?;
    write_table(dir, FEATURES_RAW, &raw)?;
    write_json(dir, DISCRETIZER, &discretizer)?;
    write_table(dir, FEATURES, &table)?;
    println!(
        "featurize: {} subjects x {} features",
        table.n_rows(),
        table.n_cols()
    );
    Ok((discretizer, table))
}

fn train_stage(
    patterns: PatternsFile,
    discretizer: Discretizer,
    table: &FeatureTable,
    labels: &BTreeMap<String, Label>,
    settings: &Settings,
    dir: &Path,
) -> Result<(), Failure> {
    let y = table
        .subjects
        .iter()
        .map(|s| {
            labels.get(s).copied().ok_or_else(|| {
                Failure::Usage(format!("subject `{s}` in the feature table has no grade"))
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let model = train_adaboost(&FeatureMatrix::from(table), &y, settings.params.rounds)?;
    println!("train: {} boosting rounds kept", model.rounds.len());
    let fitted = FittedCdsm {
        max_gap: patterns.params.mining.max_gap,
        mined: patterns.assignments,
        discretizer,
        model,
    };
    write_json(dir, MODEL, &fitted)
}

fn evaluate_stage(
    trial: usize,
    events: &Events,
    grades: &GradeBook,
    labels: &BTreeMap<String, Label>,
    settings: &Settings,
    dir: &Path,
) -> Result<TrialSummary, Failure> {
    if events.raw.is_none() {
        log::warn!("raw events unavailable; skipping the expert-rule baseline");
    }
    let summary = run_trial(
        trial,
        events.raw.as_deref(),
        &events.sequences,
        grades,
        labels,
        &settings.params,
        settings.seed,
    )?;
    write_json(dir, EVALUATION, &summary)?;
    Ok(summary)
}

fn report_stage(patterns: &PatternsFile, settings: &Settings, dir: &Path) -> Result<(), Failure> {
    let rows = patterns
        .assignments
        .iter()
        .flat_map(|m| build_report(&m.assignment_id, &m.patterns, &m.groups))
        .collect();
    let report = Report::new(rows, settings.top_fraction)?;
    write_json(dir, REPORT_JSON, &report)?;
    write_text(dir, REPORT_TEXT, &render_text(&report))?;
    println!(
        "report: {} of {} labeled patterns in the top set",
        report.top.len(),
        report.rows.len()
    );
    Ok(())
}

pub fn ingest(settings: &Settings) -> Result<(), Failure> {
    let path = settings.events()?;
    let raw = parse_progsnap2(open(path)?, &settings.mapping).map_err(with_path(path))?;
    ingest_stage(&raw, settings, &settings.out).map(|_| ())
}

pub fn mine(settings: &Settings) -> Result<(), Failure> {
    settings.params.validate()?;
    let (grades, labels) = load_grades(settings)?;
    let events = load_events(settings)?;
    let trial = trial_of(settings, &grades);
    mine_stage(
        trial,
        &grades,
        &events.sequences,
        &labels,
        settings,
        &settings.out,
    )
    .map(|_| ())
}

pub fn featurize(settings: &Settings) -> Result<(), Failure> {
    let patterns: PatternsFile = read_json(&settings.out.join(PATTERNS))?;
    let (_, labels) = load_grades(settings)?;
    let events = load_events(settings)?;
    featurize_stage(&patterns, &events.sequences, &labels, &settings.out).map(|_| ())
}

pub fn train(settings: &Settings) -> Result<(), Failure> {
    settings.params.validate()?;
    let patterns: PatternsFile = read_json(&settings.out.join(PATTERNS))?;
    let discretizer: Discretizer = read_json(&settings.out.join(DISCRETIZER))?;
    let path = settings.out.join(FEATURES);
    let table = FeatureTable::read_csv(open(&path)?, true).map_err(with_path(&path))?;
    if table.columns != discretizer.columns {
        return Err(Failure::Usage(format!(
            "{}: columns do not match {DISCRETIZER}",
            path.display()
        )));
    }
    let (_, labels) = load_grades(settings)?;
    train_stage(
        patterns,
        discretizer,
        &table,
        &labels,
        settings,
        &settings.out,
    )
}

pub fn evaluate(settings: &Settings) -> Result<(), Failure> {
    settings.params.validate()?;
    let (grades, labels) = load_grades(settings)?;
    let events = load_events(settings)?;
    let trial = trial_of(settings, &grades);
    let summary = evaluate_stage(trial, &events, &grades, &labels, settings, &settings.out)?;
    print!("{}", format_summary(&[summary]));
    Ok(())
}

fn check_top_fraction(settings: &Settings) -> Result<(), Failure> {
    cdsm::report::top_fraction(&[], settings.top_fraction)?;
    Ok(())
}

pub fn report(settings: &Settings) -> Result<(), Failure> {
    check_top_fraction(settings)?;
    let patterns: PatternsFile = read_json(&settings.out.join(PATTERNS))?;
    report_stage(&patterns, settings, &settings.out)
}

pub fn synth(config: &SynthConfig, settings: &Settings) -> Result<(), Failure> {
    let data = generate(config)?;
    let dir = &settings.out;
    let (path, mut w) = output(dir, "events.csv")?;
    write_events_csv(&mut w, &data.events).map_err(with_path(&path))?;
    finish(&path, w)?;
    let (path, mut w) = output(dir, "labels.csv")?;
    data.grades.write_csv(&mut w).map_err(with_path(&path))?;
    finish(&path, w)?;
    write_json(dir, "manifest.json", &data.manifest)?;
    println!(
        "synth: {} subjects, {} assignments, {} events, {} plants",
        config.n_high + config.n_low,
        config.assignments.len(),
        data.events.len(),
        config.plants.len()
    );
    Ok(())
}

/// Directory holding the per-stage outputs of trial `trial` inside a
/// pipeline run.
pub fn trial_dir(out: &Path, trial: usize) -> PathBuf {
    out.join(format!("M{trial}"))
}

pub fn pipeline(settings: &Settings) -> Result<(), Failure> {
    settings.params.validate()?;
    check_top_fraction(settings)?;
    let (grades, labels) = load_grades(settings)?;
    let last = trial_of(settings, &grades);
    trial_assignments(&grades, last)?;
    let path = settings.events()?;
    let raw = parse_progsnap2(open(path)?, &settings.mapping).map_err(with_path(path))?;
    let sequences = ingest_stage(&raw, settings, &settings.out)?;
    let events = Events {
        raw: Some(raw),
        sequences,
    };
    let mut summaries = Vec::new();
    for trial in 1..=last {
        let dir = trial_dir(&settings.out, trial);
        let patterns = mine_stage(trial, &grades, &events.sequences, &labels, settings, &dir)?;
        let (discretizer, table) = featurize_stage(&patterns, &events.sequences, &labels, &dir)?;
        report_stage(&patterns, settings, &dir)?;
        train_stage(patterns, discretizer, &table, &labels, settings, &dir)?;
        summaries.push(evaluate_stage(
            trial, &events, &grades, &labels, settings, &dir,
        )?);
    }
    let table = format_summary(&summaries);
    write_json(&settings.out, "summary.json", &summaries)?;
    write_text(&settings.out, "summary.txt", &table)?;
    print!("{table}");
    Ok(())
}
