use cdsm::ingest::{categorize, categorize_with_summary, parse_progsnap2, Scheme, SchemeConfig};
use cdsm::model::median_split;
use cdsm::pipeline::{mine_trial, CdsmParams};
use cdsm::report::{build_report, locate_occurrences, Report};
use cdsm::seqmine::count_instance_support;
use cdsm::stats::{Correction, CorrectionScope, PatternClass};
use cdsm::synth::{generate, write_events_csv, PlantSpec, SynthConfig};

fn small(seed: u64, plants: Vec<PlantSpec>) -> SynthConfig {
    SynthConfig {
        n_high: 20,
        n_low: 20,
        assignments: vec!["A1".into(), "A2".into()],
        length_mean: 150.0,
        length_spread: 10.0,
        plants,
        seed,
        ..SynthConfig::default()
    }
}

#[test]
fn generated_events_round_trip_through_ingest() {
    let data = generate(&small(5, vec![])).unwrap();
    let mut csv = Vec::new();
    write_events_csv(&mut csv, &data.events).unwrap();
    let parsed = parse_progsnap2(csv.as_slice(), &SchemeConfig::default()).unwrap();
    assert_eq!(parsed, data.events);
    let (seqs, summary) = categorize_with_summary(&parsed, Scheme::General);
    assert_eq!(summary.dropped, 0);
    assert_eq!(seqs.len(), 40 * 2);
}

#[test]
fn null_datasets_rarely_yield_labeled_patterns_with_pooled_bh() {
    let mut params = CdsmParams::default();
    params.mining.max_length = 4;
    params.classify.correction = Correction::BenjaminiHochberg;
    params.classify.correction_scope = CorrectionScope::Trial;
    let mut with_discoveries = 0;
    for seed in 0..50 {
        let data = generate(&small(300 + seed, vec![])).unwrap();
        let seqs = categorize(&data.events, Scheme::General);
        let labels = median_split(&data.grades.final_grades()).unwrap();
        let mined = mine_trial(&data.grades.assignments, &seqs, &labels, &params).unwrap();
        let labeled = mined
            .iter()
            .flat_map(|m| &m.patterns)
            .any(|c| c.class != PatternClass::Discarded);
        with_discoveries += usize::from(labeled);
    }
    assert!(
        with_discoveries <= 5,
        "{with_discoveries} of 50 null seeds had discoveries"
    );
}

#[test]
fn report_rows_agree_with_mined_patterns() {
    let plants = vec![
        PlantSpec::frequent(
            "EDIT-PST VAR FILE EDIT-PST".parse().unwrap(),
            PatternClass::FH,
            0.9,
            0.1,
        ),
        PlantSpec::dependent(
            "EDIT-DEL FILE EDIT-DEL".parse().unwrap(),
            PatternClass::DL,
            1.0,
            0.0,
            3.0,
        ),
    ];
    let data = generate(&small(9, plants)).unwrap();
    let seqs = categorize(&data.events, Scheme::General);
    let labels = median_split(&data.grades.final_grades()).unwrap();
    let mut params = CdsmParams::default();
    params.mining.max_length = 4;
    let mined = mine_trial(&data.grades.assignments, &seqs, &labels, &params).unwrap();
    let rows: Vec<_> = mined
        .iter()
        .flat_map(|m| build_report(&m.assignment_id, &m.patterns, &m.groups))
        .collect();
    assert!(rows.iter().any(|r| r.class == PatternClass::FH));
    assert!(rows.iter().any(|r| r.class == PatternClass::DL));
    for r in rows
        .iter()
        .filter(|r| matches!(r.class, PatternClass::FH | PatternClass::FL))
    {
        assert_eq!(r.class.is_high(), r.perc_high > r.perc_low, "{r:?}");
    }
    let report = Report::new(rows, 0.15).unwrap();
    let top = &report.top[0];
    let assignment = &top.assignment_id;
    for seq in seqs.iter().filter(|s| &s.assignment_id == assignment) {
        let spans = locate_occurrences(
            &top.pattern,
            &seq.subject_id,
            assignment,
            &seqs,
            params.mining.max_gap,
        );
        let expected =
            count_instance_support(&top.pattern.events, &seq.events, params.mining.max_gap);
        match spans {
            Ok(spans) => assert_eq!(spans.len(), expected),
            Err(_) => assert_eq!(expected, 0),
        }
    }
}
