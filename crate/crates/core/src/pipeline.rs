//! End-to-end trial orchestration: per-assignment mining and classification,
//! feature construction, boosting and cross-validated evaluation against the
//! two baselines.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{build_feature_table, stack, Discretizer, FeatureTable};
use crate::ingest::{EventSequence, RawEvent};
use crate::model::{
    baseline_majority, cross_validate, expert_features, predict, train_adaboost, EvaluationResult,
    FeatureMatrix, GradeBook, Label, StumpModel,
};
use crate::seqmine::{collect_stats, mine_groups, FrequentPatternStats, MiningParams};
use crate::stats::{
    classify_all, classify_jointly, ClassifiedPattern, ClassifyParams, CorrectionScope, GroupSizes,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdsmParams {
    pub mining: MiningParams,
    pub classify: ClassifyParams,
    pub rounds: usize,
}

impl Default for CdsmParams {
    fn default() -> Self {
        CdsmParams {
            mining: MiningParams::default(),
            classify: ClassifyParams::default(),
            rounds: 50,
        }
    }
}

impl CdsmParams {
    pub fn validate(&self) -> Result<()> {
        self.mining.validate()?;
        self.classify.validate()?;
        if self.rounds == 0 {
            return Err(Error::invalid_param("rounds", "must be at least 1"));
        }
        Ok(())
    }
}

/// Classified frequent patterns of one assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinedAssignment {
    pub assignment_id: String,
    pub groups: GroupSizes,
    pub patterns: Vec<ClassifiedPattern>,
}

/// Frequent-pattern statistics of one assignment over the labeled subjects
/// that have a sequence for it, before classification.
pub fn gather_assignment(
    assignment_id: &str,
    sequences: &[EventSequence],
    labels: &BTreeMap<String, Label>,
    mining: &MiningParams,
) -> Result<(Vec<FrequentPatternStats>, GroupSizes)> {
    let mut high = Vec::new();
    let mut low = Vec::new();
    for s in sequences
        .iter()
        .filter(|s| s.assignment_id == assignment_id)
    {
        match labels.get(&s.subject_id) {
            Some(Label::High) => high.push(s.clone()),
            Some(Label::Low) => low.push(s.clone()),
            None => {}
        }
    }
    if high.is_empty() && low.is_empty() {
        return Err(Error::Precondition(format!(
            "no labeled sequences for assignment `{assignment_id}`"
        )));
    }
    let mut groups = GroupSizes::new(high.len(), low.len());
    groups.lengths = high
        .iter()
        .chain(&low)
        .map(|s| (s.subject_id.clone(), s.len()))
        .collect();

    let patterns = mine_groups(&high, &low, mining)?;
    log::debug!("{assignment_id}: {} frequent patterns", patterns.len());
    Ok((
        collect_stats(&patterns, &high, &low, mining.max_gap),
        groups,
    ))
}

/// Mines and classifies the patterns of one assignment.
pub fn mine_assignment(
    assignment_id: &str,
    sequences: &[EventSequence],
    labels: &BTreeMap<String, Label>,
    params: &CdsmParams,
) -> Result<MinedAssignment> {
    let (stats, groups) = gather_assignment(assignment_id, sequences, labels, &params.mining)?;
    let patterns = classify_all(stats, &groups, &params.classify);
    Ok(MinedAssignment {
        assignment_id: assignment_id.to_string(),
        groups,
        patterns,
    })
}

/// Mines every assignment of a trial. With [`CorrectionScope::Trial`] the
/// multiple-comparison family spans all of them.
pub fn mine_trial(
    assignments: &[String],
    sequences: &[EventSequence],
    labels: &BTreeMap<String, Label>,
    params: &CdsmParams,
) -> Result<Vec<MinedAssignment>> {
    if params.classify.correction_scope == CorrectionScope::Assignment {
        return assignments
            .iter()
            .map(|a| mine_assignment(a, sequences, labels, params))
            .collect();
    }
    let gathered = assignments
        .iter()
        .map(|a| gather_assignment(a, sequences, labels, &params.mining))
        .collect::<Result<Vec<_>>>()?;
    let parts = gathered
        .iter()
        .map(|(stats, groups)| (stats.clone(), groups))
        .collect();
    let classified = classify_jointly(parts, &params.classify);
    Ok(assignments
        .iter()
        .zip(gathered)
        .zip(classified)
        .map(|((a, (_, groups)), patterns)| MinedAssignment {
            assignment_id: a.clone(),
            groups,
            patterns,
        })
        .collect())
}

/// Stacked raw occurrence counts for `subjects` over every labeled pattern.
pub fn raw_features(
    mined: &[MinedAssignment],
    sequences: &[EventSequence],
    subjects: &[String],
    max_gap: usize,
) -> Result<FeatureTable> {
    let tables: Vec<FeatureTable> = mined
        .iter()
        .map(|m| build_feature_table(&m.assignment_id, &m.patterns, sequences, subjects, max_gap))
        .collect();
    if tables.is_empty() {
        return Ok(FeatureTable::empty(subjects.to_vec()));
    }
    Ok(stack(&tables)?.select_rows(subjects))
}

/// Everything needed to score new subjects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedCdsm {
    pub max_gap: usize,
    pub mined: Vec<MinedAssignment>,
    pub discretizer: Discretizer,
    pub model: StumpModel,
}

/// Fits the full CDSM model using only the subjects in `labels`.
pub fn fit_cdsm(
    assignments: &[String],
    sequences: &[EventSequence],
    labels: &BTreeMap<String, Label>,
    params: &CdsmParams,
) -> Result<FittedCdsm> {
    let mined = mine_trial(assignments, sequences, labels, params)?;
    let subjects: Vec<String> = labels.keys().cloned().collect();
    let raw = raw_features(&mined, sequences, &subjects, params.mining.max_gap)?;
    let discretizer = Discretizer::fit(&raw);
    let table = discretizer.apply(&raw)?;
    let y: Vec<Label> = subjects.iter().map(|s| labels[s]).collect();
    let model = train_adaboost(&FeatureMatrix::from(&table), &y, params.rounds)?;
    Ok(FittedCdsm {
        max_gap: params.mining.max_gap,
        mined,
        discretizer,
        model,
    })
}

pub fn predict_cdsm(
    fitted: &FittedCdsm,
    sequences: &[EventSequence],
    subjects: &[String],
) -> Result<Vec<Label>> {
    let raw = raw_features(&fitted.mined, sequences, subjects, fitted.max_gap)?;
    let table = fitted.discretizer.apply(&raw)?;
    predict(&fitted.model, &FeatureMatrix::from(&table))
}

/// Assignments used by trial `trial` (1-based): the first `trial` columns of
/// the grade book.
pub fn trial_assignments(grades: &GradeBook, trial: usize) -> Result<Vec<String>> {
    if trial == 0 || trial > grades.assignments.len() {
        return Err(Error::invalid_param(
            "trial",
            format!(
                "must be between 1 and {}, got {trial}",
                grades.assignments.len()
            ),
        ));
    }
    Ok(grades.assignments[..trial].to_vec())
}

fn restrict(labels: &BTreeMap<String, Label>, subjects: &[String]) -> BTreeMap<String, Label> {
    subjects.iter().map(|s| (s.clone(), labels[s])).collect()
}

/// Cross-validated CDSM. Mining, classification, discretization and boosting
/// are re-fit on the training folds of each rotation.
pub fn evaluate_cdsm(
    assignments: &[String],
    sequences: &[EventSequence],
    labels: &BTreeMap<String, Label>,
    params: &CdsmParams,
    seed: u64,
) -> Result<EvaluationResult> {
    cross_validate(labels, seed, |fold| {
        let fitted = fit_cdsm(
            assignments,
            sequences,
            &restrict(labels, &fold.train),
            params,
        )?;
        predict_cdsm(&fitted, sequences, &fold.test)
    })
}

pub fn evaluate_majority(labels: &BTreeMap<String, Label>, seed: u64) -> Result<EvaluationResult> {
    cross_validate(labels, seed, |fold| {
        let y: Vec<Label> = fold.train.iter().map(|s| labels[s]).collect();
        baseline_majority(&y, fold.test.len())
    })
}

/// Expert-rule baseline: boosted stumps over hand-crafted process features
/// and prior grades.
pub fn evaluate_expert(
    assignments: &[String],
    raw: &[RawEvent],
    grades: &GradeBook,
    labels: &BTreeMap<String, Label>,
    rounds: usize,
    seed: u64,
) -> Result<EvaluationResult> {
    let subjects: Vec<String> = labels.keys().cloned().collect();
    let x = expert_features(raw, &subjects, assignments, grades)?;
    cross_validate(labels, seed, |fold| {
        let y: Vec<Label> = fold.train.iter().map(|s| labels[s]).collect();
        let model = train_adaboost(&x.select_rows(&fold.train)?, &y, rounds)?;
        predict(&model, &x.select_rows(&fold.test)?)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub trial: usize,
    pub assignments: Vec<String>,
    pub cdsm: EvaluationResult,
    /// Absent when the raw event table was not available.
    pub expert: Option<EvaluationResult>,
    pub majority: EvaluationResult,
}

/// Evaluates CDSM and the baselines on trial `trial` with a shared fold
/// assignment. The expert baseline needs the raw events.
pub fn run_trial(
    trial: usize,
    raw: Option<&[RawEvent]>,
    sequences: &[EventSequence],
    grades: &GradeBook,
    labels: &BTreeMap<String, Label>,
    params: &CdsmParams,
    seed: u64,
) -> Result<TrialSummary> {
    params.validate()?;
    let assignments = trial_assignments(grades, trial)?;
    Ok(TrialSummary {
        trial,
        cdsm: evaluate_cdsm(&assignments, sequences, labels, params, seed)?,
        expert: raw
            .map(|raw| evaluate_expert(&assignments, raw, grades, labels, params.rounds, seed))
            .transpose()?,
        majority: evaluate_majority(labels, seed)?,
        assignments,
    })
}

/// Plain-text table with one row per trial and accuracy, precision and
/// recall for each method.
pub fn format_summary(trials: &[TrialSummary]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<6} | {:^20} | {:^20} | {:^20}",
        "Trial", "CDSM", "Expert Rule", "Majority"
    );
    let _ = writeln!(
        out,
        "{:<6} | {:>6} {:>6} {:>6} | {:>6} {:>6} {:>6} | {:>6} {:>6} {:>6}",
        "", "Acc", "Prec", "Rec", "Acc", "Prec", "Rec", "Acc", "Prec", "Rec"
    );
    let _ = writeln!(out, "{}", "-".repeat(75));
    for t in trials {
        let m = |e: &EvaluationResult| {
            format!(
                "{:>6.3} {:>6.3} {:>6.3}",
                e.aggregate.accuracy, e.aggregate.precision, e.aggregate.recall
            )
        };
        let _ = writeln!(
            out,
            "{:<6} | {} | {} | {}",
            format!("M{}", t.trial),
            m(&t.cdsm),
            t.expert
                .as_ref()
                .map_or_else(|| format!("{:>6} {:>6} {:>6}", "-", "-", "-"), m),
            m(&t.majority)
        );
    }
    out
}
