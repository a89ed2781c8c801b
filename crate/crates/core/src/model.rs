//! Labels, AdaBoost over decision stumps, baselines and the modified hold-out
//! cross validation.
//!
//! LOW performers are the positive class throughout: precision and recall
//! measure how well struggling students are flagged.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Read;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureTable;
use crate::ingest::{BaseEvent, RawEvent};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Label {
    High,
    Low,
}

impl Label {
    /// +1 for HIGH, -1 for LOW.
    pub fn sign(self) -> f64 {
        match self {
            Label::High => 1.0,
            Label::Low => -1.0,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::High => "HIGH",
            Label::Low => "LOW",
        })
    }
}

/// Per-assignment grades in (0, 1), one row per subject. Column order is the
/// course's assignment order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradeBook {
    pub assignments: Vec<String>,
    pub grades: BTreeMap<String, Vec<f64>>,
}

impl GradeBook {
    /// Reads `SubjectID,<A1>,<A2>,...`. Empty cells count as 0.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(input);
        let headers = reader.headers()?.clone();
        let subject_col = headers
            .iter()
            .position(|h| h.trim() == "SubjectID")
            .ok_or_else(|| Error::Format("SubjectID column absent".into()))?;
        let grade_cols: Vec<usize> = (0..headers.len()).filter(|&i| i != subject_col).collect();
        if grade_cols.is_empty() {
            return Err(Error::Format("label file has no grade columns".into()));
        }
        let assignments = grade_cols
            .iter()
            .map(|&i| headers[i].trim().to_string())
            .collect();
        let mut grades = BTreeMap::new();
        for record in reader.records() {
            let record = record?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            let row = grade_cols
                .iter()
                .map(|&i| {
                    let cell = record.get(i).unwrap_or("").trim();
                    if cell.is_empty() {
                        return Ok(0.0);
                    }
                    cell.parse::<f64>()
                        .ok()
                        .filter(|g| g.is_finite())
                        .ok_or_else(|| Error::Row {
                            line,
                            message: format!("bad grade `{cell}`"),
                        })
                })
                .collect::<Result<Vec<f64>>>()?;
            let subject = record[subject_col].trim().to_string();
            if grades.insert(subject.clone(), row).is_some() {
                return Err(Error::Integrity(format!(
                    "duplicate subject `{subject}` in label file"
                )));
            }
        }
        Ok(GradeBook {
            assignments,
            grades,
        })
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(
            std::iter::once("SubjectID").chain(self.assignments.iter().map(String::as_str)),
        )?;
        for (subject, row) in &self.grades {
            w.write_record(
                std::iter::once(subject.clone()).chain(row.iter().map(|g| g.to_string())),
            )?;
        }
        w.flush()?;
        Ok(())
    }

    /// Course grade: mean over all assignments.
    pub fn final_grades(&self) -> BTreeMap<String, f64> {
        self.grades
            .iter()
            .map(|(s, g)| (s.clone(), g.iter().sum::<f64>() / g.len() as f64))
            .collect()
    }

    pub fn subjects(&self) -> Vec<String> {
        self.grades.keys().cloned().collect()
    }
}

/// Labels subjects by comparison with the median grade. Subjects tied with
/// the median are visited in subject-id order and each joins the currently
/// smaller group (HIGH when equal), which keeps the split balanced. Even a
/// set of identical grades is split this way.
pub fn median_split(grades: &BTreeMap<String, f64>) -> Result<BTreeMap<String, Label>> {
    if grades.len() < 2 {
        return Err(Error::Precondition(
            "median split needs at least 2 graded subjects".into(),
        ));
    }
    let mut sorted: Vec<f64> = grades.values().copied().collect();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    };

    let mut labels = BTreeMap::new();
    let (mut high, mut low) = (0usize, 0usize);
    for (s, &g) in grades {
        if g > median {
            labels.insert(s.clone(), Label::High);
            high += 1;
        } else if g < median {
            labels.insert(s.clone(), Label::Low);
            low += 1;
        }
    }
    for (s, &g) in grades {
        if g == median {
            if high <= low {
                labels.insert(s.clone(), Label::High);
                high += 1;
            } else {
                labels.insert(s.clone(), Label::Low);
                low += 1;
            }
        }
    }
    Ok(labels)
}

/// Dense real-valued design matrix (rows = subjects), row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub subjects: Vec<String>,
    pub names: Vec<String>,
    pub values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn n_rows(&self) -> usize {
        self.subjects.len()
    }

    pub fn n_cols(&self) -> usize {
        self.names.len()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.n_cols() + col]
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.n_rows()).map(|r| self.get(r, col)).collect()
    }

    /// Rows for `subjects`, in that order.
    pub fn select_rows(&self, subjects: &[String]) -> Result<FeatureMatrix> {
        let index: HashMap<&str, usize> = self
            .subjects
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        let k = self.n_cols();
        let mut values = Vec::with_capacity(subjects.len() * k);
        for s in subjects {
            let r = *index
                .get(s.as_str())
                .ok_or_else(|| Error::NotFound(format!("subject `{s}` has no feature row")))?;
            values.extend_from_slice(&self.values[r * k..(r + 1) * k]);
        }
        Ok(FeatureMatrix {
            subjects: subjects.to_vec(),
            names: self.names.clone(),
            values,
        })
    }
}

impl From<&FeatureTable> for FeatureMatrix {
    fn from(t: &FeatureTable) -> Self {
        FeatureMatrix {
            subjects: t.subjects.clone(),
            names: t.columns.iter().map(|c| c.key()).collect(),
            values: t.values.iter().map(|&v| v as f64).collect(),
        }
    }
}

/// `h(x) = polarity` if `x > threshold`, else `-polarity`
/// (+1 = HIGH, -1 = LOW).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stump {
    pub feature: usize,
    pub name: String,
    pub threshold: f64,
    pub polarity: i8,
    pub alpha: f64,
}

impl Stump {
    pub fn vote(&self, x: f64) -> f64 {
        let side = if x > self.threshold { 1.0 } else { -1.0 };
        side * self.polarity as f64
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StumpModel {
    pub rounds: Vec<Stump>,
}

/// Stump errors closer than this are treated as ties.
const TIE_EPS: f64 = 1e-12;
/// Weight given to a stump with zero training error.
pub const PERFECT_ALPHA_CAP: f64 = 1e-10;

/// Best stump under sample weights. Candidate thresholds are one below the
/// column minimum (a constant vote) and each midpoint between consecutive
/// distinct values. Ties go to the lowest column, then the lowest threshold,
/// then polarity +1.
pub fn best_stump(
    x: &FeatureMatrix,
    y: &[Label],
    weights: &[f64],
) -> Option<(usize, f64, i8, f64)> {
    let per_column = par::map_range(x.n_cols(), |col| {
        best_stump_in_column(&x.column(col), y, weights)
    });
    let mut best: Option<(usize, f64, i8, f64)> = None;
    for (col, cand) in per_column.into_iter().enumerate() {
        let Some((threshold, polarity, err)) = cand else {
            continue;
        };
        if best.is_none_or(|b| err < b.3 - TIE_EPS) {
            best = Some((col, threshold, polarity, err));
        }
    }
    best
}

fn best_stump_in_column(values: &[f64], y: &[Label], weights: &[f64]) -> Option<(f64, i8, f64)> {
    if values.is_empty() {
        return None;
    }
    // weight per distinct value and class
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut distinct: Vec<(f64, f64, f64)> = Vec::new(); // (value, w_high, w_low)
    for &i in &order {
        let (wh, wl) = match y[i] {
            Label::High => (weights[i], 0.0),
            Label::Low => (0.0, weights[i]),
        };
        match distinct.last_mut() {
            Some(last) if last.0 == values[i] => {
                last.1 += wh;
                last.2 += wl;
            }
            _ => distinct.push((values[i], wh, wl)),
        }
    }
    let total_high: f64 = distinct.iter().map(|d| d.1).sum();
    let total_low: f64 = distinct.iter().map(|d| d.2).sum();

    let mut best: Option<(f64, i8, f64)> = None;
    let mut consider = |threshold: f64, high_below: f64, low_below: f64| {
        // polarity +1: above -> HIGH, below -> LOW
        let err_pos = high_below + (total_low - low_below);
        let err_neg = low_below + (total_high - high_below);
        for (polarity, err) in [(1i8, err_pos), (-1i8, err_neg)] {
            if best.is_none_or(|b| err < b.2 - TIE_EPS) {
                best = Some((threshold, polarity, err));
            }
        }
    };
    consider(distinct[0].0 - 1.0, 0.0, 0.0);
    let (mut high_below, mut low_below) = (0.0, 0.0);
    for w in distinct.windows(2) {
        high_below += w[0].1;
        low_below += w[0].2;
        consider((w[0].0 + w[1].0) / 2.0, high_below, low_below);
    }
    best
}

/// Discrete AdaBoost with decision stumps.
///
/// Stops early when a stump classifies the weighted sample perfectly (that
/// stump is kept with a capped weight) or when no stump beats chance.
pub fn train_adaboost(x: &FeatureMatrix, y: &[Label], rounds: usize) -> Result<StumpModel> {
    if x.n_rows() != y.len() {
        return Err(Error::Schema(format!(
            "{} rows but {} labels",
            x.n_rows(),
            y.len()
        )));
    }
    if y.len() < 2 || !y.contains(&Label::High) || !y.contains(&Label::Low) {
        return Err(Error::Precondition(
            "AdaBoost needs at least 2 subjects and both classes".into(),
        ));
    }
    let n = y.len();
    let mut weights = vec![1.0 / n as f64; n];
    let mut model = StumpModel::default();
    for _ in 0..rounds {
        let Some((feature, threshold, polarity, err)) = best_stump(x, y, &weights) else {
            break;
        };
        if err >= 0.5 - TIE_EPS {
            break;
        }
        let perfect = err <= TIE_EPS;
        let eps = err.max(PERFECT_ALPHA_CAP);
        let alpha = 0.5 * ((1.0 - eps) / eps).ln();
        let stump = Stump {
            feature,
            name: x.names[feature].clone(),
            threshold,
            polarity,
            alpha,
        };
        let mut total = 0.0;
        for (i, w) in weights.iter_mut().enumerate() {
            *w *= (-alpha * y[i].sign() * stump.vote(x.get(i, feature))).exp();
            total += *w;
        }
        for w in weights.iter_mut() {
            *w /= total;
        }
        model.rounds.push(stump);
        if perfect {
            break;
        }
    }
    Ok(model)
}

/// Real-valued ensemble score `sum_t alpha_t h_t(x)` per row.
pub fn margins(model: &StumpModel, x: &FeatureMatrix) -> Result<Vec<f64>> {
    let index: HashMap<&str, usize> = x
        .names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();
    let cols = model
        .rounds
        .iter()
        .map(|s| {
            index
                .get(s.name.as_str())
                .copied()
                .ok_or_else(|| Error::Schema(format!("feature `{}` missing from input", s.name)))
        })
        .collect::<Result<Vec<usize>>>()?;
    Ok((0..x.n_rows())
        .map(|r| {
            model
                .rounds
                .iter()
                .zip(&cols)
                .map(|(s, &c)| s.alpha * s.vote(x.get(r, c)))
                .sum()
        })
        .collect())
}

/// Sign of the ensemble score; a zero score predicts LOW.
pub fn predict(model: &StumpModel, x: &FeatureMatrix) -> Result<Vec<Label>> {
    Ok(margins(model, x)?
        .into_iter()
        .map(|m| if m > 0.0 { Label::High } else { Label::Low })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Accuracy, precision and recall with LOW as the positive class.
pub fn metrics(predicted: &[Label], actual: &[Label]) -> Result<Metrics> {
    if predicted.len() != actual.len() {
        return Err(Error::Precondition(format!(
            "{} predictions for {} labels",
            predicted.len(),
            actual.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::Precondition(
            "metrics of an empty prediction set".into(),
        ));
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0usize, 0usize, 0usize, 0usize);
    for (p, a) in predicted.iter().zip(actual) {
        match (p, a) {
            (Label::Low, Label::Low) => tp += 1,
            (Label::Low, Label::High) => fp += 1,
            (Label::High, Label::Low) => fn_ += 1,
            (Label::High, Label::High) => tn += 1,
        }
    }
    let ratio = |num: usize, den: usize| {
        if den == 0 {
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    Ok(Metrics {
        accuracy: ratio(tp + tn, predicted.len()),
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fn_),
    })
}

/// Predicts the training majority for every test subject; ties go to LOW.
pub fn baseline_majority(y_train: &[Label], n_test: usize) -> Result<Vec<Label>> {
    if y_train.is_empty() {
        return Err(Error::Precondition(
            "majority baseline needs training labels".into(),
        ));
    }
    let high = y_train.iter().filter(|&&l| l == Label::High).count();
    let label = if high * 2 > y_train.len() {
        Label::High
    } else {
        Label::Low
    };
    Ok(vec![label; n_test])
}

pub const N_FOLDS: usize = 10;

/// One rotation of the modified hold-out cross validation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub rotation: usize,
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub discarded: Vec<String>,
}

/// Shuffles subjects with `seed` and deals them round-robin into 10 folds.
/// Rotation `r` tests on fold `r`, discards fold `r + 1 (mod 10)` and trains
/// on the remaining eight.
pub fn make_folds(subjects: &[String], seed: u64) -> Result<(Vec<Fold>, BTreeMap<String, usize>)> {
    if subjects.len() < N_FOLDS {
        return Err(Error::Precondition(format!(
            "cross validation needs at least {N_FOLDS} subjects, got {}",
            subjects.len()
        )));
    }
    let mut shuffled = subjects.to_vec();
    shuffled.sort();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds: Vec<Vec<String>> = vec![Vec::new(); N_FOLDS];
    let mut assignment = BTreeMap::new();
    for (i, s) in shuffled.into_iter().enumerate() {
        assignment.insert(s.clone(), i % N_FOLDS);
        folds[i % N_FOLDS].push(s);
    }
    for f in &mut folds {
        f.sort();
    }
    let rotations = (0..N_FOLDS)
        .map(|r| {
            let discard = (r + 1) % N_FOLDS;
            let mut train: Vec<String> = (0..N_FOLDS)
                .filter(|&f| f != r && f != discard)
                .flat_map(|f| folds[f].iter().cloned())
                .collect();
            train.sort();
            Fold {
                rotation: r,
                train,
                test: folds[r].clone(),
                discarded: folds[discard].clone(),
            }
        })
        .collect();
    Ok((rotations, assignment))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub rotation: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub n_discarded: usize,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationResult {
    pub seed: u64,
    pub folds: Vec<FoldResult>,
    /// Macro average over rotations.
    pub aggregate: Metrics,
    pub fold_of_subject: BTreeMap<String, usize>,
}

/// Runs `fit_predict` on every rotation (in parallel with the `parallel`
/// feature) and macro-averages the per-rotation metrics.
///
/// `fit_predict` receives the fold and must return one label per test
/// subject, in `fold.test` order. It must only look at training subjects'
/// labels.
pub fn cross_validate<F>(
    labels: &BTreeMap<String, Label>,
    seed: u64,
    fit_predict: F,
) -> Result<EvaluationResult>
where
    F: Fn(&Fold) -> Result<Vec<Label>> + Sync + Send,
{
    let subjects: Vec<String> = labels.keys().cloned().collect();
    let (folds, fold_of_subject) = make_folds(&subjects, seed)?;
    let results = par::map(&folds, |fold| -> Result<FoldResult> {
        let predicted = fit_predict(fold)?;
        let actual: Vec<Label> = fold.test.iter().map(|s| labels[s]).collect();
        Ok(FoldResult {
            rotation: fold.rotation,
            n_train: fold.train.len(),
            n_test: fold.test.len(),
            n_discarded: fold.discarded.len(),
            metrics: metrics(&predicted, &actual)?,
        })
    });
    let mut folds = results.into_iter().collect::<Result<Vec<_>>>()?;
    folds.sort_by_key(|f| f.rotation);
    let k = folds.len() as f64;
    let aggregate = Metrics {
        accuracy: folds.iter().map(|f| f.metrics.accuracy).sum::<f64>() / k,
        precision: folds.iter().map(|f| f.metrics.precision).sum::<f64>() / k,
        recall: folds.iter().map(|f| f.metrics.recall).sum::<f64>() / k,
    };
    Ok(EvaluationResult {
        seed,
        folds,
        aggregate,
        fold_of_subject,
    })
}

/// Hand-crafted process features for the expert-rule baseline, plus the
/// grades of assignments before the last one in `assignments`.
///
/// Counts are taken on raw (uncollapsed) events. Block moves are
/// approximated by plain EDIT events. The time column is omitted when no
/// event carries a timestamp.
pub fn expert_features(
    raw: &[RawEvent],
    subjects: &[String],
    assignments: &[String],
    grades: &GradeBook,
) -> Result<FeatureMatrix> {
    #[derive(Default, Clone)]
    struct Acc {
        deletions: f64,
        moves: f64,
        runs: f64,
        minutes: f64,
        nodes: f64,
    }
    let index: HashMap<&str, usize> = subjects
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let mut acc = vec![Acc::default(); subjects.len()];
    let mut any_timestamp = false;

    for (start, end) in crate::ingest::group_ranges(raw) {
        let group = &raw[start..end];
        if !assignments.iter().any(|a| *a == group[0].assignment_id) {
            continue;
        }
        let Some(&row) = index.get(group[0].subject_id.as_str()) else {
            continue;
        };
        let a = &mut acc[row];
        for e in group {
            match BaseEvent::from_kind(&e.event_kind, e.edit_subtype.as_deref()) {
                Some(BaseEvent::EditDel) => a.deletions += 1.0,
                Some(BaseEvent::Edit) => a.moves += 1.0,
                Some(BaseEvent::Run) => a.runs += 1.0,
                _ => {}
            }
        }
        let times: Vec<i64> = group.iter().filter_map(|e| e.timestamp).collect();
        if let (Some(lo), Some(hi)) = (times.iter().min(), times.iter().max()) {
            any_timestamp = true;
            a.minutes += (hi - lo) as f64 / 60_000.0;
        }
        if let Some(n) = group.iter().rev().find_map(|e| e.node_metric) {
            a.nodes += n as f64;
        }
    }
    if !any_timestamp {
        log::warn!("no timestamps in the event log; the expert Time feature is omitted");
    }

    let prior: Vec<usize> = assignments
        .iter()
        .take(assignments.len().saturating_sub(1))
        .map(|a| {
            grades
                .assignments
                .iter()
                .position(|g| g == a)
                .ok_or_else(|| Error::Schema(format!("no grade column for assignment `{a}`")))
        })
        .collect::<Result<_>>()?;

    let mut names: Vec<String> = vec![
        "block_deletions".into(),
        "block_moves".into(),
        "code_runs".into(),
    ];
    if any_timestamp {
        names.push("time_minutes".into());
    }
    names.push("meaningful_nodes".into());
    names.extend(
        prior
            .iter()
            .map(|&i| format!("grade:{}", grades.assignments[i])),
    );

    let mut values = Vec::with_capacity(subjects.len() * names.len());
    for (row, s) in subjects.iter().enumerate() {
        let a = &acc[row];
        values.extend([a.deletions, a.moves, a.runs]);
        if any_timestamp {
            values.push(a.minutes);
        }
        values.push(a.nodes);
        let g = grades.grades.get(s);
        values.extend(prior.iter().map(|&i| g.map_or(0.0, |g| g[i])));
    }
    Ok(FeatureMatrix {
        subjects: subjects.to_vec(),
        names,
        values,
    })
}
