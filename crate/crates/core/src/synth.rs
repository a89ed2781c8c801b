//! Synthetic ProgSnap2 datasets with known labels and planted differential
//! patterns.
//!
//! Background events are drawn independently from a categorical distribution
//! over the eight base event types. Plants are inserted as contiguous runs at
//! uniform positions, so they match under any `max_gap`. Plants are written
//! in general (context-free) event types and positions in the manifest refer
//! to the run-collapsed general-scheme sequence.

use std::collections::BTreeMap;
use std::io::Write;

use rand::distr::weighted::WeightedIndex;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{
    BaseEvent, RawEvent, KIND_ADD_VARIABLE, KIND_CHANGE_CATEGORY, KIND_EDIT, KIND_RUN,
};
use crate::model::{GradeBook, Label};
use crate::seqmine::Pattern;
use crate::stats::PatternClass;

pub const CATEGORIES: [&str; 4] = ["motion", "pen", "control", "variables"];

/// One planted pattern.
///
/// For FH/FL plants `high` and `low` are the probabilities that a
/// sequence of that group contains the pattern. For DH/DL plants both groups
/// contain it with probability `containment`, and a containing sequence gets
/// `1 + Poisson(high)` (or `low`) copies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantSpec {
    pub pattern: Pattern,
    pub class: PatternClass,
    /// Assignments receiving the plant; empty means all of them.
    #[serde(default)]
    pub assignments: Vec<String>,
    pub high: f64,
    pub low: f64,
    #[serde(default = "one")]
    pub containment: f64,
}

fn one() -> f64 {
    1.0
}

impl PlantSpec {
    pub fn frequent(pattern: Pattern, class: PatternClass, high: f64, low: f64) -> Self {
        PlantSpec {
            pattern,
            class,
            assignments: Vec::new(),
            high,
            low,
            containment: 1.0,
        }
    }

    pub fn dependent(
        pattern: Pattern,
        class: PatternClass,
        containment: f64,
        high: f64,
        low: f64,
    ) -> Self {
        PlantSpec {
            pattern,
            class,
            assignments: Vec::new(),
            high,
            low,
            containment,
        }
    }

    pub fn in_assignments(mut self, assignments: &[&str]) -> Self {
        self.assignments = assignments.iter().map(|a| a.to_string()).collect();
        self
    }

    fn applies_to(&self, assignment: &str) -> bool {
        self.assignments.is_empty() || self.assignments.iter().any(|a| a == assignment)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_high: usize,
    pub n_low: usize,
    pub assignments: Vec<String>,
    /// Mean and standard deviation of the raw (pre-collapse) sequence length.
    pub length_mean: f64,
    pub length_spread: f64,
    /// Background weights in [`BaseEvent::ALL`] order.
    pub background: [f64; 8],
    pub plants: Vec<PlantSpec>,
    pub seed: u64,
}

impl Default for SynthConfig {
    /// About 100 subjects, five assignments and roughly 500 events per
    /// sequence after collapsing.
    fn default() -> Self {
        SynthConfig {
            n_high: 50,
            n_low: 50,
            assignments: (1..=5).map(|i| format!("A{i}")).collect(),
            length_mean: 580.0,
            length_spread: 50.0,
            background: [0.20, 0.15, 0.10, 0.05, 0.15, 0.10, 0.15, 0.10],
            plants: Vec::new(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid_param("synth", msg));
        if self.n_high == 0 || self.n_low == 0 {
            return bad("both groups need at least one subject".into());
        }
        if self.assignments.is_empty() {
            return bad("no assignments".into());
        }
        // written so that NaN fails every check
        let at_least = |x: f64, min: f64| x >= min;
        if !at_least(self.length_mean, 1.0) || !at_least(self.length_spread, 0.0) {
            return bad("length mean must be >= 1 and spread >= 0".into());
        }
        if self.background.iter().any(|&w| !at_least(w, 0.0))
            || self.background.iter().sum::<f64>() <= 0.0
        {
            return bad("background weights must be non-negative with a positive sum".into());
        }
        for p in &self.plants {
            if p.pattern.is_empty() {
                return bad("empty plant pattern".into());
            }
            if p.pattern.len() as f64 > self.length_mean {
                return bad(format!(
                    "plant `{}` is longer than the mean sequence length {}",
                    p.pattern, self.length_mean
                ));
            }
            if p.pattern.events.iter().any(|e| e.context.is_some()) {
                return bad(format!(
                    "plant `{}` must use general event types",
                    p.pattern
                ));
            }
            if p.pattern.events.windows(2).any(|w| w[0] == w[1]) {
                return bad(format!(
                    "plant `{}` has adjacent repeats and would not survive collapsing",
                    p.pattern
                ));
            }
            let prob = |x: f64| (0.0..=1.0).contains(&x);
            match p.class {
                PatternClass::FH | PatternClass::FL => {
                    if !prob(p.high) || !prob(p.low) {
                        return bad(format!(
                            "plant `{}`: containment probabilities must be in [0, 1]",
                            p.pattern
                        ));
                    }
                }
                PatternClass::DH | PatternClass::DL => {
                    if !prob(p.containment) || !at_least(p.high, 0.0) || !at_least(p.low, 0.0) {
                        return bad(format!(
                            "plant `{}`: containment must be in [0, 1] and rates >= 0",
                            p.pattern
                        ));
                    }
                }
                PatternClass::Discarded => return bad("plants must be FH, FL, DH or DL".into()),
            }
        }
        Ok(())
    }
}

/// Where one plant landed in one sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Insertion {
    pub plant: usize,
    pub subject_id: String,
    pub assignment_id: String,
    /// Start indices in the collapsed general-scheme sequence.
    pub positions: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: SynthConfig,
    pub groups: BTreeMap<String, Label>,
    pub insertions: Vec<Insertion>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub events: Vec<RawEvent>,
    pub grades: GradeBook,
    pub manifest: Manifest,
}

/// Generates one dataset. The same config (including seed) always yields
/// the same data.
pub fn generate(config: &SynthConfig) -> Result<SynthData> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.n_high + config.n_low;
    let width = n.to_string().len().max(3);
    let subjects: Vec<String> = (1..=n).map(|i| format!("S{i:0width$}")).collect();
    let mut labels: Vec<Label> = [
        vec![Label::High; config.n_high],
        vec![Label::Low; config.n_low],
    ]
    .concat();
    labels.shuffle(&mut rng);

    let background = WeightedIndex::new(config.background)
        .map_err(|e| Error::invalid_param("synth", e.to_string()))?;
    let length = Normal::new(config.length_mean, config.length_spread)
        .map_err(|e| Error::invalid_param("synth", e.to_string()))?;

    let mut events = Vec::new();
    let mut insertions = Vec::new();
    let mut grades = BTreeMap::new();

    for (subject, &label) in subjects.iter().zip(&labels) {
        let base: f64 = match label {
            Label::High => rng.random_range(0.82..0.98),
            Label::Low => rng.random_range(0.45..0.78),
        };
        let row: Vec<f64> = config
            .assignments
            .iter()
            .map(|_| round4((base + rng.random_range(-0.02..0.02)).clamp(0.01, 0.99)))
            .collect();
        grades.insert(subject.clone(), row);

        for (a_idx, assignment) in config.assignments.iter().enumerate() {
            let raw_len = length.sample(&mut rng).round().max(1.0) as usize;
            let mut seq: Vec<BaseEvent> = (0..raw_len)
                .map(|_| BaseEvent::ALL[background.sample(&mut rng)])
                .collect();

            // (insert position in background, plant index)
            let mut copies: Vec<(usize, usize)> = Vec::new();
            for (p_idx, plant) in config.plants.iter().enumerate() {
                if !plant.applies_to(assignment) {
                    continue;
                }
                let count = plant_copies(plant, label, &mut rng)?;
                for _ in 0..count {
                    copies.push((rng.random_range(0..=raw_len), p_idx));
                }
            }
            copies.sort();

            let mut starts: Vec<(usize, usize)> = Vec::new(); // (raw start, plant)
            let mut merged: Vec<BaseEvent> = Vec::with_capacity(raw_len + copies.len() * 6);
            let mut next = 0;
            for &(pos, p_idx) in &copies {
                merged.extend_from_slice(&seq[next..pos]);
                next = pos;
                starts.push((merged.len(), p_idx));
                merged.extend(config.plants[p_idx].pattern.events.iter().map(|e| e.base));
            }
            merged.extend_from_slice(&seq[next..]);
            seq = merged;

            let collapsed_index = collapsed_positions(&seq);
            let mut by_plant: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for (raw_start, p_idx) in starts {
                by_plant
                    .entry(p_idx)
                    .or_default()
                    .push(collapsed_index[raw_start]);
            }
            for (plant, positions) in by_plant {
                insertions.push(Insertion {
                    plant,
                    subject_id: subject.clone(),
                    assignment_id: assignment.clone(),
                    positions,
                });
            }

            let mut clock: i64 =
                1_600_000_000_000 + (a_idx as i64) * 604_800_000 + rng.random_range(0..86_400_000);
            let mut nodes: u64 = 0;
            for (order, base) in seq.into_iter().enumerate() {
                clock += rng.random_range(1_000..30_000);
                match base {
                    BaseEvent::EditIns | BaseEvent::EditPst | BaseEvent::Var => nodes += 1,
                    BaseEvent::EditDel => nodes = nodes.saturating_sub(1),
                    _ => {}
                }
                events.push(raw_event(
                    base,
                    subject,
                    assignment,
                    order as u64,
                    clock,
                    nodes,
                    &mut rng,
                ));
            }
        }
    }

    events.sort_by(|a, b| {
        (&a.subject_id, &a.assignment_id, a.order).cmp(&(&b.subject_id, &b.assignment_id, b.order))
    });
    let groups = subjects.into_iter().zip(labels).collect();
    Ok(SynthData {
        events,
        grades: GradeBook {
            assignments: config.assignments.clone(),
            grades,
        },
        manifest: Manifest {
            config: config.clone(),
            groups,
            insertions,
        },
    })
}

fn round4(x: f64) -> f64 {
    (x * 10_000.0).round() / 10_000.0
}

fn plant_copies(plant: &PlantSpec, label: Label, rng: &mut ChaCha8Rng) -> Result<usize> {
    let (high, low) = (plant.high, plant.low);
    let group = match label {
        Label::High => high,
        Label::Low => low,
    };
    Ok(match plant.class {
        PatternClass::FH | PatternClass::FL => usize::from(rng.random_bool(group)),
        _ => {
            if !rng.random_bool(plant.containment) {
                0
            } else if group > 0.0 {
                let extra = Poisson::new(group)
                    .map_err(|e| Error::invalid_param("synth", e.to_string()))?;
                1 + extra.sample(rng) as usize
            } else {
                1
            }
        }
    })
}

/// Index of each raw event in the run-collapsed sequence.
fn collapsed_positions(seq: &[BaseEvent]) -> Vec<usize> {
    let mut out = Vec::with_capacity(seq.len());
    let mut idx = 0;
    for (i, e) in seq.iter().enumerate() {
        if i > 0 && seq[i - 1] != *e {
            idx += 1;
        }
        out.push(idx);
    }
    out
}

fn raw_event(
    base: BaseEvent,
    subject: &str,
    assignment: &str,
    order: u64,
    timestamp: i64,
    nodes: u64,
    rng: &mut ChaCha8Rng,
) -> RawEvent {
    let (kind, subtype, category) = match base {
        BaseEvent::Edit => (KIND_EDIT, None, None),
        BaseEvent::EditIns => (KIND_EDIT, Some("Insert"), None),
        BaseEvent::EditDel => (KIND_EDIT, Some("Delete"), None),
        BaseEvent::EditPst => (KIND_EDIT, Some("Paste"), None),
        BaseEvent::Run => (KIND_RUN, None, None),
        BaseEvent::File => (
            ["File.Open", "File.Save", "File.Close"][rng.random_range(0..3)],
            None,
            None,
        ),
        BaseEvent::Chan => (
            KIND_CHANGE_CATEGORY,
            None,
            Some(CATEGORIES[rng.random_range(0..CATEGORIES.len())]),
        ),
        BaseEvent::Var => (KIND_ADD_VARIABLE, None, None),
    };
    RawEvent {
        subject_id: subject.to_string(),
        assignment_id: assignment.to_string(),
        order,
        timestamp: Some(timestamp),
        event_kind: kind.to_string(),
        edit_subtype: subtype.map(str::to_string),
        category_name: category.map(str::to_string),
        node_metric: Some(nodes),
    }
}

/// Writes events with the default ProgSnap2 column names.
pub fn write_events_csv<W: Write>(out: W, events: &[RawEvent]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "SubjectID",
        "AssignmentID",
        "Order",
        "EventType",
        "ClientTimestamp",
        "EditType",
        "X-BlockCategory",
        "X-MeaningfulNodes",
    ])?;
    for e in events {
        let opt = |v: Option<String>| v.unwrap_or_default();
        w.write_record([
            e.subject_id.clone(),
            e.assignment_id.clone(),
            e.order.to_string(),
            e.event_kind.clone(),
            opt(e.timestamp.map(|t| t.to_string())),
            opt(e.edit_subtype.clone()),
            opt(e.category_name.clone()),
            opt(e.node_metric.map(|n| n.to_string())),
        ])?;
    }
    w.flush()?;
    Ok(())
}
