//! Interpretation artifacts: per-pattern containment table, ranking, top
//! fraction selection and occurrence localization.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{EventSequence, TimeSpan};
use crate::par;
use crate::seqmine::{embeddings, Pattern};
use crate::stats::{odds_ratio, ClassifiedPattern, GroupSizes, OddsRatio, PatternClass};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternReportRow {
    pub assignment_id: String,
    pub pattern: Pattern,
    pub class: PatternClass,
    pub perc_high: f64,
    pub perc_low: f64,
    pub diff: f64,
    pub odds_ratio: OddsRatio,
    pub mean_instances_high: f64,
    pub mean_instances_low: f64,
    pub p_layer1: Option<f64>,
    pub p_layer2: Option<f64>,
    /// Longer reported patterns of the same assignment that contain this one
    /// as a strict subsequence.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub contained_in: Vec<Pattern>,
}

fn mean(xs: impl ExactSizeIterator<Item = u32>) -> f64 {
    let n = xs.len();
    if n == 0 {
        0.0
    } else {
        xs.map(f64::from).sum::<f64>() / n as f64
    }
}

fn frac(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// One row per labeled (non-discarded) pattern, ranked by [`rank`].
pub fn build_report(
    assignment_id: &str,
    classified: &[ClassifiedPattern],
    groups: &GroupSizes,
) -> Vec<PatternReportRow> {
    let kept: Vec<&ClassifiedPattern> = classified
        .iter()
        .filter(|c| c.class != PatternClass::Discarded)
        .collect();
    let mut rows: Vec<PatternReportRow> = par::map(&kept, |c| {
        let s = &c.stats;
        let perc_high = frac(s.seq_support_high, groups.n_high);
        let perc_low = frac(s.seq_support_low, groups.n_low);
        let contained_in = kept
            .iter()
            .filter(|o| s.pattern.is_strict_subsequence_of(&o.stats.pattern))
            .map(|o| o.stats.pattern.clone())
            .collect();
        PatternReportRow {
            assignment_id: assignment_id.to_string(),
            pattern: s.pattern.clone(),
            class: c.class,
            perc_high,
            perc_low,
            diff: (perc_high - perc_low).abs(),
            odds_ratio: odds_ratio(perc_high, perc_low),
            mean_instances_high: mean(s.instance_supports_high.values().copied()),
            mean_instances_low: mean(s.instance_supports_low.values().copied()),
            p_layer1: c.layer1.map(|t| t.p_value),
            p_layer2: c.layer2.map(|t| t.p_value),
            contained_in,
        }
    });
    rank(&mut rows);
    rows
}

/// Diff descending, then odds-ratio distance from 1 descending, then pattern
/// text, then assignment.
pub fn rank(rows: &mut [PatternReportRow]) {
    let distance = |r: &PatternReportRow| (r.odds_ratio.value - 1.0).abs();
    rows.sort_by(|a, b| {
        b.diff
            .total_cmp(&a.diff)
            .then_with(|| distance(b).total_cmp(&distance(a)))
            .then_with(|| a.pattern.to_string().cmp(&b.pattern.to_string()))
            .then_with(|| a.assignment_id.cmp(&b.assignment_id))
    });
}

/// Number of rows kept out of `n` at `fraction` (rounded up).
pub fn top_count(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64) - 1e-9).ceil().max(0.0) as usize
}

/// The top `fraction` of high-associated rows (FH, DH) followed by the top
/// `fraction` of low-associated rows (FL, DL), each taken in rank order.
pub fn top_fraction(rows: &[PatternReportRow], fraction: f64) -> Result<Vec<PatternReportRow>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid_param(
            "top-fraction",
            format!("must be in (0, 1], got {fraction}"),
        ));
    }
    let mut sorted = rows.to_vec();
    rank(&mut sorted);
    let (high, low): (Vec<_>, Vec<_>) = sorted.into_iter().partition(|r| r.class.is_high());
    let mut out: Vec<PatternReportRow> = Vec::new();
    let nh = top_count(high.len(), fraction);
    let nl = top_count(low.len(), fraction);
    out.extend(high.into_iter().take(nh));
    out.extend(low.into_iter().take(nl));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Occurrence {
    pub indices: Vec<usize>,
    pub start: usize,
    pub end: usize,
    pub time: TimeSpan,
}

/// Where `pattern` occurs in `subject`'s sequence for `assignment_id`: the
/// same non-overlapping embeddings that instance support counts.
pub fn locate_occurrences(
    pattern: &Pattern,
    subject: &str,
    assignment_id: &str,
    sequences: &[EventSequence],
    max_gap: usize,
) -> Result<Vec<Occurrence>> {
    let seq = sequences
        .iter()
        .find(|s| s.subject_id == subject && s.assignment_id == assignment_id)
        .ok_or_else(|| {
            Error::NotFound(format!(
                "no sequence for subject `{subject}` in assignment `{assignment_id}`"
            ))
        })?;
    Ok(embeddings(&pattern.events, &seq.events, max_gap)
        .into_iter()
        .map(|indices| {
            let start = indices[0];
            let end = *indices.last().expect("patterns are non-empty");
            let time = TimeSpan {
                start: seq.timestamps.get(start).and_then(|t| t.start),
                end: seq.timestamps.get(end).and_then(|t| t.end),
            };
            Occurrence {
                indices,
                start,
                end,
                time,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub top_fraction: f64,
    pub rows: Vec<PatternReportRow>,
    pub top: Vec<PatternReportRow>,
}

impl Report {
    pub fn new(mut rows: Vec<PatternReportRow>, fraction: f64) -> Result<Self> {
        rank(&mut rows);
        let top = top_fraction(&rows, fraction)?;
        Ok(Report {
            top_fraction: fraction,
            rows,
            top,
        })
    }
}

fn pct(x: f64) -> String {
    format!("{:.0}%", x * 100.0)
}

fn pvalue(p: Option<f64>) -> String {
    match p {
        Some(p) if p < 1e-4 => format!("{p:.1e}"),
        Some(p) => format!("{p:.4}"),
        None => "-".into(),
    }
}

/// Aligned plain-text table of the top rows, high group first.
pub fn render_text(report: &Report) -> String {
    let header = [
        "Group",
        "Assignment",
        "Class",
        "Pattern",
        "PercHigh",
        "PercLow",
        "Diff",
        "OR",
        "p1",
        "p2",
    ];
    let mut table: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
    for r in &report.top {
        table.push(vec![
            if r.class.is_high() { "high" } else { "low" }.to_string(),
            r.assignment_id.clone(),
            r.class.to_string(),
            r.pattern.to_string(),
            pct(r.perc_high),
            pct(r.perc_low),
            pct(r.diff),
            r.odds_ratio.to_string(),
            pvalue(r.p_layer1),
            pvalue(r.p_layer2),
        ]);
    }
    let widths: Vec<usize> = (0..header.len())
        .map(|c| {
            table
                .iter()
                .map(|row| row[c].chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();

    let mut out = String::new();
    let _ = writeln!(
        out,
        "Top {} of {} labeled patterns (fraction {})",
        report.top.len(),
        report.rows.len(),
        report.top_fraction
    );
    for (i, row) in table.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (cell, &w))| match c {
                0..=3 => format!("{cell:<w$}"),
                _ => format!("{cell:>w$}"),
            })
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
        if i == 0 {
            let total = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
            let _ = writeln!(out, "{}", "-".repeat(total));
        }
    }
    out
}
