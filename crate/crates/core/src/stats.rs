//! Test statistics and the two-layer differential classification.
//!
//! Layer 1 runs a 2x2 chi-square test on how many students of each group
//! exhibit a pattern. Patterns that are not significant there fall through to
//! layer 2, a Welch t-test on per-student occurrence counts. Anything still
//! not significant is discarded.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::seqmine::FrequentPatternStats;
use crate::special::{chi_square_sf, student_t_two_sided};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    #[serde(with = "finite_or_string")]
    pub statistic: f64,
    pub degrees_of_freedom: f64,
    pub p_value: f64,
}

/// Pearson chi-square on `[[a, b], [c, d]]`, one degree of freedom, no
/// continuity correction.
pub fn chi_square_2x2(a: u64, b: u64, c: u64, d: u64) -> Result<TestResult> {
    chi_square_2x2_with(a, b, c, d, false)
}

pub fn chi_square_2x2_with(a: u64, b: u64, c: u64, d: u64, yates: bool) -> Result<TestResult> {
    let (a, b, c, d) = (a as f64, b as f64, c as f64, d as f64);
    let margins = [a + b, c + d, a + c, b + d];
    if margins.contains(&0.0) {
        return Err(Error::DegenerateTable);
    }
    let n = a + b + c + d;
    let mut diff = (a * d - b * c).abs();
    if yates {
        diff = (diff - n / 2.0).max(0.0);
    }
    let statistic = n * diff * diff / (margins[0] * margins[1] * margins[2] * margins[3]);
    Ok(TestResult {
        statistic,
        degrees_of_freedom: 1.0,
        p_value: chi_square_sf(statistic, 1.0),
    })
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Two-sided Welch t-test of `mean(xs) == mean(ys)`.
pub fn welch_t_test(xs: &[f64], ys: &[f64]) -> Result<TestResult> {
    if xs.len() < 2 || ys.len() < 2 {
        return Err(Error::Precondition(format!(
            "welch_t_test needs at least 2 observations per sample, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    let (nx, ny) = (xs.len() as f64, ys.len() as f64);
    let (mx, vx) = mean_var(xs);
    let (my, vy) = mean_var(ys);
    let (sx, sy) = (vx / nx, vy / ny);
    let se2 = sx + sy;
    if se2 == 0.0 {
        // both samples constant
        let (statistic, p_value) = if mx == my {
            (0.0, 1.0)
        } else {
            ((mx - my).signum() * f64::INFINITY, 0.0)
        };
        return Ok(TestResult {
            statistic,
            degrees_of_freedom: nx + ny - 2.0,
            p_value,
        });
    }
    let t = (mx - my) / se2.sqrt();
    let df = se2 * se2 / (sx * sx / (nx - 1.0) + sy * sy / (ny - 1.0));
    Ok(TestResult {
        statistic: t,
        degrees_of_freedom: df,
        p_value: student_t_two_sided(t, df),
    })
}

/// Odds ratio of two proportions. `boundary` is set when either proportion
/// is 0 or 1, in which case `value` is `+inf`, `0` or (for equal
/// proportions) `1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OddsRatio {
    #[serde(with = "finite_or_string")]
    pub value: f64,
    pub boundary: bool,
}

pub fn odds_ratio(perc_high: f64, perc_low: f64) -> OddsRatio {
    let interior = |p: f64| p > 0.0 && p < 1.0;
    if interior(perc_high) && interior(perc_low) {
        let odds = |p: f64| p / (1.0 - p);
        return OddsRatio {
            value: odds(perc_high) / odds(perc_low),
            boundary: false,
        };
    }
    let value = if perc_high == perc_low {
        1.0
    } else if perc_high >= 1.0 || perc_low <= 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    OddsRatio {
        value,
        boundary: true,
    }
}

impl fmt::Display for OddsRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.value.is_infinite() {
            f.write_str("inf")
        } else if self.boundary && self.value == 0.0 {
            f.write_str("0")
        } else {
            write!(f, "{:.2}", self.value)
        }
    }
}

/// JSON has no infinity; infinite values are written as the string `"inf"`.
mod finite_or_string {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str(if *v > 0.0 { "inf" } else { "-inf" })
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) if s == "inf" => Ok(f64::INFINITY),
            Repr::Str(s) if s == "-inf" => Ok(f64::NEG_INFINITY),
            Repr::Str(s) => Err(serde::de::Error::custom(format!("bad number `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PatternClass {
    FH,
    FL,
    DH,
    DL,
    Discarded,
}

impl PatternClass {
    pub fn as_str(self) -> &'static str {
        match self {
            PatternClass::FH => "FH",
            PatternClass::FL => "FL",
            PatternClass::DH => "DH",
            PatternClass::DL => "DL",
            PatternClass::Discarded => "Discarded",
        }
    }

    pub fn is_high(self) -> bool {
        matches!(self, PatternClass::FH | PatternClass::DH)
    }

    pub fn is_low(self) -> bool {
        matches!(self, PatternClass::FL | PatternClass::DL)
    }

    /// FH/FL features are split into two bins, DH/DL into three.
    pub fn bins(self) -> usize {
        match self {
            PatternClass::FH | PatternClass::FL => 2,
            PatternClass::DH | PatternClass::DL => 3,
            PatternClass::Discarded => 0,
        }
    }
}

impl fmt::Display for PatternClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PatternClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "FH" => PatternClass::FH,
            "FL" => PatternClass::FL,
            "DH" => PatternClass::DH,
            "DL" => PatternClass::DL,
            "Discarded" => PatternClass::Discarded,
            other => return Err(Error::Format(format!("unknown pattern class `{other}`"))),
        })
    }
}

/// What the layer-1 contingency table counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Layer1Counts {
    /// Students with / without the pattern.
    #[default]
    SequenceSupport,
    /// Pattern occurrences vs. remaining events in each group.
    Foc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Correction {
    #[default]
    None,
    Bonferroni,
    BenjaminiHochberg,
}

impl FromStr for Correction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Correction::None),
            "bonferroni" => Ok(Correction::Bonferroni),
            "bh" | "benjamini-hochberg" => Ok(Correction::BenjaminiHochberg),
            other => Err(Error::invalid_param(
                "correction",
                format!("unknown correction `{other}`"),
            )),
        }
    }
}

/// Which tests form one multiple-comparison family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorrectionScope {
    /// Each assignment's patterns separately.
    #[default]
    Assignment,
    /// All assignments of a trial together.
    Trial,
}

impl FromStr for CorrectionScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "assignment" => Ok(CorrectionScope::Assignment),
            "trial" => Ok(CorrectionScope::Trial),
            other => Err(Error::invalid_param(
                "correction-scope",
                format!("unknown scope `{other}`"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InstanceSupportMode {
    #[default]
    Raw,
    /// Occurrences divided by the sequence length.
    LengthNormalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifyParams {
    pub alpha: f64,
    pub layer1_counts: Layer1Counts,
    pub yates: bool,
    pub correction: Correction,
    #[serde(default)]
    pub correction_scope: CorrectionScope,
    pub instance_support: InstanceSupportMode,
}

impl Default for ClassifyParams {
    fn default() -> Self {
        ClassifyParams {
            alpha: 0.05,
            layer1_counts: Layer1Counts::SequenceSupport,
            yates: false,
            correction: Correction::None,
            correction_scope: CorrectionScope::Assignment,
            instance_support: InstanceSupportMode::Raw,
        }
    }
}

impl ClassifyParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid_param(
                "alpha",
                format!("must be in (0, 1), got {}", self.alpha),
            ));
        }
        Ok(())
    }
}

/// Group sizes plus per-subject sequence lengths (needed only for FoC tables
/// and length-normalized instance supports).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupSizes {
    pub n_high: usize,
    pub n_low: usize,
    #[serde(default)]
    pub lengths: BTreeMap<String, usize>,
}

impl GroupSizes {
    pub fn new(n_high: usize, n_low: usize) -> Self {
        GroupSizes {
            n_high,
            n_low,
            lengths: BTreeMap::new(),
        }
    }

    fn total_length<'a>(&self, subjects: impl Iterator<Item = &'a String>) -> u64 {
        subjects
            .map(|s| self.lengths.get(s).copied().unwrap_or(0) as u64)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifiedPattern {
    pub stats: FrequentPatternStats,
    pub class: PatternClass,
    pub layer1: Option<TestResult>,
    pub layer2: Option<TestResult>,
}

/// Classifies one pattern at raw significance level `alpha`.
pub fn classify_pattern(
    stats: &FrequentPatternStats,
    n_high: usize,
    n_low: usize,
    alpha: f64,
) -> PatternClass {
    let params = ClassifyParams {
        alpha,
        ..Default::default()
    };
    let groups = GroupSizes::new(n_high, n_low);
    classify_all(vec![stats.clone()], &groups, &params)
        .pop()
        .map(|c| c.class)
        .unwrap_or(PatternClass::Discarded)
}

fn layer1_test(
    stats: &FrequentPatternStats,
    groups: &GroupSizes,
    params: &ClassifyParams,
) -> Option<TestResult> {
    let (h, l) = match params.layer1_counts {
        Layer1Counts::SequenceSupport => (
            (stats.seq_support_high as u64, groups.n_high as u64),
            (stats.seq_support_low as u64, groups.n_low as u64),
        ),
        Layer1Counts::Foc => (
            (
                stats.foc_high,
                groups.total_length(stats.instance_supports_high.keys()),
            ),
            (
                stats.foc_low,
                groups.total_length(stats.instance_supports_low.keys()),
            ),
        ),
    };
    let (a, b) = (h.0, h.1.saturating_sub(h.0));
    let (c, d) = (l.0, l.1.saturating_sub(l.0));
    chi_square_2x2_with(a, b, c, d, params.yates).ok()
}

fn layer1_high(stats: &FrequentPatternStats, groups: &GroupSizes, counts: Layer1Counts) -> bool {
    let ratio = |x: u64, n: u64| if n == 0 { 0.0 } else { x as f64 / n as f64 };
    match counts {
        Layer1Counts::SequenceSupport => {
            ratio(stats.seq_support_high as u64, groups.n_high as u64)
                > ratio(stats.seq_support_low as u64, groups.n_low as u64)
        }
        Layer1Counts::Foc => {
            ratio(
                stats.foc_high,
                groups.total_length(stats.instance_supports_high.keys()),
            ) > ratio(
                stats.foc_low,
                groups.total_length(stats.instance_supports_low.keys()),
            )
        }
    }
}

fn instance_vector(
    counts: &BTreeMap<String, u32>,
    groups: &GroupSizes,
    mode: InstanceSupportMode,
) -> Vec<f64> {
    counts
        .iter()
        .map(|(subject, &c)| match mode {
            InstanceSupportMode::Raw => c as f64,
            InstanceSupportMode::LengthNormalized => match groups.lengths.get(subject) {
                Some(&len) if len > 0 => c as f64 / len as f64,
                _ => 0.0,
            },
        })
        .collect()
}

/// Which of `p_values` are significant after `correction` at level `alpha`.
pub fn significant(p_values: &[Option<f64>], alpha: f64, correction: Correction) -> Vec<bool> {
    let m = p_values.iter().filter(|p| p.is_some()).count();
    match correction {
        Correction::None => p_values
            .iter()
            .map(|p| p.is_some_and(|p| p < alpha))
            .collect(),
        Correction::Bonferroni => {
            let cut = alpha / m.max(1) as f64;
            p_values
                .iter()
                .map(|p| p.is_some_and(|p| p < cut))
                .collect()
        }
        Correction::BenjaminiHochberg => {
            let mut order: Vec<(usize, f64)> = p_values
                .iter()
                .enumerate()
                .filter_map(|(i, p)| p.map(|p| (i, p)))
                .collect();
            order.sort_by(|x, y| x.1.total_cmp(&y.1).then(x.0.cmp(&y.0)));
            let cutoff_rank = order
                .iter()
                .enumerate()
                .filter(|(rank, (_, p))| *p <= (*rank + 1) as f64 / m as f64 * alpha)
                .map(|(rank, _)| rank + 1)
                .max()
                .unwrap_or(0);
            let mut out = vec![false; p_values.len()];
            for (i, _) in order.iter().take(cutoff_rank) {
                out[*i] = true;
            }
            out
        }
    }
}

/// Two-layer classification of every pattern. Multiple-comparison
/// correction, when enabled, is applied within each layer separately.
pub fn classify_all(
    stats: Vec<FrequentPatternStats>,
    groups: &GroupSizes,
    params: &ClassifyParams,
) -> Vec<ClassifiedPattern> {
    classify_jointly(vec![(stats, groups)], params)
        .pop()
        .expect("one family in, one out")
}

/// Classifies several assignments at once, treating all their tests as one
/// family per layer for the multiple-comparison correction.
pub fn classify_jointly(
    parts: Vec<(Vec<FrequentPatternStats>, &GroupSizes)>,
    params: &ClassifyParams,
) -> Vec<Vec<ClassifiedPattern>> {
    let items: Vec<(usize, FrequentPatternStats)> = parts
        .iter()
        .enumerate()
        .flat_map(|(part, (stats, _))| stats.iter().map(move |s| (part, s.clone())))
        .collect();
    let groups_of = |part: usize| parts[part].1;

    let layer1: Vec<Option<TestResult>> =
        par::map(&items, |(part, s)| layer1_test(s, groups_of(*part), params));
    let sig1 = significant(
        &layer1
            .iter()
            .map(|t| t.map(|t| t.p_value))
            .collect::<Vec<_>>(),
        params.alpha,
        params.correction,
    );

    let layer2: Vec<Option<TestResult>> = par::map_range(items.len(), |i| {
        if sig1[i] {
            return None;
        }
        let (part, s) = &items[i];
        let groups = groups_of(*part);
        let xs = instance_vector(&s.instance_supports_high, groups, params.instance_support);
        let ys = instance_vector(&s.instance_supports_low, groups, params.instance_support);
        welch_t_test(&xs, &ys).ok()
    });
    let sig2 = significant(
        &layer2
            .iter()
            .map(|t| t.map(|t| t.p_value))
            .collect::<Vec<_>>(),
        params.alpha,
        params.correction,
    );

    let mut out: Vec<Vec<ClassifiedPattern>> = parts
        .iter()
        .map(|(stats, _)| Vec::with_capacity(stats.len()))
        .collect();
    for (i, (part, s)) in items.into_iter().enumerate() {
        let class = if sig1[i] {
            if layer1_high(&s, groups_of(part), params.layer1_counts) {
                PatternClass::FH
            } else {
                PatternClass::FL
            }
        } else if sig2[i] {
            if layer2[i].is_some_and(|t| t.statistic > 0.0) {
                PatternClass::DH
            } else {
                PatternClass::DL
            }
        } else {
            PatternClass::Discarded
        };
        out[part].push(ClassifiedPattern {
            stats: s,
            class,
            layer1: layer1[i],
            layer2: layer2[i],
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{BaseEvent, EventType};
    use crate::seqmine::Pattern;
    use proptest::prelude::*;

    fn stats_from(high: &[u32], low: &[u32]) -> FrequentPatternStats {
        let map = |prefix: &str, xs: &[u32]| -> BTreeMap<String, u32> {
            xs.iter()
                .enumerate()
                .map(|(i, &c)| (format!("{prefix}{i:03}"), c))
                .collect()
        };
        FrequentPatternStats {
            pattern: Pattern::new(vec![EventType::new(BaseEvent::Run)]),
            seq_support_high: high.iter().filter(|&&c| c > 0).count(),
            seq_support_low: low.iter().filter(|&&c| c > 0).count(),
            foc_high: high.iter().map(|&c| c as u64).sum(),
            foc_low: low.iter().map(|&c| c as u64).sum(),
            instance_supports_high: map("h", high),
            instance_supports_low: map("l", low),
        }
    }

    #[test]
    fn chi_square_examples() {
        let r = chi_square_2x2(25, 25, 25, 25).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);

        // scipy.stats.chi2_contingency(..., correction=False)
        let r = chi_square_2x2(10, 40, 30, 20).unwrap();
        assert!((r.statistic - 16.666_666_666_666_668).abs() < 1e-12);
        assert!((r.p_value - 4.455_709_060_405_612e-5).abs() < 1e-12);

        let swapped = chi_square_2x2(30, 20, 10, 40).unwrap();
        assert_eq!(swapped.statistic, r.statistic);
    }

    #[test]
    fn chi_square_degenerate() {
        assert!(matches!(
            chi_square_2x2(0, 0, 3, 4),
            Err(Error::DegenerateTable)
        ));
        assert!(matches!(
            chi_square_2x2(5, 0, 3, 0),
            Err(Error::DegenerateTable)
        ));
    }

    #[test]
    fn yates_shrinks_statistic() {
        let plain = chi_square_2x2(10, 40, 30, 20).unwrap();
        let yates = chi_square_2x2_with(10, 40, 30, 20, true).unwrap();
        assert!(yates.statistic < plain.statistic);
        assert!((yates.statistic - 15.041_666_666_666_666).abs() < 1e-9);
    }

    #[test]
    fn welch_examples() {
        let r = welch_t_test(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((r.statistic, r.p_value), (0.0, 1.0));

        // scipy.stats.ttest_ind(..., equal_var=False)
        let r = welch_t_test(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert!((r.statistic + 3.674_234_614_174_767_3).abs() < 1e-12);
        assert!((r.degrees_of_freedom - 4.0).abs() < 1e-12);
        assert!((r.p_value - 0.021_311_641_128_756_727).abs() < 1e-12);

        let s = welch_t_test(&[4.0, 5.0, 6.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(s.statistic, -r.statistic);
        assert_eq!(s.p_value, r.p_value);
    }

    #[test]
    fn welch_degenerate_cases() {
        let eq = welch_t_test(&[2.0, 2.0], &[2.0, 2.0, 2.0]).unwrap();
        assert_eq!((eq.statistic, eq.p_value), (0.0, 1.0));
        let ne = welch_t_test(&[2.0, 2.0], &[3.0, 3.0]).unwrap();
        assert_eq!(ne.p_value, 0.0);
        let json = serde_json::to_string(&ne).unwrap();
        assert!(json.contains(r#""statistic":"-inf""#), "{json}");
        assert_eq!(serde_json::from_str::<TestResult>(&json).unwrap(), ne);
        assert!(matches!(
            welch_t_test(&[1.0], &[1.0, 2.0]),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn odds_ratio_table_rows() {
        assert!((odds_ratio(0.52, 0.31).value - 2.41).abs() < 0.01);
        assert!((odds_ratio(0.22, 0.42).value - 0.39).abs() < 0.01);
        assert_eq!(odds_ratio(0.3, 0.3).value, 1.0);
    }

    #[test]
    fn odds_ratio_boundaries() {
        let inf = odds_ratio(1.0, 0.5);
        assert!(inf.boundary && inf.value.is_infinite());
        assert_eq!(odds_ratio(0.4, 0.0).value, f64::INFINITY);
        assert_eq!(odds_ratio(0.0, 0.4).value, 0.0);
        assert_eq!(odds_ratio(0.0, 0.0).value, 1.0);
        assert_eq!(inf.to_string(), "inf");
        assert_eq!(odds_ratio(0.0, 0.4).to_string(), "0");
        let json = serde_json::to_string(&inf).unwrap();
        assert_eq!(json, r#"{"value":"inf","boundary":true}"#);
        assert_eq!(serde_json::from_str::<OddsRatio>(&json).unwrap(), inf);
    }

    #[test]
    fn classify_frequent_high() {
        let mut high = vec![1; 45];
        high.extend(vec![0; 9]);
        let mut low = vec![1; 10];
        low.extend(vec![0; 42]);
        let s = stats_from(&high, &low);
        // scipy chi2_contingency([[45, 9], [10, 42]]) p = 4.02e-11
        assert_eq!(classify_pattern(&s, 54, 52, 0.05), PatternClass::FH);
        let flipped = stats_from(&low, &high);
        assert_eq!(classify_pattern(&flipped, 52, 54, 0.05), PatternClass::FL);
    }

    #[test]
    fn classify_no_signal_is_discarded() {
        let s = stats_from(&[2; 20], &[2; 20]);
        assert_eq!(classify_pattern(&s, 20, 20, 0.05), PatternClass::Discarded);
    }

    #[test]
    fn classify_dependent_high() {
        // 27/54 vs 26/52 containing; containing students have ~5 vs ~1 occurrences
        let mut high: Vec<u32> = (0..27).map(|i| 4 + (i % 3)).collect();
        high.extend(vec![0; 27]);
        let mut low: Vec<u32> = (0..26).map(|i| 1 + (i % 2)).collect();
        low.extend(vec![0; 26]);
        let s = stats_from(&high, &low);
        let groups = GroupSizes::new(54, 52);
        let out = classify_all(vec![s.clone()], &groups, &ClassifyParams::default());
        assert!(out[0].layer1.unwrap().statistic < 1e-3);
        // scipy.stats.ttest_ind(high, low, equal_var=False)
        let t = out[0].layer2.unwrap();
        assert!((t.statistic - 4.716_069_319_218_874_5).abs() < 1e-9);
        assert!((t.p_value - 1.335_913_134_858_132_8e-5).abs() < 1e-12);
        assert_eq!(out[0].class, PatternClass::DH);

        let flipped = stats_from(&low, &high);
        assert_eq!(classify_pattern(&flipped, 52, 54, 0.05), PatternClass::DL);
    }

    #[test]
    fn degenerate_layer1_falls_through() {
        // every student has the pattern: zero column margin in layer 1
        let s = stats_from(&[5, 6, 5, 4, 6], &[1, 2, 1, 1, 2]);
        let out = classify_all(vec![s], &GroupSizes::new(5, 5), &ClassifyParams::default());
        assert!(out[0].layer1.is_none());
        assert_eq!(out[0].class, PatternClass::DH);
    }

    #[test]
    fn corrections() {
        let p = [Some(0.01), Some(0.04), None, Some(0.03), Some(0.5)];
        assert_eq!(
            significant(&p, 0.05, Correction::None),
            vec![true, true, false, true, false]
        );
        assert_eq!(
            significant(&p, 0.05, Correction::Bonferroni),
            vec![true, false, false, false, false]
        );
        // BH, m = 4: sorted 0.01, 0.03, 0.04 against 0.0125, 0.025, 0.0375; only rank 1 passes
        assert_eq!(
            significant(&p, 0.05, Correction::BenjaminiHochberg),
            vec![true, false, false, false, false]
        );
        let q = [Some(0.01), Some(0.02), Some(0.03)];
        assert_eq!(
            significant(&q, 0.05, Correction::BenjaminiHochberg),
            vec![true, true, true]
        );
    }

    #[test]
    fn joint_family_tightens_bonferroni() {
        // layer-1 p-value around 0.03: significant alone, not when the family doubles
        let high: Vec<u32> = (0..20).map(|i| u32::from(i < 14)).collect();
        let low: Vec<u32> = (0..20).map(|i| u32::from(i < 7)).collect();
        let s = stats_from(&high, &low);
        let groups = GroupSizes::new(20, 20);
        let p = layer1_test(&s, &groups, &ClassifyParams::default())
            .unwrap()
            .p_value;
        assert!(p > 0.025 && p < 0.05, "{p}");
        let params = ClassifyParams {
            correction: Correction::Bonferroni,
            ..Default::default()
        };
        assert_eq!(
            classify_all(vec![s.clone()], &groups, &params)[0].class,
            PatternClass::FH
        );
        let joint = classify_jointly(
            vec![(vec![s.clone()], &groups), (vec![s.clone()], &groups)],
            &params,
        );
        assert_eq!(joint.len(), 2);
        assert!(joint.iter().all(|part| part[0].class != PatternClass::FH));
        let none = classify_jointly(
            vec![(vec![s.clone()], &groups), (vec![s], &groups)],
            &ClassifyParams::default(),
        );
        assert!(none.iter().all(|part| part[0].class == PatternClass::FH));
    }

    #[test]
    fn foc_layer1_mode() {
        let s = stats_from(&[3, 3, 3, 3], &[1, 0, 1, 0]);
        let mut groups = GroupSizes::new(4, 4);
        for k in s
            .instance_supports_high
            .keys()
            .chain(s.instance_supports_low.keys())
        {
            groups.lengths.insert(k.clone(), 10);
        }
        let params = ClassifyParams {
            layer1_counts: Layer1Counts::Foc,
            ..Default::default()
        };
        let out = classify_all(vec![s.clone()], &groups, &params);
        // [[12, 28], [2, 38]]
        let expect = chi_square_2x2(12, 28, 2, 38).unwrap();
        assert_eq!(out[0].layer1.unwrap().statistic, expect.statistic);
        assert_eq!(out[0].class, PatternClass::FH);
    }

    proptest! {
        #[test]
        fn chi_square_symmetry_and_scaling(a in 1u64..50, b in 1u64..50, c in 1u64..50, d in 1u64..50, k in 2u64..5) {
            let base = chi_square_2x2(a, b, c, d).unwrap();
            let swapped = chi_square_2x2(d, c, b, a).unwrap();
            prop_assert!((base.statistic - swapped.statistic).abs() <= 1e-12 * base.statistic.max(1.0));
            let scaled = chi_square_2x2(k * a, k * b, k * c, k * d).unwrap();
            prop_assert!((scaled.statistic - k as f64 * base.statistic).abs() <= 1e-9 * scaled.statistic.max(1.0));
            prop_assert!((0.0..=1.0).contains(&base.p_value));
        }

        #[test]
        fn odds_ratio_reciprocal(ph in 0.001f64..0.999, pl in 0.001f64..0.999) {
            prop_assert!((odds_ratio(ph, pl).value * odds_ratio(pl, ph).value - 1.0).abs() < 1e-12);
        }

        #[test]
        fn p_values_monotone(x in 0.0f64..40.0, dx in 0.01f64..5.0, t in 0.0f64..8.0, dt in 0.01f64..3.0, df in 1.0f64..80.0) {
            prop_assert!(chi_square_sf(x + dx, 1.0) <= chi_square_sf(x, 1.0));
            prop_assert!(student_t_two_sided(t + dt, df) <= student_t_two_sided(t, df));
        }

        #[test]
        fn labels_partition(high in prop::collection::vec(0u32..4, 2..12), low in prop::collection::vec(0u32..4, 2..12)) {
            let s = stats_from(&high, &low);
            let out = classify_all(vec![s], &GroupSizes::new(high.len(), low.len()), &ClassifyParams::default());
            prop_assert_eq!(out.len(), 1);
            let c = out[0].class;
            if c == PatternClass::FH { prop_assert!(out[0].layer1.unwrap().p_value < 0.05); }
            if c.is_high() || c.is_low() {
                prop_assert!(out[0].layer1.is_some_and(|t| t.p_value < 0.05) || out[0].layer2.is_some_and(|t| t.p_value < 0.05));
            }
        }
    }
}
