//! Per-student feature tables built from classified patterns.
//!
//! Each column is one (assignment, pattern, class) triple; each cell holds the
//! student's occurrence count of the pattern, later discretized into
//! equal-frequency bins (two for FH/FL columns, three for DH/DL).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::EventSequence;
use crate::par;
use crate::seqmine::{Alphabet, Pattern, SymbolCounter};
use crate::stats::{ClassifiedPattern, PatternClass};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FeatureColumn {
    pub assignment_id: String,
    pub pattern: Pattern,
    pub class: PatternClass,
}

impl FeatureColumn {
    /// `assignment:pattern:class`, the CSV header name.
    pub fn key(&self) -> String {
        format!("{}:{}:{}", self.assignment_id, self.pattern, self.class)
    }

    pub fn parse_key(key: &str) -> Result<Self> {
        let bad = || Error::Format(format!("bad feature column name `{key}`"));
        let (assignment_id, rest) = key.split_once(':').ok_or_else(bad)?;
        let (pattern, class) = rest.rsplit_once(':').ok_or_else(bad)?;
        Ok(FeatureColumn {
            assignment_id: assignment_id.to_string(),
            pattern: pattern.parse()?,
            class: class.parse()?,
        })
    }
}

/// Students x patterns matrix, stored row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureTable {
    pub subjects: Vec<String>,
    pub columns: Vec<FeatureColumn>,
    pub values: Vec<u32>,
    pub discretized: bool,
}

impl FeatureTable {
    pub fn empty(subjects: Vec<String>) -> Self {
        FeatureTable {
            subjects,
            columns: Vec::new(),
            values: Vec::new(),
            discretized: false,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.subjects.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.values[row * self.n_cols() + col]
    }

    pub fn row(&self, row: usize) -> &[u32] {
        let n = self.n_cols();
        &self.values[row * n..(row + 1) * n]
    }

    pub fn column(&self, col: usize) -> Vec<u32> {
        (0..self.n_rows()).map(|r| self.get(r, col)).collect()
    }

    fn from_columns(
        subjects: Vec<String>,
        columns: Vec<FeatureColumn>,
        data: &[Vec<u32>],
        discretized: bool,
    ) -> Self {
        let n_rows = subjects.len();
        let mut values = Vec::with_capacity(n_rows * columns.len());
        for r in 0..n_rows {
            values.extend(data.iter().map(|col| col[r]));
        }
        FeatureTable {
            subjects,
            columns,
            values,
            discretized,
        }
    }

    /// Keeps only the listed subjects, in the given order. Subjects absent
    /// from the table get all-zero rows.
    pub fn select_rows(&self, subjects: &[String]) -> FeatureTable {
        let index: HashMap<&str, usize> = self
            .subjects
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        let mut values = Vec::with_capacity(subjects.len() * self.n_cols());
        for s in subjects {
            match index.get(s.as_str()) {
                Some(&r) => values.extend_from_slice(self.row(r)),
                None => values.extend(std::iter::repeat_n(0, self.n_cols())),
            }
        }
        FeatureTable {
            subjects: subjects.to_vec(),
            columns: self.columns.clone(),
            values,
            discretized: self.discretized,
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["subject_id".to_string()];
        header.extend(self.columns.iter().map(FeatureColumn::key));
        w.write_record(&header)?;
        for (r, subject) in self.subjects.iter().enumerate() {
            let mut record = vec![subject.clone()];
            record.extend(self.row(r).iter().map(u32::to_string));
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R, discretized: bool) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(input);
        let headers = reader.headers()?.clone();
        if headers.get(0) != Some("subject_id") {
            return Err(Error::Format(
                "feature table must start with a subject_id column".into(),
            ));
        }
        let columns = headers
            .iter()
            .skip(1)
            .map(FeatureColumn::parse_key)
            .collect::<Result<Vec<_>>>()?;
        let mut subjects = Vec::new();
        let mut values = Vec::new();
        for record in reader.records() {
            let record = record?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            subjects.push(record[0].to_string());
            for v in record.iter().skip(1) {
                values.push(v.parse().map_err(|_| Error::Row {
                    line,
                    message: format!("non-integer feature value `{v}`"),
                })?);
            }
        }
        Ok(FeatureTable {
            subjects,
            columns,
            values,
            discretized,
        })
    }
}

/// Raw occurrence-count table for one assignment.
///
/// Discarded patterns are skipped. Subjects without a sequence for the
/// assignment get zeros.
pub fn build_feature_table(
    assignment_id: &str,
    classified: &[ClassifiedPattern],
    sequences: &[EventSequence],
    subjects: &[String],
    max_gap: usize,
) -> FeatureTable {
    let kept: Vec<&ClassifiedPattern> = classified
        .iter()
        .filter(|c| c.class != PatternClass::Discarded)
        .collect();
    let by_subject: HashMap<&str, &EventSequence> = sequences
        .iter()
        .filter(|s| s.assignment_id == assignment_id)
        .map(|s| (s.subject_id.as_str(), s))
        .collect();
    let alphabet = Alphabet::from_events(kept.iter().flat_map(|c| c.stats.pattern.events.iter()));
    let rows: Vec<Option<Vec<u16>>> = subjects
        .iter()
        .map(|s| {
            by_subject
                .get(s.as_str())
                .map(|seq| alphabet.encode(&seq.events))
        })
        .collect();

    let data: Vec<Vec<u32>> = par::map(&kept, |c| {
        let counter = SymbolCounter::new(
            &alphabet.encode(&c.stats.pattern.events),
            alphabet.len(),
            max_gap,
        );
        let mut scratch = Vec::new();
        rows.iter()
            .map(|seq| {
                seq.as_ref()
                    .map_or(0, |seq| counter.count(seq, &mut scratch))
            })
            .collect()
    });
    let columns = kept
        .iter()
        .map(|c| FeatureColumn {
            assignment_id: assignment_id.to_string(),
            pattern: c.stats.pattern.clone(),
            class: c.class,
        })
        .collect();
    FeatureTable::from_columns(subjects.to_vec(), columns, &data, false)
}

/// Quantile by inclusive linear interpolation over sorted values
/// (position `q * (n - 1)`).
pub fn quantile(sorted: &[u32], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty column");
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] as f64 + (sorted[hi] as f64 - sorted[lo] as f64) * frac
}

/// Bin edges for one column. A value below the first edge maps to 0, below
/// the second to 1, otherwise to the top code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "bins", rename_all = "lowercase")]
pub enum ColumnBins {
    Two { median: f64 },
    Three { lower: f64, upper: f64 },
}

impl ColumnBins {
    pub fn fit(values: &[u32], class: PatternClass) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_unstable();
        if sorted.is_empty() {
            sorted.push(0);
        }
        match class.bins() {
            3 => ColumnBins::Three {
                lower: quantile(&sorted, 1.0 / 3.0),
                upper: quantile(&sorted, 2.0 / 3.0),
            },
            _ => ColumnBins::Two {
                median: quantile(&sorted, 0.5),
            },
        }
    }

    pub fn code(&self, value: u32) -> u32 {
        let v = value as f64;
        match *self {
            ColumnBins::Two { median } => u32::from(v >= median),
            ColumnBins::Three { lower, upper } => {
                if v < lower {
                    0
                } else if v < upper {
                    1
                } else {
                    2
                }
            }
        }
    }
}

/// Bin edges fitted on one table, applicable to another table with the same
/// columns (e.g. fit on training folds, apply to the test fold).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discretizer {
    pub columns: Vec<FeatureColumn>,
    pub bins: Vec<ColumnBins>,
}

impl Discretizer {
    pub fn fit(table: &FeatureTable) -> Self {
        let bins = par::map_range(table.n_cols(), |c| {
            ColumnBins::fit(&table.column(c), table.columns[c].class)
        });
        Discretizer {
            columns: table.columns.clone(),
            bins,
        }
    }

    pub fn apply(&self, table: &FeatureTable) -> Result<FeatureTable> {
        if table.columns != self.columns {
            return Err(Error::Schema(
                "feature columns differ from the fitted discretizer".into(),
            ));
        }
        let n = table.n_cols();
        let values = table
            .values
            .iter()
            .enumerate()
            .map(|(i, &v)| self.bins[i % n].code(v))
            .collect();
        Ok(FeatureTable {
            subjects: table.subjects.clone(),
            columns: table.columns.clone(),
            values,
            discretized: true,
        })
    }
}

/// Fits bins on `table` and applies them to it.
pub fn discretize(table: &FeatureTable) -> FeatureTable {
    Discretizer::fit(table)
        .apply(table)
        .expect("a discretizer always matches the table it was fitted on")
}

/// Concatenates tables column-wise over the union of their subjects (sorted).
/// Missing (subject, table) cells are 0.
pub fn stack(tables: &[FeatureTable]) -> Result<FeatureTable> {
    let subjects: Vec<String> = tables
        .iter()
        .flat_map(|t| t.subjects.iter().cloned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut seen = BTreeMap::new();
    for t in tables {
        for c in &t.columns {
            if seen
                .insert((c.assignment_id.clone(), c.pattern.clone()), ())
                .is_some()
            {
                return Err(Error::Integrity(format!(
                    "duplicate feature column for assignment `{}` pattern `{}`",
                    c.assignment_id, c.pattern
                )));
            }
        }
    }
    let aligned: Vec<FeatureTable> = tables.iter().map(|t| t.select_rows(&subjects)).collect();
    let columns: Vec<FeatureColumn> = aligned
        .iter()
        .flat_map(|t| t.columns.iter().cloned())
        .collect();
    let mut values = Vec::with_capacity(subjects.len() * columns.len());
    for r in 0..subjects.len() {
        for t in &aligned {
            values.extend_from_slice(t.row(r));
        }
    }
    Ok(FeatureTable {
        subjects,
        columns,
        values,
        discretized: !tables.is_empty() && tables.iter().all(|t| t.discretized),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{BaseEvent, EventType};
    use crate::seqmine::collect_stats;
    use proptest::prelude::*;

    fn pat(xs: &[BaseEvent]) -> Pattern {
        Pattern::new(xs.iter().map(|&b| EventType::new(b)).collect())
    }

    fn seq(subject: &str, xs: &[BaseEvent]) -> EventSequence {
        EventSequence {
            subject_id: subject.into(),
            assignment_id: "A1".into(),
            events: xs.iter().map(|&b| EventType::new(b)).collect(),
            timestamps: vec![Default::default(); xs.len()],
        }
    }

    fn table(
        assignment: &str,
        class: PatternClass,
        cols: &[Vec<u32>],
        subjects: &[&str],
    ) -> FeatureTable {
        let columns = (0..cols.len())
            .map(|i| FeatureColumn {
                assignment_id: assignment.into(),
                pattern: pat(&BaseEvent::ALL[i..=i]),
                class,
            })
            .collect();
        FeatureTable::from_columns(
            subjects.iter().map(|s| s.to_string()).collect(),
            columns,
            cols,
            false,
        )
    }

    fn classified(
        p: Pattern,
        class: PatternClass,
        high: &[EventSequence],
        low: &[EventSequence],
    ) -> ClassifiedPattern {
        ClassifiedPattern {
            stats: collect_stats(&[p].into(), high, low, 0).remove(0),
            class,
            layer1: None,
            layer2: None,
        }
    }

    use BaseEvent::{Edit as A, Run as B};

    #[test]
    fn build_counts_occurrences() {
        let seqs = [seq("s1", &[A, B, A]), seq("s2", &[B])];
        let c = classified(pat(&[A]), PatternClass::FH, &seqs[..1], &seqs[1..]);
        let subjects = vec!["s1".to_string(), "s2".to_string(), "s3".to_string()];
        let t = build_feature_table("A1", &[c], &seqs, &subjects, 0);
        assert_eq!(t.column(0), vec![2, 0, 0]);
    }

    #[test]
    fn build_skips_discarded_and_handles_empty() {
        let seqs = [seq("s1", &[A])];
        let c = classified(pat(&[A]), PatternClass::Discarded, &seqs, &[]);
        let t = build_feature_table("A1", &[c], &seqs, &["s1".to_string()], 0);
        assert_eq!(t.n_cols(), 0);
        assert_eq!(t.n_rows(), 1);
    }

    #[test]
    fn build_reproduces_instance_supports() {
        let high = [seq("h1", &[A, B, A, B]), seq("h2", &[B, A, B])];
        let low = [seq("l1", &[A]), seq("l2", &[B, B, A, B])];
        let c = classified(pat(&[A, B]), PatternClass::DH, &high, &low);
        let all: Vec<EventSequence> = high.iter().chain(&low).cloned().collect();
        let subjects: Vec<String> = all.iter().map(|s| s.subject_id.clone()).collect();
        let t = build_feature_table("A1", std::slice::from_ref(&c), &all, &subjects, 0);
        for (r, s) in subjects.iter().enumerate() {
            let expected = c
                .stats
                .instance_supports_high
                .get(s)
                .or(c.stats.instance_supports_low.get(s));
            assert_eq!(Some(&t.get(r, 0)), expected);
        }
    }

    #[test]
    fn discretize_examples() {
        let two = table(
            "A1",
            PatternClass::FH,
            &[vec![0, 1, 2, 3]],
            &["a", "b", "c", "d"],
        );
        assert_eq!(discretize(&two).column(0), vec![0, 0, 1, 1]);

        let three = table(
            "A1",
            PatternClass::DH,
            &[vec![0, 1, 2, 3, 4, 5]],
            &["a", "b", "c", "d", "e", "f"],
        );
        // numpy.quantile([0..5], [1/3, 2/3]) = 1.667, 3.333
        match ColumnBins::fit(&three.column(0), PatternClass::DH) {
            ColumnBins::Three { lower, upper } => {
                assert!((lower - 5.0 / 3.0).abs() < 1e-12);
                assert!((upper - 10.0 / 3.0).abs() < 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(discretize(&three).column(0), vec![0, 0, 1, 1, 2, 2]);

        let constant = table("A1", PatternClass::FL, &[vec![2, 2, 2]], &["a", "b", "c"]);
        assert_eq!(discretize(&constant).column(0), vec![1, 1, 1]);
        let constant3 = table("A1", PatternClass::DL, &[vec![2, 2, 2]], &["a", "b", "c"]);
        assert_eq!(discretize(&constant3).column(0), vec![2, 2, 2]);
    }

    #[test]
    fn discretizer_rejects_other_schema() {
        let a = table("A1", PatternClass::FH, &[vec![0, 1]], &["a", "b"]);
        let b = table("A2", PatternClass::FH, &[vec![0, 1]], &["a", "b"]);
        assert!(matches!(
            Discretizer::fit(&a).apply(&b),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn stack_examples() {
        let t1 = table(
            "A1",
            PatternClass::FH,
            &[vec![1, 0], vec![0, 1]],
            &["s1", "s2"],
        );
        let t2 = table(
            "A2",
            PatternClass::DH,
            &[vec![2, 1], vec![0, 0], vec![1, 1]],
            &["s2", "s3"],
        );
        let s = stack(&[t1.clone(), t2]).unwrap();
        assert_eq!(s.n_cols(), 5);
        assert_eq!(s.subjects, vec!["s1", "s2", "s3"]);
        // s1 only in A1: zeros in A2 columns
        assert_eq!(s.row(0), &[1, 0, 0, 0, 0]);
        assert_eq!(s.row(2), &[0, 0, 1, 0, 1]);

        assert_eq!(stack(std::slice::from_ref(&t1)).unwrap(), t1);
        assert!(matches!(stack(&[t1.clone(), t1]), Err(Error::Integrity(_))));
    }

    #[test]
    fn csv_round_trip() {
        let t = table(
            "A1",
            PatternClass::FH,
            &[vec![1, 0], vec![3, 1]],
            &["s1", "s2"],
        );
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("subject_id,A1:EDIT:FH,A1:EDIT-INS:FH\n"));
        assert_eq!(FeatureTable::read_csv(buf.as_slice(), false).unwrap(), t);
    }

    fn arb_column() -> impl Strategy<Value = Vec<u32>> {
        prop::collection::vec(0u32..8, 1..40)
    }

    proptest! {
        #[test]
        fn discretize_is_monotone(col in arb_column(), three in any::<bool>()) {
            let class = if three { PatternClass::DL } else { PatternClass::FL };
            let bins = ColumnBins::fit(&col, class);
            for &a in &col {
                for &b in &col {
                    if a <= b { prop_assert!(bins.code(a) <= bins.code(b)); }
                }
            }
        }

        #[test]
        fn discretize_permutation_equivariant(col in arb_column(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut shuffled = col.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let a = ColumnBins::fit(&col, PatternClass::DH);
            let b = ColumnBins::fit(&shuffled, PatternClass::DH);
            prop_assert_eq!(a, b);
        }

        #[test]
        fn distinct_values_balance_bins(n in 2usize..60, three in any::<bool>()) {
            let col: Vec<u32> = (0..n as u32).collect();
            let class = if three { PatternClass::DH } else { PatternClass::FH };
            let bins = ColumnBins::fit(&col, class);
            let mut occupancy = vec![0usize; class.bins()];
            for &v in &col { occupancy[bins.code(v) as usize] += 1; }
            let (lo, hi) = (occupancy.iter().min().unwrap(), occupancy.iter().max().unwrap());
            prop_assert!(hi - lo <= 1, "{:?}", occupancy);
        }

        #[test]
        fn stack_is_associative(a in arb_column(), b in arb_column(), c in arb_column()) {
            let names = |n: usize, off: usize| -> Vec<String> { (0..n).map(|i| format!("s{}", i + off)).collect() };
            let mk = |asg: &str, col: &Vec<u32>, off: usize| {
                let subjects = names(col.len(), off);
                let refs: Vec<&str> = subjects.iter().map(String::as_str).collect();
                table(asg, PatternClass::FH, std::slice::from_ref(col), &refs)
            };
            let (t1, t2, t3) = (mk("A1", &a, 0), mk("A2", &b, 3), mk("A3", &c, 7));
            let left = stack(&[stack(&[t1.clone(), t2.clone()]).unwrap(), t3.clone()]).unwrap();
            let flat = stack(&[t1, t2, t3]).unwrap();
            prop_assert_eq!(left, flat);
        }
    }
}
