//! Gap-constrained frequent sequential pattern mining.
//!
//! A pattern `p` *matches* a sequence `s` under `max_gap = g` when there are
//! indices `i1 < i2 < ... < ik` with `s[ij] == p[j]` and at most `g` skipped
//! events between consecutive matched indices.
//!
//! Occurrences are counted as non-overlapping embeddings found by a left to
//! right scan: the embedding that completes earliest is taken, and scanning
//! resumes after its last index. This yields the maximum number of
//! index-disjoint embedding spans.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{EventSequence, EventType};
use crate::par;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Pattern {
    pub events: Vec<EventType>,
}

impl Pattern {
    pub fn new(events: Vec<EventType>) -> Self {
        Pattern { events }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// True when `self` is a strict (not necessarily contiguous) subsequence
    /// of `other`.
    pub fn is_strict_subsequence_of(&self, other: &Pattern) -> bool {
        if self.len() >= other.len() {
            return false;
        }
        let mut it = other.events.iter();
        self.events.iter().all(|e| it.any(|x| x == e))
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.events.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl std::str::FromStr for Pattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let events = s
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<Vec<EventType>>>()?;
        if events.is_empty() {
            return Err(Error::Format("empty pattern".into()));
        }
        Ok(Pattern::new(events))
    }
}

impl From<Vec<EventType>> for Pattern {
    fn from(events: Vec<EventType>) -> Self {
        Pattern::new(events)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiningParams {
    pub min_percentile_support: f64,
    pub max_gap: usize,
    pub max_length: usize,
}

impl Default for MiningParams {
    fn default() -> Self {
        MiningParams {
            min_percentile_support: 0.4,
            max_gap: 1,
            max_length: 6,
        }
    }
}

impl MiningParams {
    pub fn validate(&self) -> Result<()> {
        let s = self.min_percentile_support;
        if !(s > 0.0 && s <= 1.0) {
            return Err(Error::invalid_param(
                "min-support",
                format!("must be in (0, 1], got {s}"),
            ));
        }
        if self.max_length == 0 {
            return Err(Error::invalid_param("max-length", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequentPatternStats {
    pub pattern: Pattern,
    pub seq_support_high: usize,
    pub seq_support_low: usize,
    pub foc_high: u64,
    pub foc_low: u64,
    pub instance_supports_high: BTreeMap<String, u32>,
    pub instance_supports_low: BTreeMap<String, u32>,
}

/// Whether `pattern` has a gap-valid embedding in `seq`.
pub fn matches<T: PartialEq>(pattern: &[T], seq: &[T], max_gap: usize) -> bool {
    earliest_completion(pattern, seq, 0, max_gap).is_some()
}

/// Number of non-overlapping gap-valid embeddings found by the left to right
/// earliest-completion scan.
pub fn count_instance_support<T: PartialEq>(pattern: &[T], seq: &[T], max_gap: usize) -> usize {
    let mut count = 0;
    let mut start = 0;
    while let Some(end) = earliest_completion(pattern, seq, start, max_gap) {
        count += 1;
        start = end + 1;
    }
    count
}

/// Index of the earliest position at which an embedding of `pattern` using
/// only indices `>= start` completes.
///
/// For each prefix length only the latest end position matters: a later end
/// leaves the widest window for the next element.
fn earliest_completion<T: PartialEq>(
    pattern: &[T],
    seq: &[T],
    start: usize,
    max_gap: usize,
) -> Option<usize> {
    let k = pattern.len();
    if k == 0 || seq.len() < start + k {
        return None;
    }
    // latest[m] = latest end index of an embedding of pattern[..=m]
    let mut latest: Vec<Option<usize>> = vec![None; k];
    for (j, item) in seq.iter().enumerate().skip(start) {
        for m in (0..k).rev() {
            if pattern[m] != *item {
                continue;
            }
            let extends = m == 0 || latest[m - 1].is_some_and(|i| j - i - 1 <= max_gap);
            if extends {
                if m == k - 1 {
                    return Some(j);
                }
                latest[m] = Some(j);
            }
        }
    }
    None
}

/// The embeddings counted by [`count_instance_support`], as matched index
/// lists. Each embedding ends at the earliest possible position; earlier
/// elements are taken as late as the gap constraint allows.
pub fn embeddings<T: PartialEq>(pattern: &[T], seq: &[T], max_gap: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    while let Some(end) = earliest_completion(pattern, seq, start, max_gap) {
        out.push(reconstruct(pattern, seq, start, end, max_gap));
        start = end + 1;
    }
    out
}

fn reconstruct<T: PartialEq>(
    pattern: &[T],
    seq: &[T],
    start: usize,
    end: usize,
    max_gap: usize,
) -> Vec<usize> {
    let k = pattern.len();
    let width = end + 1 - start;
    // reach[m][j - start]: some embedding of pattern[..=m] ends at j
    let mut reach = vec![vec![false; width]; k];
    for j in start..=end {
        for m in 0..k {
            if seq[j] != pattern[m] {
                continue;
            }
            reach[m][j - start] = m == 0
                || (j.saturating_sub(max_gap + 1).max(start)..j).any(|i| reach[m - 1][i - start]);
        }
    }
    let mut indices = vec![end; k];
    for m in (0..k - 1).rev() {
        let next = indices[m + 1];
        let lo = next.saturating_sub(max_gap + 1).max(start);
        indices[m] = (lo..next)
            .rev()
            .find(|&i| reach[m][i - start])
            .expect("completion implies a predecessor");
    }
    indices
}

/// Instance-support counter for one pattern over interned symbols. Gives the
/// same counts as [`count_instance_support`] in a single pass.
///
/// Patterns of up to 64 events run bit-parallel: bit `m` of a step's match
/// mask says that `pattern[..=m]` has an embedding ending at that step, and a
/// prefix can be extended while one of the last `max_gap + 1` masks holds it.
pub(crate) struct SymbolCounter {
    len: usize,
    max_gap: usize,
    /// Bit `m` set when `pattern[m]` is the symbol.
    masks: Vec<u64>,
    /// Pattern positions holding each symbol, highest first (long patterns).
    slots: Vec<Vec<usize>>,
}

const NONE: usize = usize::MAX;

impl SymbolCounter {
    pub(crate) fn new(pattern: &[u16], n_symbols: usize, max_gap: usize) -> Self {
        let mut masks = vec![0u64; n_symbols];
        let mut slots = vec![Vec::new(); n_symbols];
        for (m, &sym) in pattern.iter().enumerate().rev() {
            // an unknown symbol leaves its slot unfillable
            if (sym as usize) < n_symbols {
                if m < 64 {
                    masks[sym as usize] |= 1 << m;
                }
                slots[sym as usize].push(m);
            }
        }
        SymbolCounter {
            len: pattern.len(),
            max_gap,
            masks,
            slots,
        }
    }

    /// `scratch` is reused across calls.
    pub(crate) fn count(&self, seq: &[u16], scratch: &mut Vec<u64>) -> u32 {
        match (self.len, self.max_gap) {
            (0, _) => 0,
            (65.., _) => self.count_slots(seq),
            (_, 0) => self.count_fixed::<1>(seq),
            (_, 1) => self.count_fixed::<2>(seq),
            (_, 2) => self.count_fixed::<3>(seq),
            _ => self.count_bits(seq, scratch),
        }
    }

    /// [`Self::count_bits`] with the history in registers.
    fn count_fixed<const W: usize>(&self, seq: &[u16]) -> u32 {
        let mut history = [0u64; W];
        let last = 1u64 << (self.len - 1);
        let mut count = 0;
        for &sym in seq {
            let mask = self.masks.get(sym as usize).copied().unwrap_or(0);
            let window = history.iter().fold(0, |acc, h| acc | h);
            let mut hits = ((window << 1) | 1) & mask;
            if hits & last != 0 {
                count += 1;
                history = [0; W];
                hits = 0;
            }
            history.rotate_right(1);
            history[0] = hits;
        }
        count
    }

    fn count_bits(&self, seq: &[u16], history: &mut Vec<u64>) -> u32 {
        let width = self.max_gap + 1;
        history.clear();
        history.resize(width, 0);
        let last = 1u64 << (self.len - 1);
        let mut slot = 0;
        let mut count = 0;
        for &sym in seq {
            let mask = self.masks.get(sym as usize).copied().unwrap_or(0);
            let window = history.iter().fold(0, |acc, h| acc | h);
            let mut hits = ((window << 1) | 1) & mask;
            if hits & last != 0 {
                // resume after this embedding
                count += 1;
                history.fill(0);
                hits = 0;
            }
            history[slot] = hits;
            slot = if slot + 1 == width { 0 } else { slot + 1 };
        }
        count
    }

    fn count_slots(&self, seq: &[u16]) -> u32 {
        let k = self.len;
        let mut latest = vec![NONE; k];
        let mut count = 0;
        for (j, &sym) in seq.iter().enumerate() {
            let Some(slots) = self.slots.get(sym as usize) else {
                continue;
            };
            for &m in slots {
                let extends =
                    m == 0 || (latest[m - 1] != NONE && j - latest[m - 1] - 1 <= self.max_gap);
                if !extends {
                    continue;
                }
                if m == k - 1 {
                    count += 1;
                    latest.fill(NONE);
                    break;
                }
                latest[m] = j;
            }
        }
        count
    }
}

/// Symbol table used to mine over compact integer alphabets.
pub(crate) struct Alphabet {
    symbols: Vec<EventType>,
    index: HashMap<EventType, u16>,
}

impl Alphabet {
    pub(crate) fn from_sequences<'a>(seqs: impl IntoIterator<Item = &'a EventSequence>) -> Self {
        Self::from_events(seqs.into_iter().flat_map(|s| s.events.iter()))
    }

    pub(crate) fn from_events<'a>(events: impl IntoIterator<Item = &'a EventType>) -> Self {
        let set: BTreeSet<&EventType> = events.into_iter().collect();
        let symbols: Vec<EventType> = set.into_iter().cloned().collect();
        let index = symbols
            .iter()
            .enumerate()
            .map(|(i, e)| (e.clone(), i as u16))
            .collect();
        Alphabet { symbols, index }
    }

    pub(crate) fn len(&self) -> usize {
        self.symbols.len()
    }

    /// Unknown events map to a symbol that matches nothing.
    pub(crate) fn encode(&self, events: &[EventType]) -> Vec<u16> {
        events
            .iter()
            .map(|e| self.index.get(e).copied().unwrap_or(u16::MAX))
            .collect()
    }

    fn decode(&self, syms: &[u16]) -> Pattern {
        Pattern::new(
            syms.iter()
                .map(|&s| self.symbols[s as usize].clone())
                .collect(),
        )
    }
}

/// Enumerates every pattern of length `<= max_length` contained (under
/// `max_gap`) in at least `min_percentile_support` of `sequences`.
///
/// Patterns grow one event at a time from frequent prefixes. For each
/// candidate the set of end positions of its gap-valid embeddings is kept per
/// sequence; extending by one event only inspects the `max_gap + 1` positions
/// after each end.
pub fn enumerate_frequent(
    sequences: &[EventSequence],
    params: &MiningParams,
) -> Result<BTreeSet<Pattern>> {
    if sequences.is_empty() {
        return Err(Error::Precondition(
            "enumerate_frequent needs at least one sequence".into(),
        ));
    }
    let s = params.min_percentile_support;
    if s.is_nan() || s <= 0.0 {
        return Err(Error::invalid_param(
            "min-support",
            format!("must be positive, got {s}"),
        ));
    }
    if params.max_length == 0 {
        return Err(Error::invalid_param("max-length", "must be at least 1"));
    }

    let alphabet = Alphabet::from_sequences(sequences);
    let encoded: Vec<Vec<u16>> = sequences
        .iter()
        .map(|s| alphabet.encode(&s.events))
        .collect();
    let miner = Miner {
        seqs: &encoded,
        n_symbols: alphabet.symbols.len(),
        n_total: sequences.len(),
        min_support: s,
        max_gap: params.max_gap,
        max_length: params.max_length,
    };

    let roots = miner.roots();
    let found = par::map(&roots, |(sym, ends)| {
        let mut out = Vec::new();
        let mut prefix = vec![*sym];
        miner.grow(&mut prefix, ends, &mut out);
        out
    });
    Ok(found
        .into_iter()
        .flatten()
        .map(|p| alphabet.decode(&p))
        .collect())
}

type Ends = Vec<Vec<u32>>;

struct Miner<'a> {
    seqs: &'a [Vec<u16>],
    n_symbols: usize,
    n_total: usize,
    min_support: f64,
    max_gap: usize,
    max_length: usize,
}

impl Miner<'_> {
    fn is_frequent(&self, ends: &Ends) -> bool {
        let support = ends.iter().filter(|e| !e.is_empty()).count();
        support as f64 / self.n_total as f64 >= self.min_support
    }

    fn roots(&self) -> Vec<(u16, Ends)> {
        let mut by_sym: Vec<Ends> = vec![vec![Vec::new(); self.seqs.len()]; self.n_symbols];
        for (si, seq) in self.seqs.iter().enumerate() {
            for (j, &sym) in seq.iter().enumerate() {
                by_sym[sym as usize][si].push(j as u32);
            }
        }
        by_sym
            .into_iter()
            .enumerate()
            .filter(|(_, ends)| self.is_frequent(ends))
            .map(|(sym, ends)| (sym as u16, ends))
            .collect()
    }

    fn grow(&self, prefix: &mut Vec<u16>, ends: &Ends, out: &mut Vec<Vec<u16>>) {
        out.push(prefix.clone());
        if prefix.len() >= self.max_length {
            return;
        }
        let mut next: Vec<Ends> = vec![vec![Vec::new(); self.seqs.len()]; self.n_symbols];
        for (si, seq_ends) in ends.iter().enumerate() {
            let seq = &self.seqs[si];
            for &i in seq_ends {
                let i = i as usize;
                let hi = (i + self.max_gap + 1).min(seq.len() - 1);
                for j in i + 1..=hi {
                    let bucket = &mut next[seq[j] as usize][si];
                    if bucket.last().is_none_or(|&last| (j as u32) > last) {
                        bucket.push(j as u32);
                    }
                }
            }
        }
        for (sym, ext) in next.iter().enumerate() {
            if self.is_frequent(ext) {
                prefix.push(sym as u16);
                self.grow(prefix, ext, out);
                prefix.pop();
            }
        }
    }
}

/// Union of the frequent patterns mined separately in each non-empty group.
pub fn mine_groups(
    high: &[EventSequence],
    low: &[EventSequence],
    params: &MiningParams,
) -> Result<BTreeSet<Pattern>> {
    let mut all = BTreeSet::new();
    for group in [high, low] {
        if !group.is_empty() {
            all.extend(enumerate_frequent(group, params)?);
        }
    }
    Ok(all)
}

/// Per-pattern sequence supports, occurrence totals and per-subject instance
/// supports in both groups.
pub fn collect_stats(
    patterns: &BTreeSet<Pattern>,
    high: &[EventSequence],
    low: &[EventSequence],
    max_gap: usize,
) -> Vec<FrequentPatternStats> {
    let alphabet = Alphabet::from_sequences(high.iter().chain(low));
    let enc = |group: &[EventSequence]| -> Vec<(String, Vec<u16>)> {
        group
            .iter()
            .map(|s| (s.subject_id.clone(), alphabet.encode(&s.events)))
            .collect()
    };
    let high_enc = enc(high);
    let low_enc = enc(low);
    let patterns: Vec<&Pattern> = patterns.iter().collect();

    par::map(&patterns, |pattern| {
        let counter =
            SymbolCounter::new(&alphabet.encode(&pattern.events), alphabet.len(), max_gap);
        let mut scratch = Vec::new();
        let mut count_group = |group: &[(String, Vec<u16>)]| -> BTreeMap<String, u32> {
            group
                .iter()
                .map(|(subject, seq)| (subject.clone(), counter.count(seq, &mut scratch)))
                .collect()
        };
        let inst_high = count_group(&high_enc);
        let inst_low = count_group(&low_enc);
        FrequentPatternStats {
            pattern: (*pattern).clone(),
            seq_support_high: inst_high.values().filter(|&&c| c > 0).count(),
            seq_support_low: inst_low.values().filter(|&&c| c > 0).count(),
            foc_high: inst_high.values().map(|&c| c as u64).sum(),
            foc_low: inst_low.values().map(|&c| c as u64).sum(),
            instance_supports_high: inst_high,
            instance_supports_low: inst_low,
        }
    })
}
