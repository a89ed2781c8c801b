//! ProgSnap2 parsing and event categorization.
//!
//! A main event table is parsed into [`RawEvent`]s, which are then mapped onto
//! the eight [`BaseEvent`] kinds and grouped into one run-collapsed
//! [`EventSequence`] per (subject, assignment).

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::par;

pub const KIND_EDIT: &str = "File.Edit";
pub const KIND_RUN: &str = "Run.Program";
pub const KIND_CHANGE_CATEGORY: &str = "X-ChangeBlockCategory";
pub const KIND_ADD_VARIABLE: &str = "X-AddVariable";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawEvent {
    pub subject_id: String,
    pub assignment_id: String,
    pub order: u64,
    /// Milliseconds since the epoch.
    pub timestamp: Option<i64>,
    pub event_kind: String,
    pub edit_subtype: Option<String>,
    pub category_name: Option<String>,
    pub node_metric: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BaseEvent {
    Edit,
    EditIns,
    EditDel,
    EditPst,
    Run,
    File,
    Chan,
    Var,
}

impl BaseEvent {
    pub const ALL: [BaseEvent; 8] = [
        BaseEvent::Edit,
        BaseEvent::EditIns,
        BaseEvent::EditDel,
        BaseEvent::EditPst,
        BaseEvent::Run,
        BaseEvent::File,
        BaseEvent::Chan,
        BaseEvent::Var,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BaseEvent::Edit => "EDIT",
            BaseEvent::EditIns => "EDIT-INS",
            BaseEvent::EditDel => "EDIT-DEL",
            BaseEvent::EditPst => "EDIT-PST",
            BaseEvent::Run => "RUN",
            BaseEvent::File => "FILE",
            BaseEvent::Chan => "CHAN",
            BaseEvent::Var => "VAR",
        }
    }

    /// Maps a ProgSnap2 event kind (plus edit subtype) to a base event.
    /// Returns `None` for kinds outside the categorization scheme.
    pub fn from_kind(kind: &str, edit_subtype: Option<&str>) -> Option<BaseEvent> {
        match kind {
            KIND_EDIT => Some(match edit_subtype {
                Some("Insert") => BaseEvent::EditIns,
                Some("Delete") => BaseEvent::EditDel,
                Some("Paste") => BaseEvent::EditPst,
                _ => BaseEvent::Edit,
            }),
            KIND_RUN => Some(BaseEvent::Run),
            KIND_CHANGE_CATEGORY => Some(BaseEvent::Chan),
            KIND_ADD_VARIABLE => Some(BaseEvent::Var),
            k if k.starts_with("File.") => Some(BaseEvent::File),
            _ => None,
        }
    }
}

impl fmt::Display for BaseEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A categorized event, optionally suffixed with the block category that was
/// open when it happened (contextual scheme only).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EventType {
    pub base: BaseEvent,
    pub context: Option<String>,
}

impl EventType {
    pub fn new(base: BaseEvent) -> Self {
        EventType {
            base,
            context: None,
        }
    }

    pub fn with_context(base: BaseEvent, context: impl Into<String>) -> Self {
        EventType {
            base,
            context: Some(context.into()),
        }
    }

    pub fn general(&self) -> EventType {
        EventType::new(self.base)
    }
}

impl From<BaseEvent> for EventType {
    fn from(base: BaseEvent) -> Self {
        EventType::new(base)
    }
}

impl fmt::Display for EventType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.context {
            Some(c) => write!(f, "{}-{}", self.base, c),
            None => write!(f, "{}", self.base),
        }
    }
}

impl FromStr for EventType {
    type Err = Error;

    /// Parses `BASE` or `BASE-context`, taking the longest matching base name
    /// (so `EDIT-INS-pen` is `EDIT-INS` with context `pen`).
    fn from_str(s: &str) -> Result<Self> {
        let base = BaseEvent::ALL
            .iter()
            .filter(|b| s.starts_with(b.as_str()))
            .max_by_key(|b| b.as_str().len())
            .ok_or_else(|| Error::Format(format!("unknown event type `{s}`")))?;
        let rest = &s[base.as_str().len()..];
        if rest.is_empty() {
            Ok(EventType::new(*base))
        } else if let Some(ctx) = rest.strip_prefix('-').filter(|c| !c.is_empty()) {
            Ok(EventType::with_context(*base, ctx))
        } else {
            Err(Error::Format(format!("unknown event type `{s}`")))
        }
    }
}

impl Serialize for EventType {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for EventType {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    #[default]
    General,
    Contextual,
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "general" => Ok(Scheme::General),
            "contextual" => Ok(Scheme::Contextual),
            other => Err(Error::invalid_param(
                "scheme",
                format!("expected `general` or `contextual`, got `{other}`"),
            )),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::General => "general",
            Scheme::Contextual => "contextual",
        })
    }
}

/// Column mapping for the main event table. Defaults follow the ProgSnap2
/// standard names; the `X-` columns are dataset specific.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemeConfig {
    pub subject_column: String,
    pub assignment_column: String,
    pub order_column: String,
    pub event_type_column: String,
    pub timestamp_column: String,
    pub edit_type_column: String,
    pub category_column: String,
    pub node_metric_column: String,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        SchemeConfig {
            subject_column: "SubjectID".into(),
            assignment_column: "AssignmentID".into(),
            order_column: "Order".into(),
            event_type_column: "EventType".into(),
            timestamp_column: "ClientTimestamp".into(),
            edit_type_column: "EditType".into(),
            category_column: "X-BlockCategory".into(),
            node_metric_column: "X-MeaningfulNodes".into(),
        }
    }
}

impl SchemeConfig {
    /// Applies a `column.<field>` override. Returns false for unknown keys.
    pub fn set(&mut self, field: &str, value: &str) -> bool {
        let slot = match field {
            "subject" => &mut self.subject_column,
            "assignment" => &mut self.assignment_column,
            "order" => &mut self.order_column,
            "event_type" => &mut self.event_type_column,
            "timestamp" => &mut self.timestamp_column,
            "edit_type" => &mut self.edit_type_column,
            "category" => &mut self.category_column,
            "node_metric" => &mut self.node_metric_column,
            _ => return false,
        };
        *slot = value.to_string();
        true
    }
}

/// Parses a comma-separated ProgSnap2 main event table.
///
/// The output is sorted by (subject, assignment, order). Event kinds outside
/// the categorization scheme are kept; [`categorize`] drops them.
pub fn parse_progsnap2<R: Read>(input: R, mapping: &SchemeConfig) -> Result<Vec<RawEvent>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(input);
    let headers = reader.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h.trim() == name);
    let require =
        |name: &str| find(name).ok_or_else(|| Error::Format(format!("{name} column absent")));

    let subject_col = require(&mapping.subject_column)?;
    let assignment_col = require(&mapping.assignment_column)?;
    let order_col = require(&mapping.order_column)?;
    let kind_col = require(&mapping.event_type_column)?;
    let timestamp_col = find(&mapping.timestamp_column);
    let edit_col = find(&mapping.edit_type_column);
    let category_col = find(&mapping.category_column);
    let node_col = find(&mapping.node_metric_column);

    let optional = |record: &csv::StringRecord, col: Option<usize>| -> Option<String> {
        col.and_then(|c| record.get(c))
            .map(str::trim)
            .filter(|v| !v.is_empty())
            .map(str::to_string)
    };

    let mut events = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let field = |c: usize| record.get(c).unwrap_or("").trim();

        let order: u64 = field(order_col).parse().map_err(|_| Error::Row {
            line,
            message: format!(
                "non-integer {} `{}`",
                mapping.order_column,
                field(order_col)
            ),
        })?;
        let timestamp = match optional(&record, timestamp_col) {
            Some(v) => Some(v.parse::<i64>().map_err(|_| Error::Row {
                line,
                message: format!("non-integer {} `{v}`", mapping.timestamp_column),
            })?),
            None => None,
        };
        let node_metric = match optional(&record, node_col) {
            Some(v) => Some(v.parse::<u64>().map_err(|_| Error::Row {
                line,
                message: format!("non-integer {} `{v}`", mapping.node_metric_column),
            })?),
            None => None,
        };
        let event_kind = field(kind_col).to_string();
        let edit_subtype = if event_kind == KIND_EDIT {
            optional(&record, edit_col)
        } else {
            None
        };

        events.push(RawEvent {
            subject_id: field(subject_col).to_string(),
            assignment_id: field(assignment_col).to_string(),
            order,
            timestamp,
            event_kind,
            edit_subtype,
            category_name: optional(&record, category_col),
            node_metric,
        });
    }

    sort_raw(&mut events);
    for pair in events.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if a.subject_id == b.subject_id && a.assignment_id == b.assignment_id && a.order == b.order
        {
            return Err(Error::Integrity(format!(
                "duplicate order {} for subject `{}` assignment `{}`",
                a.order, a.subject_id, a.assignment_id
            )));
        }
    }
    Ok(events)
}

fn sort_raw(events: &mut [RawEvent]) {
    events.sort_by(|a, b| {
        (a.subject_id.as_str(), a.assignment_id.as_str(), a.order).cmp(&(
            b.subject_id.as_str(),
            b.assignment_id.as_str(),
            b.order,
        ))
    });
}

/// Timestamp range covered by one (possibly collapsed) event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TimeSpan {
    pub start: Option<i64>,
    pub end: Option<i64>,
}

impl TimeSpan {
    fn at(t: Option<i64>) -> Self {
        TimeSpan { start: t, end: t }
    }

    fn merge(self, other: TimeSpan) -> TimeSpan {
        TimeSpan {
            start: self.start.or(other.start),
            end: other.end.or(self.end),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventSequence {
    pub subject_id: String,
    pub assignment_id: String,
    pub events: Vec<EventType>,
    pub timestamps: Vec<TimeSpan>,
}

impl EventSequence {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// Replaces each maximal run of equal events with a single instance.
pub fn collapse_runs(events: &[EventType]) -> Vec<EventType> {
    let mut out: Vec<EventType> = Vec::with_capacity(events.len());
    for e in events {
        if out.last() != Some(e) {
            out.push(e.clone());
        }
    }
    out
}

fn collapse_with_times(events: Vec<(EventType, TimeSpan)>) -> (Vec<EventType>, Vec<TimeSpan>) {
    let mut types: Vec<EventType> = Vec::with_capacity(events.len());
    let mut spans: Vec<TimeSpan> = Vec::with_capacity(events.len());
    for (e, t) in events {
        if types.last() == Some(&e) {
            let last = spans.last_mut().expect("parallel vectors");
            *last = last.merge(t);
        } else {
            types.push(e);
            spans.push(t);
        }
    }
    (types, spans)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub rows: usize,
    pub kept: usize,
    pub dropped: usize,
    pub dropped_kinds: BTreeMap<String, usize>,
    pub sequences: usize,
}

/// Maps raw events onto categorized, run-collapsed sequences.
pub fn categorize(events: &[RawEvent], scheme: Scheme) -> Vec<EventSequence> {
    categorize_with_summary(events, scheme).0
}

pub fn categorize_with_summary(
    events: &[RawEvent],
    scheme: Scheme,
) -> (Vec<EventSequence>, IngestSummary) {
    let groups = group_ranges(events);
    let sequences = par::map(&groups, |&(start, end)| {
        categorize_group(&events[start..end], scheme)
    });

    let mut summary = IngestSummary {
        rows: events.len(),
        sequences: sequences.len(),
        ..Default::default()
    };
    for e in events {
        if BaseEvent::from_kind(&e.event_kind, e.edit_subtype.as_deref()).is_some() {
            summary.kept += 1;
        } else {
            summary.dropped += 1;
            *summary
                .dropped_kinds
                .entry(e.event_kind.clone())
                .or_default() += 1;
        }
    }
    (sequences, summary)
}

/// Contiguous index ranges of equal (subject, assignment) in sorted input.
pub(crate) fn group_ranges(events: &[RawEvent]) -> Vec<(usize, usize)> {
    let mut ranges = Vec::new();
    let mut start = 0;
    for i in 1..=events.len() {
        let boundary = i == events.len()
            || events[i].subject_id != events[start].subject_id
            || events[i].assignment_id != events[start].assignment_id;
        if boundary {
            if i > start {
                ranges.push((start, i));
            }
            start = i;
        }
    }
    ranges
}

fn categorize_group(group: &[RawEvent], scheme: Scheme) -> EventSequence {
    let mut open_category: Option<&str> = None;
    let mut mapped = Vec::with_capacity(group.len());
    for raw in group {
        let Some(base) = BaseEvent::from_kind(&raw.event_kind, raw.edit_subtype.as_deref()) else {
            continue;
        };
        let event = match scheme {
            Scheme::General => EventType::new(base),
            Scheme::Contextual if base == BaseEvent::Chan => {
                open_category = raw.category_name.as_deref().or(open_category);
                EventType::new(base)
            }
            Scheme::Contextual => match open_category {
                Some(c) => EventType::with_context(base, c),
                None => EventType::new(base),
            },
        };
        mapped.push((event, TimeSpan::at(raw.timestamp)));
    }
    let (events, timestamps) = collapse_with_times(mapped);
    EventSequence {
        subject_id: group[0].subject_id.clone(),
        assignment_id: group[0].assignment_id.clone(),
        events,
        timestamps,
    }
}

pub fn write_sequences_jsonl<W: Write>(mut out: W, sequences: &[EventSequence]) -> Result<()> {
    for s in sequences {
        serde_json::to_writer(&mut out, s)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_sequences_jsonl<R: BufRead>(input: R) -> Result<Vec<EventSequence>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Row {
            line: i as u64 + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Sequences of one assignment keyed by subject.
pub fn by_subject<'a>(
    sequences: &'a [EventSequence],
    assignment_id: &str,
) -> HashMap<&'a str, &'a EventSequence> {
    sequences
        .iter()
        .filter(|s| s.assignment_id == assignment_id)
        .map(|s| (s.subject_id.as_str(), s))
        .collect()
}
