//! Differential sequence mining over programming-process logs.
//!
//! The crate turns time-stamped event logs into categorized event sequences,
//! mines gap-constrained frequent patterns separately for high- and
//! low-performing students, and labels each pattern with a two-layer test:
//! a 2x2 chi-square test on how many students exhibit it, then a Welch t-test
//! on how often it occurs per student. Surviving patterns become discretized
//! per-student features for an AdaBoost classifier evaluated with a modified
//! hold-out cross validation.
//!
//! Pipeline stages, in order:
//!
//! 1. [`ingest`]: parse a ProgSnap2 event table and build [`ingest::EventSequence`]s.
//! 2. [`seqmine`]: enumerate frequent patterns and collect per-group statistics.
//! 3. [`stats`]: chi-square / Welch t-test kernel and pattern classification.
//! 4. [`features`]: per-assignment feature tables, discretization, stacking.
//! 5. [`model`]: median-split labels, AdaBoost stumps, baselines, cross validation.
//! 6. [`report`]: interpretation tables and occurrence localization.
//!
//! [`synth`] generates labelled synthetic datasets with planted patterns and
//! [`pipeline`] wires the stages together for the command-line front end.
//!
//! With the default `parallel` feature the inner loops (pattern counting,
//! classification, cross-validation rotations) run on rayon; without it they
//! run sequentially with identical results.

pub mod error;
pub mod features;
pub mod ingest;
pub mod model;
pub mod par;
pub mod pipeline;
pub mod report;
pub mod seqmine;
pub mod special;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
