//! Budget-accounted entity perturbation with trajectory-based text
//! classification.
//!
//! The crate has two halves. The sanitization half finds entity mentions in
//! a document, splits a privacy budget across them through noisy per-kind
//! counts, and replaces each mention with a Laplace-noised number or an
//! exponentially weighted pool resample, booking every charge against an
//! accountant ledger. The detection half sanitizes each document at a grid
//! of budget levels, measures how its token scores under a trigram model
//! shift at each level, and trains a logistic classifier on the flattened
//! shift trajectories to separate machine-generated from human-written
//! text.
//!
//! All randomness is routed through seeded, streamed generators, so every
//! result in the crate is reproducible from `(seed, input)` alone.

// Parameter guards are written `!(x > 0.0)` so NaN fails validation; the
// lint's suggested `x <= 0.0` form would let NaN through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alloc;
pub mod config;
pub mod corpus;
pub mod detect;
pub mod entity;
pub mod error;
pub mod extract;
pub mod features;
pub mod mech;
pub mod pipeline;
pub mod sanitize;
pub mod scorer;
pub mod stats;

pub use alloc::{AccountantLedger, BucketKey, BudgetPlan};
pub use config::{GridSpec, RunConfig};
pub use corpus::{Document, FilterPolicy, Label, SynthConfig};
pub use detect::{ClassifierModel, DataRow, EvalMetrics, TrainConfig};
pub use entity::{EntityClass, EntityKind, EntitySpan, SensitivityRegistry, WeightMode};
pub use error::{Error, Result};
pub use extract::{extract, AnnotationSpan, ExtractionResult};
pub use features::{extract_trajectory, FeatureTrajectory};
pub use mech::{MechanismKind, PerturbedValue, RandomSource};
pub use pipeline::{run_pipeline, FeatureRecord, PipelineSummary};
pub use sanitize::{
    audit, default_epsilon_grid, epsilon_grid, sanitize, sanitize_grid, AuditRecord,
    SanitizeConfig, SanitizedDocument,
};
pub use scorer::{Metric, TrigramScorer};
