//! Pulse-oximetry desaturation analysis: quality gating, event detection,
//! ODI, screening statistics and a synthetic cohort generator.
//!
//! The data-parallel paths use rayon when the `parallel` feature is enabled
//! (the default); every entry point also takes an [`Execution`] so callers can
//! force the sequential path.

pub mod cli;
pub mod desat;
pub mod error;
pub mod gating;
pub mod ingest;
pub mod par;
pub mod pipeline;
pub mod report;
pub mod screening;
pub mod stats;
pub mod synth;
pub mod types;

pub use desat::{compute_odi, detect_desaturations, DetectConfig};
pub use error::{Error, Result};
pub use gating::{apply_gate, valid_duration, GateConfig};
pub use ingest::{load_cohort, parse_trace_csv, CohortManifest};
pub use par::Execution;
pub use pipeline::{analyze_site, analyze_trace};
pub use report::{build_cohort_report, RunConfig};
pub use screening::{evaluate_at, roc_curve, select_threshold, LabeledScore};
pub use stats::{bland_altman, compare_spo2, linear_fit};
pub use synth::{generate_cohort, generate_subject, SynthSpec};
pub use types::{
    binarize, severity_class, AnalysisResult, DesatEvent, SampledTrace, SeverityClass, Site,
    SubjectRecord,
};
