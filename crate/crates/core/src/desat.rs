//! Desaturation detection and ODI.
//!
//! Single left-to-right pass over the valid samples of a gated trace:
//!
//! 1. The baseline is the running maximum since the last reset or recovery.
//!    It rises whenever a sample reaches it and stays frozen otherwise.
//! 2. A candidate opens at the first sample at least `drop_threshold` below
//!    the baseline.
//! 3. The candidate tracks its nadir and closes at the first later sample that
//!    regains `1 - recovery_fraction` of the depth (so a new maximum always
//!    closes it), or once `max_event_duration` has elapsed since onset.
//! 4. It is emitted only if its onset-to-recovery span is strictly longer than
//!    `min_duration`. Baseline tracking restarts from the recovery sample.
//! 5. A missing run longer than `baseline_reset_gap` discards any open
//!    candidate and restarts the baseline at the next valid sample. Shorter
//!    runs are skipped over.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{DesatEvent, SampledTrace};

/// Absolute slack on the drop comparison so decimal-quantized data
/// (e.g. 97.13 -> 94.13) is not lost to binary rounding.
pub const DROP_TOLERANCE: f64 = 1e-9;

/// Minimum valid recording for a defined ODI.
pub const MIN_ANALYZABLE_S: f64 = 3600.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectConfig {
    /// Minimum drop below baseline, SpO2 percentage points.
    pub drop_threshold: f64,
    /// Events must last strictly longer than this (seconds).
    pub min_duration: f64,
    /// Fraction of the depth still missing when the event is considered recovered.
    pub recovery_fraction: f64,
    pub baseline_reset_gap: f64,
    pub max_event_duration: f64,
    /// ODI is undefined below this much valid data (seconds).
    pub min_analyzable: f64,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            drop_threshold: 3.0,
            min_duration: 5.0,
            recovery_fraction: 1.0 / 3.0,
            baseline_reset_gap: 30.0,
            max_event_duration: 300.0,
            min_analyzable: MIN_ANALYZABLE_S,
        }
    }
}

impl DetectConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| Err(Error::Config(format!("{what} invalid: {v}")));
        if !(self.drop_threshold > 0.0 && self.drop_threshold.is_finite()) {
            return bad("drop_threshold", self.drop_threshold);
        }
        if !(self.min_duration >= 0.0 && self.min_duration.is_finite()) {
            return bad("min_duration", self.min_duration);
        }
        if !(self.recovery_fraction > 0.0 && self.recovery_fraction <= 1.0) {
            return bad("recovery_fraction", self.recovery_fraction);
        }
        if self.baseline_reset_gap.is_nan() || self.baseline_reset_gap < 0.0 {
            return bad("baseline_reset_gap", self.baseline_reset_gap);
        }
        if self.max_event_duration.is_nan() || self.max_event_duration <= 0.0 {
            return bad("max_event_duration", self.max_event_duration);
        }
        if !(self.min_analyzable >= 0.0 && self.min_analyzable.is_finite()) {
            return bad("min_analyzable", self.min_analyzable);
        }
        Ok(())
    }
}

struct Candidate {
    onset: usize,
    nadir_idx: usize,
    nadir: f64,
}

pub fn detect_desaturations(trace: &SampledTrace, cfg: &DetectConfig) -> Vec<DesatEvent> {
    let period = trace.sample_period();
    let mut events = Vec::new();
    let mut baseline: Option<f64> = None;
    let mut open: Option<Candidate> = None;
    let mut last_valid: Option<usize> = None;

    for (i, v) in trace.values().iter().enumerate() {
        let Some(s) = *v else { continue };
        if let Some(prev) = last_valid {
            let gap = (i - prev - 1) as f64 * period;
            if gap > cfg.baseline_reset_gap {
                open = None;
                baseline = None;
            }
        }
        last_valid = Some(i);

        let Some(b) = baseline else {
            baseline = Some(s);
            continue;
        };

        match open.as_mut() {
            None => {
                if s >= b {
                    baseline = Some(s);
                } else if b - s >= cfg.drop_threshold - DROP_TOLERANCE {
                    open = Some(Candidate {
                        onset: i,
                        nadir_idx: i,
                        nadir: s,
                    });
                }
            }
            Some(c) => {
                if s < c.nadir {
                    c.nadir = s;
                    c.nadir_idx = i;
                }
                let depth = b - c.nadir;
                let recovered = s >= b - cfg.recovery_fraction * depth;
                let span = (i - c.onset) as f64 * period;
                if recovered || span >= cfg.max_event_duration {
                    if span > cfg.min_duration {
                        events.push(DesatEvent {
                            onset_idx: c.onset,
                            nadir_idx: c.nadir_idx,
                            recovery_idx: i,
                            baseline: b,
                            nadir_value: c.nadir,
                            depth,
                            duration: span,
                        });
                    }
                    open = None;
                    baseline = Some(s);
                }
            }
        }
    }
    events
}

/// Events per hour of valid data. Fails with [`Error::UndefinedOdi`] when
/// `valid_duration` is below `min_valid`.
pub fn compute_odi(events: &[DesatEvent], valid_duration: f64, min_valid: f64) -> Result<f64> {
    if valid_duration.is_nan() || valid_duration < 0.0 {
        return Err(Error::Domain(format!(
            "valid_duration must be >= 0, got {valid_duration}"
        )));
    }
    if valid_duration < min_valid || valid_duration == 0.0 {
        return Err(Error::UndefinedOdi {
            valid_duration,
            minimum: min_valid,
        });
    }
    Ok(events.len() as f64 / (valid_duration / 3600.0))
}

/// CSV with header `onset_s,nadir_s,recovery_s,baseline,nadir_value,depth,duration_s`.
pub fn write_events_csv<W: Write>(
    trace: &SampledTrace,
    events: &[DesatEvent],
    w: &mut W,
) -> std::io::Result<()> {
    writeln!(
        w,
        "onset_s,nadir_s,recovery_s,baseline,nadir_value,depth,duration_s"
    )?;
    for e in events {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            trace.time_at(e.onset_idx),
            trace.time_at(e.nadir_idx),
            trace.time_at(e.recovery_idx),
            e.baseline,
            e.nadir_value,
            e.depth,
            e.duration
        )?;
    }
    Ok(())
}
