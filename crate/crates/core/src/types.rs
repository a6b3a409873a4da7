//! Shared domain types.
//!
//! SpO2 values are percentages, durations are seconds and ODI/AHI are
//! events per hour throughout the crate. A missing sample is `None`,
//! never the number 0.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Measurement location of an SpO2 trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Site {
    Fingertip,
    UpperArm,
    Wrist,
}

impl Site {
    pub const ALL: [Site; 3] = [Site::Fingertip, Site::UpperArm, Site::Wrist];

    pub fn as_str(self) -> &'static str {
        match self {
            Site::Fingertip => "fingertip",
            Site::UpperArm => "upper_arm",
            Site::Wrist => "wrist",
        }
    }

    pub fn index(self) -> u64 {
        match self {
            Site::Fingertip => 0,
            Site::UpperArm => 1,
            Site::Wrist => 2,
        }
    }
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Site {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "fingertip" => Ok(Site::Fingertip),
            "upper_arm" => Ok(Site::UpperArm),
            "wrist" => Ok(Site::Wrist),
            other => Err(Error::Config(format!("unknown site '{other}'"))),
        }
    }
}

/// Uniformly sampled SpO2 series with an optional per-sample quality index.
///
/// Timestamps are implicit: `t(i) = start_epoch + i * sample_period`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledTrace {
    start_epoch: f64,
    sample_period: f64,
    values: Vec<Option<f64>>,
    quality: Option<Vec<f64>>,
}

impl SampledTrace {
    pub fn new(
        start_epoch: f64,
        sample_period: f64,
        values: Vec<Option<f64>>,
        quality: Option<Vec<f64>>,
    ) -> Result<Self> {
        if !start_epoch.is_finite() {
            return Err(Error::InvalidTrace("start_epoch must be finite".into()));
        }
        if !(sample_period > 0.0 && sample_period.is_finite()) {
            return Err(Error::InvalidTrace(format!(
                "sample_period must be positive, got {sample_period}"
            )));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find_map(|(i, v)| v.filter(|v| !(0.0..=100.0).contains(v)).map(|v| (i, v)))
        {
            return Err(Error::InvalidTrace(format!(
                "sample {i}: SpO2 {v} outside [0, 100]"
            )));
        }
        if let Some(q) = &quality {
            if q.len() != values.len() {
                return Err(Error::InvalidTrace(format!(
                    "quality length {} != values length {}",
                    q.len(),
                    values.len()
                )));
            }
            if let Some((i, q)) = q
                .iter()
                .enumerate()
                .find(|(_, q)| !(0.0..=1.0).contains(*q))
            {
                return Err(Error::InvalidTrace(format!(
                    "sample {i}: quality {q} outside [0, 1]"
                )));
            }
        }
        Ok(Self {
            start_epoch,
            sample_period,
            values,
            quality,
        })
    }

    /// Fully valid 1 Hz trace starting at 0 with no quality channel.
    pub fn from_values(values: &[f64]) -> Result<Self> {
        Self::new(0.0, 1.0, values.iter().copied().map(Some).collect(), None)
    }

    pub fn start_epoch(&self) -> f64 {
        self.start_epoch
    }

    pub fn sample_period(&self) -> f64 {
        self.sample_period
    }

    pub fn values(&self) -> &[Option<f64>] {
        &self.values
    }

    pub fn quality(&self) -> Option<&[f64]> {
        self.quality.as_deref()
    }

    /// Quality at `i`; 1.0 when the trace carries no quality channel.
    pub fn quality_at(&self, i: usize) -> f64 {
        self.quality.as_ref().map_or(1.0, |q| q[i])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn time_at(&self, i: usize) -> f64 {
        self.start_epoch + i as f64 * self.sample_period
    }

    pub fn valid_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }

    /// Same grid and quality, new values. Values are range-checked.
    pub fn with_values(&self, values: Vec<Option<f64>>) -> Result<Self> {
        Self::new(
            self.start_epoch,
            self.sample_period,
            values,
            self.quality.clone(),
        )
    }

    pub fn into_parts(self) -> (f64, f64, Vec<Option<f64>>, Option<Vec<f64>>) {
        (
            self.start_epoch,
            self.sample_period,
            self.values,
            self.quality,
        )
    }
}

/// One detected desaturation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesatEvent {
    pub onset_idx: usize,
    pub nadir_idx: usize,
    pub recovery_idx: usize,
    pub baseline: f64,
    pub nadir_value: f64,
    pub depth: f64,
    pub duration: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub age: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sex: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bmi: Option<f64>,
}

/// One subject: reference AHI plus one trace per measurement site.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecord {
    pub subject_id: String,
    pub ahi_ref: f64,
    pub traces: BTreeMap<Site, SampledTrace>,
    pub metadata: Option<Metadata>,
}

impl SubjectRecord {
    pub fn new(
        subject_id: impl Into<String>,
        ahi_ref: f64,
        traces: BTreeMap<Site, SampledTrace>,
        metadata: Option<Metadata>,
    ) -> Result<Self> {
        let subject_id = subject_id.into();
        if !(ahi_ref.is_finite() && ahi_ref >= 0.0) {
            return Err(Error::Domain(format!(
                "subject {subject_id}: ahi_ref must be finite and >= 0, got {ahi_ref}"
            )));
        }
        if traces.is_empty() {
            return Err(Error::Domain(format!(
                "subject {subject_id}: at least one site is required"
            )));
        }
        Ok(Self {
            subject_id,
            ahi_ref,
            traces,
            metadata,
        })
    }
}

/// Per-subject, per-site detection outcome.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisResult {
    pub subject_id: String,
    pub site: Site,
    pub odi: f64,
    pub n_events: usize,
    pub valid_duration: f64,
    pub events: Vec<DesatEvent>,
}

/// AHI severity band. Lower bounds are inclusive: 5 is Mild, 15 Moderate, 30 Severe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeverityClass {
    Normal,
    Mild,
    Moderate,
    Severe,
}

pub const MILD_AHI: f64 = 5.0;
pub const MODERATE_AHI: f64 = 15.0;
pub const SEVERE_AHI: f64 = 30.0;

pub fn severity_class(ahi: f64) -> Result<SeverityClass> {
    if !ahi.is_finite() || ahi < 0.0 {
        return Err(Error::Domain(format!(
            "AHI must be finite and >= 0, got {ahi}"
        )));
    }
    Ok(if ahi < MILD_AHI {
        SeverityClass::Normal
    } else if ahi < MODERATE_AHI {
        SeverityClass::Mild
    } else if ahi < SEVERE_AHI {
        SeverityClass::Moderate
    } else {
        SeverityClass::Severe
    })
}

/// Binary screening label for the task "AHI > cutoff".
pub fn binarize(ahi: f64, cutoff: f64) -> bool {
    ahi > cutoff
}
