//! Quality-index gating.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::SampledTrace;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GateConfig {
    /// Samples with quality strictly below this are treated as artefacts.
    pub qi_threshold: f64,
    /// Missing runs at most this long (seconds) and flanked by valid samples
    /// are linearly interpolated. 0 disables bridging.
    pub gap_bridge: f64,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            qi_threshold: 0.5,
            gap_bridge: 0.0,
        }
    }
}

impl GateConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.qi_threshold) {
            return Err(Error::Config(format!(
                "qi_threshold must be in [0, 1], got {}",
                self.qi_threshold
            )));
        }
        if !(self.gap_bridge >= 0.0 && self.gap_bridge.is_finite()) {
            return Err(Error::Config(format!(
                "gap_bridge must be >= 0, got {}",
                self.gap_bridge
            )));
        }
        Ok(())
    }
}

pub fn apply_gate(trace: &SampledTrace, cfg: &GateConfig) -> SampledTrace {
    let mut values: Vec<Option<f64>> = trace
        .values()
        .iter()
        .enumerate()
        .map(|(i, v)| v.filter(|_| trace.quality_at(i) >= cfg.qi_threshold))
        .collect();
    if cfg.gap_bridge > 0.0 {
        bridge_gaps(&mut values, trace.sample_period(), cfg.gap_bridge);
    }
    trace
        .with_values(values)
        .expect("gating keeps values within range")
}

fn bridge_gaps(values: &mut [Option<f64>], period: f64, max_gap: f64) {
    let mut last_valid: Option<usize> = None;
    for i in 0..values.len() {
        let Some(right) = values[i] else { continue };
        if let Some(l) = last_valid {
            let run = i - l - 1;
            if run > 0 && run as f64 * period <= max_gap {
                let left = values[l].expect("last_valid points at a valid sample");
                let span = (i - l) as f64;
                for (k, slot) in values[l + 1..i].iter_mut().enumerate() {
                    let frac = (k + 1) as f64 / span;
                    *slot = Some(left + (right - left) * frac);
                }
            }
        }
        last_valid = Some(i);
    }
}

/// Seconds of non-missing data.
pub fn valid_duration(trace: &SampledTrace) -> f64 {
    trace.valid_count() as f64 * trace.sample_period()
}
