//! Per-trace and per-site gate -> detect -> ODI pipeline.

use serde::Serialize;

use crate::desat::{compute_odi, detect_desaturations, DetectConfig};
use crate::error::Result;
use crate::gating::{apply_gate, valid_duration, GateConfig};
use crate::par::{self, Execution};
use crate::types::{AnalysisResult, SampledTrace, Site, SubjectRecord};

pub fn analyze_trace(
    subject_id: &str,
    site: Site,
    trace: &SampledTrace,
    gate_cfg: &GateConfig,
    detect_cfg: &DetectConfig,
) -> Result<AnalysisResult> {
    let gated = apply_gate(trace, gate_cfg);
    let events = detect_desaturations(&gated, detect_cfg);
    let valid = valid_duration(&gated);
    let odi = compute_odi(&events, valid, detect_cfg.min_analyzable)?;
    Ok(AnalysisResult {
        subject_id: subject_id.to_owned(),
        site,
        odi,
        n_events: events.len(),
        valid_duration: valid,
        events,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubjectFailure {
    pub subject_id: String,
    pub site: Site,
    pub message: String,
}

/// Outcome for one site across a cohort, in subject-id order.
#[derive(Debug)]
pub struct SiteAnalysis {
    pub site: Site,
    /// (subject id, reference AHI, analysis outcome); subjects without a trace
    /// at this site are omitted.
    pub subjects: Vec<(String, f64, Result<AnalysisResult>)>,
}

impl SiteAnalysis {
    pub fn usable(&self) -> Vec<(&AnalysisResult, f64)> {
        self.subjects
            .iter()
            .filter_map(|(_, ahi, r)| r.as_ref().ok().map(|r| (r, *ahi)))
            .collect()
    }

    pub fn failures(&self) -> Vec<SubjectFailure> {
        self.subjects
            .iter()
            .filter_map(|(id, _, r)| {
                r.as_ref().err().map(|e| SubjectFailure {
                    subject_id: id.clone(),
                    site: self.site,
                    message: e.to_string(),
                })
            })
            .collect()
    }

    pub fn result_for(&self, subject_id: &str) -> Option<&AnalysisResult> {
        self.subjects
            .iter()
            .find(|(id, _, _)| id == subject_id)
            .and_then(|(_, _, r)| r.as_ref().ok())
    }
}

pub fn analyze_site(
    records: &[SubjectRecord],
    site: Site,
    gate_cfg: &GateConfig,
    detect_cfg: &DetectConfig,
    exec: Execution,
) -> SiteAnalysis {
    let mut present: Vec<&SubjectRecord> = records
        .iter()
        .filter(|r| r.traces.contains_key(&site))
        .collect();
    present.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
    let results = par::map(exec, &present, |r| {
        analyze_trace(&r.subject_id, site, &r.traces[&site], gate_cfg, detect_cfg)
    });
    SiteAnalysis {
        site,
        subjects: present
            .into_iter()
            .zip(results)
            .map(|(r, res)| (r.subject_id.clone(), r.ahi_ref, res))
            .collect(),
    }
}

/// Gates every trace of `site` across `records` (subject-id order) for SpO2 comparison.
pub fn gated_traces<'a>(
    records: &'a [SubjectRecord],
    site: Site,
    gate_cfg: &GateConfig,
    exec: Execution,
) -> Vec<(&'a str, SampledTrace)> {
    let present: Vec<&SubjectRecord> = records
        .iter()
        .filter(|r| r.traces.contains_key(&site))
        .collect();
    let gated = par::map(exec, &present, |r| apply_gate(&r.traces[&site], gate_cfg));
    present
        .into_iter()
        .map(|r| r.subject_id.as_str())
        .zip(gated)
        .collect()
}
