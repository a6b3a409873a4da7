//! ODI-threshold screening: ROC/AUC, threshold calibration and
//! confusion-matrix metrics.
//!
//! Decision rule everywhere: predict positive iff `score > threshold`.

use std::io::Write;

use serde::Serialize;

use crate::desat::DetectConfig;
use crate::error::{Error, Result};
use crate::gating::GateConfig;
use crate::par::Execution;
use crate::pipeline::{self, SiteAnalysis, SubjectFailure};
use crate::stats::{linear_fit, LinFit};
use crate::types::{binarize, Site, SubjectRecord};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabeledScore {
    pub subject_id: String,
    pub score: f64,
    pub label: bool,
}

impl LabeledScore {
    pub fn new(subject_id: impl Into<String>, score: f64, label: bool) -> Self {
        Self {
            subject_id: subject_id.into(),
            score,
            label,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RocCurve {
    /// From (0, 0) at the highest threshold to (1, 1) below the lowest score.
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

impl RocCurve {
    /// CSV `threshold,fpr,tpr`.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "threshold,fpr,tpr")?;
        for p in &self.points {
            writeln!(w, "{},{},{}", p.threshold, p.fpr, p.tpr)?;
        }
        Ok(())
    }
}

/// Confusion counts and percentages at one threshold. Percentages are NaN
/// when their denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassificationMetrics {
    pub threshold: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub accuracy: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ClassificationMetrics {
    fn from_counts(threshold: f64, tp: usize, fp: usize, tn: usize, fn_: usize) -> Self {
        let pct = |num: usize, den: usize| {
            if den == 0 {
                f64::NAN
            } else {
                100.0 * num as f64 / den as f64
            }
        };
        Self {
            threshold,
            sensitivity: pct(tp, tp + fn_),
            specificity: pct(tn, tn + fp),
            accuracy: pct(tp + tn, tp + fp + tn + fn_),
            tp,
            fp,
            tn,
            fn_,
        }
    }

    /// sens^2 + spec^2 on the 0-1 scale.
    pub fn objective(&self) -> f64 {
        (self.sensitivity / 100.0).powi(2) + (self.specificity / 100.0).powi(2)
    }
}

fn check_binary(data: &[LabeledScore]) -> Result<(usize, usize)> {
    if let Some(bad) = data
        .iter()
        .find(|d| !(d.score.is_finite() && d.score >= 0.0))
    {
        return Err(Error::Domain(format!(
            "subject {}: score must be finite and >= 0, got {}",
            bad.subject_id, bad.score
        )));
    }
    let pos = data.iter().filter(|d| d.label).count();
    let neg = data.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateInput(format!(
            "both classes required ({pos} positive, {neg} negative)"
        )));
    }
    Ok((pos, neg))
}

/// (score, positives, negatives) per distinct score, ascending.
fn grouped_ascending(data: &[LabeledScore]) -> Vec<(f64, usize, usize)> {
    let mut scored: Vec<(f64, bool)> = data.iter().map(|d| (d.score, d.label)).collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut groups: Vec<(f64, usize, usize)> = Vec::new();
    for (s, label) in scored {
        match groups.last_mut() {
            Some(g) if g.0 == s => {
                if label {
                    g.1 += 1
                } else {
                    g.2 += 1
                }
            }
            _ => groups.push((s, label as usize, (!label) as usize)),
        }
    }
    groups
}

pub fn roc_curve(data: &[LabeledScore]) -> Result<RocCurve> {
    let (pos, neg) = check_binary(data)?;
    let groups = grouped_ascending(data);

    let mut points = Vec::with_capacity(groups.len() + 1);
    let (mut tp, mut fp) = (0usize, 0usize);
    // twice the area in units of one (positive, negative) pair
    let mut area2: u128 = 0;
    for (score, p, n) in groups.iter().rev() {
        points.push(RocPoint {
            threshold: *score,
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        });
        area2 += (*n as u128) * (2 * tp as u128 + *p as u128);
        tp += p;
        fp += n;
    }
    points.push(RocPoint {
        threshold: groups[0].0 - 1.0,
        fpr: 1.0,
        tpr: 1.0,
    });
    Ok(RocCurve {
        points,
        auc: area2 as f64 / (2 * pos as u128 * neg as u128) as f64,
    })
}

/// Threshold maximizing sens^2 + spec^2 over candidates {min - 1, midpoints
/// between adjacent distinct scores, max + 1}; ties go to the smallest threshold.
pub fn select_threshold(data: &[LabeledScore]) -> Result<(f64, ClassificationMetrics)> {
    let (pos, neg) = check_binary(data)?;
    let groups = grouped_ascending(data);

    // Candidate k sits below group k (k == groups.len() is above everything).
    // Predicted positive = groups k.. ; tp = positives there, tn = negatives below.
    let mut best: Option<(u128, f64, usize, usize)> = None;
    let (mut pos_below, mut neg_below) = (0usize, 0usize);
    for k in 0..=groups.len() {
        let theta = if k == 0 {
            groups[0].0 - 1.0
        } else if k == groups.len() {
            groups[k - 1].0 + 1.0
        } else {
            (groups[k - 1].0 + groups[k].0) / 2.0
        };
        if k > 0 {
            pos_below += groups[k - 1].1;
            neg_below += groups[k - 1].2;
        }
        let tp = pos - pos_below;
        let tn = neg_below;
        // J * P^2 N^2, exact in integers
        let j =
            (tp as u128).pow(2) * (neg as u128).pow(2) + (tn as u128).pow(2) * (pos as u128).pow(2);
        if best.is_none_or(|b| j > b.0) {
            best = Some((j, theta, tp, tn));
        }
    }
    let (_, theta, tp, tn) = best.expect("at least one candidate");
    Ok((
        theta,
        ClassificationMetrics::from_counts(theta, tp, neg - tn, tn, pos - tp),
    ))
}

pub fn evaluate_at(data: &[LabeledScore], threshold: f64) -> ClassificationMetrics {
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for d in data {
        match (d.score > threshold, d.label) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    ClassificationMetrics::from_counts(threshold, tp, fp, tn, fn_)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScatterPoint {
    pub subject_id: String,
    pub odi: f64,
    pub ahi_ref: f64,
}

/// One site x cutoff cell: screening metrics plus the ROC and ODI/AHI scatter.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CohortSiteReport {
    pub site: Site,
    pub cutoff: f64,
    pub n_subjects: usize,
    pub n_positive: usize,
    pub auc: f64,
    pub threshold: f64,
    pub metrics: ClassificationMetrics,
    pub roc: RocCurve,
    pub scatter: Vec<ScatterPoint>,
    /// AHI regressed on ODI; `None` when all ODIs are equal.
    pub fit: Option<LinFit>,
    pub failures: Vec<SubjectFailure>,
}

/// Screening cell from an already-analyzed site.
pub fn evaluate_site(analysis: &SiteAnalysis, cutoff: f64) -> Result<CohortSiteReport> {
    let usable = analysis.usable();
    if usable.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "site {}: {} usable subject(s), need at least 2",
            analysis.site,
            usable.len()
        )));
    }
    let data: Vec<LabeledScore> = usable
        .iter()
        .map(|(r, ahi)| LabeledScore::new(r.subject_id.clone(), r.odi, binarize(*ahi, cutoff)))
        .collect();
    let roc = roc_curve(&data).map_err(|e| match e {
        Error::DegenerateInput(m) => {
            Error::DegenerateInput(format!("site {}, AHI > {cutoff}: {m}", analysis.site))
        }
        other => other,
    })?;
    let (threshold, metrics) = select_threshold(&data)?;
    let scatter: Vec<ScatterPoint> = usable
        .iter()
        .map(|(r, ahi)| ScatterPoint {
            subject_id: r.subject_id.clone(),
            odi: r.odi,
            ahi_ref: *ahi,
        })
        .collect();
    let xs: Vec<f64> = scatter.iter().map(|p| p.odi).collect();
    let ys: Vec<f64> = scatter.iter().map(|p| p.ahi_ref).collect();
    let fit = match linear_fit(&xs, &ys) {
        Ok(f) => Some(f),
        Err(Error::DegenerateFit) => None,
        Err(e) => return Err(e),
    };
    Ok(CohortSiteReport {
        site: analysis.site,
        cutoff,
        n_subjects: data.len(),
        n_positive: data.iter().filter(|d| d.label).count(),
        auc: roc.auc,
        threshold,
        metrics,
        roc,
        scatter,
        fit,
        failures: analysis.failures(),
    })
}

/// Gate, detect and score every subject at `site`, then calibrate and evaluate
/// the ODI threshold for the task "AHI > cutoff".
pub fn evaluate_cohort(
    records: &[SubjectRecord],
    site: Site,
    cutoff: f64,
    detect_cfg: &DetectConfig,
    gate_cfg: &GateConfig,
    exec: Execution,
) -> Result<CohortSiteReport> {
    let analysis = pipeline::analyze_site(records, site, gate_cfg, detect_cfg, exec);
    evaluate_site(&analysis, cutoff)
}
