//! Cohort report assembly and canonical JSON output.
//!
//! Reports are serialized with sorted keys and every float printed with six
//! decimals, so identical inputs give byte-identical files regardless of how
//! many worker threads produced them.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::desat::DetectConfig;
use crate::error::{Error, Result};
use crate::gating::GateConfig;
use crate::ingest::LoadFailure;
use crate::par::{self, Execution};
use crate::pipeline::{self, SiteAnalysis, SubjectFailure};
use crate::screening::{self, CohortSiteReport};
use crate::stats::{bland_altman, linear_fit, AgreementSums, BlandAltman, LinFit, Spo2Agreement};
use crate::types::{severity_class, SeverityClass, Site, SubjectRecord};

pub const SCHEMA: &str = "desatkit/1";

/// Merged run configuration (config file, then command-line overrides).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub gate: GateConfig,
    pub detect: DetectConfig,
    pub cutoffs: Vec<f64>,
    pub sites: Vec<Site>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            gate: GateConfig::default(),
            detect: DetectConfig::default(),
            cutoffs: vec![5.0, 15.0, 30.0],
            sites: Site::ALL.to_vec(),
        }
    }
}

impl RunConfig {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig = match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => toml::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
            _ => serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
        };
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.gate.validate()?;
        self.detect.validate()?;
        if self.cutoffs.is_empty() {
            return Err(Error::Config("at least one cutoff is required".into()));
        }
        if self.cutoffs.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
            return Err(Error::Config(format!(
                "cutoffs must be positive, got {:?}",
                self.cutoffs
            )));
        }
        if self.cutoffs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "cutoffs must be strictly increasing, got {:?}",
                self.cutoffs
            )));
        }
        if self.sites.is_empty() {
            return Err(Error::Config("at least one site is required".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubjectRow {
    pub subject_id: String,
    pub ahi_ref: f64,
    pub severity: SeverityClass,
    /// Per-site ODI; null when the site is absent or the ODI is undefined.
    pub odi: BTreeMap<Site, Option<f64>>,
    pub n_events: BTreeMap<Site, Option<usize>>,
}

/// One row of the screening matrix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScreeningCell {
    pub task: String,
    pub cutoff: f64,
    pub site: Site,
    pub status: CellStatus,
    pub reason: Option<String>,
    pub auc: Option<f64>,
    pub odi_threshold: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub accuracy: Option<f64>,
    pub tp: Option<usize>,
    pub fp: Option<usize>,
    pub tn: Option<usize>,
    #[serde(rename = "fn")]
    pub fn_: Option<usize>,
    pub n_subjects: usize,
    pub n_positive: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OdiAgreementRow {
    pub site: Site,
    pub reference: Site,
    /// Paired differences are `site - reference`.
    pub bland_altman: Option<BlandAltman>,
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionRow {
    pub site: Site,
    /// AHI = intercept + slope * ODI
    pub fit: Option<LinFit>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Spo2AgreementRow {
    pub site: Site,
    pub reference: Site,
    pub agreement: Option<Spo2Agreement>,
    pub n_subjects: usize,
    pub n_misaligned: usize,
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CohortReport {
    pub schema: &'static str,
    pub config: RunConfig,
    pub n_subjects: usize,
    pub load_failures: Vec<LoadFailure>,
    pub subject_failures: Vec<SubjectFailure>,
    pub subjects: Vec<SubjectRow>,
    pub screening_matrix: Vec<ScreeningCell>,
    pub odi_agreement: Vec<OdiAgreementRow>,
    pub regression: Vec<RegressionRow>,
    pub spo2_agreement: Vec<Spo2AgreementRow>,
    pub notes: Vec<String>,
}

impl CohortReport {
    pub fn all_cells_degenerate(&self) -> bool {
        self.screening_matrix
            .iter()
            .all(|c| c.status == CellStatus::Degenerate)
    }

    pub fn cell(&self, site: Site, cutoff: f64) -> Option<&ScreeningCell> {
        self.screening_matrix
            .iter()
            .find(|c| c.site == site && c.cutoff == cutoff)
    }

    pub fn spo2(&self, site: Site) -> Option<&Spo2Agreement> {
        self.spo2_agreement
            .iter()
            .find(|r| r.site == site)
            .and_then(|r| r.agreement.as_ref())
    }
}

/// A plot-ready CSV produced alongside the report.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvExport {
    pub file_name: String,
    pub contents: String,
}

pub struct CohortOutput {
    pub report: CohortReport,
    pub site_reports: Vec<CohortSiteReport>,
    pub exports: Vec<CsvExport>,
}

const REFERENCE_SITE: Site = Site::Fingertip;

fn cutoff_label(cutoff: f64) -> String {
    let s = format!("{cutoff}");
    s.replace('.', "p")
}

pub fn build_cohort_report(
    records: &[SubjectRecord],
    load_failures: Vec<LoadFailure>,
    cfg: &RunConfig,
    exec: Execution,
) -> Result<CohortOutput> {
    cfg.validate()?;
    let mut ordered: Vec<&SubjectRecord> = records.iter().collect();
    ordered.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));

    let mut sites = cfg.sites.clone();
    sites.sort();
    sites.dedup();

    let analyses: Vec<SiteAnalysis> = sites
        .iter()
        .map(|site| pipeline::analyze_site(records, *site, &cfg.gate, &cfg.detect, exec))
        .collect();

    let mut subject_failures: Vec<SubjectFailure> =
        analyses.iter().flat_map(SiteAnalysis::failures).collect();
    subject_failures.sort_by(|a, b| (&a.subject_id, a.site).cmp(&(&b.subject_id, b.site)));

    let subjects = ordered
        .iter()
        .map(|r| -> Result<SubjectRow> {
            let mut odi = BTreeMap::new();
            let mut n_events = BTreeMap::new();
            for a in &analyses {
                let res = a.result_for(&r.subject_id);
                odi.insert(a.site, res.map(|x| x.odi));
                n_events.insert(a.site, res.map(|x| x.n_events));
            }
            Ok(SubjectRow {
                subject_id: r.subject_id.clone(),
                ahi_ref: r.ahi_ref,
                severity: severity_class(r.ahi_ref)?,
                odi,
                n_events,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut screening_matrix = Vec::new();
    let mut site_reports = Vec::new();
    let mut exports = Vec::new();
    for &cutoff in &cfg.cutoffs {
        for a in &analyses {
            let task = format!("AHI > {cutoff}");
            match screening::evaluate_site(a, cutoff) {
                Ok(sr) => {
                    let m = sr.metrics;
                    screening_matrix.push(ScreeningCell {
                        task,
                        cutoff,
                        site: a.site,
                        status: CellStatus::Ok,
                        reason: None,
                        auc: Some(sr.auc),
                        odi_threshold: Some(sr.threshold),
                        sensitivity: Some(m.sensitivity),
                        specificity: Some(m.specificity),
                        accuracy: Some(m.accuracy),
                        tp: Some(m.tp),
                        fp: Some(m.fp),
                        tn: Some(m.tn),
                        fn_: Some(m.fn_),
                        n_subjects: sr.n_subjects,
                        n_positive: sr.n_positive,
                    });
                    let mut roc_csv = Vec::new();
                    sr.roc
                        .write_csv(&mut roc_csv)
                        .map_err(|e| Error::Internal(e.to_string()))?;
                    exports.push(CsvExport {
                        file_name: format!("roc_{}_ahi{}.csv", a.site, cutoff_label(cutoff)),
                        contents: String::from_utf8(roc_csv).expect("ascii csv"),
                    });
                    site_reports.push(sr);
                }
                Err(e) => {
                    let usable = a.usable();
                    screening_matrix.push(ScreeningCell {
                        task,
                        cutoff,
                        site: a.site,
                        status: CellStatus::Degenerate,
                        reason: Some(e.to_string()),
                        auc: None,
                        odi_threshold: None,
                        sensitivity: None,
                        specificity: None,
                        accuracy: None,
                        tp: None,
                        fp: None,
                        tn: None,
                        fn_: None,
                        n_subjects: usable.len(),
                        n_positive: usable.iter().filter(|(_, ahi)| *ahi > cutoff).count(),
                    });
                }
            }
        }
    }

    let mut regression = Vec::new();
    for a in &analyses {
        let usable = a.usable();
        let xs: Vec<f64> = usable.iter().map(|(r, _)| r.odi).collect();
        let ys: Vec<f64> = usable.iter().map(|(_, ahi)| *ahi).collect();
        regression.push(RegressionRow {
            site: a.site,
            fit: linear_fit(&xs, &ys).ok(),
            n: usable.len(),
        });
        let mut scatter = String::from("subject_id,odi,ahi_ref\n");
        for (r, ahi) in &usable {
            let _ = writeln!(scatter, "{},{},{}", r.subject_id, r.odi, ahi);
        }
        exports.push(CsvExport {
            file_name: format!("scatter_{}.csv", a.site),
            contents: scatter,
        });
    }

    let reference = analyses.iter().find(|a| a.site == REFERENCE_SITE);
    let mut odi_agreement = Vec::new();
    let mut spo2_agreement = Vec::new();
    if let Some(reference) = reference {
        for a in analyses.iter().filter(|a| a.site != REFERENCE_SITE) {
            let (mut xs, mut refs) = (Vec::new(), Vec::new());
            for (r, _) in a.usable() {
                if let Some(rr) = reference.result_for(&r.subject_id) {
                    xs.push(r.odi);
                    refs.push(rr.odi);
                }
            }
            let (ba, reason) = match bland_altman(&xs, &refs) {
                Ok(b) => (Some(b), None),
                Err(e) => (None, Some(e.to_string())),
            };
            odi_agreement.push(OdiAgreementRow {
                site: a.site,
                reference: REFERENCE_SITE,
                bland_altman: ba,
                reason,
            });
            spo2_agreement.push(spo2_row(records, a.site, &cfg.gate, exec));
        }
    }

    let notes = vec![
        format!(
            "quality-index threshold {} is a configured value; ODI results depend on it",
            cfg.gate.qi_threshold
        ),
        "ODI thresholds are calibrated and evaluated on the same cohort (no held-out split)"
            .to_owned(),
        "ODI denominator is valid (non-artefact) recording time".to_owned(),
    ];

    Ok(CohortOutput {
        report: CohortReport {
            schema: SCHEMA,
            config: RunConfig {
                sites,
                ..cfg.clone()
            },
            n_subjects: records.len(),
            load_failures,
            subject_failures,
            subjects,
            screening_matrix,
            odi_agreement,
            regression,
            spo2_agreement,
            notes,
        },
        site_reports,
        exports,
    })
}

fn spo2_row(
    records: &[SubjectRecord],
    site: Site,
    gate: &GateConfig,
    exec: Execution,
) -> Spo2AgreementRow {
    let mut paired: Vec<&SubjectRecord> = records
        .iter()
        .filter(|r| r.traces.contains_key(&site) && r.traces.contains_key(&REFERENCE_SITE))
        .collect();
    paired.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
    let sums = par::map(exec, &paired, |r| {
        let est = crate::gating::apply_gate(&r.traces[&site], gate);
        let reference = crate::gating::apply_gate(&r.traces[&REFERENCE_SITE], gate);
        AgreementSums::from_traces(&est, &reference)
    });
    let mut total = AgreementSums::default();
    let mut misaligned = 0;
    for s in sums {
        match s {
            Ok(s) => total = total.merge(s),
            Err(_) => misaligned += 1,
        }
    }
    let (agreement, reason) = match total.finish() {
        Ok(a) => (Some(a), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Spo2AgreementRow {
        site,
        reference: REFERENCE_SITE,
        agreement,
        n_subjects: paired.len() - misaligned,
        n_misaligned: misaligned,
        reason,
    }
}

/// Sorted keys, two-space indentation, floats with exactly six decimals,
/// non-finite floats as null.
pub fn to_canonical_json<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value).map_err(|e| Error::Internal(e.to_string()))?;
    let mut out = String::new();
    write_value(&v, 0, &mut out);
    out.push('\n');
    Ok(out)
}

fn write_value(v: &Value, indent: usize, out: &mut String) {
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                let _ = write!(out, "{i}");
            } else if let Some(u) = n.as_u64() {
                let _ = write!(out, "{u}");
            } else {
                out.push_str(&fixed6(n.as_f64().unwrap_or(f64::NAN)));
            }
        }
        Value::String(s) => out.push_str(&serde_json::to_string(s).expect("string")),
        Value::Array(items) => {
            if items.is_empty() {
                out.push_str("[]");
                return;
            }
            out.push_str("[\n");
            for (i, item) in items.iter().enumerate() {
                pad(out, indent + 1);
                write_value(item, indent + 1, out);
                if i + 1 < items.len() {
                    out.push(',');
                }
                out.push('\n');
            }
            pad(out, indent);
            out.push(']');
        }
        Value::Object(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return;
            }
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push_str("{\n");
            for (i, k) in keys.iter().enumerate() {
                pad(out, indent + 1);
                out.push_str(&serde_json::to_string(k).expect("key"));
                out.push_str(": ");
                write_value(&map[*k], indent + 1, out);
                if i + 1 < keys.len() {
                    out.push(',');
                }
                out.push('\n');
            }
            pad(out, indent);
            out.push('}');
        }
    }
}

fn fixed6(x: f64) -> String {
    if !x.is_finite() {
        return "null".to_owned();
    }
    let s = format!("{x:.6}");
    if s == "-0.000000" {
        "0.000000".to_owned()
    } else {
        s
    }
}

fn pad(out: &mut String, indent: usize) {
    for _ in 0..indent {
        out.push_str("  ");
    }
}
