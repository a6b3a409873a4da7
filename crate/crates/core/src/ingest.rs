//! Trace CSV and cohort manifest I/O.
//!
//! Trace files carry the header `t_s,spo2_pct,quality` (quality optional).
//! Rows are resampled onto a 1 s grid by holding the last value for at most
//! [`HOLD_HORIZON_S`]; longer gaps become missing samples.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::types::{Metadata, SampledTrace, Site, SubjectRecord};

pub const GRID_PERIOD_S: f64 = 1.0;
pub const HOLD_HORIZON_S: f64 = 2.0;

const TIME_EPS: f64 = 1e-9;

struct RawRow {
    t: f64,
    value: Option<f64>,
    quality: f64,
}

pub fn parse_trace_csv(path: impl AsRef<Path>) -> Result<SampledTrace> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_trace_reader(file, path)
}

/// Parses trace CSV from any reader; `path` is only used in error messages.
pub fn parse_trace_reader<R: Read>(reader: R, path: &Path) -> Result<SampledTrace> {
    let format_err = |message: String| Error::Format {
        path: path.to_path_buf(),
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let headers = rdr
        .headers()
        .map_err(|e| format_err(format!("unreadable header: {e}")))?
        .clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(format_err("empty file".into()));
    }
    let column = |name: &str| headers.iter().position(|h| h == name);
    let t_col = column("t_s").ok_or_else(|| format_err("missing column 't_s'".into()))?;
    let v_col = column("spo2_pct").ok_or_else(|| format_err("missing column 'spo2_pct'".into()))?;
    let q_col = column("quality");

    let mut rows: Vec<RawRow> = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| format_err(format!("malformed CSV: {e}")))?;
        let line = record.position().map_or(0, |p| p.line());
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        if record.iter().all(str::is_empty) {
            continue;
        }
        let field = |i: usize| record.get(i).unwrap_or("");
        let t: f64 = field(t_col)
            .parse()
            .map_err(|_| parse_err(format!("bad t_s '{}'", field(t_col))))?;
        if !t.is_finite() {
            return Err(parse_err(format!("non-finite t_s '{}'", field(t_col))));
        }
        let value = match field(v_col) {
            "" => None,
            s => {
                let v: f64 = s
                    .parse()
                    .map_err(|_| parse_err(format!("bad spo2_pct '{s}'")))?;
                if !(0.0..=100.0).contains(&v) {
                    return Err(parse_err(format!("spo2_pct {v} outside [0, 100]")));
                }
                Some(v)
            }
        };
        let quality = match q_col.map(field) {
            None | Some("") => 1.0,
            Some(s) => {
                let q: f64 = s
                    .parse()
                    .map_err(|_| parse_err(format!("bad quality '{s}'")))?;
                if !(0.0..=1.0).contains(&q) {
                    return Err(parse_err(format!("quality {q} outside [0, 1]")));
                }
                q
            }
        };
        if let Some(prev) = rows.last() {
            if t <= prev.t {
                return Err(format_err(format!(
                    "line {line}: t_s {t} is not strictly increasing (previous {})",
                    prev.t
                )));
            }
        }
        rows.push(RawRow { t, value, quality });
    }
    if rows.is_empty() {
        return Err(format_err("empty file".into()));
    }
    resample_hold_last(&rows, q_col.is_some())
}

fn resample_hold_last(rows: &[RawRow], has_quality: bool) -> Result<SampledTrace> {
    let t0 = rows[0].t;
    let span = rows[rows.len() - 1].t - t0;
    let n = (span / GRID_PERIOD_S + TIME_EPS).floor() as usize + 1;
    let mut values = Vec::with_capacity(n);
    let mut quality = Vec::with_capacity(n);
    let mut j = 0usize;
    for k in 0..n {
        let g = t0 + k as f64 * GRID_PERIOD_S;
        while j + 1 < rows.len() && rows[j + 1].t <= g + TIME_EPS {
            j += 1;
        }
        let row = &rows[j];
        let on_sample = (g - row.t).abs() <= TIME_EPS;
        let held = j + 1 < rows.len() && rows[j + 1].t - row.t <= HOLD_HORIZON_S + TIME_EPS;
        if on_sample || held {
            values.push(row.value);
            quality.push(if row.value.is_some() {
                row.quality
            } else {
                0.0
            });
        } else {
            values.push(None);
            quality.push(0.0);
        }
    }
    SampledTrace::new(
        t0,
        GRID_PERIOD_S,
        values,
        if has_quality { Some(quality) } else { None },
    )
}

pub fn write_trace_csv(trace: &SampledTrace, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_trace(trace, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes the trace with shortest round-trip float formatting; missing values are empty fields.
pub fn write_trace<W: Write>(trace: &SampledTrace, w: &mut W) -> std::io::Result<()> {
    writeln!(w, "t_s,spo2_pct,quality")?;
    for (i, v) in trace.values().iter().enumerate() {
        let t = trace.time_at(i) - trace.start_epoch();
        let q = trace.quality_at(i);
        match v {
            Some(v) => writeln!(w, "{t},{v},{q}")?,
            None => writeln!(w, "{t},,{q}")?,
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    #[serde(default)]
    pub ahi_ref: Option<f64>,
    pub traces: BTreeMap<Site, PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<Metadata>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortManifest {
    pub subjects: Vec<ManifestEntry>,
}

impl CohortManifest {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: CohortManifest = serde_json::from_str(&text)
            .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for s in &self.subjects {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::Manifest(format!("duplicate subject id '{}'", s.id)));
            }
            match s.ahi_ref {
                None => {
                    return Err(Error::Manifest(format!(
                        "subject '{}': missing ahi_ref",
                        s.id
                    )))
                }
                Some(a) if !(a.is_finite() && a >= 0.0) => {
                    return Err(Error::Manifest(format!(
                        "subject '{}': ahi_ref must be finite and >= 0, got {a}",
                        s.id
                    )))
                }
                _ => {}
            }
            if s.traces.is_empty() {
                return Err(Error::Manifest(format!("subject '{}': no traces", s.id)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoadFailure {
    pub subject_id: String,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct CohortLoad {
    /// Sorted by subject id.
    pub records: Vec<SubjectRecord>,
    pub failures: Vec<LoadFailure>,
}

pub fn load_cohort(manifest_path: impl AsRef<Path>, exec: Execution) -> Result<CohortLoad> {
    let manifest_path = manifest_path.as_ref();
    let manifest = CohortManifest::from_path(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));

    let loaded = par::map(exec, &manifest.subjects, |entry| load_subject(entry, base));
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (entry, result) in manifest.subjects.iter().zip(loaded) {
        match result {
            Ok(r) => records.push(r),
            Err(e) => {
                log::warn!("subject {}: {e}", entry.id);
                failures.push(LoadFailure {
                    subject_id: entry.id.clone(),
                    message: e.to_string(),
                });
            }
        }
    }
    records.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
    failures.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
    Ok(CohortLoad { records, failures })
}

fn load_subject(entry: &ManifestEntry, base: &Path) -> Result<SubjectRecord> {
    let mut traces = BTreeMap::new();
    for (site, rel) in &entry.traces {
        let path = if rel.is_absolute() {
            rel.clone()
        } else {
            base.join(rel)
        };
        traces.insert(*site, parse_trace_csv(&path)?);
    }
    SubjectRecord::new(
        entry.id.clone(),
        entry.ahi_ref.unwrap_or_default(),
        traces,
        entry.meta.clone(),
    )
}
