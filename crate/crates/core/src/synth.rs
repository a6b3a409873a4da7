//! Deterministic synthetic cohorts with known desaturation schedules.
//!
//! Each subject gets a clean SpO2 signal (baseline + Gaussian noise +
//! trapezoidal dips). The fingertip trace is that signal; upper-arm and wrist
//! traces add extra noise and quality-0 artefact runs. Every random draw comes
//! from a ChaCha8 stream keyed by (seed, subject index, purpose), so output does
//! not depend on thread scheduling.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{write_trace_csv, CohortManifest, ManifestEntry};
use crate::par::{self, Execution};
use crate::types::{severity_class, Metadata, SampledTrace, SeverityClass, Site};

/// Linear descent from baseline to nadir.
pub const DESCENT_S: u32 = 10;
/// Linear recovery from nadir back to baseline.
pub const RECOVERY_S: u32 = 15;
/// Quiet time between the end of one dip and the start of the next.
pub const MIN_SPACING_S: u32 = 60;

const ARTIFACT_RUN_S: (usize, usize) = (30, 300);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SiteDegradation {
    /// Extra Gaussian noise on top of the clean signal, percentage points.
    pub noise_sd: f64,
    /// Fraction of samples inside quality-0 artefact runs, in [0, 1).
    pub artifact_fraction: f64,
    /// Between-subject spread of `noise_sd`, in [0, 1]. Each subject has one
    /// quality draw `u` in [-1, 1] shared by all sites and gets
    /// `noise_sd * (1 + spread * u)` here.
    pub noise_spread: f64,
}

impl Default for SiteDegradation {
    fn default() -> Self {
        Self {
            noise_sd: 0.0,
            artifact_fraction: 0.0,
            noise_spread: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub seed: u64,
    pub n_subjects: usize,
    /// Recording length, whole seconds.
    pub duration: u32,
    pub baseline_spo2: f64,
    /// Events per hour, drawn uniformly per subject.
    pub event_rate_range: [f64; 2],
    pub depth_range: [f64; 2],
    /// Time held at the nadir, whole seconds (ramps come on top).
    pub event_duration_range: [u32; 2],
    pub noise_sd: f64,
    pub sites: BTreeMap<Site, SiteDegradation>,
    /// SD of the Gaussian difference between reference AHI and the true event rate.
    pub ahi_odi_jitter: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        let mut sites = BTreeMap::new();
        sites.insert(Site::Fingertip, SiteDegradation::default());
        sites.insert(
            Site::UpperArm,
            SiteDegradation {
                noise_sd: 0.55,
                artifact_fraction: 0.05,
                noise_spread: 0.75,
            },
        );
        sites.insert(
            Site::Wrist,
            SiteDegradation {
                noise_sd: 0.9,
                artifact_fraction: 0.3,
                noise_spread: 0.6,
            },
        );
        Self {
            seed: 0,
            n_subjects: 170,
            duration: 28_800,
            baseline_spo2: 97.0,
            event_rate_range: [0.0, 35.0],
            depth_range: [4.0, 10.0],
            event_duration_range: [5, 15],
            noise_sd: 0.3,
            sites,
            ahi_odi_jitter: 5.0,
        }
    }
}

impl SynthSpec {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: SynthSpec = match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => toml::from_str(&text).map_err(|e| Error::Spec(e.to_string()))?,
            _ => serde_json::from_str(&text).map_err(|e| Error::Spec(e.to_string()))?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Spec(m));
        if self.n_subjects == 0 {
            return fail("n_subjects must be >= 1".into());
        }
        if self.duration == 0 {
            return fail("duration must be > 0".into());
        }
        if !(self.baseline_spo2 > 0.0 && self.baseline_spo2 <= 100.0) {
            return fail(format!(
                "baseline_spo2 {} outside (0, 100]",
                self.baseline_spo2
            ));
        }
        for (name, [lo, hi]) in [
            ("event_rate_range", self.event_rate_range),
            ("depth_range", self.depth_range),
        ] {
            if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi) {
                return fail(format!(
                    "{name} [{lo}, {hi}] must be nonnegative and ordered"
                ));
            }
        }
        if self.depth_range[1] > self.baseline_spo2 {
            return fail("depth_range exceeds baseline".into());
        }
        let [dlo, dhi] = self.event_duration_range;
        if dlo > dhi {
            return fail(format!("event_duration_range [{dlo}, {dhi}] not ordered"));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return fail(format!("noise_sd {} must be >= 0", self.noise_sd));
        }
        if !(self.ahi_odi_jitter >= 0.0 && self.ahi_odi_jitter.is_finite()) {
            return fail(format!(
                "ahi_odi_jitter {} must be >= 0",
                self.ahi_odi_jitter
            ));
        }
        for (site, d) in &self.sites {
            if !(d.noise_sd >= 0.0 && d.noise_sd.is_finite()) {
                return fail(format!("{site}: noise_sd must be >= 0"));
            }
            if !(0.0..1.0).contains(&d.artifact_fraction) {
                return fail(format!("{site}: artifact_fraction must be in [0, 1)"));
            }
            if !(0.0..=1.0).contains(&d.noise_spread) {
                return fail(format!("{site}: noise_spread must be in [0, 1]"));
            }
        }
        if !self.sites.contains_key(&Site::Fingertip) {
            return fail("the fingertip site is required".into());
        }
        Ok(())
    }

    pub fn hours(&self) -> f64 {
        self.duration as f64 / 3600.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduledEvent {
    /// Start of the descent, seconds from recording start.
    pub onset_s: u32,
    pub depth: f64,
    pub hold_s: u32,
}

impl ScheduledEvent {
    pub fn footprint_s(&self) -> u32 {
        DESCENT_S + self.hold_s + RECOVERY_S
    }

    fn shape(&self, t: u32) -> f64 {
        let Some(u) = t.checked_sub(self.onset_s) else {
            return 0.0;
        };
        if u < DESCENT_S {
            u as f64 / DESCENT_S as f64
        } else if u < DESCENT_S + self.hold_s {
            1.0
        } else if u < self.footprint_s() {
            1.0 - (u - DESCENT_S - self.hold_s) as f64 / RECOVERY_S as f64
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectTruth {
    pub subject_id: String,
    pub events: Vec<ScheduledEvent>,
    pub true_odi: f64,
    pub ahi_ref: f64,
    pub severity: SeverityClass,
    pub meta: Metadata,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub duration: u32,
    pub subjects: Vec<SubjectTruth>,
}

#[derive(Debug, Clone)]
pub struct SynthSubject {
    pub truth: SubjectTruth,
    pub traces: BTreeMap<Site, SampledTrace>,
}

const STREAM_SCHEDULE: u64 = 0;
const STREAM_SIGNAL: u64 = 1;
const STREAM_SITE: u64 = 2;
const STREAM_QUALITY: u64 = 8;

fn rng_for(seed: u64, subject: usize, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((subject as u64) << 8) | stream);
    rng
}

pub fn subject_id(index: usize, n_subjects: usize) -> String {
    let width = n_subjects.to_string().len().max(3);
    format!("S{:0width$}", index + 1)
}

fn draw_schedule(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Result<Vec<ScheduledEvent>> {
    let [rlo, rhi] = spec.event_rate_range;
    let rate = if rhi > rlo {
        rng.random_range(rlo..=rhi)
    } else {
        rlo
    };
    let n = (rate * spec.hours()).round() as usize;
    let [hlo, hhi] = spec.event_duration_range;
    let [dlo, dhi] = spec.depth_range;
    let mut events: Vec<ScheduledEvent> = (0..n)
        .map(|_| ScheduledEvent {
            onset_s: 0,
            depth: if dhi > dlo {
                rng.random_range(dlo..=dhi)
            } else {
                dlo
            },
            hold_s: rng.random_range(hlo..=hhi),
        })
        .collect();

    let busy: u64 = events.iter().map(|e| e.footprint_s() as u64).sum::<u64>()
        + (n as u64 + 1) * MIN_SPACING_S as u64;
    if busy > spec.duration as u64 {
        return Err(Error::Spec(format!(
            "{n} events need {busy} s with spacing but the recording is {} s",
            spec.duration
        )));
    }
    let slack = spec.duration as u64 - busy;
    let mut cuts: Vec<u64> = (0..n).map(|_| rng.random_range(0..=slack)).collect();
    cuts.sort_unstable();
    let mut t = MIN_SPACING_S as u64;
    let mut prev_cut = 0;
    for (e, cut) in events.iter_mut().zip(cuts) {
        t += cut - prev_cut;
        prev_cut = cut;
        e.onset_s = t as u32;
        t += e.footprint_s() as u64 + MIN_SPACING_S as u64;
    }
    Ok(events)
}

/// Baseline with trapezoidal dips and Gaussian noise, quantized to 0.01 and
/// clamped to [0, 100]. One sample per second.
pub fn render_signal(
    events: &[ScheduledEvent],
    duration: u32,
    baseline: f64,
    noise_sd: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let noise = Normal::new(0.0, noise_sd.max(0.0)).expect("finite sd");
    let mut next = 0;
    (0..duration)
        .map(|t| {
            while next < events.len() && events[next].onset_s + events[next].footprint_s() <= t {
                next += 1;
            }
            let dip = events.get(next).map_or(0.0, |e| e.depth * e.shape(t));
            let n = if noise_sd > 0.0 {
                noise.sample(rng)
            } else {
                0.0
            };
            quantize(baseline - dip + n)
        })
        .collect()
}

fn quantize(v: f64) -> f64 {
    ((v.clamp(0.0, 100.0)) * 100.0).round() / 100.0
}

fn artifact_mask(n: usize, fraction: f64, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let mut mask = vec![false; n];
    let target = (fraction * n as f64).round() as usize;
    let mut covered = 0;
    let mut attempts = 0;
    while covered < target && attempts < 100_000 {
        attempts += 1;
        let len = rng
            .random_range(ARTIFACT_RUN_S.0..=ARTIFACT_RUN_S.1)
            .min(target - covered);
        let start = rng.random_range(0..n.saturating_sub(len).max(1));
        for m in &mut mask[start..(start + len).min(n)] {
            if !*m {
                *m = true;
                covered += 1;
            }
        }
    }
    mask
}

fn site_trace(
    clean: &[f64],
    degradation: SiteDegradation,
    quality: f64,
    rng: &mut ChaCha8Rng,
) -> SampledTrace {
    let noise_sd = degradation.noise_sd * (1.0 + degradation.noise_spread * quality);
    let noise = Normal::new(0.0, noise_sd).expect("finite sd");
    let mask = artifact_mask(clean.len(), degradation.artifact_fraction, rng);
    let mut values = Vec::with_capacity(clean.len());
    let mut quality = Vec::with_capacity(clean.len());
    for (c, bad) in clean.iter().zip(mask) {
        if bad {
            // corrupted estimate: spurious low reading with zero trust
            let drop: f64 = rng.random_range(0.0..15.0);
            values.push(Some(quantize(c - drop)));
            quality.push(0.0);
        } else {
            let n = if noise_sd > 0.0 {
                noise.sample(rng)
            } else {
                0.0
            };
            values.push(Some(quantize(c + n)));
            quality.push(1.0);
        }
    }
    SampledTrace::new(0.0, 1.0, values, Some(quality)).expect("synthetic values in range")
}

fn draw_metadata(rng: &mut ChaCha8Rng) -> Metadata {
    let bmi: f64 = Normal::new(29.0, 5.0).expect("valid").sample(rng);
    Metadata {
        age: Some(rng.random_range(20..=80) as f64),
        sex: Some(if rng.random_bool(0.73) { "M" } else { "F" }.to_owned()),
        bmi: Some((bmi.clamp(17.0, 55.0) * 10.0).round() / 10.0),
    }
}

/// All site traces plus ground truth for subject `index`.
pub fn generate_subject(index: usize, spec: &SynthSpec) -> Result<SynthSubject> {
    let mut rng = rng_for(spec.seed, index, STREAM_SCHEDULE);
    let events = draw_schedule(spec, &mut rng)?;
    let true_odi = events.len() as f64 / spec.hours();
    let jitter = if spec.ahi_odi_jitter > 0.0 {
        Normal::new(0.0, spec.ahi_odi_jitter)
            .expect("valid")
            .sample(&mut rng)
    } else {
        0.0
    };
    let ahi_ref = ((true_odi + jitter).max(0.0) * 100.0).round() / 100.0;
    let meta = draw_metadata(&mut rng);

    let mut signal_rng = rng_for(spec.seed, index, STREAM_SIGNAL);
    let clean = render_signal(
        &events,
        spec.duration,
        spec.baseline_spo2,
        spec.noise_sd,
        &mut signal_rng,
    );
    // poor perfusion or motion shows up at every site of the same subject
    let quality: f64 = rng_for(spec.seed, index, STREAM_QUALITY).random_range(-1.0..=1.0);
    let traces = spec
        .sites
        .iter()
        .map(|(site, deg)| {
            let mut r = rng_for(spec.seed, index, STREAM_SITE + site.index());
            (*site, site_trace(&clean, *deg, quality, &mut r))
        })
        .collect();

    Ok(SynthSubject {
        truth: SubjectTruth {
            subject_id: subject_id(index, spec.n_subjects),
            events,
            true_odi,
            ahi_ref,
            severity: severity_class(ahi_ref)?,
            meta,
        },
        traces,
    })
}

/// The clean fingertip trace of subject `index` with its ground truth.
pub fn generate_trace(index: usize, spec: &SynthSpec) -> Result<(SampledTrace, SubjectTruth)> {
    let mut s = generate_subject(index, spec)?;
    let trace = s
        .traces
        .remove(&Site::Fingertip)
        .ok_or_else(|| Error::Spec("the fingertip site is required".into()))?;
    Ok((trace, s.truth))
}

/// Fingertip-only traces of `n` subjects, generated in parallel.
pub fn generate_traces(
    spec: &SynthSpec,
    n: usize,
    exec: Execution,
) -> Result<Vec<(SampledTrace, SubjectTruth)>> {
    spec.validate()?;
    par::map_range(exec, n, |i| generate_trace(i, spec))
        .into_iter()
        .collect()
}

#[derive(Debug, Clone)]
pub struct CohortFiles {
    pub manifest: PathBuf,
    pub ground_truth: PathBuf,
    pub trace_files: Vec<PathBuf>,
}

/// Writes `traces/<id>_<site>.csv`, `manifest.json` and `ground_truth.json`
/// under `out_dir`. Output is byte-identical for the same spec.
pub fn generate_cohort(spec: &SynthSpec, out_dir: &Path, exec: Execution) -> Result<CohortFiles> {
    spec.validate()?;
    let trace_dir = out_dir.join("traces");
    fs::create_dir_all(&trace_dir).map_err(|e| Error::io(&trace_dir, e))?;

    let written = par::map_range(exec, spec.n_subjects, |i| -> Result<_> {
        let subject = generate_subject(i, spec)?;
        let mut paths = BTreeMap::new();
        for (site, trace) in &subject.traces {
            let rel = PathBuf::from("traces").join(format!(
                "{}_{}.csv",
                subject.truth.subject_id,
                site.as_str()
            ));
            write_trace_csv(trace, out_dir.join(&rel))?;
            paths.insert(*site, rel);
        }
        Ok((subject.truth, paths))
    });

    let mut subjects = Vec::with_capacity(spec.n_subjects);
    let mut entries = Vec::with_capacity(spec.n_subjects);
    let mut trace_files = Vec::new();
    for w in written {
        let (truth, paths) = w?;
        trace_files.extend(paths.values().map(|p| out_dir.join(p)));
        entries.push(ManifestEntry {
            id: truth.subject_id.clone(),
            ahi_ref: Some(truth.ahi_ref),
            traces: paths,
            meta: Some(truth.meta.clone()),
        });
        subjects.push(truth);
    }

    let manifest = out_dir.join("manifest.json");
    write_json(&manifest, &CohortManifest { subjects: entries })?;
    let ground_truth = out_dir.join("ground_truth.json");
    write_json(
        &ground_truth,
        &GroundTruth {
            seed: spec.seed,
            duration: spec.duration,
            subjects,
        },
    )?;
    Ok(CohortFiles {
        manifest,
        ground_truth,
        trace_files,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Internal(format!("serialize {}: {e}", path.display())))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

impl GroundTruth {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}
