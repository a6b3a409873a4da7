//! `desatkit` command-line interface.
//!
//! Exit codes: 0 success, 1 internal error, 2 input error, 3 insufficient or
//! degenerate data.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::desat::{detect_desaturations, write_events_csv};
use crate::error::{Error, Result};
use crate::gating::{apply_gate, valid_duration};
use crate::ingest::{load_cohort, parse_trace_csv};
use crate::par::{self, Execution};
use crate::report::{build_cohort_report, to_canonical_json, RunConfig, SCHEMA};
use crate::screening::{roc_curve, select_threshold, LabeledScore};
use crate::synth::{generate_cohort, SynthSpec};
use crate::types::{DesatEvent, Site};

#[derive(Debug, Parser)]
#[command(
    name = "desatkit",
    version,
    about = "Oxygen desaturation index analysis and sleep apnea screening"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Detect desaturations in one trace and report its ODI.
    Analyze(AnalyzeArgs),
    /// Evaluate a cohort manifest: screening matrix, agreement and regression.
    Cohort(CohortArgs),
    /// Pick the ODI threshold maximizing sens^2 + spec^2 from a scores CSV.
    Calibrate(ScoresArgs),
    /// Generate a synthetic cohort with ground truth.
    Synth(SynthArgs),
    /// ROC curve and AUC from a scores CSV.
    Roc(RocArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct PipelineArgs {
    /// TOML or JSON run configuration; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub qi_threshold: Option<f64>,
    #[arg(long = "gap-bridge-s")]
    pub gap_bridge_s: Option<f64>,
    #[arg(long)]
    pub drop_pct: Option<f64>,
    #[arg(long = "min-dur-s")]
    pub min_dur_s: Option<f64>,
    #[arg(long)]
    pub recovery_frac: Option<f64>,
    #[arg(long = "reset-gap-s")]
    pub reset_gap_s: Option<f64>,
}

impl PipelineArgs {
    pub fn run_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_path(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.qi_threshold {
            cfg.gate.qi_threshold = v;
        }
        if let Some(v) = self.gap_bridge_s {
            cfg.gate.gap_bridge = v;
        }
        if let Some(v) = self.drop_pct {
            cfg.detect.drop_threshold = v;
        }
        if let Some(v) = self.min_dur_s {
            cfg.detect.min_duration = v;
        }
        if let Some(v) = self.recovery_frac {
            cfg.detect.recovery_fraction = v;
        }
        if let Some(v) = self.reset_gap_s {
            cfg.detect.baseline_reset_gap = v;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    pub trace: PathBuf,
    #[arg(long, default_value = "fingertip")]
    pub site: Site,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub events_csv: Option<PathBuf>,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Args)]
pub struct CohortArgs {
    pub manifest: PathBuf,
    /// Comma-separated AHI cutoffs, e.g. 5,15,30.
    #[arg(long, value_delimiter = ',')]
    pub cutoffs: Option<Vec<f64>>,
    /// Comma-separated sites to evaluate.
    #[arg(long, value_delimiter = ',')]
    pub site: Option<Vec<Site>>,
    /// Directory for report.json and CSV exports; the report goes to stdout otherwise.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, default_value_t = default_jobs())]
    pub jobs: usize,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Args)]
pub struct ScoresArgs {
    /// CSV with header `subject_id,score,label` (label 0/1 or true/false).
    pub scores: PathBuf,
}

#[derive(Debug, Args)]
pub struct RocArgs {
    pub scores: PathBuf,
    /// Write `threshold,fpr,tpr` here; otherwise to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// TOML or JSON generator spec; flags override it.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_subjects: Option<usize>,
    #[arg(long = "duration-s")]
    pub duration_s: Option<u32>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = default_jobs())]
    pub jobs: usize,
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Analyze(a) => cmd_analyze(&a),
        Command::Cohort(a) => cmd_cohort(&a),
        Command::Calibrate(a) => cmd_calibrate(&a),
        Command::Synth(a) => cmd_synth(&a),
        Command::Roc(a) => cmd_roc(&a),
    }
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .map_err(|e| Error::io("<stdout>", e))
        }
    }
}

#[derive(Debug, Serialize)]
struct AnalyzeReport<'a> {
    schema: &'static str,
    trace: String,
    site: Site,
    n_samples: usize,
    valid_duration: f64,
    n_events: usize,
    odi: f64,
    events: &'a [DesatEvent],
    config: &'a RunConfig,
}

pub fn cmd_analyze(args: &AnalyzeArgs) -> Result<i32> {
    let cfg = args.pipeline.run_config()?;
    cfg.gate.validate()?;
    cfg.detect.validate()?;
    let trace = parse_trace_csv(&args.trace)?;
    let gated = apply_gate(&trace, &cfg.gate);
    let events = detect_desaturations(&gated, &cfg.detect);
    let valid = valid_duration(&gated);
    let odi = crate::desat::compute_odi(&events, valid, cfg.detect.min_analyzable)?;

    if let Some(path) = &args.events_csv {
        let mut buf = Vec::new();
        write_events_csv(&gated, &events, &mut buf).map_err(|e| Error::io(path, e))?;
        fs::write(path, buf).map_err(|e| Error::io(path, e))?;
    }
    let report = AnalyzeReport {
        schema: SCHEMA,
        trace: args.trace.display().to_string(),
        site: args.site,
        n_samples: trace.len(),
        valid_duration: valid,
        n_events: events.len(),
        odi,
        events: &events,
        config: &cfg,
    };
    emit(&to_canonical_json(&report)?, args.out.as_deref())?;
    Ok(0)
}

/// Runs the cohort evaluation and returns the canonical report text.
pub fn cohort_report_json(
    manifest: &Path,
    cfg: &RunConfig,
    jobs: usize,
) -> Result<(String, crate::report::CohortOutput)> {
    cfg.validate()?;
    par::with_jobs(jobs, |exec| -> Result<_> {
        let loaded = load_cohort(manifest, exec)?;
        let output = build_cohort_report(&loaded.records, loaded.failures, cfg, exec)?;
        Ok((to_canonical_json(&output.report)?, output))
    })?
}

pub fn cmd_cohort(args: &CohortArgs) -> Result<i32> {
    let mut cfg = args.pipeline.run_config()?;
    if let Some(c) = &args.cutoffs {
        cfg.cutoffs = c.clone();
    }
    if let Some(s) = &args.site {
        cfg.sites = s.clone();
    }
    let (json, output) = cohort_report_json(&args.manifest, &cfg, args.jobs)?;
    match &args.out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            emit(&json, Some(&dir.join("report.json")))?;
            for export in &output.exports {
                let p = dir.join(&export.file_name);
                fs::write(&p, &export.contents).map_err(|e| Error::io(&p, e))?;
            }
        }
        None => emit(&json, None)?,
    }
    if output.report.all_cells_degenerate() {
        eprintln!("error: every site/cutoff cell is degenerate");
        return Ok(3);
    }
    Ok(0)
}

#[derive(Debug, Deserialize)]
struct ScoreRow {
    subject_id: String,
    score: f64,
    label: String,
}

pub fn read_scores(path: &Path) -> Result<Vec<LabeledScore>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    let mut out = Vec::new();
    for rec in rdr.deserialize::<ScoreRow>() {
        let row = rec.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let label = match row.label.to_ascii_lowercase().as_str() {
            "1" | "true" => true,
            "0" | "false" => false,
            other => {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    message: format!("subject {}: bad label '{other}'", row.subject_id),
                })
            }
        };
        out.push(LabeledScore::new(row.subject_id, row.score, label));
    }
    if out.is_empty() {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: "no score rows".into(),
        });
    }
    Ok(out)
}

pub fn cmd_calibrate(args: &ScoresArgs) -> Result<i32> {
    let data = read_scores(&args.scores)?;
    let (threshold, metrics) = select_threshold(&data)?;
    #[derive(Serialize)]
    struct Calibration {
        schema: &'static str,
        threshold: f64,
        objective: f64,
        metrics: crate::screening::ClassificationMetrics,
        n: usize,
    }
    let text = to_canonical_json(&Calibration {
        schema: SCHEMA,
        threshold,
        objective: metrics.objective(),
        metrics,
        n: data.len(),
    })?;
    emit(&text, None)?;
    Ok(0)
}

pub fn cmd_roc(args: &RocArgs) -> Result<i32> {
    let data = read_scores(&args.scores)?;
    let roc = roc_curve(&data)?;
    let mut buf = Vec::new();
    roc.write_csv(&mut buf)
        .map_err(|e| Error::Internal(e.to_string()))?;
    match &args.out {
        Some(p) => {
            fs::write(p, &buf).map_err(|e| Error::io(p, e))?;
            println!("auc {:.6}", roc.auc);
        }
        None => {
            emit(&String::from_utf8_lossy(&buf), None)?;
            eprintln!("auc {:.6}", roc.auc);
        }
    }
    Ok(0)
}

pub fn cmd_synth(args: &SynthArgs) -> Result<i32> {
    let mut spec = match &args.spec {
        Some(p) => SynthSpec::from_path(p)?,
        None => SynthSpec::default(),
    };
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    if let Some(n) = args.n_subjects {
        spec.n_subjects = n;
    }
    if let Some(d) = args.duration_s {
        spec.duration = d;
    }
    let files = par::with_jobs(args.jobs, |exec: Execution| {
        generate_cohort(&spec, &args.out_dir, exec)
    })??;
    println!("{}", files.manifest.display());
    Ok(0)
}
