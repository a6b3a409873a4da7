//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use desatkit::ingest::load_cohort;
use desatkit::report::CohortReport;
use desatkit::synth::{generate_traces, SiteDegradation};
use desatkit::{
    analyze_trace, bland_altman, build_cohort_report, compare_spo2, detect_desaturations,
    generate_cohort, linear_fit, roc_curve, select_threshold, DetectConfig, Execution, GateConfig,
    LabeledScore, RunConfig, SampledTrace, Site, SynthSpec,
};

use common::{
    all_candidate_thresholds, concordance2, count_rect_dips, objective_scaled, random_scores,
    rect_dip,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Pinned tolerances and budgets.
const EXACT_COUNT_SHARE: f64 = 0.995;
const ODI_SLACK_PER_H: f64 = 0.5;
const ORACLE_BUDGET: Duration = Duration::from_secs(60);
const CLOSED_FORM_TOL: f64 = 1e-9;
const IDENTITY_TOL: f64 = 1e-9;
const PIPELINE_BUDGET: Duration = Duration::from_secs(300);
const COHORT_SEED: u64 = 170;
const CUTOFFS: [f64; 3] = [5.0, 15.0, 30.0];

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

/// 1. Detector counts match the generator on 1000 traces.
fn detector_oracle() -> Outcome {
    let mut spec = SynthSpec {
        seed: 2026,
        n_subjects: 1000,
        event_rate_range: [0.0, 15.0],
        depth_range: [4.0, 10.0],
        event_duration_range: [15, 90],
        noise_sd: 0.3,
        ..SynthSpec::default()
    };
    spec.sites.retain(|s, _| *s == Site::Fingertip);

    let start = Instant::now();
    let traces =
        generate_traces(&spec, spec.n_subjects, Execution::Parallel).map_err(|e| e.to_string())?;
    let gate = GateConfig::default();
    let detect = DetectConfig::default();
    let outcomes = desatkit::par::map(Execution::Parallel, &traces, |(trace, truth)| {
        analyze_trace(&truth.subject_id, Site::Fingertip, trace, &gate, &detect)
            .map(|r| (r.n_events, r.odi, truth.events.len(), truth.true_odi))
    });
    let elapsed = start.elapsed();

    let mut exact = 0;
    let mut worst = 0.0f64;
    for o in outcomes {
        let (found, odi, expected, true_odi) = o.map_err(|e| e.to_string())?;
        if found == expected {
            exact += 1;
        } else {
            worst = worst.max((odi - true_odi).abs());
        }
    }
    let share = exact as f64 / traces.len() as f64;
    check(
        share >= EXACT_COUNT_SHARE,
        format!("exact-count share {share:.4}"),
    )?;
    check(
        worst <= ODI_SLACK_PER_H,
        format!("worst |dODI| {worst:.3}/h"),
    )?;
    check(elapsed < ORACLE_BUDGET, format!("took {elapsed:?}"))?;
    Ok(format!(
        "{exact}/{} exact, worst |dODI| on the rest {worst:.3}/h, {:.1}s",
        traces.len(),
        elapsed.as_secs_f64()
    ))
}

/// 2. 3% / >5 s rule over the depth x duration grid.
fn threshold_rule() -> Outcome {
    let cfg = DetectConfig::default();
    let detect = |signal: &[i64]| {
        let v: Vec<f64> = signal.iter().map(|&x| x as f64 / 10.0).collect();
        detect_desaturations(&SampledTrace::from_values(&v).unwrap(), &cfg).len()
    };
    let mut cases = 0;
    for depth in 25..=40 {
        for width in 3..=10 {
            let s = rect_dip(980, depth, width);
            let expected = count_rect_dips(&s, 30, 5);
            let got = detect(&s);
            check(
                got == expected,
                format!(
                    "depth {}.{} width {width}: detector {got}, reference {expected}",
                    depth / 10,
                    depth % 10
                ),
            )?;
            cases += 1;
        }
    }
    check(detect(&rect_dip(980, 29, 10)) == 0, "2.9% dip detected")?;
    check(
        detect(&rect_dip(980, 30, 5)) == 0,
        "3.0% / 5 s dip detected",
    )?;
    check(
        detect(&rect_dip(980, 30, 6)) == 1,
        "3.0% / 6 s dip not detected once",
    )?;
    Ok(format!("{cases} grid cases match the reference scanner"))
}

/// 3. AUC equals pairwise concordance exactly.
fn auc_concordance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0003);
    for set in 0..500 {
        let n = rng.random_range(2..=200usize);
        let levels = if set % 2 == 0 { 8 } else { 4000 };
        let data = random_scores(&mut rng, n, levels);
        let auc = roc_curve(&data).map_err(|e| e.to_string())?.auc;
        let (num, den) = concordance2(&data);
        let expected = num as f64 / den as f64;
        check(
            auc == expected,
            format!("set {set}: auc {auc} vs concordance {expected}"),
        )?;
    }
    Ok("500 sets, bit-identical".into())
}

/// 4. Threshold selection is the global argmax with smallest-threshold ties.
fn threshold_argmax() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0004);
    let mut ties_seen = 0;
    for set in 0..500 {
        let n = rng.random_range(2..=200usize);
        let levels = if set % 2 == 0 { 6 } else { 4000 };
        let data = random_scores(&mut rng, n, levels);
        let (theta, m) = select_threshold(&data).map_err(|e| e.to_string())?;
        let cands = all_candidate_thresholds(&data);
        let best = cands
            .iter()
            .map(|&t| objective_scaled(&data, t))
            .max()
            .unwrap();
        let first = *cands
            .iter()
            .find(|&&t| objective_scaled(&data, t) == best)
            .unwrap();
        if cands
            .iter()
            .filter(|&&t| objective_scaled(&data, t) == best)
            .count()
            > 1
        {
            ties_seen += 1;
        }
        check(
            objective_scaled(&data, theta) == best,
            format!("set {set}: not a maximizer"),
        )?;
        check(
            theta == first,
            format!("set {set}: threshold {theta}, smallest maximizer {first}"),
        )?;
        let p = data.iter().filter(|d| d.label).count();
        check(
            m.tp + m.fn_ == p && m.tp + m.fp + m.tn + m.fn_ == n,
            format!("set {set}: counts"),
        )?;
    }

    // constructed ties
    let tied = [
        (vec![(1.0, true), (2.0, false)], 0.0),
        (vec![(1.0, true), (1.0, false)], 0.0),
        (
            vec![(1.0, true), (2.0, true), (3.0, false), (4.0, false)],
            0.0,
        ),
    ];
    for (rows, expected) in tied {
        let data: Vec<LabeledScore> = rows
            .iter()
            .enumerate()
            .map(|(i, &(s, l))| LabeledScore::new(format!("T{i}"), s, l))
            .collect();
        let (theta, _) = select_threshold(&data).map_err(|e| e.to_string())?;
        check(
            theta == expected,
            format!("tie case {rows:?}: threshold {theta}, expected {expected}"),
        )?;
    }
    Ok(format!(
        "500 sets ({ties_seen} with tied optima) plus 3 constructed ties"
    ))
}

/// 5. Bland-Altman and regression against hand-derived values.
fn closed_forms() -> Outcome {
    let a = [10.0, 12.0, 15.0, 20.0, 30.0];
    let b = [8.0, 13.0, 11.0, 18.0, 25.0];
    let ba = bland_altman(&a, &b).map_err(|e| e.to_string())?;
    let expected = [
        ("bias", ba.bias, 2.4),
        ("sd", ba.sd, 2.302_172_886_644_267_4),
        ("loa_low", ba.loa_low, -2.112_258_857_822_764),
        ("loa_high", ba.loa_high, 6.912_258_857_822_763_5),
        ("ci_low", ba.bias_ci_low, -0.458_525_190_987_027_4),
        ("ci_high", ba.bias_ci_high, 5.258_525_190_987_028),
        ("pct_low", ba.pct_low, -0.7),
        ("pct_high", ba.pct_high, 4.9),
    ];
    for (name, got, want) in expected {
        check(
            (got - want).abs() <= CLOSED_FORM_TOL,
            format!("{name}: {got} vs {want}"),
        )?;
    }

    let fit = linear_fit(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 4.0, 5.0, 4.0, 5.0])
        .map_err(|e| e.to_string())?;
    for (name, got, want) in [
        ("slope", fit.slope, 0.6),
        ("intercept", fit.intercept, 2.2),
        ("r", fit.r, 0.774_596_669_241_483_5),
    ] {
        check(
            (got - want).abs() <= CLOSED_FORM_TOL,
            format!("{name}: {got} vs {want}"),
        )?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0005);
    for set in 0..500 {
        let n = rng.random_range(2..=101usize);
        let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 40.0).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 40.0).collect();
        let fwd = bland_altman(&x, &y).map_err(|e| e.to_string())?;
        let rev = bland_altman(&y, &x).map_err(|e| e.to_string())?;
        check(
            fwd.bias == -rev.bias,
            format!("set {set}: bias not antisymmetric"),
        )?;
    }
    Ok("8 Bland-Altman and 3 regression values within 1e-9; 500 swaps antisymmetric".into())
}

/// 6. SpO2 agreement identities.
fn spo2_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0006);
    for set in 0..200 {
        let n = rng.random_range(2..=3001usize);
        let reference: Vec<f64> = (0..n).map(|_| 85.0 + rng.random::<f64>() * 15.0).collect();
        let r = SampledTrace::from_values(&reference).unwrap();
        let same = compare_spo2(&r, &r).map_err(|e| e.to_string())?;
        check(
            same.bias == 0.0 && same.a_rms == 0.0 && same.acceptance_rate == 100.0,
            format!("set {set}: identical traces give {same:?}"),
        )?;

        let est: Vec<Option<f64>> = reference
            .iter()
            .map(|v| {
                (rng.random_range(0..5) != 0)
                    .then(|| (v + (rng.random::<f64>() - 0.4) * 6.0).clamp(0.0, 100.0))
            })
            .collect();
        let e = SampledTrace::new(0.0, 1.0, est.clone(), None).unwrap();
        let Ok(agree) = compare_spo2(&e, &r) else {
            continue;
        };
        let diffs: Vec<f64> = est
            .iter()
            .zip(&reference)
            .filter_map(|(e, r)| e.map(|e| e - r))
            .collect();
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / diffs.len() as f64;
        let lhs = agree.a_rms.powi(2);
        let rhs = agree.bias.powi(2) + var;
        check(
            (lhs - rhs).abs() <= IDENTITY_TOL,
            format!("set {set}: a_rms^2 {lhs} vs {rhs}"),
        )?;
    }
    Ok("200 random trace pairs".into())
}

struct CohortRun {
    dir: tempfile::TempDir,
    report: CohortReport,
    elapsed: Duration,
}

fn cohort_spec() -> SynthSpec {
    let spec = SynthSpec {
        seed: COHORT_SEED,
        n_subjects: 170,
        ..SynthSpec::default()
    };
    let deg = |s: Site| spec.sites[&s];
    let (arm, wrist): (SiteDegradation, SiteDegradation) = (deg(Site::UpperArm), deg(Site::Wrist));
    assert!(
        wrist.noise_sd > arm.noise_sd && wrist.artifact_fraction > arm.artifact_fraction,
        "wrist degradation must dominate upper-arm"
    );
    spec
}

fn run_cohort() -> Result<CohortRun, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let spec = cohort_spec();
    let start = Instant::now();
    let files =
        generate_cohort(&spec, dir.path(), Execution::Parallel).map_err(|e| e.to_string())?;
    let loaded = load_cohort(&files.manifest, Execution::Parallel).map_err(|e| e.to_string())?;
    let output = build_cohort_report(
        &loaded.records,
        loaded.failures,
        &RunConfig::default(),
        Execution::Parallel,
    )
    .map_err(|e| e.to_string())?;
    Ok(CohortRun {
        dir,
        report: output.report,
        elapsed: start.elapsed(),
    })
}

/// 7. Site ordering on the 170-subject synthetic cohort.
fn site_ordering(run: &CohortRun) -> Outcome {
    let r = &run.report;
    let arm = r
        .spo2(Site::UpperArm)
        .ok_or("no upper_arm SpO2 agreement")?;
    let wrist = r.spo2(Site::Wrist).ok_or("no wrist SpO2 agreement")?;
    check(
        wrist.a_rms > arm.a_rms,
        format!("a_rms wrist {:.3} <= arm {:.3}", wrist.a_rms, arm.a_rms),
    )?;
    check(
        wrist.acceptance_rate < arm.acceptance_rate,
        format!(
            "acceptance wrist {:.1} >= arm {:.1}",
            wrist.acceptance_rate, arm.acceptance_rate
        ),
    )?;
    let mut aucs = Vec::new();
    for c in CUTOFFS {
        let auc = |s| {
            r.cell(s, c)
                .and_then(|cell| cell.auc)
                .ok_or(format!("no AUC for {s} at {c}"))
        };
        let (f, a, w) = (
            auc(Site::Fingertip)?,
            auc(Site::UpperArm)?,
            auc(Site::Wrist)?,
        );
        check(
            f >= a && a > w,
            format!("AHI > {c}: AUC {f:.3}/{a:.3}/{w:.3}"),
        )?;
        aucs.push(format!(">{c}: {f:.3}/{a:.3}/{w:.3}"));
    }
    Ok(format!(
        "a_rms {:.2} < {:.2}, acceptance {:.1} > {:.1}, AUC finger/arm/wrist {}",
        arm.a_rms,
        wrist.a_rms,
        arm.acceptance_rate,
        wrist.acceptance_rate,
        aucs.join(" ")
    ))
}

fn cli_cohort(manifest: &Path, out: &Path, jobs: usize) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_desatkit"))
        .arg("cohort")
        .arg(manifest)
        .arg("--out-dir")
        .arg(out)
        .arg("--jobs")
        .arg(jobs.to_string())
        .status()
        .map_err(|e| e.to_string())?;
    check(
        status.success(),
        format!("cohort --jobs {jobs} exited with {status}"),
    )
}

fn dir_contents(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| e.to_string())? {
        let entry = entry.map_err(|e| e.to_string())?;
        let bytes = fs::read(entry.path()).map_err(|e| e.to_string())?;
        files.push((entry.file_name().to_string_lossy().into_owned(), bytes));
    }
    files.sort();
    Ok(files)
}

/// 8. `cohort --jobs 1` and `--jobs 8` write identical bytes.
fn determinism(run: &CohortRun) -> Outcome {
    let manifest = run.dir.path().join("manifest.json");
    let one = run.dir.path().join("out_jobs1");
    let eight = run.dir.path().join("out_jobs8");
    cli_cohort(&manifest, &one, 1)?;
    cli_cohort(&manifest, &eight, 8)?;
    let (a, b) = (dir_contents(&one)?, dir_contents(&eight)?);
    check(
        a.iter().any(|(n, _)| n == "report.json"),
        "no report.json written",
    )?;
    check(a.len() == b.len(), "different file sets")?;
    for ((na, ba), (nb, bb)) in a.iter().zip(&b) {
        check(na == nb && ba == bb, format!("{na} differs"))?;
    }
    Ok(format!("{} output files byte-identical", a.len()))
}

/// 9. Full desk-scale pipeline inside the budget.
fn pipeline_runtime(run: &CohortRun) -> Outcome {
    check(
        run.report.n_subjects == 170,
        format!("{} subjects loaded", run.report.n_subjects),
    )?;
    check(run.report.load_failures.is_empty(), "load failures")?;
    check(
        run.elapsed < PIPELINE_BUDGET,
        format!("took {:?}", run.elapsed),
    )?;
    Ok(format!(
        "synth + cohort for 170 x 3 traces in {:.1}s",
        run.elapsed.as_secs_f64()
    ))
}

fn main() -> ExitCode {
    let cohort = run_cohort();
    let with_cohort = |f: fn(&CohortRun) -> Outcome| -> Outcome {
        match &cohort {
            Ok(run) => f(run),
            Err(e) => Err(format!("cohort run failed: {e}")),
        }
    };
    let results: Vec<(&str, Outcome)> = vec![
        ("detector matches synthetic ground truth", detector_oracle()),
        ("3% / >5 s threshold rule", threshold_rule()),
        ("AUC equals pairwise concordance", auc_concordance()),
        (
            "threshold selection is the exhaustive argmax",
            threshold_argmax(),
        ),
        ("Bland-Altman and regression closed forms", closed_forms()),
        ("SpO2 agreement identities", spo2_identities()),
        ("site degradation ordering", with_cohort(site_ordering)),
        (
            "cohort output independent of --jobs",
            with_cohort(determinism),
        ),
        ("full pipeline runtime", with_cohort(pipeline_runtime)),
    ];

    let mut failed = 0;
    for (i, (name, outcome)) in results.iter().enumerate() {
        match outcome {
            Ok(detail) => println!("criterion {}: PASS  {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {}: FAIL  {name}: {why}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {}/{} passed",
        results.len() - failed,
        results.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
