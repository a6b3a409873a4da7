//! Agreement and association statistics: SpO2 trace comparison, Bland-Altman
//! on paired ODIs, and ordinary least squares of AHI on ODI.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::types::SampledTrace;

/// Wearable-vs-reference SpO2 agreement over samples where both are valid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Spo2Agreement {
    pub bias: f64,
    pub a_rms: f64,
    /// Percent of reference-valid samples where the estimate is also valid.
    pub acceptance_rate: f64,
    pub n_pairs: usize,
}

/// Running sums behind [`Spo2Agreement`], so per-subject comparisons can be
/// pooled into one cohort-level figure.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AgreementSums {
    pub n_pairs: usize,
    pub n_ref_valid: usize,
    pub sum: f64,
    pub sum_sq: f64,
}

impl AgreementSums {
    pub fn from_traces(est: &SampledTrace, reference: &SampledTrace) -> Result<Self> {
        check_aligned(est, reference)?;
        let mut acc = Self::default();
        for (e, r) in est.values().iter().zip(reference.values()) {
            let Some(r) = r else { continue };
            acc.n_ref_valid += 1;
            if let Some(e) = e {
                let d = e - r;
                acc.n_pairs += 1;
                acc.sum += d;
                acc.sum_sq += d * d;
            }
        }
        Ok(acc)
    }

    pub fn merge(self, other: Self) -> Self {
        Self {
            n_pairs: self.n_pairs + other.n_pairs,
            n_ref_valid: self.n_ref_valid + other.n_ref_valid,
            sum: self.sum + other.sum,
            sum_sq: self.sum_sq + other.sum_sq,
        }
    }

    pub fn finish(&self) -> Result<Spo2Agreement> {
        if self.n_ref_valid == 0 {
            return Err(Error::InsufficientData(
                "reference has no valid samples".into(),
            ));
        }
        if self.n_pairs == 0 {
            return Err(Error::InsufficientData(
                "no samples where both traces are valid".into(),
            ));
        }
        let n = self.n_pairs as f64;
        let bias = self.sum / n;
        // sum_sq/n >= bias^2 mathematically; clamp rounding.
        let a_rms = (self.sum_sq / n).max(bias * bias).sqrt();
        Ok(Spo2Agreement {
            bias,
            a_rms,
            acceptance_rate: 100.0 * self.n_pairs as f64 / self.n_ref_valid as f64,
            n_pairs: self.n_pairs,
        })
    }
}

fn check_aligned(a: &SampledTrace, b: &SampledTrace) -> Result<()> {
    if (a.sample_period() - b.sample_period()).abs() > 1e-12 {
        return Err(Error::Alignment(format!(
            "sample periods differ ({} vs {})",
            a.sample_period(),
            b.sample_period()
        )));
    }
    if (a.start_epoch() - b.start_epoch()).abs() > 1e-9 {
        return Err(Error::Alignment(format!(
            "start times differ ({} vs {})",
            a.start_epoch(),
            b.start_epoch()
        )));
    }
    if a.len() != b.len() {
        return Err(Error::Alignment(format!(
            "lengths differ ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

pub fn compare_spo2(est: &SampledTrace, reference: &SampledTrace) -> Result<Spo2Agreement> {
    AgreementSums::from_traces(est, reference)?.finish()
}

/// Bland-Altman summary of paired differences `a - b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BlandAltman {
    pub bias: f64,
    pub sd: f64,
    /// bias - 1.96 sd
    pub loa_low: f64,
    /// bias + 1.96 sd
    pub loa_high: f64,
    /// 95% t-interval of the mean difference.
    pub bias_ci_low: f64,
    pub bias_ci_high: f64,
    /// Empirical 2.5th / 97.5th percentiles of the differences.
    pub pct_low: f64,
    pub pct_high: f64,
    pub n: usize,
}

pub fn bland_altman(a: &[f64], b: &[f64]) -> Result<BlandAltman> {
    if a.len() != b.len() {
        return Err(Error::InsufficientData(format!(
            "paired samples differ in length ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "Bland-Altman needs at least 2 pairs, got {n}"
        )));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let nf = n as f64;
    let bias = diffs.iter().sum::<f64>() / nf;
    let var = diffs.iter().map(|d| (d - bias).powi(2)).sum::<f64>() / (nf - 1.0);
    let sd = var.sqrt();
    let t = StudentsT::new(0.0, 1.0, nf - 1.0)
        .map_err(|e| Error::Internal(format!("t distribution: {e}")))?
        .inverse_cdf(0.975);
    let half = t * sd / nf.sqrt();

    let mut sorted = diffs;
    sorted.sort_by(f64::total_cmp);
    Ok(BlandAltman {
        bias,
        sd,
        loa_low: bias - 1.96 * sd,
        loa_high: bias + 1.96 * sd,
        bias_ci_low: bias - half,
        bias_ci_high: bias + half,
        pct_low: percentile_sorted(&sorted, 2.5),
        pct_high: percentile_sorted(&sorted, 97.5),
        n,
    })
}

/// Linear-interpolation percentile of sorted data (`p` in percent).
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let h = (n - 1) as f64 * p / 100.0;
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinFit {
    pub slope: f64,
    pub intercept: f64,
    /// Pearson correlation; 0 when y has zero variance.
    pub r: f64,
    pub n: usize,
}

impl LinFit {
    pub fn predict(&self, x: f64) -> f64 {
        self.intercept + self.slope * x
    }
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "linear fit needs >= 2 equal-length pairs, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (xi, yi) in x.iter().zip(y) {
        let dx = xi - mx;
        let dy = yi - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 {
        return Err(Error::DegenerateFit);
    }
    let slope = sxy / sxx;
    let r = if syy == 0.0 {
        0.0
    } else {
        (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
    };
    Ok(LinFit {
        slope,
        intercept: my - slope * mx,
        r,
        n: x.len(),
    })
}
