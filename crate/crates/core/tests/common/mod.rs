//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use desatkit::LabeledScore;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Count of dips in an integer signal (tenths of a percent) made of flat
/// plateaus and flat rectangular dips. A dip counts when it sits at least
/// `drop_tenths` below the plateau before it and lasts more than
/// `min_samples` samples.
pub fn count_rect_dips(signal: &[i64], drop_tenths: i64, min_samples: usize) -> usize {
    let mut count = 0;
    let mut i = 1;
    while i < signal.len() {
        let plateau = signal[i - 1];
        if signal[i] < plateau {
            let start = i;
            while i < signal.len() && signal[i] < plateau {
                i += 1;
            }
            let returned = i < signal.len();
            let depth = plateau - signal[start..i].iter().min().unwrap();
            if returned && depth >= drop_tenths && i - start > min_samples {
                count += 1;
            }
        } else {
            i += 1;
        }
    }
    count
}

/// Baseline, one rectangular dip, baseline; values in tenths of a percent.
pub fn rect_dip(baseline: i64, depth: i64, width: usize) -> Vec<i64> {
    let mut s = vec![baseline; 60];
    s.extend(std::iter::repeat_n(baseline - depth, width));
    s.extend(std::iter::repeat_n(baseline, 60));
    s
}

/// Twice the pairwise concordance count: 2 per correctly ordered
/// (positive, negative) pair, 1 per tie. Returns (numerator, 2PN).
pub fn concordance2(data: &[LabeledScore]) -> (u128, u128) {
    let mut num = 0u128;
    let (mut p, mut n) = (0u128, 0u128);
    for a in data.iter().filter(|d| d.label) {
        p += 1;
        for b in data.iter().filter(|d| !d.label) {
            if a.score > b.score {
                num += 2;
            } else if a.score == b.score {
                num += 1;
            }
        }
    }
    for _ in data.iter().filter(|d| !d.label) {
        n += 1;
    }
    (num, 2 * p * n)
}

/// sens^2 + spec^2 scaled by P^2 N^2, for rule `score > threshold`.
pub fn objective_scaled(data: &[LabeledScore], threshold: f64) -> u128 {
    let p = data.iter().filter(|d| d.label).count() as u128;
    let n = data.len() as u128 - p;
    let tp = data
        .iter()
        .filter(|d| d.label && d.score > threshold)
        .count() as u128;
    let tn = data
        .iter()
        .filter(|d| !d.label && d.score <= threshold)
        .count() as u128;
    tp * tp * n * n + tn * tn * p * p
}

/// Every threshold that yields a distinct partition: below the minimum, between
/// each pair of adjacent distinct scores, above the maximum. Ascending.
pub fn all_candidate_thresholds(data: &[LabeledScore]) -> Vec<f64> {
    let mut s: Vec<f64> = data.iter().map(|d| d.score).collect();
    s.sort_by(f64::total_cmp);
    s.dedup();
    let mut out = vec![s[0] - 1.0];
    out.extend(s.windows(2).map(|w| (w[0] + w[1]) / 2.0));
    out.push(s[s.len() - 1] + 1.0);
    out
}

/// Random labelled scores with both classes present; `levels` small forces ties.
pub fn random_scores(rng: &mut ChaCha8Rng, n: usize, levels: u64) -> Vec<LabeledScore> {
    loop {
        let data: Vec<LabeledScore> = (0..n)
            .map(|i| {
                let label = rng.random_range(0..2) == 1;
                let raw = rng.random_range(0..levels) as f64 / 4.0;
                // positives shifted up a little so AUC is informative
                let score = if label {
                    raw + rng.random_range(0..3) as f64 / 4.0
                } else {
                    raw
                };
                LabeledScore::new(format!("S{i:03}"), score, label)
            })
            .collect();
        if data.iter().any(|d| d.label) && data.iter().any(|d| !d.label) {
            return data;
        }
    }
}
