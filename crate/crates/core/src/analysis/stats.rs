//! Two-sample tests and resampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

/// Largest smaller-group size for which the exact U distribution is used.
pub const EXACT_MAX: usize = 8;

/// Arithmetic mean; exact for constant samples.
pub fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    if x.iter().all(|v| *v == x[0]) {
        return x[0];
    }
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased sample variance; exactly zero for constant samples.
pub fn variance(x: &[f64]) -> f64 {
    if x.iter().all(|v| *v == x[0]) {
        return 0.0;
    }
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Midranks of `values`, doubled so that they stay integral.
fn doubled_midranks(values: &[f64]) -> Vec<u64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0u64; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        // ranks i+1..=j+1 averaged, times two
        let r = (i + 1 + j + 1) as u64;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MannWhitney {
    pub u1: f64,
    pub u2: f64,
    pub p_value: f64,
    pub exact: bool,
}

/// Two-sided Mann-Whitney U test.
///
/// Small samples use the exact permutation distribution of U conditional on
/// the observed ties; larger ones the tie-corrected normal approximation with
/// continuity correction.
pub fn mann_whitney(x: &[f64], y: &[f64]) -> MannWhitney {
    let (n1, n2) = (x.len(), y.len());
    assert!(n1 > 0 && n2 > 0, "mann_whitney needs two nonempty samples");
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let ranks = doubled_midranks(&pooled);
    let r1: u64 = ranks[..n1].iter().sum();
    // 2·U1 = 2·R1 − n1(n1+1)
    let u1x2 = r1 as i64 - (n1 * (n1 + 1)) as i64;
    let nn = (n1 * n2) as i64;
    let u1 = u1x2 as f64 / 2.0;
    let u2 = nn as f64 - u1;
    let exact = n1.min(n2) <= EXACT_MAX;
    let p_value = if exact {
        exact_p(&ranks, n1.min(n2), (u1x2 - nn).abs(), n1, n2)
    } else {
        normal_p(&pooled, n1, n2, u1)
    };
    MannWhitney { u1, u2, p_value, exact }
}

/// P(|2U − n1n2| ≥ dev) over all ways of choosing `k` of the pooled ranks.
fn exact_p(ranks: &[u64], k: usize, dev: i64, n1: usize, n2: usize) -> f64 {
    let total: u64 = ranks.iter().sum();
    let max = total as usize;
    // counts[j][s]: subsets of size j with doubled rank sum s
    let mut counts = vec![vec![0f64; max + 1]; k + 1];
    counts[0][0] = 1.0;
    for &r in ranks {
        let r = r as usize;
        for j in (1..=k).rev() {
            let (lo, hi) = counts.split_at_mut(j);
            for s in (r..=max).rev() {
                hi[0][s] += lo[j - 1][s - r];
            }
        }
    }
    let kk = k as i64;
    let nn = (n1 * n2) as i64;
    let mut hit = 0.0;
    let mut all = 0.0;
    for (s, &c) in counts[k].iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        // the U of the size-k group; deviation is symmetric between groups
        let ux2 = s as i64 - kk * (kk + 1);
        all += c;
        if (ux2 - nn).abs() >= dev {
            hit += c;
        }
    }
    (hit / all).min(1.0)
}

fn normal_p(pooled: &[f64], n1: usize, n2: usize, u1: f64) -> f64 {
    let n = (n1 + n2) as f64;
    let mut sorted = pooled.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut ties = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        ties += t * t * t - t;
        i = j + 1;
    }
    let (a, b) = (n1 as f64, n2 as f64);
    let var = a * b / 12.0 * ((n + 1.0) - ties / (n * (n - 1.0)));
    if var <= 0.0 {
        return 1.0;
    }
    let dev = ((u1 - a * b / 2.0).abs() - 0.5).max(0.0);
    let z = dev / var.sqrt();
    let normal = Normal::standard();
    (2.0 * (1.0 - normal.cdf(z))).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Welch {
    pub t: f64,
    pub df: f64,
    pub p_value: f64,
}

/// Welch's two-sided t-test. Both samples need at least two values. When
/// both variances vanish the test is degenerate: p = 1 for equal means and
/// 0 otherwise.
pub fn welch(x: &[f64], y: &[f64]) -> Welch {
    assert!(x.len() >= 2 && y.len() >= 2, "welch needs two values per sample");
    let (n1, n2) = (x.len() as f64, y.len() as f64);
    let (v1, v2) = (variance(x) / n1, variance(y) / n2);
    let diff = mean(x) - mean(y);
    let se2 = v1 + v2;
    if se2 == 0.0 {
        let p_value = if diff == 0.0 { 1.0 } else { 0.0 };
        let t = if diff == 0.0 { 0.0 } else { diff.signum() * f64::INFINITY };
        return Welch { t, df: n1 + n2 - 2.0, p_value };
    }
    let t = diff / se2.sqrt();
    let df = se2 * se2 / (v1 * v1 / (n1 - 1.0) + v2 * v2 / (n2 - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    let p_value = (2.0 * dist.cdf(-t.abs())).clamp(0.0, 1.0);
    Welch { t, df, p_value }
}

/// Student's pooled-variance t statistic.
pub fn student_t(x: &[f64], y: &[f64]) -> f64 {
    let (n1, n2) = (x.len() as f64, y.len() as f64);
    let sp2 = ((n1 - 1.0) * variance(x) + (n2 - 1.0) * variance(y)) / (n1 + n2 - 2.0);
    (mean(x) - mean(y)) / (sp2 * (1.0 / n1 + 1.0 / n2)).sqrt()
}

/// Linear-interpolation percentile of sorted data, `q` in [0, 1].
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Generator for one analysis item, independent of evaluation order.
pub fn item_rng(seed: u64, item: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(item.as_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 32];
    bytes.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(bytes)
}

/// Percentile bootstrap interval (2.5 %, 97.5 %) for mean(x) − mean(y), each
/// group resampled independently at its own size.
pub fn bootstrap_mean_diff(x: &[f64], y: &[f64], resamples: usize, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let mut diffs = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let a: f64 = (0..x.len()).map(|_| x[rng.random_range(0..x.len())]).sum::<f64>() / x.len() as f64;
        let b: f64 = (0..y.len()).map(|_| y[rng.random_range(0..y.len())]).sum::<f64>() / y.len() as f64;
        diffs.push(a - b);
    }
    diffs.sort_by(f64::total_cmp);
    (percentile(&diffs, 0.025), percentile(&diffs, 0.975))
}
