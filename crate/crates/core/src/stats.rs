//! Order-stable statistics helpers.
//!
//! Parallel reductions go through fixed-size chunks that are combined
//! sequentially, so every sum is bit-identical for any rayon thread count.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::rng::{self, domain, StreamId};
use crate::scalar::Scalar;

pub(crate) const CHUNK: usize = 8192;

/// A point estimate with its standard error.
///
/// `diverged` is set when a Monte Carlo moment estimate looks infinite; the
/// value is then `+inf`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    #[serde(with = "crate::serde_ext::ext_real")]
    pub value: f64,
    #[serde(with = "crate::serde_ext::ext_real")]
    pub se: f64,
    #[serde(default)]
    pub diverged: bool,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Estimate { value, se: 0.0, diverged: false }
    }

    pub fn new(value: f64, se: f64) -> Self {
        Estimate { value, se, diverged: false }
    }

    pub fn infinite() -> Self {
        Estimate { value: f64::INFINITY, se: f64::INFINITY, diverged: true }
    }

    pub fn is_finite(&self) -> bool {
        !self.diverged && self.value.is_finite()
    }

    /// True when `|value - target| <= sigmas * se`.
    pub fn within(&self, target: f64, sigmas: f64) -> bool {
        (self.value - target).abs() <= sigmas * self.se
    }
}

/// Sum of `f(x)` over `xs`, reduced in fixed chunks.
pub fn par_sum_by<T: Sync, F: Fn(&T) -> f64 + Sync>(xs: &[T], f: F) -> f64 {
    let partial: Vec<f64> = xs
        .par_chunks(CHUNK)
        .map(|c| c.iter().map(&f).sum::<f64>())
        .collect();
    partial.iter().sum()
}

/// Sums of `f(x)` and `f(x)^2`, reduced in fixed chunks.
pub fn par_sum_sq_by<T: Sync, F: Fn(&T) -> f64 + Sync>(xs: &[T], f: F) -> (f64, f64) {
    let partial: Vec<(f64, f64)> = xs
        .par_chunks(CHUNK)
        .map(|c| {
            c.iter().fold((0.0, 0.0), |(s, q), x| {
                let v = f(x);
                (s + v, q + v * v)
            })
        })
        .collect();
    partial
        .iter()
        .fold((0.0, 0.0), |(s, q), &(a, b)| (s + a, q + b))
}

/// Sample mean of `f(x)` with its standard error `sd / sqrt(n)`.
pub fn mean_estimate_by<T: Sync, F: Fn(&T) -> f64 + Sync>(xs: &[T], f: F) -> Estimate {
    let n = xs.len();
    if n == 0 {
        return Estimate::new(f64::NAN, f64::NAN);
    }
    let (s, q) = par_sum_sq_by(xs, f);
    let nf = n as f64;
    let mean = s / nf;
    let var = if n > 1 {
        ((q - nf * mean * mean) / (nf - 1.0)).max(0.0)
    } else {
        0.0
    };
    Estimate::new(mean, (var / nf).sqrt())
}

pub fn mean<F: Scalar>(xs: &[F]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    par_sum_by(xs, |x| x.f64()) / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance<F: Scalar>(xs: &[F]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    par_sum_by(xs, |x| {
        let d = x.f64() - m;
        d * d
    }) / (n as f64 - 1.0)
}

/// Sample variance with the delta-method standard error `sqrt((m4 - s^4) / n)`.
pub fn variance_estimate<F: Scalar>(xs: &[F]) -> Estimate {
    let n = xs.len();
    if n < 2 {
        return Estimate::new(0.0, f64::INFINITY);
    }
    let m = mean(xs);
    let (s2, s4) = par_sum_sq_by(xs, |x| {
        let d = x.f64() - m;
        d * d
    });
    let nf = n as f64;
    let var = s2 / (nf - 1.0);
    let m2 = s2 / nf;
    let m4 = s4 / nf;
    Estimate::new(var, ((m4 - m2 * m2).max(0.0) / nf).sqrt())
}

/// Empirical quantile (lower order statistic) of a sorted slice.
pub fn sorted_quantile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let idx = ((sorted.len() - 1) as f64 * p.clamp(0.0, 1.0)).floor() as usize;
    sorted[idx]
}

pub fn sort_f64(xs: &mut [f64]) {
    xs.par_sort_unstable_by(|a, b| a.total_cmp(b));
}

/// Percentile bootstrap of a mean: resamples `values` with replacement
/// `resamples` times and returns the `(2.5%, 97.5%)` percentiles of the
/// resampled means.
pub fn bootstrap_mean_ci(values: &[f64], resamples: usize, seed: u64, tag: u64) -> (f64, f64) {
    bootstrap_ci(values.len(), resamples, seed, tag, |idx| {
        idx.iter().map(|&i| values[i]).sum::<f64>() / idx.len() as f64
    })
}

/// Generic percentile bootstrap over index resamples of `0..n`.
pub fn bootstrap_ci<S>(n: usize, resamples: usize, seed: u64, tag: u64, stat: S) -> (f64, f64)
where
    S: Fn(&[usize]) -> f64 + Sync,
{
    if n == 0 || resamples == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mut stats: Vec<f64> = (0..resamples as u64)
        .into_par_iter()
        .map(|b| {
            let mut r = rng::stream(seed, StreamId::new(domain::BOOTSTRAP, tag, b));
            let idx: Vec<usize> = (0..n).map(|_| r.random_range(0..n)).collect();
            stat(&idx)
        })
        .collect();
    stats.sort_by(|a, b| a.total_cmp(b));
    (percentile(&stats, 0.025), percentile(&stats, 0.975))
}

/// Percentile bootstrap of several column means under shared resamples.
///
/// Every resample draws one index multiset over `0..n` and evaluates the
/// mean of every column on it, so correlated columns see the same noise.
pub fn bootstrap_means(columns: &[&[f64]], resamples: usize, seed: u64, tag: u64) -> Vec<(f64, f64)> {
    let n = columns.first().map_or(0, |c| c.len());
    if n == 0 || resamples == 0 {
        return vec![(f64::NAN, f64::NAN); columns.len()];
    }
    assert!(columns.iter().all(|c| c.len() == n), "bootstrap columns differ in length");
    let stats: Vec<Vec<f64>> = (0..resamples as u64)
        .into_par_iter()
        .map(|b| {
            let mut r = rng::stream(seed, StreamId::new(domain::BOOTSTRAP, tag, b));
            let mut acc = vec![0.0; columns.len()];
            for _ in 0..n {
                let i = r.random_range(0..n);
                for (a, c) in acc.iter_mut().zip(columns) {
                    *a += c[i];
                }
            }
            acc.into_iter().map(|a| a / n as f64).collect()
        })
        .collect();
    (0..columns.len())
        .map(|c| {
            let mut v: Vec<f64> = stats.iter().map(|s| s[c]).collect();
            v.sort_by(f64::total_cmp);
            (percentile(&v, 0.025), percentile(&v, 0.975))
        })
        .collect()
}

/// Linear-interpolated percentile of sorted data.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = p.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let w = pos - lo as f64;
    sorted[lo] * (1.0 - w) + sorted[hi] * w
}

/// Two-sample Kolmogorov distance and Wasserstein-1 distance from sorted
/// samples (`∫ |F - G| dx`).
pub fn ecdf_distances(a: &[f64], b: &[f64]) -> (f64, f64) {
    if a.is_empty() || b.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut ks: f64 = 0.0;
    let mut w1 = 0.0;
    while i < a.len() || j < b.len() {
        let x = match (a.get(i), b.get(j)) {
            (Some(&u), Some(&v)) => u.min(v),
            (Some(&u), None) => u,
            (None, Some(&v)) => v,
            (None, None) => unreachable!(),
        };
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        let gap = (i as f64 / na - j as f64 / nb).abs();
        ks = ks.max(gap);
        let next = match (a.get(i), b.get(j)) {
            (Some(&u), Some(&v)) => u.min(v),
            (Some(&u), None) => u,
            (None, Some(&v)) => v,
            (None, None) => x,
        };
        w1 += gap * (next - x);
    }
    (ks, w1)
}
