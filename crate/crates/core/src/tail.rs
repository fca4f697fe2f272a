//! Tail estimation for simulated fixed points: Hill curves, the tail-limit
//! plateau, the Mellin-type constant `K(s)`, the `K/G/m` identity and the
//! positivity verdict.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{Degeneracy, SamplePool};
use crate::error::{Error, Result};
use crate::model::WeightModel;
use crate::moments::MomentProfile;
use crate::rng::{self, domain, StreamId};
use crate::scalar::Scalar;
use crate::stats::{self, bootstrap_means, Estimate};

pub const DEFAULT_GRID_POINTS: usize = 512;
pub const DEFAULT_LOWER_QUANTILE: f64 = 1e-4;
pub const DEFAULT_BOOTSTRAP: usize = 200;
pub const DEFAULT_WINDOW: (f64, f64) = (0.99, 0.9999);
/// Exceedances required at the top of the plateau window.
pub const MIN_EXCEEDANCES: usize = 50;

/// Fraction of samples with `|x| > t`.
pub fn empirical_tail<F: Scalar>(samples: &[F], t: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(t >= 0.0) {
        return Err(Error::invalid("t", "must be nonnegative"));
    }
    let c = samples.par_iter().filter(|x| x.f64().abs() > t).count();
    Ok(c as f64 / samples.len() as f64)
}

/// `Ĝ(s)`: sample mean of `|x|^s`.
#[allow(non_snake_case)]
pub fn estimate_G<F: Scalar>(samples: &[F], s: f64) -> Result<Estimate> {
    if samples.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(s >= 0.0) {
        return Err(Error::invalid("s", "must be nonnegative"));
    }
    Ok(stats::mean_estimate_by(samples, |x| x.f64().abs().powf(s)))
}

/// `|x|` sorted in decreasing order with cumulative log sums, for repeated
/// Hill and exceedance queries.
#[derive(Clone, Debug)]
pub struct TailSample {
    desc: Vec<f64>,
    cum_log: Vec<f64>,
    positive: usize,
}

impl TailSample {
    pub fn new<F: Scalar>(samples: &[F]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut desc: Vec<f64> = samples.par_iter().map(|x| x.f64().abs()).collect();
        desc.par_sort_unstable_by(|a, b| b.total_cmp(a));
        let positive = desc.partition_point(|x| *x > 0.0);
        let mut cum_log = Vec::with_capacity(positive + 1);
        cum_log.push(0.0);
        let mut acc = 0.0;
        for x in &desc[..positive] {
            acc += x.ln();
            cum_log.push(acc);
        }
        Ok(TailSample { desc, cum_log, positive })
    }

    pub fn len(&self) -> usize {
        self.desc.len()
    }

    pub fn is_empty(&self) -> bool {
        self.desc.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.desc[0]
    }

    /// `i`-th largest `|x|`, 1-based.
    pub fn order_stat(&self, i: usize) -> f64 {
        self.desc[i - 1]
    }

    /// Number of samples with `|x| > t`.
    pub fn exceedances(&self, t: f64) -> usize {
        self.desc.partition_point(|x| *x > t)
    }

    /// Hill estimate on the top `k` order statistics, s.e. `β̂ / sqrt(k)`.
    pub fn hill(&self, k: usize) -> Result<Estimate> {
        if k == 0 || k >= self.len() {
            return Err(Error::invalid("k", format!("need 1 <= k < n = {}", self.len())));
        }
        if k + 1 > self.positive {
            return Err(Error::DegenerateSamples(format!(
                "{} strictly positive values, need at least k + 1 = {}",
                self.positive,
                k + 1
            )));
        }
        let mean_log = self.cum_log[k] / k as f64 - self.desc[k].ln();
        if !(mean_log > 0.0) {
            return Err(Error::DegenerateSamples("top order statistics are all equal".into()));
        }
        let b = 1.0 / mean_log;
        Ok(Estimate::new(b, b / (k as f64).sqrt()))
    }

    pub fn hill_curve(&self, ks: &[usize]) -> Vec<HillPoint> {
        ks.iter()
            .filter_map(|&k| self.hill(k).ok().map(|e| HillPoint { k, beta_hat: e.value, se: e.se }))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HillPoint {
    pub k: usize,
    pub beta_hat: f64,
    pub se: f64,
}

/// `⌊n^0.6⌋`.
pub fn default_hill_k(n: usize) -> usize {
    ((n as f64).powf(0.6).floor() as usize).max(1)
}

/// Hill estimate on the `k` largest `|x|`.
pub fn hill_estimate<F: Scalar>(samples: &[F], k: usize) -> Result<Estimate> {
    TailSample::new(samples)?.hill(k)
}

/// About 64 log-spaced `k` from 10 to `n/2`.
pub fn hill_ks(n: usize) -> Vec<usize> {
    let hi = (n / 2).max(2);
    let lo = 10.min(hi);
    let mut ks: Vec<usize> = crate::roots::log_grid(lo as f64, hi as f64, 64)
        .into_iter()
        .map(|k| k.round() as usize)
        .collect();
    ks.dedup();
    ks
}

/// One point of the `t ↦ t^β P̂(|R| > t)` scan.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub t: f64,
    pub value: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plateau {
    pub beta: f64,
    pub window: (f64, f64),
    pub value: f64,
    pub ci: (f64, f64),
    /// Log-log slope of the scan across the window.
    pub slope: f64,
    pub slope_se: f64,
    pub scan: Vec<ScanPoint>,
}

impl Plateau {
    pub fn excludes_zero(&self) -> bool {
        self.ci.0 > 0.0
    }
}

/// Evaluates `t^β P̂(|R|>t)` at order statistics spanning the quantile
/// window and summarizes it by the median. The binomial error of `P̂` gives
/// the band; a scan that keeps decaying faster than `t^-1` across the window
/// is treated as tending to zero and its lower bound set to 0.
pub fn tail_limit_scan(tail: &TailSample, beta: f64, window: (f64, f64)) -> Result<Plateau> {
    if !(beta > 0.0) {
        return Err(Error::invalid("beta", "must be positive"));
    }
    let (q_lo, q_hi) = window;
    if !(0.0 < q_lo && q_lo < q_hi && q_hi < 1.0) {
        return Err(Error::invalid("window", "need 0 < lo < hi < 1"));
    }
    let n = tail.len();
    let nf = n as f64;
    let k_top = (nf * (1.0 - q_hi)).floor() as usize;
    if k_top < MIN_EXCEEDANCES {
        return Err(Error::WindowTooSmall { exceedances: k_top, required: MIN_EXCEEDANCES });
    }
    let k_bottom = ((nf * (1.0 - q_lo)).floor() as usize).min(n - 1).max(k_top);
    let mut ks: Vec<usize> = crate::roots::log_grid(k_top as f64, k_bottom as f64, 48)
        .into_iter()
        .map(|k| k.round() as usize)
        .collect();
    ks.dedup();
    let scan: Vec<ScanPoint> = ks
        .iter()
        .map(|&k| {
            let t = tail.order_stat(k);
            let p = tail.exceedances(t) as f64 / nf;
            let se = (p * (1.0 - p) / nf).sqrt();
            let w = t.powf(beta);
            ScanPoint { t, value: w * p, ci_lo: w * (p - 1.96 * se).max(0.0), ci_hi: w * (p + 1.96 * se) }
        })
        .collect();
    let median_of = |f: &dyn Fn(&ScanPoint) -> f64| {
        let mut v: Vec<f64> = scan.iter().map(f).collect();
        v.sort_by(f64::total_cmp);
        stats::percentile(&v, 0.5)
    };
    let value = median_of(&|p| p.value);
    let mut ci = (median_of(&|p| p.ci_lo), median_of(&|p| p.ci_hi));
    let pts: Vec<(f64, f64)> = scan
        .iter()
        .filter(|p| p.value > 0.0 && p.t > 0.0)
        .map(|p| (p.t.ln(), p.value.ln()))
        .collect();
    let (slope, slope_se) = ols_slope(&pts);
    if value == 0.0 || slope + 2.0 * slope_se < -1.0 {
        ci.0 = 0.0;
    }
    Ok(Plateau { beta, window, value, ci, slope, slope_se, scan })
}

fn ols_slope(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    if pts.len() < 3 {
        return (0.0, f64::INFINITY);
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return (0.0, f64::INFINITY);
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let b = sxy / sxx;
    let rss: f64 = pts.iter().map(|p| (p.1 - my - b * (p.0 - mx)).powi(2)).sum();
    (b, (rss / (n - 2.0) / sxx).sqrt())
}

/// Paired draws for `K̂`: for every pool slot one parent value
/// `|Σ t_k x_{i_k} + q|` and its child terms `|t_k x_{i_k}|`.
#[derive(Clone, Debug)]
pub struct PairedSample {
    pub parents: Vec<f64>,
    offsets: Vec<usize>,
    children: Vec<f64>,
    pub coupled: bool,
}

impl PairedSample {
    /// With `coupled`, child terms reuse the parent's weights and children;
    /// otherwise they come from an independent draw.
    pub fn build<F: Scalar>(model: &WeightModel, pool: &SamplePool<F>, coupled: bool) -> Self {
        let p = pool.len();
        let x = &pool.values;
        let draw = |dom: u64, j: usize, t: &mut Vec<f64>| -> (f64, Vec<f64>) {
            let mut r = rng::stream(pool.seed, StreamId::new(dom, pool.generation, j as u64));
            let q = model.draw_raw(&mut r, t);
            let terms: Vec<f64> = t.iter().map(|tk| tk * x[r.random_range(0..p)].f64()).collect();
            (q, terms)
        };
        let rows: Vec<(f64, Vec<f64>)> = (0..p)
            .into_par_iter()
            .map_init(Vec::new, |t, j| {
                let (q, terms) = draw(domain::PAIRS, j, t);
                let parent = (terms.iter().sum::<f64>() + q).abs();
                let children = if coupled { terms } else { draw(domain::PAIRS_INDEPENDENT, j, t).1 };
                (parent, children.into_iter().map(f64::abs).collect())
            })
            .collect();
        let mut parents = Vec::with_capacity(p);
        let mut offsets = Vec::with_capacity(p + 1);
        let mut children = Vec::new();
        offsets.push(0);
        for (par, ch) in rows {
            parents.push(par);
            children.extend(ch);
            offsets.push(children.len());
        }
        PairedSample { parents, offsets, children, coupled }
    }

    pub fn len(&self) -> usize {
        self.parents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parents.is_empty()
    }

    pub fn children(&self, i: usize) -> &[f64] {
        &self.children[self.offsets[i]..self.offsets[i + 1]]
    }

    fn all_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.parents.iter().chain(self.children.iter()).copied()
    }
}

/// Log-spaced grid `lo = g_0 < … < g_{M-1} = hi` with the cumulative
/// quadrature of `∫_0^{g_j} t^{s-1} dt`: exact `lo^s / s` below the grid,
/// trapezoid in `ln t` on full cells.
#[derive(Clone, Debug)]
pub struct LogGrid {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl LogGrid {
    pub fn new(lo: f64, hi: f64, points: usize) -> Result<Self> {
        if points < 2 {
            return Err(Error::GridError("fewer than two grid points".into()));
        }
        if !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return Err(Error::GridError(format!("need 0 < lo < hi, got [{lo}, {hi}]")));
        }
        Ok(LogGrid { lo, hi, points })
    }

    /// Returns `φ` with `φ(x) ≈ ∫_0^x t^{s-1} dt = x^s / s`.
    fn integrator(&self, s: f64) -> impl Fn(f64) -> f64 + Sync + '_ {
        let m = self.points;
        let du = (self.hi / self.lo).ln() / (m - 1) as f64;
        let g: Vec<f64> = (0..m).map(|j| self.lo * (du * j as f64).exp()).collect();
        let gs: Vec<f64> = g.iter().map(|x| x.powf(s)).collect();
        let mut cum = Vec::with_capacity(m);
        cum.push(gs[0] / s);
        for j in 1..m {
            cum.push(cum[j - 1] + 0.5 * du * (gs[j - 1] + gs[j]));
        }
        let lo = self.lo;
        move |x: f64| {
            if !(x > 0.0) {
                return 0.0;
            }
            if x < lo {
                return x.powf(s) / s;
            }
            let mut j = (((x / lo).ln() / du).floor() as usize).min(m - 1);
            while j > 0 && g[j] > x {
                j -= 1;
            }
            while j + 1 < m && g[j + 1] <= x {
                j += 1;
            }
            cum[j] + (x.powf(s) - gs[j]) / s
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Extrapolation {
    Off,
    /// Apply when `β̂ > s`, otherwise skip with a note.
    Auto,
    /// Apply, failing when `β̂ <= s`.
    Strict,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KOptions {
    pub grid_points: usize,
    pub lower_quantile: f64,
    pub bootstrap: usize,
    pub extrapolation: Extrapolation,
}

impl Default for KOptions {
    fn default() -> Self {
        KOptions {
            grid_points: DEFAULT_GRID_POINTS,
            lower_quantile: DEFAULT_LOWER_QUANTILE,
            bootstrap: DEFAULT_BOOTSTRAP,
            extrapolation: Extrapolation::Auto,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KEstimate {
    pub s: f64,
    pub value: f64,
    /// Bootstrap 95% interval widened by the quadrature error.
    pub ci: (f64, f64),
    pub quadrature_error: f64,
    pub tail_correction: f64,
    pub note: Option<String>,
}

impl KEstimate {
    pub fn half_width(&self) -> f64 {
        0.5 * (self.ci.1 - self.ci.0)
    }

    pub fn ci_contains(&self, x: f64) -> bool {
        self.ci.0 <= x && x <= self.ci.1
    }
}

/// Integration context shared by all `s` for one paired sample.
pub struct KEstimator<'a> {
    pairs: &'a PairedSample,
    grid: Option<LogGrid>,
    coarse: Option<LogGrid>,
    opts: KOptions,
    parent_tail: Option<TailSample>,
    beta_hat: Option<f64>,
    seed: u64,
}

impl<'a> KEstimator<'a> {
    pub fn new(pairs: &'a PairedSample, opts: KOptions, seed: u64) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut pos: Vec<f64> = pairs.all_values().filter(|x| *x > 0.0).collect();
        let (grid, coarse) = if pos.is_empty() {
            (None, None)
        } else {
            let k = ((pos.len() - 1) as f64 * opts.lower_quantile).floor() as usize;
            let (_, lo, _) = pos.select_nth_unstable_by(k, f64::total_cmp);
            let lo = *lo;
            let hi = pos.iter().copied().fold(0.0, f64::max);
            let hi = if hi > lo { hi } else { 2.0 * lo };
            (
                Some(LogGrid::new(lo, hi, opts.grid_points)?),
                Some(LogGrid::new(lo, hi, opts.grid_points.div_ceil(2).max(2))?),
            )
        };
        let parent_tail = TailSample::new(&pairs.parents).ok();
        let beta_hat = parent_tail
            .as_ref()
            .and_then(|t| t.hill(default_hill_k(t.len()).min(t.len().saturating_sub(1)).max(1)).ok())
            .map(|e| e.value);
        Ok(KEstimator { pairs, grid, coarse, opts, parent_tail, beta_hat, seed })
    }

    pub fn beta_hat(&self) -> Option<f64> {
        self.beta_hat
    }

    fn slot_values(&self, grid: &LogGrid, s: f64) -> Vec<f64> {
        let phi = grid.integrator(s);
        (0..self.pairs.len())
            .into_par_iter()
            .map(|i| phi(self.pairs.parents[i]) - self.pairs.children(i).iter().map(|c| phi(*c)).sum::<f64>())
            .collect()
    }

    /// `∫_hi^∞ c t^{-β̂} t^{s-1} dt` with `c` fitted on the top of the grid.
    fn tail_correction(&self, s: f64) -> Result<f64> {
        let (Some(grid), Some(tail), Some(b)) = (&self.grid, &self.parent_tail, self.beta_hat) else {
            return Ok(0.0);
        };
        if b <= s {
            return Err(Error::ExtrapolationUnstable { beta_hat: b, s });
        }
        if !b.is_finite() {
            return Ok(0.0);
        }
        let n = self.pairs.len() as f64;
        let mut kids: Vec<f64> = self.pairs.children.clone();
        kids.par_sort_unstable_by(|a, b| b.total_cmp(a));
        let top = tail.order_stat(((n * 1e-3).ceil() as usize).clamp(1, tail.len()));
        let ts: Vec<f64> = crate::roots::log_grid(top.max(grid.lo), grid.hi, 32);
        let vals: Vec<f64> = ts
            .iter()
            .map(|&t| {
                let d = tail.exceedances(t) as f64 - kids.partition_point(|x| *x > t) as f64;
                (t / grid.hi).powf(b) * d / n
            })
            .collect();
        let c = vals.iter().sum::<f64>() / vals.len() as f64;
        Ok(c * grid.hi.powf(s) / (b - s))
    }

    /// Per-slot contributions `φ(|R_i|) - Σ_k φ(|t_k R_k|)` whose mean is `K̂(s)`.
    pub fn contributions(&self, s: f64) -> Vec<f64> {
        match &self.grid {
            Some(g) => self.slot_values(g, s),
            None => vec![0.0; self.pairs.len()],
        }
    }

    pub fn estimate(&self, s: f64) -> Result<KEstimate> {
        Ok(self.estimate_many(&[s])?.remove(0))
    }

    /// `K̂(s)` for every `s`, bootstrapped under shared resamples.
    pub fn estimate_many(&self, s_list: &[f64]) -> Result<Vec<KEstimate>> {
        if let Some(&s) = s_list.iter().find(|s| !(**s > 0.0)) {
            return Err(Error::invalid("s", format!("must be positive, got {s}")));
        }
        let cols: Vec<Vec<f64>> = s_list.iter().map(|&s| self.contributions(s)).collect();
        let refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
        let cis = bootstrap_means(&refs, self.opts.bootstrap, self.seed, 0x4b);
        let mut out = Vec::with_capacity(s_list.len());
        for ((&s, col), ci) in s_list.iter().zip(&cols).zip(cis) {
            let value = stats::par_sum_by(col, |v| *v) / col.len() as f64;
            let quad = match &self.coarse {
                Some(g) => {
                    let coarse = self.slot_values(g, s);
                    let vc = stats::par_sum_by(&coarse, |v| *v) / coarse.len() as f64;
                    (value - vc).abs() + 1e-12 * value.abs().max(f64::MIN_POSITIVE)
                }
                None => 0.0,
            };
            let (tail_correction, note) = match self.opts.extrapolation {
                Extrapolation::Off => (0.0, None),
                Extrapolation::Strict => (self.tail_correction(s)?, None),
                Extrapolation::Auto => match self.tail_correction(s) {
                    Ok(c) => (c, None),
                    Err(e) => (0.0, Some(format!("{e}; tail correction skipped"))),
                },
            };
            let v = value + tail_correction;
            let widen = quad + tail_correction.abs();
            out.push(KEstimate {
                s,
                value: v,
                ci: (ci.0 + tail_correction - widen, ci.1 + tail_correction + widen),
                quadrature_error: quad,
                tail_correction,
                note,
            });
        }
        Ok(out)
    }
}

/// `K̂(s)` from a converged pool.
#[allow(non_snake_case)]
pub fn estimate_K<F: Scalar>(model: &WeightModel, pool: &SamplePool<F>, s: f64, opts: &KOptions, coupled: bool) -> Result<KEstimate> {
    let pairs = PairedSample::build(model, pool, coupled);
    KEstimator::new(&pairs, opts.clone(), pool.seed)?.estimate(s)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityRow {
    pub s: f64,
    /// `s K̂(s)`.
    pub lhs: f64,
    /// `(1 - m(s)) Ĝ(s)`.
    pub rhs: f64,
    pub residual: f64,
    /// Combined half-width of the two 95% intervals.
    pub ci: f64,
    pub pass: bool,
}

/// `|s K̂(s) - (1 - m(s)) Ĝ(s)|` against `3 ×` the combined interval.
pub fn check_identity<F: Scalar>(
    k_est: &KEstimator,
    pool: &SamplePool<F>,
    s_list: &[f64],
    m: impl Fn(f64) -> Result<Estimate>,
    bootstrap: usize,
) -> Result<Vec<IdentityRow>> {
    let ks = k_est.estimate_many(s_list)?;
    let g_cols: Vec<Vec<f64>> = s_list
        .iter()
        .map(|&s| pool.values.par_iter().map(|x| x.f64().abs().powf(s)).collect())
        .collect();
    let refs: Vec<&[f64]> = g_cols.iter().map(|c| c.as_slice()).collect();
    let g_cis = bootstrap_means(&refs, bootstrap, pool.seed, 0x47);
    let mut rows = Vec::with_capacity(s_list.len());
    for (((&s, k), col), gci) in s_list.iter().zip(ks).zip(&g_cols).zip(g_cis) {
        let ms = m(s)?;
        let g = stats::par_sum_by(col, |v| *v) / col.len() as f64;
        let lhs = s * k.value;
        let rhs = (1.0 - ms.value) * g;
        let hw_l = s * k.half_width();
        let hw_g = 0.5 * (gci.1 - gci.0);
        let hw_r = ((1.0 - ms.value).abs() * hw_g).hypot(1.96 * ms.se * g);
        let ci = hw_l.hypot(hw_r);
        let residual = (lhs - rhs).abs();
        rows.push(IdentityRow { s, lhs, rhs, residual, ci, pass: residual <= 3.0 * ci });
    }
    Ok(rows)
}

/// Five interior points of `(α + 0.1, β - 0.1)`.
pub fn identity_grid(alpha: f64, beta: f64) -> Vec<f64> {
    let (lo, hi) = (alpha + 0.1, beta - 0.1);
    if hi <= lo {
        return Vec::new();
    }
    (1..=5).map(|j| lo + (hi - lo) * j as f64 / 6.0).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceCheck {
    pub m2: f64,
    pub pool_variance: Estimate,
    /// `(1 - m(2)) Var̂(R)`.
    pub lhs: Estimate,
    /// `Var̂(r Σ t_k + q)` over fresh draws.
    pub rhs: Estimate,
    pub residual: f64,
    pub ci: f64,
    pub pass: bool,
}

/// Checks `(1 - m(2)) Var R = Var(r Σ T_k + Q)`.
pub fn variance_identity_check<F: Scalar>(
    model: &WeightModel,
    pool: &SamplePool<F>,
    r: f64,
    m2: f64,
    draws: usize,
    bootstrap: usize,
) -> Result<VarianceCheck> {
    if m2 >= 1.0 {
        return Err(Error::Inapplicable(format!("m(2) = {m2} >= 1")));
    }
    let cond: Vec<f64> = (0..draws as u64)
        .into_par_iter()
        .map_init(Vec::new, |t, i| {
            let mut g = rng::stream(pool.seed, StreamId::new(domain::VARIANCE, i, 0));
            let q = model.draw_raw(&mut g, t);
            r * t.iter().sum::<f64>() + q
        })
        .collect();
    let pv = stats::variance_estimate(&pool.values);
    let rhs = stats::variance_estimate(&cond);
    let lhs = Estimate::new((1.0 - m2) * pv.value, (1.0 - m2) * pv.se);
    let boot_var = |xs: &[f64], tag: u64| -> f64 {
        let (lo, hi) = stats::bootstrap_ci(xs.len(), bootstrap, pool.seed, tag, |idx| {
            let n = idx.len() as f64;
            let m = idx.iter().map(|&i| xs[i]).sum::<f64>() / n;
            idx.iter().map(|&i| (xs[i] - m).powi(2)).sum::<f64>() / (n - 1.0)
        });
        0.5 * (hi - lo)
    };
    let px = pool.to_f64();
    let ci = ((1.0 - m2) * boot_var(&px, 0x56)).hypot(boot_var(&cond, 0x57));
    let residual = (lhs.value - rhs.value).abs();
    let floor = 1e-12 * (1.0 + r * r + lhs.value.abs() + rhs.value.abs());
    Ok(VarianceCheck { m2, pool_variance: pv, lhs, rhs, residual, ci, pass: residual <= 3.0 * ci + floor })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TailVerdict {
    PowerTail { beta: f64, k_hat: f64 },
    Degenerate { r: f64 },
    TrivialZero,
    MomentsBelowSInfty,
    Inconclusive { reason: String },
}

/// Positivity dichotomy: degenerate, trivially zero, a genuine power tail,
/// or all moments below `s_∞` finite.
pub fn positivity_verdict(
    model: &WeightModel,
    profile: &MomentProfile,
    degeneracy: &Degeneracy,
    k_beta: Option<&KEstimate>,
    plateau: Option<&Plateau>,
    alpha: Option<f64>,
) -> TailVerdict {
    if degeneracy.degenerate {
        return TailVerdict::Degenerate { r: degeneracy.r.unwrap_or(f64::NAN) };
    }
    if model.is_homogeneous() && alpha.is_some_and(|a| a < 1.0) {
        return TailVerdict::TrivialZero;
    }
    let gamma_ok = profile.admissible_gamma().is_some();
    let plateau_zero = plateau.map(|p| !p.excludes_zero());
    let k_zero = k_beta.map(|k| k.ci_contains(0.0));
    if let (true, Some(beta)) = (gamma_ok, profile.beta()) {
        if plateau_zero != Some(true) {
            return TailVerdict::PowerTail { beta, k_hat: k_beta.map_or(f64::NAN, |k| k.value) };
        }
    }
    let any_gamma = profile.gamma.iter().any(|g| g.gamma.is_some());
    if any_gamma && k_zero == Some(true) && plateau_zero == Some(true) {
        return TailVerdict::MomentsBelowSInfty;
    }
    let reason = if !gamma_ok {
        "no admissible gamma root".to_string()
    } else {
        "plateau interval includes 0 despite an admissible gamma root".to_string()
    };
    TailVerdict::Inconclusive { reason }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityRow {
    pub s: f64,
    pub half_pool: Estimate,
    pub full_pool: Estimate,
    pub stable: bool,
}

/// `Ĝ(s)` on the first half of the pool against the full pool.
pub fn moment_stability<F: Scalar>(pool: &SamplePool<F>, s_list: &[f64]) -> Vec<StabilityRow> {
    let half = &pool.values[..pool.len() / 2];
    s_list
        .iter()
        .filter_map(|&s| {
            let h = estimate_G(half, s).ok()?;
            let f = estimate_G(&pool.values, s).ok()?;
            let stable = h.is_finite() && f.is_finite() && (h.value - f.value).abs() <= 3.0 * h.se.hypot(f.se) + 1e-12 * f.value.abs();
            Some(StabilityRow { s, half_pool: h, full_pool: f, stable })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailOptions {
    pub hill_k: Option<usize>,
    pub window: (f64, f64),
    pub k: KOptions,
    pub coupled: bool,
    pub identity_s: Option<Vec<f64>>,
    pub variance_draws: usize,
}

impl Default for TailOptions {
    fn default() -> Self {
        TailOptions {
            hill_k: None,
            window: DEFAULT_WINDOW,
            k: KOptions::default(),
            coupled: true,
            identity_s: None,
            variance_draws: 100_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub hill_curve: Vec<HillPoint>,
    pub beta_hat: Option<HillPoint>,
    /// Exponent used for the plateau and `K̂` (β, or the single root).
    #[serde(with = "crate::serde_ext::ext_real_opt")]
    pub reference_exponent: Option<f64>,
    pub plateau: Option<Plateau>,
    pub k_hat: Vec<KEstimate>,
    pub k_at_beta: Option<KEstimate>,
    /// `plateau · m'(β)` against `K̂(β)`.
    pub tail_constant_check: Option<TailConstantCheck>,
    pub identity: Vec<IdentityRow>,
    pub stability: Vec<StabilityRow>,
    pub verdict: TailVerdict,
    pub notes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailConstantCheck {
    pub m_prime_beta: f64,
    pub plateau_times_slope: f64,
    pub k_beta: f64,
    pub residual: f64,
    pub ci: f64,
    pub pass: bool,
}

pub struct TailInputs<'a, F> {
    pub model: &'a WeightModel,
    pub profile: &'a MomentProfile,
    pub pool: &'a SamplePool<F>,
    pub degeneracy: &'a Degeneracy,
    pub alpha: Option<f64>,
    pub m: &'a (dyn Fn(f64) -> Result<Estimate> + Sync),
    pub m_prime: &'a (dyn Fn(f64) -> Result<Estimate> + Sync),
}

/// Runs the full tail analysis on a converged pool.
pub fn analyze_tail<F: Scalar>(inp: &TailInputs<'_, F>, opts: &TailOptions) -> Result<TailReport> {
    let pool = inp.pool;
    let mut notes = Vec::new();
    let tail = TailSample::new(&pool.values)?;
    let n = tail.len();
    let hill_curve = tail.hill_curve(&hill_ks(n));
    let k_sel = opts.hill_k.unwrap_or_else(|| default_hill_k(n)).min(n.saturating_sub(1)).max(1);
    let beta_hat = match tail.hill(k_sel) {
        Ok(e) => Some(HillPoint { k: k_sel, beta_hat: e.value, se: e.se }),
        Err(e) => {
            notes.push(format!("Hill estimate unavailable: {e}"));
            None
        }
    };
    let reference = inp.profile.tail_exponent();
    if inp.profile.beta().is_none() {
        if let Some(r) = reference {
            notes.push(format!("m(s) = 1 has a single root; s = {r} used as the reference exponent"));
        }
    }
    let plateau = match reference {
        Some(b) => match tail_limit_scan(&tail, b, opts.window) {
            Ok(p) => Some(p),
            Err(e) => {
                notes.push(format!("plateau scan skipped: {e}"));
                None
            }
        },
        None => None,
    };

    let pairs = PairedSample::build(inp.model, pool, opts.coupled);
    let k_est = KEstimator::new(&pairs, opts.k.clone(), pool.seed)?;
    let s_list = match (&opts.identity_s, inp.profile.roots) {
        (Some(v), _) => v.clone(),
        (None, Some(p)) => identity_grid(p.alpha, p.beta),
        (None, None) => Vec::new(),
    };
    let identity = check_identity(&k_est, pool, &s_list, inp.m, opts.k.bootstrap)?;
    let mut k_hat: Vec<KEstimate> = if s_list.is_empty() { Vec::new() } else { k_est.estimate_many(&s_list)? };
    let k_at_beta = match reference.filter(|b| *b > 0.0) {
        Some(b) => {
            let k = k_est.estimate(b)?;
            if let Some(nt) = &k.note {
                notes.push(format!("K at the reference exponent: {nt}"));
            }
            k_hat.push(k.clone());
            Some(k)
        }
        None => None,
    };
    let tail_constant_check = match (inp.profile.roots, &plateau, &k_at_beta) {
        (Some(rp), Some(p), Some(k)) => {
            let d = (inp.m_prime)(rp.beta).map(|e| e.value).unwrap_or(rp.m_prime_beta);
            let lhs = p.value * d;
            let hw_p = 0.5 * (p.ci.1 - p.ci.0) * d.abs();
            let ci = hw_p.hypot(k.half_width());
            let residual = (lhs - k.value).abs();
            Some(TailConstantCheck { m_prime_beta: d, plateau_times_slope: lhs, k_beta: k.value, residual, ci, pass: residual <= 3.0 * ci })
        }
        _ => None,
    };
    let stability = match reference {
        Some(b) => {
            let s_inf = inp.profile.s_infty.lo;
            moment_stability(pool, &[b, (0.5 * (b + s_inf)).min(b + 2.0)])
        }
        None => Vec::new(),
    };
    let verdict = positivity_verdict(inp.model, inp.profile, inp.degeneracy, k_at_beta.as_ref(), plateau.as_ref(), inp.alpha);
    Ok(TailReport {
        hill_curve,
        beta_hat,
        reference_exponent: reference,
        plateau,
        k_hat,
        k_at_beta,
        tail_constant_check,
        identity,
        stability,
        verdict,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{NLaw, TLaw};
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn pareto(n: usize, b: f64, seed: u64) -> Vec<f64> {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| (1.0 - rand::Rng::random::<f64>(&mut r)).powf(-1.0 / b)).collect()
    }

    #[test]
    fn tail_fractions() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(empirical_tail(&x, 2.5).unwrap(), 0.5);
        assert_eq!(empirical_tail(&x, 0.0).unwrap(), 1.0);
        assert_eq!(empirical_tail(&x, 5.0).unwrap(), 0.0);
        assert_eq!(empirical_tail::<f64>(&[], 1.0), Err(Error::EmptyInput));
    }

    #[test]
    fn g_estimates() {
        assert_eq!(estimate_G(&[1.0, 2.0], 2.0).unwrap().value, 2.5);
        assert_eq!(estimate_G(&[3.0, -7.0, 0.5], 0.0).unwrap().value, 1.0);
        let e = estimate_G(&pareto(200_000, 2.0, 4), 1.0).unwrap();
        assert!((e.value - 2.0).abs() < 0.1, "{e:?}");
    }

    #[test]
    fn hill_on_pareto() {
        let e = hill_estimate(&pareto(100_000, 2.0, 1), 1000).unwrap();
        assert!((e.value - 2.0).abs() <= 3.0 * 2.0 / 1000f64.sqrt(), "{e:?}");
        assert!(matches!(hill_estimate(&[2.0; 100], 10), Err(Error::DegenerateSamples(_))));
        assert!(hill_estimate(&[1.0, 2.0, 3.0], 3).is_err());
    }

    #[test]
    fn plateau_cases() {
        let p = tail_limit_scan(&TailSample::new(&pareto(1_000_000, 2.0, 2)).unwrap(), 2.0, DEFAULT_WINDOW).unwrap();
        assert!((p.value - 1.0).abs() < 0.1 && p.excludes_zero() && p.ci.0 <= 1.0 && 1.0 <= p.ci.1, "{:?}", (p.value, p.ci));
        let flat = tail_limit_scan(&TailSample::new(&vec![3.0; 1_000_000]).unwrap(), 2.0, DEFAULT_WINDOW).unwrap();
        assert_eq!(flat.value, 0.0);
        assert!(!flat.excludes_zero());
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let normal: Vec<f64> = (0..1_000_000).map(|_| rand::Rng::sample::<f64, _>(&mut r, rand_distr::StandardNormal)).collect();
        let p = tail_limit_scan(&TailSample::new(&normal).unwrap(), 1.0, DEFAULT_WINDOW).unwrap();
        assert!(!p.excludes_zero(), "{p:?}");
        assert!(matches!(
            tail_limit_scan(&TailSample::new(&pareto(1000, 2.0, 2)).unwrap(), 2.0, DEFAULT_WINDOW),
            Err(Error::WindowTooSmall { .. })
        ));
    }

    #[test]
    fn log_grid_integrator_matches_power() {
        let g = LogGrid::new(0.01, 100.0, 512).unwrap();
        for &s in &[0.5, 1.0, 2.0, 3.0] {
            let phi = g.integrator(s);
            for &x in &[0.001f64, 0.01, 0.5, 7.3, 100.0] {
                let exact = x.powf(s) / s;
                assert!((phi(x) - exact).abs() <= 1e-3 * exact, "s={s} x={x}");
            }
        }
        assert!(LogGrid::new(1.0, 1.0, 10).is_err());
        assert!(LogGrid::new(1.0, 2.0, 1).is_err());
    }

    #[test]
    fn coupling_cancels_identity_weights() {
        let m = WeightModel::homogeneous(NLaw::Fixed { n: 1 }, TLaw::PointMass { c: 1.0, p_neg: 0.0 });
        let pool = SamplePool::<f64> { values: pareto(10_000, 1.5, 3), generation: 0, seed: 1, target_mean: None };
        let pairs = PairedSample::build(&m, &pool, true);
        let k = KEstimator::new(&pairs, KOptions::default(), 1).unwrap();
        assert!(k.contributions(1.3).iter().all(|v| *v == 0.0));
    }

    proptest! {
        #[test]
        fn empirical_tail_nonincreasing(xs in prop::collection::vec(-1e3f64..1e3, 1..50), a in 0.0f64..100.0, d in 0.0f64..100.0) {
            prop_assert!(empirical_tail(&xs, a + d).unwrap() <= empirical_tail(&xs, a).unwrap());
        }
    }
}
