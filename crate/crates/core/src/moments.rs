//! Moment functions `m`, `μ`, `m_ε`, their domains, the characteristic
//! exponents `α < β`, the single-weight root `γ`, the mean equation and the
//! assumption audit.

use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{QLaw, WeightModel};
use crate::rng::{self, domain, StreamId};
use crate::roots::{log_grid, safeguarded_newton, RootOptions};
use crate::stats::{mean_estimate_by, Estimate};

/// ε values used for the `(D)` / `(D*)` audit.
pub const DEFAULT_EPS_GRID: [f64; 4] = [0.5, 0.25, 0.1, 0.05];
pub const DEFAULT_BUDGET: usize = 100_000;
pub const CLOSED_FORM_ROOT_TOL: f64 = 1e-8;
pub const MONTE_CARLO_ROOT_TOL: f64 = 1e-3;
/// Growth factor per budget doubling above which a mean is declared infinite
/// (checked over four doublings).
pub const DIVERGENCE_GROWTH: f64 = 1.2;

/// Interval enclosing a domain endpoint; `lo == hi` when exact.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Endpoint {
    #[serde(with = "crate::serde_ext::ext_real")]
    pub lo: f64,
    #[serde(with = "crate::serde_ext::ext_real")]
    pub hi: f64,
}

impl Endpoint {
    pub fn exact(x: f64) -> Self {
        Endpoint { lo: x, hi: x }
    }

    pub fn is_exact(&self) -> bool {
        self.lo == self.hi
    }

    /// Tri-state `x < endpoint`.
    pub fn exceeds(&self, x: f64) -> Option<bool> {
        if x < self.lo {
            Some(true)
        } else if x >= self.hi {
            Some(false)
        } else {
            None
        }
    }
}

/// Cached Monte Carlo realizations of the weights (generation order).
///
/// All Monte Carlo moment estimates share one sample, so `s ↦ m̂(s)` is
/// itself a convex function and root searches on it are well posed.
#[derive(Clone, Debug)]
pub struct WeightSample {
    offsets: Vec<usize>,
    t: Vec<f64>,
    q: Vec<f64>,
}

impl WeightSample {
    pub fn draw(model: &WeightModel, count: usize, seed: u64) -> Self {
        let draws: Vec<(f64, Vec<f64>)> = (0..count as u64)
            .into_par_iter()
            .map(|i| {
                let mut r = rng::stream(seed, StreamId::new(domain::MOMENTS, i, 0));
                let mut t = Vec::new();
                let q = model.draw_raw(&mut r, &mut t);
                (q, t)
            })
            .collect();
        let mut offsets = Vec::with_capacity(count + 1);
        offsets.push(0);
        let mut t = Vec::new();
        let mut q = Vec::with_capacity(count);
        for (qi, ti) in draws {
            q.push(qi);
            t.extend(ti);
            offsets.push(t.len());
        }
        WeightSample { offsets, t, q }
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    pub fn weights(&self, i: usize) -> &[f64] {
        &self.t[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn q(&self, i: usize) -> f64 {
        self.q[i]
    }

    /// Mean of `g(t_i, q_i)` with the divergence heuristic: if the typical
    /// block mean grows by more than 20% at each of four budget doublings,
    /// the moment is reported infinite.
    pub fn estimate<G: Fn(&[f64], f64) -> f64 + Sync>(&self, g: G) -> Estimate {
        let values: Vec<f64> = (0..self.len()).into_par_iter().map(|i| g(self.weights(i), self.q[i])).collect();
        monte_carlo_mean(&values)
    }
}

pub(crate) fn monte_carlo_mean(values: &[f64]) -> Estimate {
    if values.iter().any(|v| !v.is_finite()) {
        return Estimate::infinite();
    }
    let levels = growth_levels(values);
    if levels.len() == 5 && levels.windows(2).all(|w| w[0] > 0.0 && w[1] > DIVERGENCE_GROWTH * w[0]) {
        return Estimate::infinite();
    }
    mean_estimate_by(values, |v| *v)
}

/// Typical sample mean at five budgets `b, 2b, 4b, 8b, 16b`: the median of
/// the means of disjoint blocks of that size (at least 16 blocks each).
fn growth_levels(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let base = n / 256;
    if base == 0 {
        return Vec::new();
    }
    (0..5)
        .map(|j| {
            let b = base << j;
            let mut means: Vec<f64> = values.par_chunks_exact(b).map(|c| c.iter().sum::<f64>() / b as f64).collect();
            means.sort_by(f64::total_cmp);
            means[means.len() / 2]
        })
        .collect()
}

/// Evaluates the moment functions of one model, by closed form where the
/// family admits one (and `model.closed_form` is set), otherwise by Monte
/// Carlo over a cached sample of `budget` draws.
pub struct MomentEvaluator<'a> {
    model: &'a WeightModel,
    budget: usize,
    seed: u64,
    sample: OnceLock<WeightSample>,
}

impl<'a> MomentEvaluator<'a> {
    pub fn new(model: &'a WeightModel, budget: usize, seed: u64) -> Self {
        MomentEvaluator {
            model,
            budget: budget.max(32),
            seed,
            sample: OnceLock::new(),
        }
    }

    pub fn model(&self) -> &WeightModel {
        self.model
    }

    pub fn closed_form(&self) -> bool {
        self.model.closed_form
    }

    pub fn sample(&self) -> &WeightSample {
        self.sample.get_or_init(|| WeightSample::draw(self.model, self.budget, self.seed))
    }

    fn check_s(s: f64) -> Result<()> {
        if s >= 0.0 && s.is_finite() {
            Ok(())
        } else {
            Err(Error::DomainError { s, reason: "s must be finite and nonnegative".into() })
        }
    }

    /// `m(s) = E Σ|T_k|^s`.
    pub fn m(&self, s: f64) -> Result<Estimate> {
        Self::check_s(s)?;
        if self.closed_form() {
            Ok(Estimate::exact(self.model.m_closed(s)))
        } else {
            Ok(self.m_mc(s))
        }
    }

    pub fn m_mc(&self, s: f64) -> Estimate {
        self.sample().estimate(|t, _| t.iter().map(|x| x.abs().powf(s)).sum())
    }

    /// `μ(s) = E(Σ|T_k|)^s`.
    pub fn mu(&self, s: f64) -> Result<Estimate> {
        Self::check_s(s)?;
        match self.model.mu_closed(s).filter(|_| self.closed_form()) {
            Some(v) => Ok(Estimate::exact(v)),
            None => Ok(self.mu_mc(s)),
        }
    }

    pub fn mu_mc(&self, s: f64) -> Estimate {
        self.sample().estimate(|t, _| t.iter().map(|x| x.abs()).sum::<f64>().powf(s))
    }

    /// `m_ε(s) = E(Σ|T_k|^s)^(1+ε)`.
    pub fn m_eps(&self, s: f64, eps: f64) -> Result<Estimate> {
        Self::check_s(s)?;
        if !(eps > 0.0) {
            return Err(Error::invalid("eps", "must be strictly positive"));
        }
        match self.model.m_eps_closed(s, eps).filter(|_| self.closed_form()) {
            Some(v) => Ok(Estimate::exact(v)),
            None => Ok(self.m_eps_mc(s, eps)),
        }
    }

    pub fn m_eps_mc(&self, s: f64, eps: f64) -> Estimate {
        self.sample()
            .estimate(|t, _| t.iter().map(|x| x.abs().powf(s)).sum::<f64>().powf(1.0 + eps))
    }

    /// `m'(s) = E Σ|T_k|^s ln|T_k|`.
    pub fn m_prime(&self, s: f64) -> Result<Estimate> {
        Self::check_s(s)?;
        if self.closed_form() {
            if s >= self.model.s1_closed() {
                return Err(Error::DomainError { s, reason: "beyond s1".into() });
            }
            return Ok(Estimate::exact(self.model.m_prime_closed(s)));
        }
        let e = self.m_prime_mc(s);
        if !e.is_finite() {
            return Err(Error::DomainError { s, reason: "Monte Carlo estimate diverges".into() });
        }
        Ok(e)
    }

    pub fn m_prime_mc(&self, s: f64) -> Estimate {
        self.sample().estimate(|t, _| {
            t.iter()
                .filter(|x| **x != 0.0)
                .map(|x| {
                    let a = x.abs();
                    a.powf(s) * a.ln()
                })
                .sum()
        })
    }

    /// `E|T_k|^s` for the k-th weight in generation order (1-based).
    pub fn single_weight(&self, k: usize, s: f64) -> Estimate {
        if self.closed_form() {
            Estimate::exact(self.model.single_weight_closed(k, s))
        } else {
            self.sample()
                .estimate(|t, _| t.get(k - 1).map_or(0.0, |x| if *x == 0.0 { 0.0 } else { x.abs().powf(s) }))
        }
    }

    /// `E Σ T_k`.
    pub fn mean_sum_t(&self) -> Estimate {
        if self.closed_form() {
            Estimate::exact(self.model.mean_sum_t())
        } else {
            self.sample().estimate(|t, _| t.iter().sum())
        }
    }

    /// `E Q`.
    pub fn mean_q(&self) -> Estimate {
        if self.closed_form() || matches!(self.model.q_law, QLaw::PointMass { .. }) {
            match self.model.mean_q() {
                Some(v) => Estimate::exact(v),
                None => Estimate::infinite(),
            }
        } else {
            self.sample().estimate(|_, q| q)
        }
    }

    pub fn q_abs_moment_mc(&self, s: f64) -> Estimate {
        self.sample().estimate(|_, q| q.abs().powf(s))
    }
}

/// Brackets `sup{s : f(s) < ∞}` on `[0, cap]` by bisection on the
/// divergence heuristic. Returns `[cap, ∞]` when `f(cap)` is finite.
pub fn estimate_domain_sup(f: impl Fn(f64) -> Estimate, cap: f64, steps: usize) -> Endpoint {
    if f(cap).is_finite() {
        return Endpoint { lo: cap, hi: f64::INFINITY };
    }
    if !f(0.0).is_finite() {
        return Endpoint::exact(0.0);
    }
    let (mut lo, mut hi) = (0.0, cap);
    for _ in 0..steps {
        let mid = 0.5 * (lo + hi);
        if f(mid).is_finite() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Endpoint { lo, hi }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RootSearch {
    /// Residual tolerance on the `m` scale.
    pub tol: f64,
    /// Upper end of the root search when `s1` is infinite.
    pub cap: f64,
    pub grid_points: usize,
}

impl RootSearch {
    pub fn for_model(model: &WeightModel) -> Self {
        RootSearch {
            tol: if model.closed_form { CLOSED_FORM_ROOT_TOL } else { MONTE_CARLO_ROOT_TOL },
            cap: 64.0,
            grid_points: 400,
        }
    }
}

/// The two solutions of `m(s) = 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RootPair {
    pub alpha: f64,
    pub beta: f64,
    /// Standard errors propagated from Monte Carlo `m̂` (0 for closed forms).
    pub alpha_se: f64,
    pub beta_se: f64,
    pub m_prime_alpha: f64,
    pub m_prime_beta: f64,
    pub residual_alpha: f64,
    pub residual_beta: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Side {
    Above,
    Below,
    Near,
}

fn classify(e: &Estimate) -> Side {
    let f = e.value - 1.0;
    let band = 3.0 * e.se;
    if e.diverged || f > band {
        Side::Above
    } else if f < -band {
        Side::Below
    } else {
        Side::Near
    }
}

fn root_grid(eval: &MomentEvaluator, search: &RootSearch, lo: f64) -> Vec<f64> {
    let s1 = domain_s1(eval, search.cap);
    let top = if s1.lo.is_finite() { (s1.lo * (1.0 - 1e-9)).min(search.cap) } else { search.cap };
    let mut g = vec![lo];
    let start = if lo > 0.0 { lo * (1.0 + 1e-9) } else { 1e-3 };
    if top > start {
        g.extend(log_grid(start, top, search.grid_points));
    }
    g
}

fn refine(eval: &MomentEvaluator, f: &dyn Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> Option<f64> {
    let df = |s: f64| eval.m_prime(s).map(|e| e.value).unwrap_or(f64::NAN);
    let opts = RootOptions { f_tol: tol, x_tol: 1e-13, max_iter: 300 };
    safeguarded_newton(f, df, lo, hi, opts).map(|r| r.x)
}

/// Locates `α < β` with `m(α) = m(β) = 1`.
///
/// `m - 1` is scanned on a log-spaced grid over the moment domain; each
/// sign change on either side of the minimum is refined by safeguarded
/// Newton with the derivative `m'`.
pub fn find_roots(eval: &MomentEvaluator, search: &RootSearch) -> Result<RootPair> {
    let grid = root_grid(eval, search, 0.0);
    let values: Vec<Estimate> = grid.iter().map(|&s| eval.m(s)).collect::<Result<_>>()?;
    let sides: Vec<Side> = values.iter().map(classify).collect();
    let i_min = values
        .iter()
        .enumerate()
        .filter(|(_, e)| !e.diverged)
        .min_by(|a, b| a.1.value.total_cmp(&b.1.value))
        .map(|(i, _)| i)
        .ok_or_else(|| Error::NoRoot("m is infinite on the whole grid".into()))?;
    let min = values[i_min];
    match sides[i_min] {
        Side::Above => {
            return Err(Error::NoRoot(format!("min m = {:.6} at s = {:.4} exceeds 1", min.value, grid[i_min])));
        }
        Side::Near if eval.closed_form() || min.se == 0.0 => {
            return Err(Error::SingleRoot { root: grid[i_min] });
        }
        Side::Near => {
            return Err(Error::MonteCarloInconclusive(format!(
                "min m = {:.4} ± {:.4} straddles 1",
                min.value, min.se
            )));
        }
        Side::Below => {}
    }
    let f = |s: f64| eval.m(s).map(|e| e.value).unwrap_or(f64::INFINITY) - 1.0;
    let mc = !eval.closed_form();

    // left crossing: last clearly-above point before the minimum
    let left = match (0..i_min).rev().find(|&i| sides[i] == Side::Above) {
        Some(i) => {
            let j = (i + 1..=i_min).find(|&j| sides[j] == Side::Below).unwrap_or(i_min);
            refine(eval, &f, grid[i], grid[j], search.tol)
        }
        None => match (0..i_min).find(|&i| sides[i] == Side::Near) {
            Some(_) if mc => {
                return Err(Error::MonteCarloInconclusive("left bracket straddles 1".into()));
            }
            Some(i) => Some(grid[i]),
            None => None,
        },
    };
    let right = match (i_min + 1..grid.len()).find(|&i| sides[i] == Side::Above) {
        Some(i) => {
            let j = (i_min..i).rev().find(|&j| sides[j] == Side::Below).unwrap_or(i_min);
            refine(eval, &f, grid[j], grid[i], search.tol)
        }
        None => match (i_min + 1..grid.len()).find(|&i| sides[i] == Side::Near) {
            Some(_) if mc => {
                return Err(Error::MonteCarloInconclusive("right bracket straddles 1".into()));
            }
            Some(i) => Some(grid[i]),
            None => None,
        },
    };
    let (alpha, beta) = match (left, right) {
        (Some(a), Some(b)) => (a, b),
        (Some(r), None) | (None, Some(r)) => return Err(Error::SingleRoot { root: r }),
        (None, None) => {
            return Err(Error::NoRoot(format!("m < 1 on the whole search range (min {:.6})", min.value)));
        }
    };
    let at = |s: f64| -> Result<(Estimate, Estimate)> { Ok((eval.m(s)?, eval.m_prime(s)?)) };
    let (ma, da) = at(alpha)?;
    let (mb, db) = at(beta)?;
    Ok(RootPair {
        alpha,
        beta,
        alpha_se: ma.se / da.value.abs(),
        beta_se: mb.se / db.value.abs(),
        m_prime_alpha: da.value,
        m_prime_beta: db.value,
        residual_alpha: (ma.value - 1.0).abs(),
        residual_beta: (mb.value - 1.0).abs(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaResult {
    /// 1-based weight index (generation order).
    pub k: usize,
    pub gamma: f64,
    /// Set when `E|T_k|^s = 1` on a whole interval above `β`.
    pub multi_root: bool,
}

/// Root `γ > β` of `E|T_k|^γ = 1`.
pub fn find_gamma(eval: &MomentEvaluator, k: usize, beta: f64, tol: f64, cap: f64) -> Result<GammaResult> {
    if k == 0 {
        return Err(Error::invalid("k", "weight index is 1-based"));
    }
    let s1 = domain_s1(eval, cap);
    let top = if s1.lo.is_finite() { s1.lo * (1.0 - 1e-9) } else { cap.max(4.0 * beta) };
    let start = beta * (1.0 + 1e-9) + 1e-9;
    if top <= start {
        return Err(Error::NoGamma { k });
    }
    let grid = log_grid(start, top, 400);
    let values: Vec<Estimate> = grid.iter().map(|&s| eval.single_weight(k, s)).collect();
    if values.iter().all(|e| (e.value - 1.0).abs() <= tol.max(3.0 * e.se)) {
        return Ok(GammaResult { k, gamma: grid[0], multi_root: true });
    }
    let sides: Vec<Side> = values.iter().map(classify).collect();
    for j in 1..grid.len() {
        if sides[j] == Side::Above {
            let Some(i) = (0..j).rev().find(|&i| sides[i] == Side::Below) else {
                break;
            };
            let f = |s: f64| eval.single_weight(k, s).value - 1.0;
            let df = |s: f64| {
                if eval.closed_form() {
                    eval.model().n_law.tail(k) * eval.model().t_law.abs_moment_log(s)
                } else {
                    f64::NAN
                }
            };
            let opts = RootOptions { f_tol: tol, x_tol: 1e-13, max_iter: 300 };
            let r = safeguarded_newton(f, df, grid[i], grid[j], opts).ok_or(Error::NoGamma { k })?;
            return Ok(GammaResult { k, gamma: r.x, multi_root: false });
        }
    }
    Err(Error::NoGamma { k })
}

/// Solution of the mean equation `r = r E Σ T_k + E Q`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MeanSolution {
    Unique { r: f64 },
    NonUnique,
    NoSolution { reason: String },
}

impl MeanSolution {
    pub fn r(&self) -> Option<f64> {
        match self {
            MeanSolution::Unique { r } => Some(*r),
            _ => None,
        }
    }
}

fn indistinguishable(e: &Estimate, target: f64) -> bool {
    (e.value - target).abs() <= 1e-12 + 3.0 * e.se
}

/// `r = E Q / (1 - E Σ T_k)`.
pub fn solve_mean(sum_t: Estimate, q: Estimate) -> Result<f64> {
    if !q.is_finite() {
        return Err(Error::NoSolution("E Q is infinite".into()));
    }
    if !sum_t.is_finite() {
        return Err(Error::NoSolution("E sum T is infinite".into()));
    }
    if indistinguishable(&sum_t, 1.0) {
        if indistinguishable(&q, 0.0) {
            return Err(Error::NonUnique);
        }
        return Err(Error::NoSolution(format!("E sum T = 1 but E Q = {}", q.value)));
    }
    Ok(q.value / (1.0 - sum_t.value))
}

pub fn solve_mean_equation(eval: &MomentEvaluator) -> Result<f64> {
    solve_mean(eval.mean_sum_t(), eval.mean_q())
}

fn domain_s1(eval: &MomentEvaluator, cap: f64) -> Endpoint {
    if eval.closed_form() {
        Endpoint::exact(eval.model().s1_closed())
    } else {
        estimate_domain_sup(|s| eval.m_mc(s), cap, 16)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsEndpoint {
    pub eps: f64,
    pub s_eps: Endpoint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaEntry {
    pub k: usize,
    #[serde(with = "crate::serde_ext::ext_real_opt")]
    pub gamma: Option<f64>,
    pub multi_root: bool,
    /// `γ` below `s_∞` (or `ŝ_∞` when `β < 1`); `None` when undecidable.
    pub in_range: Option<bool>,
    pub diagnostic: Option<String>,
}

/// The computed moment landscape of a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentProfile {
    pub closed_form: bool,
    pub s0: Endpoint,
    pub s1: Endpoint,
    pub s_infty: Endpoint,
    pub s_eps: Vec<EpsEndpoint>,
    pub s_hat_infty: Endpoint,
    pub roots: Option<RootPair>,
    /// Set when `m = 1` has exactly one solution.
    pub single_root: Option<f64>,
    pub root_diagnostic: Option<String>,
    pub gamma: Vec<GammaEntry>,
    pub m2: Estimate,
    pub mean_sum_t: Estimate,
    pub mean_q: Estimate,
    pub mean_solution: MeanSolution,
    pub slope_signs_ok: Option<bool>,
}

impl MomentProfile {
    pub fn compute(eval: &MomentEvaluator, search: &RootSearch, eps_grid: &[f64]) -> Self {
        let model = eval.model();
        let closed = eval.closed_form();
        let cap = search.cap;
        let s0 = Endpoint::exact(0.0);
        let s1 = domain_s1(eval, cap);
        let s_infty = if closed { s1 } else { estimate_domain_sup(|s| eval.mu_mc(s), cap, 16) };
        let s_eps: Vec<EpsEndpoint> = eps_grid
            .iter()
            .map(|&eps| EpsEndpoint {
                eps,
                s_eps: if closed {
                    Endpoint::exact(s1.lo / (1.0 + eps))
                } else {
                    estimate_domain_sup(|s| eval.m_eps_mc(s, eps), cap, 16)
                },
            })
            .collect();
        let s_hat_infty = s_eps
            .iter()
            .min_by(|a, b| a.eps.total_cmp(&b.eps))
            .map(|e| Endpoint { lo: e.s_eps.lo.min(1.0), hi: e.s_eps.hi.min(1.0) })
            .unwrap_or(Endpoint::exact(1.0));

        let (roots, single_root, root_diagnostic) = match find_roots(eval, search) {
            Ok(p) => (Some(p), None, None),
            Err(Error::SingleRoot { root }) => (None, Some(root), Some(format!("single root at s = {root}"))),
            Err(e) => (None, None, Some(e.to_string())),
        };
        let slope_signs_ok = roots.map(|p| p.m_prime_alpha < 0.0 && p.m_prime_beta > 0.0);

        let mut gamma = Vec::new();
        if let Some(p) = roots {
            let limit = if p.beta < 1.0 { s_hat_infty } else { s_infty };
            let kmax = model.n_law.max_n().clamp(1, 8);
            for k in 1..=kmax {
                if model.n_law.tail(k) == 0.0 {
                    break;
                }
                gamma.push(match find_gamma(eval, k, p.beta, search.tol, cap) {
                    Ok(g) => GammaEntry {
                        k,
                        gamma: Some(g.gamma),
                        multi_root: g.multi_root,
                        in_range: limit.exceeds(g.gamma),
                        diagnostic: g.multi_root.then(|| "E|T_k|^s = 1 on an interval above beta".to_string()),
                    },
                    Err(e) => GammaEntry { k, gamma: None, multi_root: false, in_range: None, diagnostic: Some(e.to_string()) },
                });
            }
        }

        let mean_sum_t = eval.mean_sum_t();
        let mean_q = eval.mean_q();
        let mean_solution = match solve_mean(mean_sum_t, mean_q) {
            Ok(r) => MeanSolution::Unique { r },
            Err(Error::NonUnique) => MeanSolution::NonUnique,
            Err(e) => MeanSolution::NoSolution { reason: e.to_string() },
        };
        MomentProfile {
            closed_form: closed,
            s0,
            s1,
            s_infty,
            s_eps,
            s_hat_infty,
            roots,
            single_root,
            root_diagnostic,
            gamma,
            m2: eval.m(2.0).unwrap_or(Estimate::infinite()),
            mean_sum_t,
            mean_q,
            mean_solution,
            slope_signs_ok,
        }
    }

    pub fn alpha(&self) -> Option<f64> {
        self.roots.map(|p| p.alpha)
    }

    pub fn beta(&self) -> Option<f64> {
        self.roots.map(|p| p.beta)
    }

    /// `β`, or the unique root of `m = 1` when only one exists.
    pub fn tail_exponent(&self) -> Option<f64> {
        self.beta().or(self.single_root)
    }

    /// `α`, or the unique root when `m` crosses 1 from above there.
    pub fn characteristic_exponent(&self, eval: &MomentEvaluator) -> Option<f64> {
        self.alpha().or_else(|| {
            self.single_root
                .filter(|&r| eval.m_prime(r).map(|d| d.value < 0.0).unwrap_or(false))
        })
    }

    /// First `γ` that lies in its admissible range.
    pub fn admissible_gamma(&self) -> Option<&GammaEntry> {
        self.gamma.iter().find(|g| g.gamma.is_some() && g.in_range == Some(true))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Unknown,
}

impl Verdict {
    fn from_opt(v: Option<bool>) -> Self {
        match v {
            Some(true) => Verdict::Pass,
            Some(false) => Verdict::Fail,
            None => Verdict::Unknown,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub verdict: Verdict,
    pub evidence: String,
}

impl Check {
    fn new(verdict: Verdict, evidence: impl Into<String>) -> Self {
        Check { verdict, evidence: evidence.into() }
    }
}

/// Verdicts for the standing conditions of the tail theory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    /// Two roots strictly inside `(s0, s1)`.
    pub a: Check,
    /// `E|Q|^s < ∞` for all `s < s1`.
    pub b: Check,
    /// `β < s_∞`.
    pub c: Check,
    /// `[β - δ0, β] ⊂ 𝔇_ε0`.
    pub d: Check,
    /// `[β - δ0, 1] ⊂ 𝔇_ε0`.
    pub d_star: Check,
    /// Mean equation solvable.
    pub e: Check,
    /// `P(T_j < 0) > 0`.
    pub sign: Check,
    pub nonlattice: Check,
    pub alpha_range: Check,
    /// A nonzero solution with finite second moment needs `m(2) <= 1`.
    pub second_moment: Check,
    /// Hypotheses of the tail-limit theorem (A, sign, nonlattice, and C for
    /// `β > 1` or D for `β <= 1`).
    pub tail_limit: Check,
}

fn fmt_endpoint(e: &Endpoint) -> String {
    if e.is_exact() {
        format!("{}", e.lo)
    } else {
        format!("[{}, {}]", e.lo, e.hi)
    }
}

/// Audits every standing condition; unverifiable items are `Unknown`.
pub fn check_assumptions(eval: &MomentEvaluator, profile: &MomentProfile) -> AssumptionReport {
    let model = eval.model();
    let beta = profile.beta();

    let a = match profile.roots {
        Some(p) => {
            let inside = profile.s0.hi < p.alpha && p.beta < profile.s1.lo;
            Check::new(
                if inside { Verdict::Pass } else { Verdict::Fail },
                format!("alpha = {:.6}, beta = {:.6}, s0 = {}, s1 = {}", p.alpha, p.beta, fmt_endpoint(&profile.s0), fmt_endpoint(&profile.s1)),
            )
        }
        None => {
            let why = profile.root_diagnostic.clone().unwrap_or_default();
            let verdict = if why.starts_with("Monte Carlo") { Verdict::Unknown } else { Verdict::Fail };
            Check::new(verdict, format!("m(s) = 1 does not have two roots: {why}"))
        }
    };

    let q_sup = Endpoint::exact(model.q_moment_sup());
    let b_verdict = if q_sup.lo >= profile.s1.hi {
        Verdict::Pass
    } else if q_sup.hi < profile.s1.lo {
        Verdict::Fail
    } else {
        Verdict::Unknown
    };
    let b = Check::new(
        b_verdict,
        format!("sup{{s: E|Q|^s < inf}} = {}, s1 = {}", fmt_endpoint(&q_sup), fmt_endpoint(&profile.s1)),
    );

    let c = match beta {
        Some(bt) => Check::new(
            Verdict::from_opt(profile.s_infty.exceeds(bt)),
            format!("beta = {bt:.6}, s_infty = {}", fmt_endpoint(&profile.s_infty)),
        ),
        None => Check::new(Verdict::Unknown, "beta not available"),
    };

    let eps_verdict = |threshold: f64| -> (Verdict, String) {
        let votes: Vec<Option<bool>> = profile.s_eps.iter().map(|e| e.s_eps.exceeds(threshold)).collect();
        let verdict = if votes.contains(&Some(true)) {
            Verdict::Pass
        } else if votes.iter().all(|v| *v == Some(false)) {
            Verdict::Fail
        } else {
            Verdict::Unknown
        };
        let detail = profile
            .s_eps
            .iter()
            .map(|e| format!("s_eps({}) = {}", e.eps, fmt_endpoint(&e.s_eps)))
            .collect::<Vec<_>>()
            .join(", ");
        (verdict, detail)
    };
    let d = match beta {
        Some(bt) => {
            let (v, detail) = eps_verdict(bt);
            let value = profile
                .s_eps
                .first()
                .and_then(|e| eval.m_eps(bt, e.eps).ok().map(|m| format!("; m_eps(beta) = {:.6} at eps = {}", m.value, e.eps)))
                .unwrap_or_default();
            Check::new(v, format!("need s_eps > beta = {bt:.6}: {detail}{value}"))
        }
        None => Check::new(Verdict::Unknown, "beta not available"),
    };
    let d_star = match beta {
        Some(bt) if bt - (0.1f64).min(bt / 2.0) > 1.0 => Check::new(Verdict::Pass, "interval [beta - delta0, 1] is empty"),
        Some(_) => {
            let (v, detail) = eps_verdict(1.0);
            Check::new(v, format!("need s_eps > 1: {detail}"))
        }
        None => Check::new(Verdict::Unknown, "beta not available"),
    };

    let alpha = profile.characteristic_exponent(eval);
    let e_required = alpha.map(|a| a >= 1.0);
    let e = match &profile.mean_solution {
        MeanSolution::Unique { r } => Check::new(Verdict::Pass, format!("r = {r}")),
        MeanSolution::NonUnique => Check::new(Verdict::Pass, "E sum T = 1 and E Q = 0: every r solves the mean equation"),
        MeanSolution::NoSolution { reason } => Check::new(
            if e_required == Some(false) { Verdict::Unknown } else { Verdict::Fail },
            format!("{reason} (required only when alpha >= 1)"),
        ),
    };

    let p_neg = model.t_law.neg_prob() * (1.0 - model.n_law.pmf().first().copied().unwrap_or(0.0));
    let sign = Check::new(
        if p_neg > 0.0 { Verdict::Pass } else { Verdict::Fail },
        format!("P(T < 0) = {:.6}", model.t_law.neg_prob()),
    );
    let nonlattice = Check::new(
        if model.nonlattice() { Verdict::Pass } else { Verdict::Fail },
        if model.nonlattice.is_some() { "declared in model metadata" } else { "derived from the weight family" },
    );

    let homogeneous = model.is_homogeneous();
    let alpha_range = match alpha {
        Some(al) => {
            let ok = if homogeneous { (1.0..2.0).contains(&al) } else { al > 0.0 && al < 2.0 };
            let mut ev = format!(
                "{} model, alpha = {al:.6}; admissible range {}",
                if homogeneous { "homogeneous" } else { "nonhomogeneous" },
                if homogeneous { "[1, 2)" } else { "(0, 2)" }
            );
            if homogeneous && al < 1.0 {
                ev.push_str("; with alpha < 1 and Q = 0 every solution with a finite moment of order s > alpha is a.s. zero");
            }
            Check::new(if ok { Verdict::Pass } else { Verdict::Fail }, ev)
        }
        None => Check::new(Verdict::Fail, "characteristic exponent alpha not found"),
    };

    let m2 = profile.m2;
    let second_moment = Check::new(
        if !m2.is_finite() || m2.value - 3.0 * m2.se > 1.0 {
            Verdict::Fail
        } else if m2.value + 3.0 * m2.se <= 1.0 {
            Verdict::Pass
        } else {
            Verdict::Unknown
        },
        format!("m(2) = {:.6} ± {:.2e}; a nonzero solution with finite variance requires m(2) <= 1", m2.value, m2.se),
    );

    let renewal = match beta {
        Some(bt) if bt > 1.0 => &c,
        Some(_) => &d,
        None => &a,
    };
    let parts = [&a, &sign, &nonlattice, renewal];
    let tl = if parts.iter().all(|c| c.verdict == Verdict::Pass) {
        Verdict::Pass
    } else if parts.iter().any(|c| c.verdict == Verdict::Fail) {
        Verdict::Fail
    } else {
        Verdict::Unknown
    };
    let tail_limit = Check::new(
        tl,
        format!(
            "A: {:?}, sign: {:?}, nonlattice: {:?}, {}: {:?}",
            a.verdict,
            sign.verdict,
            nonlattice.verdict,
            if beta.is_some_and(|b| b > 1.0) { "C" } else { "D" },
            renewal.verdict
        ),
    );

    AssumptionReport { a, b, c, d, d_star, e, sign, nonlattice, alpha_range, second_moment, tail_limit }
}
