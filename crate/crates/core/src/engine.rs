//! Population-dynamics iteration of the smoothing transform, truncated
//! branching-tree expansion and degeneracy detection.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{QLaw, WeightModel};
use crate::moments::MeanSolution;
use crate::rng::{self, domain, StreamId};
use crate::scalar::Scalar;
use crate::stats::{self, ecdf_distances, Estimate};

/// Values beyond this magnitude are treated as numeric divergence.
pub const OVERFLOW_GUARD: f64 = 1e300;

/// A population of approximate fixed-point samples.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplePool<F> {
    pub values: Vec<F>,
    pub generation: u64,
    pub seed: u64,
    pub target_mean: Option<f64>,
}

impl<F: Scalar> SamplePool<F> {
    /// Point mass at `value`.
    pub fn point_mass(size: usize, value: f64, seed: u64) -> Result<Self> {
        if size < 2 {
            return Err(Error::invalid("size", "pool size must be at least 2"));
        }
        Ok(SamplePool { values: vec![F::of(value); size], generation: 0, seed, target_mean: None })
    }

    pub fn with_target_mean(mut self, r: Option<f64>) -> Self {
        self.target_mean = r;
        self
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        stats::mean(&self.values)
    }

    pub fn sd(&self) -> f64 {
        stats::variance(&self.values).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.par_iter().map(|x| x.f64().abs()).reduce(|| 0.0, f64::max)
    }

    /// Values as `f64`, sorted ascending.
    pub fn sorted_f64(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.values.par_iter().map(|x| x.f64()).collect();
        stats::sort_f64(&mut v);
        v
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.par_iter().map(|x| x.f64()).collect()
    }

    fn check_finite(&self) -> Result<()> {
        if let Some((i, x)) = self
            .values
            .par_iter()
            .enumerate()
            .find_first(|(_, x)| !x.is_finite() || x.f64().abs() > OVERFLOW_GUARD)
        {
            return Err(Error::Divergence {
                generation: self.generation,
                detail: format!("slot {i} holds {x}"),
            });
        }
        Ok(())
    }
}

/// How the starting pool was chosen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialValue {
    pub value: f64,
    /// Mean the pool is pinned to, when one is prescribed.
    #[serde(with = "crate::serde_ext::ext_real_opt")]
    pub target_mean: Option<f64>,
    /// Homogeneous with `α < 1`: only the zero solution is expected.
    pub trivial_expected: bool,
    pub reason: String,
}

/// Starting value for the population: the pinned mean `r` when `α ≥ 1`
/// (1 for homogeneous models), 0 for nonhomogeneous models with `α < 1`.
pub fn initial_value(model: &WeightModel, alpha: Option<f64>, mean: &MeanSolution) -> Result<InitialValue> {
    let homogeneous = model.is_homogeneous();
    let alpha_ge_1 = alpha.is_none_or(|a| a >= 1.0);
    if homogeneous {
        let trivial = alpha.is_some_and(|a| a < 1.0);
        return Ok(InitialValue {
            value: 1.0,
            target_mean: (alpha_ge_1 && *mean == MeanSolution::NonUnique).then_some(1.0),
            trivial_expected: trivial,
            reason: if trivial {
                "homogeneous with alpha < 1: started at 1, collapse to 0 expected".into()
            } else {
                "homogeneous: mean normalized to 1".into()
            },
        });
    }
    if !alpha_ge_1 {
        return Ok(InitialValue {
            value: 0.0,
            target_mean: None,
            trivial_expected: false,
            reason: "alpha < 1: no mean pinning needed, started at 0".into(),
        });
    }
    match mean {
        MeanSolution::Unique { r } => Ok(InitialValue {
            value: *r,
            target_mean: Some(*r),
            trivial_expected: false,
            reason: "started at the solution of the mean equation".into(),
        }),
        MeanSolution::NonUnique => Ok(InitialValue {
            value: 0.0,
            target_mean: Some(0.0),
            trivial_expected: false,
            reason: "mean equation holds for every r; pinned to r = 0".into(),
        }),
        MeanSolution::NoSolution { reason } => Err(Error::MissingMean(reason.clone())),
    }
}

/// `init_pool`: point mass at the value chosen by [`initial_value`].
pub fn init_pool<F: Scalar>(size: usize, init: &InitialValue, seed: u64) -> Result<SamplePool<F>> {
    Ok(SamplePool::point_mass(size, init.value, seed)?.with_target_mean(init.target_mean))
}

/// One application of the smoothing transform to the empirical law of
/// `pool`: slot `j` draws `(q, t)` and `N` children uniformly with
/// replacement, and outputs `Σ t_k x_{i_k} + q`.
pub fn iterate_once<F: Scalar>(model: &WeightModel, pool: &SamplePool<F>) -> Result<SamplePool<F>> {
    let p = pool.len();
    let generation = pool.generation + 1;
    let input = &pool.values;
    let values: Vec<F> = (0..p)
        .into_par_iter()
        .map_init(Vec::new, |t, j| {
            let mut r = rng::stream(pool.seed, StreamId::new(domain::ITERATE, generation, j as u64));
            let q = model.draw_raw(&mut r, t);
            let mut acc = F::of(q);
            for &tk in t.iter() {
                let x = input[r.random_range(0..p)];
                acc = acc + F::of(tk) * x;
            }
            acc
        })
        .collect();
    let out = SamplePool { values, generation, seed: pool.seed, target_mean: pool.target_mean };
    out.check_finite()?;
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceOptions {
    /// Kolmogorov distance between consecutive generations at which to stop.
    pub tol: f64,
    pub max_generations: u64,
    /// Generations to run before the tolerance is consulted.
    pub min_generations: u64,
}

impl Default for ConvergenceOptions {
    fn default() -> Self {
        ConvergenceOptions { tol: 5e-3, max_generations: 200, min_generations: 10 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Tolerance,
    MaxGenerations,
    Divergence,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: u64,
    pub kolmogorov: f64,
    pub wasserstein1: f64,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceDiagnostics {
    pub generations: Vec<GenerationStats>,
    pub stop_generation: u64,
    pub stop_reason: StopReason,
    /// Generations at which the pool mean left `r ± 4 sd / sqrt(P)`.
    pub mean_violations: Vec<u64>,
    pub divergence: Option<String>,
}

impl ConvergenceDiagnostics {
    pub fn last_kolmogorov(&self) -> Option<f64> {
        self.generations.last().map(|g| g.kolmogorov)
    }
}

/// Iterates until the Kolmogorov distance between consecutive generations
/// drops below `tol` (after `min_generations`) or `max_generations` is hit.
///
/// On divergence the last finite pool is returned together with the
/// diagnostics; callers map `stop_reason == Divergence` to an error.
pub fn run_to_convergence<F: Scalar>(
    model: &WeightModel,
    init: SamplePool<F>,
    opts: &ConvergenceOptions,
) -> (SamplePool<F>, ConvergenceDiagnostics) {
    let mut pool = init;
    let mut sorted_prev = pool.sorted_f64();
    let mut diag = ConvergenceDiagnostics {
        generations: Vec::new(),
        stop_generation: pool.generation,
        stop_reason: StopReason::MaxGenerations,
        mean_violations: Vec::new(),
        divergence: None,
    };
    let p = pool.len() as f64;
    for _ in 0..opts.max_generations {
        let next = match iterate_once(model, &pool) {
            Ok(n) => n,
            Err(e) => {
                diag.stop_reason = StopReason::Divergence;
                diag.divergence = Some(e.to_string());
                break;
            }
        };
        let sorted = next.sorted_f64();
        let (ks, w1) = ecdf_distances(&sorted_prev, &sorted);
        let (mean, sd) = (next.mean(), next.sd());
        if let Some(r) = next.target_mean {
            if (mean - r).abs() > 4.0 * sd / p.sqrt() + 1e-12 * r.abs().max(1.0) {
                diag.mean_violations.push(next.generation);
            }
        }
        diag.generations.push(GenerationStats { generation: next.generation, kolmogorov: ks, wasserstein1: w1, mean, sd });
        pool = next;
        sorted_prev = sorted;
        diag.stop_generation = pool.generation;
        if pool.generation >= opts.min_generations && ks < opts.tol {
            diag.stop_reason = StopReason::Tolerance;
            break;
        }
    }
    (pool, diag)
}

/// Unrolls the fixed-point equation `depth` times along one realized
/// weighted branching tree: inner nodes contribute `L(v) q_v`, leaves at
/// depth `depth` contribute `L(v) terminal`.
pub fn sample_branching_tree(
    model: &WeightModel,
    depth: u32,
    terminal: f64,
    seed: u64,
    index: u64,
    node_cap: usize,
) -> Result<f64> {
    let mut r = rng::stream(seed, StreamId::new(domain::TREE, index, 0));
    let mut stack: Vec<(u32, f64)> = vec![(0, 1.0)];
    let mut nodes = 0usize;
    let mut total = 0.0;
    let mut t = Vec::new();
    while let Some((d, l)) = stack.pop() {
        nodes += 1;
        if nodes > node_cap {
            return Err(Error::TreeBudgetExceeded { cap: node_cap });
        }
        if d == depth {
            total += l * terminal;
            continue;
        }
        let q = model.sample_into(&mut r, &mut t);
        total += l * q;
        for &tk in t.iter().rev() {
            stack.push((d + 1, l * tk));
        }
    }
    Ok(total)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Degeneracy {
    pub degenerate: bool,
    #[serde(with = "crate::serde_ext::ext_real_opt")]
    pub r: Option<f64>,
    pub max_deviation: f64,
    pub draws: usize,
    pub evidence: String,
}

/// Tests `P(r Σ T_k + Q = r) = 1` (homogeneous: `P(Σ T_k = 1) = 1`) on
/// `draws` realizations. Without `r`, the candidate is solved from the
/// first draw with `Σ t_k ≠ 1`.
pub fn detect_degeneracy(model: &WeightModel, r: Option<f64>, draws: usize, tol: f64, seed: u64) -> Degeneracy {
    if let QLaw::Linked { r: rl } = model.q_law {
        let degenerate = r.is_none_or(|r| (r - rl).abs() <= tol);
        return Degeneracy {
            degenerate,
            r: Some(rl),
            max_deviation: 0.0,
            draws: 0,
            evidence: if degenerate {
                format!("Q = {rl} (1 - sum T) by construction")
            } else {
                format!("Q is linked to {rl}, not to r = {}", r.unwrap_or(f64::NAN))
            },
        };
    }
    let homogeneous = model.is_homogeneous();
    let samples: Vec<(f64, f64)> = (0..draws as u64)
        .into_par_iter()
        .map_init(Vec::new, |t, i| {
            let mut g = rng::stream(seed, StreamId::new(domain::DEGENERACY, i, 0));
            let q = model.draw_raw(&mut g, t);
            (t.iter().sum::<f64>(), q)
        })
        .collect();
    let r_used = if homogeneous {
        None
    } else {
        r.or_else(|| samples.iter().find(|(s, _)| (s - 1.0).abs() > tol).map(|(s, q)| q / (1.0 - s)))
    };
    let dev = |&(s, q): &(f64, f64)| -> f64 {
        match r_used {
            None if homogeneous => (s - 1.0).abs(),
            None => q.abs(),
            Some(r) => (r * s + q - r).abs(),
        }
    };
    let max_deviation = samples.iter().map(dev).fold(0.0, f64::max);
    let degenerate = !samples.is_empty() && max_deviation <= tol;
    let evidence = if homogeneous {
        format!("max |sum T - 1| = {max_deviation:.3e} over {draws} draws")
    } else {
        format!(
            "max |r sum T + Q - r| = {max_deviation:.3e} over {draws} draws at r = {}",
            r_used.map_or("n/a".to_string(), |r| r.to_string())
        )
    };
    Degeneracy { degenerate, r: if homogeneous { Some(1.0) } else { r_used }, max_deviation, draws, evidence }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentBound {
    pub s: f64,
    /// Empirical `E(Σ|t_k x_k|)^s` over fresh weights and pool children.
    pub lhs: Estimate,
    /// `m(s) · mean |x|^s`.
    pub rhs: Estimate,
    pub pass: bool,
}

/// Empirical check of `E(Σ|T_k R_k|)^s ≤ m(s) E|R|^s` for `s ≤ 1`.
pub fn moment_bound_check<F: Scalar>(model: &WeightModel, pool: &SamplePool<F>, s: f64, m_s: Estimate) -> Result<MomentBound> {
    if !(s > 0.0 && s <= 1.0) {
        return Err(Error::Inapplicable(format!("subadditive bound needs s in (0, 1], got {s}")));
    }
    let p = pool.len();
    let x = &pool.values;
    let lhs_vals: Vec<f64> = (0..p)
        .into_par_iter()
        .map_init(Vec::new, |t, j| {
            let mut r = rng::stream(pool.seed, StreamId::new(domain::BOUND, pool.generation, j as u64));
            model.draw_raw(&mut r, t);
            t.iter().map(|tk| (tk * x[r.random_range(0..p)].f64()).abs()).sum::<f64>().powf(s)
        })
        .collect();
    let lhs = stats::mean_estimate_by(&lhs_vals, |v| *v);
    let g = stats::mean_estimate_by(x, |v| v.f64().abs().powf(s));
    let rhs = Estimate::new(m_s.value * g.value, (m_s.value * g.se).hypot(m_s.se * g.value));
    let rel = |e: &Estimate| if e.value > 0.0 { e.se / e.value } else { 0.0 };
    let slack = 1.0 + 3.0 * rel(&lhs).hypot(rel(&rhs));
    Ok(MomentBound { s, lhs, rhs, pass: lhs.value <= rhs.value * slack + 1e-300 })
}
