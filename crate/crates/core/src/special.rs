//! The `α = 2` normal scale mixture `R = r + v √W Z` built from the
//! mean-one solution `W` of the squared equation `W = Σ T_k² W_k`.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{self, ConvergenceDiagnostics, ConvergenceOptions, SamplePool, StopReason};
use crate::error::{Error, Result};
use crate::model::WeightModel;
use crate::rng::{self, domain, StreamId};
use crate::scalar::Scalar;
use crate::stats::{self, Estimate};
use crate::tail;

/// Default tolerance on `|m(2) - 1|` for closed-form models.
pub const DEFAULT_M2_TOL: f64 = 1e-6;

/// Whether `m(2) = 1` holds: within `tol` for exact values, within `3 se`
/// for Monte Carlo ones.
pub fn m2_is_one(m2: &Estimate, tol: f64) -> bool {
    m2.is_finite() && (m2.value - 1.0).abs() <= tol.max(3.0 * m2.se)
}

/// Solves the squared equation by population dynamics from the point mass
/// at 1.
#[allow(non_snake_case)]
pub fn solve_squared_W<F: Scalar>(
    model: &WeightModel,
    m2: &Estimate,
    tol: f64,
    size: usize,
    seed: u64,
    opts: &ConvergenceOptions,
) -> Result<(SamplePool<F>, ConvergenceDiagnostics)> {
    if !m2_is_one(m2, tol) {
        return Err(Error::PreconditionFailed(format!(
            "|m(2) - 1| = {:.3e} exceeds the tolerance {tol:.1e}",
            (m2.value - 1.0).abs()
        )));
    }
    let squared = model.squared_weights();
    let init = SamplePool::point_mass(size, 1.0, seed)?.with_target_mean(Some(1.0));
    let (pool, diag) = engine::run_to_convergence(&squared, init, opts);
    if diag.stop_reason == StopReason::Divergence {
        return Err(Error::Divergence {
            generation: diag.stop_generation + 1,
            detail: diag.divergence.clone().unwrap_or_default(),
        });
    }
    Ok((pool, diag))
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixtureSolution<F> {
    pub r: f64,
    pub v: f64,
    pub w_pool: SamplePool<F>,
}

impl<F: Scalar> MixtureSolution<F> {
    pub fn new(r: f64, v: f64, w_pool: SamplePool<F>) -> Result<Self> {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::invalid("v", "must be finite and nonnegative"));
        }
        if !r.is_finite() {
            return Err(Error::invalid("r", "must be finite"));
        }
        if w_pool.is_empty() || w_pool.values.iter().any(|w| !(*w >= F::zero())) {
            return Err(Error::invalid("w_pool", "W samples must be nonnegative"));
        }
        Ok(MixtureSolution { r, v, w_pool })
    }

    /// Mean of the W pool with its standard error.
    pub fn w_mean(&self) -> Estimate {
        stats::mean_estimate_by(&self.w_pool.values, |w| w.f64())
    }
}

/// `count` draws of `r + v √w z` with `w` resampled from the W pool.
pub fn alpha2_sample<F: Scalar>(mix: &MixtureSolution<F>, count: usize, seed: u64, tag: u64) -> Vec<F> {
    let ws = &mix.w_pool.values;
    (0..count as u64)
        .into_par_iter()
        .map(|i| {
            let mut g = rng::stream(seed, StreamId::new(domain::ALPHA2, tag, i));
            let w = ws[g.random_range(0..ws.len())].f64();
            let z: f64 = g.sample(StandardNormal);
            F::of(mix.r + mix.v * w.sqrt() * z)
        })
        .collect()
}

/// Characteristic function value with componentwise standard errors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CharFn {
    pub t: f64,
    pub re: Estimate,
    pub im: Estimate,
}

/// `E exp(i r t - v² t² W / 2)` averaged over the W pool.
pub fn alpha2_charfn<F: Scalar>(mix: &MixtureSolution<F>, t: f64) -> CharFn {
    let (c, s) = ((mix.r * t).cos(), (mix.r * t).sin());
    let k = 0.5 * mix.v * mix.v * t * t;
    let ws = &mix.w_pool.values;
    CharFn {
        t,
        re: stats::mean_estimate_by(ws, |w| c * (-k * w.f64()).exp()),
        im: stats::mean_estimate_by(ws, |w| s * (-k * w.f64()).exp()),
    }
}

/// Empirical characteristic function of `samples` at `t`.
pub fn empirical_charfn<F: Scalar>(samples: &[F], t: f64) -> CharFn {
    CharFn {
        t,
        re: stats::mean_estimate_by(samples, |x| (t * x.f64()).cos()),
        im: stats::mean_estimate_by(samples, |x| (t * x.f64()).sin()),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CharFnRow {
    pub t: f64,
    pub transformed: CharFn,
    pub mixture: CharFn,
    pub pass: bool,
}

/// Applies the smoothing transform once to mixture samples and compares
/// the empirical characteristic function with [`alpha2_charfn`].
pub fn fixed_point_charfn_check<F: Scalar>(
    model: &WeightModel,
    mix: &MixtureSolution<F>,
    count: usize,
    seed: u64,
    ts: &[f64],
) -> Result<Vec<CharFnRow>> {
    let samples = alpha2_sample(mix, count, seed, 0);
    let pool = SamplePool { values: samples, generation: 0, seed, target_mean: None };
    let next = engine::iterate_once(model, &pool)?;
    Ok(ts
        .iter()
        .map(|&t| {
            let a = empirical_charfn(&next.values, t);
            let b = alpha2_charfn(mix, t);
            let close = |x: &Estimate, y: &Estimate| (x.value - y.value).abs() <= 3.0 * x.se.hypot(y.se) + 1e-12;
            CharFnRow { t, pass: close(&a.re, &b.re) && close(&a.im, &b.im), transformed: a, mixture: b }
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Symmetry {
    pub skewness: f64,
    pub se: f64,
    pub pass: bool,
}

/// Sample skewness of `x - center` against `4 sqrt(6/n)`.
pub fn symmetry_check<F: Scalar>(samples: &[F], center: f64) -> Symmetry {
    let n = samples.len() as f64;
    let m2 = stats::par_sum_by(samples, |x| (x.f64() - center).powi(2)) / n;
    let m3 = stats::par_sum_by(samples, |x| (x.f64() - center).powi(3)) / n;
    let skewness = if m2 > 0.0 { m3 / m2.powf(1.5) } else { 0.0 };
    let se = (6.0 / n).sqrt();
    Symmetry { skewness, se, pass: skewness.abs() <= 4.0 * se }
}

/// Warns when a pool shows a stable second moment although `m(2) > 1 + tol`,
/// which no nonzero finite-variance solution allows.
pub fn second_moment_warning<F: Scalar>(pool: &SamplePool<F>, m2: &Estimate, tol: f64) -> Option<String> {
    let row = tail::moment_stability(pool, &[2.0]).pop()?;
    let nonzero = row.full_pool.value > 0.0;
    let m2_low = m2.value - 3.0 * m2.se;
    (row.stable && nonzero && m2_low > 1.0 + tol).then(|| {
        format!(
            "pool second moment looks finite ({:.4e}) but m(2) = {:.6} > 1; a nonzero solution with finite variance requires m(2) <= 1",
            row.full_pool.value, m2.value
        )
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{NLaw, QLaw, TLaw};
    use std::f64::consts::FRAC_1_SQRT_2;

    fn pm_model(r: f64) -> WeightModel {
        WeightModel::new(NLaw::Fixed { n: 2 }, TLaw::PointMass { c: FRAC_1_SQRT_2, p_neg: 0.5 }, QLaw::Linked { r })
    }

    fn opts() -> ConvergenceOptions {
        ConvergenceOptions { tol: 0.0, max_generations: 20, min_generations: 0 }
    }

    #[test]
    fn unit_sum_gives_constant_w() {
        let m = pm_model(1.0);
        let m2 = Estimate::exact(m.m_closed(2.0));
        let (w, _) = solve_squared_W::<f64>(&m, &m2, DEFAULT_M2_TOL, 1000, 3, &opts()).unwrap();
        assert!(w.values.iter().all(|x| (*x - 1.0).abs() < 1e-12));
        let one = WeightModel::homogeneous(NLaw::Fixed { n: 1 }, TLaw::PointMass { c: 1.0, p_neg: 0.5 });
        let (w, _) = solve_squared_W::<f64>(&one, &Estimate::exact(1.0), DEFAULT_M2_TOL, 100, 3, &opts()).unwrap();
        assert!(w.values.iter().all(|x| *x == 1.0));
    }

    #[test]
    fn precondition_enforced() {
        let m = WeightModel::new(NLaw::Fixed { n: 2 }, TLaw::PointMass { c: 0.5, p_neg: 0.0 }, QLaw::PointMass { value: 1.0 });
        let m2 = Estimate::exact(m.m_closed(2.0));
        assert!(matches!(solve_squared_W::<f64>(&m, &m2, DEFAULT_M2_TOL, 100, 0, &opts()), Err(Error::PreconditionFailed(_))));
    }

    #[test]
    fn charfn_basics() {
        let w = SamplePool::<f64>::point_mass(100, 1.0, 0).unwrap();
        let mix = MixtureSolution::new(0.7, 1.3, w).unwrap();
        let c0 = alpha2_charfn(&mix, 0.0);
        assert_eq!((c0.re.value, c0.im.value), (1.0, 0.0));
        let t = 0.9;
        let c = alpha2_charfn(&mix, t);
        let k = (-0.5 * 1.3f64.powi(2) * t * t).exp();
        assert!((c.re.value - k * (0.7 * t).cos()).abs() < 1e-15);
        assert!((c.im.value - k * (0.7 * t).sin()).abs() < 1e-15);
    }

    #[test]
    fn zero_scale_samples_are_constant() {
        let w = SamplePool::<f64>::point_mass(10, 2.0, 0).unwrap();
        let mix = MixtureSolution::new(-1.25, 0.0, w).unwrap();
        assert!(alpha2_sample(&mix, 50, 1, 0).iter().all(|x| *x == -1.25));
    }

    #[test]
    fn gaussian_case_variance() {
        let w = SamplePool::<f64>::point_mass(10, 1.0, 0).unwrap();
        let (v, count) = (1.7, 200_000);
        let mix = MixtureSolution::new(0.3, v, w).unwrap();
        let xs = alpha2_sample(&mix, count, 2, 0);
        let var = stats::variance(&xs);
        assert!((var - v * v).abs() <= 4.0 * (2.0 / count as f64).sqrt() * v * v);
        assert!(symmetry_check(&xs, 0.3).pass);
    }

    #[test]
    fn negative_w_rejected() {
        let w = SamplePool { values: vec![1.0, -0.1], generation: 0, seed: 0, target_mean: None };
        assert!(MixtureSolution::new(0.0, 1.0, w).is_err());
    }
}
