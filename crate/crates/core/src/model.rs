//! Weight models: the random input `(Q, T_1, ..., T_N)` of the smoothing
//! transform, its parametric families and their closed-form moments.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, StreamId};
use crate::scalar::Scalar;

/// Default truncation point for the geometric law of `N`.
pub const DEFAULT_GEOMETRIC_MAX: u32 = 64;

fn default_geometric_max() -> u32 {
    DEFAULT_GEOMETRIC_MAX
}

fn default_true() -> bool {
    true
}

fn default_scale() -> f64 {
    1.0
}

/// Law of the number of nonzero weights. Every family has bounded support.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum NLaw {
    Fixed { n: u32 },
    /// `P(N = n) ∝ p (1 - p)^n` on `0..=max`.
    Geometric {
        p: f64,
        #[serde(default = "default_geometric_max")]
        max: u32,
    },
    /// `P(N = i) = probs[i]`.
    Discrete { probs: Vec<f64> },
}

/// Conditional law of each weight given `N`; weights are iid and independent
/// of `N`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum TLaw {
    /// `ε · exp(Z)` with `Z ~ Normal(mu, sigma2)` and `P(ε = -1) = p_neg`.
    SignedLognormal {
        mu: f64,
        sigma2: f64,
        #[serde(default)]
        p_neg: f64,
    },
    /// `±c` with `P(-c) = p_neg`.
    PointMass {
        c: f64,
        #[serde(default)]
        p_neg: f64,
    },
    Uniform { a: f64, b: f64 },
    Mixture { components: Vec<MixtureComponent> },
    /// `T = B^2` with `B` drawn from `base`.
    Squared { base: Box<TLaw> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureComponent {
    pub weight: f64,
    pub law: TLaw,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum QLaw {
    PointMass { value: f64 },
    Normal { mean: f64, sd: f64 },
    Uniform { a: f64, b: f64 },
    /// `scale · U^(-1/index)`, so `P(Q > x) = (scale / x)^index`.
    Pareto {
        index: f64,
        #[serde(default = "default_scale")]
        scale: f64,
    },
    /// `Q = r (1 - Σ T_k)`: the solution is the point mass at `r`.
    Linked { r: f64 },
}

impl Default for QLaw {
    fn default() -> Self {
        QLaw::PointMass { value: 0.0 }
    }
}

/// Generative description of `(Q, (T_k), N)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightModel {
    pub n_law: NLaw,
    pub t_law: TLaw,
    #[serde(default)]
    pub q_law: QLaw,
    #[serde(default)]
    pub homogeneous: bool,
    /// Declared nonlattice property of `log|T_k|`; derived from the family
    /// when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nonlattice: Option<bool>,
    /// Use closed-form moment functions where the family admits them.
    #[serde(default = "default_true")]
    pub closed_form: bool,
}

/// One realization of the weights: zeros removed, sorted by `|t|`
/// descending (stable among ties).
#[derive(Clone, Debug, PartialEq)]
pub struct RealizedWeights<F> {
    pub q: F,
    pub t: Vec<F>,
}

impl<F: Scalar> RealizedWeights<F> {
    pub fn n(&self) -> usize {
        self.t.len()
    }

    pub fn sum_t(&self) -> F {
        self.t.iter().copied().sum()
    }
}

/// Drops zero weights and stable-sorts by absolute value, largest first.
pub fn canonicalize<F: Scalar>(q: F, raw_t: &[F]) -> RealizedWeights<F> {
    let mut t = raw_t.to_vec();
    canonicalize_in_place(&mut t);
    RealizedWeights { q, t }
}

pub(crate) fn canonicalize_in_place<F: Scalar>(t: &mut Vec<F>) {
    t.retain(|x| *x != F::zero());
    t.sort_by(|a, b| b.abs().partial_cmp(&a.abs()).unwrap_or(std::cmp::Ordering::Equal));
}

fn check(ok: bool, field: &str, constraint: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::invalid(field, constraint))
    }
}

fn probability(p: f64) -> bool {
    (0.0..=1.0).contains(&p)
}

impl NLaw {
    fn validate(&self) -> Result<()> {
        match self {
            NLaw::Fixed { n } => check(*n <= 1 << 20, "n_law.n", "must be at most 2^20"),
            NLaw::Geometric { p, max } => {
                check(*p > 0.0 && *p <= 1.0, "n_law.p", "must lie in (0, 1]")?;
                check(*max <= 1 << 16, "n_law.max", "truncation bound must be at most 65536")
            }
            NLaw::Discrete { probs } => {
                check(!probs.is_empty(), "n_law.probs", "must be nonempty")?;
                check(
                    probs.iter().all(|p| p.is_finite() && *p >= 0.0),
                    "n_law.probs",
                    "entries must be finite and nonnegative",
                )?;
                let total: f64 = probs.iter().sum();
                check((total - 1.0).abs() <= 1e-9, "n_law.probs", "must sum to 1")
            }
        }
    }

    /// Probability mass function indexed by `n`.
    pub fn pmf(&self) -> Vec<f64> {
        match self {
            NLaw::Fixed { n } => {
                let mut v = vec![0.0; *n as usize + 1];
                v[*n as usize] = 1.0;
                v
            }
            NLaw::Geometric { p, max } => {
                let w: Vec<f64> = (0..=*max).map(|n| p * (1.0 - p).powi(n as i32)).collect();
                let total: f64 = w.iter().sum();
                w.into_iter().map(|x| x / total).collect()
            }
            NLaw::Discrete { probs } => probs.clone(),
        }
    }

    pub fn max_n(&self) -> usize {
        match self {
            NLaw::Fixed { n } => *n as usize,
            NLaw::Geometric { max, .. } => *max as usize,
            NLaw::Discrete { probs } => probs.iter().rposition(|p| *p > 0.0).unwrap_or(0),
        }
    }

    /// `E g(N)`.
    pub fn expect(&self, g: impl Fn(f64) -> f64) -> f64 {
        self.pmf()
            .iter()
            .enumerate()
            .filter(|(_, p)| **p > 0.0)
            .map(|(n, p)| p * g(n as f64))
            .sum()
    }

    pub fn mean(&self) -> f64 {
        self.expect(|n| n)
    }

    /// `P(N >= k)`.
    pub fn tail(&self, k: usize) -> f64 {
        self.pmf().iter().skip(k).sum()
    }

    /// Geometric truncation bound, if any.
    pub fn truncation(&self) -> Option<u32> {
        match self {
            NLaw::Geometric { max, .. } => Some(*max),
            _ => None,
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        match self {
            NLaw::Fixed { n } => *n as usize,
            _ => {
                let pmf = self.pmf();
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (n, p) in pmf.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        return n;
                    }
                }
                self.max_n()
            }
        }
    }
}

/// `x^(s+1) / (s+1)` and its derivative in `s`, for `x >= 0`.
fn power_primitive(x: f64, s: f64) -> (f64, f64) {
    if x == 0.0 {
        return (0.0, 0.0);
    }
    let v = x.powf(s + 1.0) / (s + 1.0);
    (v, v * (x.ln() - 1.0 / (s + 1.0)))
}

impl TLaw {
    fn validate(&self, path: &str) -> Result<()> {
        let f = |name: &str| format!("{path}.{name}");
        match self {
            TLaw::SignedLognormal { mu, sigma2, p_neg } => {
                check(mu.is_finite(), &f("mu"), "must be finite")?;
                check(sigma2.is_finite() && *sigma2 > 0.0, &f("sigma2"), "variance must be strictly positive")?;
                check(probability(*p_neg), &f("p_neg"), "must lie in [0, 1]")
            }
            TLaw::PointMass { c, p_neg } => {
                check(c.is_finite() && *c > 0.0, &f("c"), "must be strictly positive")?;
                check(probability(*p_neg), &f("p_neg"), "must lie in [0, 1]")
            }
            TLaw::Uniform { a, b } => check(a.is_finite() && b.is_finite() && a < b, &f("a"), "need finite a < b"),
            TLaw::Mixture { components } => {
                check(!components.is_empty(), &f("components"), "must be nonempty")?;
                check(
                    components.iter().all(|c| c.weight.is_finite() && c.weight >= 0.0),
                    &f("components"),
                    "weights must be nonnegative",
                )?;
                let total: f64 = components.iter().map(|c| c.weight).sum();
                check((total - 1.0).abs() <= 1e-9, &f("components"), "weights must sum to 1")?;
                for (i, c) in components.iter().enumerate() {
                    c.law.validate(&format!("{path}.components[{i}]"))?;
                }
                Ok(())
            }
            TLaw::Squared { base } => base.validate(&f("base")),
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            TLaw::SignedLognormal { mu, sigma2, p_neg } => {
                let z: f64 = rng.sample(StandardNormal);
                let neg = rng.random::<f64>() < *p_neg;
                let m = (mu + sigma2.sqrt() * z).exp();
                if neg {
                    -m
                } else {
                    m
                }
            }
            TLaw::PointMass { c, p_neg } => {
                if rng.random::<f64>() < *p_neg {
                    -c
                } else {
                    *c
                }
            }
            TLaw::Uniform { a, b } => a + (b - a) * rng.random::<f64>(),
            TLaw::Mixture { components } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for c in components {
                    acc += c.weight;
                    if u < acc {
                        return c.law.sample(rng);
                    }
                }
                components.last().expect("validated").law.sample(rng)
            }
            TLaw::Squared { base } => {
                let b = base.sample(rng);
                b * b
            }
        }
    }

    /// `E|T|^s`.
    pub fn abs_moment(&self, s: f64) -> f64 {
        match self {
            TLaw::SignedLognormal { mu, sigma2, .. } => (mu * s + 0.5 * sigma2 * s * s).exp(),
            TLaw::PointMass { c, .. } => c.powf(s),
            TLaw::Uniform { a, b } => self.uniform_parts(*a, *b, s).0,
            TLaw::Mixture { components } => components.iter().map(|c| c.weight * c.law.abs_moment(s)).sum(),
            TLaw::Squared { base } => base.abs_moment(2.0 * s),
        }
    }

    /// `E|T|^s ln|T|`, the derivative of `abs_moment` in `s`.
    pub fn abs_moment_log(&self, s: f64) -> f64 {
        match self {
            TLaw::SignedLognormal { mu, sigma2, .. } => self.abs_moment(s) * (mu + sigma2 * s),
            TLaw::PointMass { c, .. } => c.powf(s) * c.ln(),
            TLaw::Uniform { a, b } => self.uniform_parts(*a, *b, s).1,
            TLaw::Mixture { components } => components.iter().map(|c| c.weight * c.law.abs_moment_log(s)).sum(),
            TLaw::Squared { base } => 2.0 * base.abs_moment_log(2.0 * s),
        }
    }

    fn uniform_parts(&self, a: f64, b: f64, s: f64) -> (f64, f64) {
        let width = b - a;
        let (v, d) = if a >= 0.0 {
            let (pb, pa) = (power_primitive(b, s), power_primitive(a, s));
            (pb.0 - pa.0, pb.1 - pa.1)
        } else if b <= 0.0 {
            let (pa, pb) = (power_primitive(-a, s), power_primitive(-b, s));
            (pa.0 - pb.0, pa.1 - pb.1)
        } else {
            let (pa, pb) = (power_primitive(-a, s), power_primitive(b, s));
            (pa.0 + pb.0, pa.1 + pb.1)
        };
        (v / width, d / width)
    }

    /// `E T`.
    pub fn mean(&self) -> f64 {
        match self {
            TLaw::SignedLognormal { p_neg, .. } | TLaw::PointMass { p_neg, .. } => {
                (1.0 - 2.0 * p_neg) * self.abs_moment(1.0)
            }
            TLaw::Uniform { a, b } => 0.5 * (a + b),
            TLaw::Mixture { components } => components.iter().map(|c| c.weight * c.law.mean()).sum(),
            TLaw::Squared { base } => base.abs_moment(2.0),
        }
    }

    /// `P(T < 0)`.
    pub fn neg_prob(&self) -> f64 {
        match self {
            TLaw::SignedLognormal { p_neg, .. } | TLaw::PointMass { p_neg, .. } => *p_neg,
            TLaw::Uniform { a, b } => ((0.0 - a) / (b - a)).clamp(0.0, 1.0),
            TLaw::Mixture { components } => components.iter().map(|c| c.weight * c.law.neg_prob()).sum(),
            TLaw::Squared { .. } => 0.0,
        }
    }

    /// `Some(c)` when `|T| = c` almost surely.
    pub fn magnitude_point(&self) -> Option<f64> {
        match self {
            TLaw::PointMass { c, .. } => Some(*c),
            TLaw::Squared { base } => base.magnitude_point().map(|c| c * c),
            TLaw::Mixture { components } => {
                let mut it = components.iter().filter(|c| c.weight > 0.0).map(|c| c.law.magnitude_point());
                let first = it.next()??;
                it.all(|m| m == Some(first)).then_some(first)
            }
            _ => None,
        }
    }

    /// Supremum of `{s >= 0 : E|T|^s < ∞}`; infinite for every built-in family.
    pub fn moment_domain_sup(&self) -> f64 {
        f64::INFINITY
    }

    /// Whether the law of `log|T|` is nonlattice: absolutely continuous
    /// families are, finitely supported magnitudes are not.
    pub fn nonlattice_default(&self) -> bool {
        match self {
            TLaw::SignedLognormal { .. } | TLaw::Uniform { .. } => true,
            TLaw::PointMass { .. } => false,
            TLaw::Mixture { components } => components.iter().any(|c| c.weight > 0.0 && c.law.nonlattice_default()),
            TLaw::Squared { base } => base.nonlattice_default(),
        }
    }
}

impl QLaw {
    fn validate(&self) -> Result<()> {
        match self {
            QLaw::PointMass { value } => check(value.is_finite(), "q_law.value", "must be finite"),
            QLaw::Normal { mean, sd } => {
                check(mean.is_finite(), "q_law.mean", "must be finite")?;
                check(sd.is_finite() && *sd > 0.0, "q_law.sd", "must be strictly positive")
            }
            QLaw::Uniform { a, b } => check(a.is_finite() && b.is_finite() && a < b, "q_law.a", "need finite a < b"),
            QLaw::Pareto { index, scale } => {
                check(index.is_finite() && *index > 0.0, "q_law.index", "must be strictly positive")?;
                check(scale.is_finite() && *scale > 0.0, "q_law.scale", "must be strictly positive")
            }
            QLaw::Linked { r } => check(r.is_finite(), "q_law.r", "must be finite"),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, QLaw::PointMass { value } if *value == 0.0) || matches!(self, QLaw::Linked { r } if *r == 0.0)
    }

    /// Supremum of `{s >= 0 : E|Q|^s < ∞}` (exclusive for Pareto).
    pub fn moment_domain_sup(&self, t_sup: f64) -> f64 {
        match self {
            QLaw::Pareto { index, .. } => *index,
            QLaw::Linked { .. } => t_sup,
            _ => f64::INFINITY,
        }
    }
}

impl WeightModel {
    /// Convenience constructor for the common independent case.
    pub fn new(n_law: NLaw, t_law: TLaw, q_law: QLaw) -> Self {
        let homogeneous = q_law.is_zero();
        WeightModel {
            n_law,
            t_law,
            q_law,
            homogeneous,
            nonlattice: None,
            closed_form: true,
        }
    }

    pub fn homogeneous(n_law: NLaw, t_law: TLaw) -> Self {
        Self::new(n_law, t_law, QLaw::default())
    }

    pub fn with_closed_form(mut self, on: bool) -> Self {
        self.closed_form = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.n_law.validate()?;
        self.t_law.validate("t_law")?;
        self.q_law.validate()?;
        if self.homogeneous && !matches!(self.q_law, QLaw::PointMass { value } if value == 0.0) {
            return Err(Error::invalid("q_law", "homogeneous model requires Q to be the point mass at 0"));
        }
        Ok(())
    }

    /// Homogeneous flag or a `Q` that is identically zero.
    pub fn is_homogeneous(&self) -> bool {
        self.homogeneous || self.q_law.is_zero()
    }

    pub fn nonlattice(&self) -> bool {
        self.nonlattice.unwrap_or_else(|| self.t_law.nonlattice_default())
    }

    /// `m(s) = E N · E|T|^s`.
    pub fn m_closed(&self, s: f64) -> f64 {
        self.n_law.mean() * self.t_law.abs_moment(s)
    }

    /// `m'(s) = E N · E|T|^s ln|T|`.
    pub fn m_prime_closed(&self, s: f64) -> f64 {
        self.n_law.mean() * self.t_law.abs_moment_log(s)
    }

    /// `μ(s) = E(Σ|T_k|)^s` where the family admits it.
    pub fn mu_closed(&self, s: f64) -> Option<f64> {
        if let Some(c) = self.t_law.magnitude_point() {
            return Some(c.powf(s) * self.n_law.expect(|n| n.powf(s)));
        }
        if self.n_law.max_n() <= 1 || s == 1.0 {
            return Some(self.m_closed(s));
        }
        if s == 2.0 {
            let (m1, m2) = (self.t_law.abs_moment(1.0), self.t_law.abs_moment(2.0));
            return Some(self.n_law.mean() * m2 + self.n_law.expect(|n| n * (n - 1.0)) * m1 * m1);
        }
        None
    }

    /// `m_ε(s) = E(Σ|T_k|^s)^(1+ε)` where the family admits it.
    pub fn m_eps_closed(&self, s: f64, eps: f64) -> Option<f64> {
        let p = 1.0 + eps;
        if let Some(c) = self.t_law.magnitude_point() {
            return Some(c.powf(s * p) * self.n_law.expect(|n| n.powf(p)));
        }
        if self.n_law.max_n() <= 1 {
            return Some(self.n_law.tail(1) * self.t_law.abs_moment(s * p));
        }
        if p == 2.0 {
            let (a, b) = (self.t_law.abs_moment(s), self.t_law.abs_moment(2.0 * s));
            return Some(self.n_law.mean() * b + self.n_law.expect(|n| n * (n - 1.0)) * a * a);
        }
        None
    }

    /// `E|T_k|^s` for the k-th weight in generation (label) order, 1-based.
    pub fn single_weight_closed(&self, k: usize, s: f64) -> f64 {
        self.n_law.tail(k) * self.t_law.abs_moment(s)
    }

    /// `E Σ T_k` (signed).
    pub fn mean_sum_t(&self) -> f64 {
        self.n_law.mean() * self.t_law.mean()
    }

    /// `E Q`; `None` when infinite.
    pub fn mean_q(&self) -> Option<f64> {
        match &self.q_law {
            QLaw::PointMass { value } => Some(*value),
            QLaw::Normal { mean, .. } => Some(*mean),
            QLaw::Uniform { a, b } => Some(0.5 * (a + b)),
            QLaw::Pareto { index, scale } => (*index > 1.0).then(|| index * scale / (index - 1.0)),
            QLaw::Linked { r } => Some(r * (1.0 - self.mean_sum_t())),
        }
    }

    /// Supremum of the moment domain of `m` (bounded `N`, so that of `|T|`).
    pub fn s1_closed(&self) -> f64 {
        self.t_law.moment_domain_sup()
    }

    pub fn q_moment_sup(&self) -> f64 {
        self.q_law.moment_domain_sup(self.s1_closed())
    }

    /// Model with weights `T_k^2` and `Q ≡ 0`.
    pub fn squared_weights(&self) -> WeightModel {
        WeightModel {
            n_law: self.n_law.clone(),
            t_law: TLaw::Squared { base: Box::new(self.t_law.clone()) },
            q_law: QLaw::default(),
            homogeneous: true,
            nonlattice: self.nonlattice,
            closed_form: self.closed_form,
        }
    }

    /// Draws `(q, t)` with `t` in generation order (zeros kept).
    pub fn draw_raw<R: Rng>(&self, rng: &mut R, t: &mut Vec<f64>) -> f64 {
        t.clear();
        let n = self.n_law.sample(rng);
        t.extend((0..n).map(|_| self.t_law.sample(rng)));
        match &self.q_law {
            QLaw::PointMass { value } => *value,
            QLaw::Normal { mean, sd } => mean + sd * rng.sample::<f64, _>(StandardNormal),
            QLaw::Uniform { a, b } => a + (b - a) * rng.random::<f64>(),
            QLaw::Pareto { index, scale } => {
                let u = 1.0 - rng.random::<f64>();
                scale * u.powf(-1.0 / index)
            }
            QLaw::Linked { r } => r * (1.0 - t.iter().sum::<f64>()),
        }
    }

    /// Draws a canonical realization into `t` and returns `q`.
    pub fn sample_into<R: Rng>(&self, rng: &mut R, t: &mut Vec<f64>) -> f64 {
        let q = self.draw_raw(rng, t);
        canonicalize_in_place(t);
        q
    }
}

/// Checks every family parameter and returns the model unchanged.
pub fn validate_model(model: WeightModel) -> Result<WeightModel> {
    model.validate()?;
    Ok(model)
}

/// One canonical realization from the stream `(seed, stream)`.
pub fn sample_weights<F: Scalar>(model: &WeightModel, seed: u64, stream: StreamId) -> RealizedWeights<F> {
    let mut r = rng::stream(seed, stream);
    let mut t = Vec::new();
    let q = model.sample_into(&mut r, &mut t);
    RealizedWeights {
        q: F::of(q),
        t: t.into_iter().map(F::of).collect(),
    }
}
