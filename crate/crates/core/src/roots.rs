//! Bracketed root refinement for smooth (typically convex) functions.

use crate::scalar::Scalar;

/// `n` log-spaced points from `lo` to `hi` inclusive (`0 < lo <= hi`).
pub fn log_grid<F: Scalar>(lo: F, hi: F, n: usize) -> Vec<F> {
    assert!(lo > F::zero() && hi >= lo && n >= 1);
    if n == 1 || lo == hi {
        return vec![lo; n.max(1)];
    }
    let (a, b) = (lo.ln(), hi.ln());
    let step = (b - a) / F::of_usize(n - 1);
    let mut g: Vec<F> = (0..n).map(|i| (a + step * F::of_usize(i)).exp()).collect();
    g[0] = lo;
    g[n - 1] = hi;
    g
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RootOptions<F> {
    /// Accept once `|f(x)| <= f_tol` and the bracket is narrower than `x_tol`.
    pub f_tol: F,
    pub x_tol: F,
    pub max_iter: usize,
}

impl<F: Scalar> Default for RootOptions<F> {
    fn default() -> Self {
        RootOptions {
            f_tol: F::of(1e-10),
            x_tol: F::of(1e-13),
            max_iter: 200,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Root<F> {
    pub x: F,
    pub fx: F,
    pub iterations: usize,
}

/// Safeguarded Newton iteration on a sign-changing bracket `[lo, hi]`.
///
/// A Newton step from the current iterate is taken when it lands strictly
/// inside the bracket and at least halves the step size of the previous
/// iteration; otherwise the bracket is bisected. The bracket is updated from
/// the sign of `f` at every evaluation, so the iterate never leaves it.
/// Non-finite values of `f` or `df` fall back to bisection.
///
/// Returns `None` when `f(lo)` and `f(hi)` do not straddle zero.
pub fn safeguarded_newton<F, Fun, Der>(
    f: Fun,
    df: Der,
    lo: F,
    hi: F,
    opts: RootOptions<F>,
) -> Option<Root<F>>
where
    F: Scalar,
    Fun: Fn(F) -> F,
    Der: Fn(F) -> F,
{
    let (mut a, mut b) = if lo <= hi { (lo, hi) } else { (hi, lo) };
    let (fa, fb) = (f(a), f(b));
    if fa == F::zero() {
        return Some(Root { x: a, fx: fa, iterations: 0 });
    }
    if fb == F::zero() {
        return Some(Root { x: b, fx: fb, iterations: 0 });
    }
    if fa.is_nan() || fb.is_nan() || fa.signum() == fb.signum() {
        return None;
    }
    // orient so that f(a) < 0 < f(b)
    let flip = fa > F::zero();
    let eval = |x: F| if flip { -f(x) } else { f(x) };
    let deriv = |x: F| if flip { -df(x) } else { df(x) };

    let two = F::of(2.0);
    let mut x = (a + b) / two;
    let mut step_old = (b - a).abs();
    let mut step = step_old;
    let mut fx = eval(x);
    for it in 1..=opts.max_iter {
        if fx.abs() <= opts.f_tol && (b - a).abs() <= opts.x_tol.max(opts.x_tol * x.abs()) {
            return Some(Root { x, fx: if flip { -fx } else { fx }, iterations: it });
        }
        if fx == F::zero() {
            return Some(Root { x, fx, iterations: it });
        }
        if fx < F::zero() {
            a = x;
        } else {
            b = x;
        }
        let d = deriv(x);
        let newton = x - fx / d;
        let newton_ok = d.is_finite()
            && d != F::zero()
            && newton.is_finite()
            && newton > a.min(b)
            && newton < a.max(b)
            && (two * (newton - x).abs()) <= step_old;
        step_old = step;
        let next = if newton_ok {
            step = (newton - x).abs();
            newton
        } else {
            step = (b - a).abs() / two;
            (a + b) / two
        };
        if next == x {
            return Some(Root { x, fx: if flip { -fx } else { fx }, iterations: it });
        }
        x = next;
        fx = eval(x);
        if !fx.is_finite() {
            // treat overflow as "far above the root"
            fx = if fx.is_nan() { F::infinity() } else { fx };
        }
    }
    Some(Root { x, fx: if flip { -fx } else { fx }, iterations: opts.max_iter })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sqrt_two_in_both_precisions() {
        let r = safeguarded_newton(|x: f64| x * x - 2.0, |x| 2.0 * x, 0.0, 2.0, RootOptions::default()).unwrap();
        assert!((r.x - 2f64.sqrt()).abs() < 1e-12);
        let opts = RootOptions { f_tol: 1e-5f32, x_tol: 1e-6, max_iter: 100 };
        let r = safeguarded_newton(|x: f32| x * x - 2.0, |x| 2.0 * x, 0.0, 2.0, opts).unwrap();
        assert!((r.x - 2f32.sqrt()).abs() < 1e-5);
    }

    #[test]
    fn no_sign_change_is_rejected() {
        assert!(safeguarded_newton(|x: f64| x * x + 1.0, |x| 2.0 * x, -1.0, 1.0, RootOptions::default()).is_none());
    }

    #[test]
    fn bad_derivative_falls_back_to_bisection() {
        let r = safeguarded_newton(|x: f64| x.powi(3) - 0.5, |_| f64::NAN, 0.0, 1.0, RootOptions::default()).unwrap();
        assert!((r.x - 0.5f64.cbrt()).abs() < 1e-10);
    }

    #[test]
    fn grid_endpoints_are_exact() {
        let g = log_grid(1e-3f64, 64.0, 400);
        assert_eq!(g.len(), 400);
        assert_eq!(g[0], 1e-3);
        assert_eq!(g[399], 64.0);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }

    proptest! {
        #[test]
        fn convex_exponential_roots(c in 0.1f64..5.0, k in 0.2f64..3.0) {
            // f(x) = c*exp(k x) - 1 has root -ln(c)/k
            let root = -c.ln() / k;
            let r = safeguarded_newton(|x| c * (k * x).exp() - 1.0, |x| c * k * (k * x).exp(),
                                       root - 3.0, root + 2.0, RootOptions::default()).unwrap();
            prop_assert!((r.x - root).abs() < 1e-9);
        }
    }
}
