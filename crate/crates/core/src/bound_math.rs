//! Numeric primitives shared by every bound: binary and trivalent kl
//! divergences, the `xi(n)` constant, kl inversions, and the supremum search
//! behind the trivalent C-bound.
//!
//! Everything here is a pure function of its arguments.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sample sizes above this use `2 sqrt(n)` in place of `xi(n)`.
pub const XI_EXACT_LIMIT: u64 = 100_000;

/// Number of outer grid points over `e` in [`trivalent_cbound_sup`].
const SUP_GRID: usize = 10_000;

/// `x ln(x / y)` with `0 ln(0 / y) = 0` and `x ln(x / 0) = +inf` for `x > 0`.
fn xlogx_over(x: f64, y: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if y <= 0.0 {
        f64::INFINITY
    } else {
        x * (x / y).ln()
    }
}

/// kl divergence between Bernoulli distributions with biases `p` and `q`.
///
/// Returns `+inf` when `q` excludes an outcome `p` puts mass on.
pub fn kl_bernoulli(p: f64, q: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&p) && (0.0..=1.0).contains(&q));
    if p == q {
        return 0.0;
    }
    let v = xlogx_over(p, q) + xlogx_over(1.0 - p, 1.0 - q);
    v.max(0.0)
}

/// kl divergence between the three-outcome distributions
/// `(p1, p2, 1 - p1 - p2)` and `(q1, q2, 1 - q1 - q2)`.
pub fn kl_trivalent(p1: f64, p2: f64, q1: f64, q2: f64) -> f64 {
    let p3 = (1.0 - p1 - p2).max(0.0);
    let q3 = (1.0 - q1 - q2).max(0.0);
    if p1 == q1 && p2 == q2 {
        return 0.0;
    }
    let v = xlogx_over(p1, q1) + xlogx_over(p2, q2) + xlogx_over(p3, q3);
    v.max(0.0)
}

/// `xi(n) = sum_k C(n,k) (k/n)^k (1 - k/n)^(n-k)`.
///
/// Terms are formed in the log domain, with `ln C(n, k)` accumulated
/// incrementally. For `n > XI_EXACT_LIMIT` this returns the `2 sqrt(n)` upper
/// envelope instead.
pub fn xi(n: u64) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidArgument("xi(n) requires n >= 1".into()));
    }
    if n > XI_EXACT_LIMIT {
        return Ok(2.0 * (n as f64).sqrt());
    }
    let nf = n as f64;
    let mut log_binom = 0.0f64;
    let mut sum = 0.0f64;
    for k in 0..=n {
        let kf = k as f64;
        let mut log_term = log_binom;
        if k > 0 {
            log_term += kf * (kf / nf).ln();
        }
        if k < n {
            log_term += (nf - kf) * ((nf - kf) / nf).ln();
        }
        sum += log_term.exp();
        if k < n {
            log_binom += (nf - kf).ln() - (kf + 1.0).ln();
        }
    }
    Ok(sum)
}

/// Which constant replaces `2 sqrt(n)` in the kl-form bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum XiMode {
    /// The exact combinatorial `xi(n)`.
    #[default]
    Xi,
    /// The `2 sqrt(n)` envelope.
    TwoSqrtN,
}

impl XiMode {
    pub fn value(self, n: u64) -> Result<f64> {
        match self {
            XiMode::Xi => xi(n),
            XiMode::TwoSqrtN if n == 0 => {
                Err(Error::InvalidArgument("sample size must be >= 1".into()))
            }
            XiMode::TwoSqrtN => Ok(2.0 * (n as f64).sqrt()),
        }
    }
}

/// Largest `q` in `[p_hat, 1]` with `kl(p_hat || q) <= rhs`.
///
/// Bisection on the increasing branch of `q -> kl(p_hat || q)`, run until the
/// bracket collapses (well below `1e-9`). The upper end of the final bracket
/// is returned so the result never undershoots the true inverse.
pub fn kl_inv_upper(p_hat: f64, rhs: f64) -> f64 {
    let p = p_hat.clamp(0.0, 1.0);
    if rhs.is_nan() || rhs == f64::INFINITY || p >= 1.0 {
        return 1.0;
    }
    if rhs <= 0.0 {
        return p;
    }
    let (mut lo, mut hi) = (p, 1.0);
    // Enough halvings to reach adjacent floats even near subnormals.
    for _ in 0..2200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if kl_bernoulli(p, mid) > rhs {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Smallest `q` in `[0, p_hat]` with `kl(p_hat || q) <= rhs`; mirror of
/// [`kl_inv_upper`].
pub fn kl_inv_lower(p_hat: f64, rhs: f64) -> f64 {
    let p = p_hat.clamp(0.0, 1.0);
    if rhs.is_nan() || rhs == f64::INFINITY || p <= 0.0 {
        return 0.0;
    }
    if rhs <= 0.0 {
        return p;
    }
    let (mut lo, mut hi) = (0.0, p);
    // Enough halvings to reach adjacent floats even near subnormals.
    for _ in 0..2200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if kl_bernoulli(p, mid) > rhs {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// The C-bound objective `1 - (1 - (2e + d))^2 / (1 - 2d)`.
pub fn cbound_de(d: f64, e: f64) -> f64 {
    let num = 1.0 - (2.0 * e + d);
    1.0 - num * num / (1.0 - 2.0 * d)
}

/// Supremum of [`cbound_de`] over all `(d, e)` with
/// `kl(d_hat, e_hat || d, e) <= rhs`, `d <= 2(sqrt(e) - e)` and `2e + d < 1`.
///
/// Returns `None` when that set is empty; callers read this as the trivial
/// bound 1.
///
/// For fixed `e` the objective increases in `d` up to `d = 2e` and decreases
/// after, and the kl constraint cuts out an interval of `d`, so the inner
/// problem is a clamp of `2e` into that interval. The outer search scans a
/// grid over the feasible range of `e` and refines the best cell by golden
/// section.
pub fn trivalent_cbound_sup(d_hat: f64, e_hat: f64, rhs: f64) -> Option<f64> {
    let d_hat = d_hat.clamp(0.0, 1.0);
    let e_hat = e_hat.clamp(0.0, 1.0 - d_hat);
    if rhs <= 0.0 {
        let feasible = d_hat <= 2.0 * (e_hat.sqrt() - e_hat) && 2.0 * e_hat + d_hat < 1.0;
        return feasible.then(|| cbound_de(d_hat, e_hat));
    }
    // Minimizing the trivalent kl over d leaves kl(e_hat || e), so the
    // feasible e form this interval.
    let e_lo = kl_inv_lower(e_hat, rhs);
    let e_hi = kl_inv_upper(e_hat, rhs).min(0.5);
    if e_lo > e_hi {
        return None;
    }
    let slice = |e: f64| best_at_e(d_hat, e_hat, rhs, e);
    if e_hi - e_lo <= f64::EPSILON {
        return slice(e_lo);
    }

    let step = (e_hi - e_lo) / (SUP_GRID - 1) as f64;
    let mut best: Option<(usize, f64)> = None;
    for k in 0..SUP_GRID {
        let e = if k + 1 == SUP_GRID { e_hi } else { e_lo + step * k as f64 };
        if let Some(v) = slice(e) {
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((k, v));
            }
        }
    }
    let (k, mut value) = best?;

    // Golden-section refinement over the neighbouring cells.
    let mut a = (e_lo + step * k.saturating_sub(1) as f64).max(e_lo);
    let mut b = (e_lo + step * (k + 1) as f64).min(e_hi);
    let score = |e: f64| slice(e).unwrap_or(f64::NEG_INFINITY);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (score(c), score(d));
    for _ in 0..100 {
        if b - a < 1e-13 {
            break;
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = score(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = score(d);
        }
    }
    value = value.max(fc).max(fd);
    Some(value.min(1.0))
}

/// Best objective over the feasible `d` at a fixed `e`, if any.
fn best_at_e(d_hat: f64, e_hat: f64, rhs: f64, e: f64) -> Option<f64> {
    const SLACK: f64 = 1e-12;
    let d_max = 1.0 - e;
    if d_max < 0.0 {
        return None;
    }
    let h = |d: f64| kl_trivalent(d_hat, e_hat, d, e);
    let rest = 1.0 - d_hat - e_hat;
    // Minimizer of the convex slice d -> h(d).
    let d_star = if d_hat + rest > 0.0 {
        (d_hat * d_max / (d_hat + rest)).clamp(0.0, d_max)
    } else {
        0.0
    };
    if h(d_star) > rhs + SLACK {
        return None;
    }
    let d_left = if h(0.0) <= rhs {
        0.0
    } else {
        level_crossing(&h, rhs, 0.0, d_star, true)
    };
    let d_right = if h(d_max) <= rhs {
        d_max
    } else {
        level_crossing(&h, rhs, d_star, d_max, false)
    };
    let strict_cap = 1.0 - 2.0 * e;
    let upper = d_right.min(2.0 * (e.sqrt() - e)).min(strict_cap);
    let lower = d_left;
    if lower > upper || lower >= strict_cap {
        return None;
    }
    let d = (2.0 * e).clamp(lower, upper);
    Some(cbound_de(d, e))
}

/// Endpoint of `{x : f(x) <= level}` inside `[a, b]`, where `f` crosses the
/// level once. `left` selects the decreasing branch (`f(a) > level`).
fn level_crossing<F: Fn(f64) -> f64>(f: &F, level: f64, a: f64, b: f64, left: bool) -> f64 {
    let (mut lo, mut hi) = (a, b);
    // Enough halvings to reach adjacent floats even near subnormals.
    for _ in 0..2200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let above = f(mid) > level;
        if above == left {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // Return the point that satisfies the constraint.
    if left {
        hi
    } else {
        lo
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn kl_bernoulli_examples() {
        assert_eq!(kl_bernoulli(0.5, 0.5), 0.0);
        assert!((kl_bernoulli(0.0, 0.5) - LN2).abs() < 1e-15);
        // 0.1 ln(0.5) + 0.9 ln(0.9 / 0.8)
        let direct = 0.1 * (0.1f64 / 0.2).ln() + 0.9 * (0.9f64 / 0.8).ln();
        assert!((kl_bernoulli(0.1, 0.2) - direct).abs() < 1e-15);
        assert!((kl_bernoulli(0.1, 0.2) - 0.036690).abs() < 1e-6);
        assert_eq!(kl_bernoulli(0.3, 0.0), f64::INFINITY);
        assert_eq!(kl_bernoulli(0.3, 1.0), f64::INFINITY);
        assert_eq!(kl_bernoulli(0.0, 0.0), 0.0);
        assert_eq!(kl_bernoulli(1.0, 1.0), 0.0);
    }

    #[test]
    fn kl_trivalent_examples() {
        assert_eq!(kl_trivalent(0.2, 0.3, 0.2, 0.3), 0.0);
        assert!((kl_trivalent(0.0, 0.0, 0.25, 0.25) - LN2).abs() < 1e-15);
        let direct = 0.1 * (0.1f64 / 0.2).ln() + 0.2 * (0.2f64 / 0.3).ln() + 0.7 * (0.7f64 / 0.5).ln();
        assert!((kl_trivalent(0.1, 0.2, 0.2, 0.3) - direct).abs() < 1e-15);
    }

    #[test]
    fn xi_small_values() {
        assert!((xi(1).unwrap() - 2.0).abs() < 1e-14);
        assert!((xi(2).unwrap() - 2.5).abs() < 1e-14);
        let x = xi(10_000).unwrap();
        assert!((100.0..=200.0).contains(&x), "{x}");
        assert!(xi(0).is_err());
        assert_eq!(xi(XI_EXACT_LIMIT + 1).unwrap(), 2.0 * ((XI_EXACT_LIMIT + 1) as f64).sqrt());
    }

    #[test]
    fn xi_matches_direct_sum_for_small_n() {
        // Plain binomial arithmetic is exact enough for n <= 30.
        for n in 1..=30u64 {
            let nf = n as f64;
            let mut binom = 1.0f64;
            let mut sum = 0.0;
            for k in 0..=n {
                let kf = k as f64;
                let a = if k == 0 { 1.0 } else { (kf / nf).powf(kf) };
                let b = if k == n { 1.0 } else { (1.0 - kf / nf).powf(nf - kf) };
                sum += binom * a * b;
                binom = binom * (nf - kf) / (kf + 1.0);
            }
            let got = xi(n).unwrap();
            assert!((got - sum).abs() < 1e-10 * sum, "n={n}: {got} vs {sum}");
        }
    }

    #[test]
    fn xi_bracket_holds_up_to_ten_thousand() {
        for n in 1..=10_000u64 {
            let x = xi(n).unwrap();
            let s = (n as f64).sqrt();
            assert!(s <= x + 1e-9 && x <= 2.0 * s + 1e-9, "n={n}: {x}");
        }
    }

    #[test]
    fn inversion_examples() {
        assert_eq!(kl_inv_upper(0.3, 0.0), 0.3);
        let eps = 0.05;
        assert!((kl_inv_upper(0.0, eps) - (1.0 - (-eps).exp())).abs() < 1e-12);
        assert!((kl_inv_upper(0.1, kl_bernoulli(0.1, 0.2)) - 0.2).abs() < 1e-9);
        assert!((kl_inv_upper(0.1, 0.036690) - 0.2).abs() < 1e-6);
        assert_eq!(kl_inv_upper(0.4, f64::INFINITY), 1.0);

        assert_eq!(kl_inv_lower(0.3, 0.0), 0.3);
        assert_eq!(kl_inv_lower(0.5, f64::INFINITY), 0.0);
        assert!(kl_inv_lower(0.5, 1e6) < 1e-300);
        assert!((kl_inv_lower(0.2, kl_bernoulli(0.2, 0.1)) - 0.1).abs() < 1e-9);
    }

    #[test]
    fn trivalent_sup_zero_budget_is_the_empirical_point() {
        let (d, e) = (0.3, 0.05);
        let v = trivalent_cbound_sup(d, e, 0.0).unwrap();
        assert_eq!(v, 1.0 - (1.0 - (2.0 * e + d)).powi(2) / (1.0 - 2.0 * d));
        // d_hat > 2(sqrt(e) - e) is outside the constraint set.
        assert!(trivalent_cbound_sup(0.5, 0.01, 0.0).is_none());
    }

    #[test]
    fn trivalent_sup_saturates() {
        let v = trivalent_cbound_sup(0.1, 0.45, 0.5).unwrap_or(1.0);
        assert!((v - 1.0).abs() < 1e-9, "{v}");
        assert_eq!(trivalent_cbound_sup(0.2, 0.1, f64::INFINITY), Some(1.0));
    }

    proptest! {
        #[test]
        fn kl_nonnegative(p in 0.0f64..=1.0, q in 0.0f64..=1.0) {
            let v = kl_bernoulli(p, q);
            prop_assert!(v >= 0.0);
            if p != q {
                prop_assert!(v > 0.0);
            }
        }

        #[test]
        fn inversions_bracket_and_invert(p in 0.0f64..=1.0, rhs in 0.0f64..3.0) {
            let up = kl_inv_upper(p, rhs);
            let lo = kl_inv_lower(p, rhs);
            prop_assert!(lo <= p && p <= up);
            // The returned end of the collapsed bracket sits just past the
            // level set; its neighbour toward p sits inside it.
            if up < 1.0 && up > p {
                prop_assert!(kl_bernoulli(p, up) >= rhs);
                prop_assert!(kl_bernoulli(p, up.next_down()) <= rhs);
            }
            if lo > 0.0 && lo < p {
                prop_assert!(kl_bernoulli(p, lo) >= rhs);
                prop_assert!(kl_bernoulli(p, lo.next_up()) <= rhs);
            }
        }

        #[test]
        fn upper_inversion_monotone(p in 0.0f64..0.99, dp in 0.0f64..0.01,
                                    rhs in 0.0f64..2.0, dr in 0.0f64..0.5) {
            prop_assert!(kl_inv_upper(p, rhs) <= kl_inv_upper(p, rhs + dr));
            prop_assert!(kl_inv_upper(p, rhs) <= kl_inv_upper(p + dp, rhs));
        }
    }
}
