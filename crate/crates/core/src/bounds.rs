//! Upper bounds on the majority-vote loss.
//!
//! Every function returns a [`BoundReport`] that carries the bound, the
//! inputs it was computed from and the right-hand sides of the kl
//! constraints, so a report row can be recomputed independently.

use serde::{Deserialize, Serialize};

use crate::bound_math::{kl_inv_lower, kl_inv_upper, trivalent_cbound_sup, XiMode};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BoundName {
    /// kl-form bound on the Gibbs loss, doubled.
    Pbkl,
    /// kl bound on the vote itself, from a held-out set.
    Sh,
    /// C-bound with separate Gibbs and disagreement bounds.
    C1,
    /// C-bound from a joint (disagreement, joint error) trivalent kl bound.
    C2,
    /// Pinsker-relaxed bound with a free trade-off parameter.
    Lambda,
    /// C-bound on true moments; no confidence term.
    COracle,
    /// C-bound for posteriors aligned with the prior; no KL term.
    CAligned,
}

impl BoundName {
    pub fn as_str(self) -> &'static str {
        match self {
            BoundName::Pbkl => "PBKL",
            BoundName::Sh => "SH",
            BoundName::C1 => "C1",
            BoundName::C2 => "C2",
            BoundName::Lambda => "LAMBDA",
            BoundName::COracle => "C_ORACLE",
            BoundName::CAligned => "C_ALIGNED",
        }
    }
}

/// Inputs and intermediate values behind a bound. Fields a bound does not
/// use stay `None`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Ingredients {
    pub gibbs_emp: Option<f64>,
    pub mv_emp: Option<f64>,
    pub d_emp: Option<f64>,
    pub e_emp: Option<f64>,
    pub kl_div: Option<f64>,
    pub n_gibbs: Option<usize>,
    pub n_pair: Option<usize>,
    pub delta: f64,
    /// How `delta` was split between simultaneous statements; sums to
    /// `delta`.
    pub delta_shares: Vec<f64>,
    pub lambda: Option<f64>,
    pub xi_mode: Option<XiMode>,
    /// Right-hand side of the Gibbs-side (or only) kl constraint.
    pub rhs_gibbs: Option<f64>,
    /// Right-hand side of the pairwise kl constraint.
    pub rhs_pair: Option<f64>,
    /// Certified upper bound on the Gibbs loss used by the C-bounds.
    pub gibbs_upper: Option<f64>,
    /// Certified lower bound on the disagreement used by the C-bounds.
    pub disagreement_lower: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub bound_name: BoundName,
    /// Bound on the majority-vote loss. Values above 1 are kept as computed.
    pub mv_bound: f64,
    pub gibbs_bound: Option<f64>,
    /// `mv_bound >= 0.5`.
    pub trivial: bool,
    #[serde(flatten)]
    pub ingredients: Ingredients,
}

impl BoundReport {
    fn new(name: BoundName, mv_bound: f64, gibbs_bound: Option<f64>, ing: Ingredients) -> Self {
        BoundReport {
            bound_name: name,
            mv_bound,
            gibbs_bound,
            trivial: mv_bound >= 0.5,
            ingredients: ing,
        }
    }
}

fn check_prob(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} = {v} is not in [0, 1]")))
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("delta = {delta} is not in (0, 1)")))
    }
}

fn check_n(name: &str, n: usize) -> Result<()> {
    if n == 0 {
        Err(Error::InvalidArgument(format!("{name} must be at least 1")))
    } else {
        Ok(())
    }
}

fn check_kl(kl_div: f64) -> Result<()> {
    if kl_div >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("KL divergence {kl_div} is negative")))
    }
}

/// `KL(rho || uniform) = sum_i rho_i ln(m rho_i)`.
pub fn kl_to_uniform(rho: &[f64]) -> f64 {
    let m = rho.len() as f64;
    rho.iter()
        .filter(|&&r| r > 0.0)
        .map(|&r| r * (m * r).ln())
        .sum::<f64>()
        .max(0.0)
}

/// Doubled kl bound on the Gibbs loss.
pub fn pbkl(gibbs_emp: f64, n: usize, kl_div: f64, delta: f64, xi_mode: XiMode) -> Result<BoundReport> {
    check_prob("gibbs_emp", gibbs_emp)?;
    check_n("n", n)?;
    check_kl(kl_div)?;
    check_delta(delta)?;
    let rhs = (kl_div + (xi_mode.value(n as u64)? / delta).ln()) / n as f64;
    let gibbs = kl_inv_upper(gibbs_emp, rhs);
    Ok(BoundReport::new(
        BoundName::Pbkl,
        2.0 * gibbs,
        Some(gibbs),
        Ingredients {
            gibbs_emp: Some(gibbs_emp),
            kl_div: Some(kl_div),
            n_gibbs: Some(n),
            delta,
            delta_shares: vec![delta],
            xi_mode: Some(xi_mode),
            rhs_gibbs: Some(rhs),
            ..Default::default()
        },
    ))
}

/// kl bound on the vote's loss measured on `n_val` held-out rows.
pub fn sh_bound(mv_emp: f64, n_val: usize, delta: f64, xi_mode: XiMode) -> Result<BoundReport> {
    check_prob("mv_emp", mv_emp)?;
    check_n("validation size", n_val)?;
    check_delta(delta)?;
    let rhs = (xi_mode.value(n_val as u64)? / delta).ln() / n_val as f64;
    let mv = kl_inv_upper(mv_emp, rhs);
    Ok(BoundReport::new(
        BoundName::Sh,
        mv,
        None,
        Ingredients {
            mv_emp: Some(mv_emp),
            n_gibbs: Some(n_val),
            delta,
            delta_shares: vec![delta],
            xi_mode: Some(xi_mode),
            rhs_gibbs: Some(rhs),
            ..Default::default()
        },
    ))
}

/// `1 - m1^2 / m2` from the first and second moments of the margin.
pub fn cbound_oracle(m1: f64, m2: f64) -> Result<f64> {
    if m1 <= 0.0 {
        return Err(Error::InvalidArgument(
            "oracle C-bound requires positive first moment".into(),
        ));
    }
    if m2 <= 0.0 || m1 * m1 > m2 * (1.0 + 1e-12) {
        return Err(Error::InvalidArgument(format!(
            "margin moments ({m1}, {m2}) are inconsistent"
        )));
    }
    Ok(1.0 - m1 * m1 / m2)
}

/// `1 - (1 - 2b)^2 / (1 - 2d)` from an upper bound `b` on the Gibbs loss and a
/// lower bound `d` on the disagreement.
///
/// Returns the trivial 1 when `b >= 1/2` or `d >= 1/2`, and clamps negative
/// values to 0.
pub fn cbound_from_bounds(b: f64, d: f64) -> f64 {
    if b >= 0.5 || 1.0 - 2.0 * d <= 0.0 {
        return 1.0;
    }
    let num = 1.0 - 2.0 * b;
    (1.0 - num * num / (1.0 - 2.0 * d)).max(0.0)
}

/// C-bound with the Gibbs loss and the disagreement bounded separately, each
/// at confidence `delta / 2`.
pub fn c1_bound(
    gibbs_emp: f64,
    n_gibbs: usize,
    d_emp: f64,
    n_pair: usize,
    kl_div: f64,
    delta: f64,
    xi_mode: XiMode,
) -> Result<BoundReport> {
    check_prob("gibbs_emp", gibbs_emp)?;
    check_prob("d_emp", d_emp)?;
    check_n("n_gibbs", n_gibbs)?;
    check_n("n_pair", n_pair)?;
    check_kl(kl_div)?;
    check_delta(delta)?;
    let half = delta / 2.0;
    let rhs_g = (kl_div + (xi_mode.value(n_gibbs as u64)? / half).ln()) / n_gibbs as f64;
    let rhs_d = (2.0 * kl_div + (xi_mode.value(n_pair as u64)? / half).ln()) / n_pair as f64;
    let b = kl_inv_upper(gibbs_emp, rhs_g);
    let d = kl_inv_lower(d_emp, rhs_d);
    Ok(BoundReport::new(
        BoundName::C1,
        cbound_from_bounds(b, d),
        Some(b),
        Ingredients {
            gibbs_emp: Some(gibbs_emp),
            d_emp: Some(d_emp),
            kl_div: Some(kl_div),
            n_gibbs: Some(n_gibbs),
            n_pair: Some(n_pair),
            delta,
            delta_shares: vec![half, half],
            xi_mode: Some(xi_mode),
            rhs_gibbs: Some(rhs_g),
            rhs_pair: Some(rhs_d),
            gibbs_upper: Some(b),
            disagreement_lower: Some(d),
            ..Default::default()
        },
    ))
}

/// C-bound from a single trivalent kl constraint on (disagreement, joint
/// error). An empty constraint set gives the trivial 1.
pub fn c2_bound(
    d_emp: f64,
    e_emp: f64,
    n_pair: usize,
    kl_div: f64,
    delta: f64,
    xi_mode: XiMode,
) -> Result<BoundReport> {
    check_prob("d_emp", d_emp)?;
    check_prob("e_emp", e_emp)?;
    if d_emp + e_emp > 1.0 + 1e-12 {
        return Err(Error::InvalidArgument(format!(
            "d_emp + e_emp = {} exceeds 1",
            d_emp + e_emp
        )));
    }
    check_n("n_pair", n_pair)?;
    check_kl(kl_div)?;
    check_delta(delta)?;
    let n = n_pair as f64;
    let rhs = (2.0 * kl_div + ((xi_mode.value(n_pair as u64)? + n) / delta).ln()) / n;
    let mv = trivalent_cbound_sup(d_emp, e_emp, rhs).unwrap_or(1.0).max(0.0);
    Ok(BoundReport::new(
        BoundName::C2,
        mv,
        None,
        Ingredients {
            d_emp: Some(d_emp),
            e_emp: Some(e_emp),
            kl_div: Some(kl_div),
            n_pair: Some(n_pair),
            delta,
            delta_shares: vec![delta],
            xi_mode: Some(xi_mode),
            rhs_pair: Some(rhs),
            ..Default::default()
        },
    ))
}

/// Gibbs-loss bound of the λ form, before doubling:
/// `L / (1 - λ/2) + (KL + ln(2 sqrt(n) / δ)) / (λ (1 - λ/2) n)`.
pub fn lambda_objective(gibbs_emp: f64, n: usize, kl_div: f64, delta: f64, lambda: f64) -> f64 {
    let nf = n as f64;
    let keep = 1.0 - lambda / 2.0;
    gibbs_emp / keep + (kl_div + (2.0 * nf.sqrt() / delta).ln()) / (lambda * keep * nf)
}

/// Doubled λ-form bound for a fixed `lambda` in (0, 2).
pub fn lambda_bound(
    gibbs_emp: f64,
    n: usize,
    kl_div: f64,
    delta: f64,
    lambda: f64,
) -> Result<BoundReport> {
    check_prob("gibbs_emp", gibbs_emp)?;
    check_n("n", n)?;
    check_kl(kl_div)?;
    check_delta(delta)?;
    if !(lambda > 0.0 && lambda < 2.0) {
        return Err(Error::InvalidArgument(format!("lambda = {lambda} is not in (0, 2)")));
    }
    let gibbs = lambda_objective(gibbs_emp, n, kl_div, delta, lambda);
    Ok(BoundReport::new(
        BoundName::Lambda,
        2.0 * gibbs,
        Some(gibbs),
        Ingredients {
            gibbs_emp: Some(gibbs_emp),
            kl_div: Some(kl_div),
            n_gibbs: Some(n),
            delta,
            delta_shares: vec![delta],
            lambda: Some(lambda),
            xi_mode: Some(XiMode::TwoSqrtN),
            ..Default::default()
        },
    ))
}

/// `sqrt(ln(2 xi(n) / δ) / (2n))`, the deviation term of the aligned bound.
pub fn aligned_deviation(n: usize, delta: f64, xi_mode: XiMode) -> Result<f64> {
    check_n("n", n)?;
    check_delta(delta)?;
    Ok(((2.0 * xi_mode.value(n as u64)? / delta).ln() / (2.0 * n as f64)).sqrt())
}

/// C-bound for a posterior aligned with a uniform prior on a
/// self-complemented class. Needs no KL term; the Gibbs loss is pushed up and
/// the disagreement down by the same deviation.
pub fn aligned_cbound(
    gibbs_emp: f64,
    d_emp: f64,
    n: usize,
    delta: f64,
    xi_mode: XiMode,
) -> Result<BoundReport> {
    check_prob("gibbs_emp", gibbs_emp)?;
    check_prob("d_emp", d_emp)?;
    let eps = aligned_deviation(n, delta, xi_mode)?;
    let r = (gibbs_emp + eps).min(0.5);
    let d = (d_emp - eps).max(0.0);
    Ok(BoundReport::new(
        BoundName::CAligned,
        cbound_from_bounds(r, d),
        Some(r),
        Ingredients {
            gibbs_emp: Some(gibbs_emp),
            d_emp: Some(d_emp),
            n_pair: Some(n),
            delta,
            delta_shares: vec![delta],
            xi_mode: Some(xi_mode),
            rhs_gibbs: Some(eps),
            gibbs_upper: Some(r),
            disagreement_lower: Some(d),
            ..Default::default()
        },
    ))
}
