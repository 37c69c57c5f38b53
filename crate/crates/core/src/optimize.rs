//! Posterior optimization.
//!
//! * [`optimize_lambda`] alternates closed-form posterior updates with a
//!   one-dimensional search over λ to minimize the λ-form bound.
//! * [`optimize_cbound`] works on the ensemble augmented with every tree's
//!   negation. A posterior that keeps the prior mass `1/m` on each pair
//!   `{h_i, -h_i}` is described by `q_i = rho(h_i)` in `[0, 1/m]`, and the
//!   margin only depends on `w_i = 2 q_i - 1/m`. Then the first margin
//!   moment is `b^T w` with `b_i = 1 - 2 L_i`, and the second is `w^T A w`
//!   with `A_ij = 1 - 2 d_ij`. We minimize the second moment with the first
//!   pinned to `mu`.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::bounds::{aligned_cbound, kl_to_uniform, lambda_bound, lambda_objective, BoundReport};
use crate::bound_math::XiMode;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::forest::{uniform, VoteMatrix};
use crate::stats::{Evaluation, OobStatistics};

const LAMBDA_TOL: f64 = 1e-9;
const LAMBDA_MAX_ITERS: usize = 200;
const QP_TOL: f64 = 1e-6;
const QP_MAX_ITERS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Provenance {
    Uniform,
    LambdaOpt,
    COpt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorWeights {
    pub weights: Vec<f64>,
    pub provenance: Provenance,
    pub lambda_star: Option<f64>,
}

impl PosteriorWeights {
    pub fn uniform(m: usize) -> Self {
        PosteriorWeights {
            weights: uniform(m),
            provenance: Provenance::Uniform,
            lambda_star: None,
        }
    }
}

/// Minimizes a unimodal `f` on `[lo, hi]` by golden-section search until the
/// bracket is narrower than `tol`.
pub fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - inv_phi * (hi - lo);
    let mut b = lo + inv_phi * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    while hi - lo > tol {
        if fa <= fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - inv_phi * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + inv_phi * (hi - lo);
            fb = f(b);
        }
    }
    0.5 * (lo + hi)
}

/// The λ minimizing the λ-form bound for a fixed posterior, by golden
/// section on (0, 2).
pub fn best_lambda(gibbs_emp: f64, n: usize, kl_div: f64, delta: f64) -> f64 {
    let f = |l: f64| lambda_objective(gibbs_emp, n, kl_div, delta, l);
    golden_section(f, 1e-12, 2.0 - 1e-12, LAMBDA_TOL)
}

/// Stationary point of the λ-form bound in λ:
/// `2 / (sqrt(2 n L / K + 1) + 1)` with `K = KL + ln(2 sqrt(n) / δ)`.
pub fn lambda_closed_form(gibbs_emp: f64, n: usize, kl_div: f64, delta: f64) -> f64 {
    let nf = n as f64;
    let k = kl_div + (2.0 * nf.sqrt() / delta).ln();
    2.0 / ((2.0 * nf * gibbs_emp / k + 1.0).sqrt() + 1.0)
}

/// `rho_i ∝ exp(-λ n L_i)` (uniform prior), computed stably.
pub fn gibbs_posterior(losses: &[f64], lambda: f64, n: usize) -> Vec<f64> {
    let scale = lambda * n as f64;
    let min = losses.iter().copied().fold(f64::INFINITY, f64::min);
    let raw: Vec<f64> = losses.iter().map(|l| (-scale * (l - min)).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|r| r / total).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaOptimization {
    pub posterior: PosteriorWeights,
    pub report: BoundReport,
    /// Bound (before doubling) after each iteration; nonincreasing.
    pub history: Vec<f64>,
    pub converged: bool,
}

/// Alternating minimization of the λ-form bound over the posterior and λ,
/// with `n = n_gibbs` and a uniform prior.
pub fn optimize_lambda(stats: &OobStatistics, delta: f64) -> Result<LambdaOptimization> {
    let losses = &stats.per_tree_loss;
    let n = stats.n_gibbs;
    let m = losses.len();
    if m == 0 || n == 0 {
        return Err(Error::InvalidArgument("no voters or no evaluation rows".into()));
    }
    let value = |rho: &[f64], lambda: f64| {
        let l = stats.gibbs_loss(rho);
        lambda_objective(l, n, kl_to_uniform(rho), delta, lambda)
    };

    let mut rho = uniform(m);
    let mut lambda = best_lambda(stats.gibbs_loss(&rho), n, 0.0, delta);
    let mut current = value(&rho, lambda);
    let mut history = vec![current];
    let mut converged = false;
    for _ in 0..LAMBDA_MAX_ITERS {
        let next_rho = gibbs_posterior(losses, lambda, n);
        let next_lambda = best_lambda(stats.gibbs_loss(&next_rho), n, kl_to_uniform(&next_rho), delta);
        let next = value(&next_rho, next_lambda);
        if !next.is_finite() {
            return Err(Error::Numeric(format!("lambda-bound evaluated to {next}")));
        }
        // Each half-step is an exact coordinate minimizer, so the bound can
        // only rise by rounding; never accept a worse iterate.
        if next > current {
            converged = true;
            break;
        }
        let gain = current - next;
        rho = next_rho;
        lambda = next_lambda;
        current = next;
        history.push(current);
        if gain < LAMBDA_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        warn!("lambda optimization stopped after {LAMBDA_MAX_ITERS} iterations");
    }
    let report = lambda_bound(stats.gibbs_loss(&rho), n, kl_to_uniform(&rho), delta, lambda)?;
    Ok(LambdaOptimization {
        posterior: PosteriorWeights {
            weights: rho,
            provenance: Provenance::LambdaOpt,
            lambda_star: Some(lambda),
        },
        report,
        history,
        converged,
    })
}

/// Ensemble predictions followed by their negations: voter `m + i` predicts
/// `-h_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfComplementedSet {
    base_size: usize,
    votes: VoteMatrix,
}

impl SelfComplementedSet {
    pub fn base_size(&self) -> usize {
        self.base_size
    }

    pub fn votes(&self) -> &VoteMatrix {
        &self.votes
    }
}

pub fn self_complement(votes: &VoteMatrix) -> SelfComplementedSet {
    let m = votes.n_voters();
    let rows = (0..2 * m)
        .map(|v| {
            let base = votes.voter(v % m);
            if v < m {
                base.to_vec()
            } else {
                base.iter().map(|h| -h).collect()
            }
        })
        .collect();
    SelfComplementedSet {
        base_size: m,
        votes: VoteMatrix::from_rows(rows),
    }
}

/// Posterior over the self-complemented set that gives each pair
/// `{h_i, -h_i}` total mass `1/m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedPosterior {
    /// Mass on each original voter, in `[0, 1/m]`.
    pub q: Vec<f64>,
}

impl AlignedPosterior {
    /// All mass on the original voters.
    pub fn originals(m: usize) -> Self {
        AlignedPosterior { q: uniform(m) }
    }

    fn from_x(x: &[f64]) -> Self {
        let m = x.len() as f64;
        AlignedPosterior {
            q: x.iter().map(|v| (v + 1.0) / (2.0 * m)).collect(),
        }
    }

    pub fn base_size(&self) -> usize {
        self.q.len()
    }

    /// The full posterior over `2m` voters, originals first.
    pub fn rho(&self) -> Vec<f64> {
        let pair = 1.0 / self.q.len() as f64;
        let mut rho = self.q.clone();
        rho.extend(self.q.iter().map(|q| pair - q));
        rho
    }

    /// Net weight `rho(h_i) - rho(-h_i)` of each original voter in the vote.
    pub fn signed_weights(&self) -> Vec<f64> {
        let pair = 1.0 / self.q.len() as f64;
        self.q.iter().map(|q| 2.0 * q - pair).collect()
    }

    pub fn complement_mass(&self) -> f64 {
        let pair = 1.0 / self.q.len() as f64;
        self.q.iter().map(|q| pair - q).sum()
    }

    /// `max_i |rho(h_i) + rho(-h_i) - 1/m|`.
    pub fn alignment_violation(&self) -> f64 {
        let m = self.q.len();
        let rho = self.rho();
        let pair = 1.0 / m as f64;
        (0..m)
            .map(|i| (rho[i] + rho[m + i] - pair).abs())
            .fold(0.0, f64::max)
    }
}

/// The aligned-posterior quadratic program in scaled coordinates
/// `x = m w` in `[-1, 1]^m`: minimize `x^T A x / m^2` s.t. `c^T x = mu` with
/// `c = b / m`.
#[derive(Debug, Clone)]
pub struct AlignedQp {
    m: usize,
    /// `A / m^2`, row-major.
    a: Vec<f64>,
    c: Vec<f64>,
    /// Gradient Lipschitz constant along the hyperplane `c^T x = mu`.
    lipschitz: f64,
}

impl AlignedQp {
    pub fn new(stats: &OobStatistics) -> Self {
        let m = stats.n_voters;
        let m2 = (m * m) as f64;
        let a: Vec<f64> = stats.disagreement.iter().map(|d| (1.0 - 2.0 * d) / m2).collect();
        let c: Vec<f64> = stats
            .per_tree_loss
            .iter()
            .map(|l| (1.0 - 2.0 * l) / m as f64)
            .collect();
        let mut qp = AlignedQp {
            m,
            a,
            c,
            lipschitz: 0.0,
        };
        qp.lipschitz = 2.0 * qp.tangent_spectral_radius() * 1.05 + f64::MIN_POSITIVE;
        qp
    }

    /// Achievable first moments `[-sum|b|/m, sum|b|/m]`.
    pub fn mu_range(&self) -> (f64, f64) {
        let hi: f64 = self.c.iter().map(|c| c.abs()).sum();
        (-hi, hi)
    }

    fn mat_vec_into(&self, x: &[f64], out: &mut [f64]) {
        let m = self.m;
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.a[i * m..(i + 1) * m].iter().zip(x).map(|(a, v)| a * v).sum();
        }
    }

    fn mat_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.m];
        self.mat_vec_into(x, &mut out);
        out
    }

    /// Removes the component along `c`.
    fn to_tangent(&self, v: &mut [f64]) {
        let cc: f64 = self.c.iter().map(|c| c * c).sum();
        if cc == 0.0 {
            return;
        }
        let k = self.c.iter().zip(v.iter()).map(|(c, x)| c * x).sum::<f64>() / cc;
        for (x, c) in v.iter_mut().zip(&self.c) {
            *x -= k * c;
        }
    }

    /// Power-iteration estimate of `max |eig(P A P)| / m^2`, `P` the
    /// projector onto `c`'s orthogonal complement. Iterates never leave the
    /// hyperplane, so only this restriction matters; when the trees
    /// agree closely `A` is nearly rank one along `c` and the restriction is
    /// far better conditioned than `A` itself.
    fn tangent_spectral_radius(&self) -> f64 {
        let m = self.m;
        let mut v: Vec<f64> = (0..m).map(|i| 1.0 + (i % 7) as f64 * 0.1).collect();
        self.to_tangent(&mut v);
        let mut w = vec![0.0; m];
        let mut est = 0.0;
        for _ in 0..500 {
            let vnorm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if vnorm == 0.0 {
                return 0.0;
            }
            self.mat_vec_into(&v, &mut w);
            self.to_tangent(&mut w);
            let next = w.iter().map(|x| x * x).sum::<f64>().sqrt() / vnorm;
            std::mem::swap(&mut v, &mut w);
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return 0.0;
            }
            v.iter_mut().for_each(|x| *x /= norm);
            if (next - est).abs() <= 1e-9 * next {
                return next;
            }
            est = next;
        }
        est
    }

    /// Second margin moment `x^T A x / m^2`.
    pub fn objective(&self, x: &[f64]) -> f64 {
        self.mat_vec(x).iter().zip(x).map(|(a, v)| a * v).sum()
    }

    /// First margin moment `c^T x`.
    pub fn first_moment(&self, x: &[f64]) -> f64 {
        self.c.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Euclidean projection onto `{x in [-1,1]^m : c^T x = mu}`: the solution
    /// is `clip(z - tau c)` for the `tau` found by bisection.
    pub fn project(&self, z: &[f64], mu: f64) -> Vec<f64> {
        let g = |tau: f64| -> f64 {
            z.iter()
                .zip(&self.c)
                .map(|(v, c)| c * (v - tau * c).clamp(-1.0, 1.0))
                .sum::<f64>()
                - mu
        };
        // g is nonincreasing in tau; bracket the root by doubling.
        let (mut lo, mut hi) = (-1.0, 1.0);
        while g(lo) < 0.0 && lo > -1e300 {
            lo *= 2.0;
        }
        while g(hi) > 0.0 && hi < 1e300 {
            hi *= 2.0;
        }
        for _ in 0..2200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if g(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        // Pick the end closer to the hyperplane.
        let tau = if g(lo).abs() <= g(hi).abs() { lo } else { hi };
        z.iter()
            .zip(&self.c)
            .map(|(v, c)| (v - tau * c).clamp(-1.0, 1.0))
            .collect()
    }

    fn step_residual(&self, x: &[f64], grad: &[f64], lipschitz: f64, mu: f64) -> f64 {
        let z: Vec<f64> = x.iter().zip(grad).map(|(v, g)| v - 2.0 * g / lipschitz).collect();
        let p = self.project(&z, mu);
        p.iter().zip(x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Gradient-map norm `max_i |x - P(x - grad f(x) / L)|`; zero exactly at
    /// KKT points.
    pub fn kkt_residual(&self, x: &[f64], mu: f64) -> f64 {
        self.step_residual(x, &self.mat_vec(x), self.lipschitz, mu)
    }

    /// Accelerated projected gradient with step `1/L` and adaptive restart.
    /// `L` doubles if a plain step ever fails to decrease the objective.
    pub fn solve(&self, mu: f64) -> Result<QpSolution> {
        let (lo, hi) = self.mu_range();
        if !(mu >= lo && mu <= hi) {
            return Err(Error::InfeasibleMu { mu, lo, hi });
        }
        let m = self.m;
        let mut lipschitz = self.lipschitz;
        let mut x = self.project(&vec![1.0; m], mu);
        let mut y = x.clone();
        let mut t = 1.0f64;
        let mut grad = vec![0.0; m];
        let mut f_prev = self.objective(&x);
        let mut residual = self.step_residual(&x, &self.mat_vec(&x), lipschitz, mu);
        let mut iterations = 0;
        let mut max_violation = AlignedPosterior::from_x(&x).alignment_violation();
        while residual > QP_TOL && iterations < QP_MAX_ITERS {
            iterations += 1;
            self.mat_vec_into(&y, &mut grad);
            let z: Vec<f64> = y.iter().zip(&grad).map(|(v, g)| v - 2.0 * g / lipschitz).collect();
            let x_next = self.project(&z, mu);
            let f_next = self.objective(&x_next);
            if f_next > f_prev + 1e-15 * f_prev.abs() {
                if t == 1.0 {
                    lipschitz *= 2.0;
                }
                y.clone_from(&x);
                t = 1.0;
                continue;
            }
            let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
            let beta = (t - 1.0) / t_next;
            y = x_next
                .iter()
                .zip(&x)
                .map(|(a, b)| a + beta * (a - b))
                .collect();
            x = x_next;
            t = t_next;
            f_prev = f_next;
            max_violation = max_violation.max(AlignedPosterior::from_x(&x).alignment_violation());
            self.mat_vec_into(&x, &mut grad);
            residual = self.step_residual(&x, &grad, lipschitz, mu);
        }
        if residual > QP_TOL {
            warn!("aligned QP at mu = {mu}: residual {residual:.2e} after {iterations} iterations");
        }
        let second = self.objective(&x);
        if !second.is_finite() {
            return Err(Error::Numeric(format!("QP objective evaluated to {second}")));
        }
        Ok(QpSolution {
            first_moment: self.first_moment(&x),
            second_moment: second,
            posterior: AlignedPosterior::from_x(&x),
            iterations,
            kkt_residual: residual,
            max_alignment_violation: max_violation,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpSolution {
    pub posterior: AlignedPosterior,
    pub first_moment: f64,
    pub second_moment: f64,
    pub iterations: usize,
    pub kkt_residual: f64,
    /// Worst alignment error over all iterates.
    pub max_alignment_violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CboundOptimization {
    pub mu: f64,
    pub solution: QpSolution,
    pub report: BoundReport,
}

/// Solves the aligned QP at `mu` and evaluates the aligned C-bound at the
/// result with `n = n_pair`.
pub fn optimize_cbound(
    stats: &OobStatistics,
    mu: f64,
    delta: f64,
    xi_mode: XiMode,
) -> Result<CboundOptimization> {
    optimize_cbound_with(&AlignedQp::new(stats), stats, mu, delta, xi_mode)
}

fn optimize_cbound_with(
    qp: &AlignedQp,
    stats: &OobStatistics,
    mu: f64,
    delta: f64,
    xi_mode: XiMode,
) -> Result<CboundOptimization> {
    if !(mu > 0.0 && mu < 1.0) {
        return Err(Error::InvalidArgument(format!("mu = {mu} is not in (0, 1)")));
    }
    let solution = qp.solve(mu)?;
    let gibbs = ((1.0 - solution.first_moment) / 2.0).clamp(0.0, 1.0);
    let d = ((1.0 - solution.second_moment) / 2.0).clamp(0.0, 1.0);
    let report = aligned_cbound(gibbs, d, stats.n_pair, delta, xi_mode)?;
    Ok(CboundOptimization {
        mu,
        solution,
        report,
    })
}

/// `k` log-spaced points from `mu_max * 1e-3` to `mu_max`, where `mu_max` is
/// the largest achievable first moment (capped below 1).
pub fn default_mu_grid(stats: &OobStatistics, k: usize) -> Vec<f64> {
    let (_, hi) = AlignedQp::new(stats).mu_range();
    let top = hi.min(1.0 - 1e-12);
    if top <= 0.0 || k == 0 {
        return Vec::new();
    }
    if k == 1 {
        return vec![top];
    }
    let (a, b) = ((top * 1e-3).ln(), top.ln());
    (0..k)
        .map(|i| {
            if i + 1 == k {
                top
            } else {
                (a + (b - a) * i as f64 / (k - 1) as f64).exp()
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MuCandidate {
    pub mu: f64,
    pub oob_mv_loss: Option<f64>,
    pub mv_bound: Option<f64>,
    pub complement_mass: Option<f64>,
    pub iterations: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MuSelection {
    pub best: CboundOptimization,
    pub oob_mv_loss: f64,
    pub candidates: Vec<MuCandidate>,
}

/// Runs [`optimize_cbound`] at every grid point and keeps the one whose
/// posterior has the lowest out-of-bag majority-vote loss. Ties go to the
/// lower certified bound, then to the smaller `mu`. Infeasible points are
/// skipped with a warning.
pub fn select_mu(
    stats: &OobStatistics,
    eval: &Evaluation,
    mu_grid: &[f64],
    delta: f64,
    xi_mode: XiMode,
    exec: Exec,
) -> Result<MuSelection> {
    if mu_grid.is_empty() {
        return Err(Error::InvalidArgument("empty mu grid".into()));
    }
    let qp = AlignedQp::new(stats);
    let runs = exec.map_range(mu_grid.len(), |k| {
        optimize_cbound_with(&qp, stats, mu_grid[k], delta, xi_mode).map(|opt| {
            let loss = eval.oob_mv_estimate(&opt.solution.posterior.signed_weights()).loss;
            (opt, loss)
        })
    });

    let mut candidates = Vec::with_capacity(runs.len());
    // Ordered by (out-of-bag loss, certified bound, mu).
    let mut best: Option<((f64, f64, f64), CboundOptimization)> = None;
    for (k, run) in runs.into_iter().enumerate() {
        let mu = mu_grid[k];
        match run {
            Ok((opt, loss)) => {
                candidates.push(MuCandidate {
                    mu,
                    oob_mv_loss: Some(loss),
                    mv_bound: Some(opt.report.mv_bound),
                    complement_mass: Some(opt.solution.posterior.complement_mass()),
                    iterations: Some(opt.solution.iterations),
                    error: None,
                });
                let key = (loss, opt.report.mv_bound, mu);
                let better = match &best {
                    None => true,
                    Some((b, _)) => key.partial_cmp(b) == Some(std::cmp::Ordering::Less),
                };
                if better {
                    best = Some((key, opt));
                }
            }
            Err(e @ (Error::InfeasibleMu { .. } | Error::InvalidArgument(_))) => {
                warn!("skipping mu = {mu}: {e}");
                candidates.push(MuCandidate {
                    mu,
                    oob_mv_loss: None,
                    mv_bound: None,
                    complement_mass: None,
                    iterations: None,
                    error: Some(e.to_string()),
                });
            }
            Err(e) => return Err(e),
        }
    }
    let ((loss, _, _), best) = best.ok_or_else(|| {
        let (lo, hi) = qp.mu_range();
        Error::InfeasibleMu {
            mu: mu_grid[0],
            lo,
            hi,
        }
    })?;
    Ok(MuSelection {
        best,
        oob_mv_loss: loss,
        candidates,
    })
}
