//! Certified-radius formulas and dimension-dependent upper bounds.
//!
//! All radii are in ℓ2 units of the input the noise was added to. Quantile
//! arguments are clamped to `[1e-15, 1 − 1e-15]` inside this module and the
//! clamp is recorded on the result.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::statfun::{self, phi_inv, StatError};
use crate::stream::RandomStream;

/// Smallest / largest probability handed to `Φ⁻¹` here.
pub const QUANTILE_CLAMP: f64 = 1e-15;

/// Gap between estimated and true probability assumed by the upper bound.
pub const UPPER_BOUND_MARGIN: f64 = 5e-7;

/// Slack allowed when a sum of probabilities should not exceed one.
const SUM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RadiusError {
    #[error(transparent)]
    Stat(#[from] StatError),
    #[error("sigma must be finite and > 0, got {0}")]
    InvalidSigma(f64),
    #[error("tilde p = {0} exceeds 1; use the worst case p_b = 1 - p_a")]
    TildeAboveOne(f64),
    #[error("tilde p / k = {0} is outside (0, 1)")]
    TildeOutOfRange(f64),
    #[error("branch radii were computed with different sigmas ({0} vs {1})")]
    SigmaMismatch(f64, f64),
    #[error("a partition needs at least two branches, got {0}")]
    TooFewBranches(usize),
    #[error("p_a and p_b lists differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("constraints are infeasible: sum of p_a {sum_a} is below the target {target}")]
    Infeasible { sum_a: f64, target: f64 },
    #[error("dimension must be >= 1")]
    ZeroDimension,
    #[error("adjusted probability {0} is not below 1")]
    BoundDomain(f64),
}

pub type Result<T> = std::result::Result<T, RadiusError>;

/// Top-class and runner-up probabilities for one branch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchProbs {
    pub p_a: f64,
    pub p_b: f64,
}

impl BranchProbs {
    pub fn new(p_a: f64, p_b: f64) -> Result<Self> {
        statfun::Probability::new(p_a)?;
        statfun::Probability::new(p_b)?;
        Ok(Self { p_a, p_b })
    }

    /// `p_b = 1 − p_a`, the convention used with lower-bound estimates.
    pub fn worst_case(p_a: f64) -> Result<Self> {
        Self::new(p_a, 1.0 - p_a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Caveat {
    /// The value comes from a stationary point that need not be a minimum.
    SaddlePointKGt2,
    /// The adversarial optimum sits on a constraint boundary.
    BoundaryOptimum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadiusResult {
    /// Certified radius; 0 when not certified.
    pub radius: f64,
    /// Adversary's combined top-class budget; `p_a + p_b` for one branch.
    pub tilde_p: f64,
    pub certified: bool,
    pub caveat: Option<Caveat>,
    /// Per-branch perturbation budget `s` for partitioned results.
    pub budget: Option<f64>,
    /// Noise level (`σ_l` for asymmetric results).
    pub sigma: f64,
    /// True when a quantile argument had to be clamped.
    pub clamped: bool,
}

impl RadiusResult {
    fn not_certified(tilde_p: f64, sigma: f64) -> Self {
        Self {
            radius: 0.0,
            tilde_p,
            certified: false,
            caveat: None,
            budget: None,
            sigma,
            clamped: false,
        }
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(RadiusError::InvalidSigma(sigma))
    }
}

/// `Φ⁻¹` with the module clamp; sets `flag` when clamping happened.
fn quantile(p: f64, flag: &mut bool) -> f64 {
    let c = p.clamp(QUANTILE_CLAMP, 1.0 - QUANTILE_CLAMP);
    if c != p {
        *flag = true;
    }
    phi_inv(c)
}

fn tilde_p(branches: &[BranchProbs]) -> f64 {
    branches.iter().map(|b| b.p_a + b.p_b).sum::<f64>() / 2.0
}

/// `½σ(Φ⁻¹(p_a) − Φ⁻¹(p_b))`; not certified when `p_a < p_b`.
pub fn rs_radius(p: BranchProbs, sigma: f64) -> Result<RadiusResult> {
    check_sigma(sigma)?;
    let tp = p.p_a + p.p_b;
    if p.p_a < p.p_b {
        return Ok(RadiusResult::not_certified(tp, sigma));
    }
    let mut clamped = false;
    let r = 0.5 * sigma * (quantile(p.p_a, &mut clamped) - quantile(p.p_b, &mut clamped));
    Ok(RadiusResult {
        radius: r,
        tilde_p: tp,
        certified: true,
        caveat: None,
        budget: None,
        sigma,
        clamped,
    })
}

/// `σΦ⁻¹(p̲_A)`, certified only when `p̲_A > ½`.
pub fn rs_radius_lower(p_a_lower: f64, sigma: f64) -> Result<RadiusResult> {
    check_sigma(sigma)?;
    statfun::Probability::new(p_a_lower)?;
    if p_a_lower <= 0.5 {
        return Ok(RadiusResult::not_certified(1.0, sigma));
    }
    let mut clamped = false;
    let r = sigma * quantile(p_a_lower, &mut clamped);
    Ok(RadiusResult {
        radius: r,
        tilde_p: 1.0,
        certified: true,
        caveat: None,
        budget: None,
        sigma,
        clamped,
    })
}

/// Dual radius `σ/√2 (Φ⁻¹(p_A^l) + Φ⁻¹(p_A^r) − 2Φ⁻¹(p̃/2))`.
///
/// Requires `p̃ ≤ 1`; a negative value is reported as not certified.
pub fn drs_radius(left: BranchProbs, right: BranchProbs, sigma: f64) -> Result<RadiusResult> {
    check_sigma(sigma)?;
    let tp = tilde_p(&[left, right]);
    if tp > 1.0 + SUM_TOLERANCE {
        return Err(RadiusError::TildeAboveOne(tp));
    }
    let mut clamped = false;
    let s = sigma
        * (quantile(left.p_a, &mut clamped) + quantile(right.p_a, &mut clamped)
            - 2.0 * quantile(tp.min(1.0) / 2.0, &mut clamped));
    let r = s / std::f64::consts::SQRT_2;
    Ok(RadiusResult {
        radius: r.max(0.0),
        tilde_p: tp,
        certified: r >= 0.0,
        caveat: None,
        budget: Some(s),
        sigma,
        clamped,
    })
}

/// `σ/√2 (Φ⁻¹(p̲^l) + Φ⁻¹(p̲^r))`, certified iff `p̲^l + p̲^r ≥ 1`.
pub fn drs_radius_lower(p_a_left: f64, p_a_right: f64, sigma: f64) -> Result<RadiusResult> {
    check_sigma(sigma)?;
    statfun::Probability::new(p_a_left)?;
    statfun::Probability::new(p_a_right)?;
    if p_a_left + p_a_right < 1.0 {
        return Ok(RadiusResult::not_certified(1.0, sigma));
    }
    let mut clamped = false;
    let s = sigma * (quantile(p_a_left, &mut clamped) + quantile(p_a_right, &mut clamped));
    Ok(RadiusResult {
        radius: s / std::f64::consts::SQRT_2,
        tilde_p: 1.0,
        certified: true,
        caveat: None,
        budget: Some(s),
        sigma,
        clamped,
    })
}

/// Combines two single-branch lower-bound radii: `(R′_l + R′_r)/√2`.
pub fn drs_from_rs_identity(left: &RadiusResult, right: &RadiusResult) -> Result<RadiusResult> {
    if left.sigma != right.sigma {
        return Err(RadiusError::SigmaMismatch(left.sigma, right.sigma));
    }
    if !(left.certified && right.certified) {
        return Ok(RadiusResult::not_certified(1.0, left.sigma));
    }
    let s = left.radius + right.radius;
    Ok(RadiusResult {
        radius: s / std::f64::consts::SQRT_2,
        tilde_p: 1.0,
        certified: true,
        caveat: None,
        budget: Some(s),
        sigma: left.sigma,
        clamped: left.clamped || right.clamped,
    })
}

/// Largest radius smoothing with `N(0, σ²I_d)` can certify at top-class
/// probability `p_max`: `(5/√d) Ψ⁻¹(p_max / (1 − 5·10⁻⁷))`.
pub fn rs_upper_bound(p_max: f64, dim: u64, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    statfun::Probability::new(p_max)?;
    if dim == 0 {
        return Err(RadiusError::ZeroDimension);
    }
    let adjusted = p_max / (1.0 - UPPER_BOUND_MARGIN);
    if adjusted >= 1.0 {
        return Err(RadiusError::BoundDomain(adjusted));
    }
    if p_max == 0.0 {
        return Ok(0.0);
    }
    let r = statfun::gaussian_ball_mass_inv(adjusted, dim, sigma)?;
    Ok(5.0 / (dim as f64).sqrt() * r)
}

/// Dual counterpart: `(5/√(2m))Ψ⁻¹(·; m) + (5/√(2n))Ψ⁻¹(·; n)`.
pub fn drs_upper_bound(p_max_left: f64, p_max_right: f64, m: u64, n: u64, sigma: f64) -> Result<f64> {
    let half = |p: f64, dim: u64| -> Result<f64> {
        // rs_upper_bound carries 5/√dim; the dual term wants 5/√(2·dim).
        Ok(rs_upper_bound(p, dim, sigma)? / std::f64::consts::SQRT_2)
    };
    Ok(half(p_max_left, m)? + half(p_max_right, n)?)
}

/// k-way generalization evaluated at the stationary point `p′_j = p̃/k`:
/// `s = σ(ΣΦ⁻¹(p_A^j) − kΦ⁻¹(p̃/k))`, radius `s/√k`.
///
/// For `k > 2` the stationary point is a saddle, so the result is marked
/// not certified and carries [`Caveat::SaddlePointKGt2`].
pub fn k_partition_radius(branches: &[BranchProbs], sigma: f64) -> Result<RadiusResult> {
    check_sigma(sigma)?;
    let k = branches.len();
    if k < 2 {
        return Err(RadiusError::TooFewBranches(k));
    }
    let tp = tilde_p(branches);
    let share = tp / k as f64;
    if !(share > 0.0 && share < 1.0) {
        return Err(RadiusError::TildeOutOfRange(share));
    }
    let mut clamped = false;
    let sum: f64 = branches.iter().map(|b| quantile(b.p_a, &mut clamped)).sum();
    let s = sigma * (sum - k as f64 * quantile(share, &mut clamped));
    let r = s / (k as f64).sqrt();
    let saddle = k > 2;
    Ok(RadiusResult {
        radius: r.max(0.0),
        tilde_p: tp,
        certified: !saddle && r >= 0.0,
        caveat: saddle.then_some(Caveat::SaddlePointKGt2),
        budget: Some(s),
        sigma,
        clamped,
    })
}

/// Outcome of the numeric search over the adversary's probability split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveMin {
    /// Best point over all starts.
    pub minimizer: Vec<f64>,
    /// `−ΣΦ⁻¹(p′_j)` at `minimizer`.
    pub value: f64,
    pub caveat: Option<Caveat>,
    /// The feasible point nearest the equal split `p̃/k` (the closed-form
    /// stationary point when no bound is active).
    pub symmetric_point: Vec<f64>,
    pub symmetric_value: f64,
    /// Largest first-order improvement still available at `symmetric_point`
    /// along any feasible pair direction; zero at a stationary point.
    pub symmetric_residual: f64,
    pub starts: usize,
}

/// Objective `−ΣΦ⁻¹(p′_j)`.
pub fn adv_prob_objective(p: &[f64]) -> f64 {
    let mut unused = false;
    -p.iter().map(|&v| quantile(v, &mut unused)).sum::<f64>()
}

const MIN_STARTS: usize = 16;
const DESCENT_TOL: f64 = 1e-10;
const MAX_SWEEPS: usize = 10_000;

/// Exact minimizer of `−Φ⁻¹(u) − Φ⁻¹(s − u)` on `[lo, hi]`.
///
/// The derivative vanishes only at `u = s/2` (or everywhere when `s = 1`),
/// so the minimum is at `s/2` or at an endpoint.
fn pair_min(s: f64, lo: f64, hi: f64, current: f64) -> f64 {
    let h = |u: f64| adv_prob_objective(&[u, s - u]);
    let mut best = current;
    let mut best_v = h(current);
    for u in [lo, hi, s / 2.0] {
        if (lo..=hi).contains(&u) {
            let v = h(u);
            if v < best_v - 1e-15 {
                best = u;
                best_v = v;
            }
        }
    }
    best
}

fn descend(mut p: Vec<f64>, ub: &[f64]) -> Vec<f64> {
    let k = p.len();
    let mut prev = adv_prob_objective(&p);
    for _ in 0..MAX_SWEEPS {
        for i in 0..k {
            for j in i + 1..k {
                let s = p[i] + p[j];
                let lo = (s - ub[j]).max(QUANTILE_CLAMP);
                let hi = ub[i].min(s - QUANTILE_CLAMP);
                if lo > hi {
                    continue;
                }
                let u = pair_min(s, lo, hi, p[i].clamp(lo, hi));
                p[i] = u;
                p[j] = s - u;
            }
        }
        let now = adv_prob_objective(&p);
        if (prev - now).abs() < DESCENT_TOL {
            break;
        }
        prev = now;
    }
    p
}

/// Euclidean projection onto `{Σx = target, ε ≤ x ≤ ub}` by bisection on
/// the shift.
fn project(y: &[f64], ub: &[f64], target: f64) -> Vec<f64> {
    let at = |lam: f64| -> Vec<f64> {
        y.iter()
            .zip(ub)
            .map(|(&v, &u)| (v - lam).clamp(QUANTILE_CLAMP, u))
            .collect()
    };
    let sum = |x: &[f64]| x.iter().sum::<f64>();
    let (mut lo, mut hi) = (-2.0, 2.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if sum(&at(mid)) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut x = at(0.5 * (lo + hi));
    // Put the residual rounding error on a coordinate with slack.
    let err = target - sum(&x);
    if let Some(j) = (0..x.len()).find(|&j| {
        let v = x[j] + err;
        v >= QUANTILE_CLAMP && v <= ub[j]
    }) {
        x[j] += err;
    }
    x
}

/// Largest first-order decrease available along feasible pair moves.
fn pair_residual(p: &[f64], ub: &[f64]) -> f64 {
    let grad: Vec<f64> = p
        .iter()
        .map(|&v| {
            let mut unused = false;
            -1.0 / statfun::normal_pdf(quantile(v, &mut unused))
        })
        .collect();
    let mut worst = 0.0f64;
    for i in 0..p.len() {
        for j in 0..p.len() {
            // move mass from j to i
            if i != j && p[i] < ub[i] - 1e-12 && p[j] > QUANTILE_CLAMP {
                worst = worst.max(grad[j] - grad[i]);
            }
        }
    }
    worst
}

/// Multi-start pairwise coordinate descent for
/// `min −ΣΦ⁻¹(p′_j)` subject to `Σp′_j = ½Σ(p_A^j + p_B^j)` and `p′_j ≤ p_A^j`.
pub fn adv_prob_objective_min(p_a: &[f64], p_b: &[f64]) -> Result<ObjectiveMin> {
    if p_a.len() != p_b.len() {
        return Err(RadiusError::LengthMismatch(p_a.len(), p_b.len()));
    }
    let k = p_a.len();
    if k < 2 {
        return Err(RadiusError::TooFewBranches(k));
    }
    for &v in p_a.iter().chain(p_b) {
        statfun::Probability::new(v)?;
    }
    let target = (p_a.iter().sum::<f64>() + p_b.iter().sum::<f64>()) / 2.0;
    let sum_a: f64 = p_a.iter().sum();
    if sum_a < target || target <= k as f64 * QUANTILE_CLAMP {
        return Err(RadiusError::Infeasible { sum_a, target });
    }

    let symmetric = project(&vec![target / k as f64; k], p_a, target);
    let symmetric_value = adv_prob_objective(&symmetric);
    let symmetric_residual = pair_residual(&symmetric, p_a);

    let mut best = descend(symmetric.clone(), p_a);
    let mut best_v = adv_prob_objective(&best);
    let mut rng = RandomStream::new(0x0B1E_C71E, k as u64);
    for _ in 1..MIN_STARTS {
        let w: Vec<f64> = (0..k).map(|_| -rng.uniform().max(1e-300).ln()).collect();
        let total: f64 = w.iter().sum();
        let y: Vec<f64> = w.iter().map(|v| v / total * target).collect();
        let p = descend(project(&y, p_a, target), p_a);
        let v = adv_prob_objective(&p);
        if v < best_v {
            best = p;
            best_v = v;
        }
    }
    let on_bound = best.iter().zip(p_a).any(|(x, u)| (u - x).abs() <= 1e-12);
    Ok(ObjectiveMin {
        minimizer: best,
        value: best_v,
        caveat: on_bound.then_some(Caveat::BoundaryOptimum),
        symmetric_point: symmetric,
        symmetric_value,
        symmetric_residual,
        starts: MIN_STARTS,
    })
}

/// Objective `ηΦ⁻¹(p′ + 1 − p̃) − Φ⁻¹(p′)` for unequal branch noise.
pub fn asym_objective(p: f64, tilde_p: f64, eta: f64) -> f64 {
    let mut unused = false;
    eta * quantile(p + 1.0 - tilde_p, &mut unused) - quantile(p, &mut unused)
}

/// Feasible interval for [`asym_objective`], or `None` when empty.
pub fn asym_interval(left: BranchProbs, right: BranchProbs) -> Option<(f64, f64)> {
    let tp = tilde_p(&[left, right]).min(1.0);
    let lo = (tp - right.p_a).max(QUANTILE_CLAMP);
    let hi = left.p_a.min(tp - QUANTILE_CLAMP);
    (lo <= hi).then_some((lo, hi))
}

const ROOT_SCAN: usize = 256;

/// Radius when the branches carry different noise levels `σ_l`, `σ_r`.
///
/// With `η = σ_r/σ_l`, the adversary's best split minimizes
/// [`asym_objective`] over [`asym_interval`]; interior candidates solve
/// `Φ⁻¹(p′ + 1 − p̃)² − Φ⁻¹(p′)² = 2 ln(1/η)`. The budget is
/// `s = σ_l(Φ⁻¹(p_A^l) + ηΦ⁻¹(p_A^r) + v)` and the radius `s/√2`.
pub fn asym_variance_radius(
    left: BranchProbs,
    right: BranchProbs,
    sigma_l: f64,
    sigma_r: f64,
) -> Result<RadiusResult> {
    check_sigma(sigma_l)?;
    check_sigma(sigma_r)?;
    let tp = tilde_p(&[left, right]);
    if tp > 1.0 + SUM_TOLERANCE {
        return Err(RadiusError::TildeAboveOne(tp));
    }
    if tp <= 0.0 {
        return Err(RadiusError::TildeOutOfRange(tp));
    }
    let Some((lo, hi)) = asym_interval(left, right) else {
        return Ok(RadiusResult::not_certified(tp, sigma_l));
    };
    let tpc = tp.min(1.0);
    let eta = sigma_r / sigma_l;
    let v = |p: f64| asym_objective(p, tpc, eta);
    let condition = |p: f64| {
        let mut unused = false;
        let a = quantile(p + 1.0 - tpc, &mut unused);
        let b = quantile(p, &mut unused);
        a * a - b * b - 2.0 * (1.0 / eta).ln()
    };

    // Interior stationary points: scan for sign changes, then bisect.
    let mut roots = Vec::new();
    let step = (hi - lo) / ROOT_SCAN as f64;
    let mut a = lo;
    let mut fa = condition(a);
    for i in 1..=ROOT_SCAN {
        let b = if i == ROOT_SCAN { hi } else { lo + step * i as f64 };
        let fb = condition(b);
        if fa == 0.0 {
            roots.push(a);
        } else if fa * fb < 0.0 {
            let (mut x0, mut x1, mut f0) = (a, b, fa);
            for _ in 0..200 {
                let mid = 0.5 * (x0 + x1);
                let fm = condition(mid);
                if fm == 0.0 || (x1 - x0) <= f64::EPSILON * mid.abs() {
                    x0 = mid;
                    x1 = mid;
                    break;
                }
                if (fm < 0.0) == (f0 < 0.0) {
                    x0 = mid;
                    f0 = fm;
                } else {
                    x1 = mid;
                }
            }
            roots.push(0.5 * (x0 + x1));
        }
        a = b;
        fa = fb;
    }
    if fa == 0.0 {
        roots.push(hi);
    }

    let mut best = (f64::INFINITY, lo, true);
    for &r in &roots {
        let val = v(r);
        if val < best.0 {
            best = (val, r, false);
        }
    }
    for end in [lo, hi] {
        let val = v(end);
        if val < best.0 - 1e-12 {
            best = (val, end, true);
        }
    }
    let (vmin, at, endpoint) = best;
    let mut clamped = false;
    let s = sigma_l * (quantile(left.p_a, &mut clamped) + eta * quantile(right.p_a, &mut clamped) + vmin);
    clamped |= at <= QUANTILE_CLAMP || at + 1.0 - tpc >= 1.0 - QUANTILE_CLAMP;
    let r = s / std::f64::consts::SQRT_2;
    Ok(RadiusResult {
        radius: r.max(0.0),
        tilde_p: tp,
        certified: r >= 0.0,
        caveat: endpoint.then_some(Caveat::BoundaryOptimum),
        budget: Some(s),
        sigma: sigma_l,
        clamped,
    })
}
