//! Monte Carlo certification.
//!
//! Noise sample `i` of branch `b` in phase `φ` always comes from the stream
//! `(seed, φ, b, i)`, so counts do not depend on batch size or on how many
//! workers share the work.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::oracle::{CountingOracle, OracleError};
use crate::partition::{self, ImageTensor, Interpolation, PartitionError, PartitionIndex, ResizePlan};
use crate::radius::{self, BranchProbs, Caveat, RadiusError, RadiusResult};
use crate::statfun::{clopper_pearson_lower, ConfidenceLevel, StatError};
use crate::stream::{derive_seed, sample_stream_id, Branch, Phase, RandomStream};

/// Environment variable capping the worker count (0 = automatic).
pub const THREADS_ENV: &str = "SMOOTHCERT_THREADS";

#[derive(Debug, Error)]
pub enum CertifyError {
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    Stat(#[from] StatError),
    #[error(transparent)]
    Radius(#[from] RadiusError),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("oracle expects input_dim {expected}, certifier produces {got}")]
    OracleShape { expected: usize, got: usize },
    #[error("label {label} of sample {index} is outside the oracle's {classes} classes")]
    LabelOutOfRange { index: usize, label: usize, classes: usize },
    #[error("cannot build worker pool: {0}")]
    Workers(String),
}

pub type Result<T> = std::result::Result<T, CertifyError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Rs,
    Drs,
    DrsAsym,
}

impl FromStr for Mode {
    type Err = CertifyError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rs" => Ok(Self::Rs),
            "drs" => Ok(Self::Drs),
            "drs-asym" => Ok(Self::DrsAsym),
            other => Err(CertifyError::InvalidParams(format!(
                "unknown mode '{other}' (expected rs, drs or drs-asym)"
            ))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Rs => "rs",
            Self::Drs => "drs",
            Self::DrsAsym => "drs-asym",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertifyParams {
    /// Noise level; the left-branch level in asymmetric mode.
    pub sigma: f64,
    /// Right-branch noise level, used only in asymmetric mode.
    pub sigma_right: Option<f64>,
    pub n0: u64,
    pub n: u64,
    pub alpha: f64,
    pub seed: u64,
    /// Noise samples per oracle request.
    pub batch_size: usize,
    /// Worker threads; 0 uses the ambient pool.
    pub workers: usize,
    pub interpolation: Interpolation,
}

impl CertifyParams {
    pub const DEFAULT_N0: u64 = 100;
    pub const DEFAULT_N: u64 = 100_000;
    pub const DEFAULT_ALPHA: f64 = 0.001;
    pub const DEFAULT_BATCH: usize = 1000;

    pub fn new(sigma: f64) -> Self {
        Self {
            sigma,
            sigma_right: None,
            n0: Self::DEFAULT_N0,
            n: Self::DEFAULT_N,
            alpha: Self::DEFAULT_ALPHA,
            seed: 0,
            batch_size: Self::DEFAULT_BATCH,
            workers: 0,
            interpolation: Interpolation::Bilinear,
        }
    }

    fn validate(&self) -> Result<ConfidenceLevel> {
        let bad = |m: String| Err(CertifyError::InvalidParams(m));
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be > 0, got {}", self.sigma));
        }
        if let Some(s) = self.sigma_right {
            if !(s > 0.0 && s.is_finite()) {
                return bad(format!("sigma_right must be > 0, got {s}"));
            }
        }
        if self.n0 == 0 || self.n == 0 {
            return bad("n0 and n must be >= 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be >= 1".into());
        }
        Ok(ConfidenceLevel::new(self.alpha)?)
    }
}

/// Reads [`THREADS_ENV`]; unset or unparsable means automatic.
pub fn workers_from_env() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(0)
}

/// Runs `f` on a pool of `workers` threads (0 = ambient pool).
pub fn with_workers<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    #[cfg(feature = "parallel")]
    {
        if workers == 0 {
            return Ok(f());
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| CertifyError::Workers(e.to_string()))?;
        Ok(pool.install(f))
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = workers;
        Ok(f())
    }
}

/// Per-class votes for both branches.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SmoothedCounts {
    pub counts_left: Vec<u64>,
    pub counts_right: Vec<u64>,
    /// Votes per branch: noise samples times votes per sample.
    pub trials: u64,
}

impl SmoothedCounts {
    pub fn summed(&self) -> Vec<u64> {
        self.counts_left.iter().zip(&self.counts_right).map(|(a, b)| a + b).collect()
    }
}

/// One noisy view generator: a (sub-)image, its noise level and the resize
/// that brings it to the oracle's resolution.
struct NoisyView<'a> {
    x: &'a ImageTensor,
    plan: &'a ResizePlan,
    sigma: f64,
    branch: Branch,
}

impl NoisyView<'_> {
    fn out_dim(&self) -> usize {
        let (h, w) = self.plan.dst_shape();
        self.x.channels() * h * w
    }

    fn fill_batch(&self, seed: u64, phase: Phase, range: std::ops::Range<u64>, noisy: &mut [f64], out: &mut Vec<f64>) {
        let d = self.out_dim();
        out.clear();
        out.resize((range.end - range.start) as usize * d, 0.0);
        for (row, i) in out.chunks_exact_mut(d).zip(range) {
            noisy.copy_from_slice(self.x.data());
            RandomStream::new(seed, sample_stream_id(phase, self.branch, i)).perturb(noisy, self.sigma);
            self.plan.apply_into(noisy, self.x.channels(), row);
        }
    }
}

fn check_oracle<O: CountingOracle + ?Sized>(oracle: &O, view: &NoisyView<'_>) -> Result<()> {
    if oracle.input_dim() != view.out_dim() {
        return Err(CertifyError::OracleShape {
            expected: oracle.input_dim(),
            got: view.out_dim(),
        });
    }
    if oracle.num_classes() < 2 {
        return Err(CertifyError::InvalidParams("oracle must have at least two classes".into()));
    }
    Ok(())
}

/// Votes of `oracle` on `samples` noisy views, in fixed-size batches.
fn sample_branch<O: CountingOracle + ?Sized>(
    oracle: &O,
    view: &NoisyView<'_>,
    seed: u64,
    phase: Phase,
    samples: u64,
    batch_size: usize,
) -> Result<Vec<u64>> {
    let classes = oracle.num_classes();
    let batches = samples.div_ceil(batch_size as u64);
    let run = |b: u64| -> Result<Vec<u64>> {
        let start = b * batch_size as u64;
        let end = (start + batch_size as u64).min(samples);
        let mut noisy = vec![0.0; view.x.dim()];
        let mut buf = Vec::new();
        view.fill_batch(seed, phase, start..end, &mut noisy, &mut buf);
        let mut counts = vec![0u64; classes];
        oracle.count_batch(&buf, (end - start) as usize, &mut counts)?;
        Ok(counts)
    };
    let add = |mut a: Vec<u64>, b: Vec<u64>| {
        a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        a
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..batches)
            .into_par_iter()
            .map(run)
            .try_reduce(|| vec![0u64; classes], |a, b| Ok(add(a, b)))
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..batches).try_fold(vec![0u64; classes], |acc, b| Ok(add(acc, run(b)?)))
    }
}

/// Draws `samples` noisy copies of each sub-image (noise first, then
/// resize with `plan`) and counts both oracles' votes.
#[allow(clippy::too_many_arguments)]
pub fn sample_under_noise<O: CountingOracle + ?Sized>(
    oracle_l: &O,
    oracle_r: &O,
    x_l: &ImageTensor,
    x_r: &ImageTensor,
    plan: &ResizePlan,
    samples: u64,
    sigma_l: f64,
    sigma_r: f64,
    seed: u64,
    phase: Phase,
    batch_size: usize,
) -> Result<SmoothedCounts> {
    if samples == 0 || batch_size == 0 {
        return Err(CertifyError::InvalidParams("samples and batch size must be >= 1".into()));
    }
    if oracle_l.num_classes() != oracle_r.num_classes() || oracle_l.votes_per_sample() != oracle_r.votes_per_sample() {
        return Err(CertifyError::InvalidParams(
            "left and right oracles must agree on classes and votes per sample".into(),
        ));
    }
    let left = NoisyView { x: x_l, plan, sigma: sigma_l, branch: Branch::Left };
    let right = NoisyView { x: x_r, plan, sigma: sigma_r, branch: Branch::Right };
    check_oracle(oracle_l, &left)?;
    check_oracle(oracle_r, &right)?;
    Ok(SmoothedCounts {
        counts_left: sample_branch(oracle_l, &left, seed, phase, samples, batch_size)?,
        counts_right: sample_branch(oracle_r, &right, seed, phase, samples, batch_size)?,
        trials: samples * oracle_l.votes_per_sample(),
    })
}

/// Top class and runner-up; the smallest index wins ties.
pub fn top_two(counts: &[u64]) -> (usize, usize) {
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    (order[0], order.get(1).copied().unwrap_or(order[0]))
}

/// Algorithm output: a prediction with a certified radius, or an abstention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub mode: Mode,
    /// `None` means abstain.
    pub prediction: Option<usize>,
    /// Class picked in the selection phase, kept even on abstention.
    pub top_class: usize,
    /// Selection-phase runner-up; diagnostic only.
    pub runner_up: usize,
    /// Certified radius; 0 on abstention.
    pub radius: f64,
    pub p_lower_left: f64,
    /// Absent in single-input mode.
    pub p_lower_right: Option<f64>,
    pub sigma: f64,
    pub sigma_right: Option<f64>,
    pub n0: u64,
    pub n: u64,
    pub alpha: f64,
    pub seed: u64,
    /// Confidence of each one-sided bound, `1 − α`.
    pub confidence_per_branch: f64,
    /// Union-bound confidence over all bounds (`1 − 2α` with two branches).
    pub confidence_joint: f64,
    pub caveat: Option<Caveat>,
    /// A quantile argument was clamped while computing the radius.
    pub clamped: bool,
    /// Input was padded to even height/width before partitioning.
    pub padded: bool,
    pub estimation_counts: SmoothedCounts,
}

impl Certificate {
    pub fn abstained(&self) -> bool {
        self.prediction.is_none()
    }
}

fn build_plan(idx: &PartitionIndex, params: &CertifyParams) -> Result<ResizePlan> {
    Ok(ResizePlan::new(idx.sub_shape(), idx.padded_shape(), params.interpolation)?)
}

fn certify_pair<O: CountingOracle + ?Sized>(
    mode: Mode,
    oracle_l: &O,
    oracle_r: &O,
    x: &ImageTensor,
    idx: &PartitionIndex,
    params: &CertifyParams,
) -> Result<Certificate> {
    let alpha = params.validate()?;
    let sigma_r = match mode {
        Mode::DrsAsym => params
            .sigma_right
            .ok_or_else(|| CertifyError::InvalidParams("asymmetric mode needs sigma_right".into()))?,
        _ => params.sigma,
    };
    let pair = partition::downsample(x, idx)?;
    let plan = build_plan(idx, params)?;
    let sample = |samples: u64, phase: Phase| {
        sample_under_noise(
            oracle_l,
            oracle_r,
            &pair.left,
            &pair.right,
            &plan,
            samples,
            params.sigma,
            sigma_r,
            params.seed,
            phase,
            params.batch_size,
        )
    };
    let (selection, estimation) = with_workers(params.workers, || {
        let s = sample(params.n0, Phase::Selection)?;
        let e = sample(params.n, Phase::Estimation)?;
        Ok::<_, CertifyError>((s, e))
    })??;
    let (c_a, c_b) = top_two(&selection.summed());
    let p_l = clopper_pearson_lower(estimation.counts_left[c_a], estimation.trials, alpha)?.value();
    let p_r = clopper_pearson_lower(estimation.counts_right[c_a], estimation.trials, alpha)?.value();

    let result = if p_l + p_r >= 1.0 {
        Some(match mode {
            Mode::DrsAsym => radius::asym_variance_radius(
                BranchProbs::worst_case(p_l)?,
                BranchProbs::worst_case(p_r)?,
                params.sigma,
                sigma_r,
            )?,
            _ => radius::drs_radius_lower(p_l, p_r, params.sigma)?,
        })
    } else {
        None
    };
    Ok(finish(
        mode,
        result,
        c_a,
        c_b,
        p_l,
        Some(p_r),
        params,
        (mode == Mode::DrsAsym).then_some(sigma_r),
        idx.is_padded(),
        estimation,
    ))
}

#[allow(clippy::too_many_arguments)]
fn finish(
    mode: Mode,
    result: Option<RadiusResult>,
    c_a: usize,
    c_b: usize,
    p_l: f64,
    p_r: Option<f64>,
    params: &CertifyParams,
    sigma_right: Option<f64>,
    padded: bool,
    estimation: SmoothedCounts,
) -> Certificate {
    let certified = result.filter(|r| r.certified);
    let bounds = if p_r.is_some() { 2.0 } else { 1.0 };
    Certificate {
        mode,
        prediction: certified.map(|_| c_a),
        top_class: c_a,
        runner_up: c_b,
        radius: certified.map_or(0.0, |r| r.radius),
        p_lower_left: p_l,
        p_lower_right: p_r,
        sigma: params.sigma,
        sigma_right,
        n0: params.n0,
        n: params.n,
        alpha: params.alpha,
        seed: params.seed,
        confidence_per_branch: 1.0 - params.alpha,
        confidence_joint: 1.0 - bounds * params.alpha,
        caveat: certified.and_then(|r| r.caveat),
        clamped: certified.is_some_and(|r| r.clamped),
        padded,
        estimation_counts: estimation,
    }
}

/// Dual smoothing certificate for `x` (both branches share `params.sigma`).
///
/// Selection votes from both branches pick `ĉ_A`; fresh estimation samples
/// give one-sided Clopper-Pearson bounds `p̲^l`, `p̲^r` at `1 − α` each, and the
/// certificate is issued iff `p̲^l + p̲^r ≥ 1`.
pub fn certify_drs<O: CountingOracle + ?Sized>(
    oracle_l: &O,
    oracle_r: &O,
    x: &ImageTensor,
    idx: &PartitionIndex,
    params: &CertifyParams,
) -> Result<Certificate> {
    certify_pair(Mode::Drs, oracle_l, oracle_r, x, idx, params)
}

/// Dual smoothing with `params.sigma` on the left branch and
/// `params.sigma_right` on the right.
pub fn certify_drs_asym<O: CountingOracle + ?Sized>(
    oracle_l: &O,
    oracle_r: &O,
    x: &ImageTensor,
    idx: &PartitionIndex,
    params: &CertifyParams,
) -> Result<Certificate> {
    certify_pair(Mode::DrsAsym, oracle_l, oracle_r, x, idx, params)
}

fn certify_single<O: CountingOracle + ?Sized>(
    oracle: &O,
    view: &NoisyView<'_>,
    params: &CertifyParams,
    padded: bool,
) -> Result<Certificate> {
    let alpha = params.validate()?;
    check_oracle(oracle, view)?;
    let (selection, estimation) = with_workers(params.workers, || {
        let s = sample_branch(oracle, view, params.seed, Phase::Selection, params.n0, params.batch_size)?;
        let e = sample_branch(oracle, view, params.seed, Phase::Estimation, params.n, params.batch_size)?;
        Ok::<_, CertifyError>((s, e))
    })??;
    let trials = params.n * oracle.votes_per_sample();
    let (c_a, c_b) = top_two(&selection);
    let p = clopper_pearson_lower(estimation[c_a], trials, alpha)?.value();
    let result = radius::rs_radius_lower(p, params.sigma)?;
    let counts = SmoothedCounts {
        counts_left: estimation,
        counts_right: Vec::new(),
        trials,
    };
    Ok(finish(Mode::Rs, Some(result), c_a, c_b, p, None, params, None, padded, counts))
}

/// Classic smoothing certificate on the full-resolution input.
pub fn certify_rs<O: CountingOracle + ?Sized>(oracle: &O, x: &ImageTensor, params: &CertifyParams) -> Result<Certificate> {
    let plan = ResizePlan::new((x.height(), x.width()), (x.height(), x.width()), params.interpolation)?;
    let view = NoisyView {
        x,
        plan: &plan,
        sigma: params.sigma,
        branch: Branch::Full,
    };
    certify_single(oracle, &view, params, false)
}

/// Classic smoothing of one dual branch, drawing exactly the noise that
/// [`certify_drs`] draws for that branch.
pub fn certify_rs_branch<O: CountingOracle + ?Sized>(
    oracle: &O,
    x: &ImageTensor,
    idx: &PartitionIndex,
    branch: Branch,
    params: &CertifyParams,
) -> Result<Certificate> {
    let pair = partition::downsample(x, idx)?;
    let plan = build_plan(idx, params)?;
    let sub = match branch {
        Branch::Left => &pair.left,
        Branch::Right => &pair.right,
        Branch::Full => {
            return Err(CertifyError::InvalidParams("certify_rs_branch needs the left or right branch".into()))
        }
    };
    let view = NoisyView {
        x: sub,
        plan: &plan,
        sigma: params.sigma,
        branch,
    };
    certify_single(oracle, &view, params, idx.is_padded())
}

/// Oracles for each certification mode.
#[derive(Clone, Copy)]
pub enum OracleSet<'a> {
    Rs(&'a dyn CountingOracle),
    Drs {
        left: &'a dyn CountingOracle,
        right: &'a dyn CountingOracle,
    },
    DrsAsym {
        left: &'a dyn CountingOracle,
        right: &'a dyn CountingOracle,
    },
}

impl OracleSet<'_> {
    pub fn mode(&self) -> Mode {
        match self {
            Self::Rs(_) => Mode::Rs,
            Self::Drs { .. } => Mode::Drs,
            Self::DrsAsym { .. } => Mode::DrsAsym,
        }
    }

    fn classes(&self) -> usize {
        match self {
            Self::Rs(o) => o.num_classes(),
            Self::Drs { left, .. } | Self::DrsAsym { left, .. } => left.num_classes(),
        }
    }
}

/// One evaluated dataset item.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluatedSample {
    pub index: usize,
    pub label: usize,
    pub certificate: Certificate,
    /// Wall-clock milliseconds, when timing was requested.
    pub wall_ms: Option<f64>,
}

impl EvaluatedSample {
    pub fn correct(&self) -> bool {
        self.certificate.prediction == Some(self.label)
    }
}

/// Certified accuracy at each grid radius: the fraction of samples that are
/// correct with radius strictly above `r`.
pub fn certified_accuracy(samples: &[EvaluatedSample], grid: &[f64]) -> Vec<(f64, f64)> {
    grid.iter()
        .map(|&r| {
            let hits = samples.iter().filter(|s| s.correct() && s.certificate.radius > r).count();
            (r, if samples.is_empty() { 0.0 } else { hits as f64 / samples.len() as f64 })
        })
        .collect()
}

/// Mean certified radius over correctly classified samples (0 when none).
pub fn average_certified_radius(samples: &[EvaluatedSample]) -> f64 {
    let correct: Vec<f64> = samples.iter().filter(|s| s.correct()).map(|s| s.certificate.radius).collect();
    if correct.is_empty() {
        0.0
    } else {
        correct.iter().sum::<f64>() / correct.len() as f64
    }
}

pub fn abstain_rate(samples: &[EvaluatedSample]) -> f64 {
    if samples.is_empty() {
        0.0
    } else {
        samples.iter().filter(|s| s.certificate.abstained()).count() as f64 / samples.len() as f64
    }
}

/// Certifies every `stride`-th item. Item `i` uses seed
/// `derive_seed(params.seed, i)`.
pub fn evaluate_dataset(
    oracles: OracleSet<'_>,
    dataset: &Dataset,
    params: &CertifyParams,
    stride: usize,
    timing: bool,
) -> Result<Vec<EvaluatedSample>> {
    if stride == 0 {
        return Err(CertifyError::InvalidParams("stride must be >= 1".into()));
    }
    if dataset.is_empty() {
        return Err(CertifyError::InvalidParams("dataset is empty".into()));
    }
    params.validate()?;
    let classes = oracles.classes();
    for (index, &label) in dataset.labels().iter().enumerate() {
        if label as usize >= classes {
            return Err(CertifyError::LabelOutOfRange {
                index,
                label: label as usize,
                classes,
            });
        }
    }
    let (_, h, w) = dataset.shape();
    let idx = partition::make_diagonal_partition(h, w)?;
    let pool_params = CertifyParams { workers: 0, ..*params };
    with_workers(params.workers, || {
        (0..dataset.len())
            .step_by(stride)
            .map(|index| {
                let x = dataset.image(index)?;
                let p = CertifyParams {
                    seed: derive_seed(params.seed, index as u64),
                    ..pool_params
                };
                let start = Instant::now();
                let certificate = match oracles {
                    OracleSet::Rs(o) => certify_rs(o, &x, &p)?,
                    OracleSet::Drs { left, right } => certify_drs(left, right, &x, &idx, &p)?,
                    OracleSet::DrsAsym { left, right } => certify_drs_asym(left, right, &x, &idx, &p)?,
                };
                let wall_ms = timing.then(|| start.elapsed().as_secs_f64() * 1e3);
                Ok(EvaluatedSample {
                    index,
                    label: dataset.labels()[index] as usize,
                    certificate,
                    wall_ms,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{ClassifierOracle, ConstantOracle, LinearModel};
    use crate::partition::make_diagonal_partition;
    use crate::statfun::normal_quantile;

    fn image(seed: u64) -> ImageTensor {
        let mut s = RandomStream::new(seed, 0);
        ImageTensor::new(1, 4, 8, (0..32).map(|_| s.uniform()).collect()).unwrap()
    }

    fn small(sigma: f64) -> CertifyParams {
        CertifyParams {
            n0: 50,
            n: 2000,
            batch_size: 128,
            seed: 42,
            ..CertifyParams::new(sigma)
        }
    }

    #[test]
    fn constant_oracle_counts() {
        let x = image(1);
        let idx = make_diagonal_partition(4, 8).unwrap();
        let pair = partition::downsample(&x, &idx).unwrap();
        let plan = ResizePlan::new(idx.sub_shape(), idx.padded_shape(), Interpolation::Bilinear).unwrap();
        let o = ConstantOracle { class: 3, classes: 5, dim: 32 };
        let c = sample_under_noise(&o, &o, &pair.left, &pair.right, &plan, 777, 0.5, 0.5, 1, Phase::Selection, 100).unwrap();
        assert_eq!(c.counts_left, vec![0, 0, 0, 777, 0]);
        assert_eq!(c.counts_right, vec![0, 0, 0, 777, 0]);
        let one = sample_under_noise(&o, &o, &pair.left, &pair.right, &plan, 1, 0.5, 0.5, 1, Phase::Selection, 100).unwrap();
        assert_eq!(one.counts_left.iter().sum::<u64>(), 1);
        assert_eq!(one.trials, 1);
    }

    #[test]
    fn counts_do_not_depend_on_batch_size() {
        let x = image(2);
        let idx = make_diagonal_partition(4, 8).unwrap();
        let pair = partition::downsample(&x, &idx).unwrap();
        let plan = ResizePlan::new(idx.sub_shape(), idx.padded_shape(), Interpolation::Bilinear).unwrap();
        let mut s = RandomStream::new(3, 0);
        let w = (0..3).map(|_| (0..32).map(|_| s.standard_normal()).collect()).collect();
        let m = LinearModel::new(w, vec![0.0; 3]).unwrap();
        let go = |b| sample_under_noise(&m, &m, &pair.left, &pair.right, &plan, 1000, 0.3, 0.3, 9, Phase::Estimation, b).unwrap();
        let a = go(1000);
        assert_eq!(a, go(7));
        assert_eq!(a, go(1));
    }

    #[test]
    fn constant_oracle_closed_form_certificates() {
        let x = image(4);
        let idx = make_diagonal_partition(4, 8).unwrap();
        let o = ConstantOracle { class: 2, classes: 3, dim: 32 };
        let p = small(0.5);
        let bound = p.alpha.powf(1.0 / p.n as f64);
        let d = certify_drs(&o, &o, &x, &idx, &p).unwrap();
        assert_eq!(d.prediction, Some(2));
        assert!((d.p_lower_left - bound).abs() < 1e-12);
        assert!((d.p_lower_right.unwrap() - bound).abs() < 1e-12);
        let want = 0.5 * std::f64::consts::SQRT_2 * normal_quantile(bound).unwrap();
        assert!((d.radius - want).abs() < 1e-10);
        assert!((d.confidence_joint - (1.0 - 2.0 * p.alpha)).abs() < 1e-15);

        let r = certify_rs(&o, &x, &p).unwrap();
        assert!((r.radius - 0.5 * normal_quantile(bound).unwrap()).abs() < 1e-10);
        assert_eq!(r.p_lower_right, None);
        assert_eq!(r.estimation_counts.trials, p.n);
    }

    /// Class 0 if pixel 0 exceeds ½, else class 1 if pixel 2 does, else 2.
    struct Threshold;

    impl ClassifierOracle for Threshold {
        fn num_classes(&self) -> usize {
            3
        }
        fn input_dim(&self) -> usize {
            4
        }
        fn classify_batch(&self, batch: &[f64], _count: usize) -> crate::oracle::Result<Vec<usize>> {
            Ok(batch
                .chunks(4)
                .map(|v| if v[0] > 0.5 { 0 } else if v[2] > 0.5 { 1 } else { 2 })
                .collect())
        }
    }

    #[test]
    fn weak_branches_abstain() {
        // Class 0 holds 0.6 on the left branch and 0.3 on the right; the
        // other classes split the rest evenly, so class 0 is selected but
        // its bounds sum below 1.
        let sigma = 0.5;
        let a = 0.5 + sigma * normal_quantile(0.6).unwrap();
        let b = 0.5 + sigma * normal_quantile(0.3).unwrap();
        let x = ImageTensor::new(1, 2, 2, vec![a, b, 0.5, 0.5]).unwrap();
        let idx = make_diagonal_partition(2, 2).unwrap();
        let p = CertifyParams { n: 20_000, ..small(sigma) };
        let c = certify_drs(&Threshold, &Threshold, &x, &idx, &p).unwrap();
        assert_eq!(c.top_class, 0);
        assert!(c.abstained());
        assert_eq!(c.radius, 0.0);
        assert!(c.p_lower_left + c.p_lower_right.unwrap() < 1.0);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let x = image(5);
        let idx = make_diagonal_partition(4, 8).unwrap();
        let o = ConstantOracle { class: 0, classes: 2, dim: 16 };
        assert!(matches!(
            certify_drs(&o, &o, &x, &idx, &small(0.25)),
            Err(CertifyError::OracleShape { expected: 16, got: 32 })
        ));
        let bad = CertifyParams { n: 0, ..small(0.25) };
        let o = ConstantOracle { class: 0, classes: 2, dim: 32 };
        assert!(matches!(certify_rs(&o, &x, &bad), Err(CertifyError::InvalidParams(_))));
    }

    #[test]
    fn asym_needs_sigma_right() {
        let x = image(6);
        let idx = make_diagonal_partition(4, 8).unwrap();
        let o = ConstantOracle { class: 1, classes: 2, dim: 32 };
        assert!(certify_drs_asym(&o, &o, &x, &idx, &small(0.25)).is_err());
        let p = CertifyParams { sigma_right: Some(0.5), ..small(0.25) };
        let c = certify_drs_asym(&o, &o, &x, &idx, &p).unwrap();
        assert_eq!(c.prediction, Some(1));
        assert_eq!(c.sigma_right, Some(0.5));
        let bound = p.alpha.powf(1.0 / p.n as f64);
        let want = radius::asym_variance_radius(
            BranchProbs::worst_case(bound).unwrap(),
            BranchProbs::worst_case(bound).unwrap(),
            0.25,
            0.5,
        )
        .unwrap();
        assert!((c.radius - want.radius).abs() < 1e-12);
    }

    #[test]
    fn top_two_breaks_ties_low() {
        assert_eq!(top_two(&[5, 9, 9, 1]), (1, 2));
        assert_eq!(top_two(&[0, 0]), (0, 1));
    }

    #[test]
    fn selection_and_estimation_use_fresh_noise() {
        let x = image(7);
        let view_plan = ResizePlan::new((4, 8), (4, 8), Interpolation::Bilinear).unwrap();
        let view = NoisyView {
            x: &x,
            plan: &view_plan,
            sigma: 1.0,
            branch: Branch::Full,
        };
        let mut noisy = vec![0.0; 32];
        let (mut a, mut b) = (Vec::new(), Vec::new());
        view.fill_batch(1, Phase::Selection, 0..4, &mut noisy, &mut a);
        view.fill_batch(1, Phase::Estimation, 0..4, &mut noisy, &mut b);
        assert!(a.iter().zip(&b).all(|(u, v)| u != v));
    }

    #[test]
    fn accuracy_threshold_is_strict() {
        let base = {
            let o = ConstantOracle { class: 0, classes: 2, dim: 32 };
            certify_rs(&o, &image(8), &small(0.25)).unwrap()
        };
        let mk = |radius: f64, prediction: Option<usize>| EvaluatedSample {
            index: 0,
            label: 0,
            certificate: Certificate {
                radius,
                prediction,
                ..base.clone()
            },
            wall_ms: None,
        };
        let all = vec![mk(0.6, Some(0)), mk(0.6, Some(0))];
        let acc = certified_accuracy(&all, &[0.25, 0.5, 0.75]);
        assert_eq!(acc.iter().map(|a| a.1).collect::<Vec<_>>(), vec![1.0, 1.0, 0.0]);
        assert!((average_certified_radius(&all) - 0.6).abs() < 1e-15);
        let none = vec![mk(0.0, None), mk(0.0, None)];
        assert!(certified_accuracy(&none, &[0.0, 0.5]).iter().all(|a| a.1 == 0.0));
        assert_eq!(average_certified_radius(&none), 0.0);
        assert_eq!(abstain_rate(&none), 1.0);
    }

    #[test]
    fn oracle_counts_are_deterministic_across_calls() {
        let m = LinearModel::new(vec![vec![1.0; 32], vec![0.0; 32]], vec![-16.0, 0.0]).unwrap();
        let x = image(9);
        let a = certify_rs(&m, &x, &small(0.5)).unwrap();
        let b = certify_rs(&m, &x, &small(0.5)).unwrap();
        assert_eq!(a, b);
        assert_eq!(ClassifierOracle::num_classes(&m), 2);
    }
}
