//! Base classifiers queried by the certifier.
//!
//! Everything the engine needs from a model is a deterministic batch
//! classifier. In-process linear and nearest-centroid models double as
//! ground truth because their smoothed probabilities have closed forms.

mod external;
pub mod protocol;

use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;

use crate::partition::ResizePlan;
use crate::statfun;

pub use external::{Endpoint, ExternalOracle, ExternalOptions, Transport};
pub use protocol::{serve, serve_tcp};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("input dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("degenerate binary model: class rows are identical")]
    Degenerate,
    #[error("centroids {0} and {1} are identical")]
    DuplicateCentroids(usize, usize),
    #[error("ensemble members disagree on {0}")]
    Heterogeneous(&'static str),
    #[error("invalid oracle endpoint '{0}'")]
    InvalidEndpoint(String),
    #[error("oracle transport failure: {0}")]
    Transport(String),
    #[error("oracle handshake mismatch: expected {expected}, adapter declared {declared}")]
    HandshakeMismatch { expected: String, declared: String },
    #[error("malformed oracle response: {0}")]
    MalformedResponse(String),
    #[error("oracle did not answer within {0:?}")]
    Timeout(Duration),
    #[error("oracle reported an error: {0}")]
    Remote(String),
    #[error("failed to read model file: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, OracleError>;

/// A deterministic batch classifier.
///
/// `batch` holds `count` row-major vectors of length `input_dim()`.
pub trait ClassifierOracle: Send + Sync {
    fn num_classes(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn classify_batch(&self, batch: &[f64], count: usize) -> Result<Vec<usize>>;
}

/// Anything that turns a batch into per-class vote counts.
///
/// Every classifier is a counting oracle with one vote per sample; an
/// ensemble contributes one vote per member.
pub trait CountingOracle: Send + Sync {
    fn num_classes(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn votes_per_sample(&self) -> u64;
    /// Adds the batch's votes into `counts` (length `num_classes()`).
    fn count_batch(&self, batch: &[f64], count: usize, counts: &mut [u64]) -> Result<()>;
}

impl<T: ClassifierOracle + ?Sized> CountingOracle for T {
    fn num_classes(&self) -> usize {
        ClassifierOracle::num_classes(self)
    }
    fn input_dim(&self) -> usize {
        ClassifierOracle::input_dim(self)
    }
    fn votes_per_sample(&self) -> u64 {
        1
    }
    fn count_batch(&self, batch: &[f64], count: usize, counts: &mut [u64]) -> Result<()> {
        let labels = self.classify_batch(batch, count)?;
        tally(&labels, counts)
    }
}

fn tally(labels: &[usize], counts: &mut [u64]) -> Result<()> {
    for &l in labels {
        match counts.get_mut(l) {
            Some(c) => *c += 1,
            None => {
                return Err(OracleError::MalformedResponse(format!(
                    "label {l} outside [0, {})",
                    counts.len()
                )))
            }
        }
    }
    Ok(())
}

fn check_batch(batch: &[f64], count: usize, dim: usize) -> Result<()> {
    if batch.len() != count * dim {
        let got = batch.len().checked_div(count).unwrap_or(batch.len());
        return Err(OracleError::DimensionMismatch { expected: dim, got });
    }
    Ok(())
}

/// Index of the largest value; the smallest index wins ties.
pub fn argmax(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in values.into_iter().enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn parse_header(tokens: &mut std::str::SplitWhitespace<'_>) -> Result<(usize, usize)> {
    let mut next = |what: &str| -> Result<usize> {
        tokens
            .next()
            .ok_or_else(|| OracleError::InvalidModel(format!("missing {what}")))?
            .parse()
            .map_err(|e| OracleError::InvalidModel(format!("bad {what}: {e}")))
    };
    Ok((next("class count")?, next("dimension")?))
}

fn parse_floats(tokens: std::str::SplitWhitespace<'_>, expected: usize) -> Result<Vec<f64>> {
    let values = tokens
        .map(|t| {
            t.parse::<f64>()
                .map_err(|e| OracleError::InvalidModel(format!("bad number '{t}': {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    if values.len() != expected {
        return Err(OracleError::InvalidModel(format!(
            "expected {expected} values, found {}",
            values.len()
        )));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(OracleError::InvalidModel(format!("non-finite value {v}")));
    }
    Ok(values)
}

/// `argmax_k (w_k · x + b_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    classes: usize,
    dim: usize,
    /// Row-major `classes × dim`.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl LinearModel {
    pub fn new(weights: Vec<Vec<f64>>, bias: Vec<f64>) -> Result<Self> {
        let classes = weights.len();
        if classes < 2 {
            return Err(OracleError::InvalidModel("need at least two classes".into()));
        }
        if bias.len() != classes {
            return Err(OracleError::InvalidModel(format!(
                "{} bias terms for {classes} classes",
                bias.len()
            )));
        }
        let dim = weights[0].len();
        if dim == 0 || weights.iter().any(|r| r.len() != dim) {
            return Err(OracleError::InvalidModel("weight rows must share a positive length".into()));
        }
        let flat: Vec<f64> = weights.into_iter().flatten().collect();
        if flat.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(OracleError::InvalidModel("weights must be finite".into()));
        }
        Ok(Self {
            classes,
            dim,
            weights: flat,
            bias,
        })
    }

    /// Parses the text format: a `K D` header, then `K` rows of `D + 1`
    /// numbers with the bias last.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| OracleError::InvalidModel("empty model file".into()))?;
        let (k, d) = parse_header(&mut header.split_whitespace())?;
        let mut weights = Vec::with_capacity(k);
        let mut bias = Vec::with_capacity(k);
        for row in 0..k {
            let line = lines
                .next()
                .ok_or_else(|| OracleError::InvalidModel(format!("missing row {row}")))?;
            let mut vals = parse_floats(line.split_whitespace(), d + 1)?;
            bias.push(vals.pop().unwrap_or_default());
            weights.push(vals);
        }
        if lines.next().is_some() {
            return Err(OracleError::InvalidModel("trailing rows after the declared classes".into()));
        }
        Self::new(weights, bias)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Inverse of [`LinearModel::parse`], with shortest round-trip floats.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.classes, self.dim);
        for k in 0..self.classes {
            let row: Vec<String> = self
                .row(k)
                .iter()
                .chain(std::iter::once(&self.bias[k]))
                .map(|v| format!("{v:?}"))
                .collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn num_classes(&self) -> usize {
        self.classes
    }

    pub fn input_dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, class: usize) -> &[f64] {
        &self.weights[class * self.dim..(class + 1) * self.dim]
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        (0..self.classes).map(|k| dot(self.row(k), x) + self.bias[k]).collect()
    }

    pub fn classify(&self, x: &[f64]) -> usize {
        argmax((0..self.classes).map(|k| dot(self.row(k), x) + self.bias[k]))
    }

    /// `(w_0 - w_1, b_0 - b_1)` for a binary model.
    fn binary_difference(&self) -> Result<(Vec<f64>, f64)> {
        if self.classes != 2 {
            return Err(OracleError::InvalidModel(format!(
                "closed-form smoothed probability needs 2 classes, model has {}",
                self.classes
            )));
        }
        let dw: Vec<f64> = self.row(0).iter().zip(self.row(1)).map(|(a, b)| a - b).collect();
        if dw.iter().all(|&v| v == 0.0) {
            return Err(OracleError::Degenerate);
        }
        Ok((dw, self.bias[0] - self.bias[1]))
    }

    /// Exact probability that class 0 wins at `x + N(0, σ²I)`:
    /// `Φ(margin / (σ‖w₀ − w₁‖))`.
    pub fn smoothed_prob(&self, x: &[f64], sigma: f64) -> Result<f64> {
        if x.len() != self.dim {
            return Err(OracleError::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        let (dw, db) = self.binary_difference()?;
        let norm = dot(&dw, &dw).sqrt();
        let margin = dot(&dw, x) + db;
        Ok(statfun::phi(margin / (sigma * norm)))
    }

    /// The model seen through a linear resize: `x ↦ W·A(x) + b`.
    ///
    /// A noisy branch view is `A(x_sub + ε)`, so the pulled-back model lets
    /// [`LinearModel::smoothed_prob`] give the exact branch probability.
    pub fn pull_back(&self, plan: &ResizePlan, channels: usize) -> Result<Self> {
        let (sh, sw) = plan.src_shape();
        let (dh, dw) = plan.dst_shape();
        let src_dim = channels * sh * sw;
        if channels * dh * dw != self.dim {
            return Err(OracleError::DimensionMismatch {
                expected: self.dim,
                got: channels * dh * dw,
            });
        }
        let mut basis = vec![0.0; src_dim];
        let mut image = vec![0.0; self.dim];
        let mut weights = vec![vec![0.0; src_dim]; self.classes];
        for j in 0..src_dim {
            basis[j] = 1.0;
            plan.apply_into(&basis, channels, &mut image);
            basis[j] = 0.0;
            for (k, row) in weights.iter_mut().enumerate() {
                row[j] = dot(self.row(k), &image);
            }
        }
        Self::new(weights, self.bias.clone())
    }
}

impl ClassifierOracle for LinearModel {
    fn num_classes(&self) -> usize {
        self.classes
    }
    fn input_dim(&self) -> usize {
        self.dim
    }
    fn classify_batch(&self, batch: &[f64], count: usize) -> Result<Vec<usize>> {
        check_batch(batch, count, self.dim)?;
        Ok(batch.chunks_exact(self.dim).map(|x| self.classify(x)).collect())
    }
}

/// `argmin_k ‖x − c_k‖²`.
#[derive(Debug, Clone, PartialEq)]
pub struct CentroidModel {
    classes: usize,
    dim: usize,
    centroids: Vec<f64>,
}

impl CentroidModel {
    pub fn new(centroids: Vec<Vec<f64>>) -> Result<Self> {
        let classes = centroids.len();
        if classes < 2 {
            return Err(OracleError::InvalidModel("need at least two centroids".into()));
        }
        let dim = centroids[0].len();
        if dim == 0 || centroids.iter().any(|c| c.len() != dim) {
            return Err(OracleError::InvalidModel("centroids must share a positive length".into()));
        }
        if centroids.iter().flatten().any(|v| !v.is_finite()) {
            return Err(OracleError::InvalidModel("centroids must be finite".into()));
        }
        for i in 0..classes {
            for j in i + 1..classes {
                if centroids[i] == centroids[j] {
                    return Err(OracleError::DuplicateCentroids(i, j));
                }
            }
        }
        Ok(Self {
            classes,
            dim,
            centroids: centroids.into_iter().flatten().collect(),
        })
    }

    /// `K D` header followed by `K` rows of `D` numbers.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| OracleError::InvalidModel("empty centroid file".into()))?;
        let (k, d) = parse_header(&mut header.split_whitespace())?;
        let rows = (0..k)
            .map(|row| {
                let line = lines
                    .next()
                    .ok_or_else(|| OracleError::InvalidModel(format!("missing centroid {row}")))?;
                parse_floats(line.split_whitespace(), d)
            })
            .collect::<Result<Vec<_>>>()?;
        if lines.next().is_some() {
            return Err(OracleError::InvalidModel("trailing rows after the declared centroids".into()));
        }
        Self::new(rows)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.classes, self.dim);
        for k in 0..self.classes {
            let row: Vec<String> = self.centroid(k).iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn num_classes(&self) -> usize {
        self.classes
    }

    pub fn input_dim(&self) -> usize {
        self.dim
    }

    pub fn centroid(&self, class: usize) -> &[f64] {
        &self.centroids[class * self.dim..(class + 1) * self.dim]
    }

    pub fn classify(&self, x: &[f64]) -> usize {
        argmax((0..self.classes).map(|k| {
            -self
                .centroid(k)
                .iter()
                .zip(x)
                .map(|(c, v)| (v - c) * (v - c))
                .sum::<f64>()
        }))
    }

    /// The equivalent linear model `w_k = 2c_k`, `b_k = −‖c_k‖²`.
    pub fn to_linear(&self) -> LinearModel {
        let weights = (0..self.classes)
            .map(|k| self.centroid(k).iter().map(|c| 2.0 * c).collect())
            .collect();
        let bias = (0..self.classes)
            .map(|k| -dot(self.centroid(k), self.centroid(k)))
            .collect();
        LinearModel::new(weights, bias).expect("centroids are validated")
    }
}

impl ClassifierOracle for CentroidModel {
    fn num_classes(&self) -> usize {
        self.classes
    }
    fn input_dim(&self) -> usize {
        self.dim
    }
    fn classify_batch(&self, batch: &[f64], count: usize) -> Result<Vec<usize>> {
        check_batch(batch, count, self.dim)?;
        Ok(batch.chunks_exact(self.dim).map(|x| self.classify(x)).collect())
    }
}

/// Always answers the same class. Handy for closed-form certificates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantOracle {
    pub class: usize,
    pub classes: usize,
    pub dim: usize,
}

impl ClassifierOracle for ConstantOracle {
    fn num_classes(&self) -> usize {
        self.classes
    }
    fn input_dim(&self) -> usize {
        self.dim
    }
    fn classify_batch(&self, batch: &[f64], count: usize) -> Result<Vec<usize>> {
        check_batch(batch, count, self.dim)?;
        Ok(vec![self.class; count])
    }
}

/// Sums votes across members; each member votes once per sample.
#[derive(Clone)]
pub struct EnsembleOracle {
    members: Vec<Arc<dyn ClassifierOracle>>,
    classes: usize,
    dim: usize,
}

impl EnsembleOracle {
    pub fn new(members: Vec<Arc<dyn ClassifierOracle>>) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| OracleError::InvalidModel("ensemble needs at least one member".into()))?;
        let (classes, dim) = (first.num_classes(), first.input_dim());
        if members.iter().any(|m| m.num_classes() != classes) {
            return Err(OracleError::Heterogeneous("num_classes"));
        }
        if members.iter().any(|m| m.input_dim() != dim) {
            return Err(OracleError::Heterogeneous("input_dim"));
        }
        Ok(Self { members, classes, dim })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

impl CountingOracle for EnsembleOracle {
    fn num_classes(&self) -> usize {
        self.classes
    }
    fn input_dim(&self) -> usize {
        self.dim
    }
    fn votes_per_sample(&self) -> u64 {
        self.members.len() as u64
    }
    fn count_batch(&self, batch: &[f64], count: usize, counts: &mut [u64]) -> Result<()> {
        for m in &self.members {
            tally(&m.classify_batch(batch, count)?, counts)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition::Interpolation;
    use crate::stream::RandomStream;

    fn random_model(seed: u64, k: usize, d: usize) -> LinearModel {
        let mut s = RandomStream::new(seed, 0);
        let w = (0..k).map(|_| (0..d).map(|_| s.standard_normal()).collect()).collect();
        let b = (0..k).map(|_| s.standard_normal()).collect();
        LinearModel::new(w, b).unwrap()
    }

    #[test]
    fn identity_rows_pick_the_hot_coordinate() {
        let eye: Vec<Vec<f64>> = (0..4).map(|i| (0..4).map(|j| (i == j) as u8 as f64).collect()).collect();
        let m = LinearModel::new(eye, vec![0.0; 4]).unwrap();
        assert_eq!(m.classify(&[0.0, 0.0, 1.0, 0.0]), 2);
    }

    #[test]
    fn ties_go_to_the_smallest_class() {
        let m = LinearModel::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.0, 0.0]).unwrap();
        assert_eq!(m.classify(&[0.5, 0.5]), 0);
        assert_eq!(argmax([1.0, 3.0, 3.0]), 1);
    }

    #[test]
    fn linear_matches_direct_dot_products() {
        let m = random_model(3, 5, 7);
        let mut s = RandomStream::new(4, 0);
        let batch: Vec<f64> = (0..7 * 50).map(|_| s.standard_normal()).collect();
        let labels = m.classify_batch(&batch, 50).unwrap();
        for (x, &l) in batch.chunks(7).zip(&labels) {
            let mut best = (0, f64::NEG_INFINITY);
            for k in 0..5 {
                let mut v = m.bias()[k];
                for j in 0..7 {
                    v += m.row(k)[j] * x[j];
                }
                if v > best.1 {
                    best = (k, v);
                }
            }
            assert_eq!(l, best.0);
        }
        assert!(matches!(
            m.classify_batch(&batch[..13], 2),
            Err(OracleError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn text_round_trip_and_rejections() {
        let m = random_model(9, 3, 4);
        assert_eq!(LinearModel::parse(&m.to_text()).unwrap(), m);
        assert!(LinearModel::parse("2 2\n1 2 3\n").is_err());
        assert!(LinearModel::parse("1 2\n1 2 3\n").is_err());
        assert!(LinearModel::parse("2 2\n1 2 3\n4 5\n").is_err());
        assert!(LinearModel::parse("2 1\n1 nan\n1 2\n").is_err());
        let c = CentroidModel::new(vec![vec![0.1, 0.2], vec![0.3, 0.4]]).unwrap();
        assert_eq!(CentroidModel::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn smoothed_prob_closed_form() {
        let m = LinearModel::new(vec![vec![2.0, 0.0], vec![0.0, 0.0]], vec![0.0, 0.0]).unwrap();
        let sigma = 0.5;
        assert_eq!(m.smoothed_prob(&[0.0, 3.0], sigma).unwrap(), 0.5);
        // margin = σ‖Δw‖ = 1 at x0 = 0.5
        let p = m.smoothed_prob(&[0.5, 0.0], sigma).unwrap();
        assert!((p - 0.8413447460685429).abs() < 1e-15);
        assert_eq!(m.smoothed_prob(&[1e6, 0.0], sigma).unwrap(), 1.0);
        let same = LinearModel::new(vec![vec![1.0], vec![1.0]], vec![0.0, 1.0]).unwrap();
        assert!(matches!(same.smoothed_prob(&[0.0], 1.0), Err(OracleError::Degenerate)));
        assert!(random_model(1, 3, 2).smoothed_prob(&[0.0, 0.0], 1.0).is_err());
    }

    #[test]
    fn smoothed_prob_matches_monte_carlo() {
        let m = LinearModel::new(vec![vec![1.0, -1.0, 0.5], vec![0.0, 0.0, 0.0]], vec![0.1, 0.0]).unwrap();
        let x = [0.2, 0.1, 0.3];
        let sigma = 0.4;
        let p = m.smoothed_prob(&x, sigma).unwrap();
        let n = 1_000_000;
        let mut s = RandomStream::new(17, 0);
        let mut hits = 0u64;
        let mut v = [0.0; 3];
        for _ in 0..n {
            v.copy_from_slice(&x);
            s.perturb(&mut v, sigma);
            hits += (m.classify(&v) == 0) as u64;
        }
        let f = hits as f64 / n as f64;
        assert!((f - p).abs() <= 4.0 * (p * (1.0 - p) / n as f64).sqrt(), "{f} vs {p}");
    }

    #[test]
    fn centroid_rules() {
        let c = CentroidModel::new(vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(c.classify(&[1.0, 0.0]), 1);
        assert_eq!(c.classify(&[0.0, 1.0]), 2);
        assert_eq!(c.classify(&[0.5, 0.0]), 0);
        assert!(matches!(
            CentroidModel::new(vec![vec![1.0], vec![2.0], vec![1.0]]),
            Err(OracleError::DuplicateCentroids(0, 2))
        ));
    }

    #[test]
    fn two_centroids_equal_a_linear_rule() {
        let mut s = RandomStream::new(21, 0);
        let c0: Vec<f64> = (0..6).map(|_| s.uniform()).collect();
        let c1: Vec<f64> = (0..6).map(|_| s.uniform()).collect();
        let c = CentroidModel::new(vec![c0.clone(), c1.clone()]).unwrap();
        let w: Vec<f64> = c0.iter().zip(&c1).map(|(a, b)| 2.0 * (a - b)).collect();
        let b = dot(&c1, &c1) - dot(&c0, &c0);
        for _ in 0..1000 {
            let x: Vec<f64> = (0..6).map(|_| s.uniform()).collect();
            let lin = if dot(&w, &x) + b >= 0.0 { 0 } else { 1 };
            assert_eq!(c.classify(&x), lin);
            assert_eq!(c.to_linear().classify(&x), lin);
        }
    }

    #[test]
    fn ensemble_counts() {
        let zero: Arc<dyn ClassifierOracle> = Arc::new(ConstantOracle { class: 0, classes: 3, dim: 2 });
        let one: Arc<dyn ClassifierOracle> = Arc::new(ConstantOracle { class: 1, classes: 3, dim: 2 });
        let batch = vec![0.0; 20];

        let solo = EnsembleOracle::new(vec![zero.clone()]).unwrap();
        let mut a = vec![0; 3];
        let mut b = vec![0; 3];
        solo.count_batch(&batch, 10, &mut a).unwrap();
        zero.count_batch(&batch, 10, &mut b).unwrap();
        assert_eq!(a, b);

        let twice = EnsembleOracle::new(vec![zero.clone(), zero.clone()]).unwrap();
        let mut c = vec![0; 3];
        twice.count_batch(&batch, 10, &mut c).unwrap();
        assert_eq!(c, vec![20, 0, 0]);
        assert_eq!(twice.votes_per_sample(), 2);

        let mixed = EnsembleOracle::new(vec![zero, one]).unwrap();
        let mut d = vec![0; 3];
        mixed.count_batch(&batch, 10, &mut d).unwrap();
        assert_eq!(d, vec![10, 10, 0]);

        let odd: Arc<dyn ClassifierOracle> = Arc::new(ConstantOracle { class: 0, classes: 3, dim: 5 });
        let other: Arc<dyn ClassifierOracle> = Arc::new(ConstantOracle { class: 0, classes: 3, dim: 2 });
        assert!(matches!(
            EnsembleOracle::new(vec![other, odd]),
            Err(OracleError::Heterogeneous("input_dim"))
        ));
    }

    #[test]
    fn pull_back_reproduces_resized_scores() {
        let plan = ResizePlan::new((3, 2), (3, 4), Interpolation::Bilinear).unwrap();
        let full = random_model(31, 2, 2 * 3 * 4);
        let sub = full.pull_back(&plan, 2).unwrap();
        assert_eq!(sub.input_dim(), 12);
        let mut s = RandomStream::new(8, 0);
        for _ in 0..50 {
            let x: Vec<f64> = (0..12).map(|_| s.standard_normal()).collect();
            let mut up = vec![0.0; 24];
            plan.apply_into(&x, 2, &mut up);
            for (a, b) in full.scores(&up).iter().zip(sub.scores(&x)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
