//! Certificate CSV, summary JSON and upper-bound curves.

use std::fmt;
use std::io::{self, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::de::{MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::certify::{abstain_rate, average_certified_radius, certified_accuracy, CertifyParams, EvaluatedSample, Mode};
use crate::partition::Interpolation;
use crate::radius::{self, RadiusError};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid {what} '{value}': {reason}")]
    Spec {
        what: &'static str,
        value: String,
        reason: String,
    },
    #[error(transparent)]
    Radius(#[from] RadiusError),
}

pub type Result<T> = std::result::Result<T, ReportError>;

pub const CSV_HEADER: [&str; 13] = [
    "index",
    "label",
    "prediction",
    "abstain",
    "radius",
    "p_lower_left",
    "p_lower_right",
    "sigma",
    "n0",
    "n",
    "alpha",
    "seed",
    "wall_ms",
];

/// One line of the certificate CSV. `prediction` and `p_lower_right` are
/// empty when absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateRow {
    pub index: usize,
    pub label: usize,
    pub prediction: Option<usize>,
    pub abstain: bool,
    pub radius: f64,
    pub p_lower_left: f64,
    pub p_lower_right: Option<f64>,
    pub sigma: f64,
    pub n0: u64,
    pub n: u64,
    pub alpha: f64,
    pub seed: u64,
    pub wall_ms: f64,
}

impl From<&EvaluatedSample> for CertificateRow {
    fn from(s: &EvaluatedSample) -> Self {
        let c = &s.certificate;
        Self {
            index: s.index,
            label: s.label,
            prediction: c.prediction,
            abstain: c.abstained(),
            radius: c.radius,
            p_lower_left: c.p_lower_left,
            p_lower_right: c.p_lower_right,
            sigma: c.sigma,
            n0: c.n0,
            n: c.n,
            alpha: c.alpha,
            seed: c.seed,
            wall_ms: s.wall_ms.unwrap_or(0.0),
        }
    }
}

pub fn write_certificates<W: Write>(rows: &[CertificateRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_certificates<R: Read>(input: R) -> Result<Vec<CertificateRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(ReportError::Spec {
            what: "certificate header",
            value: header.iter().collect::<Vec<_>>().join(","),
            reason: format!("expected {}", CSV_HEADER.join(",")),
        });
    }
    Ok(r.deserialize().collect::<std::result::Result<Vec<_>, _>>()?)
}

/// Radius → fraction pairs, serialized as a JSON object in grid order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AccuracyCurve(pub Vec<(f64, f64)>);

impl Serialize for AccuracyCurve {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(Some(self.0.len()))?;
        for (r, a) in &self.0 {
            m.serialize_entry(&format!("{r}"), a)?;
        }
        m.end()
    }
}

impl<'de> Deserialize<'de> for AccuracyCurve {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = AccuracyCurve;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a map from radius to accuracy")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> std::result::Result<Self::Value, A::Error> {
                let mut out = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, f64>()? {
                    let r = k.parse().map_err(serde::de::Error::custom)?;
                    out.push((r, v));
                }
                Ok(AccuracyCurve(out))
            }
        }
        d.deserialize_map(V)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryParams {
    pub mode: Mode,
    pub sigma: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sigma_right: Option<f64>,
    pub n0: u64,
    pub n: u64,
    pub alpha: f64,
    pub seed: u64,
    pub stride: usize,
    pub interpolation: Interpolation,
    pub radius_grid: Vec<f64>,
    /// Confidence of each one-sided bound.
    pub confidence_per_branch: f64,
    /// Union-bound confidence over both branches.
    pub confidence_joint: f64,
    /// Radii refer to the edge-padded input when true.
    pub padded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub total_ms: f64,
    pub mean_ms_per_sample: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub certified_accuracy: AccuracyCurve,
    pub acr: f64,
    pub abstain_rate: f64,
    pub count: usize,
    pub params: SummaryParams,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub timing: Option<Timing>,
}

pub fn summarize(
    samples: &[EvaluatedSample],
    params: &CertifyParams,
    mode: Mode,
    grid: &[f64],
    stride: usize,
    padded: bool,
) -> Summary {
    let timing = if !samples.is_empty() && samples.iter().all(|s| s.wall_ms.is_some()) {
        let total: f64 = samples.iter().filter_map(|s| s.wall_ms).sum();
        Some(Timing {
            total_ms: total,
            mean_ms_per_sample: total / samples.len() as f64,
        })
    } else {
        None
    };
    let bounds = if mode == Mode::Rs { 1.0 } else { 2.0 };
    Summary {
        certified_accuracy: AccuracyCurve(certified_accuracy(samples, grid)),
        acr: average_certified_radius(samples),
        abstain_rate: abstain_rate(samples),
        count: samples.len(),
        params: SummaryParams {
            mode,
            sigma: params.sigma,
            sigma_right: if mode == Mode::DrsAsym { params.sigma_right } else { None },
            n0: params.n0,
            n: params.n,
            alpha: params.alpha,
            seed: params.seed,
            stride,
            interpolation: params.interpolation,
            radius_grid: grid.to_vec(),
            confidence_per_branch: 1.0 - params.alpha,
            confidence_joint: 1.0 - bounds * params.alpha,
            padded: padded && mode != Mode::Rs,
        },
        timing,
    }
}

/// Writes the CSV to `csv_path` and the pretty-printed summary to `json_path`.
pub fn write_report(rows: &[CertificateRow], summary: &Summary, csv_path: &Path, json_path: &Path) -> Result<()> {
    let mut csv_buf = Vec::new();
    write_certificates(rows, &mut csv_buf)?;
    std::fs::write(csv_path, csv_buf)?;
    let mut json = serde_json::to_string_pretty(summary)?;
    json.push('\n');
    std::fs::write(json_path, json)?;
    Ok(())
}

/// Parses a comma-separated radius grid such as `0.25,0.5,0.75`.
pub fn parse_radius_grid(s: &str) -> Result<Vec<f64>> {
    let bad = |reason: String| ReportError::Spec {
        what: "radius grid",
        value: s.to_string(),
        reason,
    };
    let grid = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| bad(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    if grid.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
        return Err(bad("radii must be finite and >= 0".into()));
    }
    Ok(grid)
}

/// `start:end:step`, inclusive of `end` when reached.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DimRange {
    pub start: u64,
    pub end: u64,
    pub step: u64,
}

impl DimRange {
    pub fn iter(&self) -> impl Iterator<Item = u64> {
        (self.start..=self.end).step_by(self.step as usize)
    }
}

impl FromStr for DimRange {
    type Err = ReportError;
    fn from_str(s: &str) -> Result<Self> {
        let bad = |reason: &str| ReportError::Spec {
            what: "dimension range",
            value: s.to_string(),
            reason: reason.to_string(),
        };
        let parts: Vec<&str> = s.split(':').collect();
        let nums = parts
            .iter()
            .map(|p| p.trim().parse::<u64>().map_err(|_| bad("expected integers start:end[:step]")))
            .collect::<Result<Vec<_>>>()?;
        let (start, end, step) = match nums[..] {
            [a, b] => (a, b, 1),
            [a, b, c] => (a, b, c),
            _ => return Err(bad("expected start:end[:step]")),
        };
        if start == 0 || step == 0 || end < start {
            return Err(bad("need 1 <= start <= end and step >= 1"));
        }
        Ok(Self { start, end, step })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SigmaRule {
    OneOverSqrtD,
    Fixed(f64),
}

impl SigmaRule {
    pub fn sigma(&self, d: u64) -> f64 {
        match self {
            Self::OneOverSqrtD => 1.0 / (d as f64).sqrt(),
            Self::Fixed(s) => *s,
        }
    }
}

impl FromStr for SigmaRule {
    type Err = ReportError;
    fn from_str(s: &str) -> Result<Self> {
        if s == "one-over-sqrt-d" {
            return Ok(Self::OneOverSqrtD);
        }
        match s.strip_prefix("fixed:").map(str::parse::<f64>) {
            Some(Ok(v)) if v > 0.0 && v.is_finite() => Ok(Self::Fixed(v)),
            _ => Err(ReportError::Spec {
                what: "sigma rule",
                value: s.to_string(),
                reason: "expected one-over-sqrt-d or fixed:VALUE with VALUE > 0".into(),
            }),
        }
    }
}

/// One row of the upper-bound curve. `drs_bound` is absent for odd `d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCurvePoint {
    pub d: u64,
    pub rs_bound: f64,
    pub drs_bound: Option<f64>,
    pub sigma: f64,
    pub p: f64,
}

pub fn bound_curve(range: DimRange, p: f64, rule: SigmaRule) -> Result<Vec<BoundCurvePoint>> {
    range
        .iter()
        .map(|d| {
            let sigma = rule.sigma(d);
            let rs_bound = radius::rs_upper_bound(p, d, sigma)?;
            let drs_bound = if d % 2 == 0 {
                Some(radius::drs_upper_bound(p, p, d / 2, d / 2, sigma)?)
            } else {
                None
            };
            Ok(BoundCurvePoint {
                d,
                rs_bound,
                drs_bound,
                sigma,
                p,
            })
        })
        .collect()
}

pub fn write_bound_curve<W: Write>(points: &[BoundCurvePoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for p in points {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}
