//! Browser bindings for three interactive views: radius upper-bound curves,
//! the adversary's split landscape, and the diagonal partition of an image.
//!
//! The plain functions return `Result<_, String>` so they can be tested
//! natively; the `#[wasm_bindgen]` wrappers turn errors into JS exceptions.

use wasm_bindgen::prelude::*;

use smoothcert::partition::{self, ImageTensor, Interpolation, ResizePlan};
use smoothcert::radius::{self, BranchProbs};
use smoothcert::statfun;
use smoothcert::stream::{sample_stream_id, Branch, Phase, RandomStream};

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// `[d, rs_bound, drs_bound]` triples for even `d` in `[2, d_max]`, with
/// `σ = 1/√d` and top-class probability `p` on every branch.
pub fn bound_curve_points(d_max: u32, p: f64) -> Result<Vec<f64>, String> {
    if d_max < 2 {
        return Err("d_max must be at least 2".into());
    }
    let mut out = Vec::with_capacity(3 * (d_max as usize / 2));
    for d in (2..=d_max as u64).step_by(2) {
        let sigma = 1.0 / (d as f64).sqrt();
        let rs = radius::rs_upper_bound(p, d, sigma).map_err(err)?;
        let drs = radius::drs_upper_bound(p, p, d / 2, d / 2, sigma).map_err(err)?;
        out.extend([d as f64, rs, drs]);
    }
    Ok(out)
}

/// The attack budget as a function of the left branch's post-attack
/// top-class probability `p′`.
#[wasm_bindgen]
#[derive(Debug, Clone)]
pub struct Landscape {
    xs: Vec<f64>,
    radii: Vec<f64>,
    certified_radius: f64,
    best_x: f64,
    tilde_p: f64,
    boundary: bool,
}

#[wasm_bindgen]
impl Landscape {
    /// Sample positions `p′` across the feasible interval.
    pub fn xs(&self) -> Vec<f64> {
        self.xs.clone()
    }
    /// `budget(p′)/√2` at each sample.
    pub fn radii(&self) -> Vec<f64> {
        self.radii.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn certified_radius(&self) -> f64 {
        self.certified_radius
    }
    /// Sample with the smallest budget.
    #[wasm_bindgen(getter)]
    pub fn best_x(&self) -> f64 {
        self.best_x
    }
    #[wasm_bindgen(getter)]
    pub fn tilde_p(&self) -> f64 {
        self.tilde_p
    }
    /// The optimum sits on an end of the interval.
    #[wasm_bindgen(getter)]
    pub fn boundary(&self) -> bool {
        self.boundary
    }
}

pub fn landscape(
    left: (f64, f64),
    right: (f64, f64),
    sigma_l: f64,
    sigma_r: f64,
    points: usize,
) -> Result<Landscape, String> {
    let l = BranchProbs::new(left.0, left.1).map_err(err)?;
    let r = BranchProbs::new(right.0, right.1).map_err(err)?;
    let result = radius::asym_variance_radius(l, r, sigma_l, sigma_r).map_err(err)?;
    let Some((lo, hi)) = radius::asym_interval(l, r) else {
        return Err("no feasible split: the runner-up mass exceeds what the branches allow".into());
    };
    let tp = result.tilde_p.min(1.0);
    let q = |p: f64| statfun::normal_quantile(p.clamp(radius::QUANTILE_CLAMP, 1.0 - radius::QUANTILE_CLAMP));
    let (ql, qr) = (q(l.p_a).map_err(err)?, q(r.p_a).map_err(err)?);
    let points = points.max(2);
    let mut xs = Vec::with_capacity(points);
    let mut radii = Vec::with_capacity(points);
    for i in 0..points {
        let x = lo + (hi - lo) * i as f64 / (points - 1) as f64;
        let budget = sigma_l * (ql - q(x).map_err(err)?) + sigma_r * (qr - q(tp - x).map_err(err)?);
        xs.push(x);
        radii.push(budget / std::f64::consts::SQRT_2);
    }
    let best = radii
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map_or(0, |(i, _)| i);
    Ok(Landscape {
        best_x: xs[best],
        xs,
        radii,
        certified_radius: result.radius,
        tilde_p: result.tilde_p,
        boundary: result.caveat.is_some(),
    })
}

/// Six RGBA panels: padded input, partition overlay, both sub-images, and
/// both noisy branch views resized back to the padded size.
#[wasm_bindgen]
#[derive(Debug, Clone)]
pub struct Preview {
    panels: Vec<(usize, usize, Vec<u8>)>,
}

#[wasm_bindgen]
impl Preview {
    pub fn count(&self) -> usize {
        self.panels.len()
    }
    pub fn width(&self, panel: usize) -> usize {
        self.panels[panel].1
    }
    pub fn height(&self, panel: usize) -> usize {
        self.panels[panel].0
    }
    pub fn rgba(&self, panel: usize) -> Vec<u8> {
        self.panels[panel].2.clone()
    }
}

fn pattern(h: usize, w: usize) -> Vec<f64> {
    let (cy, cx) = (h as f64 / 2.0, w as f64 / 2.0);
    let spread = 0.3 * h.min(w) as f64;
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let d2 = (r as f64 - cy).powi(2) + (c as f64 - cx).powi(2);
            let blob = (-d2 / (2.0 * spread * spread)).exp();
            let stripe = if (r + 2 * c) / 3 % 4 == 0 { 0.15 } else { 0.0 };
            out.push((0.1 + 0.75 * blob + stripe).min(1.0));
        }
    }
    out
}

fn gray(h: usize, w: usize, values: &[f64]) -> (usize, usize, Vec<u8>) {
    let mut px = Vec::with_capacity(4 * values.len());
    for &v in values {
        let g = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        px.extend([g, g, g, 255]);
    }
    (h, w, px)
}

pub fn partition_preview(h: usize, w: usize, sigma: f64, seed: u64, nearest: bool) -> Result<Preview, String> {
    if h == 0 || w == 0 || h > 256 || w > 256 {
        return Err("height and width must be in [1, 256]".into());
    }
    let method = if nearest { Interpolation::Nearest } else { Interpolation::Bilinear };
    let x = ImageTensor::new(1, h, w, pattern(h, w)).map_err(err)?;
    let idx = partition::make_diagonal_partition(h, w).map_err(err)?;
    let pair = partition::downsample(&x, &idx).map_err(err)?;
    let padded = idx.reassemble(&pair).map_err(err)?;
    let (ph, pw) = idx.padded_shape();
    let (sh, sw) = idx.sub_shape();

    let mut overlay = vec![0u8; 4 * ph * pw];
    for (set, tint) in [(idx.left(), [255.0, 140.0, 0.0]), (idx.right(), [30.0, 110.0, 255.0])] {
        for px in set {
            let v = padded.get(0, px.row, px.col);
            let k = 4 * (px.row * pw + px.col);
            let alpha = if px.replicated { 0.25 } else { 0.6 };
            for ch in 0..3 {
                overlay[k + ch] = ((1.0 - alpha) * v * 255.0 + alpha * tint[ch]).round() as u8;
            }
            overlay[k + 3] = 255;
        }
    }

    let plan = ResizePlan::new((sh, sw), (ph, pw), method).map_err(err)?;
    let mut views = Vec::new();
    for (sub, branch) in [(&pair.left, Branch::Left), (&pair.right, Branch::Right)] {
        let view = if sigma > 0.0 {
            let mut stream = RandomStream::new(seed, sample_stream_id(Phase::Estimation, branch, 0));
            partition::noisy_branch_view(sub, sigma, &mut stream, &plan).map_err(err)?
        } else {
            plan.apply(sub)
        };
        views.push(gray(ph, pw, view.data()));
    }
    let mut panels = vec![
        gray(ph, pw, padded.data()),
        (ph, pw, overlay),
        gray(sh, sw, pair.left.data()),
        gray(sh, sw, pair.right.data()),
    ];
    panels.extend(views);
    Ok(Preview { panels })
}

#[wasm_bindgen(js_name = boundCurves)]
pub fn bound_curves_js(d_max: u32, p: f64) -> Result<Vec<f64>, JsError> {
    bound_curve_points(d_max, p).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = splitLandscape)]
pub fn split_landscape_js(
    p_a_left: f64,
    p_b_left: f64,
    p_a_right: f64,
    p_b_right: f64,
    sigma_l: f64,
    sigma_r: f64,
    points: usize,
) -> Result<Landscape, JsError> {
    landscape((p_a_left, p_b_left), (p_a_right, p_b_right), sigma_l, sigma_r, points).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = partitionPreview)]
pub fn partition_preview_js(h: usize, w: usize, sigma: f64, seed: u32, nearest: bool) -> Result<Preview, JsError> {
    partition_preview(h, w, sigma, seed as u64, nearest).map_err(|e| JsError::new(&e))
}
