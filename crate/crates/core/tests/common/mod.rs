//! Reference values computed without the crate's numerics.
#![allow(dead_code)]

use smoothcert::oracle::LinearModel;
use smoothcert::partition::ResizePlan;

const SQRT_2PI: f64 = 2.506_628_274_631_000_5;

/// Standard normal CDF from libm's `erfc`.
pub fn cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Standard normal quantile: rational first guess, then Halley steps on
/// the libm-based CDF. Upper-half arguments are reflected so the residual
/// is always measured in the accurate lower tail.
pub fn quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile argument {p}");
    if p > 0.5 {
        return -quantile(1.0 - p);
    }
    let mut x = rational_guess(p);
    for _ in 0..3 {
        let e = cdf(x) - p;
        let u = e * SQRT_2PI * (0.5 * x * x).exp();
        x -= u / (1.0 + 0.5 * x * u);
    }
    x
}

fn rational_guess(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e1,
        2.209460984245205e2,
        -2.759285104469687e2,
        1.383577518672690e2,
        -3.066479806614716e1,
        2.506628277459239,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e1,
        1.615858368580409e2,
        -1.556989798598866e2,
        6.680131188771972e1,
        -1.328068155288572e1,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-3,
        -3.223964580411365e-1,
        -2.400758277161838,
        -2.549732539343734,
        4.374664141464968,
        2.938163982698783,
    ];
    const D: [f64; 4] = [7.784695709041462e-3, 3.224671290700398e-1, 2.445134137142996, 3.754408661907416];
    if p < 0.02425 {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    }
}

/// Exact probability that a binary linear model says class 0 on a branch
/// view `resize(x_sub + ε)`, `ε ~ N(0, σ²I)`.
///
/// The resize is linear, so its adjoint is recovered column by column from
/// basis images; the class-0 margin is then Gaussian with mean
/// `Δw·resize(x_sub) + Δb` and standard deviation `σ‖resizeᵀΔw‖`.
pub fn branch_prob_class0(model: &LinearModel, plan: &ResizePlan, channels: usize, x_sub: &[f64], sigma: f64) -> f64 {
    let dw: Vec<f64> = model.row(0).iter().zip(model.row(1)).map(|(a, b)| a - b).collect();
    let db = model.bias()[0] - model.bias()[1];
    let (dh, dwid) = plan.dst_shape();
    let mut image = vec![0.0; channels * dh * dwid];
    plan.apply_into(x_sub, channels, &mut image);
    let mean: f64 = dw.iter().zip(&image).map(|(a, b)| a * b).sum::<f64>() + db;
    let mut basis = vec![0.0; x_sub.len()];
    let mut var = 0.0;
    for j in 0..x_sub.len() {
        basis[j] = 1.0;
        plan.apply_into(&basis, channels, &mut image);
        basis[j] = 0.0;
        let g: f64 = dw.iter().zip(&image).map(|(a, b)| a * b).sum();
        var += g * g;
    }
    cdf(mean / (sigma * var.sqrt()))
}
