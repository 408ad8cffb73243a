//! Statistical special functions used throughout the engine.
//!
//! Includes the standard normal CDF and quantile, the exact one-sided
//! Clopper-Pearson lower limit, and the isotropic Gaussian ball mass
//! (a scaled chi CDF) together with its inverse.

use std::f64::consts::PI;

use thiserror::Error;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_741_78;
const SQRT_2PI: f64 = 2.506_628_274_631_000_502_4;

/// Errors raised by the statistical primitives.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatError {
    #[error("probability {0} is outside [0, 1]")]
    ProbabilityOutOfRange(f64),
    #[error("quantile argument {0} must lie strictly inside (0, 1)")]
    QuantileDomain(f64),
    #[error("alpha {0} must lie strictly inside (0, 1)")]
    InvalidAlpha(f64),
    #[error("non-finite input {0}")]
    NonFinite(f64),
    #[error("{successes} successes exceed {trials} trials")]
    SuccessesExceedTrials { successes: u64, trials: u64 },
    #[error("binomial bound needs at least one trial")]
    ZeroTrials,
    #[error("invalid ball-mass query: {0}")]
    InvalidBallQuery(&'static str),
}

/// A real number in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, serde::Serialize, serde::Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Probability(f64);

impl Probability {
    pub fn new(value: f64) -> Result<Self, StatError> {
        if value.is_nan() || !(0.0..=1.0).contains(&value) {
            return Err(StatError::ProbabilityOutOfRange(value));
        }
        Ok(Self(value))
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }

    /// `1 - p`.
    pub fn complement(self) -> Self {
        Self(1.0 - self.0)
    }
}

impl TryFrom<f64> for Probability {
    type Error = StatError;
    fn try_from(value: f64) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<Probability> for f64 {
    fn from(p: Probability) -> f64 {
        p.0
    }
}

/// The `alpha` of a `1 - alpha` confidence statement.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, serde::Serialize, serde::Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct ConfidenceLevel(f64);

impl ConfidenceLevel {
    pub fn new(alpha: f64) -> Result<Self, StatError> {
        if alpha.is_nan() || alpha <= 0.0 || alpha >= 1.0 {
            return Err(StatError::InvalidAlpha(alpha));
        }
        Ok(Self(alpha))
    }

    #[inline]
    pub fn alpha(self) -> f64 {
        self.0
    }

    /// The confidence `1 - alpha`.
    pub fn confidence(self) -> f64 {
        1.0 - self.0
    }
}

impl TryFrom<f64> for ConfidenceLevel {
    type Error = StatError;
    fn try_from(value: f64) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<ConfidenceLevel> for f64 {
    fn from(c: ConfidenceLevel) -> f64 {
        c.0
    }
}

/// Radius, dimension and noise scale for a Gaussian ball-mass evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BallMassQuery {
    radius: f64,
    dim: u64,
    sigma: f64,
}

impl BallMassQuery {
    pub fn new(radius: f64, dim: u64, sigma: f64) -> Result<Self, StatError> {
        if !(radius >= 0.0) || !radius.is_finite() {
            return Err(StatError::InvalidBallQuery("radius must be finite and >= 0"));
        }
        if dim == 0 {
            return Err(StatError::InvalidBallQuery("dimension must be >= 1"));
        }
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(StatError::InvalidBallQuery("sigma must be finite and > 0"));
        }
        Ok(Self { radius, dim, sigma })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }
    pub fn dim(&self) -> u64 {
        self.dim
    }
    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

// ---------------------------------------------------------------------------
// Normal distribution
// ---------------------------------------------------------------------------

// W. J. Cody, "Rational Chebyshev approximations for the error function",
// Math. Comp. 23 (1969); coefficients from the CALERF routine.
const ERF_A: [f64; 5] = [
    3.161_123_743_870_565_6e0,
    1.138_641_541_510_501_6e2,
    3.774_852_376_853_020_2e2,
    3.209_377_589_138_469_5e3,
    1.857_777_061_846_031_5e-1,
];
const ERF_B: [f64; 4] = [
    2.360_129_095_234_412_1e1,
    2.440_246_379_344_441_7e2,
    1.282_616_526_077_372_3e3,
    2.844_236_833_439_170_6e3,
];
const ERF_C: [f64; 9] = [
    5.641_884_969_886_700_9e-1,
    8.883_149_794_388_376e0,
    6.611_919_063_714_163e1,
    2.986_351_381_974_001_3e2,
    8.819_522_212_417_691e2,
    1.712_047_612_634_070_6e3,
    2.051_078_377_826_071_5e3,
    1.230_339_354_797_997_2e3,
    2.153_115_354_744_038_5e-8,
];
const ERF_D: [f64; 8] = [
    1.574_492_611_070_983_5e1,
    1.176_939_508_913_125e2,
    5.371_811_018_620_098_6e2,
    1.621_389_574_566_690_2e3,
    3.290_799_235_733_459_6e3,
    4.362_619_090_143_247e3,
    3.439_367_674_143_721_6e3,
    1.230_339_354_803_749_4e3,
];
const ERF_P: [f64; 6] = [
    3.053_266_349_612_323_4e-1,
    3.603_448_999_498_044_4e-1,
    1.257_817_261_112_292_5e-1,
    1.608_378_514_874_227_7e-2,
    6.587_491_615_298_378e-4,
    1.631_538_713_730_209_8e-2,
];
const ERF_Q: [f64; 5] = [
    2.568_520_192_289_822_4e0,
    1.872_952_849_923_467_3e0,
    5.279_051_029_514_284e-1,
    6.051_834_131_244_132e-2,
    2.335_204_976_268_691_8e-3,
];
const FRAC_1_SQRT_PI: f64 = 5.641_895_835_477_562_869_5e-1;

/// `exp(-y^2) * r`, splitting `y^2` to avoid cancellation.
#[inline]
fn scaled_exp(y: f64, r: f64) -> f64 {
    let ysq = (y * 16.0).trunc() / 16.0;
    let del = (y - ysq) * (y + ysq);
    (-ysq * ysq).exp() * (-del).exp() * r
}

/// Complementary error function.
pub fn erfc(x: f64) -> f64 {
    let y = x.abs();
    let r = if y <= 0.468_75 {
        let ysq = if y > 1.11e-16 { y * y } else { 0.0 };
        let mut num = ERF_A[4] * ysq;
        let mut den = ysq;
        for i in 0..3 {
            num = (num + ERF_A[i]) * ysq;
            den = (den + ERF_B[i]) * ysq;
        }
        return 1.0 - x * (num + ERF_A[3]) / (den + ERF_B[3]);
    } else if y <= 4.0 {
        let mut num = ERF_C[8] * y;
        let mut den = y;
        for i in 0..7 {
            num = (num + ERF_C[i]) * y;
            den = (den + ERF_D[i]) * y;
        }
        scaled_exp(y, (num + ERF_C[7]) / (den + ERF_D[7]))
    } else if y >= 26.543 {
        0.0
    } else {
        let ysq = 1.0 / (y * y);
        let mut num = ERF_P[5] * ysq;
        let mut den = ysq;
        for i in 0..4 {
            num = (num + ERF_P[i]) * ysq;
            den = (den + ERF_Q[i]) * ysq;
        }
        let r = ysq * (num + ERF_P[4]) / (den + ERF_Q[4]);
        scaled_exp(y, (FRAC_1_SQRT_PI - r) / y)
    };
    if x < 0.0 {
        2.0 - r
    } else {
        r
    }
}

/// Standard normal density.
#[inline]
pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / SQRT_2PI
}

/// Raw standard normal CDF with no input validation.
#[inline]
pub(crate) fn phi(z: f64) -> f64 {
    0.5 * erfc(-z * std::f64::consts::FRAC_1_SQRT_2)
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> Result<Probability, StatError> {
    if !z.is_finite() {
        return Err(StatError::NonFinite(z));
    }
    Ok(Probability(phi(z).clamp(0.0, 1.0)))
}

/// Wichura's AS241 (PPND16) rational approximation.
#[allow(clippy::excessive_precision)]
fn ppnd16(p: f64) -> f64 {
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180_625 - q * q;
        return q
            * (((((((2.509_080_928_730_122_672_7e3 * r + 3.343_057_558_358_812_810_5e4) * r
                + 6.726_577_092_700_870_085_3e4)
                * r
                + 4.592_195_393_154_987_145_7e4)
                * r
                + 1.373_169_376_550_946_112_5e4)
                * r
                + 1.971_590_950_306_551_442_7e3)
                * r
                + 1.331_416_678_917_843_774_5e2)
                * r
                + 3.387_132_872_796_366_608_0e0)
            / (((((((5.226_495_278_852_854_561_0e3 * r + 2.872_908_573_572_194_267_4e4) * r
                + 3.930_789_580_009_271_061_0e4)
                * r
                + 2.121_379_430_158_659_586_7e4)
                * r
                + 5.394_196_021_424_751_107_7e3)
                * r
                + 6.871_870_074_920_579_083_0e2)
                * r
                + 4.231_333_070_160_091_125_2e1)
                * r
                + 1.0);
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        r -= 1.6;
        (((((((7.745_450_142_783_414_076_4e-4 * r + 2.272_384_498_926_918_458_33e-2) * r
            + 2.417_807_251_774_506_117_7e-1)
            * r
            + 1.270_458_252_452_368_382_58e0)
            * r
            + 3.647_848_324_763_204_605_04e0)
            * r
            + 5.769_497_221_460_691_405_5e0)
            * r
            + 4.630_337_846_156_545_295_9e0)
            * r
            + 1.423_437_110_749_683_577_34e0)
            / (((((((1.050_750_071_644_416_843_24e-9 * r + 5.475_938_084_995_344_946e-4) * r
                + 1.519_866_656_361_645_719_66e-2)
                * r
                + 1.481_039_764_274_800_745_9e-1)
                * r
                + 6.897_673_349_851_000_045_5e-1)
                * r
                + 1.676_384_830_183_803_849_4e0)
                * r
                + 2.053_191_626_637_758_821_87e0)
                * r
                + 1.0)
    } else {
        r -= 5.0;
        (((((((2.010_334_399_292_288_132_65e-7 * r + 2.711_555_568_743_487_578_15e-5) * r
            + 1.242_660_947_388_078_438_6e-3)
            * r
            + 2.653_218_952_657_612_309_3e-2)
            * r
            + 2.965_605_718_285_048_912_3e-1)
            * r
            + 1.784_826_539_917_291_335_8e0)
            * r
            + 5.463_784_911_164_114_369_9e0)
            * r
            + 6.657_904_643_501_103_777_2e0)
            / (((((((2.044_263_103_389_939_785_64e-15 * r + 1.421_511_758_316_445_888_7e-7)
                * r
                + 1.846_318_317_510_054_681_8e-5)
                * r
                + 7.868_691_311_456_132_591e-4)
                * r
                + 1.487_536_129_085_061_485_2e-2)
                * r
                + 1.369_298_809_227_358_053_1e-1)
                * r
                + 5.998_322_065_558_879_376_9e-1)
                * r
                + 1.0)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

/// Lower-half quantile: AS241 start plus one Halley step on the CDF.
fn lower_quantile(p: f64) -> f64 {
    let x = ppnd16(p);
    let e = phi(x) - p;
    let u = e * SQRT_2PI * (0.5 * x * x).exp();
    x - u / (1.0 + 0.5 * x * u)
}

/// Raw quantile for `p` strictly inside `(0, 1)`; no validation.
#[inline]
pub(crate) fn phi_inv(p: f64) -> f64 {
    if p > 0.5 {
        // 1 - p is exact here, and the lower tail refines with full relative precision.
        -lower_quantile(1.0 - p)
    } else {
        lower_quantile(p)
    }
}

/// Inverse of the standard normal CDF.
///
/// Exact `0` and `1` are rejected; callers clamp explicitly where that is sound.
pub fn normal_quantile(p: f64) -> Result<f64, StatError> {
    if p.is_nan() || p <= 0.0 || p >= 1.0 {
        return Err(StatError::QuantileDomain(p));
    }
    Ok(phi_inv(p))
}

// ---------------------------------------------------------------------------
// Gamma family
// ---------------------------------------------------------------------------

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Γ(x)` for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // Reflection keeps the Lanczos sum in its accurate range.
        return (PI / (PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    LN_SQRT_2PI + (x + 0.5) * t.ln() - t + a.ln()
}

/// `ln Γ(n + 1) - [(n + 1/2) ln n - n + ln √(2π)]`.
fn stirlerr(n: f64) -> f64 {
    const S0: f64 = 1.0 / 12.0;
    const S1: f64 = 1.0 / 360.0;
    const S2: f64 = 1.0 / 1260.0;
    const S3: f64 = 1.0 / 1680.0;
    const S4: f64 = 1.0 / 1188.0;
    if n <= 15.0 {
        return ln_gamma(n + 1.0) - (n + 0.5) * n.ln() + n - LN_SQRT_2PI;
    }
    let nn = n * n;
    if n > 500.0 {
        (S0 - S1 / nn) / n
    } else if n > 80.0 {
        (S0 - (S1 - S2 / nn) / nn) / n
    } else if n > 35.0 {
        (S0 - (S1 - (S2 - S3 / nn) / nn) / nn) / n
    } else {
        (S0 - (S1 - (S2 - (S3 - S4 / nn) / nn) / nn) / nn) / n
    }
}

/// Deviance term `x ln(x / np) + np - x`, computed without cancellation.
fn bd0(x: f64, np: f64) -> f64 {
    if (x - np).abs() < 0.1 * (x + np) {
        let v = (x - np) / (x + np);
        let mut s = (x - np) * v;
        let mut ej = 2.0 * x * v;
        let v2 = v * v;
        for j in 1..1000 {
            ej *= v2;
            let s1 = s + ej / (2 * j + 1) as f64;
            if s1 == s {
                return s1;
            }
            s = s1;
        }
        s
    } else {
        x * (x / np).ln() + np - x
    }
}

/// `λ^x e^{-λ} / Γ(x + 1)` for real `x > 0`.
fn poisson_density(x: f64, lambda: f64) -> f64 {
    (-stirlerr(x) - bd0(x, lambda)).exp() / (2.0 * PI * x).sqrt()
}

const GAMMA_MAX_ITER: usize = 100_000;

/// Regularized lower incomplete gamma `P(a, x)`.
pub fn regularized_gamma_p(a: f64, x: f64) -> f64 {
    debug_assert!(a > 0.0 && x >= 0.0);
    if x <= 0.0 {
        return 0.0;
    }
    if x.is_infinite() {
        return 1.0;
    }
    if x < a + 1.0 {
        // Series: P = e^{-x} x^a / Γ(a+1) · Σ x^n / ((a+1)…(a+n))
        let mut term = 1.0;
        let mut sum = 1.0;
        for n in 1..GAMMA_MAX_ITER {
            term *= x / (a + n as f64);
            sum += term;
            if term < sum * f64::EPSILON * 0.5 {
                break;
            }
        }
        (poisson_density(a, x) * sum).min(1.0)
    } else {
        1.0 - regularized_gamma_q_cf(a, x)
    }
}

/// Lentz continued fraction for `Q(a, x)`, valid for `x >= a + 1`.
fn regularized_gamma_q_cf(a: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..GAMMA_MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < f64::EPSILON {
            break;
        }
    }
    // e^{-x} x^a / Γ(a) = a · e^{-x} x^a / Γ(a+1)
    a * poisson_density(a, x) * h
}

// ---------------------------------------------------------------------------
// Binomial tail and Clopper-Pearson
// ---------------------------------------------------------------------------

/// Binomial point mass `P(X = k)`, `X ~ B(n, p)`, with `q = 1 - p` supplied.
fn binomial_pmf(k: u64, n: u64, p: f64, q: f64) -> f64 {
    if p == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    if q == 0.0 {
        return if k == n { 1.0 } else { 0.0 };
    }
    let nf = n as f64;
    if k == 0 {
        let lq = if p < 0.5 { (-p).ln_1p() } else { q.ln() };
        return (nf * lq).exp();
    }
    if k == n {
        let lp = if q < 0.5 { (-q).ln_1p() } else { p.ln() };
        return (nf * lp).exp();
    }
    let kf = k as f64;
    let lc = stirlerr(nf) - stirlerr(kf) - stirlerr(nf - kf) - bd0(kf, nf * p) - bd0(nf - kf, nf * q);
    let lf = (2.0 * PI).ln() + kf.ln() + (-kf / nf).ln_1p();
    (lc - 0.5 * lf).exp()
}

/// Upper tail `P(X >= k)` for `X ~ B(n, p)`.
///
/// Sums outward from the term nearest the mode so only the non-negligible
/// band of roughly `O(√(np(1-p)))` terms is visited.
pub fn binomial_sf(k: u64, n: u64, p: f64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if k > n || p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return 1.0;
    }
    let q = 1.0 - p;
    let ratio_up = p / q;
    if k as f64 >= (n as f64 + 1.0) * p {
        // k at or beyond the mode: terms decrease upward.
        let mut t = binomial_pmf(k, n, p, q);
        let mut sum = t;
        let mut j = k;
        while j < n && t > 0.0 {
            t *= (n - j) as f64 / (j + 1) as f64 * ratio_up;
            j += 1;
            sum += t;
            if t < sum * 1e-17 {
                break;
            }
        }
        sum.min(1.0)
    } else {
        // k - 1 below the mode: terms decrease downward; use the complement.
        let mut t = binomial_pmf(k - 1, n, p, q);
        let mut sum = t;
        let mut j = k - 1;
        while j > 0 && t > 0.0 {
            t *= j as f64 / (n - j + 1) as f64 / ratio_up;
            j -= 1;
            sum += t;
            if t < sum * 1e-17 {
                break;
            }
        }
        (1.0 - sum).max(0.0)
    }
}

/// One-sided Clopper-Pearson lower confidence limit.
///
/// Returns the root `p` of `P(X >= successes | trials, p) = alpha`, found by
/// bisection on the exact binomial tail. The returned value is the lower end
/// of the final bracket, so the tail there never exceeds `alpha`.
pub fn clopper_pearson_lower(
    successes: u64,
    trials: u64,
    alpha: ConfidenceLevel,
) -> Result<Probability, StatError> {
    if trials == 0 {
        return Err(StatError::ZeroTrials);
    }
    if successes > trials {
        return Err(StatError::SuccessesExceedTrials { successes, trials });
    }
    if successes == 0 {
        return Ok(Probability(0.0));
    }
    let a = alpha.alpha();
    let mut lo = 0.0_f64;
    let mut hi = 1.0_f64;
    for _ in 0..1100 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if binomial_sf(successes, trials, mid) > a {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Probability(lo))
}

// ---------------------------------------------------------------------------
// Gaussian ball mass
// ---------------------------------------------------------------------------

/// `Ψ(r; N(0, σ²I_d))`: probability that an isotropic Gaussian sample lies
/// inside the origin-centred ℓ2 ball of radius `r`.
pub fn gaussian_ball_mass(q: BallMassQuery) -> Probability {
    let t = q.radius / q.sigma;
    Probability(regularized_gamma_p(0.5 * q.dim as f64, 0.5 * t * t).clamp(0.0, 1.0))
}

/// Inverse of [`gaussian_ball_mass`] in the radius.
///
/// Bisection on `r` with an expanding upper bracket; iterates to full `f64`
/// resolution in `r`, which keeps `|Ψ(r) - p|` under `1e-10` wherever the
/// chi density is not vanishingly small.
pub fn gaussian_ball_mass_inv(p: f64, dim: u64, sigma: f64) -> Result<f64, StatError> {
    if p.is_nan() || p <= 0.0 || p >= 1.0 {
        return Err(StatError::QuantileDomain(p));
    }
    // validates dim and sigma
    BallMassQuery::new(0.0, dim, sigma)?;
    let a = 0.5 * dim as f64;
    let mass = |r: f64| {
        let t = r / sigma;
        regularized_gamma_p(a, 0.5 * t * t)
    };
    let mut lo = 0.0;
    let mut hi = sigma * (dim as f64).sqrt().max(1.0);
    let mut expansions = 0;
    while mass(hi) < p {
        lo = hi;
        hi *= 2.0;
        expansions += 1;
        if expansions > 2000 {
            return Err(StatError::QuantileDomain(p));
        }
    }
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if mass(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
