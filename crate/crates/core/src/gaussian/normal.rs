//! Scalar standard-normal special functions.
//!
//! `cdf` goes through `libm::erfc`, which is accurate to a few ulps over the whole
//! real line. `quantile` is Wichura's AS241 rational approximation followed by one
//! Halley step against `cdf`, so the round trip `cdf(quantile(p))` is tight even in
//! the tails.

use crate::error::{Error, Result};

pub const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_677_939_946_059_934_381_868_f64;
const SQRT_2PI: f64 = 2.506_628_274_631_000_502_415_765_284_811_045_253_f64;

/// Standard normal density φ(z).
#[inline]
pub fn pdf(z: f64) -> f64 {
    if z.is_infinite() {
        return 0.0;
    }
    FRAC_1_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Density of a centered normal with variance `var` at `z`.
#[inline]
pub fn pdf_var(z: f64, var: f64) -> f64 {
    let sd = var.sqrt();
    pdf(z / sd) / sd
}

/// Standard normal distribution function Φ(z). Total on the extended reals.
#[inline]
pub fn cdf(z: f64) -> f64 {
    if z == f64::INFINITY {
        return 1.0;
    }
    if z == f64::NEG_INFINITY {
        return 0.0;
    }
    0.5 * libm::erfc(-z * std::f64::consts::FRAC_1_SQRT_2)
}

/// Upper tail 1 − Φ(z), without cancellation for large `z`.
#[inline]
pub fn sf(z: f64) -> f64 {
    cdf(-z)
}

/// Φ⁻¹(p) with the extended-real convention Φ⁻¹(0) = −∞ and Φ⁻¹(1) = +∞.
pub fn quantile(p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) || p.is_nan() {
        return Err(Error::invalid("p", format!("{p} is not in [0, 1]")));
    }
    Ok(quantile_unchecked(p))
}

/// As [`quantile`], for callers that have already validated `p ∈ [0, 1]`.
pub fn quantile_unchecked(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let x = as241(p);
    // One Halley step on Φ(x) − p.
    let e = if p < 0.5 { cdf(x) - p } else { (1.0 - p) - sf(x) };
    let u = e * SQRT_2PI * (0.5 * x * x).exp();
    if !u.is_finite() {
        return x;
    }
    x - u / (1.0 + 0.5 * x * u)
}

/// The isoperimetric profile I(x) = φ(Φ⁻¹(x)); zero at both endpoints.
pub fn isoperimetric_profile(x: f64) -> Result<f64> {
    let z = quantile(x)?;
    Ok(pdf(z))
}

/// k_t = (e^{2t} − 1)^{−1/2}, the half-space slope of Φ⁻¹ ∘ P_t.
pub fn k_t(t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::invalid("t", format!("{t} must be positive")));
    }
    if t == f64::INFINITY {
        return Ok(0.0);
    }
    // expm1 keeps precision for small t.
    Ok(1.0 / (2.0 * t).exp_m1().sqrt())
}

#[allow(clippy::excessive_precision)]
fn as241(p: f64) -> f64 {
    const SPLIT1: f64 = 0.425;
    const SPLIT2: f64 = 5.0;
    const CONST1: f64 = 0.180625;
    const CONST2: f64 = 1.6;

    const A: [f64; 8] = [
        3.3871328727963666080e0,
        1.3314166789178437745e+2,
        1.9715909503065514427e+3,
        1.3731693765509461125e+4,
        4.5921953931549871457e+4,
        6.7265770927008700853e+4,
        3.3430575583588128105e+4,
        2.5090809287301226727e+3,
    ];
    const B: [f64; 8] = [
        1.0,
        4.2313330701600911252e+1,
        6.8718700749205790830e+2,
        5.3941960214247511077e+3,
        2.1213794301586595867e+4,
        3.9307895800092710610e+4,
        2.8729085735721942674e+4,
        5.2264952788528545610e+3,
    ];
    const C: [f64; 8] = [
        1.42343711074968357734e0,
        4.63033784615654529590e0,
        5.76949722146069140550e0,
        3.64784832476320460504e0,
        1.27045825245236838258e0,
        2.41780725177450611770e-1,
        2.27238449892691845833e-2,
        7.74545014278341407640e-4,
    ];
    const D: [f64; 8] = [
        1.0,
        2.05319162663775882187e0,
        1.67638483018380384940e0,
        6.89767334985100004550e-1,
        1.48103976427480074590e-1,
        1.51986665636164571966e-2,
        5.47593808499534494600e-4,
        1.05075007164441684324e-9,
    ];
    const E: [f64; 8] = [
        6.65790464350110377720e0,
        5.46378491116411436990e0,
        1.78482653991729133580e0,
        2.96560571828504891230e-1,
        2.65321895265761230930e-2,
        1.24266094738807843860e-3,
        2.71155556874348757815e-5,
        2.01033439929228813265e-7,
    ];
    const F: [f64; 8] = [
        1.0,
        5.99832206555887937690e-1,
        1.36929880922735805310e-1,
        1.48753612908506148525e-2,
        7.86869131145613259100e-4,
        1.84631831751005468180e-5,
        1.42151175831644588870e-7,
        2.04426310338993978564e-15,
    ];

    fn poly(c: &[f64; 8], r: f64) -> f64 {
        c.iter().rev().fold(0.0, |acc, &ci| acc * r + ci)
    }

    let q = p - 0.5;
    if q.abs() <= SPLIT1 {
        let r = CONST1 - q * q;
        return q * poly(&A, r) / poly(&B, r);
    }
    let tail = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-tail.ln()).sqrt();
    let x = if r <= SPLIT2 {
        r -= CONST2;
        poly(&C, r) / poly(&D, r)
    } else {
        r -= SPLIT2;
        poly(&E, r) / poly(&F, r)
    };
    if q < 0.0 {
        -x
    } else {
        x
    }
}
