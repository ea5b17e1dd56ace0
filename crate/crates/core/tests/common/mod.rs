//! Independent oracles shared by the integration tests. Nothing here calls the
//! library's numerical routines.

#![allow(dead_code)]

/// Φ by Marsaglia's Taylor series for |z| ≤ 3 and the Laplace continued
/// fraction for the tails.
pub fn phi_cdf(z: f64) -> f64 {
    if z.is_infinite() {
        return if z > 0.0 { 1.0 } else { 0.0 };
    }
    if z.abs() <= 3.0 {
        let (mut term, mut sum) = (z, z);
        let mut n = 1.0;
        while term.abs() > 1e-18 * sum.abs() {
            n += 2.0;
            term *= z * z / n;
            sum += term;
        }
        return 0.5 + phi_pdf(z) * sum;
    }
    let x = z.abs();
    let mut frac = x;
    for k in (1..=300).rev() {
        frac = x + k as f64 / frac;
    }
    let tail = phi_pdf(x) / frac;
    if z < 0.0 { tail } else { 1.0 - tail }
}

pub fn phi_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Φ⁻¹ by bisection on [`phi_cdf`].
pub fn phi_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let (mut lo, mut hi) = (-40.0_f64, 40.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if phi_cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Sheppard's arcsine formula for the bivariate negative orthant at zero.
pub fn arcsine_orthant(rho: f64) -> f64 {
    0.25 + rho.asin() / (2.0 * std::f64::consts::PI)
}

/// Gauss–Legendre nodes and weights on [−1, 1] by Newton iteration.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for m in 2..=n {
                let p2 = ((2 * m - 1) as f64 * x * p1 - (m - 1) as f64 * p0) / m as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let step = p1 / dp;
            x -= step;
            if step.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// Composite Gauss–Legendre rule on [a, b].
fn composite(a: f64, b: f64, panels: usize, rule: &(Vec<f64>, Vec<f64>)) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(panels * rule.0.len());
    let w = (b - a) / panels as f64;
    for p in 0..panels {
        let lo = a + p as f64 * w;
        for (x, wt) in rule.0.iter().zip(&rule.1) {
            out.push((lo + 0.5 * w * (x + 1.0), 0.5 * w * wt));
        }
    }
    out
}

/// Pr(Y ≤ b) for Y ~ N(0, cov), by conditioning on the first coordinate and
/// integrating with nested Gauss–Legendre quadrature. Practical for k ≤ 3.
pub fn quadrature_orthant(b: &[f64], cov: &[Vec<f64>]) -> f64 {
    let rule = gauss_legendre(24);
    orthant_rec(b, cov, &rule)
}

fn orthant_rec(b: &[f64], cov: &[Vec<f64>], rule: &(Vec<f64>, Vec<f64>)) -> f64 {
    let k = b.len();
    if b.contains(&f64::NEG_INFINITY) {
        return 0.0;
    }
    let s11 = cov[0][0];
    let sd = s11.sqrt();
    if k == 1 {
        return phi_cdf(b[0] / sd);
    }
    // Conditional law of the rest given y: mean (cov[r][0]/s11)·y, covariance
    // the Schur complement.
    let beta: Vec<f64> = (1..k).map(|r| cov[r][0] / s11).collect();
    let schur: Vec<Vec<f64>> = (1..k)
        .map(|r| (1..k).map(|c| cov[r][c] - cov[r][0] * cov[0][c] / s11).collect())
        .collect();
    let lo = -10.0 * sd;
    let hi = b[0].min(10.0 * sd);
    if hi <= lo {
        return 0.0;
    }
    let mut total = 0.0;
    for (y, w) in composite(lo, hi, 16, rule) {
        let rest: Vec<f64> = (1..k).map(|r| b[r] - beta[r - 1] * y).collect();
        total += w * phi_pdf(y / sd) / sd * orthant_rec(&rest, &schur, rule);
    }
    total
}

/// J(x; M) = K(Φ⁻¹(x); M) through the quadrature oracle.
pub fn quadrature_j(x: &[f64], m: &[Vec<f64>]) -> f64 {
    let b: Vec<f64> = x.iter().map(|&p| phi_quantile(p)).collect();
    quadrature_orthant(&b, m)
}

/// Sample mean, variance and the standard errors of both (normal-theory).
pub struct Moments {
    pub mean: f64,
    pub var: f64,
    pub mean_se: f64,
    pub var_se: f64,
}

pub fn moments(xs: &[f64]) -> Moments {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Moments {
        mean,
        var,
        mean_se: (var / n).sqrt(),
        var_se: var * (2.0 / (n - 1.0)).sqrt(),
    }
}

/// Sample correlation with the large-sample standard error (1 − r²)/√n.
pub fn correlation(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    let r = sxy / (sxx * syy).sqrt();
    (r, (1.0 - r * r) / n.sqrt())
}

/// Frequency of a Bernoulli sample with its binomial standard error.
pub fn frequency(hits: u64, n: u64) -> (f64, f64) {
    let p = hits as f64 / n as f64;
    (p, (p * (1.0 - p) / n as f64).sqrt())
}

/// x̄ᵀ A x̄ computed densely.
pub fn dense_quadratic(a: &[Vec<f64>], v: &[f64]) -> f64 {
    let mut s = 0.0;
    for (i, row) in a.iter().enumerate() {
        for (j, aij) in row.iter().enumerate() {
            s += v[i] * aij * v[j];
        }
    }
    s
}

