//! Multivariate Gaussian orthant probabilities K(b; S) = Pr(X_i ≤ b_i for all i),
//! X ~ N(0, S).
//!
//! Two estimators share the [`Estimate`] currency:
//!
//! * [`orthant_mc`] is the brute-force oracle: indicator averages over
//!   Cholesky-mixed normal draws with a binomial standard error.
//! * [`orthant_qmc`] uses the sequential-conditioning transform (each coordinate
//!   integrated against its conditional law given the earlier ones), evaluated on a
//!   Richtmyer lattice with tent periodization and antithetic pairs. The standard
//!   error comes from the spread across independent random shifts.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::linalg::{check_symmetric, cholesky, min_eigenvalue, PSD_TOLERANCE};
use crate::gaussian::normal;
use crate::gaussian::CorrelationMatrix;
use crate::rng::{self, DEFAULT_SHARDS};

/// A Monte-Carlo value with its standard error, sample count and seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    #[serde(rename = "se")]
    pub std_error: f64,
    pub samples: u64,
    pub seed: u64,
}

impl Estimate {
    /// A value known exactly (closed form); zero samples and zero error.
    pub fn exact(value: f64) -> Self {
        Self {
            value,
            std_error: 0.0,
            samples: 0,
            seed: 0,
        }
    }

    /// √(se₁² + se₂²) for independent estimates.
    pub fn combined_se(&self, other: &Estimate) -> f64 {
        self.std_error.hypot(other.std_error)
    }

    /// True when |self − other| ≤ n·combined SE + `floor`.
    pub fn agrees_with(&self, other: &Estimate, n_se: f64, floor: f64) -> bool {
        (self.value - other.value).abs() <= n_se * self.combined_se(other) + floor
    }
}

/// Upper limits and a PSD covariance (diagonal need not be one).
#[derive(Debug, Clone, PartialEq)]
pub struct OrthantQuery {
    limits: Vec<f64>,
    cov: DMatrix<f64>,
}

impl OrthantQuery {
    pub fn new(limits: Vec<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let k = cov.nrows();
        if cov.ncols() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: cov.ncols(),
            });
        }
        if limits.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: limits.len(),
            });
        }
        if limits.iter().any(|b| b.is_nan()) {
            return Err(Error::invalid("limits", "NaN limit"));
        }
        if cov.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("cov", "entries must be finite"));
        }
        check_symmetric(&cov)?;
        if k > 0 {
            let min_ev = min_eigenvalue(&cov);
            if min_ev < -PSD_TOLERANCE {
                return Err(Error::NotPsd {
                    min_eigenvalue: min_ev,
                });
            }
        }
        Ok(Self { limits, cov })
    }

    pub fn with_correlation(limits: Vec<f64>, m: &CorrelationMatrix) -> Result<Self> {
        Self::new(limits, m.matrix().clone())
    }

    pub fn dim(&self) -> usize {
        self.limits.len()
    }

    pub fn limits(&self) -> &[f64] {
        &self.limits
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }
}

/// Brute-force Monte-Carlo estimate of K with a binomial standard error.
pub fn orthant_mc(q: &OrthantQuery, samples: u64, seed: u64) -> Result<Estimate> {
    if samples == 0 {
        return Err(Error::invalid("samples", "must be at least 1"));
    }
    let k = q.dim();
    if k == 0 {
        return Ok(Estimate {
            value: 1.0,
            std_error: 0.0,
            samples,
            seed,
        });
    }
    let factor = cholesky(&q.cov)?;
    let limits = &q.limits;
    let hits: u64 = rng::run_sharded(samples, DEFAULT_SHARDS, seed, |_, _, len, rng| {
        let mut z = vec![0.0; k];
        let mut x = vec![0.0; k];
        let mut hits = 0u64;
        for _ in 0..len {
            for zi in z.iter_mut() {
                *zi = rng.sample(StandardNormal);
            }
            factor.mul_into(&z, &mut x);
            if x.iter().zip(limits).all(|(xi, bi)| xi <= bi) {
                hits += 1;
            }
        }
        hits
    })
    .into_iter()
    .sum();
    let n = samples as f64;
    let p = hits as f64 / n;
    Ok(Estimate {
        value: p,
        std_error: (p * (1.0 - p) / n).sqrt(),
        samples,
        seed,
    })
}

/// Tuning for [`orthant_qmc_with`].
#[derive(Debug, Clone, PartialEq)]
pub struct QmcOptions {
    pub target_se: f64,
    pub seed: u64,
    /// Independent random shifts; the standard error is their spread.
    pub shifts: usize,
    /// Lattice points per shift in the first round; doubled until converged.
    pub initial_points: u64,
    /// Cap on total lattice points (over all shifts).
    pub max_points: u64,
    /// Sort coordinates by standardized limit before conditioning.
    pub reorder: bool,
    /// Evaluate exactly this many points per shift, without adaptation.
    pub fixed_points: Option<u64>,
}

pub const MIN_SHIFTS: usize = 12;
pub const DEFAULT_POINT_CAP: u64 = 100_000_000;
pub const MAX_QMC_DIM: usize = 12;

impl QmcOptions {
    pub fn new(target_se: f64, seed: u64) -> Self {
        Self {
            target_se,
            seed,
            shifts: MIN_SHIFTS,
            initial_points: 256,
            max_points: DEFAULT_POINT_CAP,
            reorder: true,
            fixed_points: None,
        }
    }

    /// Fixed design: a given number of points per shift and no coordinate sorting.
    /// The result is then a smooth function of the limits for a fixed seed, which is
    /// what finite-difference checks need.
    pub fn fixed(points_per_shift: u64, seed: u64) -> Self {
        Self {
            reorder: false,
            fixed_points: Some(points_per_shift),
            ..Self::new(0.0, seed)
        }
    }
}

/// Outcome of an adaptive QMC run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QmcOutcome {
    pub estimate: Estimate,
    /// The point cap stopped the run before `target_se` was reached.
    pub capped: bool,
}

/// Randomized-lattice estimate of K, refined until its standard error is at
/// most `target_se` (or the default cap of 10⁸ points is reached).
pub fn orthant_qmc(q: &OrthantQuery, target_se: f64, seed: u64) -> Result<Estimate> {
    Ok(orthant_qmc_with(q, &QmcOptions::new(target_se, seed))?.estimate)
}

pub fn orthant_qmc_with(q: &OrthantQuery, opts: &QmcOptions) -> Result<QmcOutcome> {
    if q.dim() > MAX_QMC_DIM {
        return Err(Error::invalid(
            "limits",
            format!("dimension {} exceeds {MAX_QMC_DIM}", q.dim()),
        ));
    }
    if opts.shifts < 2 {
        return Err(Error::invalid("shifts", "need at least two random shifts"));
    }
    let exact = |value: f64| QmcOutcome {
        estimate: Estimate {
            value,
            std_error: 0.0,
            samples: 0,
            seed: opts.seed,
        },
        capped: false,
    };

    let problem = match Conditioned::prepare(q, opts.reorder)? {
        Prepared::Exact(v) => return Ok(exact(v)),
        Prepared::Integrate(p) => p,
    };
    if problem.dim() == 1 {
        return Ok(exact(problem.first_factor()));
    }

    let dims = problem.dim() - 1;
    let generators: Vec<f64> = PRIMES[..dims].iter().map(|&p| f64::from(p).sqrt()).collect();
    let shifts: Vec<Vec<f64>> = (0..opts.shifts)
        .map(|s| {
            let mut r = rng::shard_rng(opts.seed, s as u64);
            (0..dims).map(|_| r.random::<f64>()).collect()
        })
        .collect();

    let mut sums = vec![0.0f64; opts.shifts];
    let mut done = 0u64;
    let mut target = opts.fixed_points.unwrap_or(opts.initial_points).max(1);
    let mut capped = false;
    loop {
        let (from, to) = (done, target);
        let add: Vec<f64> = shifts
            .par_iter()
            .map(|shift| {
                let mut w = vec![0.0; dims];
                let mut y = vec![0.0; problem.dim()];
                let mut acc = 0.0;
                for j in (from + 1)..=to {
                    let jf = j as f64;
                    for d in 0..dims {
                        let u = (jf * generators[d] + shift[d]).fract();
                        w[d] = (2.0 * u - 1.0).abs();
                    }
                    let f1 = problem.integrand(&w, &mut y);
                    for wd in w.iter_mut() {
                        *wd = 1.0 - *wd;
                    }
                    let f2 = problem.integrand(&w, &mut y);
                    acc += 0.5 * (f1 + f2);
                }
                acc
            })
            .collect();
        for (s, a) in sums.iter_mut().zip(add) {
            *s += a;
        }
        done = target;

        let (mean, se) = shift_statistics(&sums, done);
        let total = done * opts.shifts as u64;
        let finished = opts.fixed_points.is_some() || se <= opts.target_se;
        if !finished && total * 2 > opts.max_points {
            capped = true;
        }
        if finished || capped {
            return Ok(QmcOutcome {
                estimate: Estimate {
                    value: mean.clamp(0.0, 1.0),
                    std_error: se,
                    samples: total,
                    seed: opts.seed,
                },
                capped,
            });
        }
        target *= 2;
    }
}

fn shift_statistics(sums: &[f64], points: u64) -> (f64, f64) {
    let n = sums.len() as f64;
    let means: Vec<f64> = sums.iter().map(|s| s / points as f64).collect();
    let mean = means.iter().sum::<f64>() / n;
    let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Quadrant probability Pr(X ≤ 0, Y ≤ 0) = 1/4 + arcsin(ρ)/(2π).
pub fn bivariate_orthant_closed(rho: f64) -> Result<f64> {
    if !(-1.0..=1.0).contains(&rho) {
        return Err(Error::invalid("rho", format!("{rho} is not in [-1, 1]")));
    }
    Ok(0.25 + rho.asin() / (2.0 * std::f64::consts::PI))
}

const PRIMES: [u32; 11] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31];

enum Prepared {
    Exact(f64),
    Integrate(Conditioned),
}

/// Reduced problem after dropping +∞ limits and zero-variance coordinates,
/// reordered and Cholesky-factored.
struct Conditioned {
    limits: Vec<f64>,
    chol: DMatrix<f64>,
}

impl Conditioned {
    fn prepare(q: &OrthantQuery, reorder: bool) -> Result<Prepared> {
        let k = q.dim();
        let mut keep = Vec::with_capacity(k);
        for i in 0..k {
            let b = q.limits[i];
            let var = q.cov[(i, i)];
            if b == f64::NEG_INFINITY {
                return Ok(Prepared::Exact(0.0));
            }
            if b == f64::INFINITY {
                continue;
            }
            if var <= 1e-300 {
                // Degenerate coordinate pinned at zero.
                if b >= 0.0 {
                    continue;
                }
                return Ok(Prepared::Exact(0.0));
            }
            keep.push(i);
        }
        if keep.is_empty() {
            return Ok(Prepared::Exact(1.0));
        }
        if reorder {
            keep.sort_by(|&a, &b| {
                let za = q.limits[a] / q.cov[(a, a)].sqrt();
                let zb = q.limits[b] / q.cov[(b, b)].sqrt();
                za.total_cmp(&zb).then(a.cmp(&b))
            });
        }
        let d = keep.len();
        let sub = DMatrix::from_fn(d, d, |i, j| q.cov[(keep[i], keep[j])]);
        let chol = cholesky(&sub)?.lower().clone();
        let limits = keep.iter().map(|&i| q.limits[i]).collect();
        Ok(Prepared::Integrate(Self { limits, chol }))
    }

    fn dim(&self) -> usize {
        self.limits.len()
    }

    fn first_factor(&self) -> f64 {
        normal::cdf(self.limits[0] / self.chol[(0, 0)])
    }

    /// Product of conditional probabilities along one transformed point.
    #[inline]
    fn integrand(&self, w: &[f64], y: &mut [f64]) -> f64 {
        let d = self.dim();
        let mut prod = 1.0;
        for i in 0..d {
            let mut s = 0.0;
            for p in 0..i {
                s += self.chol[(i, p)] * y[p];
            }
            let lii = self.chol[(i, i)];
            if lii > 0.0 {
                let e = normal::cdf((self.limits[i] - s) / lii);
                prod *= e;
                if prod == 0.0 {
                    return 0.0;
                }
                if i + 1 < d {
                    let u = (w[i] * e).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON);
                    y[i] = normal::quantile_unchecked(u);
                }
            } else {
                // Coordinate is a deterministic combination of the earlier ones.
                if s > self.limits[i] {
                    return 0.0;
                }
                y[i] = 0.0;
            }
        }
        prod
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bivariate(rho: f64, b: [f64; 2]) -> OrthantQuery {
        OrthantQuery::with_correlation(b.to_vec(), &CorrelationMatrix::bivariate(rho).unwrap()).unwrap()
    }

    #[test]
    fn closed_form_values() {
        assert_eq!(bivariate_orthant_closed(0.0).unwrap(), 0.25);
        assert!((bivariate_orthant_closed(1.0).unwrap() - 0.5).abs() < 1e-15);
        assert!((bivariate_orthant_closed(0.5).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(bivariate_orthant_closed(1.2).is_err());
    }

    #[test]
    fn mc_all_infinite_is_one() {
        let q = bivariate(0.3, [f64::INFINITY, f64::INFINITY]);
        let e = orthant_mc(&q, 1000, 1).unwrap();
        assert_eq!(e.value, 1.0);
        assert_eq!(e.std_error, 0.0);
    }

    #[test]
    fn mc_quadrants() {
        let e = orthant_mc(&bivariate(0.0, [0.0, 0.0]), 200_000, 3).unwrap();
        assert!((e.value - 0.25).abs() <= 3.0 * e.std_error);
        let e = orthant_mc(&bivariate(0.5, [0.0, 0.0]), 200_000, 4).unwrap();
        assert!((e.value - 1.0 / 3.0).abs() <= 3.0 * e.std_error);
        assert!(orthant_mc(&bivariate(0.5, [0.0, 0.0]), 0, 4).is_err());
    }

    #[test]
    fn mc_reproducible() {
        let q = bivariate(0.2, [0.1, -0.4]);
        assert_eq!(orthant_mc(&q, 10_000, 9).unwrap(), orthant_mc(&q, 10_000, 9).unwrap());
    }

    #[test]
    fn qmc_quadrants() {
        let e = orthant_qmc(&bivariate(0.0, [0.0, 0.0]), 1e-6, 1).unwrap();
        assert!((e.value - 0.25).abs() <= 1e-6 + 3.0 * e.std_error);
        let e = orthant_qmc(&bivariate(0.5, [0.0, 0.0]), 1e-6, 1).unwrap();
        assert!((e.value - 1.0 / 3.0).abs() <= 1e-6 + 3.0 * e.std_error);
        assert!(e.std_error <= 1e-6);
    }

    #[test]
    fn qmc_infinite_limits() {
        let q = bivariate(0.4, [0.3, f64::INFINITY]);
        let e = orthant_qmc(&q, 1e-8, 1).unwrap();
        assert_eq!(e.value, normal::cdf(0.3));
        assert_eq!(e.std_error, 0.0);
        let q = bivariate(0.4, [0.3, f64::NEG_INFINITY]);
        assert_eq!(orthant_qmc(&q, 1e-8, 1).unwrap().value, 0.0);
    }

    #[test]
    fn qmc_degenerate_covariance() {
        // X₂ = X₁ almost surely: K = Φ(min(b₁, b₂)).
        let q = bivariate(1.0, [0.2, -0.1]);
        let e = orthant_qmc(&q, 1e-6, 5).unwrap();
        assert!((e.value - normal::cdf(-0.1)).abs() < 1e-5 + 3.0 * e.std_error);
    }

    #[test]
    fn qmc_general_diagonal() {
        // Var 4 on a single coordinate: Pr(X ≤ 1) = Φ(1/2).
        let q = OrthantQuery::new(vec![1.0], DMatrix::from_element(1, 1, 4.0)).unwrap();
        assert!((orthant_qmc(&q, 1e-9, 0).unwrap().value - normal::cdf(0.5)).abs() < 1e-15);
    }

    #[test]
    fn qmc_rejects_non_psd() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(OrthantQuery::new(vec![0.0, 0.0], cov), Err(Error::NotPsd { .. })));
    }

    #[test]
    fn qmc_reports_cap() {
        let m = CorrelationMatrix::equicorrelated(4, 0.3).unwrap();
        let q = OrthantQuery::with_correlation(vec![0.1, 0.2, -0.3, 0.4], &m).unwrap();
        let opts = QmcOptions {
            max_points: 10_000,
            ..QmcOptions::new(1e-14, 2)
        };
        let out = orthant_qmc_with(&q, &opts).unwrap();
        assert!(out.capped);
        assert!(out.estimate.samples <= 10_000);
    }

    #[test]
    fn qmc_reproducible_across_thread_counts() {
        let m = CorrelationMatrix::equicorrelated(3, 0.5).unwrap();
        let q = OrthantQuery::with_correlation(vec![0.0; 3], &m).unwrap();
        let a = orthant_qmc(&q, 1e-5, 11).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| orthant_qmc(&q, 1e-5, 11).unwrap());
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        // Equicorrelated 1/2 at the origin: 1/(k+1) = 1/4.
        assert!((a.value - 0.25).abs() < 1e-5 + 3.0 * a.std_error);
    }
}
