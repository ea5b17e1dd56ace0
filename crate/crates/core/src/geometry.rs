//! Closed subsets of Rⁿ as expression trees, with indicator evaluation, Gaussian
//! measure and ε-enlargement.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use statrs::function::gamma::gamma_lr;

use crate::error::{Error, Result};
use crate::gaussian::normal;
use crate::orthant::Estimate;
use crate::rng::{self, DEFAULT_SHARDS};

/// Default Monte-Carlo sample count for measures without a closed form.
pub const DEFAULT_MEASURE_SAMPLES: u64 = 1_000_000;

/// {x : x·normal ≤ offset}, stored with a unit normal.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HalfSpace {
    normal: Vec<f64>,
    offset: f64,
}

impl HalfSpace {
    /// Canonicalizes {x : x·a ≤ b} to a unit normal and offset b/|a|.
    pub fn new(a: Vec<f64>, b: f64) -> Result<Self> {
        let norm = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::invalid("normal", "must be a nonzero finite vector"));
        }
        if b.is_nan() {
            return Err(Error::invalid("offset", "NaN offset"));
        }
        Ok(Self {
            normal: a.iter().map(|v| v / norm).collect(),
            offset: b / norm,
        })
    }

    pub fn normal(&self) -> &[f64] {
        &self.normal
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn dim(&self) -> usize {
        self.normal.len()
    }

    /// Projection ν·x onto the unit normal.
    pub fn project(&self, x: &[f64]) -> f64 {
        dot(&self.normal, x)
    }

    /// Exact Gaussian measure Φ(offset).
    pub fn measure(&self) -> f64 {
        normal::cdf(self.offset)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SetExpr {
    HalfSpace(HalfSpace),
    Ball { center: Vec<f64>, radius: f64 },
    AxisBox { lo: Vec<f64>, hi: Vec<f64> },
    Complement { inner: Box<SetExpr> },
    Intersection { members: Vec<SetExpr> },
    Union { members: Vec<SetExpr> },
}

impl SetExpr {
    pub fn half_space(a: Vec<f64>, b: f64) -> Result<Self> {
        Ok(SetExpr::HalfSpace(HalfSpace::new(a, b)?))
    }

    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Self> {
        if center.is_empty() {
            return Err(Error::invalid("center", "empty center"));
        }
        if !(radius >= 0.0) {
            return Err(Error::invalid("radius", format!("{radius} must be nonnegative")));
        }
        Ok(SetExpr::Ball { center, radius })
    }

    /// Centered ball whose Gaussian measure is `p`.
    pub fn centered_ball_with_measure(n: usize, p: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("n", "dimension must be positive"));
        }
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::invalid("p", format!("{p} is not in [0, 1]")));
        }
        Self::ball(vec![0.0; n], chi_quantile(n, p))
    }

    pub fn axis_box(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch {
                expected: lo.len(),
                got: hi.len(),
            });
        }
        if lo.is_empty() || lo.iter().zip(&hi).any(|(l, h)| l.is_nan() || h.is_nan()) {
            return Err(Error::invalid("box", "bounds must be non-empty and not NaN"));
        }
        Ok(SetExpr::AxisBox { lo, hi })
    }

    pub fn complement(inner: SetExpr) -> Self {
        SetExpr::Complement {
            inner: Box::new(inner),
        }
    }

    pub fn intersection(members: Vec<SetExpr>) -> Result<Self> {
        check_members(&members)?;
        Ok(SetExpr::Intersection { members })
    }

    pub fn union(members: Vec<SetExpr>) -> Result<Self> {
        check_members(&members)?;
        Ok(SetExpr::Union { members })
    }

    /// All of Rⁿ, as a half-space with infinite offset.
    pub fn full(n: usize) -> Self {
        let mut a = vec![0.0; n.max(1)];
        a[0] = 1.0;
        SetExpr::HalfSpace(HalfSpace {
            normal: a,
            offset: f64::INFINITY,
        })
    }

    /// The empty set, as a half-space with offset −∞.
    pub fn empty(n: usize) -> Self {
        let mut a = vec![0.0; n.max(1)];
        a[0] = 1.0;
        SetExpr::HalfSpace(HalfSpace {
            normal: a,
            offset: f64::NEG_INFINITY,
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            SetExpr::HalfSpace(h) => h.dim(),
            SetExpr::Ball { center, .. } => center.len(),
            SetExpr::AxisBox { lo, .. } => lo.len(),
            SetExpr::Complement { inner } => inner.dim(),
            SetExpr::Intersection { members } | SetExpr::Union { members } => members[0].dim(),
        }
    }

    /// Membership with boundary points inside for ≤-defined leaves.
    pub fn contains(&self, x: &[f64]) -> Result<bool> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(self.contains_unchecked(x))
    }

    #[inline]
    pub fn contains_unchecked(&self, x: &[f64]) -> bool {
        match self {
            SetExpr::HalfSpace(h) => h.project(x) <= h.offset,
            SetExpr::Ball { center, radius } => {
                let d2: f64 = x.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum();
                d2 <= radius * radius
            }
            SetExpr::AxisBox { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(v, (l, h))| *l <= *v && *v <= *h),
            SetExpr::Complement { inner } => !inner.contains_unchecked(x),
            SetExpr::Intersection { members } => members.iter().all(|m| m.contains_unchecked(x)),
            SetExpr::Union { members } => members.iter().any(|m| m.contains_unchecked(x)),
        }
    }

    /// Closed-form Gaussian measure where one exists.
    pub fn analytic_measure(&self) -> Option<f64> {
        match self {
            SetExpr::HalfSpace(h) => Some(h.measure()),
            SetExpr::Ball { center, radius } => {
                let shift2: f64 = center.iter().map(|c| c * c).sum();
                Some(noncentral_chi2_cdf(center.len(), shift2, radius * radius))
            }
            SetExpr::AxisBox { lo, hi } => Some(
                lo.iter()
                    .zip(hi)
                    .map(|(&l, &h)| if h < l { 0.0 } else { normal::cdf(h) - normal::cdf(l) })
                    .product(),
            ),
            SetExpr::Complement { inner } => inner.analytic_measure().map(|p| 1.0 - p),
            SetExpr::Intersection { .. } | SetExpr::Union { .. } => None,
        }
    }
}

fn check_members(members: &[SetExpr]) -> Result<()> {
    let first = members
        .first()
        .ok_or_else(|| Error::invalid("members", "at least one member required"))?;
    let n = first.dim();
    for m in members {
        if m.dim() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: m.dim(),
            });
        }
    }
    Ok(())
}

/// A list (A_1, …, A_k) of sets in a common dimension.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SetSystem {
    sets: Vec<SetExpr>,
}

impl SetSystem {
    pub fn new(sets: Vec<SetExpr>) -> Result<Self> {
        check_members(&sets)?;
        Ok(Self { sets })
    }

    pub fn sets(&self) -> &[SetExpr] {
        &self.sets
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.sets[0].dim()
    }
}

/// γₙ(s): exact where a closed form exists, otherwise an indicator average over
/// `samples` standard normal draws.
pub fn gaussian_measure(s: &SetExpr, samples: u64, seed: u64) -> Result<Estimate> {
    if let Some(p) = s.analytic_measure() {
        return Ok(Estimate::exact(p));
    }
    gaussian_measure_mc(s, samples, seed)
}

/// Monte-Carlo γₙ(s) regardless of whether a closed form exists.
pub fn gaussian_measure_mc(s: &SetExpr, samples: u64, seed: u64) -> Result<Estimate> {
    if samples == 0 {
        return Err(Error::invalid("samples", "must be at least 1"));
    }
    let n = s.dim();
    let hits: u64 = rng::run_sharded(samples, DEFAULT_SHARDS, seed, |_, _, len, rng| {
        let mut x = vec![0.0; n];
        let mut hits = 0;
        for _ in 0..len {
            for v in x.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            hits += u64::from(s.contains_unchecked(&x));
        }
        hits
    })
    .into_iter()
    .sum();
    let p = hits as f64 / samples as f64;
    Ok(Estimate {
        value: p,
        std_error: (p * (1.0 - p) / samples as f64).sqrt(),
        samples,
        seed,
    })
}

/// Parallel half-spaces {x : x·d ≤ Φ⁻¹(p_i)} with prescribed measures.
pub fn parallel_halfspaces(measures: &[f64], direction: &[f64]) -> Result<Vec<HalfSpace>> {
    measures
        .iter()
        .map(|&p| {
            let b = normal::quantile(p)?;
            HalfSpace::new(direction.to_vec(), b).map(|h| HalfSpace {
                offset: b,
                ..h
            })
        })
        .collect()
}

/// ε-enlargement {x : d(x, s) ≤ ε} for leaves with a closed-form Minkowski sum
/// and unions of them.
pub fn enlarge(s: &SetExpr, eps: f64) -> Result<SetExpr> {
    if !(eps >= 0.0) {
        return Err(Error::invalid("eps", format!("{eps} must be nonnegative")));
    }
    match s {
        SetExpr::HalfSpace(h) => Ok(SetExpr::HalfSpace(HalfSpace {
            normal: h.normal.clone(),
            offset: h.offset + eps,
        })),
        SetExpr::Ball { center, radius } => Ok(SetExpr::Ball {
            center: center.clone(),
            radius: radius + eps,
        }),
        SetExpr::Union { members } => Ok(SetExpr::Union {
            members: members.iter().map(|m| enlarge(m, eps)).collect::<Result<_>>()?,
        }),
        SetExpr::AxisBox { .. } if eps == 0.0 => Ok(s.clone()),
        SetExpr::AxisBox { .. } => Err(Error::Unsupported(
            "enlargement of an axis box is not a box".into(),
        )),
        SetExpr::Complement { .. } | SetExpr::Intersection { .. } => Err(Error::Unsupported(
            "enlargement does not distribute over complement or intersection".into(),
        )),
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Pr(|μ + Y|² ≤ r2) for Y ~ N(0, Iₙ) and |μ|² = `shift2`: a Poisson mixture of
/// central χ² laws.
pub fn noncentral_chi2_cdf(n: usize, shift2: f64, r2: f64) -> f64 {
    if r2 <= 0.0 {
        return 0.0;
    }
    if r2 == f64::INFINITY {
        return 1.0;
    }
    let half_n = n as f64 / 2.0;
    let half_x = r2 / 2.0;
    let lambda = shift2 / 2.0;
    if lambda == 0.0 {
        return gamma_lr(half_n, half_x);
    }
    // Sum outward from the Poisson mode so large shifts stay accurate.
    let mode = lambda.floor() as u64;
    let log_w = |j: u64| -> f64 {
        let jf = j as f64;
        -lambda + jf * lambda.ln() - statrs::function::gamma::ln_gamma(jf + 1.0)
    };
    let term = |j: u64| -> f64 { log_w(j).exp() * gamma_lr(half_n + j as f64, half_x) };
    let mut total = term(mode);
    let mut weight = log_w(mode).exp();
    let mut j = mode + 1;
    loop {
        let w = log_w(j).exp();
        total += w * gamma_lr(half_n + j as f64, half_x);
        weight += w;
        if w < 1e-17 || j > mode + 10_000 {
            break;
        }
        j += 1;
    }
    let mut j = mode;
    while j > 0 {
        j -= 1;
        let w = log_w(j).exp();
        total += w * gamma_lr(half_n + j as f64, half_x);
        weight += w;
        if w < 1e-17 {
            break;
        }
    }
    debug_assert!((weight - 1.0).abs() < 1e-9);
    total.clamp(0.0, 1.0)
}

/// Radius r with Pr(|Y| ≤ r) = p for Y ~ N(0, Iₙ), by bisection on the χ²ₙ law.
fn chi_quantile(n: usize, p: f64) -> f64 {
    if p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let cdf = |r2: f64| gamma_lr(n as f64 / 2.0, r2 / 2.0);
    let mut hi = n as f64 + 10.0;
    while cdf(hi) < p {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (0.5 * (lo + hi)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halfspace_canonical_form() {
        let h = HalfSpace::new(vec![3.0, 4.0], 10.0).unwrap();
        assert!((h.normal()[0] - 0.6).abs() < 1e-15);
        assert!((h.offset() - 2.0).abs() < 1e-15);
        assert!(HalfSpace::new(vec![0.0, 0.0], 1.0).is_err());
    }

    #[test]
    fn contains_examples() {
        let h = SetExpr::half_space(vec![1.0, 0.0], 0.0).unwrap();
        assert!(h.contains(&[0.0, 5.0]).unwrap());
        let b = SetExpr::ball(vec![0.0, 0.0], 1.0).unwrap();
        assert!(!b.contains(&[2.0, 0.0]).unwrap());
        assert!(b.contains(&[1.0, 0.0]).unwrap());
        let c = SetExpr::complement(h.clone());
        assert!(!c.contains(&[0.0, 5.0]).unwrap());
        assert!(c.contains(&[0.1, 5.0]).unwrap());
        assert!(h.contains(&[0.0]).is_err());
        assert!(SetExpr::full(2).contains(&[1e300, 0.0]).unwrap());
        assert!(!SetExpr::empty(2).contains(&[-1e300, 0.0]).unwrap());
    }

    #[test]
    fn measure_examples() {
        let h = SetExpr::half_space(vec![1.0, 0.0], 0.0).unwrap();
        let e = gaussian_measure(&h, 10, 0).unwrap();
        assert_eq!(e.value, 0.5);
        assert_eq!(e.std_error, 0.0);

        // Radial integral in R²: Pr(|Y| ≤ r) = 1 − e^{−r²/2}.
        let r = (2.0 * 2f64.ln()).sqrt();
        let b = SetExpr::ball(vec![0.0, 0.0], r).unwrap();
        assert!((gaussian_measure(&b, 10, 0).unwrap().value - 0.5).abs() < 1e-14);

        let a = SetExpr::axis_box(vec![-1.0, -1.0], vec![0.0, 0.0]).unwrap();
        let shifted = SetExpr::axis_box(vec![1.0, 1.0], vec![2.0, 2.0]).unwrap();
        let disjoint = SetExpr::intersection(vec![a, shifted]).unwrap();
        let e = gaussian_measure(&disjoint, 100_000, 3).unwrap();
        assert!(e.value <= 3.0 * e.std_error);
    }

    #[test]
    fn centered_ball_measure_round_trip() {
        for n in 1..=4 {
            for &p in &[0.1, 0.5, 0.6, 0.9] {
                let b = SetExpr::centered_ball_with_measure(n, p).unwrap();
                assert!((b.analytic_measure().unwrap() - p).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn off_center_ball_matches_mc() {
        let b = SetExpr::ball(vec![0.7, -0.4, 0.2], 1.3).unwrap();
        let exact = b.analytic_measure().unwrap();
        let mc = gaussian_measure_mc(&b, 400_000, 8).unwrap();
        assert!((exact - mc.value).abs() <= 3.0 * mc.std_error);
    }

    #[test]
    fn noncentral_large_shift() {
        // 1-D: Pr(|μ + Y| ≤ r) = Φ(r − μ) − Φ(−r − μ).
        let (mu, r): (f64, f64) = (9.0, 1.5);
        let exact = normal::cdf(r - mu) - normal::cdf(-r - mu);
        assert!((noncentral_chi2_cdf(1, mu * mu, r * r) - exact).abs() < 1e-12);
    }

    #[test]
    fn parallel_halfspace_examples() {
        let e1 = [1.0, 0.0];
        let hs = parallel_halfspaces(&[0.5], &e1).unwrap();
        assert_eq!(hs[0].offset(), 0.0);
        let hs = parallel_halfspaces(&[0.3, 0.7], &e1).unwrap();
        assert!((hs[0].offset() + 0.5244).abs() < 1e-4);
        assert!((hs[1].offset() - 0.5244).abs() < 1e-4);
        assert!((hs[0].measure() - 0.3).abs() < 1e-14);
        let hs = parallel_halfspaces(&[1.0], &e1).unwrap();
        assert_eq!(hs[0].offset(), f64::INFINITY);
        assert!(parallel_halfspaces(&[0.5], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn enlarge_examples() {
        let h = SetExpr::half_space(vec![1.0, 0.0], 0.0).unwrap();
        match enlarge(&h, 0.1).unwrap() {
            SetExpr::HalfSpace(e) => assert!((e.offset() - 0.1).abs() < 1e-15),
            other => panic!("{other:?}"),
        }
        let b = SetExpr::ball(vec![0.0, 0.0], 1.0).unwrap();
        assert_eq!(enlarge(&b, 0.5).unwrap(), SetExpr::ball(vec![0.0, 0.0], 1.5).unwrap());
        assert_eq!(enlarge(&b, 0.0).unwrap(), b);
        let u = SetExpr::union(vec![h.clone(), b.clone()]).unwrap();
        assert!(enlarge(&u, 0.2).is_ok());
        assert!(matches!(
            enlarge(&SetExpr::complement(h.clone()), 0.1),
            Err(Error::Unsupported(_))
        ));
        assert!(matches!(
            enlarge(&SetExpr::intersection(vec![h, b]).unwrap(), 0.1),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn mismatched_members_rejected() {
        let a = SetExpr::full(2);
        let b = SetExpr::full(3);
        assert!(SetExpr::union(vec![a.clone(), b.clone()]).is_err());
        assert!(SetSystem::new(vec![a, b]).is_err());
        assert!(SetExpr::union(vec![]).is_err());
    }
}
