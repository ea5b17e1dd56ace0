//! Ornstein-Uhlenbeck simulation: exact-transition paths, joint sampling with
//! covariance M⊗Iₙ, exit-time and occupation estimators, and the semigroup P_t.
//!
//! The exit and occupation estimators run on the uniform grid tᵢ = iτ/k and build
//! each path by a nested construction. The skeleton at the odd part of k is drawn
//! with exact transitions, and every dyadic level after that fills midpoints from
//! the OU bridge with its own random stream. A path on 2k steps therefore agrees
//! bit-for-bit with the k-step path at the shared times, so refinement
//! comparisons at a fixed seed see only the discretization effect.

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gaussian::normal;
use crate::gaussian::{cholesky, CholeskyFactor, CorrelationMatrix};
use crate::geometry::{noncentral_chi2_cdf, SetExpr};
use crate::orthant::Estimate;
use crate::rng::{self, derive_seed, ShardRng, DEFAULT_SHARDS};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OUPath {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub seed: u64,
}

/// Draws (X_1, …, X_k) with covariance M⊗Iₙ as X_i = Σ_j q_ij Z_j.
#[derive(Debug, Clone)]
pub struct KroneckerSampler {
    m: CorrelationMatrix,
    q: CholeskyFactor,
    n: usize,
}

impl KroneckerSampler {
    pub fn new(m: &CorrelationMatrix, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("n", "dimension must be positive"));
        }
        Ok(Self {
            q: cholesky(m.matrix())?,
            m: m.clone(),
            n,
        })
    }

    pub fn k(&self) -> usize {
        self.m.dim()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn correlation(&self) -> &CorrelationMatrix {
        &self.m
    }

    /// Fills `out` (length k·n, X_i in row i) using `z` (length k·n) as scratch.
    #[inline]
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, z: &mut [f64], out: &mut [f64]) {
        let (k, n) = (self.k(), self.n);
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let q = self.q.lower();
        for i in 0..k {
            let row = &mut out[i * n..(i + 1) * n];
            row.fill(0.0);
            for j in 0..=i {
                let c = q[(i, j)];
                if c != 0.0 {
                    for (r, zj) in row.iter_mut().zip(&z[j * n..(j + 1) * n]) {
                        *r += c * zj;
                    }
                }
            }
        }
    }
}

/// One draw of (X_1, …, X_k) with covariance M⊗Iₙ.
pub fn sample_joint(m: &CorrelationMatrix, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let sampler = KroneckerSampler::new(m, n)?;
    let k = sampler.k();
    let mut rng = ShardRng::seed_from_u64(derive_seed(seed, 0));
    let mut z = vec![0.0; k * n];
    let mut out = vec![0.0; k * n];
    sampler.sample_into(&mut rng, &mut z, &mut out);
    Ok(out.chunks(n).map(<[f64]>::to_vec).collect())
}

/// Frequency of {X_i ∈ sets[i] for all i} under covariance M⊗Iₙ.
pub fn joint_containment(m: &CorrelationMatrix, sets: &[SetExpr], samples: u64, seed: u64) -> Result<Estimate> {
    if sets.len() != m.dim() {
        return Err(Error::DimensionMismatch {
            expected: m.dim(),
            got: sets.len(),
        });
    }
    if samples == 0 {
        return Err(Error::invalid("samples", "must be at least 1"));
    }
    let n = common_dim(sets)?;
    let sampler = KroneckerSampler::new(m, n)?;
    let k = sampler.k();
    let hits: u64 = rng::run_sharded(samples, DEFAULT_SHARDS, seed, |_, _, len, rng| {
        let mut z = vec![0.0; k * n];
        let mut x = vec![0.0; k * n];
        let mut hits = 0;
        for _ in 0..len {
            sampler.sample_into(rng, &mut z, &mut x);
            hits += u64::from(sets.iter().zip(x.chunks(n)).all(|(s, xi)| s.contains_unchecked(xi)));
        }
        hits
    })
    .into_iter()
    .sum();
    Ok(binomial(hits, samples, seed))
}

fn common_dim(sets: &[SetExpr]) -> Result<usize> {
    let n = sets
        .first()
        .ok_or_else(|| Error::invalid("sets", "at least one set required"))?
        .dim();
    for s in sets {
        if s.dim() != n {
            return Err(Error::DimensionMismatch { expected: n, got: s.dim() });
        }
    }
    Ok(n)
}

fn binomial(hits: u64, samples: u64, seed: u64) -> Estimate {
    let p = hits as f64 / samples as f64;
    Estimate {
        value: p,
        std_error: (p * (1.0 - p) / samples as f64).sqrt(),
        samples,
        seed,
    }
}

/// Exact-transition path on `grid`, started from γₙ. Repeated times give repeated
/// states; `+∞` entries give fresh independent draws.
pub fn simulate_path(n: usize, grid: &[f64], seed: u64) -> Result<OUPath> {
    if n == 0 {
        return Err(Error::invalid("n", "dimension must be positive"));
    }
    if grid.first() != Some(&0.0) {
        return Err(Error::invalid("grid", "must start at 0"));
    }
    if grid.iter().any(|t| t.is_nan()) || grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("grid", "times must be nondecreasing"));
    }
    let mut rng = ShardRng::seed_from_u64(derive_seed(seed, 0));
    let mut x: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let mut states = vec![x.clone()];
    for w in grid.windows(2) {
        if w[1] > w[0] {
            let (a, s) = transition(w[1] - w[0]);
            for v in x.iter_mut() {
                let xi: f64 = rng.sample(StandardNormal);
                *v = a * *v + s * xi;
            }
        }
        states.push(x.clone());
    }
    Ok(OUPath {
        times: grid.to_vec(),
        states,
        seed,
    })
}

/// (e^{−Δ}, √(1 − e^{−2Δ})).
#[inline]
fn transition(delta: f64) -> (f64, f64) {
    if delta == f64::INFINITY {
        return (0.0, 1.0);
    }
    ((-delta).exp(), (-(-2.0 * delta).exp_m1()).sqrt())
}

/// The nested uniform-grid path generator described in the module docs.
#[derive(Debug, Clone, Copy)]
struct NestedGrid {
    n: usize,
    steps: usize,
    odd: usize,
    levels: u32,
    tau: f64,
}

impl NestedGrid {
    fn new(n: usize, tau: f64, steps: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("n", "dimension must be positive"));
        }
        if steps == 0 {
            return Err(Error::invalid("steps", "must be at least 1"));
        }
        if !(tau >= 0.0) || !tau.is_finite() {
            return Err(Error::invalid("tau", format!("{tau} must be finite and nonnegative")));
        }
        let levels = steps.trailing_zeros();
        Ok(Self {
            n,
            steps,
            odd: steps >> levels,
            levels,
            tau,
        })
    }

    /// Fills `x` (length (steps+1)·n) and calls `visit(index, point)` on each new
    /// point in generation order; generation stops when `visit` returns false.
    fn generate(&self, path_seed: u64, x: &mut [f64], mut visit: impl FnMut(usize, &[f64]) -> bool) {
        let n = self.n;
        let stride0 = 1usize << self.levels;
        let coarse = self.tau / self.odd as f64;

        let mut rng = ShardRng::seed_from_u64(derive_seed(path_seed, 0));
        for v in &mut x[..n] {
            *v = rng.sample(StandardNormal);
        }
        if !visit(0, &x[..n]) {
            return;
        }
        let (a, s) = transition(coarse);
        for j in 1..=self.odd {
            let (prev, cur) = x.split_at_mut(j * stride0 * n);
            let prev = &prev[(j - 1) * stride0 * n..(j - 1) * stride0 * n + n];
            for (c, p) in cur[..n].iter_mut().zip(prev) {
                let xi: f64 = rng.sample(StandardNormal);
                *c = a * p + s * xi;
            }
            if !visit(j * stride0, &cur[..n]) {
                return;
            }
        }

        for level in 1..=self.levels {
            let mut rng = ShardRng::seed_from_u64(derive_seed(path_seed, u64::from(level)));
            let half = stride0 >> level;
            // Half-width in time, an exact power-of-two scaling of the skeleton step.
            let h = coarse * 0.5f64.powi(level as i32);
            let e = (-h).exp();
            let mean_coef = e / (1.0 + e * e);
            let sd = h.tanh().sqrt();
            let mut i = half;
            while i < self.steps {
                for d in 0..n {
                    let left = x[(i - half) * n + d];
                    let right = x[(i + half) * n + d];
                    let xi: f64 = rng.sample(StandardNormal);
                    x[i * n + d] = mean_coef * (left + right) + sd * xi;
                }
                if !visit(i, &x[i * n..(i + 1) * n]) {
                    return;
                }
                i += 2 * half;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExitTimeEstimate {
    pub tau: f64,
    pub steps: usize,
    pub survival: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OccupationEstimate {
    pub tau: f64,
    pub steps: usize,
    pub value: Estimate,
}

/// Two estimates driven by identical noise, with the standard error of their
/// paired difference rhs − lhs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairedEstimate<T> {
    pub lhs: T,
    pub rhs: T,
    pub diff_se: f64,
}

/// Per-path accumulators for a pair of statistics.
#[derive(Debug, Clone, Copy, Default)]
struct PairSums {
    a: f64,
    a2: f64,
    b: f64,
    b2: f64,
    d2: f64,
}

impl PairSums {
    fn push(&mut self, a: f64, b: f64) {
        self.a += a;
        self.a2 += a * a;
        self.b += b;
        self.b2 += b * b;
        self.d2 += (b - a) * (b - a);
    }

    fn merge(mut self, o: PairSums) -> PairSums {
        self.a += o.a;
        self.a2 += o.a2;
        self.b += o.b;
        self.b2 += o.b2;
        self.d2 += o.d2;
        self
    }

    /// (mean, se) of each arm and the se of the paired difference.
    fn finish(&self, paths: u64, seed: u64) -> (Estimate, Estimate, f64) {
        let nf = paths as f64;
        let se = |s: f64, s2: f64| {
            let mean = s / nf;
            let var = if paths > 1 { ((s2 - nf * mean * mean) / (nf - 1.0)).max(0.0) } else { 0.0 };
            (var / nf).sqrt()
        };
        let est = |s: f64, s2: f64| Estimate {
            value: s / nf,
            std_error: se(s, s2),
            samples: paths,
            seed,
        };
        (est(self.a, self.a2), est(self.b, self.b2), se(self.b - self.a, self.d2))
    }
}

fn check_paths(paths: u64) -> Result<()> {
    if paths == 0 {
        return Err(Error::invalid("paths", "must be at least 1"));
    }
    Ok(())
}

/// Survival indicators of every set in `sets` along shared paths, summed per arm.
fn survival_sums(sets: &[&SetExpr], tau: f64, steps: usize, paths: u64, seed: u64) -> Result<Vec<(u64, Vec<bool>)>> {
    let grid = NestedGrid::new(sets[0].dim(), tau, steps)?;
    let n = grid.n;
    let per_shard = rng::run_sharded(paths, DEFAULT_SHARDS, seed, |_, start, len, _| {
        let mut x = vec![0.0; (steps + 1) * n];
        let mut out = Vec::with_capacity(len as usize);
        let mut alive = vec![true; sets.len()];
        for p in start..start + len {
            alive.fill(true);
            grid.generate(derive_seed(seed, p), &mut x, |_, pt| {
                let mut any = false;
                for (a, s) in alive.iter_mut().zip(sets) {
                    if *a {
                        *a = s.contains_unchecked(pt);
                        any |= *a;
                    }
                }
                any
            });
            out.push((p, alive.clone()));
        }
        out
    });
    Ok(per_shard.into_iter().flatten().collect())
}

/// Pr(X_{iτ/k} ∈ A for all i = 0..k) from `paths` stationary paths. This
/// over-estimates the continuous-time survival Pr(e_A ≥ τ).
pub fn exit_survival(s: &SetExpr, tau: f64, steps: usize, paths: u64, seed: u64) -> Result<ExitTimeEstimate> {
    check_paths(paths)?;
    let rows = survival_sums(&[s], tau, steps, paths, seed)?;
    let hits = rows.iter().filter(|(_, a)| a[0]).count() as u64;
    Ok(ExitTimeEstimate {
        tau,
        steps,
        survival: binomial(hits, paths, seed),
    })
}

/// Survival of `a` and `b` on common random numbers.
pub fn exit_survival_paired(
    a: &SetExpr,
    b: &SetExpr,
    tau: f64,
    steps: usize,
    paths: u64,
    seed: u64,
) -> Result<PairedEstimate<ExitTimeEstimate>> {
    check_paths(paths)?;
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch { expected: a.dim(), got: b.dim() });
    }
    let rows = survival_sums(&[a, b], tau, steps, paths, seed)?;
    let mut sums = PairSums::default();
    for (_, alive) in &rows {
        sums.push(f64::from(u8::from(alive[0])), f64::from(u8::from(alive[1])));
    }
    let (lhs, rhs, diff_se) = sums.finish(paths, seed);
    let wrap = |survival| ExitTimeEstimate { tau, steps, survival };
    Ok(PairedEstimate {
        lhs: wrap(lhs),
        rhs: wrap(rhs),
        diff_se,
    })
}

/// Survival at every grid time iτ/k, i = 0..k, from one set of shared paths.
pub fn exit_survival_curve(s: &SetExpr, tau: f64, steps: usize, paths: u64, seed: u64) -> Result<Vec<ExitTimeEstimate>> {
    check_paths(paths)?;
    let n = s.dim();
    if n == 0 || steps == 0 || !(tau >= 0.0) || !tau.is_finite() {
        return Err(Error::invalid("curve", "needs n ≥ 1, steps ≥ 1 and finite τ ≥ 0"));
    }
    let (a, sd) = transition(tau / steps as f64);
    let per_shard = rng::run_sharded(paths, DEFAULT_SHARDS, seed, |_, start, len, _| {
        let mut counts = vec![0u64; steps + 1];
        let mut x = vec![0.0; n];
        for p in start..start + len {
            let mut rng = ShardRng::seed_from_u64(derive_seed(seed, p));
            for v in x.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            for (i, c) in counts.iter_mut().enumerate() {
                if i > 0 {
                    for v in x.iter_mut() {
                        let xi: f64 = rng.sample(StandardNormal);
                        *v = a * *v + sd * xi;
                    }
                }
                if !s.contains_unchecked(&x) {
                    break;
                }
                *c += 1;
            }
        }
        counts
    });
    let mut counts = vec![0u64; steps + 1];
    for shard in per_shard {
        for (c, v) in counts.iter_mut().zip(shard) {
            *c += v;
        }
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| ExitTimeEstimate {
            tau: tau * i as f64 / steps as f64,
            steps: i,
            survival: binomial(c, paths, seed),
        })
        .collect())
}

/// Per-path occupation (τ/k)·Σ_{i=1..k} 1{X_{t_j} ∈ A₁ ∀ j < i, X_{t_i} ∈ A₂}.
fn occupation_of_path(x: &[f64], n: usize, steps: usize, a1: &SetExpr, a2: &SetExpr) -> usize {
    let mut count = 0;
    for i in 1..=steps {
        if !a1.contains_unchecked(&x[(i - 1) * n..i * n]) {
            break;
        }
        count += usize::from(a2.contains_unchecked(&x[i * n..(i + 1) * n]));
    }
    count
}

fn occupation_sums(
    pairs: &[(&SetExpr, &SetExpr)],
    tau: f64,
    steps: usize,
    paths: u64,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    let n = pairs[0].0.dim();
    for (a1, a2) in pairs {
        for s in [a1, a2] {
            if s.dim() != n {
                return Err(Error::DimensionMismatch { expected: n, got: s.dim() });
            }
        }
    }
    let grid = NestedGrid::new(n, tau, steps)?;
    let per_shard = rng::run_sharded(paths, DEFAULT_SHARDS, seed, |_, start, len, _| {
        let mut x = vec![0.0; (steps + 1) * n];
        (start..start + len)
            .map(|p| {
                grid.generate(derive_seed(seed, p), &mut x, |_, _| true);
                pairs
                    .iter()
                    .map(|(a1, a2)| occupation_of_path(&x, n, steps, a1, a2))
                    .collect::<Vec<_>>()
            })
            .collect::<Vec<_>>()
    });
    Ok(per_shard.into_iter().flatten().collect())
}

/// Discretized E∫₀^{τ∧e_{A₁}} 1_{A₂}(X_s) ds. No A₂ ⊂ A₁ reduction is applied.
pub fn occupation(a1: &SetExpr, a2: &SetExpr, tau: f64, steps: usize, paths: u64, seed: u64) -> Result<OccupationEstimate> {
    check_paths(paths)?;
    let rows = occupation_sums(&[(a1, a2)], tau, steps, paths, seed)?;
    let w = tau / steps as f64;
    let mut sums = PairSums::default();
    for r in &rows {
        let y = w * r[0] as f64;
        sums.push(y, y);
    }
    let (value, _, _) = sums.finish(paths, seed);
    Ok(OccupationEstimate { tau, steps, value })
}

/// Occupation of (a1, a2) and (b1, b2) on common random numbers.
#[allow(clippy::too_many_arguments)]
pub fn occupation_paired(
    a1: &SetExpr,
    a2: &SetExpr,
    b1: &SetExpr,
    b2: &SetExpr,
    tau: f64,
    steps: usize,
    paths: u64,
    seed: u64,
) -> Result<PairedEstimate<OccupationEstimate>> {
    check_paths(paths)?;
    let rows = occupation_sums(&[(a1, a2), (b1, b2)], tau, steps, paths, seed)?;
    let w = tau / steps as f64;
    let mut sums = PairSums::default();
    for r in &rows {
        sums.push(w * r[0] as f64, w * r[1] as f64);
    }
    let (lhs, rhs, diff_se) = sums.finish(paths, seed);
    let wrap = |value| OccupationEstimate { tau, steps, value };
    Ok(PairedEstimate {
        lhs: wrap(lhs),
        rhs: wrap(rhs),
        diff_se,
    })
}

fn check_time(t: f64) -> Result<()> {
    if !(t >= 0.0) {
        return Err(Error::invalid("t", format!("{t} must be nonnegative")));
    }
    Ok(())
}

/// Monte-Carlo (P_t 1_s)(x) = E 1_s(e^{−t}x + √(1−e^{−2t})Y). At t = 0 this is
/// exact membership.
pub fn semigroup_apply(s: &SetExpr, t: f64, x: &[f64], samples: u64, seed: u64) -> Result<Estimate> {
    check_time(t)?;
    let n = s.dim();
    if x.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: x.len() });
    }
    if t == 0.0 {
        return Ok(Estimate::exact(f64::from(u8::from(s.contains_unchecked(x)))));
    }
    if samples == 0 {
        return Err(Error::invalid("samples", "must be at least 1"));
    }
    let (a, sd) = transition(t);
    let hits: u64 = rng::run_sharded(samples, DEFAULT_SHARDS, seed, |_, _, len, rng| {
        let mut y = vec![0.0; n];
        let mut hits = 0;
        for _ in 0..len {
            for (yi, xi) in y.iter_mut().zip(x) {
                let z: f64 = rng.sample(StandardNormal);
                *yi = a * xi + sd * z;
            }
            hits += u64::from(s.contains_unchecked(&y));
        }
        hits
    })
    .into_iter()
    .sum();
    Ok(binomial(hits, samples, seed))
}

/// (P_t 1_{ν·x ≤ c})(x) = Φ((c − e^{−t}u)/√(1−e^{−2t})) with u = ν·x.
pub fn semigroup_halfspace_closed(c: f64, t: f64, u: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::invalid("t", format!("{t} must be positive")));
    }
    if t == f64::INFINITY {
        return Ok(normal::cdf(c));
    }
    let (a, sd) = transition(t);
    Ok(normal::cdf((c - a * u) / sd))
}

/// Closed-form (P_t 1_s)(x) for half-spaces, balls, boxes and complements of
/// those; `None` for other sets.
pub fn semigroup_exact(s: &SetExpr, t: f64, x: &[f64]) -> Result<Option<f64>> {
    check_time(t)?;
    if x.len() != s.dim() {
        return Err(Error::DimensionMismatch { expected: s.dim(), got: x.len() });
    }
    if t == 0.0 {
        return Ok(Some(f64::from(u8::from(s.contains_unchecked(x)))));
    }
    Ok(exact_unchecked(s, t, x))
}

fn exact_unchecked(s: &SetExpr, t: f64, x: &[f64]) -> Option<f64> {
    let (a, sd) = transition(t);
    match s {
        SetExpr::HalfSpace(h) => semigroup_halfspace_closed(h.offset(), t, h.project(x)).ok(),
        SetExpr::Ball { center, radius } => {
            let shift2: f64 = x.iter().zip(center).map(|(xi, c)| (a * xi - c).powi(2)).sum();
            let s2 = sd * sd;
            Some(noncentral_chi2_cdf(center.len(), shift2 / s2, radius * radius / s2))
        }
        SetExpr::AxisBox { lo, hi } => Some(
            x.iter()
                .zip(lo.iter().zip(hi))
                .map(|(xi, (l, h))| {
                    if h < l {
                        0.0
                    } else {
                        normal::cdf((h - a * xi) / sd) - normal::cdf((l - a * xi) / sd)
                    }
                })
                .product(),
        ),
        SetExpr::Complement { inner } => exact_unchecked(inner, t, x).map(|p| 1.0 - p),
        SetExpr::Intersection { .. } | SetExpr::Union { .. } => None,
    }
}

/// Largest |∇(Φ⁻¹∘P_t 1_s)|/k_t over the probe cloud.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradientCheck {
    pub max_ratio: f64,
    /// Standard error of `max_ratio`; zero when every probe used a closed form.
    pub ratio_se: f64,
    pub max_gradient: f64,
    pub k_t: f64,
    pub probes_used: usize,
}

/// Probes whose semigroup value leaves this band are skipped: Φ⁻¹ amplifies
/// rounding and sampling error there.
const PROBE_BAND: f64 = 1e-9;
const EXACT_STEP: f64 = 1e-5;
const MC_STEP: f64 = 0.05;
const MC_SAMPLES: u64 = 400_000;

/// Central differences of Φ⁻¹∘P_t 1_s at `probe_points` points drawn from γₙ.
/// Uses the closed-form semigroup when one exists and common-random-number Monte
/// Carlo otherwise.
pub fn gradient_bound_check(s: &SetExpr, t: f64, probe_points: usize, seed: u64) -> Result<GradientCheck> {
    let kt = normal::k_t(t)?;
    let n = s.dim();
    let mut rng = ShardRng::seed_from_u64(derive_seed(seed, u64::MAX));
    let mut best = GradientCheck {
        max_ratio: 0.0,
        ratio_se: 0.0,
        max_gradient: 0.0,
        k_t: kt,
        probes_used: 0,
    };
    let in_band = |p: f64| (PROBE_BAND..=1.0 - PROBE_BAND).contains(&p);
    for probe in 0..probe_points {
        let x: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let probe_seed = derive_seed(seed, probe as u64);
        let (grad2, grad_var) = if exact_unchecked(s, t, &x).is_some() {
            let mut g2 = 0.0;
            let mut ok = true;
            for d in 0..n {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[d] += EXACT_STEP;
                xm[d] -= EXACT_STEP;
                let pp = exact_unchecked(s, t, &xp).unwrap_or(0.0);
                let pm = exact_unchecked(s, t, &xm).unwrap_or(0.0);
                if !in_band(pp) || !in_band(pm) {
                    ok = false;
                    break;
                }
                let g = (normal::quantile_unchecked(pp) - normal::quantile_unchecked(pm)) / (2.0 * EXACT_STEP);
                g2 += g * g;
            }
            if !ok {
                continue;
            }
            (g2, 0.0)
        } else {
            match mc_gradient(s, t, &x, probe_seed) {
                Some(v) => v,
                None => continue,
            }
        };
        best.probes_used += 1;
        let g = grad2.sqrt();
        let ratio = if kt > 0.0 { g / kt } else { 0.0 };
        if ratio > best.max_ratio {
            best.max_ratio = ratio;
            best.max_gradient = g;
            // Delta method on |g| = √(Σ g_d²).
            best.ratio_se = if g > 0.0 && kt > 0.0 { grad_var.sqrt() / kt } else { 0.0 };
        }
    }
    Ok(best)
}

/// (|∇w|², Var |∇w|) by paired Monte Carlo at x ± h·e_d.
fn mc_gradient(s: &SetExpr, t: f64, x: &[f64], seed: u64) -> Option<(f64, f64)> {
    let n = x.len();
    let (a, sd) = transition(t);
    let mut g2 = 0.0;
    let mut grads = Vec::with_capacity(n);
    let mut vars = Vec::with_capacity(n);
    for d in 0..n {
        let sums = rng::run_sharded(MC_SAMPLES, DEFAULT_SHARDS, derive_seed(seed, d as u64), |_, _, len, rng| {
            let mut y = vec![0.0; n];
            let mut acc = PairSums::default();
            for _ in 0..len {
                for (i, (yi, xi)) in y.iter_mut().zip(x).enumerate() {
                    let z: f64 = rng.sample(StandardNormal);
                    let base = if i == d { xi - MC_STEP } else { *xi };
                    *yi = a * base + sd * z;
                }
                let lo = f64::from(u8::from(s.contains_unchecked(&y)));
                y[d] += a * 2.0 * MC_STEP;
                let hi = f64::from(u8::from(s.contains_unchecked(&y)));
                acc.push(lo, hi);
            }
            acc
        })
        .into_iter()
        .fold(PairSums::default(), PairSums::merge);
        let (lo, hi, diff_se) = sums.finish(MC_SAMPLES, seed);
        let mid = 0.5 * (lo.value + hi.value);
        if !(PROBE_BAND..=1.0 - PROBE_BAND).contains(&lo.value) || !(PROBE_BAND..=1.0 - PROBE_BAND).contains(&hi.value) {
            return None;
        }
        let g = (normal::quantile_unchecked(hi.value) - normal::quantile_unchecked(lo.value)) / (2.0 * MC_STEP);
        // dΦ⁻¹/dp = 1/φ(Φ⁻¹(p)) at the midpoint.
        let slope = 1.0 / normal::pdf(normal::quantile_unchecked(mid));
        let g_se = slope * diff_se / (2.0 * MC_STEP);
        g2 += g * g;
        grads.push(g);
        vars.push(g_se * g_se);
    }
    let norm = g2.sqrt();
    let var = if norm > 0.0 {
        grads.iter().zip(&vars).map(|(g, v)| (g / norm).powi(2) * v).sum()
    } else {
        0.0
    };
    Some((g2, var))
}
