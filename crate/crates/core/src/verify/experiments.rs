//! The experiments behind each CLI subcommand.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use serde::Serialize;

use super::config::{ExperimentConfig, ExperimentKind, SweepSpec};
use super::report::{Cell, Table};
use super::{ComparisonResult, Verdict};
use crate::error::{Error, Result};
use crate::functional::{
    hadamard_hessian, j_grad, j_value, kernel_diagnostic, JEvaluation, JQuery, KernelDiagnostic, DERIVATIVE_MARGIN,
};
use crate::gaussian::{inverse_offdiag_nonpositive, k_t, min_eigenvalue, normal, ou_covariance, CorrelationMatrix};
use crate::geometry::{gaussian_measure, parallel_halfspaces, SetExpr, SetSystem};
use crate::orthant::Estimate;
use crate::ou::{exit_survival_paired, joint_containment, occupation_paired, semigroup_apply, semigroup_exact};
use crate::rng::{derive_seed, ShardRng};

// Sub-stream tags so each part of an experiment draws from its own stream.
const STREAM_LHS: u64 = 1;
const STREAM_RHS: u64 = 2;
const STREAM_PATHS: u64 = 3;
const STREAM_MEASURE: u64 = 1_000;
const STREAM_PROBES: u64 = 2_000;
const STREAM_SWEEP: u64 = 3_000;

fn need_sets(cfg: &ExperimentConfig, count: usize) -> Result<Vec<SetExpr>> {
    let sets = cfg.resolve_system()?;
    if sets.len() != count {
        return Err(Error::Config {
            line: 0,
            field: "sets".into(),
            message: format!("{} needs exactly {count} set(s), got {}", cfg.experiment.as_str(), sets.len()),
        });
    }
    Ok(sets)
}

fn measures(sets: &[SetExpr], cfg: &ExperimentConfig) -> Result<Vec<Estimate>> {
    sets.iter()
        .enumerate()
        .map(|(i, s)| gaussian_measure(s, cfg.samples, derive_seed(cfg.seed, STREAM_MEASURE + i as u64)))
        .collect()
}

/// lhs = joint containment frequency, rhs = J(γ(A_1), …, γ(A_k); M). Sampling
/// error in Monte-Carlo measures enters rhs through ∇J.
fn joint_vs_j(name: &str, m: &CorrelationMatrix, sets: &[SetExpr], cfg: &ExperimentConfig) -> Result<ComparisonResult> {
    if !m.is_entrywise_nonnegative() {
        let (i, j) = (0..m.dim())
            .flat_map(|i| (0..m.dim()).map(move |j| (i, j)))
            .find(|&(i, j)| m.get(i, j) < 0.0)
            .unwrap_or((0, 0));
        return Err(Error::Hypothesis(format!(
            "m[{i}][{j}] = {} is negative; the joint-containment inequality requires an entrywise nonnegative M",
            m.get(i, j)
        )));
    }
    let gammas = measures(sets, cfg)?;
    let lhs = joint_containment(m, sets, cfg.samples, derive_seed(cfg.seed, STREAM_LHS))?;
    let x: Vec<f64> = gammas.iter().map(|g| g.value).collect();
    let q = JQuery::new(x.clone(), m.clone())?;
    let rhs_seed = derive_seed(cfg.seed, STREAM_RHS);
    let mut rhs = j_value(&q, cfg.target_se, rhs_seed)?;
    let interior = x.iter().all(|v| (DERIVATIVE_MARGIN..=1.0 - DERIVATIVE_MARGIN).contains(v));
    let mut var = rhs.std_error.powi(2);
    for (i, g) in gammas.iter().enumerate() {
        if g.std_error > 0.0 && interior {
            let d = j_grad(&q, i, cfg.target_se, derive_seed(rhs_seed, i as u64))?;
            var += (d.value * g.std_error).powi(2);
        }
    }
    rhs.std_error = var.sqrt();
    let mut r = ComparisonResult::new(name, lhs, rhs);
    if gammas.iter().any(|g| g.std_error > 0.0) && r.note.is_none() {
        r.note = Some("rhs uses Monte-Carlo set measures".into());
    }
    Ok(r)
}

/// Pr(X_i ∈ A_i ∀i) against J at the set measures, under the configured M.
pub fn verify_main_inequality(cfg: &ExperimentConfig) -> Result<ComparisonResult> {
    let spec = cfg.matrix.as_ref().ok_or_else(|| Error::Config {
        line: 0,
        field: "matrix".into(),
        message: "verify-main needs a [matrix] section".into(),
    })?;
    let m = spec.build()?;
    let sets = cfg.resolve_system()?;
    if sets.len() != m.dim() {
        return Err(Error::DimensionMismatch {
            expected: m.dim(),
            got: sets.len(),
        });
    }
    joint_vs_j("verify-main", &m, &sets, cfg)
}

/// Pr(X_0 ∈ A_1, X_t ∈ A_2) against the matched parallel half-spaces, ρ = e^{−t}.
pub fn verify_noise_stability(a1: &SetExpr, a2: &SetExpr, t: f64, cfg: &ExperimentConfig) -> Result<ComparisonResult> {
    if !(t > 0.0) {
        return Err(Error::invalid("t", format!("{t} must be positive")));
    }
    let m = CorrelationMatrix::bivariate((-t).exp())?;
    joint_vs_j(&format!("noise-stability t={t}"), &m, &[a1.clone(), a2.clone()], cfg)
}

fn e1(n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[0] = 1.0;
    v
}

fn matched_halfspaces(sets: &[SetExpr], cfg: &ExperimentConfig) -> Result<(Vec<SetExpr>, bool)> {
    let gammas = measures(sets, cfg)?;
    let ps: Vec<f64> = gammas.iter().map(|g| g.value).collect();
    let mc = gammas.iter().any(|g| g.std_error > 0.0);
    let hs = parallel_halfspaces(&ps, &e1(sets[0].dim()))?;
    Ok((hs.into_iter().map(SetExpr::HalfSpace).collect(), mc))
}

/// Survival of A against the half-space of equal measure at each horizon, on
/// common random numbers.
pub fn verify_exit_dominance(a: &SetExpr, taus: &[f64], cfg: &ExperimentConfig) -> Result<Vec<ComparisonResult>> {
    let (b, mc) = matched_halfspaces(std::slice::from_ref(a), cfg)?;
    let seed = derive_seed(cfg.seed, STREAM_PATHS);
    taus.iter()
        .map(|&tau| {
            let p = exit_survival_paired(a, &b[0], tau, cfg.steps, cfg.paths, seed)?;
            let mut r = ComparisonResult::paired(format!("exit-time tau={tau}"), p.lhs.survival, p.rhs.survival, p.diff_se);
            if mc && r.note.is_none() {
                r.note = Some("half-space matched to a Monte-Carlo measure".into());
            }
            Ok(r)
        })
        .collect()
}

/// Occupation of (A_1, A_2) against matched parallel half-spaces, on common
/// random numbers.
pub fn verify_occupation(a1: &SetExpr, a2: &SetExpr, tau: f64, cfg: &ExperimentConfig) -> Result<ComparisonResult> {
    let (b, mc) = matched_halfspaces(&[a1.clone(), a2.clone()], cfg)?;
    let p = occupation_paired(a1, a2, &b[0], &b[1], tau, cfg.steps, cfg.paths, derive_seed(cfg.seed, STREAM_PATHS))?;
    let mut r = ComparisonResult::paired(format!("occupation tau={tau}"), p.lhs.value, p.rhs.value, p.diff_se);
    if mc && r.note.is_none() {
        r.note = Some("half-spaces matched to Monte-Carlo measures".into());
    }
    Ok(r)
}

/// Residual and cosine thresholds for declaring a system consistent with equality.
pub const RESIDUAL_THRESHOLD: f64 = 0.02;
pub const COSINE_THRESHOLD: f64 = 0.999;
const PROBE_BAND: f64 = 1e-9;

/// Least-squares fits w_i(x) ≈ a_i·x + b_i of w_i = Φ⁻¹∘P_t 1_{A_i}.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EqualityDiagnostic {
    pub t: f64,
    pub k_t: f64,
    pub directions: Vec<Vec<f64>>,
    pub offsets: Vec<f64>,
    /// Root-mean-square fit residual per set.
    pub residuals: Vec<f64>,
    /// |a_i|.
    pub slopes: Vec<f64>,
    pub cosines: Vec<Vec<f64>>,
    pub probes_used: Vec<usize>,
    pub consistent_with_equality: bool,
}

pub fn equality_diagnostic_run(sets: &SetSystem, t: f64, cfg: &ExperimentConfig) -> Result<EqualityDiagnostic> {
    let kt = k_t(t)?;
    let n = sets.dim();
    for (i, g) in measures(sets.sets(), cfg)?.iter().enumerate() {
        if !(g.value > 0.0 && g.value < 1.0) {
            return Err(Error::invalid("sets", format!("set {i} has measure {} outside (0, 1)", g.value)));
        }
    }
    let mut rng = ShardRng::seed_from_u64(derive_seed(cfg.seed, STREAM_PROBES));
    let probes: Vec<Vec<f64>> = (0..cfg.probes)
        .map(|_| (0..n).map(|_| rng.sample(StandardNormal)).collect())
        .collect();

    let mut d = EqualityDiagnostic {
        t,
        k_t: kt,
        directions: Vec::new(),
        offsets: Vec::new(),
        residuals: Vec::new(),
        slopes: Vec::new(),
        cosines: Vec::new(),
        probes_used: Vec::new(),
        consistent_with_equality: true,
    };
    for (i, s) in sets.sets().iter().enumerate() {
        let mut rows = Vec::new();
        let mut w = Vec::new();
        for (p, x) in probes.iter().enumerate() {
            let value = match semigroup_exact(s, t, x)? {
                Some(v) => v,
                None => {
                    let seed = derive_seed(cfg.seed, STREAM_PROBES + 1 + (p * sets.len() + i) as u64);
                    semigroup_apply(s, t, x, cfg.samples, seed)?.value
                }
            };
            if (PROBE_BAND..=1.0 - PROBE_BAND).contains(&value) {
                rows.push(x.clone());
                w.push(normal::quantile_unchecked(value));
            }
        }
        if rows.len() < n + 2 {
            return Err(Error::invalid("probes", format!("only {} usable probes for set {i}", rows.len())));
        }
        let design = DMatrix::from_fn(rows.len(), n + 1, |r, c| if c < n { rows[r][c] } else { 1.0 });
        let target = DVector::from_vec(w);
        let coef = design
            .clone()
            .svd(true, true)
            .solve(&target, 1e-12)
            .map_err(|e| Error::invalid("probes", e.to_string()))?;
        let resid = &target - &design * &coef;
        let rms = (resid.norm_squared() / rows.len() as f64).sqrt();
        let a: Vec<f64> = coef.iter().take(n).copied().collect();
        d.slopes.push(a.iter().map(|v| v * v).sum::<f64>().sqrt());
        d.directions.push(a);
        d.offsets.push(coef[n]);
        d.residuals.push(rms);
        d.probes_used.push(rows.len());
    }
    let k = sets.len();
    d.cosines = (0..k)
        .map(|i| {
            (0..k)
                .map(|j| {
                    let (a, b) = (&d.directions[i], &d.directions[j]);
                    let denom = d.slopes[i] * d.slopes[j];
                    if denom > 0.0 {
                        (a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / denom).clamp(-1.0, 1.0)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    d.consistent_with_equality = d.residuals.iter().all(|&r| r <= RESIDUAL_THRESHOLD)
        && d.cosines.iter().flatten().all(|&c| c >= COSINE_THRESHOLD);
    Ok(d)
}

/// One Hessian-sweep point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub x: Vec<f64>,
    pub m: Vec<Vec<f64>>,
    pub max_eigenvalue: f64,
    pub se: f64,
    /// max_eigenvalue ≤ 1e−6 + 3·se.
    pub within_tolerance: bool,
    pub kernel: KernelDiagnostic,
}

/// Every (x, M) the sweep visits, in row order.
pub fn sweep_points(spec: &SweepSpec, seed: u64) -> Result<Vec<(Vec<f64>, CorrelationMatrix)>> {
    let mut rng = ShardRng::seed_from_u64(derive_seed(seed, STREAM_SWEEP));
    let uniform_x = |rng: &mut ShardRng, k: usize| -> Vec<f64> { (0..k).map(|_| rng.random_range(0.05..0.95)).collect() };
    match spec {
        SweepSpec::Grid { k, x, rho } => {
            let mut out = Vec::new();
            for &r in rho {
                let m = CorrelationMatrix::equicorrelated(*k, r)?;
                let total = x.len().pow(*k as u32);
                for idx in 0..total {
                    let mut rem = idx;
                    let mut point = vec![0.0; *k];
                    for slot in point.iter_mut().rev() {
                        *slot = x[rem % x.len()];
                        rem /= x.len();
                    }
                    out.push((point, m.clone()));
                }
            }
            Ok(out)
        }
        SweepSpec::RandomOu { k, count } => (0..*count)
            .map(|_| {
                let m = random_ou(&mut rng, *k)?;
                Ok((uniform_x(&mut rng, *k), m))
            })
            .collect(),
        SweepSpec::RandomNonneg { k, count } => (0..*count)
            .map(|_| {
                let m = random_nonneg(&mut rng, *k)?;
                Ok((uniform_x(&mut rng, *k), m))
            })
            .collect(),
    }
}

/// OU covariance on a grid with gaps drawn from U(0.05, 1).
pub fn random_ou(rng: &mut impl Rng, k: usize) -> Result<CorrelationMatrix> {
    let mut t = 0.0;
    let times: Vec<f64> = (0..k)
        .map(|i| {
            if i > 0 {
                t += rng.random_range(0.05..1.0);
            }
            t
        })
        .collect();
    ou_covariance(&times)
}

/// Normalized G·Gᵀ with G = [I | U], U uniform on [0, 1]: entrywise nonnegative
/// and positive definite.
pub fn random_nonneg(rng: &mut impl Rng, k: usize) -> Result<CorrelationMatrix> {
    let g = DMatrix::from_fn(k, 2 * k, |i, j| {
        if j < k {
            f64::from(u8::from(i == j))
        } else {
            rng.random::<f64>()
        }
    });
    CorrelationMatrix::from_covariance(&(&g * g.transpose()))
}

pub fn sweep_row(x: Vec<f64>, m: CorrelationMatrix, target_se: f64, seed: u64) -> Result<(SweepRow, JEvaluation)> {
    let q = JQuery::new(x.clone(), m.clone())?;
    let eval = hadamard_hessian(&q, target_se, seed)?;
    let (top, se) = eval.max_eigenvalue();
    Ok((
        SweepRow {
            x,
            m: m.rows(),
            max_eigenvalue: top,
            se,
            within_tolerance: top <= DERIVATIVE_MARGIN + 3.0 * se,
            kernel: kernel_diagnostic(&eval),
        },
        eval,
    ))
}

pub fn hessian_sweep(spec: &SweepSpec, cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    sweep_points(spec, cfg.seed)?
        .into_iter()
        .enumerate()
        .map(|(r, (x, m))| sweep_row(x, m, cfg.target_se, derive_seed(cfg.seed, r as u64)).map(|(row, _)| row))
        .collect()
}

/// The two sufficient conditions on M, side by side.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionRow {
    pub name: String,
    pub m: Vec<Vec<f64>>,
    pub positive_definite: bool,
    pub entrywise_nonnegative: bool,
    pub inverse_offdiag_nonpositive: Option<bool>,
}

fn condition_row(name: String, m: &CorrelationMatrix) -> ConditionRow {
    ConditionRow {
        name,
        m: m.rows(),
        positive_definite: min_eigenvalue(m.matrix()) > crate::gaussian::linalg::SINGULAR_TOLERANCE,
        entrywise_nonnegative: m.is_entrywise_nonnegative(),
        inverse_offdiag_nonpositive: inverse_offdiag_nonpositive(m).ok(),
    }
}

/// The configured matrix, then `count` OU matrices with k cycling through 2..=k.
pub fn condition_check(cfg: &ExperimentConfig) -> Result<Vec<ConditionRow>> {
    let mut rows = Vec::new();
    if let Some(spec) = &cfg.matrix {
        rows.push(condition_row("matrix".into(), &spec.build()?));
    }
    match &cfg.sweep {
        Some(SweepSpec::RandomOu { k, count }) => {
            let mut rng = ShardRng::seed_from_u64(derive_seed(cfg.seed, STREAM_SWEEP));
            let span = k.saturating_sub(1).max(1);
            for i in 0..*count {
                let ki = (2 + i % span).min(*k);
                rows.push(condition_row(format!("ou-{i}"), &random_ou(&mut rng, ki)?));
            }
        }
        Some(other) => {
            return Err(Error::Config {
                line: 0,
                field: "sweep".into(),
                message: format!("condition-check accepts only kind = random-ou, got {other:?}"),
            })
        }
        None => {}
    }
    Ok(rows)
}

/// Results, optional structured details and the CSV table of one experiment.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub results: Vec<ComparisonResult>,
    pub details: Option<serde_json::Value>,
    pub table: Table,
}

fn comparison_table(results: &[ComparisonResult], param: Option<(&str, Vec<f64>)>) -> Table {
    let mut columns: Vec<String> = Vec::new();
    if let Some((p, _)) = &param {
        columns.push((*p).into());
    } else {
        columns.push("name".into());
    }
    for c in ["lhs", "lhs_se", "lhs_samples", "rhs", "rhs_se", "rhs_samples", "paired_se", "margin_se", "verdict"] {
        columns.push(c.into());
    }
    let rows = results
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut row = vec![match &param {
                Some((_, vals)) => Cell::F(vals[i]),
                None => Cell::S(r.name.clone()),
            }];
            row.extend([
                Cell::F(r.lhs.value),
                Cell::F(r.lhs.std_error),
                Cell::U(r.lhs.samples),
                Cell::F(r.rhs.value),
                Cell::F(r.rhs.std_error),
                Cell::U(r.rhs.samples),
                Cell::F(r.paired_se.unwrap_or(f64::NAN)),
                Cell::F(r.margin_se),
                Cell::S(r.verdict.as_str().into()),
            ]);
            row
        })
        .collect();
    Table { columns, rows }
}

fn to_value<T: Serialize>(v: &T) -> Option<serde_json::Value> {
    serde_json::to_value(v).ok()
}

/// Dispatches on the experiment kind.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Outcome> {
    match cfg.experiment {
        ExperimentKind::VerifyMain => {
            let r = verify_main_inequality(cfg)?;
            let results = vec![r];
            Ok(Outcome {
                table: comparison_table(&results, None),
                results,
                details: None,
            })
        }
        ExperimentKind::NoiseStability => {
            let sets = need_sets(cfg, 2)?;
            let results = vec![verify_noise_stability(&sets[0], &sets[1], cfg.t, cfg)?];
            Ok(Outcome {
                table: comparison_table(&results, None),
                results,
                details: None,
            })
        }
        ExperimentKind::ExitTime => {
            let sets = need_sets(cfg, 1)?;
            let results = verify_exit_dominance(&sets[0], &cfg.taus, cfg)?;
            Ok(Outcome {
                table: comparison_table(&results, Some(("tau", cfg.taus.clone()))),
                results,
                details: None,
            })
        }
        ExperimentKind::Occupation => {
            let sets = need_sets(cfg, 2)?;
            let results = cfg
                .taus
                .iter()
                .map(|&tau| verify_occupation(&sets[0], &sets[1], tau, cfg))
                .collect::<Result<Vec<_>>>()?;
            Ok(Outcome {
                table: comparison_table(&results, Some(("tau", cfg.taus.clone()))),
                results,
                details: None,
            })
        }
        ExperimentKind::HessianSweep => {
            let spec = cfg.sweep.as_ref().ok_or_else(|| Error::Config {
                line: 0,
                field: "sweep".into(),
                message: "hessian-sweep needs a [sweep] section".into(),
            })?;
            let rows = hessian_sweep(spec, cfg)?;
            let k = rows.first().map_or(0, |r| r.x.len());
            let mut columns: Vec<String> = (1..=k).map(|i| format!("x_{i}")).collect();
            for i in 0..k {
                for j in (i + 1)..k {
                    columns.push(format!("m_{}{}", i + 1, j + 1));
                }
            }
            columns.extend(["max_eigenvalue", "se", "within_tolerance", "verdict"].map(String::from));
            let mut results = Vec::with_capacity(rows.len());
            let table_rows = rows
                .iter()
                .map(|r| {
                    let name = format!("hessian x={:?}", r.x);
                    let lhs = Estimate {
                        value: r.max_eigenvalue,
                        std_error: r.se,
                        samples: 0,
                        seed: cfg.seed,
                    };
                    let c = ComparisonResult::new(name, lhs, Estimate::exact(DERIVATIVE_MARGIN));
                    let mut row: Vec<Cell> = r.x.iter().map(|&v| Cell::F(v)).collect();
                    for i in 0..k {
                        for j in (i + 1)..k {
                            row.push(Cell::F(r.m[i][j]));
                        }
                    }
                    row.extend([
                        Cell::F(r.max_eigenvalue),
                        Cell::F(r.se),
                        Cell::B(r.within_tolerance),
                        Cell::S(c.verdict.as_str().into()),
                    ]);
                    results.push(c);
                    row
                })
                .collect();
            Ok(Outcome {
                results,
                details: to_value(&rows),
                table: Table { columns, rows: table_rows },
            })
        }
        ExperimentKind::EqualityDiagnostic => {
            let system = cfg.set_system()?;
            let d = equality_diagnostic_run(&system, cfg.t, cfg)?;
            let n = system.dim();
            let mut columns: Vec<String> = vec!["set".into()];
            columns.extend((1..=n).map(|i| format!("a_{i}")));
            columns.extend(["offset", "slope", "residual", "probes"].map(String::from));
            let rows = (0..system.len())
                .map(|i| {
                    let mut row = vec![Cell::S(cfg.system[i].clone())];
                    row.extend(d.directions[i].iter().map(|&v| Cell::F(v)));
                    row.extend([
                        Cell::F(d.offsets[i]),
                        Cell::F(d.slopes[i]),
                        Cell::F(d.residuals[i]),
                        Cell::U(d.probes_used[i] as u64),
                    ]);
                    row
                })
                .collect();
            Ok(Outcome {
                results: Vec::new(),
                details: to_value(&d),
                table: Table { columns, rows },
            })
        }
        ExperimentKind::ConditionCheck => {
            let rows = condition_check(cfg)?;
            let columns = ["name", "positive_definite", "entrywise_nonnegative", "inverse_offdiag_nonpositive"]
                .map(String::from)
                .to_vec();
            let table_rows = rows
                .iter()
                .map(|r| {
                    vec![
                        Cell::S(r.name.clone()),
                        Cell::B(r.positive_definite),
                        Cell::B(r.entrywise_nonnegative),
                        match r.inverse_offdiag_nonpositive {
                            Some(b) => Cell::B(b),
                            None => Cell::S("singular".into()),
                        },
                    ]
                })
                .collect();
            Ok(Outcome {
                results: Vec::new(),
                details: to_value(&rows),
                table: Table {
                    columns,
                    rows: table_rows,
                },
            })
        }
    }
}

/// True when every result is holds or equality_band.
pub fn all_ok(results: &[ComparisonResult]) -> bool {
    results.iter().all(|r| r.verdict != Verdict::Violated)
}
