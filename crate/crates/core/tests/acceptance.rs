//! Acceptance criteria 1–10. Each test prints one `criterion N: PASS|FAIL` line
//! to stderr (uncaptured) and then asserts. Tests hold a common lock so that
//! the runtime limits are measured without competition.

mod common;

use std::io::Write as _;
use std::sync::{Mutex, OnceLock};
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use noise_stability::functional::{
    j_diag_second, j_grad, j_mixed_second, j_value, j_value_with, kernel_diagnostic, JEvaluation, JQuery,
    KernelDiagnostic,
};
use noise_stability::gaussian::{inverse_offdiag_nonpositive, laplacian_quadratic_form, ou_covariance, CorrelationMatrix};
use noise_stability::geometry::SetExpr;
use noise_stability::orthant::QmcOptions;
use noise_stability::ou::{gradient_bound_check, semigroup_apply};
use noise_stability::verify::cli::{default_config, run};
use noise_stability::verify::experiments::random_nonneg;
use noise_stability::verify::{
    condition_check, run_experiment, sweep_points, sweep_row, verify_main_inequality, ExperimentConfig,
    ExperimentKind, MatrixSpec, SetSpec, Size, SweepSpec, Verdict,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn announce(n: u32, pass: bool, detail: &str) {
    let line = format!("criterion {n}: {} {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

#[test]
fn criterion_01_bivariate_exactness() {
    let _g = serial();
    let start = Instant::now();
    let q = JQuery::new(vec![0.5, 0.5], CorrelationMatrix::bivariate(0.5).unwrap()).unwrap();
    let e = j_value(&q, 1e-6, 1).unwrap();
    let elapsed = start.elapsed();
    let oracle = common::arcsine_orthant(0.5);
    assert!((oracle - 1.0 / 3.0).abs() < 1e-15);
    let err = (e.value - oracle).abs();
    let tol = (3.0 * e.std_error).max(1e-4);
    let pass = err <= tol && elapsed < Duration::from_secs(1);
    announce(1, pass, &format!("J = {:.10} (se {:.1e}), |err| = {err:.1e} <= {tol:.1e}, {:.3} s", e.value, e.std_error, secs(elapsed)));
    assert!(pass);
}

fn random_correlation(rng: &mut ChaCha8Rng, k: usize) -> CorrelationMatrix {
    let g = DMatrix::from_fn(k, k + 1, |_, _| rng.random_range(-1.0..1.0));
    let cov = &g * g.transpose() + DMatrix::identity(k, k) * 0.1;
    CorrelationMatrix::from_covariance(&cov).unwrap()
}

/// J on a fixed lattice design: a smooth function of x for finite differences.
fn j_fixed(x: &[f64], m: &CorrelationMatrix) -> f64 {
    let q = JQuery::new(x.to_vec(), m.clone()).unwrap();
    j_value_with(&q, &QmcOptions::fixed(1 << 14, 99)).unwrap().value
}

fn bumped(x: &[f64], moves: &[(usize, f64)]) -> Vec<f64> {
    let mut y = x.to_vec();
    for &(i, h) in moves {
        y[i] += h;
    }
    y
}

#[test]
fn criterion_02_derivative_fidelity() {
    let _g = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    let mut checked = 0;
    for case in 0..20 {
        let k = rng.random_range(2..=4);
        let m = random_correlation(&mut rng, k);
        let x: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..0.9)).collect();
        let q = JQuery::new(x.clone(), m.clone()).unwrap();
        let j = |y: Vec<f64>| j_fixed(&y, &m);
        let mut check = |what: String, closed: f64, se: f64, fd: f64| {
            let rel = (closed - fd).abs() / fd.abs().max(0.01);
            let allowed = 1e-3 + 3.0 * se / fd.abs().max(0.01);
            worst = worst.max(rel);
            checked += 1;
            if rel > allowed {
                failures.push(format!("case {case} {what}: closed {closed} fd {fd}"));
            }
        };
        let seed = case as u64;
        let (h1, h2) = (1e-4, 1e-3);
        let j0 = j(x.clone());
        for i in 0..k {
            let fd = (j(bumped(&x, &[(i, h1)])) - j(bumped(&x, &[(i, -h1)]))) / (2.0 * h1);
            let g = j_grad(&q, i, 1e-6, seed).unwrap();
            check(format!("d{i}"), g.value, g.std_error, fd);

            let fd = (j(bumped(&x, &[(i, h2)])) - 2.0 * j0 + j(bumped(&x, &[(i, -h2)]))) / (h2 * h2);
            let d = j_diag_second(&q, i, 1e-5, seed).unwrap();
            check(format!("d{i}d{i}"), d.value, d.std_error, fd);

            // Both the stencil and the closed form are symmetric in (i, j).
            for jj in i + 1..k {
                let fd = (j(bumped(&x, &[(i, h2), (jj, h2)])) - j(bumped(&x, &[(i, h2), (jj, -h2)]))
                    - j(bumped(&x, &[(i, -h2), (jj, h2)]))
                    + j(bumped(&x, &[(i, -h2), (jj, -h2)])))
                    / (4.0 * h2 * h2);
                let e = j_mixed_second(&q, i, jj, 1e-5, seed).unwrap();
                check(format!("d{i}d{jj}"), e.value, e.std_error, fd);
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = failures.is_empty() && elapsed < Duration::from_secs(120);
    announce(
        2,
        pass,
        &format!("{checked} derivatives on 20 points, worst relative error {worst:.1e}, {:.1} s", secs(elapsed)),
    );
    assert!(pass, "{failures:#?}");
}

struct Sweep {
    evaluations: Vec<JEvaluation>,
    rows_ok: usize,
    worst_margin: f64,
    elapsed: Duration,
}

/// The criterion-3 sweep, shared with criterion 4.
fn sweep() -> &'static Sweep {
    static SWEEP: OnceLock<Sweep> = OnceLock::new();
    SWEEP.get_or_init(|| {
        let start = Instant::now();
        let mut points = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let k = rng.random_range(2..=4);
            let m = random_nonneg(&mut rng, k).unwrap();
            let x: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..0.95)).collect();
            points.push((x, m));
        }
        let grid: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
        let spec = SweepSpec::Grid { k: 2, x: grid.clone(), rho: grid };
        points.extend(sweep_points(&spec, 3).unwrap());
        assert_eq!(points.len(), 100 + 729);

        let mut evaluations = Vec::with_capacity(points.len());
        let mut rows_ok = 0;
        let mut worst_margin = f64::NEG_INFINITY;
        for (idx, (x, m)) in points.into_iter().enumerate() {
            let (row, ev) = sweep_row(x, m, 1e-6, idx as u64).unwrap();
            let (top, se) = ev.max_eigenvalue();
            assert_eq!(top, row.max_eigenvalue);
            if top <= 1e-6 + 3.0 * se {
                rows_ok += 1;
            }
            worst_margin = worst_margin.max(top - 1e-6 - 3.0 * se);
            evaluations.push(ev);
        }
        Sweep { evaluations, rows_ok, worst_margin, elapsed: start.elapsed() }
    })
}

#[test]
fn criterion_03_hadamard_hessian_sweep() {
    let _g = serial();
    let s = sweep();
    let total = s.evaluations.len();
    let pass = s.rows_ok == total && s.elapsed < Duration::from_secs(300);
    announce(
        3,
        pass,
        &format!(
            "{}/{total} points with max eigenvalue <= 1e-6 + 3 SE (worst excess {:.1e}), {:.1} s",
            s.rows_ok,
            s.worst_margin,
            secs(s.elapsed)
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_04_laplacian_structure() {
    let _g = serial();
    let s = sweep();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_form = 0.0f64;
    let mut rows_exact = true;
    let mut worst_alignment = 1.0f64;
    let mut applicable = 0;
    for ev in &s.evaluations {
        let a = &ev.a_matrix.value;
        let k = ev.dim();
        rows_exact &= ev.a_row_sums().iter().all(|&r| r == 0.0);
        let dense: Vec<Vec<f64>> = (0..k).map(|i| a.row(i).iter().copied().collect()).collect();
        for _ in 0..3 {
            let v: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
            let fast = laplacian_quadratic_form(a, &v).unwrap();
            worst_form = worst_form.max((fast - common::dense_quadratic(&dense, &v)).abs());
        }
        if let KernelDiagnostic::Applicable { kernel_alignment, .. } = kernel_diagnostic(ev) {
            applicable += 1;
            worst_alignment = worst_alignment.min(kernel_alignment);
        }
    }
    let pass = worst_form <= 1e-8 && rows_exact && worst_alignment >= 1.0 - 1e-6;
    announce(
        4,
        pass,
        &format!(
            "{} A matrices: max |form - dense| {worst_form:.1e}, A·1 exactly 0: {rows_exact}, min alignment {worst_alignment:.9} over {applicable} with all a_ij > 0",
            s.evaluations.len()
        ),
    );
    assert!(pass);
}

fn random_leaf(rng: &mut ChaCha8Rng, n: usize) -> SetSpec {
    if rng.random_bool(0.5) {
        let center: Vec<f64> = (0..n).map(|_| rng.random_range(-0.7..0.7)).collect();
        SetSpec::Ball { center, radius: Size::Literal(rng.random_range(0.8..2.2)) }
    } else {
        let lo: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..0.0)).collect();
        let hi: Vec<f64> = lo.iter().map(|l| l + rng.random_range(1.2..3.5)).collect();
        SetSpec::AxisBox { lo, hi }
    }
}

fn random_system(rng: &mut ChaCha8Rng, seed: u64) -> ExperimentConfig {
    let k = rng.random_range(2..=3);
    let n = rng.random_range(2..=3);
    let mut cfg = ExperimentConfig::new(ExperimentKind::VerifyMain, seed);
    cfg.n = n;
    cfg.samples = 1_000_000;
    for i in 0..k {
        let name = format!("A{i}");
        if rng.random_bool(0.4) {
            let (l, r) = (format!("A{i}l"), format!("A{i}r"));
            cfg.sets.push((l.clone(), random_leaf(rng, n)));
            cfg.sets.push((r.clone(), random_leaf(rng, n)));
            cfg.sets.push((name.clone(), SetSpec::Union { members: vec![l, r] }));
        } else {
            cfg.sets.push((name.clone(), random_leaf(rng, n)));
        }
        cfg.system.push(name);
    }
    cfg.matrix = Some(if rng.random_bool(0.5) {
        let mut t = 0.0;
        MatrixSpec::OuTimes {
            times: (0..k)
                .map(|_| {
                    t += rng.random_range(0.05..1.0);
                    t
                })
                .collect(),
        }
    } else {
        MatrixSpec::Equicorrelated { k, rho: rng.random_range(0.0..0.95) }
    });
    cfg.validate().unwrap();
    cfg
}

#[test]
fn criterion_05_joint_containment() {
    let _g = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut verdicts = Vec::new();
    let mut worst = f64::INFINITY;
    for i in 0..10 {
        let cfg = random_system(&mut rng, 500 + i);
        let r = verify_main_inequality(&cfg).unwrap();
        worst = worst.min(r.margin_se);
        verdicts.push(r.verdict);
    }
    let random_ok = verdicts.iter().all(|v| *v != Verdict::Violated);

    let mut parallel = vec![ExperimentConfig::parse(include_str!("../configs/parallel.cfg"), 0).unwrap()];
    for (k, rho, seed) in [(2, 0.6, 51), (3, 0.3, 52)] {
        let mut cfg = ExperimentConfig::new(ExperimentKind::VerifyMain, seed);
        cfg.n = 3;
        cfg.samples = 1_000_000;
        for i in 0..k {
            let name = format!("B{i}");
            let p = 0.2 + 0.25 * i as f64;
            cfg.sets.push((name.clone(), SetSpec::HalfSpace { normal: vec![0.3, -1.0, 0.5], bound: Size::Measure(p) }));
            cfg.system.push(name);
        }
        cfg.matrix = Some(MatrixSpec::Equicorrelated { k, rho });
        parallel.push(cfg);
    }
    let parallel_margins: Vec<f64> = parallel.iter().map(|c| verify_main_inequality(c).unwrap().margin_se).collect();
    let parallel_ok = parallel_margins.iter().all(|m| m.abs() <= 3.0);
    let elapsed = start.elapsed();
    let pass = random_ok && parallel_ok && elapsed < Duration::from_secs(600);
    let counts = |v: Verdict| verdicts.iter().filter(|x| **x == v).count();
    announce(
        5,
        pass,
        &format!(
            "random systems: {} holds, {} equality_band, {} violated (min margin {worst:.2} SE); parallel margins {:?}; {:.1} s",
            counts(Verdict::Holds),
            counts(Verdict::EqualityBand),
            counts(Verdict::Violated),
            parallel_margins.iter().map(|m| (m * 100.0).round() / 100.0).collect::<Vec<_>>(),
            secs(elapsed)
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_06_exit_time_dominance() {
    let _g = serial();
    let start = Instant::now();
    let cfg = ExperimentConfig::parse(default_config(ExperimentKind::ExitTime), 0).unwrap();
    assert_eq!(cfg.steps, 512);
    assert_eq!(cfg.paths, 100_000);
    assert_eq!(cfg.taus.len(), 10);
    let base = run_experiment(&cfg).unwrap().results;
    let mut fine_cfg = cfg.clone();
    fine_cfg.steps = 1024;
    let fine = run_experiment(&fine_cfg).unwrap().results;
    let elapsed = start.elapsed();

    let dominance = base.iter().all(|r| r.verdict != Verdict::Violated && r.lhs.value <= r.rhs.value);
    let min_margin = base.iter().map(|r| r.margin_se).fold(f64::INFINITY, f64::min);
    let mut worst_shift = 0.0f64;
    let mut shifts = Vec::new();
    for (c, f) in base.iter().zip(&fine) {
        for (a, b) in [(&c.lhs, &f.lhs), (&c.rhs, &f.rhs)] {
            let s = (b.value - a.value) / a.std_error;
            worst_shift = worst_shift.max(s.abs());
            shifts.push(s);
        }
    }
    let refinement = worst_shift < 1.0;
    let pass = dominance && refinement && elapsed < Duration::from_secs(300);
    announce(
        6,
        pass,
        &format!(
            "dominance at all 10 horizons: {dominance} (min margin {min_margin:.1} SE); doubling 512 -> 1024 steps moves estimates by up to {worst_shift:.2} SE (limit 1): {refinement}; {:.1} s",
            secs(elapsed)
        ),
    );
    assert!(dominance, "dominance failed");
    assert!(elapsed < Duration::from_secs(300));
    assert!(refinement, "refinement shifts in SE units: {shifts:.2?}");
}

#[test]
fn criterion_07_occupation_time() {
    let _g = serial();
    let start = Instant::now();
    let cfg = ExperimentConfig::parse(default_config(ExperimentKind::Occupation), 0).unwrap();
    let balls = run_experiment(&cfg).unwrap().results;
    assert_eq!(balls.len(), 1);
    let ball_ok = balls[0].verdict == Verdict::Holds;

    let mut hs = cfg.clone();
    hs.sets = vec![
        ("H1".into(), SetSpec::HalfSpace { normal: vec![1.0, 0.0], bound: Size::Measure(0.6) }),
        ("H2".into(), SetSpec::HalfSpace { normal: vec![1.0, 0.0], bound: Size::Measure(0.3) }),
    ];
    hs.system = vec!["H1".into(), "H2".into()];
    let parallel = run_experiment(&hs).unwrap().results;
    let parallel_ok = parallel[0].verdict == Verdict::EqualityBand;
    let elapsed = start.elapsed();
    let pass = ball_ok && parallel_ok && elapsed < Duration::from_secs(300);
    announce(
        7,
        pass,
        &format!(
            "concentric balls: {} ({:.4} vs {:.4}, margin {:.1} SE); parallel half-spaces: {} (margin {:.2} SE); {:.1} s",
            balls[0].verdict.as_str(),
            balls[0].lhs.value,
            balls[0].rhs.value,
            balls[0].margin_se,
            parallel[0].verdict.as_str(),
            parallel[0].margin_se,
            secs(elapsed)
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_08_semigroup_closed_form() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    for i in 0..10 {
        let n = rng.random_range(1..=3);
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        let c: f64 = rng.random_range(-1.5..1.5);
        let t: f64 = rng.random_range(0.05..2.0);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let u = a.iter().zip(&x).map(|(a, x)| a * x).sum::<f64>() / norm;
        let closed = common::phi_cdf((c - (-t).exp() * u) / (1.0 - (-2.0 * t).exp()).sqrt());
        let s = SetExpr::half_space(a.clone(), c * norm).unwrap();
        let mc = semigroup_apply(&s, t, &x, 1_000_000, 800 + i).unwrap();
        worst = worst.max((mc.value - closed).abs() / mc.std_error.max(1e-9));
    }
    let closed_ok = worst <= 3.0;

    let mut half_ratios = Vec::new();
    for (i, t) in [0.1, 0.5, 1.0, 2.0].into_iter().enumerate() {
        let a: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s = SetExpr::half_space(a, rng.random_range(-1.0..1.0)).unwrap();
        half_ratios.push(gradient_bound_check(&s, t, 100, i as u64).unwrap().max_ratio);
    }
    let mut ball_ratios = Vec::new();
    for (i, t) in [0.1, 0.5, 1.0, 2.0].into_iter().enumerate() {
        let s = SetExpr::ball(vec![rng.random_range(-0.5..0.5), 0.0], rng.random_range(0.5..2.0)).unwrap();
        ball_ratios.push(gradient_bound_check(&s, t, 100, 10 + i as u64).unwrap().max_ratio);
    }
    let union = SetExpr::union(vec![
        SetExpr::ball(vec![-1.0, 0.0], 0.8).unwrap(),
        SetExpr::ball(vec![1.0, 0.0], 0.8).unwrap(),
    ])
    .unwrap();
    let union_check = gradient_bound_check(&union, 0.5, 10, 20).unwrap();
    let half_ok = half_ratios.iter().all(|r| (r - 1.0).abs() <= 0.02);
    let ball_ok = ball_ratios.iter().all(|r| *r <= 1.02)
        && union_check.max_ratio <= 1.02 + 3.0 * union_check.ratio_se;
    let pass = closed_ok && half_ok && ball_ok;
    announce(
        8,
        pass,
        &format!(
            "MC vs closed form worst {worst:.2} SE; half-space ratios {half_ratios:.4?}; ball ratios {ball_ratios:.4?}; union of balls {:.3} ± {:.3}",
            union_check.max_ratio, union_check.ratio_se
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_09_hypothesis_comparison() {
    let _g = serial();
    let cfg = ExperimentConfig::parse(default_config(ExperimentKind::ConditionCheck), 0).unwrap();
    let rows = condition_check(&cfg).unwrap();
    let (witness, ou): (Vec<_>, Vec<_>) = rows.iter().partition(|r| r.name == "matrix");
    let ou_ok = ou.len() == 20
        && ou.iter().all(|r| r.m.len() <= 5 && r.entrywise_nonnegative && r.inverse_offdiag_nonpositive == Some(true));

    let explicit = CorrelationMatrix::from_rows(3, &[1.0, 0.7, 0.7, 0.7, 1.0, 0.0, 0.7, 0.0, 1.0]).unwrap();
    let witness_ok = witness.len() == 1
        && witness[0].m == explicit.rows()
        && witness[0].entrywise_nonnegative
        && witness[0].inverse_offdiag_nonpositive == Some(false);

    // Independent grids, checked directly.
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let direct_ok = (0..20).all(|i| {
        let k = 2 + i % 4;
        let mut t = rng.random_range(-1.0..1.0);
        let times: Vec<f64> = (0..k)
            .map(|_| {
                t += rng.random_range(0.01..1.5);
                t
            })
            .collect();
        let m = ou_covariance(&times).unwrap();
        m.is_entrywise_nonnegative() && inverse_offdiag_nonpositive(&m).unwrap()
    });
    let pass = ou_ok && witness_ok && direct_ok;
    announce(
        9,
        pass,
        &format!(
            "{} OU matrices satisfy both conditions: {}; explicit k=3 matrix nonnegative and fails the inverse condition: {witness_ok}",
            ou.len(),
            ou_ok && direct_ok
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_10_reproducibility() {
    let _g = serial();
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut identical = 0;
    let mut differing = Vec::new();
    for kind in ExperimentKind::ALL {
        let name = kind.as_str();
        let mut texts = Vec::new();
        let out = dir.path().join(format!("{name}.json"));
        let csv = dir.path().join(format!("{name}.csv"));
        for _ in 0..2 {
            let code = run(["noise-stability", name, "--quiet", "--out", out.to_str().unwrap(), "--format", "json"]);
            assert_eq!(code, 0, "{name}");
            texts.push(std::fs::read_to_string(&out).unwrap());
            let code = run(["noise-stability", name, "--quiet", "--out", csv.to_str().unwrap(), "--format", "csv"]);
            assert_eq!(code, 0, "{name} csv");
            texts.push(std::fs::read_to_string(&csv).unwrap());
        }
        let strip = |s: &str| {
            s.lines().filter(|l| !l.trim_start().starts_with("\"runtime_seconds\"")).collect::<Vec<_>>().join("\n")
        };
        if strip(&texts[0]) == strip(&texts[2]) && texts[1] == texts[3] {
            identical += 1;
        } else {
            differing.push(name);
        }
    }
    let elapsed = start.elapsed();
    let pass = differing.is_empty();
    announce(
        10,
        pass,
        &format!(
            "{identical}/{} experiments give byte-identical JSON reports (runtime_seconds excluded) and CSV tables across two runs; {:.1} s",
            ExperimentKind::ALL.len(),
            secs(elapsed)
        ),
    );
    assert!(pass, "differing: {differing:?}");
}
