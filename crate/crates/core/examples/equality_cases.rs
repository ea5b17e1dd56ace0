//! Joint containment against parallel half-spaces, and the equality diagnostic.
//!
//! `cargo run --release --example equality_cases`

use noise_stability::geometry::{SetExpr, SetSystem};
use noise_stability::verify::{equality_diagnostic_run, verify_main_inequality, ExperimentConfig, ExperimentKind, MatrixSpec, SetSpec, Size};

fn main() -> noise_stability::Result<()> {
    let mut cfg = ExperimentConfig::new(ExperimentKind::VerifyMain, 5);
    cfg.n = 2;
    cfg.samples = 400_000;
    cfg.sets = vec![
        ("A".into(), SetSpec::Ball { center: vec![0.4, 0.0], radius: Size::Measure(0.5) }),
        ("B".into(), SetSpec::AxisBox { lo: vec![-1.0, -1.5], hi: vec![1.5, 1.0] }),
    ];
    cfg.system = vec!["A".into(), "B".into()];
    cfg.matrix = Some(MatrixSpec::OuTimes { times: vec![0.0, 0.3] });
    let r = verify_main_inequality(&cfg)?;
    println!("{}: joint {:.5} vs parallel {:.5} -> {} ({:+.1} SE)", r.name, r.lhs.value, r.rhs.value, r.verdict.as_str(), r.margin_se);

    let parallel = SetSystem::new(vec![SetExpr::half_space(vec![1.0, 1.0], 0.2)?, SetExpr::half_space(vec![1.0, 1.0], -0.5)?])?;
    let balls = SetSystem::new(vec![SetExpr::ball(vec![0.0, 0.0], 1.0)?, SetExpr::ball(vec![0.0, 0.0], 1.5)?])?;
    let mut dcfg = ExperimentConfig::new(ExperimentKind::EqualityDiagnostic, 6);
    dcfg.samples = 100_000;
    for (name, sys) in [("parallel half-spaces", parallel), ("concentric balls", balls)] {
        let d = equality_diagnostic_run(&sys, 0.5, &dcfg)?;
        println!(
            "{name}: largest residual {:.1e}, slopes {:.3?} (k_t = {:.3}), consistent with equality: {}",
            d.residuals.iter().cloned().fold(0.0, f64::max), d.slopes, d.k_t, d.consistent_with_equality
        );
    }
    Ok(())
}
