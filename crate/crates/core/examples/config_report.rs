//! Build a config in code, print its canonical text, run it and emit the JSON report.
//!
//! `cargo run --release --example config_report`

use noise_stability::verify::cli::run;
use noise_stability::verify::{condition_check, ExperimentConfig, ExperimentKind, MatrixSpec, SweepSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = ExperimentConfig::new(ExperimentKind::ConditionCheck, 17);
    cfg.matrix = Some(MatrixSpec::Explicit { k: 3, entries: vec![1.0, 0.7, 0.7, 0.7, 1.0, 0.0, 0.7, 0.0, 1.0] });
    cfg.sweep = Some(SweepSpec::RandomOu { k: 4, count: 4 });
    let text = cfg.emit();
    println!("--- config ---\n{text}");
    assert_eq!(ExperimentConfig::parse(&text, 0)?, cfg);

    for row in condition_check(&cfg)? {
        println!(
            "{:8} entrywise nonnegative: {:5}  inverse off-diagonal nonpositive: {:?}",
            row.name, row.entrywise_nonnegative, row.inverse_offdiag_nonpositive
        );
    }

    let dir = std::env::temp_dir().join("noise-stability-example");
    std::fs::create_dir_all(&dir)?;
    let cfg_path = dir.join("condition.cfg");
    let out = dir.join("condition.json");
    std::fs::write(&cfg_path, &text)?;
    let code = run(["noise-stability", "condition-check", "--config", cfg_path.to_str().ok_or("non-UTF-8 temp path")?, "--out", out.to_str().ok_or("non-UTF-8 temp path")?, "--quiet"]);
    println!("--- exit code {code}, report {} ---", out.display());
    print!("{}", std::fs::read_to_string(&out)?);
    Ok(())
}
