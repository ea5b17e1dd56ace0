use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_noise-stability");

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("NOISE_STABILITY_SEED")
        .output()
        .expect("binary runs")
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Report text with the wall-clock field removed.
fn without_runtime(text: &str) -> String {
    text.lines().filter(|l| !l.trim_start().starts_with("\"runtime_seconds\"")).collect::<Vec<_>>().join("\n")
}

#[test]
fn parallel_halfspaces_sit_in_the_equality_band() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("parallel.json");
    let cfg = config_path("parallel.cfg");
    let o = run(&["verify-main", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--quiet"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report = json(&out);
    assert_eq!(report["experiment"], "verify-main");
    assert_eq!(report["results"][0]["verdict"], "equality_band");
    assert!(report["config"].as_str().unwrap().contains("samples = 1000000"));
    assert!(report["runtime_seconds"].as_f64().unwrap() >= 0.0);
}

#[test]
fn hessian_sweep_writes_81_csv_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("k2grid.csv");
    let cfg = config_path("k2grid.cfg");
    let o = run(&["hessian-sweep", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(&out).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert!(header.contains(&"max_eigenvalue") && header.contains(&"within_tolerance"), "{header:?}");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 81);
    assert!(rows.iter().all(|r| r.split(',').count() == header.len()));
    let report = json(&dir.path().join("k2grid.json"));
    assert_eq!(report["csv_schema"].as_array().unwrap().len(), header.len());
}

#[test]
fn negative_correlation_is_a_hypothesis_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("neg.cfg");
    std::fs::write(
        &cfg,
        "experiment = verify-main\nn = 1\nseed = 1\nsamples = 1000\nsets = A, B\n\n\
         [matrix]\nkind = equicorrelated\nk = 2\nrho = -0.3\n\n\
         [set.A]\nkind = halfspace\nnormal = 1\noffset = 0\n\n\
         [set.B]\nkind = halfspace\nnormal = 1\noffset = 0.5\n",
    )
    .unwrap();
    let out = dir.path().join("neg.json");
    let o = run(&["verify-main", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("hypothesis"), "{stderr}");
    let report = json(&out);
    assert!(report["error"].as_str().unwrap().contains("hypothesis"));
    assert!(report["results"].as_array().unwrap().is_empty());
}

#[test]
fn malformed_config_points_at_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "experiment = verify-main\nn = 2\n\n[matrix]\nkind = equicorrelated\nk = two\n").unwrap();
    let o = run(&["verify-main", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("line 6") && stderr.contains("`k`"), "{stderr}");

    let o = run(&["exit-time", "--config", config_path("parallel.cfg").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("does not match"));
}

#[test]
fn usage_exit_codes() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["verify-main", "--samples", "lots"]).status.code(), Some(1));
    assert_eq!(run(&["occupation", "--config", "/nonexistent.cfg"]).status.code(), Some(1));
}

#[test]
fn reports_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    for (cmd, extra) in [
        ("noise-stability", vec!["--samples", "200000"]),
        ("exit-time", vec!["--paths", "5000", "--steps", "64", "--tau", "0.2,0.6"]),
        ("equality-diagnostic", vec![]),
        ("condition-check", vec![]),
    ] {
        let mut texts = Vec::new();
        // Same output path both times: the path is part of the embedded config.
        let out = dir.path().join(format!("{cmd}.json"));
        for _ in 0..2 {
            let mut args = vec![cmd, "--out", out.to_str().unwrap(), "--quiet", "--seed", "42"];
            args.extend(extra.iter().copied());
            let o = run(&args);
            assert_eq!(o.status.code(), Some(0), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
            texts.push(std::fs::read_to_string(&out).unwrap());
        }
        assert_eq!(without_runtime(&texts[0]), without_runtime(&texts[1]), "{cmd}");
    }
}

#[test]
fn seed_comes_from_the_environment_when_unset() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cc.cfg");
    std::fs::write(&cfg, "experiment = condition-check\n\n[sweep]\nkind = random-ou\nk = 3\ncount = 2\n").unwrap();
    let out = dir.path().join("cc.json");
    let o = Command::new(BIN)
        .args(["condition-check", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--quiet"])
        .env("NOISE_STABILITY_SEED", "1234")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(json(&out)["config"].as_str().unwrap().contains("seed = 1234"));
}
