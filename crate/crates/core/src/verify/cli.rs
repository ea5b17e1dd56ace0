//! Command-line surface. Exit codes: 0 when every verdict is holds or
//! equality_band, 2 on any violated verdict, 1 on usage, config or hypothesis
//! errors. The report is written before any nonzero exit that has one.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use super::config::{ExperimentConfig, ExperimentKind, OutputFormat};
use super::experiments::run_experiment;
use super::report::Report;
use super::{exit_code, Verdict};
use crate::error::Error;

/// Environment variable holding the default seed when neither the config nor
/// `--seed` sets one.
pub const SEED_ENV: &str = "NOISE_STABILITY_SEED";

/// Longer result lists are summarized by verdict counts on stderr.
const SUMMARY_LINES: usize = 20;

#[derive(Parser, Debug)]
#[command(name = "noise-stability", version, about = "Monte-Carlo checks of Gaussian noise-stability inequalities")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Joint containment against J at the set measures.
    VerifyMain(Flags),
    /// Two-time OU containment against matched parallel half-spaces.
    NoiseStability(Flags),
    /// Exit-time survival of a set against the half-space of equal measure.
    ExitTime(Flags),
    /// Occupation time against matched parallel half-spaces.
    Occupation(Flags),
    /// Largest eigenvalue of M ⊙ H_J over a grid or random draws.
    HessianSweep(Flags),
    /// Linearity of Φ⁻¹∘P_t 1_A over a probe cloud.
    EqualityDiagnostic(Flags),
    /// Entrywise and inverse-sign conditions on correlation matrices.
    ConditionCheck(Flags),
}

#[derive(Args, Debug, Clone)]
struct Flags {
    /// Config file; the built-in default for the subcommand otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    samples: Option<u64>,
    #[arg(long)]
    paths: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    /// Comma-separated horizons.
    #[arg(long, value_delimiter = ',')]
    tau: Option<Vec<f64>>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    #[arg(long)]
    quiet: bool,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum FormatArg {
    Json,
    Csv,
}

impl Command {
    fn split(self) -> (ExperimentKind, Flags) {
        match self {
            Command::VerifyMain(f) => (ExperimentKind::VerifyMain, f),
            Command::NoiseStability(f) => (ExperimentKind::NoiseStability, f),
            Command::ExitTime(f) => (ExperimentKind::ExitTime, f),
            Command::Occupation(f) => (ExperimentKind::Occupation, f),
            Command::HessianSweep(f) => (ExperimentKind::HessianSweep, f),
            Command::EqualityDiagnostic(f) => (ExperimentKind::EqualityDiagnostic, f),
            Command::ConditionCheck(f) => (ExperimentKind::ConditionCheck, f),
        }
    }
}

/// Built-in config for each subcommand.
pub fn default_config(kind: ExperimentKind) -> &'static str {
    match kind {
        ExperimentKind::VerifyMain => include_str!("../../configs/verify-main.cfg"),
        ExperimentKind::NoiseStability => include_str!("../../configs/noise-stability.cfg"),
        ExperimentKind::ExitTime => include_str!("../../configs/exit-time.cfg"),
        ExperimentKind::Occupation => include_str!("../../configs/occupation.cfg"),
        ExperimentKind::HessianSweep => include_str!("../../configs/k2grid.cfg"),
        ExperimentKind::EqualityDiagnostic => include_str!("../../configs/equality-diagnostic.cfg"),
        ExperimentKind::ConditionCheck => include_str!("../../configs/condition-check.cfg"),
    }
}

/// Runs the CLI on `args` (program name first) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let env_seed = std::env::var(SEED_ENV).ok();
    let (kind, flags) = cli.command.split();
    match execute(kind, &flags, env_seed.as_deref()) {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            1
        }
    }
}

fn load_config(kind: ExperimentKind, flags: &Flags, env_seed: Option<&str>) -> Result<ExperimentConfig, String> {
    let default_seed = match env_seed {
        Some(s) => s
            .trim()
            .parse::<u64>()
            .map_err(|_| format!("{SEED_ENV}={s} is not an unsigned integer"))?,
        None => 0,
    };
    let (text, origin) = match &flags.config {
        Some(p) => (
            std::fs::read_to_string(p).map_err(|e| format!("cannot read {}: {e}", p.display()))?,
            p.display().to_string(),
        ),
        None => (default_config(kind).to_string(), format!("built-in {} config", kind.as_str())),
    };
    let mut cfg = ExperimentConfig::parse(&text, default_seed).map_err(|e| format!("{origin}: {e}"))?;
    if cfg.experiment != kind {
        return Err(format!(
            "{origin}: experiment = {} does not match subcommand {}",
            cfg.experiment.as_str(),
            kind.as_str()
        ));
    }
    if let Some(v) = flags.seed {
        cfg.seed = v;
    }
    if let Some(v) = flags.samples {
        cfg.samples = v;
    }
    if let Some(v) = flags.paths {
        cfg.paths = v;
    }
    if let Some(v) = flags.steps {
        cfg.steps = v;
    }
    if let Some(v) = &flags.tau {
        cfg.taus = v.clone();
    }
    if let Some(p) = &flags.out {
        cfg.output = Some(p.display().to_string());
    }
    if let Some(f) = flags.format {
        cfg.format = match f {
            FormatArg::Json => OutputFormat::Json,
            FormatArg::Csv => OutputFormat::Csv,
        };
    }
    cfg.validate().map_err(|e| format!("{origin}: {e}"))?;
    Ok(cfg)
}

fn write_out(path: Option<&Path>, text: &str) -> Result<(), String> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| format!("cannot write {}: {e}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Where the JSON report goes when the main output is CSV.
fn report_path_for(csv: &Path) -> PathBuf {
    if csv.extension().is_some_and(|e| e == "json") {
        let mut s = csv.as_os_str().to_owned();
        s.push(".report.json");
        PathBuf::from(s)
    } else {
        csv.with_extension("json")
    }
}

fn execute(kind: ExperimentKind, flags: &Flags, env_seed: Option<&str>) -> Result<i32, String> {
    let cfg = load_config(kind, flags, env_seed)?;
    let start = Instant::now();
    let outcome = run_experiment(&cfg);
    let runtime_seconds = start.elapsed().as_secs_f64();

    let mut report = Report {
        experiment: kind.as_str().to_string(),
        config: cfg.emit(),
        results: Vec::new(),
        details: None,
        error: None,
        csv_schema: Vec::new(),
        library_version: env!("CARGO_PKG_VERSION").to_string(),
        runtime_seconds,
    };
    let (code, csv) = match outcome {
        Ok(o) => {
            let verdicts: Vec<Verdict> = o.results.iter().map(|r| r.verdict).collect();
            report.results = o.results;
            report.details = o.details;
            report.csv_schema = o.table.columns.clone();
            (exit_code(&verdicts), Some(o.table.to_csv()))
        }
        Err(e) => {
            report.error = Some(match &e {
                Error::Hypothesis(_) => format!("{e}; see the entrywise-nonnegativity hypothesis on M"),
                _ => e.to_string(),
            });
            (1, None)
        }
    };

    let out = cfg.output.as_deref().map(Path::new);
    match (cfg.format, &csv) {
        (OutputFormat::Csv, Some(table)) => {
            write_out(out, table)?;
            if let Some(p) = out {
                write_out(Some(&report_path_for(p)), &report.to_json())?;
            }
        }
        _ => write_out(out, &report.to_json())?,
    }

    if !flags.quiet {
        if report.results.len() <= SUMMARY_LINES {
            for r in &report.results {
                eprintln!("{}: {} (margin {:.2} SE)", r.name, r.verdict.as_str(), r.margin_se);
            }
        } else {
            let count = |v: Verdict| report.results.iter().filter(|r| r.verdict == v).count();
            eprintln!(
                "{} results: {} holds, {} equality_band, {} violated",
                report.results.len(),
                count(Verdict::Holds),
                count(Verdict::EqualityBand),
                count(Verdict::Violated)
            );
        }
    }
    if let Some(e) = &report.error {
        eprintln!("error: {e}");
    }
    Ok(code)
}
