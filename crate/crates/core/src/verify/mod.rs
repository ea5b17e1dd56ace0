//! Experiment harness: configs, the theorem checks, reports and the CLI.

pub mod cli;
pub mod config;
pub mod experiments;
pub mod report;

use serde::Serialize;

use crate::orthant::Estimate;

pub use config::{ExperimentConfig, ExperimentKind, MatrixSpec, OutputFormat, SetSpec, Size, SweepSpec};
pub use experiments::{
    condition_check, equality_diagnostic_run, hessian_sweep, run_experiment, sweep_points, sweep_row,
    verify_exit_dominance, verify_main_inequality, verify_noise_stability, verify_occupation, ConditionRow,
    EqualityDiagnostic, Outcome, SweepRow,
};
pub use report::{Cell, Report, Table};

/// Margins are measured in units of the combined standard error, floored here.
pub const SE_FLOOR: f64 = 1e-6;
/// Half-width of the equality band, in standard errors.
pub const BAND: f64 = 3.0;

pub const VIOLATION_NOTE: &str = "statistical or discretization artifact; increase samples/steps";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Holds,
    EqualityBand,
    Violated,
}

impl Verdict {
    /// violated iff margin < −3; equality_band iff |margin| ≤ 3; NaN is violated.
    pub fn from_margin(margin_se: f64) -> Self {
        if margin_se.is_nan() || margin_se < -BAND {
            Verdict::Violated
        } else if margin_se.abs() <= BAND {
            Verdict::EqualityBand
        } else {
            Verdict::Holds
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Holds => "holds",
            Verdict::EqualityBand => "equality_band",
            Verdict::Violated => "violated",
        }
    }
}

/// One inequality check lhs ≤ rhs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonResult {
    pub name: String,
    pub lhs: Estimate,
    pub rhs: Estimate,
    pub margin_se: f64,
    pub verdict: Verdict,
    /// Standard error of rhs − lhs when both sides share random numbers.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub paired_se: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl ComparisonResult {
    /// Independent sides: the margin uses √(se_l² + se_r²).
    pub fn new(name: impl Into<String>, lhs: Estimate, rhs: Estimate) -> Self {
        Self::build(name.into(), lhs, rhs, lhs.combined_se(&rhs), None)
    }

    /// Sides on common random numbers: the margin uses the paired-difference SE.
    pub fn paired(name: impl Into<String>, lhs: Estimate, rhs: Estimate, paired_se: f64) -> Self {
        Self::build(name.into(), lhs, rhs, paired_se, Some(paired_se))
    }

    fn build(name: String, lhs: Estimate, rhs: Estimate, se: f64, paired_se: Option<f64>) -> Self {
        let margin_se = margin(lhs.value, rhs.value, se);
        let verdict = Verdict::from_margin(margin_se);
        Self {
            name,
            lhs,
            rhs,
            margin_se,
            verdict,
            paired_se,
            note: (verdict == Verdict::Violated).then(|| VIOLATION_NOTE.to_string()),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.verdict != Verdict::Violated
    }
}

/// (rhs − lhs) / max(se, floor).
pub fn margin(lhs: f64, rhs: f64, se: f64) -> f64 {
    (rhs - lhs) / se.max(SE_FLOOR)
}

/// 0 when every verdict is holds or equality_band, 2 otherwise.
pub fn exit_code<'a>(verdicts: impl IntoIterator<Item = &'a Verdict>) -> i32 {
    if verdicts.into_iter().any(|v| *v == Verdict::Violated) {
        2
    } else {
        0
    }
}
