//! Exit-time dominance: a centred ball exits no later than a half-space of equal measure.
//!
//! `cargo run --release --example exit_time`

use noise_stability::geometry::SetExpr;
use noise_stability::ou::{exit_survival_curve, exit_survival_paired};

fn main() -> noise_stability::Result<()> {
    let ball = SetExpr::centered_ball_with_measure(2, 0.5)?;
    let half = SetExpr::half_space(vec![1.0, 0.0], 0.0)?;
    println!("  tau   P(e_ball >= tau)   P(e_half >= tau)   diff/se");
    for tau in [0.1, 0.25, 0.5, 1.0] {
        let p = exit_survival_paired(&ball, &half, tau, 256, 20_000, 7)?;
        println!(
            "{tau:5.2}   {:.4} ± {:.4}    {:.4} ± {:.4}    {:+.1}",
            p.lhs.survival.value,
            p.lhs.survival.std_error,
            p.rhs.survival.value,
            p.rhs.survival.std_error,
            (p.rhs.survival.value - p.lhs.survival.value) / p.diff_se
        );
    }
    let curve = exit_survival_curve(&ball, 1.0, 8, 20_000, 8)?;
    let values: Vec<String> = curve.iter().map(|e| format!("{:.3}", e.survival.value)).collect();
    println!("ball survival on an 8-step grid: {}", values.join(" "));
    Ok(())
}
