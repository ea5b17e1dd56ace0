//! Occupation time of A2 before exiting A1, concentric balls vs parallel half-spaces.
//!
//! `cargo run --release --example occupation_time`

use noise_stability::geometry::{parallel_halfspaces, SetExpr};
use noise_stability::ou::occupation_paired;

fn main() -> noise_stability::Result<()> {
    let a1 = SetExpr::centered_ball_with_measure(2, 0.6)?;
    let a2 = SetExpr::centered_ball_with_measure(2, 0.3)?;
    let hs = parallel_halfspaces(&[0.6, 0.3], &[1.0, 0.0])?;
    let (b1, b2) = (SetExpr::HalfSpace(hs[0].clone()), SetExpr::HalfSpace(hs[1].clone()));
    let p = occupation_paired(&a1, &a2, &b1, &b2, 0.5, 128, 40_000, 3)?;
    println!("balls:       {:.4} ± {:.4}", p.lhs.value.value, p.lhs.value.std_error);
    println!("half-spaces: {:.4} ± {:.4}", p.rhs.value.value, p.rhs.value.std_error);
    println!("difference {:+.1} paired SE", (p.rhs.value.value - p.lhs.value.value) / p.diff_se);
    Ok(())
}
