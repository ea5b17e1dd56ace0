//! The OU semigroup on indicators and the gradient bound |∇(Φ⁻¹∘P_t f)| ≤ k_t.
//!
//! `cargo run --release --example semigroup`

use noise_stability::gaussian::k_t;
use noise_stability::geometry::SetExpr;
use noise_stability::ou::{gradient_bound_check, semigroup_apply, semigroup_halfspace_closed};

fn main() -> noise_stability::Result<()> {
    let half = SetExpr::half_space(vec![1.0, 0.0], 0.3)?;
    for (t, x) in [(0.2, [0.5, 1.0]), (1.0, [-1.0, 0.0]), (2.5, [2.0, -2.0])] {
        let mc = semigroup_apply(&half, t, &x, 400_000, 11)?;
        let closed = semigroup_halfspace_closed(0.3, t, x[0])?;
        println!("P_{t} 1_H at {x:?}: MC {:.5} ± {:.5}, closed form {closed:.5}", mc.value, mc.std_error);
    }
    let ball = SetExpr::ball(vec![0.3, 0.0], 1.2)?;
    for t in [0.1, 0.5, 2.0] {
        let h = gradient_bound_check(&half, t, 50, 1)?;
        let b = gradient_bound_check(&ball, t, 50, 2)?;
        println!(
            "t = {t}: k_t = {:.4}, max gradient / k_t: half-space {:.4}, ball {:.4}",
            k_t(t)?,
            h.max_ratio,
            b.max_ratio
        );
    }
    Ok(())
}
