//! Set expressions, Gaussian measure, enlargement and parallel half-spaces.
//!
//! `cargo run --release --example set_geometry`

use noise_stability::geometry::{enlarge, gaussian_measure, parallel_halfspaces, SetExpr};

fn main() -> noise_stability::Result<()> {
    let ball = SetExpr::ball(vec![0.5, -0.3], 1.0)?;
    let slab = SetExpr::axis_box(vec![-1.0, -2.0], vec![1.0, 2.0])?;
    let half = SetExpr::half_space(vec![1.0, 1.0], 0.2)?;
    for (name, s) in [("ball", &ball), ("box", &slab), ("half-space", &half)] {
        let g = gaussian_measure(s, 200_000, 1)?;
        println!("γ({name}) = {:.6} (analytic: {})", g.value, g.std_error == 0.0);
    }
    let mixed = SetExpr::union(vec![ball.clone(), SetExpr::intersection(vec![slab, SetExpr::complement(half)])?])?;
    let g = gaussian_measure(&mixed, 200_000, 2)?;
    println!("γ(ball ∪ (box ∖ half-space)) = {:.4} ± {:.4}", g.value, g.std_error);

    for eps in [0.0, 0.1, 0.2] {
        let e = enlarge(&ball, eps)?;
        println!("γ(ball enlarged by {eps}) = {:.6}", gaussian_measure(&e, 1, 0)?.value);
    }

    let hs = parallel_halfspaces(&[0.2, 0.5, 0.9], &[0.0, 1.0])?;
    for h in &hs {
        println!("half-space {{x : ⟨x, e2⟩ ≤ {:+.6}}} has measure {:.6}", h.offset(), h.measure());
    }
    Ok(())
}
