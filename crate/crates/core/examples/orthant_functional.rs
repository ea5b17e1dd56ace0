//! Orthant probabilities and the functional J with its closed-form derivatives.
//!
//! `cargo run --release --example orthant_functional`

use noise_stability::functional::{j_diag_second, j_grad, j_mixed_second, j_value, JQuery};
use noise_stability::gaussian::{ou_covariance, CorrelationMatrix};
use noise_stability::orthant::{bivariate_orthant_closed, orthant_qmc, OrthantQuery};

fn main() -> noise_stability::Result<()> {
    // Bivariate: lattice estimate against the arcsine formula.
    let m = CorrelationMatrix::bivariate(0.5)?;
    let q = OrthantQuery::with_correlation(vec![0.0, 0.0], &m)?;
    let est = orthant_qmc(&q, 1e-7, 1)?;
    println!("P(Z1 <= 0, Z2 <= 0; rho = 0.5): {:.9} ± {:.1e}, closed form {:.9}", est.value, est.std_error, bivariate_orthant_closed(0.5)?);

    // J on three OU times, with its gradient and second derivatives.
    let m = ou_covariance(&[0.0, 0.4, 1.1])?;
    let q = JQuery::new(vec![0.3, 0.6, 0.8], m)?;
    let j = j_value(&q, 1e-7, 2)?;
    println!("J(0.3, 0.6, 0.8; OU) = {:.8} ± {:.1e}", j.value, j.std_error);
    for i in 0..3 {
        let g = j_grad(&q, i, 1e-6, 3)?;
        let d = j_diag_second(&q, i, 1e-5, 4)?;
        println!("  d{i} J = {:+.6}   d{i}d{i} J = {:+.6}", g.value, d.value);
    }
    let mixed = j_mixed_second(&q, 0, 2, 1e-5, 5)?;
    println!("  d0d2 J = {:+.6} ± {:.1e}", mixed.value, mixed.std_error);
    Ok(())
}
