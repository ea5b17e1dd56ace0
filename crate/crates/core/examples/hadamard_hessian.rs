//! M ⊙ H_J = 𝓘 A 𝓘 with A a weighted graph Laplacian: eigenvalues and kernel.
//!
//! `cargo run --release --example hadamard_hessian`

use noise_stability::functional::{hadamard_hessian, kernel_diagnostic, JQuery, KernelDiagnostic};
use noise_stability::gaussian::{laplacian_quadratic_form, CorrelationMatrix};
use noise_stability::verify::{sweep_points, SweepSpec};

fn main() -> noise_stability::Result<()> {
    let m = CorrelationMatrix::equicorrelated(3, 0.4)?;
    let q = JQuery::new(vec![0.2, 0.5, 0.7], m)?;
    let ev = hadamard_hessian(&q, 1e-6, 1)?;
    println!("M ⊙ H_J =\n{:.6}", ev.hadamard_hessian.value);
    println!("A =\n{:.6}", ev.a_matrix.value);
    let (top, se) = ev.max_eigenvalue();
    println!("largest eigenvalue {top:.2e} ± {se:.1e}, row sums of A {:?}", ev.a_row_sums());
    let v = [1.0, -2.0, 0.5];
    println!("vᵀAv = {:.6} for v = {v:?}", laplacian_quadratic_form(&ev.a_matrix.value, &v)?);
    match kernel_diagnostic(&ev) {
        KernelDiagnostic::Applicable { zero_eigenvalue_gap, kernel_alignment } => {
            println!("kernel: gap {zero_eigenvalue_gap:.4}, alignment with 1⃗ {kernel_alignment:.9}")
        }
        KernelDiagnostic::Inapplicable { reason } => println!("kernel diagnostic not applicable: {reason}"),
    }

    // Largest eigenvalue over a coarse k = 2 grid.
    let spec = SweepSpec::Grid { k: 2, x: vec![0.1, 0.5, 0.9], rho: vec![0.2, 0.8] };
    let mut worst = f64::NEG_INFINITY;
    for (idx, (x, m)) in sweep_points(&spec, 0)?.into_iter().enumerate() {
        let ev = hadamard_hessian(&JQuery::new(x, m)?, 1e-6, idx as u64)?;
        worst = worst.max(ev.max_eigenvalue().0);
    }
    println!("k = 2 grid: largest eigenvalue over 18 points {worst:.2e}");
    Ok(())
}
