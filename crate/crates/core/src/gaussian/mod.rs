//! Gaussian special functions and correlation-matrix algebra.

pub mod linalg;
pub mod normal;

pub use linalg::{
    cholesky, inverse_offdiag_nonpositive, laplacian_quadratic_form, max_eigenvalue,
    min_eigenvalue, ou_covariance, schur_complement, symmetric_eigen, CholeskyFactor,
    CorrelationMatrix, SchurData,
};
pub use normal::{
    cdf as std_normal_cdf, isoperimetric_profile, k_t, pdf as std_normal_pdf,
    quantile as std_normal_quantile,
};
