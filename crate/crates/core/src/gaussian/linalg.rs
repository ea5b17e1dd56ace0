//! Small dense linear algebra on correlation matrices.
//!
//! Indices are zero-based throughout.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};

/// Minimum eigenvalue tolerated before a matrix is declared non-PSD.
pub const PSD_TOLERANCE: f64 = 1e-10;
/// Minimum eigenvalue below which a matrix counts as singular.
pub const SINGULAR_TOLERANCE: f64 = 1e-12;
const SYMMETRY_TOLERANCE: f64 = 1e-12;

/// A k×k correlation matrix: symmetric, unit diagonal, positive semidefinite.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationMatrix {
    #[serde(serialize_with = "serialize_rows")]
    m: DMatrix<f64>,
    nonnegative: bool,
}

impl CorrelationMatrix {
    /// Validates `m` as a correlation matrix. Entries within 1e-12 of symmetric
    /// (and diagonals within 1e-12 of one) are snapped so that the stored matrix is
    /// exactly symmetric with an exact unit diagonal.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        let k = m.nrows();
        if k == 0 {
            return Err(Error::invalid("m", "matrix must be at least 1x1"));
        }
        if m.ncols() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: m.ncols(),
            });
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("m", "entries must be finite"));
        }
        let mut s = m.clone();
        for i in 0..k {
            if (m[(i, i)] - 1.0).abs() > SYMMETRY_TOLERANCE {
                return Err(Error::invalid(
                    "m",
                    format!("diagonal entry {i} is {} (expected 1)", m[(i, i)]),
                ));
            }
            s[(i, i)] = 1.0;
            for j in (i + 1)..k {
                if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOLERANCE {
                    return Err(Error::invalid("m", format!("not symmetric at ({i}, {j})")));
                }
                let v = 0.5 * (m[(i, j)] + m[(j, i)]);
                s[(i, j)] = v;
                s[(j, i)] = v;
            }
        }
        let min_eigenvalue = min_eigenvalue(&s);
        if min_eigenvalue < -PSD_TOLERANCE {
            return Err(Error::NotPsd { min_eigenvalue });
        }
        let nonnegative = s.iter().all(|&v| v >= 0.0);
        Ok(Self { m: s, nonnegative })
    }

    /// Builds from row-major entries.
    pub fn from_rows(k: usize, entries: &[f64]) -> Result<Self> {
        if entries.len() != k * k {
            return Err(Error::DimensionMismatch {
                expected: k * k,
                got: entries.len(),
            });
        }
        Self::new(DMatrix::from_row_slice(k, k, entries))
    }

    /// Scales a covariance to unit diagonal: m_ij / √(m_ii m_jj).
    pub fn from_covariance(cov: &DMatrix<f64>) -> Result<Self> {
        let k = cov.nrows();
        let mut m = cov.clone();
        for i in 0..k {
            if !(cov[(i, i)] > 0.0) {
                return Err(Error::invalid("cov", format!("variance {i} is not positive")));
            }
        }
        for i in 0..k {
            for j in 0..k {
                m[(i, j)] = cov[(i, j)] / (cov[(i, i)] * cov[(j, j)]).sqrt();
            }
        }
        Self::new(m)
    }

    pub fn identity(k: usize) -> Self {
        Self {
            m: DMatrix::identity(k, k),
            nonnegative: true,
        }
    }

    /// Every off-diagonal entry equal to `rho`.
    pub fn equicorrelated(k: usize, rho: f64) -> Result<Self> {
        Self::new(DMatrix::from_fn(k, k, |i, j| if i == j { 1.0 } else { rho }))
    }

    /// The 2×2 matrix [[1, ρ], [ρ, 1]].
    pub fn bivariate(rho: f64) -> Result<Self> {
        Self::equicorrelated(2, rho)
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[(i, j)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    /// Whether every entry was nonnegative at construction.
    pub fn is_entrywise_nonnegative(&self) -> bool {
        self.nonnegative
    }

    /// Simultaneous permutation of rows and columns: result(i, j) = m(perm[i], perm[j]).
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let k = self.dim();
        Self {
            m: DMatrix::from_fn(k, k, |i, j| self.m[(perm[i], perm[j])]),
            nonnegative: self.nonnegative,
        }
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        matrix_rows(&self.m)
    }
}

fn serialize_rows<S: serde::Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(matrix_rows(m))
}

pub(crate) fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Conditional structure of coordinate `removed_index` (with unit variance).
///
/// Given X_i = y, the remaining coordinates have mean `y * cond_mean_row` and
/// covariance `reduced`.
#[derive(Debug, Clone, PartialEq)]
pub struct SchurData {
    pub removed_index: usize,
    pub cond_mean_row: DVector<f64>,
    pub reduced: DMatrix<f64>,
}

/// Lower-triangular Q with QQᵀ equal to the source matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor {
    q: DMatrix<f64>,
}

impl CholeskyFactor {
    pub fn lower(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn dim(&self) -> usize {
        self.q.nrows()
    }

    /// Writes Q·z into `out`, using only the lower triangle.
    #[inline]
    pub fn mul_into(&self, z: &[f64], out: &mut [f64]) {
        let k = self.q.nrows();
        for i in 0..k {
            let mut acc = 0.0;
            for j in 0..=i {
                acc += self.q[(i, j)] * z[j];
            }
            out[i] = acc;
        }
    }
}

/// Cholesky factor of a symmetric PSD matrix. Pivots that collapse to rounding
/// noise are clamped to zero, so semidefinite inputs factor cleanly.
pub fn cholesky(m: &DMatrix<f64>) -> Result<CholeskyFactor> {
    let k = m.nrows();
    if m.ncols() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: m.ncols(),
        });
    }
    check_symmetric(m)?;
    let min_ev = min_eigenvalue(m);
    if min_ev < -PSD_TOLERANCE {
        return Err(Error::NotPsd {
            min_eigenvalue: min_ev,
        });
    }
    let scale = (0..k).map(|i| m[(i, i)].abs()).fold(1.0f64, f64::max);
    let floor = 1e-13 * scale;
    let mut q = DMatrix::<f64>::zeros(k, k);
    for j in 0..k {
        let mut d = m[(j, j)];
        for p in 0..j {
            d -= q[(j, p)] * q[(j, p)];
        }
        if d <= floor {
            // Degenerate direction: column j stays zero.
            continue;
        }
        let djj = d.sqrt();
        q[(j, j)] = djj;
        for i in (j + 1)..k {
            let mut s = m[(i, j)];
            for p in 0..j {
                s -= q[(i, p)] * q[(j, p)];
            }
            q[(i, j)] = s / djj;
        }
    }
    Ok(CholeskyFactor { q })
}

/// Schur complement of M without row/column `i` in `m`, together with the
/// conditional-mean row. Requires `m` strictly positive definite.
pub fn schur_complement(m: &CorrelationMatrix, i: usize) -> Result<SchurData> {
    let k = m.dim();
    if i >= k {
        return Err(Error::invalid("i", format!("index {i} out of range for k = {k}")));
    }
    if min_eigenvalue(m.matrix()) < SINGULAR_TOLERANCE {
        return Err(Error::Singular);
    }
    Ok(schur_general(m.matrix(), i))
}

/// Conditioning on coordinate `i` of a general-diagonal covariance. The returned
/// `cond_mean_row` is the regression row S_{iî}/S_ii.
pub(crate) fn schur_general(s: &DMatrix<f64>, i: usize) -> SchurData {
    let row = remove_from_vector(&s.row(i).transpose(), i);
    let sii = s[(i, i)];
    let sub = remove_index(s, i);
    let reduced = DMatrix::from_fn(sub.nrows(), sub.ncols(), |a, b| {
        let v = sub[(a, b)] - row[a] * row[b] / sii;
        if a == b {
            v.max(0.0)
        } else {
            v
        }
    });
    // Exact symmetry.
    let reduced = 0.5 * (&reduced + reduced.transpose());
    SchurData {
        removed_index: i,
        cond_mean_row: row / sii,
        reduced,
    }
}

/// Covariance of the stationary OU process sampled at `times`: e^{−|t_i − t_j|}.
pub fn ou_covariance(times: &[f64]) -> Result<CorrelationMatrix> {
    if times.is_empty() {
        return Err(Error::invalid("times", "at least one time required"));
    }
    if times.iter().any(|t| !t.is_finite()) {
        return Err(Error::invalid("times", "times must be finite"));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("times", "times must be strictly increasing"));
    }
    let k = times.len();
    let m = DMatrix::from_fn(k, k, |i, j| (-(times[i] - times[j]).abs()).exp());
    CorrelationMatrix::new(m)
}

/// True when every off-diagonal entry of M⁻¹ is ≤ 1e-10.
pub fn inverse_offdiag_nonpositive(m: &CorrelationMatrix) -> Result<bool> {
    let inv = inverse(m.matrix())?;
    let k = m.dim();
    Ok((0..k).all(|i| (0..k).all(|j| i == j || inv[(i, j)] <= 1e-10)))
}

pub(crate) fn inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if min_eigenvalue(m) < SINGULAR_TOLERANCE {
        return Err(Error::Singular);
    }
    m.clone().try_inverse().ok_or(Error::Singular)
}

/// −Σ_{i<j} a_ij (v_i − v_j)², valid for symmetric `a` with zero row sums.
pub fn laplacian_quadratic_form(a: &DMatrix<f64>, v: &[f64]) -> Result<f64> {
    let k = a.nrows();
    if a.ncols() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: a.ncols(),
        });
    }
    if v.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: v.len(),
        });
    }
    let scale = a.iter().fold(1.0f64, |acc, x| acc.max(x.abs()));
    let tol = 1e-10 * scale;
    for i in 0..k {
        let off: f64 = (0..k).filter(|&j| j != i).map(|j| a[(i, j)]).sum();
        if (a[(i, i)] + off).abs() > tol {
            return Err(Error::invalid(
                "a",
                format!("row {i}: diagonal {} is not minus the off-diagonal sum {off}", a[(i, i)]),
            ));
        }
        for j in (i + 1)..k {
            if (a[(i, j)] - a[(j, i)]).abs() > tol {
                return Err(Error::invalid("a", format!("not symmetric at ({i}, {j})")));
            }
        }
    }
    let mut form = 0.0;
    for i in 0..k {
        for j in (i + 1)..k {
            let d = v[i] - v[j];
            form -= a[(i, j)] * d * d;
        }
    }
    Ok(form)
}

/// Eigenvalues of a symmetric matrix in ascending order, with matching
/// eigenvectors as columns.
pub fn symmetric_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(m.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::NEG_INFINITY;
    }
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub(crate) fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    let k = m.nrows();
    let scale = m.iter().fold(1.0f64, |acc, x| acc.max(x.abs()));
    for i in 0..k {
        for j in (i + 1)..k {
            if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOLERANCE * scale {
                return Err(Error::invalid("m", format!("not symmetric at ({i}, {j})")));
            }
        }
    }
    Ok(())
}

/// `m` with row and column `i` deleted.
pub fn remove_index(m: &DMatrix<f64>, i: usize) -> DMatrix<f64> {
    m.clone().remove_row(i).remove_column(i)
}

pub fn remove_from_vector(v: &DVector<f64>, i: usize) -> DVector<f64> {
    v.clone().remove_row(i)
}
