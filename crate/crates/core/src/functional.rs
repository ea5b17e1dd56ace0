//! The orthant functional J(x; M) = Pr(X_i ≤ Φ⁻¹(x_i) for all i), X ~ N(0, M),
//! and its derivative calculus.
//!
//! With z = Φ⁻¹(x) and I = φ ∘ Φ⁻¹:
//!
//! * ∂ᵢJ = K(z_î − M_iî z_i; M̄ᵢ), where M̄ᵢ is the conditional covariance of the
//!   other coordinates given coordinate i;
//! * J_ij = I(x_i) · ∂ⱼK(z_î − M_iî z_i; M̄ᵢ), and ∂ᵢ∂ⱼJ = J_ij / (I(x_i) I(x_j));
//! * ∂ᵢ²J = −I(x_i)⁻² Σ_{j≠i} m_ij J_ij.
//!
//! Hence M ⊙ H_J = 𝓘 A 𝓘 with 𝓘 = diag(1/I(x_i)), a_ij = m_ij J_ij and
//! a_ii = −Σ_{j≠i} a_ij. Since M̄ᵢ has a general diagonal, ∂ⱼK is taken with the
//! variance-aware conditional formula (density of the j-th marginal at its limit
//! times the orthant probability of the rest under the conditional law).

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gaussian::linalg::{matrix_rows, remove_from_vector, schur_general, symmetric_eigen};
use crate::gaussian::{normal, CorrelationMatrix};
use crate::orthant::{orthant_qmc_with, Estimate, OrthantQuery, QmcOptions};
use crate::rng::derive_seed;

/// Derivatives are only evaluated on [DERIVATIVE_MARGIN, 1 − DERIVATIVE_MARGIN]^k.
pub const DERIVATIVE_MARGIN: f64 = 1e-6;

/// A point x ∈ [0, 1]^k and a correlation matrix M.
#[derive(Debug, Clone, PartialEq)]
pub struct JQuery {
    x: Vec<f64>,
    m: CorrelationMatrix,
}

impl JQuery {
    pub fn new(x: Vec<f64>, m: CorrelationMatrix) -> Result<Self> {
        if x.len() != m.dim() {
            return Err(Error::DimensionMismatch {
                expected: m.dim(),
                got: x.len(),
            });
        }
        if let Some(bad) = x.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid("x", format!("{bad} is not in [0, 1]")));
        }
        Ok(Self { x, m })
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn m(&self) -> &CorrelationMatrix {
        &self.m
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    fn limits(&self) -> Vec<f64> {
        self.x.iter().map(|&p| normal::quantile_unchecked(p)).collect()
    }

    fn check_interior(&self) -> Result<()> {
        let lo = DERIVATIVE_MARGIN;
        let hi = 1.0 - DERIVATIVE_MARGIN;
        match self.x.iter().find(|&&v| v < lo || v > hi) {
            Some(bad) => Err(Error::invalid(
                "x",
                format!("{bad} is outside the derivative domain [{lo}, {hi}]"),
            )),
            None => Ok(()),
        }
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.dim() {
            return Err(Error::invalid("i", format!("index {i} out of range for k = {}", self.dim())));
        }
        Ok(())
    }

    fn check_strict_pd(&self) -> Result<()> {
        if crate::gaussian::min_eigenvalue(self.m.matrix()) < crate::gaussian::linalg::SINGULAR_TOLERANCE {
            return Err(Error::Singular);
        }
        Ok(())
    }
}

/// J(x; M) by randomized QMC.
pub fn j_value(q: &JQuery, target_se: f64, seed: u64) -> Result<Estimate> {
    j_value_with(q, &QmcOptions::new(target_se, seed))
}

pub fn j_value_with(q: &JQuery, opts: &QmcOptions) -> Result<Estimate> {
    let oq = OrthantQuery::with_correlation(q.limits(), &q.m)?;
    Ok(orthant_qmc_with(&oq, opts)?.estimate)
}

/// ∂ᵢJ as a (k−1)-dimensional orthant probability under the Schur complement.
pub fn j_grad(q: &JQuery, i: usize, target_se: f64, seed: u64) -> Result<Estimate> {
    q.check_index(i)?;
    q.check_interior()?;
    q.check_strict_pd()?;
    grad_with(q, i, &QmcOptions::new(target_se, seed))
}

fn grad_with(q: &JQuery, i: usize, opts: &QmcOptions) -> Result<Estimate> {
    let z = DVector::from_vec(q.limits());
    let schur = schur_general(q.m.matrix(), i);
    let limits = remove_from_vector(&z, i) - &schur.cond_mean_row * z[i];
    let oq = OrthantQuery::new(limits.iter().copied().collect(), schur.reduced)?;
    Ok(orthant_qmc_with(&oq, opts)?.estimate)
}

/// ∂ᵢ∂ⱼJ for i ≠ j, from the raw J_ij (conditioning on i first).
pub fn j_mixed_second(q: &JQuery, i: usize, j: usize, target_se: f64, seed: u64) -> Result<Estimate> {
    q.check_index(i)?;
    q.check_index(j)?;
    if i == j {
        return Err(Error::invalid("j", "i = j: use j_diag_second"));
    }
    q.check_interior()?;
    q.check_strict_pd()?;
    let iota = iota(q);
    let jij = j_ij(q, i, j, target_se, seed)?;
    Ok(scale(jij, iota[i] * iota[j]))
}

/// ∂ᵢ²J = −I(x_i)⁻² Σ_{j≠i} m_ij J_ij, from the same symmetrized J_ij that
/// [`hadamard_hessian`] uses.
pub fn j_diag_second(q: &JQuery, i: usize, target_se: f64, seed: u64) -> Result<Estimate> {
    q.check_index(i)?;
    q.check_interior()?;
    q.check_strict_pd()?;
    let iota = iota(q);
    let mut cache = MixedCache::new(q, target_se, seed);
    let mut value = 0.0;
    let mut var = 0.0;
    let mut samples = 0;
    for j in (0..q.dim()).filter(|&j| j != i) {
        let mij = q.m.get(i, j);
        let e = cache.symmetric(i, j)?;
        value -= mij * e.value;
        var += (mij * e.std_error).powi(2);
        samples += e.samples;
    }
    let s = iota[i] * iota[i];
    Ok(Estimate {
        value: value * s,
        std_error: var.sqrt() * s,
        samples,
        seed,
    })
}

/// A matrix of estimates: values with entrywise propagated standard errors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatrixEstimate {
    #[serde(serialize_with = "rows")]
    pub value: DMatrix<f64>,
    #[serde(serialize_with = "rows")]
    pub se: DMatrix<f64>,
}

fn rows<S: serde::Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(matrix_rows(m))
}

/// J together with its gradient and second-order structure at one point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JEvaluation {
    pub value: Estimate,
    pub grad: Vec<Estimate>,
    /// Raw J_ij (conditioning on i, differentiating in j); not symmetric.
    pub mixed_raw: MatrixEstimate,
    /// Symmetrized (J_ij + J_ji)/2; zero diagonal.
    pub mixed: MatrixEstimate,
    /// a_ij = m_ij J_ij, a_ii = −Σ_{j≠i} a_ij.
    pub a_matrix: MatrixEstimate,
    /// Diagonal of 𝓘: 1 / I(x_i).
    pub iota: Vec<f64>,
    /// M ⊙ H_J, assembled as 𝓘 A 𝓘.
    pub hadamard_hessian: MatrixEstimate,
}

impl JEvaluation {
    /// Largest eigenvalue of M ⊙ H_J with its first-order standard error.
    ///
    /// Perturbing the pair estimate J̄_ij moves the top eigenvalue by
    /// −m_ij (v_i/I_i − v_j/I_j)² δJ̄_ij, where v is the top eigenvector.
    pub fn max_eigenvalue(&self) -> (f64, f64) {
        let h = &self.hadamard_hessian.value;
        let k = h.nrows();
        let (vals, vecs) = symmetric_eigen(h);
        let top = vals[k - 1];
        let v = vecs.column(k - 1);
        let mut var = 0.0;
        for i in 0..k {
            for j in (i + 1)..k {
                let a_se = self.a_matrix.se[(i, j)];
                let d = v[i] * self.iota[i] - v[j] * self.iota[j];
                var += (d * d * a_se).powi(2);
            }
        }
        (top, var.sqrt())
    }

    pub fn dim(&self) -> usize {
        self.iota.len()
    }

    /// A·1⃗, each row summed off-diagonal first and then the diagonal, the order
    /// in which the diagonal was assembled; every entry is exactly zero.
    pub fn a_row_sums(&self) -> Vec<f64> {
        let a = &self.a_matrix.value;
        let k = a.nrows();
        (0..k)
            .map(|i| (0..k).filter(|&j| j != i).map(|j| a[(i, j)]).sum::<f64>() + a[(i, i)])
            .collect()
    }
}

/// Full second-order evaluation. Every J_ij is computed once with a seed derived
/// from `(seed, i, j)`, so the stored identity M ⊙ H_J = 𝓘 A 𝓘 holds exactly.
pub fn hadamard_hessian(q: &JQuery, target_se: f64, seed: u64) -> Result<JEvaluation> {
    q.check_interior()?;
    q.check_strict_pd()?;
    if !q.m.is_entrywise_nonnegative() {
        return Err(Error::Hypothesis(
            "the Hadamard Hessian bound needs an entrywise nonnegative M".into(),
        ));
    }
    let k = q.dim();
    let iota = iota(q);
    let value = j_value(q, target_se, derive_seed(seed, u64::MAX))?;
    let grad = (0..k)
        .map(|i| grad_with(q, i, &QmcOptions::new(target_se, derive_seed(seed, u64::MAX - 1 - i as u64))))
        .collect::<Result<Vec<_>>>()?;

    let mut cache = MixedCache::new(q, target_se, seed);
    let mut raw = DMatrix::zeros(k, k);
    let mut raw_se = DMatrix::zeros(k, k);
    let mut sym = DMatrix::zeros(k, k);
    let mut sym_se = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            if i == j {
                continue;
            }
            let r = cache.raw(i, j)?;
            raw[(i, j)] = r.value;
            raw_se[(i, j)] = r.std_error;
            let s = cache.symmetric(i, j)?;
            sym[(i, j)] = s.value;
            sym_se[(i, j)] = s.std_error;
        }
    }

    let mut a = DMatrix::zeros(k, k);
    let mut a_se = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            if i != j {
                let mij = q.m.get(i, j);
                a[(i, j)] = mij * sym[(i, j)];
                a_se[(i, j)] = mij * sym_se[(i, j)];
            }
        }
        let row: f64 = (0..k).filter(|&j| j != i).map(|j| a[(i, j)]).sum();
        let row_var: f64 = (0..k).filter(|&j| j != i).map(|j| a_se[(i, j)].powi(2)).sum();
        a[(i, i)] = -row;
        a_se[(i, i)] = row_var.sqrt();
    }

    let h = DMatrix::from_fn(k, k, |i, j| iota[i] * a[(i, j)] * iota[j]);
    let h_se = DMatrix::from_fn(k, k, |i, j| iota[i] * a_se[(i, j)] * iota[j]);

    Ok(JEvaluation {
        value,
        grad,
        mixed_raw: MatrixEstimate { value: raw, se: raw_se },
        mixed: MatrixEstimate { value: sym, se: sym_se },
        a_matrix: MatrixEstimate { value: a, se: a_se },
        iota,
        hadamard_hessian: MatrixEstimate { value: h, se: h_se },
    })
}

/// Outcome of the kernel check on an assembled A.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum KernelDiagnostic {
    Applicable {
        /// Second-largest eigenvalue of A; strictly negative when the kernel is
        /// exactly the constants.
        zero_eigenvalue_gap: f64,
        /// |cos| between A's top eigenvector and the normalized all-ones vector.
        kernel_alignment: f64,
    },
    Inapplicable {
        reason: String,
    },
}

pub fn kernel_diagnostic(eval: &JEvaluation) -> KernelDiagnostic {
    kernel_diagnostic_matrix(&eval.a_matrix.value)
}

/// Kernel check for any A with strictly positive off-diagonal entries.
pub fn kernel_diagnostic_matrix(a: &DMatrix<f64>) -> KernelDiagnostic {
    let k = a.nrows();
    if k < 2 {
        return KernelDiagnostic::Inapplicable {
            reason: "needs k >= 2".into(),
        };
    }
    for i in 0..k {
        for j in 0..k {
            if i != j && !(a[(i, j)] > 0.0) {
                return KernelDiagnostic::Inapplicable {
                    reason: format!("a[{i}][{j}] = {} is not positive", a[(i, j)]),
                };
            }
        }
    }
    let sym = 0.5 * (a + a.transpose());
    let (vals, vecs) = symmetric_eigen(&sym);
    let top = vecs.column(k - 1);
    let ones = 1.0 / (k as f64).sqrt();
    let cos = top.iter().map(|v| v * ones).sum::<f64>() / top.norm();
    KernelDiagnostic::Applicable {
        zero_eigenvalue_gap: vals[k - 2],
        kernel_alignment: cos.abs(),
    }
}

fn iota(q: &JQuery) -> Vec<f64> {
    q.limits().iter().map(|&z| 1.0 / normal::pdf(z)).collect()
}

fn scale(e: Estimate, s: f64) -> Estimate {
    Estimate {
        value: e.value * s,
        std_error: e.std_error * s,
        ..e
    }
}

fn pair_seed(seed: u64, k: usize, i: usize, j: usize) -> u64 {
    derive_seed(seed, (i * k + j) as u64)
}

/// J_ij = I(x_i) · ∂ⱼK(z_î − M_iî z_i; M̄ᵢ).
fn j_ij(q: &JQuery, i: usize, j: usize, target_se: f64, seed: u64) -> Result<Estimate> {
    let k = q.dim();
    let z = DVector::from_vec(q.limits());
    let outer = schur_general(q.m.matrix(), i);
    let y = remove_from_vector(&z, i) - &outer.cond_mean_row * z[i];
    let jj = if j < i { j } else { j - 1 };

    // ∂ⱼK(y; S) = φ_{S_jj}(y_j) · K(y_ĵ − (S_ĵj/S_jj) y_j; S̄_j)
    let s = &outer.reduced;
    let var = s[(jj, jj)];
    if !(var > 0.0) {
        return Err(Error::Singular);
    }
    let density = normal::pdf_var(y[jj], var);
    let inner = schur_general(s, jj);
    let rest = remove_from_vector(&y, jj) - &inner.cond_mean_row * y[jj];
    let oq = OrthantQuery::new(rest.iter().copied().collect(), inner.reduced)?;
    let opts = QmcOptions::new(target_se, pair_seed(seed, k, i, j));
    let kr = orthant_qmc_with(&oq, &opts)?.estimate;
    let prof = normal::pdf(z[i]);
    Ok(scale(kr, prof * density))
}

/// Per-evaluation cache of raw and symmetrized J_ij.
struct MixedCache<'a> {
    q: &'a JQuery,
    target_se: f64,
    seed: u64,
    raw: HashMap<(usize, usize), Estimate>,
}

impl<'a> MixedCache<'a> {
    fn new(q: &'a JQuery, target_se: f64, seed: u64) -> Self {
        Self {
            q,
            target_se,
            seed,
            raw: HashMap::new(),
        }
    }

    fn raw(&mut self, i: usize, j: usize) -> Result<Estimate> {
        if let Some(e) = self.raw.get(&(i, j)) {
            return Ok(*e);
        }
        let e = j_ij(self.q, i, j, self.target_se, self.seed)?;
        self.raw.insert((i, j), e);
        Ok(e)
    }

    fn symmetric(&mut self, i: usize, j: usize) -> Result<Estimate> {
        let a = self.raw(i, j)?;
        let b = self.raw(j, i)?;
        Ok(Estimate {
            value: 0.5 * (a.value + b.value),
            std_error: 0.5 * a.std_error.hypot(b.std_error),
            samples: a.samples + b.samples,
            seed: self.seed,
        })
    }
}
