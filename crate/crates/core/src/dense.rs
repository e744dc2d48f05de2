//! Dense `2^n x 2^n` operators and fast Pauli multiplication on them.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::pauli::{basis_masks, Phase, PauliString, DENSE_LIMIT};

pub type CMatrix = DMatrix<Complex64>;

/// Dense operator on `n` qubits; qubit 0 is the most significant tensor factor.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseOperator {
    n: usize,
    m: CMatrix,
    hermitian: bool,
}

impl DenseOperator {
    pub fn new(n: usize, m: CMatrix) -> Result<Self> {
        if n > DENSE_LIMIT {
            return Err(Error::DenseLimit { n, limit: DENSE_LIMIT });
        }
        let d = 1usize << n;
        if m.nrows() != d || m.ncols() != d {
            return Err(Error::Dimension {
                expected: d,
                got: m.nrows(),
            });
        }
        Ok(DenseOperator { n, m, hermitian: false })
    }

    /// Builds an operator flagged Hermitian; rejects `|M - M†| > 1e-12`.
    pub fn hermitian(n: usize, m: CMatrix) -> Result<Self> {
        let mut op = DenseOperator::new(n, m)?;
        let dev = hermiticity_defect(&op.m);
        if dev > 1e-12 {
            return Err(Error::Invalid(format!("matrix is not Hermitian (defect {dev:e})")));
        }
        op.hermitian = true;
        Ok(op)
    }

    pub fn zeros(n: usize) -> Self {
        let d = 1usize << n;
        DenseOperator { n, m: CMatrix::zeros(d, d), hermitian: true }
    }

    pub fn identity(n: usize) -> Self {
        let d = 1usize << n;
        DenseOperator { n, m: CMatrix::identity(d, d), hermitian: true }
    }

    pub fn pauli(p: &PauliString) -> Result<Self> {
        Ok(DenseOperator { n: p.n(), m: p.to_dense()?, hermitian: true })
    }

    /// `Σ_P c_P P` from Pauli-basis coefficients indexed by [`PauliString::index`].
    pub fn from_pauli_coeffs(n: usize, coeffs: &[f64]) -> Result<Self> {
        if coeffs.len() != 1 << (2 * n) {
            return Err(Error::Dimension { expected: 1 << (2 * n), got: coeffs.len() });
        }
        let mut out = DenseOperator::zeros(n);
        for (idx, &c) in coeffs.iter().enumerate() {
            if c != 0.0 {
                add_pauli(&mut out.m, &PauliString::from_index(n, idx as u64), Complex64::new(c, 0.0));
            }
        }
        Ok(out)
    }

    /// Pauli-basis coefficients `c_P = 2^{-n} tr[P M]` (real parts).
    pub fn to_pauli_coeffs(&self) -> Vec<f64> {
        let n = self.n;
        let d = 1usize << n;
        let mut out = vec![0.0; 1 << (2 * n)];
        for (idx, slot) in out.iter_mut().enumerate() {
            let p = PauliString::from_index(n, idx as u64);
            let (xm, zm, y) = basis_masks(&p);
            let base = Phase::from_exponent(y as i64).to_complex();
            // tr[P M] = Σ_c P[c^x, c] M[c, c^x]
            let mut acc = Complex64::new(0.0, 0.0);
            for c in 0..d {
                let s = if (c & zm).count_ones() % 2 == 1 { -1.0 } else { 1.0 };
                acc += base * s * self.m[(c, c ^ xm)];
            }
            *slot = acc.re / d as f64;
        }
        out
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        1 << self.n
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.m
    }

    pub fn into_matrix(self) -> CMatrix {
        self.m
    }

    pub fn is_hermitian_flagged(&self) -> bool {
        self.hermitian
    }

    pub fn trace(&self) -> Complex64 {
        self.m.trace()
    }

    /// `2^{-n} tr[self · other]`.
    pub fn normalized_overlap(&self, other: &DenseOperator) -> Complex64 {
        let d = self.dim();
        let mut acc = Complex64::new(0.0, 0.0);
        for i in 0..d {
            for k in 0..d {
                acc += self.m[(i, k)] * other.m[(k, i)];
            }
        }
        acc / d as f64
    }

    /// Operator norm (largest singular value).
    pub fn op_norm(&self) -> f64 {
        op_norm(&self.m)
    }

    pub fn sub(&self, other: &DenseOperator) -> DenseOperator {
        DenseOperator { n: self.n, m: &self.m - &other.m, hermitian: self.hermitian && other.hermitian }
    }
}

/// Largest singular value, via a Hermitian eigen-solve when possible.
pub fn op_norm(m: &CMatrix) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    if hermiticity_defect(m) <= 1e-13 * (1.0 + max_entry_norm(m)) {
        let h = (m + m.adjoint()) * Complex64::new(0.5, 0.0);
        let ev = h.symmetric_eigenvalues();
        return ev.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    }
    m.clone().singular_values().max()
}

/// Largest entry modulus.
pub fn max_entry_norm(m: &CMatrix) -> f64 {
    m.iter().fold(0.0, |a, v| a.max(v.norm()))
}

pub fn hermiticity_defect(m: &CMatrix) -> f64 {
    let d = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..d {
        for k in i..d {
            worst = worst.max((m[(i, k)] - m[(k, i)].conj()).norm());
        }
    }
    worst
}

/// `acc += c · P`.
pub fn add_pauli(acc: &mut CMatrix, p: &PauliString, c: Complex64) {
    let (xm, zm, y) = basis_masks(p);
    let base = c * Phase::from_exponent(y as i64).to_complex();
    for col in 0..acc.ncols() {
        let s = if (col & zm).count_ones() % 2 == 1 { -1.0 } else { 1.0 };
        acc[(col ^ xm, col)] += base * s;
    }
}

/// `P · M`.
pub fn pauli_left(p: &PauliString, m: &CMatrix) -> CMatrix {
    let (xm, zm, y) = basis_masks(p);
    let base = Phase::from_exponent(y as i64).to_complex();
    let d = m.nrows();
    let mut out = CMatrix::zeros(d, d);
    for c in 0..d {
        for k in 0..d {
            let s = if (k & zm).count_ones() % 2 == 1 { -1.0 } else { 1.0 };
            out[(k ^ xm, c)] = base * s * m[(k, c)];
        }
    }
    out
}

/// `M · P`.
pub fn pauli_right(m: &CMatrix, p: &PauliString) -> CMatrix {
    let (xm, zm, y) = basis_masks(p);
    let base = Phase::from_exponent(y as i64).to_complex();
    let d = m.nrows();
    let mut out = CMatrix::zeros(d, d);
    for c in 0..d {
        // (M P)[r, c] = M[r, c^x] P[c^x, c]
        let s = if (c & zm).count_ones() % 2 == 1 { -1.0 } else { 1.0 };
        let f = base * s;
        let src = c ^ xm;
        for r in 0..d {
            out[(r, c)] = m[(r, src)] * f;
        }
    }
    out
}

/// `P · M · P` for a Hermitian Pauli string.
pub fn pauli_conjugate(p: &PauliString, m: &CMatrix) -> CMatrix {
    let (xm, zm, _) = basis_masks(p);
    let d = m.nrows();
    let mut out = CMatrix::zeros(d, d);
    // the (-1)^{#Y} factors from the two copies of P cancel
    for c in 0..d {
        let sc = if (c & zm).count_ones() % 2 == 1 { -1.0 } else { 1.0 };
        for r in 0..d {
            let sr = if (r & zm).count_ones() % 2 == 1 { -1.0 } else { 1.0 };
            out[(r ^ xm, c ^ xm)] = m[(r, c)] * (sr * sc);
        }
    }
    out
}
