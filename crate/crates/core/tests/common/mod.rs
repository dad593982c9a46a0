//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, Matrix2, SymmetricEigen};
use num_complex::Complex64;

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Truncated annihilation operator on `0..=cutoff`.
pub fn annihilation(cutoff: usize) -> DMatrix<Complex64> {
    let d = cutoff + 1;
    let mut a = DMatrix::zeros(d, d);
    for n in 1..d {
        a[(n - 1, n)] = c((n as f64).sqrt(), 0.0);
    }
    a
}

pub fn kron(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    a.kronecker(b)
}

pub fn eye(d: usize) -> DMatrix<Complex64> {
    DMatrix::identity(d, d)
}

/// `exp(-i H)` for Hermitian `H` by diagonalization.
pub fn expm_hermitian(h: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let eig = SymmetricEigen::new(h.clone());
    let q = &eig.eigenvectors;
    let phases = DMatrix::from_diagonal(&DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues
            .iter()
            .map(|&l| Complex64::from_polar(1.0, -l)),
    ));
    q * phases * q.adjoint()
}

/// Generator `K` with `T = exp(-i K)` for a 2x2 unitary `T`.
pub fn generator(t: &Matrix2<Complex64>) -> Matrix2<Complex64> {
    let (q, d) = t.schur().unpack();
    let mut k = Matrix2::zeros();
    for i in 0..2 {
        k[(i, i)] = Complex64::i() * d[(i, i)].ln();
    }
    q * k * q.adjoint()
}

/// Two-mode number basis `|n1, n2>` with `0 <= n1, n2 <= cutoff`, index
/// `n1 (cutoff + 1) + n2`.
pub struct TwoMode {
    pub cutoff: usize,
}

impl TwoMode {
    pub fn dim(&self) -> usize {
        (self.cutoff + 1).pow(2)
    }

    pub fn index(&self, n1: usize, n2: usize) -> usize {
        n1 * (self.cutoff + 1) + n2
    }

    /// `a^dagger K a` built from Kronecker products of truncated operators.
    pub fn quadratic(&self, k: &Matrix2<Complex64>) -> DMatrix<Complex64> {
        let a = annihilation(self.cutoff);
        let id = eye(self.cutoff + 1);
        let modes = [kron(&a, &id), kron(&id, &a)];
        let mut h = DMatrix::zeros(self.dim(), self.dim());
        for i in 0..2 {
            for j in 0..2 {
                h += modes[i].adjoint() * &modes[j] * k[(i, j)];
            }
        }
        h
    }

    /// `(F_fix, F_mov)` for input amplitudes `amps` in mode 1, propagated by
    /// the beam splitter with transmittance `t`, and compared with
    /// `|0> (x) |psi>` and `|0> (x) e^{i theta n}|psi>`.
    pub fn fidelities(&self, amps: &[Complex64], t: &Matrix2<Complex64>) -> (f64, f64) {
        let u = expm_hermitian(&self.quadratic(&generator(t)));
        let mut input = DVector::zeros(self.dim());
        let mut fix = DVector::zeros(self.dim());
        let mut mov = DVector::zeros(self.dim());
        let theta = t[(1, 0)].arg();
        for (n, &a) in amps.iter().enumerate().take(self.cutoff + 1) {
            input[self.index(n, 0)] = a;
            fix[self.index(0, n)] = a;
            mov[self.index(0, n)] = a * Complex64::from_polar(1.0, theta * n as f64);
        }
        let out = u * input;
        (fix.dotc(&out).norm_sqr(), mov.dotc(&out).norm_sqr())
    }
}

/// Beam splitter with `T21 = |T21| e^{i theta}` and an arbitrary phase on `T11`.
pub fn transmittance(abs_t21: f64, theta: f64, phase11: f64) -> Matrix2<Complex64> {
    let t11 = Complex64::from_polar((1.0 - abs_t21 * abs_t21).max(0.0).sqrt(), phase11);
    let t21 = Complex64::from_polar(abs_t21, theta);
    Matrix2::new(t11, -t21.conj(), t21, t11.conj())
}

/// Dense three-mode Hamiltonian restricted to `n1 + n2 = n`, in the block
/// order `n1 (m_max + 1) + m`.
pub fn dense_block_hamiltonian(
    g: f64,
    omega_m: f64,
    kappa0: f64,
    b0: f64,
    n: usize,
    m_max: usize,
) -> DMatrix<f64> {
    let a = annihilation(n);
    let b = annihilation(m_max);
    let (ic, im) = (eye(n + 1), eye(m_max + 1));
    let a1 = kron(&kron(&a, &ic), &im);
    let a2 = kron(&kron(&ic, &a), &im);
    let bb = kron(&kron(&ic, &ic), &b);
    let id = eye((n + 1) * (n + 1) * (m_max + 1));
    let dn = a1.adjoint() * &a1 - a2.adjoint() * &a2;
    let x = &bb + bb.adjoint();
    let h = (a1.adjoint() * &a2 + &a1 * a2.adjoint()) * c(g, 0.0)
        + (&id - x * c(1.0 / (2.0 * b0), 0.0)) * &dn * c(2.0 * kappa0 * b0, 0.0)
        + bb.adjoint() * &bb * c(omega_m, 0.0);
    let full_index = |n1: usize, n2: usize, m: usize| (n1 * (n + 1) + n2) * (m_max + 1) + m;
    let d = (n + 1) * (m_max + 1);
    let mut out = DMatrix::zeros(d, d);
    for n1 in 0..=n {
        for m in 0..=m_max {
            for k1 in 0..=n {
                for k in 0..=m_max {
                    let v = h[(full_index(n1, n - n1, m), full_index(k1, n - k1, k))];
                    assert!(v.im.abs() < 1e-12);
                    out[(n1 * (m_max + 1) + m, k1 * (m_max + 1) + k)] = v.re;
                }
            }
        }
    }
    out
}
