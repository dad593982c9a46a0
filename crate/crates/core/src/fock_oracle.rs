//! Exact propagation of the three-mode Hamiltonian
//!
//! ```text
//! H = g (a1^dagger a2 + a1 a2^dagger) + (2 k0 b0 - k0 (b + b^dagger)) dn + wm b^dagger b
//! ```
//!
//! in a truncated number basis. `H` conserves `n1 + n2`, so every total
//! photon number `N` is a separate block spanned by `|n1, N - n1> (x) |m>`,
//! `m = 0..=M`. Blocks are propagated independently: dense diagonalization
//! for small blocks, adaptive Lanczos steps otherwise.
//!
//! This module is the reference for the mean-field and adiabatic
//! approximations at toy scale.

use std::io::Write;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fidelity::{fidelity_fock, InputState};
use crate::output::{fmt_f64, CsvTable};
use crate::params::SystemParams;
use crate::semiclassical::{self, uniform_grid, IntegratorControls};

/// Index map for one block: flat index `n1 (M + 1) + m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockBasis {
    pub n: usize,
    pub m_max: usize,
}

impl BlockBasis {
    pub fn new(n: usize, m_max: usize) -> Self {
        BlockBasis { n, m_max }
    }

    pub fn dim(&self) -> usize {
        (self.n + 1) * (self.m_max + 1)
    }

    #[inline]
    pub fn index(&self, n1: usize, m: usize) -> usize {
        debug_assert!(n1 <= self.n && m <= self.m_max);
        n1 * (self.m_max + 1) + m
    }

    /// Inverse of [`BlockBasis::index`], returning `(n1, m)`.
    #[inline]
    pub fn unindex(&self, k: usize) -> (usize, usize) {
        (k / (self.m_max + 1), k % (self.m_max + 1))
    }
}

/// Real symmetric matrix in compressed sparse row form.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseHamiltonian {
    pub basis: BlockBasis,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl SparseHamiltonian {
    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let row = &self.cols[self.row_ptr[i]..self.row_ptr[i + 1]];
        match row.binary_search(&j) {
            Ok(k) => self.vals[self.row_ptr[i] + k],
            Err(_) => 0.0,
        }
    }

    /// `max |H_ij - H_ji|`.
    pub fn hermiticity_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.dim() {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.cols[k];
                worst = worst.max((self.vals[k] - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Number of distinct nonzero off-diagonals `j - i`.
    pub fn off_diagonal_bands(&self) -> usize {
        let mut offsets: Vec<isize> = Vec::new();
        for i in 0..self.dim() {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let d = self.cols[k] as isize - i as isize;
                if d != 0 && self.vals[k] != 0.0 && !offsets.contains(&d) {
                    offsets.push(d);
                }
            }
        }
        offsets.len()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut d = DMatrix::zeros(n, n);
        for i in 0..n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                d[(i, self.cols[k])] = self.vals[k];
            }
        }
        d
    }

    /// `out = H x`.
    pub fn apply(&self, x: &[Complex64], out: &mut [Complex64]) {
        let row = |(i, o): (usize, &mut Complex64)| {
            let mut acc = Complex64::default();
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += x[self.cols[k]] * self.vals[k];
            }
            *o = acc;
        };
        if out.len() >= 4096 {
            out.par_iter_mut().enumerate().for_each(row);
        } else {
            out.iter_mut().enumerate().for_each(row);
        }
    }
}

/// Default cap on stored nonzeros.
pub const DEFAULT_NNZ_CAP: usize = 2_000_000;

/// Builds the block of `H` with `n` photons and phonon cutoff `m_max`.
///
/// Uses `2 kappa0 b0` for the bare splitting so that `kappa0 = 0` switches
/// off the detuning together with the optomechanical coupling.
pub fn build_hamiltonian(
    p: &SystemParams,
    n: usize,
    m_max: usize,
    nnz_cap: usize,
) -> Result<SparseHamiltonian> {
    for (name, v) in [
        ("g", p.g),
        ("omega_m", p.omega_m),
        ("kappa0", p.kappa0),
        ("b0", p.b0),
    ] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "{name} must be finite and >= 0, got {v}"
            )));
        }
    }
    let basis = BlockBasis::new(n, m_max);
    let dim = basis.dim();
    let estimate = dim.saturating_mul(5);
    if estimate > nnz_cap {
        return Err(Error::InvalidParameter(format!(
            "block N = {n} with M_max = {m_max} needs ~{estimate} nonzeros, cap is {nnz_cap}"
        )));
    }
    let split = 2.0 * p.kappa0 * p.b0;
    let mut row_ptr = Vec::with_capacity(dim + 1);
    let mut cols = Vec::with_capacity(estimate);
    let mut vals = Vec::with_capacity(estimate);
    row_ptr.push(0);
    for n1 in 0..=n {
        let n2 = n - n1;
        let dn = n1 as f64 - n2 as f64;
        for m in 0..=m_max {
            // entries in increasing column order
            if n1 > 0 {
                let v = p.g * ((n1 * (n2 + 1)) as f64).sqrt();
                cols.push(basis.index(n1 - 1, m));
                vals.push(v);
            }
            if m > 0 && dn != 0.0 && p.kappa0 != 0.0 {
                cols.push(basis.index(n1, m - 1));
                vals.push(-p.kappa0 * dn * (m as f64).sqrt());
            }
            cols.push(basis.index(n1, m));
            vals.push(split * dn + p.omega_m * m as f64);
            if m < m_max && dn != 0.0 && p.kappa0 != 0.0 {
                cols.push(basis.index(n1, m + 1));
                vals.push(-p.kappa0 * dn * ((m + 1) as f64).sqrt());
            }
            if n1 < n {
                let v = p.g * (((n1 + 1) * n2) as f64).sqrt();
                cols.push(basis.index(n1 + 1, m));
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }
    }
    Ok(SparseHamiltonian {
        basis,
        row_ptr,
        cols,
        vals,
    })
}

/// One photon-number block: `weight` is the input amplitude `<N|psi>` and
/// `psi` the normalized block state.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub basis: BlockBasis,
    pub weight: Complex64,
    pub psi: Vec<Complex64>,
}

/// Cavity-plus-mirror state decomposed into photon-number blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantumState {
    pub m_max: usize,
    pub blocks: Vec<Block>,
}

impl QuantumState {
    pub fn norm_sqr(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| b.weight.norm_sqr() * b.psi.iter().map(|z| z.norm_sqr()).sum::<f64>())
            .sum()
    }

    /// Largest block-weighted population in the top two phonon levels.
    pub fn phonon_leakage(&self) -> f64 {
        let mut total = 0.0;
        for b in &self.blocks {
            let mut top = 0.0;
            for n1 in 0..=b.basis.n {
                for m in self.m_max.saturating_sub(1)..=self.m_max {
                    top += b.psi[b.basis.index(n1, m)].norm_sqr();
                }
            }
            total += b.weight.norm_sqr() * top;
        }
        total
    }

    /// Mean photon numbers `(<n1>, <n2>)`.
    pub fn populations(&self) -> (f64, f64) {
        let (mut n1s, mut n2s) = (0.0, 0.0);
        for b in &self.blocks {
            let w = b.weight.norm_sqr();
            for (k, z) in b.psi.iter().enumerate() {
                let (n1, _) = b.basis.unindex(k);
                let pr = w * z.norm_sqr();
                n1s += pr * n1 as f64;
                n2s += pr * (b.basis.n - n1) as f64;
            }
        }
        (n1s, n2s)
    }

    /// `<b>`.
    pub fn mirror_amplitude(&self) -> Complex64 {
        let mut acc = Complex64::default();
        for b in &self.blocks {
            let w = b.weight.norm_sqr();
            for n1 in 0..=b.basis.n {
                for m in 1..=self.m_max {
                    let hi = b.psi[b.basis.index(n1, m)];
                    let lo = b.psi[b.basis.index(n1, m - 1)];
                    acc += lo.conj() * hi * ((m as f64).sqrt() * w);
                }
            }
        }
        acc
    }

    /// Distribution of `(N, n1, m)` probabilities, flattened block by block.
    pub fn distribution(&self) -> Vec<f64> {
        self.blocks
            .iter()
            .flat_map(|b| {
                let w = b.weight.norm_sqr();
                b.psi.iter().map(move |z| w * z.norm_sqr())
            })
            .collect()
    }
}

/// Puts `state` into cavity 1 with cavity 2 empty and the mirror in its
/// ground state. Photon numbers above `n_max` must carry less than `1e-8`
/// of the norm.
pub fn prepare_input(state: &InputState, n_max: usize, m_max: usize) -> Result<QuantumState> {
    if let InputState::Fock { n } = *state {
        if n as usize > n_max {
            return Err(Error::Truncation(format!(
                "Fock state |{n}> exceeds N_max = {n_max}"
            )));
        }
    }
    let amps = state.amplitudes(n_max)?;
    let kept: f64 = amps.iter().map(|z| z.norm_sqr()).sum();
    if 1.0 - kept >= 1e-8 {
        return Err(Error::Truncation(format!(
            "photon numbers above N_max = {n_max} carry {:e} of the norm",
            1.0 - kept
        )));
    }
    let blocks = amps
        .iter()
        .enumerate()
        .filter(|(_, w)| w.norm_sqr() > 0.0)
        .map(|(n, &weight)| {
            let basis = BlockBasis::new(n, m_max);
            let mut psi = vec![Complex64::default(); basis.dim()];
            psi[basis.index(n, 0)] = Complex64::new(1.0, 0.0);
            Block { basis, weight, psi }
        })
        .collect();
    Ok(QuantumState { m_max, blocks })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleControls {
    /// Phonon cutoff; `None` selects it from the mean-field trajectory.
    pub m_max: Option<usize>,
    /// Allowed propagation error per unit time (Lanczos steps).
    pub tol: f64,
    /// Largest Krylov subspace per step.
    pub krylov_dim: usize,
    /// Blocks smaller than this are diagonalized densely.
    pub dense_below: usize,
    pub leakage_tol: f64,
    pub nnz_cap: usize,
}

impl Default for OracleControls {
    fn default() -> Self {
        OracleControls {
            m_max: None,
            tol: 1e-10,
            krylov_dim: 40,
            dense_below: 500,
            leakage_tol: 1e-6,
            nnz_cap: DEFAULT_NNZ_CAP,
        }
    }
}

enum Stepper {
    Dense {
        q: DMatrix<f64>,
        lambda: DVector<f64>,
    },
    Krylov(SparseHamiltonian),
}

/// Propagator for every block of a state.
pub struct Propagator {
    steppers: Vec<Stepper>,
    tol: f64,
    krylov_dim: usize,
    pub matvecs: usize,
}

impl Propagator {
    pub fn new(p: &SystemParams, psi: &QuantumState, ctrl: &OracleControls) -> Result<Self> {
        let mut steppers = Vec::with_capacity(psi.blocks.len());
        for b in &psi.blocks {
            let h = build_hamiltonian(p, b.basis.n, psi.m_max, ctrl.nnz_cap)?;
            if h.dim() < ctrl.dense_below {
                let eig = SymmetricEigen::new(h.to_dense());
                steppers.push(Stepper::Dense {
                    q: eig.eigenvectors,
                    lambda: eig.eigenvalues,
                });
            } else {
                steppers.push(Stepper::Krylov(h));
            }
        }
        Ok(Propagator {
            steppers,
            tol: ctrl.tol,
            krylov_dim: ctrl.krylov_dim.max(2),
            matvecs: 0,
        })
    }

    /// Advances every block by `dt`.
    pub fn advance(&mut self, psi: &mut QuantumState, dt: f64) -> Result<()> {
        let tol = self.tol;
        let kdim = self.krylov_dim;
        let counts: Vec<usize> = psi
            .blocks
            .par_iter_mut()
            .zip(self.steppers.par_iter())
            .map(|(b, st)| match st {
                Stepper::Dense { q, lambda } => {
                    dense_step(q, lambda, &mut b.psi, dt);
                    Ok(0)
                }
                Stepper::Krylov(h) => krylov_advance(h, &mut b.psi, dt, tol, kdim),
            })
            .collect::<Result<_>>()?;
        self.matvecs += counts.iter().sum::<usize>();
        Ok(())
    }
}

fn dense_step(q: &DMatrix<f64>, lambda: &DVector<f64>, psi: &mut [Complex64], dt: f64) {
    let n = psi.len();
    let mut coef = vec![Complex64::default(); n];
    for (k, c) in coef.iter_mut().enumerate() {
        let mut acc = Complex64::default();
        for i in 0..n {
            acc += psi[i] * q[(i, k)];
        }
        *c = acc * Complex64::from_polar(1.0, -lambda[k] * dt);
    }
    for (i, out) in psi.iter_mut().enumerate() {
        let mut acc = Complex64::default();
        for (k, c) in coef.iter().enumerate() {
            acc += c * q[(i, k)];
        }
        *out = acc;
    }
}

// Sequential so that reruns are bit-identical.
fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn axpy(alpha: Complex64, x: &[Complex64], y: &mut [Complex64]) {
    if y.len() >= 4096 {
        y.par_iter_mut()
            .zip(x.par_iter())
            .for_each(|(yi, xi)| *yi += alpha * xi);
    } else {
        y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += alpha * xi);
    }
}

fn norm(x: &[Complex64]) -> f64 {
    dot(x, x).re.sqrt()
}

// Coefficients of exp(-i T tau) e1 in the Lanczos basis.
fn krylov_coefficients(eig: &SymmetricEigen<f64, nalgebra::Dyn>, tau: f64) -> Vec<Complex64> {
    let k = eig.eigenvalues.len();
    let q = &eig.eigenvectors;
    (0..k)
        .map(|i| {
            (0..k)
                .map(|j| Complex64::from_polar(q[(0, j)] * q[(i, j)], -eig.eigenvalues[j] * tau))
                .sum()
        })
        .collect()
}

fn tridiagonal(alpha: &[f64], beta: &[f64]) -> DMatrix<f64> {
    let k = alpha.len();
    let mut t = DMatrix::zeros(k, k);
    for i in 0..k {
        t[(i, i)] = alpha[i];
        if i + 1 < k {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    t
}

// One Lanczos step from psi (norm beta0) over at most `remaining`. Grows the
// Krylov space until the a posteriori estimate
// beta_k |[exp(-i T tau)]_{k,1}| drops below tol * tau, shrinking tau when
// the subspace limit is reached first. `full` reorthogonalizes against the
// whole basis instead of the last two vectors. Returns the new state, the
// step taken and the number of products with H.
fn lanczos_step(
    h: &SparseHamiltonian,
    psi: &[Complex64],
    beta0: f64,
    remaining: f64,
    tol: f64,
    kdim: usize,
    full: bool,
) -> Result<(Vec<Complex64>, f64, usize)> {
    let n = psi.len();
    let scale = h.vals.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    let mut v: Vec<Vec<Complex64>> = vec![psi.iter().map(|z| z / beta0).collect()];
    let mut alpha: Vec<f64> = Vec::with_capacity(kdim);
    let mut beta: Vec<f64> = Vec::with_capacity(kdim);
    let mut w = vec![Complex64::default(); n];
    let (eig, tau) = loop {
        let j = alpha.len();
        h.apply(&v[j], &mut w);
        let a = dot(&v[j], &w).re;
        alpha.push(a);
        axpy(Complex64::new(-a, 0.0), &v[j], &mut w);
        if j > 0 {
            axpy(Complex64::new(-beta[j - 1], 0.0), &v[j - 1], &mut w);
        }
        let from = if full { 0 } else { j.saturating_sub(1) };
        for vi in &v[from..] {
            let c = dot(vi, &w);
            axpy(-c, vi, &mut w);
        }
        let b = norm(&w);
        let k = alpha.len();
        let eig = SymmetricEigen::new(tridiagonal(&alpha, &beta));
        let err = |tau: f64| beta0 * b * krylov_coefficients(&eig, tau)[k - 1].norm();
        if b <= 1e-13 * scale || k == n || err(remaining) <= tol * remaining {
            break (eig, remaining);
        }
        if k == kdim {
            let mut tau = remaining;
            while err(tau) > tol * tau {
                tau *= 0.7;
                if tau < 1e-13 * remaining {
                    return Err(Error::Integration {
                        t: 0.0,
                        reason: "Krylov step size underflow".into(),
                    });
                }
            }
            break (eig, tau);
        }
        beta.push(b);
        v.push(w.iter().map(|z| z / b).collect());
    };
    let c = krylov_coefficients(&eig, tau);
    let mut out = vec![Complex64::default(); n];
    for (ci, vi) in c.iter().zip(&v) {
        axpy(ci * beta0, vi, &mut out);
    }
    Ok((out, tau, alpha.len()))
}

// Propagates psi by dt with as many Lanczos steps as needed. Steps use the
// cheap three-term recurrence and are redone with full reorthogonalization
// when the propagated norm drifts, which flags lost orthogonality.
fn krylov_advance(
    h: &SparseHamiltonian,
    psi: &mut [Complex64],
    dt: f64,
    tol: f64,
    kdim: usize,
) -> Result<usize> {
    let mut done = 0.0;
    let mut matvecs = 0;
    while done < dt {
        let beta0 = norm(psi);
        if beta0 == 0.0 {
            break;
        }
        let remaining = dt - done;
        let mut step = lanczos_step(h, psi, beta0, remaining, tol, kdim, false);
        if let Ok((out, _, k)) = &step {
            matvecs += k;
            if (norm(out) / beta0 - 1.0).abs() > 1e-12 {
                step = lanczos_step(h, psi, beta0, remaining, tol, kdim, true);
                if let Ok((_, _, k)) = &step {
                    matvecs += k;
                }
            }
        }
        let (out, tau, _) = step.map_err(|e| match e {
            Error::Integration { reason, .. } => Error::Integration { t: done, reason },
            other => other,
        })?;
        psi.copy_from_slice(&out);
        done += tau;
    }
    Ok(matvecs)
}

/// Propagates `psi` through the ascending `samples` (all `>= 0`), calling
/// `observe` at each. Returns the number of sparse matrix-vector products.
pub fn evolve<F>(
    p: &SystemParams,
    psi: &mut QuantumState,
    samples: &[f64],
    ctrl: &OracleControls,
    mut observe: F,
) -> Result<usize>
where
    F: FnMut(usize, f64, &QuantumState) -> Result<()>,
{
    if samples.iter().any(|t| !(t.is_finite() && *t >= 0.0))
        || samples.windows(2).any(|w| w[1] < w[0])
    {
        return Err(Error::InvalidParameter(
            "sample times must be finite, >= 0 and ascending".into(),
        ));
    }
    let mut prop = Propagator::new(p, psi, ctrl)?;
    let mut t = 0.0;
    for (i, &ts) in samples.iter().enumerate() {
        if ts > t {
            prop.advance(psi, ts - t)?;
            t = ts;
        }
        observe(i, t, psi)?;
    }
    Ok(prop.matvecs)
}

/// Where the fidelity target lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// Output cavity, cavity 1 empty.
    Cavity2,
    /// Input cavity, cavity 2 empty; equals one at `t = 0`.
    Cavity1,
}

/// Overlap of the exact state with `|target> (x) (any mirror state)`, where
/// the target has number amplitudes `weight_N e^{i theta N}`:
/// `F = sum_m |sum_N conj(t_N) psi_N(n1, m)|^2`.
pub fn oracle_fidelity(psi: &QuantumState, theta: f64, target: Target) -> f64 {
    let mut f = 0.0;
    for m in 0..=psi.m_max {
        let mut acc = Complex64::default();
        for b in &psi.blocks {
            let n1 = match target {
                Target::Cavity2 => 0,
                Target::Cavity1 => b.basis.n,
            };
            let t = b.weight * Complex64::from_polar(1.0, theta * b.basis.n as f64);
            acc += t.conj() * b.weight * b.psi[b.basis.index(n1, m)];
        }
        f += acc.norm_sqr();
    }
    f
}

/// Phonon cutoff covering a coherent mirror state of amplitude up to `b_max`.
pub fn auto_m_max(b_max: f64) -> usize {
    let b = b_max.abs();
    (b * b + 8.0 * b + 30.0).ceil() as usize
}

/// Smallest photon cutoff whose tail carries less than `1e-8` of the norm.
pub fn auto_n_max(state: &InputState) -> Result<usize> {
    if let InputState::Fock { n } = *state {
        return Ok(n as usize);
    }
    let mean = state.mean_photons();
    let mut n_max = (mean + 8.0 * (mean + 1.0).sqrt() + 10.0).ceil() as usize;
    for _ in 0..12 {
        let kept: f64 = state.amplitudes(n_max)?.iter().map(|z| z.norm_sqr()).sum();
        if 1.0 - kept < 1e-8 {
            return Ok(n_max);
        }
        n_max = n_max * 3 / 2 + 1;
    }
    Err(Error::Truncation(format!(
        "no photon cutoff up to {n_max} captures the state"
    )))
}

/// Exact observables on the sample grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRun {
    pub params: SystemParams,
    pub state: InputState,
    pub n_max: usize,
    pub m_max: usize,
    /// Summed dimension of all blocks.
    pub dim: usize,
    pub times: Vec<f64>,
    pub n1: Vec<f64>,
    pub n2: Vec<f64>,
    pub b: Vec<Complex64>,
    pub max_leakage: f64,
    pub max_norm_defect: f64,
    pub matvecs: usize,
    /// Wall time; not serialized so that reports are reproducible.
    #[serde(skip)]
    pub runtime_s: f64,
}

impl OracleRun {
    /// Writes the trajectory with the mean-field column layout. Columns with
    /// no exact counterpart (`abs_T21`, `arg_T21`) hold `sqrt(n2 / n_bar)`
    /// and NaN; `xi` integrates `sqrt(w^2 + g^2)` with the trapezoid rule.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let p = &self.params;
        let n_bar = self.state.mean_photons();
        let mut t = CsvTable::new(
            w,
            &[
                "t_over_2pi_g",
                "re_b_over_b0",
                "im_b_over_b0",
                "omega_over_dw",
                "n1_over_nbar",
                "n2_over_nbar",
                "abs_T21",
                "arg_T21",
                "xi",
            ],
        )?;
        let mut xi = 0.0;
        let mut prev: Option<(f64, f64)> = None;
        for i in 0..self.times.len() {
            let omega = p.detuning(self.b[i]);
            let rate = omega.hypot(p.g);
            if let Some((tp, rp)) = prev {
                xi += 0.5 * (rate + rp) * (self.times[i] - tp);
            }
            prev = Some((self.times[i], rate));
            t.row(&[
                fmt_f64(self.times[i] / p.time_unit()),
                fmt_f64(self.b[i].re / p.b0),
                fmt_f64(self.b[i].im / p.b0),
                fmt_f64(omega / p.delta_omega),
                fmt_f64(self.n1[i] / n_bar),
                fmt_f64(self.n2[i] / n_bar),
                fmt_f64((self.n2[i] / n_bar).max(0.0).sqrt()),
                fmt_f64(f64::NAN),
                fmt_f64(xi),
            ])?;
        }
        t.finish()
    }
}

fn check_closed(p: &SystemParams) -> Result<()> {
    p.validate()?;
    if p.gamma1 != 0.0 || p.gamma2 != 0.0 || p.gamma_m != 0.0 {
        return Err(Error::InvalidParameter(
            "the exact propagator needs gamma1 = gamma2 = gamma_m = 0".into(),
        ));
    }
    Ok(())
}

/// Mean-field run with `n_bar` set to the mean photon number of `state`.
pub fn matched_mean_field(
    p: &SystemParams,
    state: &InputState,
    samples: &[f64],
) -> Result<semiclassical::Trajectory> {
    let mut q = *p;
    q.n_bar = state.mean_photons();
    let t_end = *samples
        .last()
        .ok_or_else(|| Error::InvalidParameter("no sample times".into()))?;
    Ok(semiclassical::integrate_at(
        &q,
        t_end,
        samples,
        &IntegratorControls::default(),
    )?)
}

/// Runs the exact model from `state (x) |0> (x) |0>` and records observables.
/// `theta` (one per sample) enables the fidelity callback's phase argument.
pub fn run_oracle_with<F>(
    p: &SystemParams,
    state: &InputState,
    samples: &[f64],
    ctrl: &OracleControls,
    mut extra: F,
) -> Result<OracleRun>
where
    F: FnMut(usize, &QuantumState) -> Result<()>,
{
    check_closed(p)?;
    state.validate()?;
    let start = Instant::now();
    let m_max = match ctrl.m_max {
        Some(m) => m,
        None => {
            // a branch that never transfers swings out to 2 k0 N / wm
            let traj = matched_mean_field(p, state, samples)?;
            let b_mf = traj
                .points
                .iter()
                .map(|q| q.osc.b.norm())
                .fold(0.0, f64::max);
            let n_top = auto_n_max(state)? as f64;
            auto_m_max(b_mf.max(2.0 * p.kappa0 * n_top / p.omega_m))
        }
    };
    let n_max = auto_n_max(state)?;
    let mut psi = prepare_input(state, n_max, m_max)?;
    let dim = psi.blocks.iter().map(|b| b.basis.dim()).sum();
    let mut run = OracleRun {
        params: *p,
        state: *state,
        n_max,
        m_max,
        dim,
        times: Vec::with_capacity(samples.len()),
        n1: Vec::with_capacity(samples.len()),
        n2: Vec::with_capacity(samples.len()),
        b: Vec::with_capacity(samples.len()),
        max_leakage: 0.0,
        max_norm_defect: 0.0,
        matvecs: 0,
        runtime_s: 0.0,
    };
    run.matvecs = evolve(p, &mut psi, samples, ctrl, |i, t, s| {
        let (n1, n2) = s.populations();
        run.times.push(t);
        run.n1.push(n1);
        run.n2.push(n2);
        run.b.push(s.mirror_amplitude());
        run.max_leakage = run.max_leakage.max(s.phonon_leakage());
        run.max_norm_defect = run.max_norm_defect.max((s.norm_sqr() - 1.0).abs());
        extra(i, s)
    })?;
    run.runtime_s = start.elapsed().as_secs_f64();
    if run.max_leakage > ctrl.leakage_tol {
        return Err(Error::Truncation(format!(
            "phonon leakage {:e} exceeds {:e} at M_max = {m_max}; try M_max = {}",
            run.max_leakage,
            ctrl.leakage_tol,
            m_max + m_max / 2 + 10
        )));
    }
    Ok(run)
}

pub fn run_oracle(
    p: &SystemParams,
    state: &InputState,
    samples: &[f64],
    ctrl: &OracleControls,
) -> Result<OracleRun> {
    run_oracle_with(p, state, samples, ctrl, |_, _| Ok(()))
}

/// Exact versus mean-field and adiabatic discrepancies on one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub state: InputState,
    pub n_bar: f64,
    /// `max_t |<n2>_exact - n2_mf| / n_bar`.
    pub sup_population_error: f64,
    pub peak_transfer_exact: f64,
    pub peak_transfer_mean_field: f64,
    pub peak_transfer_error: f64,
    /// Peak moving-target fidelity of the exact state.
    pub peak_fidelity_exact: f64,
    pub peak_fidelity_mean_field: f64,
    pub peak_fidelity_adiabatic: f64,
    /// `|peak F_exact - peak F_adiabatic|`.
    pub peak_fidelity_gap_adiabatic: f64,
    /// Same gap per photon in log scale, `|ln peak F_exact - ln peak F_adiabatic| / n_bar`.
    pub peak_log_fidelity_gap_per_photon: f64,
    /// `max_t |F_exact - F_mf|`.
    pub sup_fidelity_gap_mean_field: f64,
    /// `max_t |F_exact - F_adiabatic|`.
    pub sup_fidelity_gap_adiabatic: f64,
    pub max_leakage: f64,
    pub max_norm_defect: f64,
    pub dim: usize,
    pub n_max: usize,
    pub m_max: usize,
    pub matvecs: usize,
    /// Wall time; not serialized so that reports are reproducible.
    #[serde(skip)]
    pub runtime_s: f64,
}

/// Runs the exact, mean-field and adiabatic models on the same grid and
/// compares populations and moving-target fidelities. The target phase is
/// the mean-field transmission phase in every case.
pub fn compare_with_semiclassical(
    p: &SystemParams,
    state: &InputState,
    samples: &[f64],
    ctrl: &OracleControls,
) -> Result<(OracleRun, ErrorReport)> {
    check_closed(p)?;
    let traj = matched_mean_field(p, state, samples)?;
    let t21: Vec<Complex64> = traj.points.iter().map(|q| q.transmittance.t21).collect();
    let xi: Vec<f64> = traj.points.iter().map(|q| q.xi).collect();
    let theta = crate::adiabatic::theta_series(&t21, &xi)?;
    let t_end = *samples.last().expect("checked by matched_mean_field");
    let adia = crate::adiabatic::adiabatic_trajectory_at(
        &traj.params,
        t_end,
        samples,
        IntegratorControls::default().tolerances,
    )?;

    let mut f_exact = vec![0.0; samples.len()];
    let run = run_oracle_with(p, state, samples, ctrl, |i, s| {
        f_exact[i] = oracle_fidelity(s, theta[i], Target::Cavity2);
        Ok(())
    })?;
    let n_bar = traj.params.n_bar;
    let mut f_mf = Vec::with_capacity(samples.len());
    let mut f_ad = Vec::with_capacity(samples.len());
    for i in 0..samples.len() {
        f_mf.push(crate::fidelity::fidelity(state, t21[i].norm(), theta[i])?.f_mov);
        let a = adia.transmittance[i].t21.norm();
        f_ad.push(match *state {
            InputState::Fock { n } => fidelity_fock(a, n).f_mov,
            _ => crate::fidelity::fidelity(state, a, adia.theta[i])?.f_mov,
        });
    }
    let sup = |a: &[f64], b: &[f64]| {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    };
    let max = |a: &[f64]| a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let n2_mf: Vec<f64> = traj.points.iter().map(|q| q.n2 / n_bar).collect();
    let n2_ex: Vec<f64> = run.n2.iter().map(|x| x / n_bar).collect();
    let report = ErrorReport {
        state: *state,
        n_bar,
        sup_population_error: sup(&n2_ex, &n2_mf),
        peak_transfer_exact: max(&n2_ex),
        peak_transfer_mean_field: max(&n2_mf),
        peak_transfer_error: (max(&n2_ex) - max(&n2_mf)).abs(),
        peak_fidelity_exact: max(&f_exact),
        peak_fidelity_mean_field: max(&f_mf),
        peak_fidelity_adiabatic: max(&f_ad),
        peak_fidelity_gap_adiabatic: (max(&f_exact) - max(&f_ad)).abs(),
        peak_log_fidelity_gap_per_photon: (max(&f_exact).ln() - max(&f_ad).ln()).abs() / n_bar,
        sup_fidelity_gap_mean_field: sup(&f_exact, &f_mf),
        sup_fidelity_gap_adiabatic: sup(&f_exact, &f_ad),
        max_leakage: run.max_leakage,
        max_norm_defect: run.max_norm_defect,
        dim: run.dim,
        n_max: run.n_max,
        m_max: run.m_max,
        matvecs: run.matvecs,
        runtime_s: run.runtime_s,
    };
    Ok((run, report))
}

/// Uniform grid helper re-exported for oracle callers.
pub fn sample_grid(t_end: f64, samples: usize) -> Vec<f64> {
    uniform_grid(0.0, t_end, samples.max(2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn raw(g: f64, omega_m: f64, kappa0: f64, b0: f64) -> SystemParams {
        SystemParams {
            g,
            delta_omega: 2.0 * kappa0 * b0,
            omega_m,
            kappa0,
            b0,
            gamma1: 0.0,
            gamma2: 0.0,
            gamma_m: 0.0,
            n_bar: 1.0,
        }
    }

    fn krylov_only() -> OracleControls {
        OracleControls {
            dense_below: 0,
            tol: 1e-12,
            ..Default::default()
        }
    }

    fn trace(
        p: &SystemParams,
        state: &InputState,
        m_max: usize,
        times: &[f64],
        ctrl: &OracleControls,
    ) -> Vec<(f64, f64, Complex64)> {
        let mut psi = prepare_input(state, auto_n_max(state).unwrap(), m_max).unwrap();
        let mut out = Vec::new();
        evolve(p, &mut psi, times, ctrl, |_, _, s| {
            let (n1, n2) = s.populations();
            out.push((n1, n2, s.mirror_amplitude()));
            Ok(())
        })
        .unwrap();
        out
    }

    #[test]
    fn basis_round_trip() {
        let b = BlockBasis::new(3, 4);
        assert_eq!(b.dim(), 20);
        for k in 0..b.dim() {
            let (n1, m) = b.unindex(k);
            assert_eq!(b.index(n1, m), k);
        }
    }

    #[test]
    fn hamiltonian_is_symmetric_pentadiagonal_in_blocks() {
        let p = raw(1.0, 0.05, 0.3, 16.0);
        let h = build_hamiltonian(&p, 5, 7, DEFAULT_NNZ_CAP).unwrap();
        assert_eq!(h.hermiticity_defect(), 0.0);
        // photon hopping at +-(M + 1) and phonon hopping at +-1
        assert_eq!(h.off_diagonal_bands(), 4);
        let d = h.to_dense();
        assert_relative_eq!(
            d[(h.basis.index(5, 3), h.basis.index(5, 3))],
            2.0 * 0.3 * 16.0 * 5.0 + 0.05 * 3.0,
            epsilon = 1e-12
        );
        assert_relative_eq!(
            d[(h.basis.index(2, 1), h.basis.index(3, 1))],
            (3.0_f64 * 3.0).sqrt(),
            epsilon = 1e-12
        );
        assert_relative_eq!(
            d[(h.basis.index(4, 1), h.basis.index(4, 2))],
            -0.3 * 3.0 * 2.0_f64.sqrt(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn nnz_cap_is_enforced() {
        let p = raw(1.0, 0.05, 0.3, 16.0);
        assert!(matches!(
            build_hamiltonian(&p, 100, 1000, 1000),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn bare_beam_splitter_swaps_fock_states() {
        let p = raw(1.0, 0.1, 0.0, 0.0);
        let times = uniform_grid(0.0, 3.0, 31);
        for ctrl in [OracleControls::default(), krylov_only()] {
            for n in [1, 4] {
                let out = trace(&p, &InputState::Fock { n }, 0, &times, &ctrl);
                for (t, (n1, n2, _)) in times.iter().zip(&out) {
                    assert_relative_eq!(*n2, n as f64 * t.sin().powi(2), epsilon = 1e-9);
                    assert_relative_eq!(n1 + n2, n as f64, epsilon = 1e-10);
                }
            }
        }
    }

    #[test]
    fn frozen_mirror_gives_detuned_rabi() {
        // negligible phonon coupling, finite splitting
        let (g, dw) = (1.0, 3.0);
        let p = raw(g, 1.0, 1e-12, dw / 2e-12);
        let eps = g.hypot(dw);
        let times = uniform_grid(0.0, 4.0, 41);
        let out = trace(
            &p,
            &InputState::Fock { n: 1 },
            1,
            &times,
            &OracleControls::default(),
        );
        for (t, (_, n2, _)) in times.iter().zip(&out) {
            assert_relative_eq!(
                *n2,
                (g / eps).powi(2) * (eps * t).sin().powi(2),
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn uncoupled_cavities_drive_mirror_linearly() {
        // g = 0: dn = N is conserved and i db/dt = wm b - k0 N
        let (wm, k0, n) = (0.5, 0.2, 3u32);
        let p = raw(0.0, wm, k0, 2.0);
        let times = uniform_grid(0.0, 10.0, 21);
        for ctrl in [OracleControls::default(), krylov_only()] {
            let out = trace(&p, &InputState::Fock { n }, 40, &times, &ctrl);
            for (t, (n1, n2, b)) in times.iter().zip(&out) {
                let exact = (1.0 - Complex64::from_polar(1.0, -wm * t)) * (k0 * n as f64 / wm);
                assert!((b - exact).norm() < 1e-8, "t = {t}: {b} vs {exact}");
                assert_relative_eq!(*n1, n as f64, epsilon = 1e-10);
                assert_eq!(*n2, 0.0);
            }
        }
    }

    #[test]
    fn dense_and_krylov_agree() {
        let p = SystemParams::from_dimensionless(1.0, 0.1, 0.05, 3.0, 3.0).unwrap();
        let times = uniform_grid(0.0, 20.0, 11);
        let st = InputState::Fock { n: 3 };
        let a = trace(&p, &st, 60, &times, &OracleControls::default());
        let b = trace(&p, &st, 60, &times, &krylov_only());
        for (x, y) in a.iter().zip(&b) {
            assert!((x.1 - y.1).abs() < 1e-8);
            assert!((x.2 - y.2).norm() < 1e-8);
        }
    }

    #[test]
    fn input_weights_and_self_fidelity() {
        let alpha = Complex64::new(1.2, -0.4);
        let st = InputState::Coherent { alpha };
        let psi = prepare_input(&st, auto_n_max(&st).unwrap(), 3).unwrap();
        assert_relative_eq!(psi.norm_sqr(), 1.0, epsilon = 1e-8);
        assert_relative_eq!(psi.populations().0, alpha.norm_sqr(), epsilon = 1e-6);
        assert_relative_eq!(
            oracle_fidelity(&psi, 0.0, Target::Cavity1),
            1.0,
            epsilon = 1e-8
        );
        // only the shared vacuum component overlaps
        assert_relative_eq!(
            oracle_fidelity(&psi, 0.0, Target::Cavity2),
            (-2.0 * alpha.norm_sqr()).exp(),
            epsilon = 1e-8
        );
        let cat = InputState::Cat {
            alpha,
            parity: crate::fidelity::Parity::Odd,
        };
        let psi = prepare_input(&cat, auto_n_max(&cat).unwrap(), 0).unwrap();
        assert!(psi.blocks.iter().all(|b| b.basis.n % 2 == 1));
    }

    #[test]
    fn truncated_input_is_rejected() {
        let st = InputState::Coherent {
            alpha: Complex64::new(3.0, 0.0),
        };
        assert!(matches!(
            prepare_input(&st, 5, 0),
            Err(Error::Truncation(_))
        ));
        assert!(matches!(
            prepare_input(&InputState::Fock { n: 6 }, 5, 0),
            Err(Error::Truncation(_))
        ));
    }

    #[test]
    fn small_phonon_cutoff_reports_leakage() {
        let p = SystemParams::from_dimensionless(1.0, 0.1, 0.05, 3.0, 4.0).unwrap();
        let ctrl = OracleControls {
            m_max: Some(5),
            ..Default::default()
        };
        let err =
            run_oracle(&p, &InputState::Fock { n: 4 }, &sample_grid(20.0, 5), &ctrl).unwrap_err();
        assert!(matches!(err, Error::Truncation(_)), "{err}");
    }

    #[test]
    fn damping_is_rejected() {
        let p = SystemParams::reference()
            .with_damping(1e-3, 1e-3, 0.0)
            .unwrap();
        assert!(run_oracle(
            &p,
            &InputState::Fock { n: 1 },
            &[0.0, 1.0],
            &OracleControls::default()
        )
        .is_err());
    }

    #[test]
    fn auto_cutoffs() {
        assert_eq!(auto_m_max(0.0), 30);
        assert_eq!(auto_m_max(10.0), 210);
        assert_eq!(auto_n_max(&InputState::Fock { n: 7 }).unwrap(), 7);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn propagation_is_unitary(g in 0.2..2.0f64, wm in 0.01..0.5f64, k0 in 0.0..0.5f64, n in 1u32..4, t in 0.0..15.0f64) {
            let p = raw(g, wm, k0, 3.0);
            let st = InputState::Fock { n };
            let mut psi = prepare_input(&st, n as usize, 12).unwrap();
            evolve(&p, &mut psi, &[t], &krylov_only(), |_, _, _| Ok(())).unwrap();
            prop_assert!((psi.norm_sqr() - 1.0).abs() < 1e-9);
            let (n1, n2) = psi.populations();
            prop_assert!((n1 + n2 - n as f64).abs() < 1e-9);
        }
    }
}
