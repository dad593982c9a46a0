//! Transfer fidelities for fixed and moving targets.
//!
//! The cavities start in `|psi> (x) |0>` and the photons end up in cavity 2
//! as `sum_n c_n T21^n |n>`. With `T21 = |T21| e^{i theta}` the fixed target
//! is `|psi>` itself and the moving target is `e^{i theta n} |psi>`, so
//!
//! ```text
//! F_fix = |sum_n |c_n|^2 T21^n|^2,   F_mov = |sum_n |c_n|^2 |T21|^n|^2
//! ```
//!
//! Every family has a closed form. All of them are evaluated in the log
//! domain so that amplitudes with `|alpha|^2` in the hundreds stay finite.

use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adiabatic::theta_series;
use crate::error::{Error, Result};
use crate::output::{fmt_f64, CsvTable};
use crate::semiclassical::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parity {
    Even,
    Odd,
}

impl Parity {
    fn sign(self) -> f64 {
        match self {
            Parity::Even => 1.0,
            Parity::Odd => -1.0,
        }
    }
}

/// Photon state initially loaded into cavity 1. Complex numbers serialize
/// as `[re, im]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum InputState {
    Fock {
        n: u32,
    },
    Coherent {
        alpha: Complex64,
    },
    Cat {
        alpha: Complex64,
        parity: Parity,
    },
    /// `D(alpha) S(eta) |0>` with `eta = r e^{i phi}`.
    DisplacedSqueezed {
        alpha: Complex64,
        eta: Complex64,
    },
}

fn finite(z: Complex64) -> bool {
    z.re.is_finite() && z.im.is_finite()
}

impl InputState {
    pub fn validate(&self) -> Result<()> {
        match *self {
            InputState::Fock { .. } => Ok(()),
            InputState::Coherent { alpha } => {
                if finite(alpha) {
                    Ok(())
                } else {
                    Err(Error::InvalidState(
                        "coherent amplitude must be finite".into(),
                    ))
                }
            }
            InputState::Cat { alpha, parity } => {
                if !finite(alpha) {
                    return Err(Error::InvalidState("cat amplitude must be finite".into()));
                }
                if parity == Parity::Odd && alpha.norm() == 0.0 {
                    return Err(Error::InvalidState(
                        "odd cat state is not normalizable at alpha = 0".into(),
                    ));
                }
                Ok(())
            }
            InputState::DisplacedSqueezed { alpha, eta } => {
                if finite(alpha) && finite(eta) {
                    Ok(())
                } else {
                    Err(Error::InvalidState(
                        "displaced squeezed parameters must be finite".into(),
                    ))
                }
            }
        }
    }

    /// Mean photon number.
    pub fn mean_photons(&self) -> f64 {
        match *self {
            InputState::Fock { n } => n as f64,
            InputState::Coherent { alpha } => alpha.norm_sqr(),
            InputState::Cat { alpha, parity } => {
                let a = alpha.norm_sqr();
                match parity {
                    Parity::Even => a * a.tanh(),
                    Parity::Odd => a / a.tanh(),
                }
            }
            InputState::DisplacedSqueezed { alpha, eta } => {
                alpha.norm_sqr() + eta.norm().sinh().powi(2)
            }
        }
    }

    /// Number-basis amplitudes `<n|psi>` for `n = 0..=n_max`.
    pub fn amplitudes(&self, n_max: usize) -> Result<Vec<Complex64>> {
        self.validate()?;
        let len = n_max + 1;
        let zero = Complex64::new(0.0, 0.0);
        Ok(match *self {
            InputState::Fock { n } => {
                let mut v = vec![zero; len];
                if (n as usize) < len {
                    v[n as usize] = Complex64::new(1.0, 0.0);
                }
                v
            }
            InputState::Coherent { alpha } => coherent_amplitudes(alpha, len),
            InputState::Cat { alpha, parity } => {
                let a = alpha.norm_sqr();
                let s = parity.sign();
                // 1 / sqrt(2 (1 +- e^{-2a}))
                let norm = 1.0 / (2.0 * (1.0 + s * (-2.0 * a).exp())).sqrt();
                let norm = if parity == Parity::Odd && a < 1e-4 {
                    1.0 / (2.0 * -(-2.0 * a).exp_m1()).sqrt()
                } else {
                    norm
                };
                coherent_amplitudes(alpha, len)
                    .into_iter()
                    .enumerate()
                    .map(|(k, c)| {
                        let odd = k % 2 == 1;
                        let f = if odd { 1.0 - s } else { 1.0 + s };
                        c * (f * norm)
                    })
                    .collect()
            }
            InputState::DisplacedSqueezed { alpha, eta } => {
                let (r, phi) = (eta.norm(), eta.arg());
                let e = Complex64::from_polar(1.0, phi);
                let (ch, sh) = (r.cosh(), r.sinh());
                // (a cosh r + a^dagger e^{i phi} sinh r) |psi> = gamma |psi>
                let gamma = alpha * ch + alpha.conj() * e * sh;
                let mut v = vec![zero; len];
                v[0] = (-0.5 * alpha.norm_sqr() - 0.5 * alpha.conj().powi(2) * e * r.tanh()).exp()
                    / ch.sqrt();
                for k in 0..n_max {
                    let prev = if k > 0 { v[k - 1] } else { zero };
                    v[k + 1] = (gamma * v[k] - e * sh * (k as f64).sqrt() * prev)
                        / (ch * ((k + 1) as f64).sqrt());
                }
                v
            }
        })
    }
}

fn coherent_amplitudes(alpha: Complex64, len: usize) -> Vec<Complex64> {
    let mut v = Vec::with_capacity(len);
    let mut c = Complex64::new((-0.5 * alpha.norm_sqr()).exp(), 0.0);
    for k in 0..len {
        v.push(c);
        c = c * alpha / ((k + 1) as f64).sqrt();
    }
    v
}

/// Fixed- and moving-target fidelities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FidelityPair {
    pub f_fix: f64,
    pub f_mov: f64,
}

fn clamp01(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

/// `|T21|^{2n}` for both targets.
pub fn fidelity_fock(abs_t21: f64, n: u32) -> FidelityPair {
    let f = if n == 0 {
        1.0
    } else {
        abs_t21.powi(2).powf(n as f64)
    };
    let f = clamp01(f);
    FidelityPair { f_fix: f, f_mov: f }
}

// ln((1 - e^{-2u})^2 e^{2u - 2a} + 4 q e^{-2a}) for u >= 0; the cat numerators
// |cosh(x+iy)|^2 = sinh^2 x + cos^2 y and |sinh(x+iy)|^2 = sinh^2 x + sin^2 y
// scaled by 4 e^{-2a}.
fn scaled_numerator(u: f64, q: f64, a: f64) -> f64 {
    let d = -(-2.0 * u).exp_m1();
    (d * d * (2.0 * (u - a)).exp() + 4.0 * q * (-2.0 * a).exp()).ln()
}

fn cat_value(x: f64, y: f64, a: f64, parity: Parity) -> f64 {
    let u = x.abs();
    match parity {
        Parity::Even => {
            // / cosh^2 a = e^{2a} (1 + e^{-2a})^2 / 4
            let num = scaled_numerator(u, y.cos().powi(2), a);
            let den = 2.0 * (-2.0 * a).exp().ln_1p();
            (num - den).exp()
        }
        Parity::Odd => {
            // / sinh^2 a = e^{2a} (1 - e^{-2a})^2 / 4
            let num = scaled_numerator(u, y.sin().powi(2), a);
            let den = 2.0 * (-(-2.0 * a).exp_m1()).ln();
            (num - den).exp()
        }
    }
}

/// Cat state `N (|alpha> +- |-alpha>)`.
pub fn fidelity_cat(
    abs_t21: f64,
    theta: f64,
    alpha: Complex64,
    parity: Parity,
) -> Result<FidelityPair> {
    InputState::Cat { alpha, parity }.validate()?;
    let a = alpha.norm_sqr();
    let x = a * abs_t21 * theta.cos();
    let y = a * abs_t21 * theta.sin();
    Ok(FidelityPair {
        f_fix: clamp01(cat_value(x, y, a, parity)),
        f_mov: clamp01(cat_value(a * abs_t21, 0.0, a, parity)),
    })
}

pub fn fidelity_coherent(abs_t21: f64, theta: f64, alpha: Complex64) -> FidelityPair {
    let a = alpha.norm_sqr();
    FidelityPair {
        f_fix: clamp01((-2.0 * a * (1.0 - abs_t21 * theta.cos())).exp()),
        f_mov: clamp01((-2.0 * a * (1.0 - abs_t21)).exp()),
    }
}

/// Gaussian parameters of the state found in cavity 2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DsTransform {
    pub alpha: Complex64,
    pub eta: Complex64,
    pub beta: Complex64,
    /// Prefactor of the fidelity and its logarithm (the former may underflow).
    pub c: f64,
    pub ln_c: f64,
}

pub fn ds_transform(
    abs_t21: f64,
    theta: f64,
    alpha: Complex64,
    eta: Complex64,
) -> Result<DsTransform> {
    if !(0.0..=1.0).contains(&abs_t21) {
        return Err(Error::InvalidParameter(format!(
            "|T21| = {abs_t21} outside [0, 1]"
        )));
    }
    InputState::DisplacedSqueezed { alpha, eta }.validate()?;
    let t21 = Complex64::from_polar(abs_t21, theta);
    let (r, phi) = (eta.norm(), eta.arg());
    let a = alpha.norm_sqr();
    let t2 = abs_t21 * abs_t21;
    let loss = 1.0 - t2;
    let th = r.tanh();
    let rp = (t2 * th).atanh();
    let phip = phi + 2.0 * theta;
    let (chp, shp) = (rp.cosh(), rp.sinh());
    let beta = Complex64::from_polar(1.0, phi) * alpha.conj() * t21 * (loss * th * chp);
    let beta_p = beta * chp - beta.conj() * Complex64::from_polar(shp, phip);
    let alpha_p = t21 * alpha + beta_p;
    let cos_dphi = if a == 0.0 {
        0.0
    } else {
        (phi - 2.0 * alpha.arg()).cos()
    };
    let ln_c = chp.ln()
        - r.cosh().ln()
        - a * loss
        - a * loss * loss * th * cos_dphi
        - a * t2 * loss * loss * th * th * chp * shp * cos_dphi
        + a * t2 * loss * loss * th * th * chp * chp;
    Ok(DsTransform {
        alpha: alpha_p,
        eta: Complex64::from_polar(rp, phip),
        beta: beta_p,
        c: ln_c.exp(),
        ln_c,
    })
}

/// Logarithm of `<alpha1, eta1 | alpha2, eta2>` (principal branch).
pub fn ds_inner_product_ln(
    alpha1: Complex64,
    eta1: Complex64,
    alpha2: Complex64,
    eta2: Complex64,
) -> Complex64 {
    let (r1, p1) = (eta1.norm(), eta1.arg());
    let (r2, p2) = (eta2.norm(), eta2.arg());
    let sigma = Complex64::new(r2.cosh() * r1.cosh(), 0.0)
        - Complex64::from_polar(r2.sinh() * r1.sinh(), p2 - p1);
    let eij = |ai: Complex64, aj: Complex64, ri: f64, pi: f64| {
        (ai - aj) * ri.cosh() + (ai - aj).conj() * Complex64::from_polar(ri.sinh(), pi)
    };
    let e21 = eij(alpha2, alpha1, r2, p2);
    let e12 = eij(alpha1, alpha2, r1, p1);
    -0.5 * sigma.ln()
        + e21 * e12.conj() / (2.0 * sigma)
        + 0.5 * (alpha2 * alpha1.conj() - alpha2.conj() * alpha1)
}

/// `<alpha1, eta1 | alpha2, eta2>`.
pub fn ds_inner_product(
    alpha1: Complex64,
    eta1: Complex64,
    alpha2: Complex64,
    eta2: Complex64,
) -> Complex64 {
    ds_inner_product_ln(alpha1, eta1, alpha2, eta2).exp()
}

pub fn fidelity_ds(
    abs_t21: f64,
    theta: f64,
    alpha: Complex64,
    eta: Complex64,
) -> Result<FidelityPair> {
    let tr = ds_transform(abs_t21, theta, alpha, eta)?;
    let fix = ds_inner_product_ln(alpha, eta, tr.alpha, tr.eta);
    let rot = Complex64::from_polar(1.0, theta);
    let mov = ds_inner_product_ln(alpha * rot, eta * rot * rot, tr.alpha, tr.eta);
    Ok(FidelityPair {
        f_fix: clamp01((tr.ln_c + 2.0 * fix.re).exp()),
        f_mov: clamp01((tr.ln_c + 2.0 * mov.re).exp()),
    })
}

/// Dispatches on the state family.
pub fn fidelity(state: &InputState, abs_t21: f64, theta: f64) -> Result<FidelityPair> {
    match *state {
        InputState::Fock { n } => Ok(fidelity_fock(abs_t21, n)),
        InputState::Coherent { alpha } => Ok(fidelity_coherent(abs_t21, theta, alpha)),
        InputState::Cat { alpha, parity } => fidelity_cat(abs_t21, theta, alpha, parity),
        InputState::DisplacedSqueezed { alpha, eta } => fidelity_ds(abs_t21, theta, alpha, eta),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityTrace {
    pub g: f64,
    pub state: InputState,
    pub times: Vec<f64>,
    pub abs_t21: Vec<f64>,
    pub theta: Vec<f64>,
    pub f_fix: Vec<f64>,
    pub f_mov: Vec<f64>,
}

impl FidelityTrace {
    /// Builds the trace from samples of `|T21|` and the continuous phase.
    pub fn from_samples(
        g: f64,
        state: InputState,
        times: Vec<f64>,
        abs_t21: Vec<f64>,
        theta: Vec<f64>,
    ) -> Result<Self> {
        state.validate()?;
        if times.len() != abs_t21.len() || times.len() != theta.len() {
            return Err(Error::InvalidParameter(
                "sample series differ in length".into(),
            ));
        }
        let pairs: Vec<FidelityPair> = abs_t21
            .par_iter()
            .zip(theta.par_iter())
            .map(|(&a, &th)| fidelity(&state, a.min(1.0), th))
            .collect::<Result<_>>()?;
        let (f_fix, f_mov) = pairs.iter().map(|p| (p.f_fix, p.f_mov)).unzip();
        Ok(FidelityTrace {
            g,
            state,
            times,
            abs_t21,
            theta,
            f_fix,
            f_mov,
        })
    }

    pub fn peak_fix(&self) -> f64 {
        self.f_fix.iter().copied().fold(0.0, f64::max)
    }

    pub fn peak_mov(&self) -> f64 {
        self.f_mov.iter().copied().fold(0.0, f64::max)
    }

    /// Times of strict interior local maxima of `F_fix` above `floor`.
    pub fn fix_peak_times(&self, floor: f64) -> Vec<f64> {
        let f = &self.f_fix;
        (1..f.len().saturating_sub(1))
            .filter(|&i| f[i] > floor && f[i] > f[i - 1] && f[i] >= f[i + 1])
            .map(|i| self.times[i])
            .collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut t = CsvTable::new(w, &["t_over_2pi_g", "abs_T21", "theta", "F_fix", "F_mov"])?;
        for i in 0..self.times.len() {
            t.row(&[
                fmt_f64(
                    self.times[i] * if self.g > 0.0 { self.g } else { 1.0 } / std::f64::consts::TAU,
                ),
                fmt_f64(self.abs_t21[i]),
                fmt_f64(self.theta[i]),
                fmt_f64(self.f_fix[i]),
                fmt_f64(self.f_mov[i]),
            ])?;
        }
        t.finish()
    }
}

/// Fidelities along a mean-field trajectory, with the phase of `T21`
/// unwrapped as in [`theta_series`].
pub fn fidelity_trace(traj: &Trajectory, state: &InputState) -> Result<FidelityTrace> {
    let t21: Vec<Complex64> = traj.points.iter().map(|q| q.transmittance.t21).collect();
    let xi: Vec<f64> = traj.points.iter().map(|q| q.xi).collect();
    let theta = theta_series(&t21, &xi)?;
    FidelityTrace::from_samples(
        traj.params.g,
        *state,
        traj.times(),
        t21.iter().map(|z| z.norm()).collect(),
        theta,
    )
}
