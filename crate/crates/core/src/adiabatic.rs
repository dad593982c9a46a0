//! Closed-form adiabatic solution.
//!
//! For equal cavity damping the dynamic matrix `M = [[w, g], [g, -w]] - i gamma`
//! is diagonalized by the real rotation `W = [[c, -s], [s, c]]` with
//! eigenvalues `+-eps - i gamma`, `eps = sqrt(w^2 + g^2)`. Dropping the
//! non-adiabatic coupling between eigenmodes gives
//!
//! ```text
//! T(t) = W(t) diag(e^{-i xi}, e^{i xi}) W(0)^T e^{-gamma t},   xi = int_0^t eps
//! ```
//!
//! The eigenmode populations are then constant (up to damping), which closes
//! the mirror equation on `b` alone.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::io::Write;

use nalgebra::Matrix2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ode::{self, Tolerances};
use crate::output::{fmt_f64, CsvTable};
use crate::params::SystemParams;
use crate::semiclassical::{uniform_grid, IntegratorControls, Trajectory, Transmittance};

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Instantaneous eigenframe of the dynamic matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenFrame {
    pub omega: f64,
    pub g: f64,
    pub epsilon: f64,
    pub s: f64,
    pub c: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub lambda_plus: Complex64,
    pub lambda_minus: Complex64,
}

pub fn eigenframe(omega: f64, g: f64, gamma1: f64, gamma2: f64) -> Result<EigenFrame> {
    if !(g > 0.0 && g.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "g must be positive, got {g}"
        )));
    }
    if !omega.is_finite() {
        return Err(Error::InvalidParameter("detuning must be finite".into()));
    }
    let epsilon = omega.hypot(g);
    // c^2 - s^2 = w / eps and 2 s c = g / eps; take the root without
    // cancellation and get the other from the product.
    let (s, c) = if omega >= 0.0 {
        let c = ((1.0 + omega / epsilon) / 2.0).sqrt();
        (g / (2.0 * epsilon * c), c)
    } else {
        let s = ((1.0 - omega / epsilon) / 2.0).sqrt();
        (s, g / (2.0 * epsilon * s))
    };
    let damping = Complex64::new(0.0, -(gamma1 + gamma2) / 2.0);
    Ok(EigenFrame {
        omega,
        g,
        epsilon,
        s,
        c,
        gamma1,
        gamma2,
        lambda_plus: epsilon + damping,
        lambda_minus: -epsilon + damping,
    })
}

impl EigenFrame {
    pub fn rotation(&self) -> Matrix2<f64> {
        Matrix2::new(self.c, -self.s, self.s, self.c)
    }

    pub fn dynamic_matrix(&self) -> Matrix2<Complex64> {
        Matrix2::new(
            Complex64::new(self.omega, -self.gamma1),
            Complex64::new(self.g, 0.0),
            Complex64::new(self.g, 0.0),
            Complex64::new(-self.omega, -self.gamma2),
        )
    }
}

/// `max |W^-1 M W - diag(lambda+, lambda-)|`; meaningful for equal damping.
pub fn verify_diagonalization(frame: &EigenFrame) -> f64 {
    let w = frame.rotation().map(|x| Complex64::new(x, 0.0));
    let d = w.transpose() * frame.dynamic_matrix() * w;
    let target = Matrix2::new(
        frame.lambda_plus,
        Complex64::default(),
        Complex64::default(),
        frame.lambda_minus,
    );
    (d - target).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Undamped closed-form transmittance between two frames separated by the
/// accumulated phase `xi`.
pub fn closed_form_t(frame0: &EigenFrame, frame_t: &EigenFrame, xi: f64) -> Transmittance {
    let (s0, c0, s, c) = (frame0.s, frame0.c, frame_t.s, frame_t.c);
    let em = Complex64::from_polar(1.0, -xi);
    let ep = em.conj();
    let t11 = c * c0 * em + s * s0 * ep;
    let t21 = s * c0 * em - c * s0 * ep;
    Transmittance {
        t11,
        t12: -t21.conj(),
        t21,
        t22: t11.conj(),
    }
}

/// `|T21|` from the interference form of the closed solution.
pub fn t21_magnitude(frame0: &EigenFrame, frame_t: &EigenFrame, xi: f64) -> f64 {
    let (s0, c0, s, c) = (frame0.s, frame0.c, frame_t.s, frame_t.c);
    let v = s * s * c0 * c0 + c * c * s0 * s0 - 2.0 * s * c * s0 * c0 * (2.0 * xi).cos();
    v.max(0.0).sqrt()
}

/// `tan theta` of the closed-form `T21`, i.e. `theta` modulo `pi`.
pub fn tan_theta(frame0: &EigenFrame, frame_t: &EigenFrame, xi: f64) -> f64 {
    let (s0, c0, s, c) = (frame0.s, frame0.c, frame_t.s, frame_t.c);
    (c * s0 + s * c0) / (c * s0 - s * c0) * xi.tan()
}

/// Continuous phase of a sampled `T21` series.
///
/// The fast rotation is removed with the accumulated phase `xi` before
/// unwrapping, so the samples only need to resolve the slow part. Returns
/// [`Error::UnderSampled`] if the demodulated phase still jumps by more than
/// `pi / 2` between samples where `|T21|` is well above its noise floor
/// (phases of near-zero amplitudes carry no information and are not checked).
pub fn theta_series(t21: &[Complex64], xi: &[f64]) -> Result<Vec<f64>> {
    if t21.len() != xi.len() {
        return Err(Error::InvalidParameter(
            "phase series differ in length".into(),
        ));
    }
    let peak = t21.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let floor = 0.1 * peak;
    let mut out = Vec::with_capacity(t21.len());
    let mut prev: Option<(f64, f64)> = None;
    for (k, (z, &x)) in t21.iter().zip(xi).enumerate() {
        let raw = (z * Complex64::from_polar(1.0, x)).arg();
        let phase = match prev {
            None => raw,
            Some((p, _)) => p + (raw - p + PI).rem_euclid(TAU) - PI,
        };
        if let Some((p, prev_abs)) = prev {
            let jump = (phase - p).abs();
            if jump > FRAC_PI_2 && prev_abs > floor && z.norm() > floor {
                return Err(Error::UnderSampled { index: k - 1, jump });
            }
        }
        prev = Some((phase, z.norm()));
        out.push(phase);
    }
    Ok(out.into_iter().zip(xi).map(|(p, x)| p - x).collect())
}

/// Unwrapped phase of the closed-form `T21` along a frame series.
pub fn theta_phase(frame0: &EigenFrame, frames: &[EigenFrame], xi: &[f64]) -> Result<Vec<f64>> {
    if frames.len() != xi.len() {
        return Err(Error::InvalidParameter(
            "frame and phase series differ in length".into(),
        ));
    }
    let t21: Vec<Complex64> = frames
        .iter()
        .zip(xi)
        .map(|(f, &x)| closed_form_t(frame0, f, x).t21)
        .collect();
    theta_series(&t21, xi)
}

/// Reduced mirror equation with constant eigenmode population imbalance
/// `n_bar w(0) / eps(0)` (damped by `e^{-2 gamma t}` for equal cavity
/// damping `gamma`).
pub fn adiabatic_oscillator_rhs(
    t: f64,
    b: Complex64,
    p: &SystemParams,
    frame0: &EigenFrame,
) -> Complex64 {
    let w = p.detuning(b);
    let eps = w.hypot(p.g);
    let dn = p.n_bar * frame0.omega / frame0.epsilon * (-2.0 * p.gamma1 * t).exp();
    -I * Complex64::new(p.omega_m, -p.gamma_m) * b + I * p.kappa0 * (w / eps) * dn
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdiabaticSolution {
    pub params: SystemParams,
    pub times: Vec<f64>,
    pub b: Vec<Complex64>,
    pub xi: Vec<f64>,
    pub theta: Vec<f64>,
    pub transmittance: Vec<Transmittance>,
}

fn check_equal_damping(p: &SystemParams) -> Result<()> {
    if p.gamma1 != p.gamma2 {
        return Err(Error::InvalidParameter(format!(
            "closed-form solution needs equal cavity damping (gamma1 = {}, gamma2 = {})",
            p.gamma1, p.gamma2
        )));
    }
    Ok(())
}

/// Integrates the reduced mirror equation together with `xi` and assembles
/// the closed-form transmittance on a uniform grid of `ctrl.samples` points.
pub fn adiabatic_trajectory(
    p: &SystemParams,
    t_end: f64,
    ctrl: &IntegratorControls,
) -> Result<AdiabaticSolution> {
    let samples = uniform_grid(0.0, t_end, ctrl.samples.max(2));
    adiabatic_trajectory_at(p, t_end, &samples, ctrl.tolerances)
}

pub fn adiabatic_trajectory_at(
    p: &SystemParams,
    t_end: f64,
    samples: &[f64],
    tol: Tolerances,
) -> Result<AdiabaticSolution> {
    p.validate()?;
    check_equal_damping(p)?;
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "t_end must be positive, got {t_end}"
        )));
    }
    let frame0 = eigenframe(p.detuning(Complex64::default()), p.g, p.gamma1, p.gamma2)?;
    let params = *p;
    let sys = move |t: f64, y: &[Complex64], dy: &mut [Complex64]| {
        dy[0] = adiabatic_oscillator_rhs(t, y[0], &params, &frame0);
        dy[1] = Complex64::new(params.detuning(y[0]).hypot(params.g), 0.0);
    };
    let mut times = Vec::with_capacity(samples.len());
    let mut b = Vec::with_capacity(samples.len());
    let mut xi = Vec::with_capacity(samples.len());
    let y0 = [Complex64::default(), Complex64::default()];
    ode::integrate(sys, 0.0, &y0, t_end, samples, tol, |_, t, y| {
        times.push(t);
        b.push(y[0]);
        xi.push(y[1].re);
        Ok(())
    })?;
    let mut frames = Vec::with_capacity(times.len());
    for bi in &b {
        frames.push(eigenframe(p.detuning(*bi), p.g, p.gamma1, p.gamma2)?);
    }
    let transmittance: Vec<Transmittance> = frames
        .iter()
        .zip(&xi)
        .zip(&times)
        .map(|((f, &x), &t)| {
            let tm = closed_form_t(&frame0, f, x);
            let decay = (-p.gamma1 * t).exp();
            Transmittance {
                t11: tm.t11 * decay,
                t12: tm.t12 * decay,
                t21: tm.t21 * decay,
                t22: tm.t22 * decay,
            }
        })
        .collect();
    let t21: Vec<Complex64> = transmittance.iter().map(|t| t.t21).collect();
    let theta = theta_series(&t21, &xi)?;
    Ok(AdiabaticSolution {
        params: *p,
        times,
        b,
        xi,
        theta,
        transmittance,
    })
}

/// Largest elementwise `|T_closed - T_ode|` over common samples.
pub fn sup_norm_error(sol: &AdiabaticSolution, traj: &Trajectory) -> Result<f64> {
    if sol.times.len() != traj.points.len() {
        return Err(Error::InvalidParameter(
            "solutions sampled on different grids".into(),
        ));
    }
    let mut worst: f64 = 0.0;
    for ((tm, q), &t) in sol.transmittance.iter().zip(&traj.points).zip(&sol.times) {
        if (q.t - t).abs() > 1e-12 * t.abs().max(1.0) {
            return Err(Error::InvalidParameter(
                "solutions sampled on different grids".into(),
            ));
        }
        worst = worst.max(tm.max_abs_diff(&q.transmittance));
    }
    Ok(worst)
}

/// Trajectory CSV (same columns as the mean-field export) with the phase of
/// the integrated `T21` and the closed-form `|T21|` appended.
pub fn write_comparison_csv<W: Write>(
    traj: &Trajectory,
    sol: &AdiabaticSolution,
    w: W,
) -> Result<()> {
    if sol.times.len() != traj.points.len() {
        return Err(Error::InvalidParameter(
            "solutions sampled on different grids".into(),
        ));
    }
    let t21: Vec<Complex64> = traj.points.iter().map(|q| q.transmittance.t21).collect();
    let xi: Vec<f64> = traj.points.iter().map(|q| q.xi).collect();
    let theta = theta_series(&t21, &xi)?;
    let p = &traj.params;
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
            "theta",
            "abs_T21_closed",
        ],
    )?;
    for (i, q) in traj.points.iter().enumerate() {
        t.row(&[
            fmt_f64(q.t_over_2pi_g(p.g)),
            fmt_f64(q.osc.b.re / p.b0),
            fmt_f64(q.osc.b.im / p.b0),
            fmt_f64(q.omega_t / p.delta_omega),
            fmt_f64(q.n1 / p.n_bar),
            fmt_f64(q.n2 / p.n_bar),
            fmt_f64(q.transmittance.t21.norm()),
            fmt_f64(q.transmittance.t21.arg()),
            fmt_f64(q.xi),
            fmt_f64(theta[i]),
            fmt_f64(sol.transmittance[i].t21.norm()),
        ])?;
    }
    t.finish()
}
