//! Mean-field dynamics: the 2x2 transmittance matrix of the cavity modes is
//! driven by the detuning set by the mirror position, and the mirror is
//! driven by the radiation-pressure imbalance of the two cavities.
//!
//! ```text
//! i dT/dt = M(t) T,   M = [[w(t) - i g1, g], [g, -w(t) - i g2]],  w = dw - 2 k0 Re b
//! i db/dt = (wm - i gm) b - k0 <dn>,  <dn> = n_bar (|T11|^2 - |T21|^2)
//! ```
//!
//! The closure for `<dn>` is exact for the mean whenever the photons start in
//! cavity 1 against vacuum in cavity 2, whatever the input state.

// Failures carry the partial trajectory by value.
#![allow(clippy::result_large_err)]

use std::f64::consts::TAU;
use std::io::Write;

use nalgebra::Matrix2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ode::{self, Observer, Stats, Tolerances};
use crate::output::{fmt_f64, CsvTable};
use crate::params::SystemParams;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Mirror amplitude in zero-point units.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct OscillatorState {
    pub b: Complex64,
}

impl OscillatorState {
    pub fn new(b: Complex64) -> Self {
        OscillatorState { b }
    }
}

/// Linear map from the initial to the current cavity annihilation operators,
/// `a_i(t) = sum_j T_ij a_j(0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transmittance {
    pub t11: Complex64,
    pub t12: Complex64,
    pub t21: Complex64,
    pub t22: Complex64,
}

impl Transmittance {
    pub fn identity() -> Self {
        let one = Complex64::new(1.0, 0.0);
        let zero = Complex64::new(0.0, 0.0);
        Transmittance {
            t11: one,
            t12: zero,
            t21: zero,
            t22: one,
        }
    }

    pub fn from_matrix(m: &Matrix2<Complex64>) -> Self {
        Transmittance {
            t11: m[(0, 0)],
            t12: m[(0, 1)],
            t21: m[(1, 0)],
            t22: m[(1, 1)],
        }
    }

    pub fn to_matrix(&self) -> Matrix2<Complex64> {
        Matrix2::new(self.t11, self.t12, self.t21, self.t22)
    }

    /// `max |(T^dagger T - I)_ij|`.
    pub fn unitarity_defect(&self) -> f64 {
        let m = self.to_matrix();
        let g = m.adjoint() * m - Matrix2::identity();
        g.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Largest elementwise modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &Transmittance) -> f64 {
        [
            self.t11 - other.t11,
            self.t12 - other.t12,
            self.t21 - other.t21,
            self.t22 - other.t22,
        ]
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
    }
}

/// Mean photon numbers `(n_bar |T11|^2, n_bar |T21|^2)`.
pub fn populations(t: &Transmittance, n_bar: f64) -> (f64, f64) {
    (n_bar * t.t11.norm_sqr(), n_bar * t.t21.norm_sqr())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    /// Time in the natural unit `1/rate`; see [`TrajectoryPoint::t_over_2pi_g`].
    pub t: f64,
    pub osc: OscillatorState,
    pub transmittance: Transmittance,
    /// Instantaneous half detuning.
    pub omega_t: f64,
    pub n1: f64,
    pub n2: f64,
    /// `int_0^t sqrt(w^2 + g^2) dt'` along this trajectory.
    pub xi: f64,
}

impl TrajectoryPoint {
    /// Time in units of `2 pi / g` (of `2 pi` when `g = 0`).
    pub fn t_over_2pi_g(&self, g: f64) -> f64 {
        if g > 0.0 {
            self.t * g / TAU
        } else {
            self.t / TAU
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorControls {
    pub tolerances: Tolerances,
    /// Number of uniformly spaced output samples, both end points included.
    pub samples: usize,
    /// Quality gate for `max |T^dagger T - I|` on undamped runs.
    pub unitarity_tol: f64,
}

impl Default for IntegratorControls {
    fn default() -> Self {
        IntegratorControls {
            tolerances: Tolerances::default(),
            samples: 2001,
            unitarity_tol: 1e-9,
        }
    }
}

impl IntegratorControls {
    pub fn with_samples(samples: usize) -> Self {
        IntegratorControls {
            samples,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct IntegrationMeta {
    pub rtol: f64,
    pub atol: f64,
    pub stats: Stats,
    /// Largest unitarity defect over every accepted step.
    pub max_unitarity_defect: f64,
    /// Largest `|n1 + n2 - n_bar| / n_bar` over every accepted step.
    pub max_photon_defect: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub params: SystemParams,
    pub points: Vec<TrajectoryPoint>,
    pub meta: IntegrationMeta,
}

/// Integration failed; `partial` holds the samples produced before the
/// failure.
#[derive(Debug)]
pub struct IntegrationFailure {
    pub partial: Trajectory,
    pub source: Error,
}

impl std::fmt::Display for IntegrationFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} ({} samples kept)",
            self.source,
            self.partial.points.len()
        )
    }
}

impl std::error::Error for IntegrationFailure {}

impl From<IntegrationFailure> for Error {
    fn from(f: IntegrationFailure) -> Self {
        f.source
    }
}

/// Right-hand sides `(db/dt, dT/dt)`.
pub fn drift(
    _t: f64,
    osc: &OscillatorState,
    tm: &Transmittance,
    p: &SystemParams,
) -> (Complex64, Transmittance) {
    let w = p.detuning(osc.b);
    let dn = p.n_bar * (tm.t11.norm_sqr() - tm.t21.norm_sqr());
    let db = -I * Complex64::new(p.omega_m, -p.gamma_m) * osc.b + I * p.kappa0 * dn;
    let m11 = Complex64::new(w, -p.gamma1);
    let m22 = Complex64::new(-w, -p.gamma2);
    let g = p.g;
    let dt = Transmittance {
        t11: -I * (m11 * tm.t11 + g * tm.t21),
        t12: -I * (m11 * tm.t12 + g * tm.t22),
        t21: -I * (g * tm.t11 + m22 * tm.t21),
        t22: -I * (g * tm.t12 + m22 * tm.t22),
    };
    (db, dt)
}

// State layout: [b, T11, T12, T21, T22, xi].
const DIM: usize = 6;

fn pack(osc: &OscillatorState, tm: &Transmittance, xi: f64) -> [Complex64; DIM] {
    [
        osc.b,
        tm.t11,
        tm.t12,
        tm.t21,
        tm.t22,
        Complex64::new(xi, 0.0),
    ]
}

fn unpack(y: &[Complex64]) -> (OscillatorState, Transmittance, f64) {
    (
        OscillatorState::new(y[0]),
        Transmittance {
            t11: y[1],
            t12: y[2],
            t21: y[3],
            t22: y[4],
        },
        y[5].re,
    )
}

fn point(p: &SystemParams, t: f64, y: &[Complex64]) -> TrajectoryPoint {
    let (osc, tm, xi) = unpack(y);
    let (n1, n2) = populations(&tm, p.n_bar);
    TrajectoryPoint {
        t,
        osc,
        transmittance: tm,
        omega_t: p.detuning(osc.b),
        n1,
        n2,
        xi,
    }
}

/// Uniform grid of `n` points on `[t0, t1]` with exact end points.
pub fn uniform_grid(t0: f64, t1: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![t1],
        _ => {
            let dt = (t1 - t0) / (n - 1) as f64;
            let mut v: Vec<f64> = (0..n).map(|i| t0 + dt * i as f64).collect();
            v[n - 1] = t1;
            v
        }
    }
}

struct Recorder<'a> {
    p: &'a SystemParams,
    points: Vec<TrajectoryPoint>,
    max_unitarity: f64,
    max_photon: f64,
}

impl Observer for Recorder<'_> {
    fn sample(&mut self, _idx: usize, t: f64, y: &[Complex64]) -> Result<()> {
        self.points.push(point(self.p, t, y));
        Ok(())
    }

    fn step(&mut self, _t: f64, y: &[Complex64]) -> Result<()> {
        let (_, tm, _) = unpack(y);
        self.max_unitarity = self.max_unitarity.max(tm.unitarity_defect());
        if self.p.n_bar > 0.0 {
            let total = tm.t11.norm_sqr() + tm.t21.norm_sqr();
            self.max_photon = self.max_photon.max((total - 1.0).abs());
        }
        Ok(())
    }
}

/// Propagates an arbitrary mean-field state from `t0` to `t_end` (either
/// direction), sampling at `samples`.
#[allow(clippy::too_many_arguments)]
pub fn propagate(
    p: &SystemParams,
    t0: f64,
    osc: OscillatorState,
    tm: Transmittance,
    xi0: f64,
    t_end: f64,
    samples: &[f64],
    tol: Tolerances,
) -> std::result::Result<Trajectory, IntegrationFailure> {
    let params = *p;
    let sys = move |t: f64, y: &[Complex64], dy: &mut [Complex64]| {
        let (osc, tm, _) = unpack(y);
        let (db, dt) = drift(t, &osc, &tm, &params);
        dy[0] = db;
        dy[1] = dt.t11;
        dy[2] = dt.t12;
        dy[3] = dt.t21;
        dy[4] = dt.t22;
        let w = params.detuning(osc.b);
        dy[5] = Complex64::new(w.hypot(params.g), 0.0);
    };
    let y0 = pack(&osc, &tm, xi0);
    let mut rec = Recorder {
        p,
        points: Vec::with_capacity(samples.len()),
        max_unitarity: 0.0,
        max_photon: 0.0,
    };
    rec.step(t0, &y0).ok();
    let result = ode::integrate_observed(sys, t0, &y0, t_end, samples, tol, &mut rec);
    let meta = |stats: Stats, rec: &Recorder| IntegrationMeta {
        rtol: tol.rtol,
        atol: tol.atol,
        stats,
        max_unitarity_defect: rec.max_unitarity,
        max_photon_defect: rec.max_photon,
    };
    match result {
        Ok(stats) => {
            let meta = meta(stats, &rec);
            Ok(Trajectory {
                params: *p,
                points: rec.points,
                meta,
            })
        }
        Err(source) => {
            let meta = meta(Stats::default(), &rec);
            Err(IntegrationFailure {
                partial: Trajectory {
                    params: *p,
                    points: rec.points,
                    meta,
                },
                source,
            })
        }
    }
}

/// Integrates from the prepared state `b(0) = 0`, `T(0) = I` up to `t_end`.
pub fn integrate(
    p: &SystemParams,
    t_end: f64,
    ctrl: &IntegratorControls,
) -> std::result::Result<Trajectory, IntegrationFailure> {
    let samples = uniform_grid(0.0, t_end, ctrl.samples.max(2));
    integrate_at(p, t_end, &samples, ctrl)
}

/// Same as [`integrate`] with caller-chosen sample times.
pub fn integrate_at(
    p: &SystemParams,
    t_end: f64,
    samples: &[f64],
    ctrl: &IntegratorControls,
) -> std::result::Result<Trajectory, IntegrationFailure> {
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(IntegrationFailure {
            partial: Trajectory {
                params: *p,
                points: Vec::new(),
                meta: IntegrationMeta::default(),
            },
            source: Error::InvalidParameter(format!("t_end must be positive, got {t_end}")),
        });
    }
    propagate(
        p,
        0.0,
        OscillatorState::default(),
        Transmittance::identity(),
        0.0,
        t_end,
        samples,
        ctrl.tolerances,
    )
}

impl Trajectory {
    pub fn undamped(&self) -> bool {
        self.params.gamma1 == 0.0 && self.params.gamma2 == 0.0 && self.params.gamma_m == 0.0
    }

    /// Whether the undamped-run quality gate holds.
    pub fn passes_unitarity(&self, tol: f64) -> bool {
        !self.undamped() || self.meta.max_unitarity_defect <= tol
    }

    pub fn times(&self) -> Vec<f64> {
        self.points.iter().map(|q| q.t).collect()
    }

    pub fn max_n2_fraction(&self) -> f64 {
        let n = self.params.n_bar;
        self.points
            .iter()
            .map(|q| q.n2 / n)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// First sample time where `n2 / n_bar >= level`.
    pub fn first_time_n2_at_least(&self, level: f64) -> Option<f64> {
        let n = self.params.n_bar;
        self.points.iter().find(|q| q.n2 / n >= level).map(|q| q.t)
    }

    /// Largest `Re b / b0` reached before half the photons have left cavity 1
    /// (or over the whole run if that never happens).
    pub fn max_br_before_transfer(&self) -> f64 {
        let n = self.params.n_bar;
        let b0 = self.params.b0;
        self.points
            .iter()
            .take_while(|q| q.n2 / n < 0.5)
            .map(|q| q.osc.b.re / b0)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let p = &self.params;
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
        for q in &self.points {
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
            ])?;
        }
        t.finish()
    }
}

// Cubic Lagrange interpolation through four samples.
fn lagrange4(xs: &[f64; 4], ys: &[f64; 4], x: f64) -> f64 {
    let mut acc = 0.0;
    for i in 0..4 {
        let mut l = 1.0;
        for j in 0..4 {
            if i != j {
                l *= (x - xs[j]) / (xs[i] - xs[j]);
            }
        }
        acc += ys[i] * l;
    }
    acc
}

/// Times at which `Re b` crosses `b0`, refined by bisection on a local cubic
/// interpolant of the samples.
pub fn resonance_crossings(traj: &Trajectory) -> Vec<f64> {
    let b0 = traj.params.b0;
    let pts = &traj.points;
    let f: Vec<f64> = pts.iter().map(|q| q.osc.b.re - b0).collect();
    let mut out = Vec::new();
    for i in 0..pts.len().saturating_sub(1) {
        let (fa, fb) = (f[i], f[i + 1]);
        if fa == 0.0 {
            out.push(pts[i].t);
            continue;
        }
        if fa * fb >= 0.0 {
            continue;
        }
        if pts.len() < 4 {
            out.push(pts[i].t - fa * (pts[i + 1].t - pts[i].t) / (fb - fa));
            continue;
        }
        let lo = i.saturating_sub(1).min(pts.len() - 4);
        let xs = [pts[lo].t, pts[lo + 1].t, pts[lo + 2].t, pts[lo + 3].t];
        let ys = [f[lo], f[lo + 1], f[lo + 2], f[lo + 3]];
        let (mut a, mut b) = (pts[i].t, pts[i + 1].t);
        let mut fa_loc = lagrange4(&xs, &ys, a);
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            let fm = lagrange4(&xs, &ys, m);
            if fm == 0.0 {
                a = m;
                b = m;
                break;
            }
            if fa_loc * fm < 0.0 {
                b = m;
            } else {
                a = m;
                fa_loc = fm;
            }
            if b - a <= 1e-13 * b.abs().max(1.0) {
                break;
            }
        }
        out.push(0.5 * (a + b));
    }
    out
}

/// Least-squares circle through planar points (algebraic fit). Returns
/// `(center, radius)`.
pub fn fit_circle(points: &[(f64, f64)]) -> Option<((f64, f64), f64)> {
    if points.len() < 3 {
        return None;
    }
    let n = points.len() as f64;
    let (mx, my) = points
        .iter()
        .fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let (mx, my) = (mx / n, my / n);
    let (mut suu, mut svv, mut suv, mut suuu, mut svvv, mut suvv, mut svuu) =
        (0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for (x, y) in points {
        let (u, v) = (x - mx, y - my);
        suu += u * u;
        svv += v * v;
        suv += u * v;
        suuu += u * u * u;
        svvv += v * v * v;
        suvv += u * v * v;
        svuu += v * u * u;
    }
    let det = suu * svv - suv * suv;
    if det.abs() < 1e-300 {
        return None;
    }
    let rhs_u = 0.5 * (suuu + suvv);
    let rhs_v = 0.5 * (svvv + svuu);
    let uc = (rhs_u * svv - rhs_v * suv) / det;
    let vc = (suu * rhs_v - suv * rhs_u) / det;
    let r = (uc * uc + vc * vc + (suu + svv) / n).sqrt();
    Some(((uc + mx, vc + my), r))
}

/// Phase-space structure of a trajectory in units of `b0`: one circle while
/// the photons sit in cavity 1 and, if a transfer happened, another one
/// while they sit in cavity 2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhasePortrait {
    pub home_center: (f64, f64),
    pub home_radius: f64,
    pub transferred: Option<((f64, f64), f64)>,
}

impl PhasePortrait {
    /// Two arcs whose centers lie on opposite sides of the origin.
    pub fn has_two_arcs(&self) -> bool {
        match self.transferred {
            Some(((cx, _), _)) => {
                let sep = (cx - self.home_center.0).abs();
                cx * self.home_center.0 < 0.0 && sep > 0.5
            }
            None => false,
        }
    }
}

pub fn phase_portrait(traj: &Trajectory) -> Option<PhasePortrait> {
    let n = traj.params.n_bar;
    let b0 = traj.params.b0;
    let home: Vec<(f64, f64)> = traj
        .points
        .iter()
        .filter(|q| q.n2 / n < 0.01)
        .map(|q| (q.osc.b.re / b0, q.osc.b.im / b0))
        .collect();
    let away: Vec<(f64, f64)> = traj
        .points
        .iter()
        .filter(|q| q.n2 / n > 0.99)
        .map(|q| (q.osc.b.re / b0, q.osc.b.im / b0))
        .collect();
    let (home_center, home_radius) = fit_circle(&home)?;
    Some(PhasePortrait {
        home_center,
        home_radius,
        transferred: fit_circle(&away),
    })
}
