//! C interface to `dynres`.
//!
//! Objects are opaque handles created by `*_new`/`dynres_simulate` and
//! released with the matching `*_free`. Every fallible call returns a
//! `DynresStatus`; on failure `dynres_last_error` gives a message for the
//! calling thread. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use dynres::fidelity::{fidelity_cat, fidelity_coherent, fidelity_ds, fidelity_fock, FidelityPair};
use dynres::semiclassical::{self, IntegratorControls};
use dynres::{Complex64, Error, Parity, SystemParams, Trajectory};

/// Result codes of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DynresStatus {
    Ok = 0,
    /// Null pointer, bad UTF-8 or out-of-range index.
    InvalidArgument = 1,
    InvalidParameter = 2,
    InvalidState = 3,
    Integration = 4,
    UnderSampled = 5,
    Truncation = 6,
    Config = 7,
    Io = 8,
    /// Internal panic; the handle involved should be freed.
    Internal = 9,
}

impl From<&Error> for DynresStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::InvalidParameter(_) => DynresStatus::InvalidParameter,
            Error::InvalidState(_) => DynresStatus::InvalidState,
            Error::Integration { .. } => DynresStatus::Integration,
            Error::UnderSampled { .. } => DynresStatus::UnderSampled,
            Error::Truncation(_) => DynresStatus::Truncation,
            Error::Config(_) | Error::Json(_) => DynresStatus::Config,
            Error::Io(_) | Error::Csv(_) => DynresStatus::Io,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard<F: FnOnce() -> Result<(), (DynresStatus, String)>>(f: F) -> DynresStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DynresStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            DynresStatus::Internal
        }
    }
}

fn lift(e: Error) -> (DynresStatus, String) {
    ((&e).into(), e.to_string())
}

fn null_arg(name: &str) -> (DynresStatus, String) {
    (DynresStatus::InvalidArgument, format!("{name} is null"))
}

/// Copy of the message of the last failed call on this thread, or null.
/// Release with `dynres_string_free`.
#[no_mangle]
pub extern "C" fn dynres_last_error() -> *mut c_char {
    LAST_ERROR.with(|e| {
        e.borrow()
            .as_ref()
            .map_or(ptr::null_mut(), |c| c.clone().into_raw())
    })
}

/// Frees a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from `dynres_last_error` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn dynres_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dynres_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Opaque parameter set.
pub struct DynresParams {
    inner: SystemParams,
}

/// Plain copy of a parameter set.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DynresParamValues {
    pub g: f64,
    pub delta_omega: f64,
    pub omega_m: f64,
    pub kappa0: f64,
    pub b0: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma_m: f64,
    pub n_bar: f64,
    /// Derived: photon number needed to reach the crossing.
    pub n_threshold: f64,
    /// Derived: adiabaticity parameter.
    pub nu: f64,
}

/// Builds parameters from `g`, `g / delta_omega`, `omega_m / g`,
/// `n_bar / n_thr` and `n_bar`, all undamped.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn dynres_params_new(
    g: f64,
    ratio_g_over_dw: f64,
    ratio_wm_over_g: f64,
    n_ratio: f64,
    n_bar: f64,
    out: *mut *mut DynresParams,
) -> DynresStatus {
    guard(|| {
        if out.is_null() {
            return Err(null_arg("out"));
        }
        let inner =
            SystemParams::from_dimensionless(g, ratio_g_over_dw, ratio_wm_over_g, n_ratio, n_bar)
                .map_err(lift)?;
        *out = Box::into_raw(Box::new(DynresParams { inner }));
        Ok(())
    })
}

/// The reference regime: `omega_m/g = 1e-3`, `g/delta_omega = 1e-2`,
/// `n_bar/n_thr = 5`, `n_bar = 100`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn dynres_params_reference(out: *mut *mut DynresParams) -> DynresStatus {
    guard(|| {
        if out.is_null() {
            return Err(null_arg("out"));
        }
        *out = Box::into_raw(Box::new(DynresParams {
            inner: SystemParams::reference(),
        }));
        Ok(())
    })
}

/// Sets the three damping rates.
///
/// # Safety
/// `params` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn dynres_params_set_damping(
    params: *mut DynresParams,
    gamma1: f64,
    gamma2: f64,
    gamma_m: f64,
) -> DynresStatus {
    guard(|| {
        let p = params.as_mut().ok_or_else(|| null_arg("params"))?;
        p.inner = p
            .inner
            .with_damping(gamma1, gamma2, gamma_m)
            .map_err(lift)?;
        Ok(())
    })
}

/// # Safety
/// `params` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dynres_params_values(
    params: *const DynresParams,
    out: *mut DynresParamValues,
) -> DynresStatus {
    guard(|| {
        let p = &params.as_ref().ok_or_else(|| null_arg("params"))?.inner;
        let out = out.as_mut().ok_or_else(|| null_arg("out"))?;
        *out = DynresParamValues {
            g: p.g,
            delta_omega: p.delta_omega,
            omega_m: p.omega_m,
            kappa0: p.kappa0,
            b0: p.b0,
            gamma1: p.gamma1,
            gamma2: p.gamma2,
            gamma_m: p.gamma_m,
            n_bar: p.n_bar,
            n_threshold: p.n_threshold(),
            nu: dynres::params::adiabaticity_nu(p),
        };
        Ok(())
    })
}

/// Frees a parameter handle. Null is ignored.
///
/// # Safety
/// `params` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dynres_params_free(params: *mut DynresParams) {
    if !params.is_null() {
        drop(Box::from_raw(params));
    }
}

/// Opaque mean-field trajectory.
pub struct DynresTrajectory {
    inner: Trajectory,
}

/// One trajectory sample.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DynresPoint {
    /// Time in units of `2 pi / g`.
    pub t_over_2pi_g: f64,
    pub b_re: f64,
    pub b_im: f64,
    /// Instantaneous half detuning.
    pub omega: f64,
    pub n1: f64,
    pub n2: f64,
    pub t21_re: f64,
    pub t21_im: f64,
    pub xi: f64,
}

/// Integrates the mean-field model from the prepared state.
/// `t_end_over_2pi_g <= 0` selects 1.2 mechanical periods; `samples` counts
/// uniformly spaced outputs including both ends.
///
/// # Safety
/// `params` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dynres_simulate(
    params: *const DynresParams,
    t_end_over_2pi_g: f64,
    samples: usize,
    out: *mut *mut DynresTrajectory,
) -> DynresStatus {
    guard(|| {
        let p = &params.as_ref().ok_or_else(|| null_arg("params"))?.inner;
        if out.is_null() {
            return Err(null_arg("out"));
        }
        if samples < 2 {
            return Err((
                DynresStatus::InvalidArgument,
                "samples must be at least 2".into(),
            ));
        }
        let t_end = if t_end_over_2pi_g > 0.0 {
            t_end_over_2pi_g * p.time_unit()
        } else {
            1.2 * p.mechanical_period()
        };
        let ctrl = IntegratorControls::with_samples(samples);
        let inner = semiclassical::integrate(p, t_end, &ctrl).map_err(|f| lift(f.into()))?;
        *out = Box::into_raw(Box::new(DynresTrajectory { inner }));
        Ok(())
    })
}

/// Number of samples, or 0 for a null handle.
///
/// # Safety
/// `traj` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dynres_trajectory_len(traj: *const DynresTrajectory) -> usize {
    traj.as_ref().map_or(0, |t| t.inner.points.len())
}

/// # Safety
/// `traj` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dynres_trajectory_point(
    traj: *const DynresTrajectory,
    index: usize,
    out: *mut DynresPoint,
) -> DynresStatus {
    guard(|| {
        let t = &traj.as_ref().ok_or_else(|| null_arg("traj"))?.inner;
        let out = out.as_mut().ok_or_else(|| null_arg("out"))?;
        let q = t.points.get(index).ok_or_else(|| {
            (
                DynresStatus::InvalidArgument,
                format!("index {index} out of range"),
            )
        })?;
        *out = DynresPoint {
            t_over_2pi_g: q.t_over_2pi_g(t.params.g),
            b_re: q.osc.b.re,
            b_im: q.osc.b.im,
            omega: q.omega_t,
            n1: q.n1,
            n2: q.n2,
            t21_re: q.transmittance.t21.re,
            t21_im: q.transmittance.t21.im,
            xi: q.xi,
        };
        Ok(())
    })
}

/// Largest `max |T^dagger T - I|` over the run, or NaN for a null handle.
///
/// # Safety
/// `traj` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dynres_trajectory_unitarity_defect(traj: *const DynresTrajectory) -> f64 {
    traj.as_ref()
        .map_or(f64::NAN, |t| t.inner.meta.max_unitarity_defect)
}

/// Writes the trajectory as CSV.
///
/// # Safety
/// `traj` must be a live handle and `path` a NUL-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn dynres_trajectory_write_csv(
    traj: *const DynresTrajectory,
    path: *const c_char,
) -> DynresStatus {
    guard(|| {
        let t = &traj.as_ref().ok_or_else(|| null_arg("traj"))?.inner;
        if path.is_null() {
            return Err(null_arg("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| (DynresStatus::InvalidArgument, "path is not UTF-8".into()))?;
        dynres::output::write_csv_file(Path::new(path), |w| t.write_csv(w)).map_err(lift)
    })
}

/// Frees a trajectory handle. Null is ignored.
///
/// # Safety
/// `traj` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dynres_trajectory_free(traj: *mut DynresTrajectory) {
    if !traj.is_null() {
        drop(Box::from_raw(traj));
    }
}

/// Fixed- and moving-target fidelities.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DynresFidelity {
    pub f_fix: f64,
    pub f_mov: f64,
}

impl From<FidelityPair> for DynresFidelity {
    fn from(p: FidelityPair) -> Self {
        DynresFidelity {
            f_fix: p.f_fix,
            f_mov: p.f_mov,
        }
    }
}

fn check_transfer(abs_t21: f64, theta: f64) -> Result<(), (DynresStatus, String)> {
    if !(abs_t21.is_finite() && (0.0..=1.0).contains(&abs_t21) && theta.is_finite()) {
        return Err((
            DynresStatus::InvalidArgument,
            format!("need 0 <= |T21| <= 1 and finite theta, got {abs_t21}, {theta}"),
        ));
    }
    Ok(())
}

unsafe fn write_fidelity(
    out: *mut DynresFidelity,
    f: impl FnOnce() -> Result<FidelityPair, (DynresStatus, String)>,
) -> DynresStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null_arg("out"))?;
        *out = f()?.into();
        Ok(())
    })
}

/// Fock state `|n>`: both targets give `|T21|^(2n)`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dynres_fidelity_fock(
    abs_t21: f64,
    n: u32,
    out: *mut DynresFidelity,
) -> DynresStatus {
    write_fidelity(out, || {
        check_transfer(abs_t21, 0.0)?;
        Ok(fidelity_fock(abs_t21, n))
    })
}

/// Coherent state `|alpha>` with `T21 = |T21| e^(i theta)`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dynres_fidelity_coherent(
    abs_t21: f64,
    theta: f64,
    alpha_re: f64,
    alpha_im: f64,
    out: *mut DynresFidelity,
) -> DynresStatus {
    write_fidelity(out, || {
        check_transfer(abs_t21, theta)?;
        Ok(fidelity_coherent(
            abs_t21,
            theta,
            Complex64::new(alpha_re, alpha_im),
        ))
    })
}

/// Cat state; `odd` selects the odd superposition.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dynres_fidelity_cat(
    abs_t21: f64,
    theta: f64,
    alpha_re: f64,
    alpha_im: f64,
    odd: bool,
    out: *mut DynresFidelity,
) -> DynresStatus {
    write_fidelity(out, || {
        check_transfer(abs_t21, theta)?;
        let parity = if odd { Parity::Odd } else { Parity::Even };
        fidelity_cat(abs_t21, theta, Complex64::new(alpha_re, alpha_im), parity).map_err(lift)
    })
}

/// Displaced squeezed state `D(alpha) S(eta) |0>`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dynres_fidelity_displaced_squeezed(
    abs_t21: f64,
    theta: f64,
    alpha_re: f64,
    alpha_im: f64,
    eta_re: f64,
    eta_im: f64,
    out: *mut DynresFidelity,
) -> DynresStatus {
    write_fidelity(out, || {
        check_transfer(abs_t21, theta)?;
        fidelity_ds(
            abs_t21,
            theta,
            Complex64::new(alpha_re, alpha_im),
            Complex64::new(eta_re, eta_im),
        )
        .map_err(lift)
    })
}
