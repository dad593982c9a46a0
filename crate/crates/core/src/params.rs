//! Physical parameters and the regime checks that justify the mean-field,
//! weak-coupling and adiabatic treatment.
//!
//! Rates are angular frequencies in arbitrary units; the builders default to
//! `g = 1` so that every rate is expressed in units of the optical coupling.
//! The mirror amplitude `b` is measured in units of the zero-point length.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fidelity::{InputState, Parity};

/// Relative tolerance for the two identities tying `(kappa0, b0)` to the
/// frequency splitting and to the threshold photon number.
pub const CONSISTENCY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemParams {
    /// Optical coupling between the cavities.
    pub g: f64,
    /// Half frequency splitting `(w1 - w2) / 2` at the mirror equilibrium.
    pub delta_omega: f64,
    /// Mechanical frequency.
    pub omega_m: f64,
    /// Single-phonon optomechanical coupling.
    pub kappa0: f64,
    /// Equilibrium offset of the mirror in zero-point units.
    pub b0: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma_m: f64,
    /// Mean photon number initially loaded into cavity 1.
    pub n_bar: f64,
}

impl SystemParams {
    /// Builds parameters from the dimensionless ratios that control the
    /// dynamics: `g / delta_omega`, `omega_m / g` and `n_bar / n_thr`.
    ///
    /// Only these ratios enter the observable dynamics, so the remaining
    /// freedom in `(kappa0, b0)` is fixed by requiring both
    /// `delta_omega = 2 kappa0 b0` and `n_thr = omega_m b0 / (2 kappa0)`.
    pub fn from_dimensionless(
        g: f64,
        ratio_g_over_dw: f64,
        ratio_wm_over_g: f64,
        n_ratio: f64,
        n_bar: f64,
    ) -> Result<Self> {
        for (name, v) in [
            ("g", g),
            ("g/delta_omega", ratio_g_over_dw),
            ("omega_m/g", ratio_wm_over_g),
            ("n_bar/n_thr", n_ratio),
            ("n_bar", n_bar),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be finite and > 0, got {v}"
                )));
            }
        }
        let delta_omega = g / ratio_g_over_dw;
        let omega_m = g * ratio_wm_over_g;
        let n_thr = n_bar / n_ratio;
        let kappa0 = (omega_m * delta_omega / (4.0 * n_thr)).sqrt();
        let b0 = (delta_omega * n_thr / omega_m).sqrt();
        let p = SystemParams {
            g,
            delta_omega,
            omega_m,
            kappa0,
            b0,
            gamma1: 0.0,
            gamma2: 0.0,
            gamma_m: 0.0,
            n_bar,
        };
        p.validate()?;
        Ok(p)
    }

    /// The reference regime of the figures: `omega_m/g = 1e-3`,
    /// `g/delta_omega = 1e-2`, `n_bar/n_thr = 5`, with `n_bar = 100`.
    pub fn reference() -> Self {
        Self::from_dimensionless(1.0, 1e-2, 1e-3, 5.0, 100.0)
            .expect("reference parameters are valid")
    }

    pub fn with_damping(mut self, gamma1: f64, gamma2: f64, gamma_m: f64) -> Result<Self> {
        self.gamma1 = gamma1;
        self.gamma2 = gamma2;
        self.gamma_m = gamma_m;
        self.validate()?;
        Ok(self)
    }

    /// Checks positivity and the `delta_omega = 2 kappa0 b0` identity.
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("delta_omega", self.delta_omega),
            ("omega_m", self.omega_m),
            ("kappa0", self.kappa0),
            ("b0", self.b0),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be finite and > 0, got {v}"
                )));
            }
        }
        // g = 0 is allowed as the decoupled limit
        let non_negative = [
            ("g", self.g),
            ("n_bar", self.n_bar),
            ("gamma1", self.gamma1),
            ("gamma2", self.gamma2),
            ("gamma_m", self.gamma_m),
        ];
        for (name, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        let split = 2.0 * self.kappa0 * self.b0;
        if ((split - self.delta_omega) / self.delta_omega).abs() > CONSISTENCY_TOL {
            return Err(Error::InvalidParameter(format!(
                "delta_omega = {} differs from 2 kappa0 b0 = {split}",
                self.delta_omega
            )));
        }
        Ok(())
    }

    /// Photon number needed for radiation pressure to reach the crossing.
    pub fn n_threshold(&self) -> f64 {
        n_threshold(self)
    }

    pub fn n_ratio(&self) -> f64 {
        self.n_bar / self.n_threshold()
    }

    /// Static equilibrium shift `kappa0 n_bar / omega_m` with all photons in
    /// cavity 1.
    pub fn b_eq(&self) -> f64 {
        self.kappa0 * self.n_bar / self.omega_m
    }

    /// Instantaneous half detuning `delta_omega - 2 kappa0 Re b`.
    ///
    /// Equal to `delta_omega (1 - Re b / b0)` for consistent parameters, and
    /// still meaningful for the degenerate `kappa0 = 0` test cases.
    #[inline]
    pub fn detuning(&self, b: Complex64) -> f64 {
        self.delta_omega - 2.0 * self.kappa0 * b.re
    }

    /// One mechanical period.
    /// Unit of the reported time axis, `2 pi / g`, or `2 pi` when `g = 0`.
    pub fn time_unit(&self) -> f64 {
        if self.g > 0.0 {
            std::f64::consts::TAU / self.g
        } else {
            std::f64::consts::TAU
        }
    }

    pub fn mechanical_period(&self) -> f64 {
        std::f64::consts::TAU / self.omega_m
    }
}

pub fn n_threshold(p: &SystemParams) -> f64 {
    p.omega_m * p.b0 / (2.0 * p.kappa0)
}

/// Adiabaticity parameter `(1/8) (n_bar/n_thr) (omega_m delta_omega / g^2)`.
pub fn adiabaticity_nu(p: &SystemParams) -> f64 {
    0.125 * p.n_ratio() * p.omega_m * p.delta_omega / (p.g * p.g)
}

/// High-amplitude metric for a displaced squeezed state `D(alpha) S(eta)|0>`:
/// relative photon-number fluctuation.
pub fn hal_displaced_squeezed(alpha: Complex64, eta: Complex64) -> Result<f64> {
    if !(alpha.re.is_finite() && alpha.im.is_finite() && eta.re.is_finite() && eta.im.is_finite()) {
        return Err(Error::InvalidState(format!(
            "non-finite displaced squeezed parameters alpha = {alpha}, eta = {eta}"
        )));
    }
    let a2 = alpha.norm_sqr();
    let r = eta.norm();
    let dphi = eta.arg() - 2.0 * alpha.arg();
    let (s2, c2) = ((2.0 * r).sinh(), (2.0 * r).cosh());
    let mean = a2 + r.sinh().powi(2);
    if mean == 0.0 {
        return Err(Error::InvalidState(
            "vacuum has no photon number to compare fluctuations against".into(),
        ));
    }
    let var = a2 * (c2 - s2 * dphi.cos()) + 0.5 * s2 * s2;
    Ok(var.max(0.0).sqrt() / mean)
}

/// Both sides of the cat-state high-amplitude condition `lhs << rhs`, with
/// `lhs = 1 +- 2|alpha|^2 exp(-2|alpha|^2)` and `rhs = |alpha|`.
pub fn hal_cat(alpha: Complex64, parity: Parity) -> (f64, f64) {
    let a2 = alpha.norm_sqr();
    let corr = 2.0 * a2 * (-2.0 * a2).exp();
    let lhs = match parity {
        Parity::Even => 1.0 + corr,
        Parity::Odd => 1.0 - corr,
    };
    (lhs, alpha.norm())
}

/// Number-fluctuation ratio for `|n> (x) |0>`. Fock states have no number
/// variance so the ratio is zero whenever it is defined.
pub fn hal_fock(n: u32) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidState(
            "Fock n = 0 has zero mean photon difference".into(),
        ));
    }
    Ok(0.0)
}

/// Thresholds standing in for the "much less than" conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    pub weak_coupling: f64,
    pub slow_mech: f64,
    pub adiabaticity: f64,
    pub hal: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            weak_coupling: 0.1,
            slow_mech: 0.1,
            adiabaticity: 0.1,
            hal: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PassFlags {
    pub weak_coupling: bool,
    pub slow_mech: bool,
    pub adiabatic: bool,
    /// `n_bar > n_thr`, i.e. radiation pressure can reach the crossing.
    pub above_threshold: bool,
    pub hal: Option<bool>,
}

impl PassFlags {
    pub fn all(&self) -> bool {
        self.weak_coupling
            && self.slow_mech
            && self.adiabatic
            && self.above_threshold
            && self.hal.unwrap_or(true)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeReport {
    pub weak_coupling_ratio: f64,
    pub slow_mech_ratio: f64,
    pub nu: f64,
    pub n_ratio: f64,
    pub hal_metric: Option<f64>,
    pub thresholds: Thresholds,
    pub pass_flags: PassFlags,
    /// Names of the failed conditions, empty when everything passes.
    pub failures: Vec<String>,
}

pub fn regime_report(
    p: &SystemParams,
    state: Option<&InputState>,
    thresholds: &Thresholds,
) -> Result<RegimeReport> {
    p.validate()?;
    let weak_coupling_ratio = p.g / p.delta_omega;
    let slow_mech_ratio = p.omega_m / p.g;
    let nu = adiabaticity_nu(p);
    let n_ratio = p.n_ratio();

    let hal_metric = match state {
        None => None,
        Some(s) => {
            s.validate()?;
            Some(match *s {
                InputState::Fock { n } => hal_fock(n)?,
                InputState::Coherent { alpha } => {
                    hal_displaced_squeezed(alpha, Complex64::new(0.0, 0.0))?
                }
                InputState::Cat { alpha, parity } => {
                    let (lhs, rhs) = hal_cat(alpha, parity);
                    lhs / rhs
                }
                InputState::DisplacedSqueezed { alpha, eta } => hal_displaced_squeezed(alpha, eta)?,
            })
        }
    };

    let pass_flags = PassFlags {
        weak_coupling: weak_coupling_ratio <= thresholds.weak_coupling,
        slow_mech: slow_mech_ratio <= thresholds.slow_mech,
        adiabatic: nu <= thresholds.adiabaticity,
        above_threshold: n_ratio > 1.0,
        hal: hal_metric.map(|h| h <= thresholds.hal),
    };
    let mut failures = Vec::new();
    if !pass_flags.weak_coupling {
        failures.push("weak_coupling".to_string());
    }
    if !pass_flags.slow_mech {
        failures.push("slow_mech".to_string());
    }
    if !pass_flags.adiabatic {
        failures.push("adiabatic".to_string());
    }
    if !pass_flags.above_threshold {
        failures.push("below_threshold".to_string());
    }
    if pass_flags.hal == Some(false) {
        failures.push("high_amplitude_limit".to_string());
    }
    Ok(RegimeReport {
        weak_coupling_ratio,
        slow_mech_ratio,
        nu,
        n_ratio,
        hal_metric,
        thresholds: *thresholds,
        pass_flags,
        failures,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Gammas {
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma_m: f64,
}

/// JSON parameter block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsConfig {
    #[serde(default = "one")]
    pub g: f64,
    pub ratio_g_over_dw: f64,
    pub ratio_wm_over_g: f64,
    pub n_ratio: f64,
    pub n_bar: f64,
    #[serde(default)]
    pub gammas: Gammas,
    #[serde(default)]
    pub thresholds: Thresholds,
}

fn one() -> f64 {
    1.0
}

impl ParamsConfig {
    pub fn reference() -> Self {
        ParamsConfig {
            g: 1.0,
            ratio_g_over_dw: 1e-2,
            ratio_wm_over_g: 1e-3,
            n_ratio: 5.0,
            n_bar: 100.0,
            gammas: Gammas::default(),
            thresholds: Thresholds::default(),
        }
    }

    pub fn build(&self) -> Result<SystemParams> {
        SystemParams::from_dimensionless(
            self.g,
            self.ratio_g_over_dw,
            self.ratio_wm_over_g,
            self.n_ratio,
            self.n_bar,
        )?
        .with_damping(self.gammas.gamma1, self.gammas.gamma2, self.gammas.gamma_m)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }
}
