//! Run configuration, presets and the command implementations behind
//! the `dynres` binary.
//!
//! Every command reads a [`RunConfig`] (from JSON or a named preset), writes
//! CSV/JSON files into an output directory and finishes with a
//! `<name>_manifest.json` recording the resolved parameters and the crate
//! version. Nothing is random and no wall-clock data is written, so identical
//! configs give bit-identical files.
//!
//! Times in configs and CSV files are in units of `2 pi / g`.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adiabatic;
use crate::error::{Error, Result};
use crate::fidelity::{fidelity_trace, FidelityTrace, InputState, Parity};
use crate::fock_oracle::{self, ErrorReport, OracleControls};
use crate::ode::Tolerances;
use crate::output::{fmt_f64, write_csv_file, write_json, CsvTable};
use crate::params::{
    hal_displaced_squeezed, regime_report, ParamsConfig, RegimeReport, SystemParams, Thresholds,
};
use crate::semiclassical::{
    self, phase_portrait, resonance_crossings, IntegratorControls, PhasePortrait, Trajectory,
};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Physical parameters, either as dimensionless ratios or as raw values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamsSpec {
    Raw { raw: SystemParams },
    Ratios(ParamsConfig),
}

impl ParamsSpec {
    pub fn build(&self) -> Result<SystemParams> {
        match self {
            ParamsSpec::Raw { raw } => {
                raw.validate()?;
                Ok(*raw)
            }
            ParamsSpec::Ratios(c) => c.build(),
        }
    }

    pub fn thresholds(&self) -> Thresholds {
        match self {
            ParamsSpec::Raw { .. } => Thresholds::default(),
            ParamsSpec::Ratios(c) => c.thresholds,
        }
    }
}

/// A single state or a list of states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum States {
    One(InputState),
    Many(Vec<InputState>),
}

impl States {
    pub fn to_vec(&self) -> Vec<InputState> {
        match self {
            States::One(s) => vec![*s],
            States::Many(v) => v.clone(),
        }
    }
}

/// Extra uniformly sampled interval, in units of `2 pi / g`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Window {
    pub start: f64,
    pub end: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunBlock {
    /// End time in units of `2 pi / g`; `None` means 1.2 mechanical periods.
    pub t_end: Option<f64>,
    pub samples: usize,
    pub tolerances: Tolerances,
    pub unitarity_tol: f64,
    /// Densely sampled sub-interval written to a separate file.
    pub window: Option<Window>,
}

impl Default for RunBlock {
    fn default() -> Self {
        let c = IntegratorControls::default();
        RunBlock {
            t_end: None,
            samples: c.samples,
            tolerances: c.tolerances,
            unitarity_tol: c.unitarity_tol,
            window: None,
        }
    }
}

impl RunBlock {
    /// End time in the natural unit `1 / rate`.
    pub fn t_end_natural(&self, p: &SystemParams) -> Result<f64> {
        let t = match self.t_end {
            Some(t) => t * p.time_unit(),
            None => 1.2 * p.mechanical_period(),
        };
        if !(t.is_finite() && t > 0.0) {
            return Err(Error::Config(format!(
                "run.t_end must be positive, got {t}"
            )));
        }
        Ok(t)
    }

    pub fn controls(&self) -> IntegratorControls {
        IntegratorControls {
            tolerances: self.tolerances,
            samples: self.samples,
            unitarity_tol: self.unitarity_tol,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputBlock {
    /// Output directory; the `--out` flag takes precedence.
    pub dir: Option<PathBuf>,
    /// File name stem; defaults to the preset name or `run`.
    pub name: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    NRatio,
    /// Fock photon number; `n_bar` follows it.
    N,
    AlphaAbs,
    R,
}

/// One- or two-dimensional parameter sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    /// Optional outer axis; the summary flags whether the peak fidelity is
    /// strictly decreasing along it.
    #[serde(default)]
    pub series: Option<Series>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Series {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Range {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl Range {
    pub fn values(&self) -> Vec<f64> {
        semiclassical::uniform_grid(self.min, self.max, self.count.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HalMapSpec {
    pub alpha_abs: Range,
    pub r: Range,
    /// Squeezing phase relative to twice the displacement phase.
    pub dphi: Vec<f64>,
}

impl Default for HalMapSpec {
    fn default() -> Self {
        HalMapSpec {
            alpha_abs: Range {
                min: 0.0,
                max: 20.0,
                count: 81,
            },
            r: Range {
                min: 0.0,
                max: 2.0,
                count: 41,
            },
            dphi: vec![0.0, PI],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleCheck {
    /// `kappa0 = 0`, one photon: transfer probability against `sin^2(g t)`.
    BeamSplitter,
    /// `g = 0`: populations stay put and the mirror follows the constant force.
    Uncoupled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSpec {
    /// Fock inputs run at the fixed ratios of `params` with `n_bar = N`.
    pub fock: Vec<u32>,
    /// End time in units of `2 pi / g`; `None` means half a mechanical period.
    pub t_end: Option<f64>,
    pub samples: usize,
    pub controls: OracleControls,
    pub check: Option<OracleCheck>,
}

impl Default for OracleSpec {
    fn default() -> Self {
        OracleSpec {
            fock: vec![4, 6, 8],
            t_end: None,
            samples: 2001,
            controls: OracleControls::default(),
            check: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub params: ParamsSpec,
    #[serde(default)]
    pub state: Option<States>,
    #[serde(default)]
    pub run: RunBlock,
    #[serde(default)]
    pub output: OutputBlock,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    #[serde(default)]
    pub hal_map: Option<HalMapSpec>,
    #[serde(default)]
    pub oracle: Option<OracleSpec>,
}

impl RunConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let c: RunConfig = serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)?;
        Self::from_json(&s)
    }

    /// Checks everything that does not need a numerical run.
    pub fn validate(&self) -> Result<()> {
        let cfg = |e: Error| Error::Config(e.to_string());
        let p = self.params.build().map_err(cfg)?;
        if let Some(s) = &self.state {
            let v = s.to_vec();
            if v.is_empty() {
                return Err(Error::Config("state list is empty".into()));
            }
            for st in v {
                st.validate().map_err(cfg)?;
            }
        }
        if self.run.samples < 2 {
            return Err(Error::Config("run.samples must be at least 2".into()));
        }
        self.run.t_end_natural(&p)?;
        if let Some(w) = &self.run.window {
            if !(w.start.is_finite() && w.end > w.start && w.samples >= 2) {
                return Err(Error::Config(format!("invalid run.window {w:?}")));
            }
        }
        if let Some(sw) = &self.sweep {
            if sw.values.is_empty() {
                return Err(Error::Config("sweep.values is empty".into()));
            }
            if let Some(s) = &sw.series {
                if s.values.is_empty() {
                    return Err(Error::Config("sweep.series.values is empty".into()));
                }
                if s.axis == sw.axis {
                    return Err(Error::Config("sweep and series use the same axis".into()));
                }
            }
        }
        if let Some(o) = &self.oracle {
            if o.samples < 2 {
                return Err(Error::Config("oracle.samples must be at least 2".into()));
            }
            if o.check.is_none() && o.fock.is_empty() {
                return Err(Error::Config("oracle.fock is empty".into()));
            }
        }
        Ok(())
    }

    fn states(&self) -> Result<Vec<InputState>> {
        self.state
            .as_ref()
            .map(|s| s.to_vec())
            .ok_or_else(|| Error::Config("config has no state block".into()))
    }
}

/// Names accepted by `--preset`.
pub const PRESETS: &[&str] = &[
    "fig3",
    "fig4",
    "fig5a",
    "fig5b",
    "fig6",
    "fig7",
    "fig8",
    "gzero",
    "oracle-toy",
    "oracle-k0",
    "oracle-g0",
];

fn reference_with(n_ratio: f64, n_bar: f64) -> ParamsSpec {
    ParamsSpec::Ratios(ParamsConfig {
        n_ratio,
        n_bar,
        ..ParamsConfig::reference()
    })
}

fn toy_params(n_bar: f64) -> ParamsSpec {
    ParamsSpec::Ratios(ParamsConfig {
        g: 1.0,
        ratio_g_over_dw: 0.1,
        ratio_wm_over_g: 0.05,
        n_ratio: 3.0,
        n_bar,
        ..ParamsConfig::reference()
    })
}

fn base(params: ParamsSpec, name: &str) -> RunConfig {
    RunConfig {
        params,
        state: None,
        run: RunBlock::default(),
        output: OutputBlock {
            dir: None,
            name: Some(name.to_string()),
        },
        sweep: None,
        hal_map: None,
        oracle: None,
    }
}

/// Built-in configurations for the standard runs and the oracle checks.
pub fn preset(name: &str) -> Result<RunConfig> {
    let mut c = match name {
        "fig3" => {
            let mut c = base(reference_with(1.0, 100.0), name);
            c.sweep = Some(SweepSpec {
                axis: SweepAxis::NRatio,
                values: vec![1.0, 1.4, 2.0],
                series: None,
            });
            c.run.samples = 4001;
            c
        }
        "fig4" => {
            let mut c = base(reference_with(5.0, 100.0), name);
            c.run.samples = 4001;
            c
        }
        "fig5a" => {
            let mut c = base(reference_with(5.0, 100.0), name);
            c.state = Some(States::One(InputState::Fock { n: 100 }));
            c.run.samples = 4001;
            c
        }
        "fig5b" => {
            let mut c = base(reference_with(5.0, 100.0), name);
            c.state = Some(States::One(InputState::Fock { n: 100 }));
            c.sweep = Some(SweepSpec {
                axis: SweepAxis::NRatio,
                values: vec![1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.0],
                series: Some(Series {
                    axis: SweepAxis::N,
                    values: vec![100.0, 200.0, 500.0],
                }),
            });
            // every first crossing happens within half a mechanical period
            c.run.t_end = Some(500.0);
            c
        }
        "fig6" => {
            let mut c = base(reference_with(5.0, 100.0), name);
            c.state = Some(States::One(InputState::Cat {
                alpha: Complex64::new(10.0, 0.0),
                parity: Parity::Even,
            }));
            c.run.samples = 4001;
            c.run.window = Some(Window {
                start: 200.0,
                end: 200.05,
                samples: 20001,
            });
            c
        }
        "fig7" => {
            let mut c = base(reference_with(5.0, 100.0), name);
            c.hal_map = Some(HalMapSpec::default());
            c
        }
        "fig8" => {
            let mut c = base(reference_with(5.0, 100.0), name);
            c.state = Some(States::Many(vec![
                InputState::Coherent {
                    alpha: Complex64::new(10.0, 0.0),
                },
                InputState::DisplacedSqueezed {
                    alpha: Complex64::new(0.93, 0.0),
                    eta: Complex64::new(1.0, 0.0),
                },
            ]));
            c.run.samples = 4001;
            c
        }
        "gzero" => {
            let mut raw = SystemParams::reference();
            raw.g = 0.0;
            let mut c = base(ParamsSpec::Raw { raw }, name);
            c.run.samples = 401;
            c
        }
        "oracle-toy" => {
            let mut c = base(toy_params(4.0), name);
            c.oracle = Some(OracleSpec::default());
            c
        }
        "oracle-k0" | "oracle-g0" => {
            let mut c = base(toy_params(4.0), name);
            c.oracle = Some(OracleSpec {
                fock: vec![if name == "oracle-k0" { 1 } else { 4 }],
                t_end: Some(2.0),
                samples: 201,
                check: Some(if name == "oracle-k0" {
                    OracleCheck::BeamSplitter
                } else {
                    OracleCheck::Uncoupled
                }),
                ..OracleSpec::default()
            });
            c
        }
        _ => {
            return Err(Error::Config(format!(
                "unknown preset {name:?}; expected one of {}",
                PRESETS.join(", ")
            )))
        }
    };
    c.output.name.get_or_insert_with(|| name.to_string());
    c.validate()?;
    Ok(c)
}

/// Where and under which name a command writes.
#[derive(Debug, Clone)]
pub struct OutputTarget {
    pub dir: PathBuf,
    pub name: String,
}

impl OutputTarget {
    pub fn resolve(cfg: &RunConfig, out: Option<&Path>) -> Self {
        let dir = out
            .map(Path::to_path_buf)
            .or_else(|| cfg.output.dir.clone())
            .unwrap_or_else(|| PathBuf::from("out"));
        let name = cfg.output.name.clone().unwrap_or_else(|| "run".to_string());
        OutputTarget { dir, name }
    }

    pub fn file(&self, suffix: &str) -> PathBuf {
        self.dir.join(format!("{}{suffix}", self.name))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest<'a, S: Serialize> {
    pub command: &'a str,
    pub version: &'a str,
    pub config: &'a RunConfig,
    pub resolved_params: Vec<SystemParams>,
    pub outputs: Vec<String>,
    pub summary: S,
}

fn finish<S: Serialize>(
    command: &str,
    cfg: &RunConfig,
    target: &OutputTarget,
    resolved_params: Vec<SystemParams>,
    mut outputs: Vec<PathBuf>,
    summary: S,
) -> Result<Vec<PathBuf>> {
    let path = target.file("_manifest.json");
    let m = Manifest {
        command,
        version: VERSION,
        config: cfg,
        resolved_params,
        outputs: outputs
            .iter()
            .map(|p| {
                p.file_name()
                    .unwrap_or_default()
                    .to_string_lossy()
                    .into_owned()
            })
            .collect(),
        summary,
    };
    std::fs::create_dir_all(&target.dir)?;
    write_json(&path, &m)?;
    outputs.push(path);
    Ok(outputs)
}

/// Parameters and state of one sweep point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub series_value: Option<f64>,
    pub params: SystemParams,
    pub state: Option<InputState>,
}

fn apply_axis(
    axis: SweepAxis,
    v: f64,
    params: &mut ParamsSpec,
    state: &mut Option<InputState>,
) -> Result<()> {
    let need_state = |s: &Option<InputState>| {
        s.ok_or_else(|| Error::Config(format!("sweep axis {axis:?} needs a state")))
    };
    match axis {
        SweepAxis::NRatio => match params {
            ParamsSpec::Ratios(c) => c.n_ratio = v,
            ParamsSpec::Raw { .. } => {
                return Err(Error::Config("n_ratio sweeps need ratio parameters".into()))
            }
        },
        SweepAxis::N => {
            if !(v >= 1.0 && v.fract() == 0.0 && v <= u32::MAX as f64) {
                return Err(Error::Config(format!(
                    "sweep value {v} is not a photon number"
                )));
            }
            *state = Some(InputState::Fock { n: v as u32 });
            match params {
                ParamsSpec::Ratios(c) => c.n_bar = v,
                ParamsSpec::Raw { raw } => raw.n_bar = v,
            }
        }
        SweepAxis::AlphaAbs => {
            let s = need_state(state)?;
            let set = |a: Complex64| {
                if a.norm() > 0.0 {
                    a * (v / a.norm())
                } else {
                    Complex64::new(v, 0.0)
                }
            };
            *state = Some(match s {
                InputState::Coherent { alpha } => InputState::Coherent { alpha: set(alpha) },
                InputState::Cat { alpha, parity } => InputState::Cat {
                    alpha: set(alpha),
                    parity,
                },
                InputState::DisplacedSqueezed { alpha, eta } => InputState::DisplacedSqueezed {
                    alpha: set(alpha),
                    eta,
                },
                InputState::Fock { .. } => {
                    return Err(Error::Config(
                        "alpha_abs sweep needs a Gaussian or cat state".into(),
                    ))
                }
            });
        }
        SweepAxis::R => match need_state(state)? {
            InputState::DisplacedSqueezed { alpha, eta } => {
                let phase = if eta.norm() > 0.0 { eta.arg() } else { 0.0 };
                *state = Some(InputState::DisplacedSqueezed {
                    alpha,
                    eta: Complex64::from_polar(v, phase),
                });
            }
            _ => {
                return Err(Error::Config(
                    "r sweep needs a displaced squeezed state".into(),
                ))
            }
        },
    }
    Ok(())
}

/// Expands a sweep into points, outer series first, in input order.
pub fn sweep_points(cfg: &RunConfig, sweep: &SweepSpec) -> Result<Vec<SweepPoint>> {
    let states = match &cfg.state {
        Some(s) => s.to_vec(),
        None => vec![],
    };
    if states.len() > 1 {
        return Err(Error::Config("sweeps take a single state".into()));
    }
    let series: Vec<Option<f64>> = match &sweep.series {
        Some(s) => s.values.iter().map(|&v| Some(v)).collect(),
        None => vec![None],
    };
    let mut out = Vec::new();
    for sv in series {
        for &v in &sweep.values {
            let mut params = cfg.params.clone();
            let mut state = states.first().copied();
            if let (Some(s), Some(x)) = (&sweep.series, sv) {
                apply_axis(s.axis, x, &mut params, &mut state)?;
            }
            apply_axis(sweep.axis, v, &mut params, &mut state)?;
            let p = params.build().map_err(|e| Error::Config(e.to_string()))?;
            if let Some(s) = &state {
                s.validate().map_err(|e| Error::Config(e.to_string()))?;
            }
            out.push(SweepPoint {
                value: v,
                series_value: sv,
                params: p,
                state,
            });
        }
    }
    Ok(out)
}

fn sample_times(p: &SystemParams, run: &RunBlock) -> Result<(f64, Vec<f64>)> {
    let t_end = run.t_end_natural(p)?;
    Ok((t_end, semiclassical::uniform_grid(0.0, t_end, run.samples)))
}

fn window_times(p: &SystemParams, run: &RunBlock, t_end: f64) -> Result<Option<Vec<f64>>> {
    match &run.window {
        None => Ok(None),
        Some(w) => {
            let (a, b) = (w.start * p.time_unit(), w.end * p.time_unit());
            if a < 0.0 || b > t_end {
                return Err(Error::Config(format!(
                    "run.window [{}, {}] lies outside [0, t_end]",
                    w.start, w.end
                )));
            }
            Ok(Some(semiclassical::uniform_grid(a, b, w.samples)))
        }
    }
}

fn integrate_checked(
    p: &SystemParams,
    t_end: f64,
    samples: &[f64],
    run: &RunBlock,
) -> Result<Trajectory> {
    let ctrl = run.controls();
    let traj = semiclassical::integrate_at(p, t_end, samples, &ctrl)?;
    if !traj.passes_unitarity(ctrl.unitarity_tol) {
        return Err(Error::Integration {
            t: t_end,
            reason: format!(
                "unitarity defect {:e} exceeds {:e}; tighten run.tolerances",
                traj.meta.max_unitarity_defect, ctrl.unitarity_tol
            ),
        });
    }
    Ok(traj)
}

/// Headline numbers of one mean-field trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySummary {
    pub n_ratio: f64,
    pub max_n2_over_nbar: f64,
    pub max_br_over_b0_before_transfer: f64,
    /// Times where `Re b = b0`, units of `2 pi / g`.
    pub crossings: Vec<f64>,
    pub max_unitarity_defect: f64,
    pub max_photon_defect: f64,
    pub portrait: Option<PhasePortrait>,
    pub two_arcs: bool,
}

pub fn summarize(traj: &Trajectory) -> TrajectorySummary {
    let p = &traj.params;
    let portrait = phase_portrait(traj);
    TrajectorySummary {
        n_ratio: p.n_ratio(),
        max_n2_over_nbar: traj.max_n2_fraction(),
        max_br_over_b0_before_transfer: traj.max_br_before_transfer(),
        crossings: resonance_crossings(traj)
            .iter()
            .map(|t| t / p.time_unit())
            .collect(),
        max_unitarity_defect: traj.meta.max_unitarity_defect,
        max_photon_defect: traj.meta.max_photon_defect,
        two_arcs: portrait.map(|q| q.has_two_arcs()).unwrap_or(false),
        portrait,
    }
}

fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<()> {
    write_csv_file(path, |w| traj.write_csv(w))
}

fn tag(v: f64) -> String {
    let s = format!("{v}");
    s.replace('.', "p").replace('-', "m")
}

/// Mean-field trajectories: one CSV per sweep point (or a single one).
pub fn cmd_simulate(cfg: &RunConfig, out: Option<&Path>) -> Result<Vec<PathBuf>> {
    let target = OutputTarget::resolve(cfg, out);
    let points: Vec<(String, SystemParams)> = match &cfg.sweep {
        Some(sw) => sweep_points(cfg, sw)?
            .into_iter()
            .map(|pt| {
                let mut s = format!("_{}", tag(pt.value));
                if let Some(x) = pt.series_value {
                    s = format!("_{}{s}", tag(x));
                }
                (s, pt.params)
            })
            .collect(),
        None => vec![(String::new(), cfg.params.build()?)],
    };
    let results: Vec<Result<(PathBuf, Trajectory)>> = points
        .par_iter()
        .map(|(suffix, p)| {
            let (t_end, samples) = sample_times(p, &cfg.run)?;
            let path = target.file(&format!("{suffix}.csv"));
            match semiclassical::integrate_at(p, t_end, &samples, &cfg.run.controls()) {
                Ok(traj) => {
                    write_trajectory(&path, &traj)?;
                    if !traj.passes_unitarity(cfg.run.unitarity_tol) {
                        return Err(Error::Integration {
                            t: t_end,
                            reason: format!(
                                "unitarity defect {:e}",
                                traj.meta.max_unitarity_defect
                            ),
                        });
                    }
                    Ok((path, traj))
                }
                Err(fail) => {
                    // keep what was computed before the failure
                    write_trajectory(&path, &fail.partial)?;
                    Err(fail.source)
                }
            }
        })
        .collect();
    let mut outputs = Vec::new();
    let mut summaries = Vec::new();
    for r in results {
        let (path, traj) = r?;
        outputs.push(path);
        summaries.push(summarize(&traj));
    }
    let params = points.iter().map(|(_, p)| *p).collect();
    finish("simulate", cfg, &target, params, outputs, summaries)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelitySummary {
    pub state: InputState,
    pub peak_f_mov: f64,
    pub peak_f_fix: f64,
    /// Mean spacing of `F_fix` maxima in the window, units of `2 pi / g`.
    pub window_fix_peak_spacing: Option<f64>,
}

/// Mean spacing of consecutive entries.
pub fn mean_spacing(times: &[f64]) -> Option<f64> {
    if times.len() < 2 {
        return None;
    }
    Some((times[times.len() - 1] - times[0]) / (times.len() - 1) as f64)
}

fn fidelity_file_tag(s: &InputState, index: usize, many: bool) -> String {
    if !many {
        return String::new();
    }
    let family = match s {
        InputState::Fock { .. } => "fock",
        InputState::Coherent { .. } => "coherent",
        InputState::Cat { .. } => "cat",
        InputState::DisplacedSqueezed { .. } => "ds",
    };
    format!("_{index}_{family}")
}

/// Fidelity traces for every configured state along one trajectory, plus
/// a densely sampled window when configured.
pub fn cmd_fidelity(cfg: &RunConfig, out: Option<&Path>) -> Result<Vec<PathBuf>> {
    let target = OutputTarget::resolve(cfg, out);
    let states = cfg.states()?;
    let p = cfg.params.build()?;
    let (t_end, samples) = sample_times(&p, &cfg.run)?;
    let window = window_times(&p, &cfg.run, t_end)?;
    let (traj, wtraj) = rayon::join(
        || integrate_checked(&p, t_end, &samples, &cfg.run),
        || {
            window
                .as_ref()
                .map(|w| integrate_checked(&p, t_end, w, &cfg.run))
                .transpose()
        },
    );
    let (traj, wtraj) = (traj?, wtraj?);
    let mut outputs = vec![target.file("_trajectory.csv")];
    write_trajectory(&outputs[0], &traj)?;
    let many = states.len() > 1;
    let mut summaries = Vec::new();
    for (i, s) in states.iter().enumerate() {
        let t = fidelity_file_tag(s, i, many);
        let tr = fidelity_trace(&traj, s)?;
        let path = target.file(&format!("{t}_fidelity.csv"));
        write_csv_file(&path, |w| tr.write_csv(w))?;
        outputs.push(path);
        let mut spacing = None;
        if let Some(wt) = &wtraj {
            let wtr = fidelity_trace(wt, s)?;
            let path = target.file(&format!("{t}_fidelity_window.csv"));
            write_csv_file(&path, |w| wtr.write_csv(w))?;
            outputs.push(path);
            spacing = window_peak_spacing(&wtr);
        }
        summaries.push(FidelitySummary {
            state: *s,
            peak_f_mov: tr.peak_mov(),
            peak_f_fix: tr.peak_fix(),
            window_fix_peak_spacing: spacing,
        });
    }
    finish("fidelity", cfg, &target, vec![p], outputs, summaries)
}

/// Spacing of the `F_fix` maxima that exceed half the window's peak value.
pub fn window_peak_spacing(tr: &FidelityTrace) -> Option<f64> {
    let floor = 0.5 * tr.peak_fix();
    let peaks = tr.fix_peak_times(floor);
    let unit = if tr.g > 0.0 {
        std::f64::consts::TAU / tr.g
    } else {
        std::f64::consts::TAU
    };
    mean_spacing(&peaks).map(|s| s / unit)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub series_value: Option<f64>,
    pub value: f64,
    pub peak_f_mov: f64,
    pub peak_f_fix: f64,
    pub max_n2_over_nbar: f64,
    pub max_unitarity_defect: f64,
    /// Whether the moving-target peak is strictly decreasing along the series
    /// at this value.
    pub monotone_in_series: Option<bool>,
}

/// Runs every sweep point in parallel and joins the rows in input order.
pub fn run_sweep(cfg: &RunConfig, sweep: &SweepSpec) -> Result<Vec<SweepRow>> {
    let points = sweep_points(cfg, sweep)?;
    let rows: Vec<SweepRow> = points
        .par_iter()
        .map(|pt| {
            let state = pt
                .state
                .ok_or_else(|| Error::Config("sweep needs a state".into()))?;
            let (t_end, samples) = sample_times(&pt.params, &cfg.run)?;
            let traj = integrate_checked(&pt.params, t_end, &samples, &cfg.run)?;
            let tr = fidelity_trace(&traj, &state)?;
            Ok(SweepRow {
                series_value: pt.series_value,
                value: pt.value,
                peak_f_mov: tr.peak_mov(),
                peak_f_fix: tr.peak_fix(),
                max_n2_over_nbar: traj.max_n2_fraction(),
                max_unitarity_defect: traj.meta.max_unitarity_defect,
                monotone_in_series: None,
            })
        })
        .collect::<Result<_>>()?;
    Ok(mark_monotone(rows, sweep))
}

fn mark_monotone(mut rows: Vec<SweepRow>, sweep: &SweepSpec) -> Vec<SweepRow> {
    if sweep.series.is_none() {
        return rows;
    }
    let width = sweep.values.len();
    for j in 0..width {
        let col: Vec<f64> = rows
            .iter()
            .skip(j)
            .step_by(width)
            .map(|r| r.peak_f_mov)
            .collect();
        let ok = col.windows(2).all(|w| w[1] < w[0]);
        for r in rows.iter_mut().skip(j).step_by(width) {
            r.monotone_in_series = Some(ok);
        }
    }
    rows
}

fn axis_name(a: SweepAxis) -> &'static str {
    match a {
        SweepAxis::NRatio => "n_ratio",
        SweepAxis::N => "n",
        SweepAxis::AlphaAbs => "alpha_abs",
        SweepAxis::R => "r",
    }
}

pub fn cmd_sweep(cfg: &RunConfig, out: Option<&Path>) -> Result<Vec<PathBuf>> {
    let target = OutputTarget::resolve(cfg, out);
    let sweep = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| Error::Config("config has no sweep block".into()))?;
    let rows = run_sweep(cfg, sweep)?;
    let path = target.file("_sweep.csv");
    let series_name = sweep
        .series
        .as_ref()
        .map(|s| axis_name(s.axis))
        .unwrap_or("series");
    write_csv_file(&path, |w| {
        let mut t = CsvTable::new(
            w,
            &[
                series_name,
                axis_name(sweep.axis),
                "peak_F_mov",
                "peak_F_fix",
                "max_n2_over_nbar",
                "max_unitarity_defect",
                "monotone_in_series",
            ],
        )?;
        for r in &rows {
            t.row(&[
                r.series_value.map(fmt_f64).unwrap_or_default(),
                fmt_f64(r.value),
                fmt_f64(r.peak_f_mov),
                fmt_f64(r.peak_f_fix),
                fmt_f64(r.max_n2_over_nbar),
                fmt_f64(r.max_unitarity_defect),
                match r.monotone_in_series {
                    Some(true) => "pass".into(),
                    Some(false) => "fail".into(),
                    None => String::new(),
                },
            ])?;
        }
        t.finish()
    })?;
    let params = sweep_points(cfg, sweep)?.iter().map(|p| p.params).collect();
    finish("sweep", cfg, &target, params, vec![path], rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HalCell {
    pub dphi: f64,
    pub alpha_abs: f64,
    pub r: f64,
    /// `log10 HAL`; NaN for the vacuum.
    pub log10_hal: f64,
}

/// `log10` of the displaced squeezed metric over the configured grid.
pub fn hal_grid(spec: &HalMapSpec) -> Vec<HalCell> {
    let mut cells = Vec::new();
    for &dphi in &spec.dphi {
        for r in spec.r.values() {
            for a in spec.alpha_abs.values() {
                let alpha = Complex64::new(a, 0.0);
                let eta = Complex64::from_polar(r, dphi);
                let log10_hal = hal_displaced_squeezed(alpha, eta)
                    .map(f64::log10)
                    .unwrap_or(f64::NAN);
                cells.push(HalCell {
                    dphi,
                    alpha_abs: a,
                    r,
                    log10_hal,
                });
            }
        }
    }
    cells
}

pub fn cmd_hal_map(cfg: &RunConfig, out: Option<&Path>) -> Result<Vec<PathBuf>> {
    let target = OutputTarget::resolve(cfg, out);
    let spec = cfg.hal_map.clone().unwrap_or_default();
    if spec.alpha_abs.count == 0 || spec.r.count == 0 || spec.dphi.is_empty() {
        return Err(Error::Config("hal_map grid is empty".into()));
    }
    let cells = hal_grid(&spec);
    let path = target.file("_hal.csv");
    write_csv_file(&path, |w| {
        let mut t = CsvTable::new(w, &["dphi", "alpha_abs", "r", "log10_HAL"])?;
        for c in &cells {
            t.row(&[
                fmt_f64(c.dphi),
                fmt_f64(c.alpha_abs),
                fmt_f64(c.r),
                fmt_f64(c.log10_hal),
            ])?;
        }
        t.finish()
    })?;
    finish(
        "hal-map",
        cfg,
        &target,
        vec![cfg.params.build()?],
        vec![path],
        &spec,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub check: OracleCheck,
    pub n: u32,
    /// Largest deviation from the analytic solution.
    pub max_error: f64,
    pub max_norm_defect: f64,
}

/// `kappa0 = 0` and `g = 0` analytic checks of the exact propagator.
pub fn oracle_check(
    check: OracleCheck,
    p: &SystemParams,
    n: u32,
    times: &[f64],
    ctrl: &OracleControls,
) -> Result<CheckReport> {
    let mut q = *p;
    let m_max;
    match check {
        OracleCheck::BeamSplitter => {
            q.kappa0 = 0.0;
            q.b0 = 0.0;
            q.delta_omega = 0.0;
            m_max = 0;
        }
        OracleCheck::Uncoupled => {
            q.g = 0.0;
            let b = 2.0 * q.kappa0 * n as f64 / q.omega_m;
            m_max = fock_oracle::auto_m_max(b);
        }
    }
    let state = InputState::Fock { n };
    let mut psi = fock_oracle::prepare_input(&state, n as usize, m_max)?;
    let mut worst: f64 = 0.0;
    let mut norm: f64 = 0.0;
    fock_oracle::evolve(&q, &mut psi, times, ctrl, |_, t, s| {
        let (_, n2) = s.populations();
        norm = norm.max((s.norm_sqr() - 1.0).abs());
        let err = match check {
            OracleCheck::BeamSplitter => (n2 - n as f64 * (q.g * t).sin().powi(2)).abs(),
            OracleCheck::Uncoupled => {
                let exact = (1.0 - Complex64::from_polar(1.0, -q.omega_m * t))
                    * (q.kappa0 * n as f64 / q.omega_m);
                n2.abs().max((s.mirror_amplitude() - exact).norm())
            }
        };
        worst = worst.max(err);
        Ok(())
    })?;
    Ok(CheckReport {
        check,
        n,
        max_error: worst,
        max_norm_defect: norm,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSeries {
    pub reports: Vec<ErrorReport>,
    /// Peak-transfer error strictly decreasing along the series.
    pub peak_transfer_error_decreasing: bool,
}

/// Exact versus mean-field comparison for each Fock input of the series.
pub fn run_oracle_series(
    cfg: &RunConfig,
    spec: &OracleSpec,
) -> Result<(Vec<SystemParams>, Vec<fock_oracle::OracleRun>, OracleSeries)> {
    let mut params = Vec::new();
    let mut runs = Vec::new();
    let mut reports = Vec::new();
    for &n in &spec.fock {
        let mut ps = cfg.params.clone();
        let mut state = None;
        apply_axis(SweepAxis::N, n as f64, &mut ps, &mut state)?;
        let p = ps.build()?;
        let t_end = match spec.t_end {
            Some(t) => t * p.time_unit(),
            None => 0.5 * p.mechanical_period(),
        };
        let samples = fock_oracle::sample_grid(t_end, spec.samples);
        let (run, rep) = fock_oracle::compare_with_semiclassical(
            &p,
            &InputState::Fock { n },
            &samples,
            &spec.controls,
        )?;
        params.push(p);
        runs.push(run);
        reports.push(rep);
    }
    let dec = reports
        .windows(2)
        .all(|w| w[1].peak_transfer_error < w[0].peak_transfer_error);
    Ok((
        params,
        runs,
        OracleSeries {
            reports,
            peak_transfer_error_decreasing: dec,
        },
    ))
}

pub fn cmd_oracle(cfg: &RunConfig, out: Option<&Path>) -> Result<Vec<PathBuf>> {
    let target = OutputTarget::resolve(cfg, out);
    let spec = cfg.oracle.clone().unwrap_or_default();
    let p = cfg.params.build()?;
    if let Some(check) = spec.check {
        let t_end = spec
            .t_end
            .map(|t| t * p.time_unit())
            .unwrap_or(2.0 * p.time_unit());
        let times = fock_oracle::sample_grid(t_end, spec.samples);
        let n = spec.fock.first().copied().unwrap_or(1);
        let rep = oracle_check(check, &p, n, &times, &spec.controls)?;
        let path = target.file("_check.json");
        std::fs::create_dir_all(&target.dir)?;
        write_json(&path, &rep)?;
        return finish("oracle", cfg, &target, vec![p], vec![path], rep);
    }
    let (params, runs, series) = run_oracle_series(cfg, &spec)?;
    let mut outputs = Vec::new();
    for run in &runs {
        let n = run.state.mean_photons() as u32;
        let path = target.file(&format!("_N{n}.csv"));
        write_csv_file(&path, |w| run.write_csv(w))?;
        outputs.push(path);
    }
    let path = target.file("_report.json");
    std::fs::create_dir_all(&target.dir)?;
    write_json(&path, &series)?;
    outputs.push(path);
    finish("oracle", cfg, &target, params, outputs, &series)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutput {
    pub params: SystemParams,
    pub reports: Vec<RegimeReport>,
}

/// Regime report for the parameters and, if present, each state.
pub fn check_regime(cfg: &RunConfig) -> Result<CheckOutput> {
    let p = cfg.params.build()?;
    let th = cfg.params.thresholds();
    let reports = match &cfg.state {
        None => vec![regime_report(&p, None, &th)?],
        Some(s) => s
            .to_vec()
            .iter()
            .map(|st| regime_report(&p, Some(st), &th))
            .collect::<Result<_>>()?,
    };
    Ok(CheckOutput { params: p, reports })
}

pub fn cmd_check(cfg: &RunConfig, out: Option<&Path>) -> Result<Vec<PathBuf>> {
    let target = OutputTarget::resolve(cfg, out);
    let report = check_regime(cfg)?;
    let path = target.file("_regime.json");
    std::fs::create_dir_all(&target.dir)?;
    write_json(&path, &report)?;
    finish(
        "check",
        cfg,
        &target,
        vec![report.params],
        vec![path],
        &report,
    )
}

/// Adiabatic closed form against the ODE on `[0, t_window]`, sampled on
/// `samples` points: `(sup error, adiabaticity parameter)`.
pub fn adiabatic_error(p: &SystemParams, t_window: f64, samples: usize) -> Result<(f64, f64)> {
    let grid = semiclassical::uniform_grid(0.0, t_window, samples);
    let ctrl = IntegratorControls::default();
    let traj = semiclassical::integrate_at(p, t_window, &grid, &ctrl)?;
    let sol = adiabatic::adiabatic_trajectory_at(p, t_window, &grid, ctrl.tolerances)?;
    Ok((
        adiabatic::sup_norm_error(&sol, &traj)?,
        crate::params::adiabaticity_nu(p),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_validates() {
        for name in PRESETS {
            let c = preset(name).unwrap();
            assert_eq!(c.output.name.as_deref(), Some(*name));
        }
        assert!(matches!(preset("fig9"), Err(Error::Config(_))));
    }

    #[test]
    fn config_round_trips_and_rejects_unknown_keys() {
        let c = preset("fig6").unwrap();
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(RunConfig::from_json(&s).unwrap(), c);
        let bad = s.replacen("\"run\":{", "\"run\":{\"bogus\":1,", 1);
        assert!(matches!(RunConfig::from_json(&bad), Err(Error::Config(_))));
        assert!(matches!(
            RunConfig::from_json("{\"params\":{\"raw\":{}}}"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn minimal_config_uses_defaults() {
        let c = RunConfig::from_json(
            r#"{"params": {"ratio_g_over_dw": 0.01, "ratio_wm_over_g": 0.001, "n_ratio": 5, "n_bar": 100},
                "state": {"family": "fock", "n": 100}}"#,
        )
        .unwrap();
        assert_eq!(c.run.samples, 2001);
        let p = c.params.build().unwrap();
        assert_eq!(p, SystemParams::reference());
        assert!((c.run.t_end_natural(&p).unwrap() - 1.2 * p.mechanical_period()).abs() < 1e-9);
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let c = r#"{"params": {"ratio_g_over_dw": -1, "ratio_wm_over_g": 0.001, "n_ratio": 5, "n_bar": 100}}"#;
        assert!(matches!(RunConfig::from_json(c), Err(Error::Config(_))));
        let c = r#"{"params": {"ratio_g_over_dw": 0.01, "ratio_wm_over_g": 0.001, "n_ratio": 5, "n_bar": 100},
                    "state": {"family": "cat", "alpha": [0, 0], "parity": "odd"}}"#;
        assert!(matches!(RunConfig::from_json(c), Err(Error::Config(_))));
    }

    #[test]
    fn sweep_points_follow_input_order() {
        let c = preset("fig5b").unwrap();
        let pts = sweep_points(&c, c.sweep.as_ref().unwrap()).unwrap();
        assert_eq!(pts.len(), 24);
        assert_eq!(pts[0].series_value, Some(100.0));
        assert_eq!(pts[0].value, 1.5);
        assert_eq!(pts[23].state, Some(InputState::Fock { n: 500 }));
        assert_eq!(pts[23].params.n_bar, 500.0);
        assert!((pts[23].params.n_ratio() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn monotone_flags_per_column() {
        let row = |s, v, f| SweepRow {
            series_value: Some(s),
            value: v,
            peak_f_mov: f,
            peak_f_fix: f,
            max_n2_over_nbar: 1.0,
            max_unitarity_defect: 0.0,
            monotone_in_series: None,
        };
        let sweep = SweepSpec {
            axis: SweepAxis::NRatio,
            values: vec![1.0, 2.0],
            series: Some(Series {
                axis: SweepAxis::N,
                values: vec![1.0, 2.0],
            }),
        };
        let rows = mark_monotone(
            vec![
                row(1.0, 1.0, 0.9),
                row(1.0, 2.0, 0.9),
                row(2.0, 1.0, 0.8),
                row(2.0, 2.0, 0.9),
            ],
            &sweep,
        );
        let flags: Vec<_> = rows.iter().map(|r| r.monotone_in_series).collect();
        assert_eq!(
            flags,
            vec![Some(true), Some(false), Some(true), Some(false)]
        );
    }

    #[test]
    fn hal_grid_rows() {
        let cells = hal_grid(&HalMapSpec::default());
        for c in cells.iter().filter(|c| c.r == 0.0 && c.alpha_abs > 0.0) {
            assert!((c.log10_hal + c.alpha_abs.log10()).abs() < 1e-12);
        }
        for c in cells.iter().filter(|c| c.alpha_abs == 0.0 && c.r > 0.0) {
            assert!(c.log10_hal >= 2f64.sqrt().log10());
        }
        assert!(cells
            .iter()
            .any(|c| c.alpha_abs == 0.0 && c.r == 0.0 && c.log10_hal.is_nan()));
    }

    #[test]
    fn single_point_sweep_matches_fidelity_peak() {
        let mut c = base(toy_params(6.0), "pt");
        c.state = Some(States::One(InputState::Fock { n: 6 }));
        c.run.samples = 8001;
        c.sweep = Some(SweepSpec {
            axis: SweepAxis::NRatio,
            values: vec![3.0],
            series: None,
        });
        let rows = run_sweep(&c, c.sweep.as_ref().unwrap()).unwrap();
        let p = c.params.build().unwrap();
        let (t_end, grid) = sample_times(&p, &c.run).unwrap();
        let traj = integrate_checked(&p, t_end, &grid, &c.run).unwrap();
        let tr = fidelity_trace(&traj, &InputState::Fock { n: 6 }).unwrap();
        assert_eq!(rows[0].peak_f_mov, tr.peak_mov());
    }

    #[test]
    fn regime_check_flags_strong_coupling() {
        let ok = check_regime(&preset("fig4").unwrap()).unwrap();
        assert!(ok.reports[0].failures.is_empty());
        let mut c = preset("fig4").unwrap();
        if let ParamsSpec::Ratios(p) = &mut c.params {
            p.ratio_g_over_dw = 2.0;
        }
        let bad = check_regime(&c).unwrap();
        assert!(bad.reports[0]
            .failures
            .contains(&"weak_coupling".to_string()));
    }
}
