//! Adaptive Dormand-Prince 8(5,3) integrator for complex-valued systems with
//! a 7th-order continuous extension.
//!
//! The state is a flat slice of `Complex64`. Real quantities (accumulated
//! phases, for instance) ride along in the real part of a component.

mod tableau;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use tableau::{A, B, C, D, E3, E5};

const N_STAGES: usize = 12;
const N_EXTENDED: usize = 16;
const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 1.0 / 3.0;
const MAX_FACTOR: f64 = 6.0;

/// Right-hand side `dy/dt = f(t, y)`.
pub trait System {
    fn rhs(&mut self, t: f64, y: &[Complex64], dy: &mut [Complex64]);
}

impl<F> System for F
where
    F: FnMut(f64, &[Complex64], &mut [Complex64]),
{
    fn rhs(&mut self, t: f64, y: &[Complex64], dy: &mut [Complex64]) {
        self(t, y, dy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
    /// Largest allowed step; `None` means unbounded.
    pub h_max: Option<f64>,
    pub max_steps: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            rtol: 1e-14,
            atol: 1e-16,
            h_max: None,
            max_steps: 50_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
}

/// Stepper state. Each call to [`Dop853::step`] advances by one accepted step
/// without passing `t_bound`; [`Dop853::dense`] interpolates inside the last
/// step.
pub struct Dop853<S> {
    sys: S,
    tol: Tolerances,
    dir: f64,
    t_bound: f64,
    t: f64,
    y: Vec<Complex64>,
    h_abs: f64,
    t_old: f64,
    h_old: f64,
    y_old: Vec<Complex64>,
    k: Vec<Vec<Complex64>>,
    scratch: Vec<Complex64>,
    y_new: Vec<Complex64>,
    dense: Option<Vec<Vec<Complex64>>>,
    // k[N_STAGES] holds f at the end of the last accepted step and still has
    // to be moved into k[0]; the old k[0] is needed by the dense output.
    pending_fsal: bool,
    step_rejected: bool,
    stats: Stats,
}

impl<S: System> Dop853<S> {
    pub fn new(
        mut sys: S,
        t0: f64,
        y0: &[Complex64],
        t_bound: f64,
        tol: Tolerances,
    ) -> Result<Self> {
        if !(tol.rtol > 0.0 && tol.atol > 0.0) {
            return Err(Error::InvalidParameter(
                "integrator tolerances must be positive".into(),
            ));
        }
        if y0.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::Integration {
                t: t0,
                reason: "non-finite initial state".into(),
            });
        }
        let n = y0.len();
        let mut k = vec![vec![Complex64::default(); n]; N_EXTENDED];
        sys.rhs(t0, y0, &mut k[0]);
        let dir = if t_bound >= t0 { 1.0 } else { -1.0 };
        let mut this = Dop853 {
            sys,
            tol,
            dir,
            t_bound,
            t: t0,
            y: y0.to_vec(),
            h_abs: 0.0,
            t_old: t0,
            h_old: 0.0,
            y_old: y0.to_vec(),
            k,
            scratch: vec![Complex64::default(); n],
            y_new: vec![Complex64::default(); n],
            dense: None,
            pending_fsal: false,
            step_rejected: false,
            stats: Stats {
                rhs_evals: 1,
                ..Stats::default()
            },
        };
        this.h_abs = this.initial_step();
        Ok(this)
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn y(&self) -> &[Complex64] {
        &self.y
    }

    pub fn stats(&self) -> Stats {
        self.stats
    }

    pub fn finished(&self) -> bool {
        self.t == self.t_bound
    }

    fn scale(&self, a: Complex64, b: Complex64) -> f64 {
        self.tol.atol + self.tol.rtol * a.norm().max(b.norm())
    }

    fn rms(&self, v: &[Complex64], y: &[Complex64]) -> f64 {
        if v.is_empty() {
            return 0.0;
        }
        let s: f64 = v
            .iter()
            .zip(y)
            .map(|(vi, yi)| (vi.norm() / self.scale(*yi, *yi)).powi(2))
            .sum();
        (s / v.len() as f64).sqrt()
    }

    // Hairer & Wanner's starting step heuristic.
    fn initial_step(&mut self) -> f64 {
        let span = (self.t_bound - self.t).abs();
        if span == 0.0 {
            return 0.0;
        }
        let d0 = self.rms(&self.y, &self.y);
        let d1 = self.rms(&self.k[0], &self.y);
        let h0 = if d0 < 1e-5 || d1 < 1e-5 {
            1e-6
        } else {
            0.01 * d0 / d1
        };
        let h0 = h0.min(span);
        for i in 0..self.y.len() {
            self.scratch[i] = self.y[i] + self.k[0][i] * (self.dir * h0);
        }
        let mut f1 = vec![Complex64::default(); self.y.len()];
        self.sys.rhs(self.t + self.dir * h0, &self.scratch, &mut f1);
        self.stats.rhs_evals += 1;
        let diff: Vec<Complex64> = f1.iter().zip(&self.k[0]).map(|(a, b)| a - b).collect();
        let d2 = self.rms(&diff, &self.y) / h0;
        let h1 = if d1 <= 1e-15 && d2 <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(1.0 / 8.0)
        };
        let mut h = (100.0 * h0).min(h1).min(span);
        if let Some(hm) = self.tol.h_max {
            h = h.min(hm);
        }
        h
    }

    /// Takes one accepted step. Returns the new time.
    pub fn step(&mut self) -> Result<f64> {
        if self.finished() {
            return Ok(self.t);
        }
        if self.pending_fsal {
            self.rotate_fsal();
            self.pending_fsal = false;
            self.dense = None;
        }
        let n = self.y.len();
        let min_step = 10.0 * f64::EPSILON * self.t.abs().max(1.0);
        loop {
            if self.stats.accepted + self.stats.rejected >= self.tol.max_steps {
                return Err(Error::Integration {
                    t: self.t,
                    reason: format!("step budget of {} exhausted", self.tol.max_steps),
                });
            }
            let mut h_abs = self.h_abs;
            if let Some(hm) = self.tol.h_max {
                h_abs = h_abs.min(hm);
            }
            if h_abs < min_step {
                return Err(Error::Integration {
                    t: self.t,
                    reason: format!("step size underflow (h = {h_abs:e})"),
                });
            }
            let mut t_new = self.t + self.dir * h_abs;
            if self.dir * (t_new - self.t_bound) > 0.0 {
                t_new = self.t_bound;
            }
            let h = t_new - self.t;
            let h_abs_eff = h.abs();

            for s in 1..N_STAGES {
                for i in 0..n {
                    let mut acc = Complex64::default();
                    for (j, a) in A[s][..s].iter().enumerate() {
                        if *a != 0.0 {
                            acc += self.k[j][i] * *a;
                        }
                    }
                    self.scratch[i] = self.y[i] + acc * h;
                }
                let (_, tail) = self.k.split_at_mut(s);
                self.sys.rhs(self.t + C[s] * h, &self.scratch, &mut tail[0]);
            }
            for i in 0..n {
                let mut acc = Complex64::default();
                for (j, b) in B.iter().enumerate() {
                    if *b != 0.0 {
                        acc += self.k[j][i] * *b;
                    }
                }
                self.y_new[i] = self.y[i] + acc * h;
            }
            {
                let (_, tail) = self.k.split_at_mut(N_STAGES);
                self.sys.rhs(t_new, &self.y_new, &mut tail[0]);
            }
            self.stats.rhs_evals += N_STAGES;

            let mut e5 = 0.0;
            let mut e3 = 0.0;
            for i in 0..n {
                let mut a5 = Complex64::default();
                let mut a3 = Complex64::default();
                for j in 0..=N_STAGES {
                    a5 += self.k[j][i] * E5[j];
                    a3 += self.k[j][i] * E3[j];
                }
                let sc = self.scale(self.y[i], self.y_new[i]);
                e5 += (a5.norm() / sc).powi(2);
                e3 += (a3.norm() / sc).powi(2);
            }
            let err = if e5 == 0.0 && e3 == 0.0 {
                0.0
            } else {
                h_abs_eff * e5 / (n as f64 * (e5 + 0.01 * e3)).sqrt()
            };
            if !err.is_finite() {
                self.h_abs = h_abs_eff * MIN_FACTOR;
                self.step_rejected = true;
                self.stats.rejected += 1;
                continue;
            }

            if err <= 1.0 {
                let mut factor = if err == 0.0 {
                    MAX_FACTOR
                } else {
                    (SAFETY * err.powf(-1.0 / 8.0)).clamp(MIN_FACTOR, MAX_FACTOR)
                };
                if self.step_rejected {
                    factor = factor.min(1.0);
                }
                self.step_rejected = false;
                self.stats.accepted += 1;

                std::mem::swap(&mut self.y_old, &mut self.y);
                std::mem::swap(&mut self.y, &mut self.y_new);
                self.t_old = self.t;
                self.h_old = h;
                self.t = t_new;
                self.dense = None;
                self.pending_fsal = true;
                self.h_abs = h_abs_eff * factor;
                return Ok(self.t);
            }
            self.h_abs = h_abs_eff * (SAFETY * err.powf(-1.0 / 8.0)).max(MIN_FACTOR);
            self.step_rejected = true;
            self.stats.rejected += 1;
        }
    }

    fn rotate_fsal(&mut self) {
        let last = std::mem::take(&mut self.k[N_STAGES]);
        let first = std::mem::replace(&mut self.k[0], last);
        self.k[N_STAGES] = first;
    }

    fn build_dense(&mut self) {
        let n = self.y.len();
        let h = self.h_old;
        for s in N_STAGES + 1..N_EXTENDED {
            for i in 0..n {
                let mut acc = Complex64::default();
                for (j, a) in A[s][..s].iter().enumerate() {
                    if *a != 0.0 {
                        acc += self.k[j][i] * *a;
                    }
                }
                self.scratch[i] = self.y_old[i] + acc * h;
            }
            let (_, tail) = self.k.split_at_mut(s);
            self.sys
                .rhs(self.t_old + C[s] * h, &self.scratch, &mut tail[0]);
        }
        self.stats.rhs_evals += N_EXTENDED - N_STAGES - 1;

        let mut f = vec![vec![Complex64::default(); n]; 7];
        #[allow(clippy::needless_range_loop)]
        for i in 0..n {
            let dy = self.y[i] - self.y_old[i];
            let f_old = self.k[0][i];
            let f_new = self.k[N_STAGES][i];
            f[0][i] = dy;
            f[1][i] = f_old * h - dy;
            f[2][i] = dy * 2.0 - (f_new + f_old) * h;
            for (r, drow) in D.iter().enumerate() {
                let mut acc = Complex64::default();
                for (j, d) in drow.iter().enumerate() {
                    if *d != 0.0 {
                        acc += self.k[j][i] * *d;
                    }
                }
                f[3 + r][i] = acc * h;
            }
        }
        self.dense = Some(f);
    }

    /// Evaluates the continuous extension at `t` inside the last step.
    pub fn dense(&mut self, t: f64, out: &mut [Complex64]) {
        if t == self.t || !self.pending_fsal {
            out.copy_from_slice(&self.y);
            return;
        }
        if self.dense.is_none() {
            self.build_dense();
        }
        let f = self.dense.as_ref().expect("dense coefficients built above");
        let x = (t - self.t_old) / self.h_old;
        let x1 = 1.0 - x;
        for i in 0..out.len() {
            let mut acc = Complex64::default();
            for (m, row) in f.iter().rev().enumerate() {
                acc += row[i];
                acc *= if m % 2 == 0 { x } else { x1 };
            }
            out[i] = self.y_old[i] + acc;
        }
    }
}

/// Receives sampled states and, optionally, every accepted step.
pub trait Observer {
    fn sample(&mut self, idx: usize, t: f64, y: &[Complex64]) -> Result<()>;

    fn step(&mut self, _t: f64, _y: &[Complex64]) -> Result<()> {
        Ok(())
    }
}

impl<T: Observer + ?Sized> Observer for &mut T {
    fn sample(&mut self, idx: usize, t: f64, y: &[Complex64]) -> Result<()> {
        (**self).sample(idx, t, y)
    }

    fn step(&mut self, t: f64, y: &[Complex64]) -> Result<()> {
        (**self).step(t, y)
    }
}

struct Sampler<F>(F);

impl<F> Observer for Sampler<F>
where
    F: FnMut(usize, f64, &[Complex64]) -> Result<()>,
{
    fn sample(&mut self, idx: usize, t: f64, y: &[Complex64]) -> Result<()> {
        (self.0)(idx, t, y)
    }
}

/// Integrates from `t0` to `t_end`, reporting the state at every time in
/// `samples` (which must be monotone in the direction of integration and lie
/// inside `[t0, t_end]`). The observer may abort by returning an error.
pub fn integrate<S, F>(
    sys: S,
    t0: f64,
    y0: &[Complex64],
    t_end: f64,
    samples: &[f64],
    tol: Tolerances,
    observer: F,
) -> Result<Stats>
where
    S: System,
    F: FnMut(usize, f64, &[Complex64]) -> Result<()>,
{
    integrate_observed(sys, t0, y0, t_end, samples, tol, Sampler(observer))
}

/// Like [`integrate`], but the observer also sees every accepted step.
pub fn integrate_observed<S, O>(
    sys: S,
    t0: f64,
    y0: &[Complex64],
    t_end: f64,
    samples: &[f64],
    tol: Tolerances,
    mut observer: O,
) -> Result<Stats>
where
    S: System,
    O: Observer,
{
    let dir = if t_end >= t0 { 1.0 } else { -1.0 };
    for w in samples.windows(2) {
        if dir * (w[1] - w[0]) < 0.0 {
            return Err(Error::InvalidParameter(
                "sample times must be monotone".into(),
            ));
        }
    }
    if let (Some(first), Some(last)) = (samples.first(), samples.last()) {
        if dir * (first - t0) < 0.0 || dir * (last - t_end) > 0.0 {
            return Err(Error::InvalidParameter(
                "sample times must lie inside the integration interval".into(),
            ));
        }
    }
    let mut next = 0;
    while next < samples.len() && samples[next] == t0 {
        observer.sample(next, t0, y0)?;
        next += 1;
    }
    if t0 == t_end {
        return Ok(Stats::default());
    }
    let mut stepper = Dop853::new(sys, t0, y0, t_end, tol)?;
    let mut buf = vec![Complex64::default(); y0.len()];
    while !stepper.finished() {
        let t = stepper.step()?;
        if stepper
            .y()
            .iter()
            .any(|z| !(z.re.is_finite() && z.im.is_finite()))
        {
            return Err(Error::Integration {
                t,
                reason: "state became non-finite".into(),
            });
        }
        observer.step(t, stepper.y())?;
        while next < samples.len() && dir * (samples[next] - t) <= 0.0 {
            let ts = samples[next];
            stepper.dense(ts, &mut buf);
            observer.sample(next, ts, &buf)?;
            next += 1;
        }
    }
    Ok(stepper.stats())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn exponential_decay_and_rotation() {
        let lambda = c(-0.3, 2.0);
        let sys = move |_t: f64, y: &[Complex64], dy: &mut [Complex64]| {
            dy[0] = lambda * y[0];
        };
        let samples: Vec<f64> = (0..=50).map(|i| i as f64 * 0.2).collect();
        let mut worst: f64 = 0.0;
        integrate(
            sys,
            0.0,
            &[c(1.0, 0.0)],
            10.0,
            &samples,
            Tolerances::default(),
            |_, t, y| {
                let exact = (lambda * t).exp();
                worst = worst.max((y[0] - exact).norm());
                Ok(())
            },
        )
        .unwrap();
        assert!(worst < 1e-9, "max error {worst:e}");
    }

    #[test]
    fn dense_output_is_high_order() {
        // harmonic oscillator with a deliberately coarse step cap
        let sys = |_t: f64, y: &[Complex64], dy: &mut [Complex64]| {
            dy[0] = c(0.0, -1.0) * y[0];
        };
        let tol = Tolerances {
            rtol: 1e-12,
            atol: 1e-14,
            ..Default::default()
        };
        let samples: Vec<f64> = (0..1000).map(|i| i as f64 * 0.0137).collect();
        let mut worst: f64 = 0.0;
        integrate(sys, 0.0, &[c(1.0, 0.0)], 14.0, &samples, tol, |_, t, y| {
            worst = worst.max((y[0] - c(0.0, -t).exp()).norm());
            Ok(())
        })
        .unwrap();
        assert!(worst < 1e-10, "dense output error {worst:e}");
    }

    #[test]
    fn backward_integration() {
        let sys = |t: f64, _y: &[Complex64], dy: &mut [Complex64]| {
            dy[0] = c(t.cos(), 0.0);
        };
        let mut last = c(0.0, 0.0);
        integrate(
            sys,
            3.0,
            &[c(3f64.sin(), 0.0)],
            0.0,
            &[0.0],
            Tolerances::default(),
            |_, _, y| {
                last = y[0];
                Ok(())
            },
        )
        .unwrap();
        assert!(last.norm() < 1e-10);
    }

    #[test]
    fn samples_outside_interval_rejected() {
        let sys = |_t: f64, _y: &[Complex64], dy: &mut [Complex64]| dy[0] = c(0.0, 0.0);
        let r = integrate(
            sys,
            0.0,
            &[c(1.0, 0.0)],
            1.0,
            &[0.5, 2.0],
            Tolerances::default(),
            |_, _, _| Ok(()),
        );
        assert!(r.is_err());
    }

    #[test]
    fn blow_up_reports_failure() {
        let sys = |_t: f64, y: &[Complex64], dy: &mut [Complex64]| dy[0] = y[0] * y[0];
        let r = integrate(
            sys,
            0.0,
            &[c(1.0, 0.0)],
            2.0,
            &[],
            Tolerances::default(),
            |_, _, _| Ok(()),
        );
        match r {
            Err(Error::Integration { t, .. }) => assert!(t < 1.0 + 1e-6),
            other => panic!("expected integration failure, got {other:?}"),
        }
    }
}
