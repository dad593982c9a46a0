mod common;

use approx::assert_relative_eq;
use dynres::fidelity::{fidelity, InputState, Parity};
use dynres::fock_oracle::*;
use dynres::semiclassical::uniform_grid;
use dynres::SystemParams;
use num_complex::Complex64;

use common::{c, dense_block_hamiltonian, transmittance, TwoMode};

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

#[test]
fn sparse_block_matches_kronecker_construction() {
    let (g, wm, k0, b0) = (0.7, 0.13, 0.21, 2.9);
    for (n, m) in [(2, 3), (0, 4), (3, 1)] {
        let h = build_hamiltonian(&raw(g, wm, k0, b0), n, m, DEFAULT_NNZ_CAP).unwrap();
        let dense = dense_block_hamiltonian(g, wm, k0, b0, n, m);
        let diff = (h.to_dense() - dense).abs().max();
        assert!(diff < 1e-12, "N = {n}, M = {m}: {diff}");
        assert_eq!(h.hermiticity_defect(), 0.0);
        assert!(h.off_diagonal_bands() <= 4);
    }
}

#[test]
fn photonless_block_is_mechanical_ladder() {
    let h = build_hamiltonian(&raw(1.0, 0.3, 0.2, 5.0), 0, 5, DEFAULT_NNZ_CAP).unwrap();
    let d = h.to_dense();
    for i in 0..6 {
        for j in 0..6 {
            let want = if i == j { 0.3 * i as f64 } else { 0.0 };
            assert_eq!(d[(i, j)], want);
        }
    }
}

#[test]
fn resonant_two_level_block() {
    let h = build_hamiltonian(&raw(0.8, 0.1, 0.0, 0.0), 1, 0, DEFAULT_NNZ_CAP).unwrap();
    let d = h.to_dense();
    assert_eq!(
        (d[(0, 0)], d[(0, 1)], d[(1, 0)], d[(1, 1)]),
        (0.0, 0.8, 0.8, 0.0)
    );
}

#[test]
fn one_photon_beam_splitter_to_1e8() {
    let p = raw(1.0, 0.05, 0.0, 0.0);
    let times = uniform_grid(0.0, 10.0, 201);
    for ctrl in [
        OracleControls::default(),
        OracleControls {
            dense_below: 0,
            ..Default::default()
        },
    ] {
        let mut psi = prepare_input(&InputState::Fock { n: 1 }, 1, 0).unwrap();
        evolve(&p, &mut psi, &times, &ctrl, |_, t, s| {
            let (_, n2) = s.populations();
            assert!((n2 - t.sin().powi(2)).abs() < 1e-8, "t = {t}");
            Ok(())
        })
        .unwrap();
    }
}

#[test]
fn decoupled_cavities_keep_populations() {
    let p = raw(0.0, 0.2, 0.15, 3.0);
    let times = uniform_grid(0.0, 30.0, 31);
    let st = InputState::Coherent { alpha: c(1.1, 0.3) };
    let mut psi = prepare_input(&st, auto_n_max(&st).unwrap(), 40).unwrap();
    let (n1_0, _) = psi.populations();
    evolve(
        &p,
        &mut psi,
        &times,
        &OracleControls::default(),
        |_, _, s| {
            let (n1, n2) = s.populations();
            assert!((n1 - n1_0).abs() < 1e-10 && n2 == 0.0);
            Ok(())
        },
    )
    .unwrap();
}

#[test]
fn frozen_splitting_gives_detuned_rabi_amplitude() {
    // one photon, no phonons: H = [[d, g], [g, -d]] with d = 2 k0 b0
    let (g, d) = (0.6, 1.1);
    let p = raw(g, 0.3, 0.05, d / 0.1);
    let mut max_p: f64 = 0.0;
    let eps = g.hypot(d);
    let times = uniform_grid(0.0, std::f64::consts::PI / eps, 2001);
    let mut psi = prepare_input(&InputState::Fock { n: 1 }, 1, 0).unwrap();
    evolve(
        &p,
        &mut psi,
        &times,
        &OracleControls::default(),
        |_, _, s| {
            max_p = max_p.max(s.populations().1);
            Ok(())
        },
    )
    .unwrap();
    assert_relative_eq!(max_p, g * g / (g * g + d * d), epsilon = 1e-6);
}

#[test]
fn prepared_block_weights() {
    let psi = prepare_input(&InputState::Fock { n: 3 }, 3, 2).unwrap();
    assert_eq!(psi.blocks.len(), 1);
    let b = &psi.blocks[0];
    assert_eq!(b.basis.n, 3);
    assert_eq!(b.psi[b.basis.index(3, 0)], c(1.0, 0.0));

    let st = InputState::Coherent { alpha: c(1.0, 0.0) };
    let psi = prepare_input(&st, auto_n_max(&st).unwrap(), 0).unwrap();
    let mut fact = 1.0;
    for b in &psi.blocks {
        if b.basis.n > 0 {
            fact *= b.basis.n as f64;
        }
        assert_relative_eq!(
            b.weight.norm_sqr(),
            (-1.0f64).exp() / fact,
            max_relative = 1e-12
        );
    }

    let cat = InputState::Cat {
        alpha: c(1.0, 0.0),
        parity: Parity::Even,
    };
    let psi = prepare_input(&cat, auto_n_max(&cat).unwrap(), 0).unwrap();
    assert!(psi.blocks.iter().all(|b| b.basis.n % 2 == 0));
}

#[test]
fn fidelity_at_preparation() {
    for st in [
        InputState::Fock { n: 2 },
        InputState::Coherent { alpha: c(0.8, 0.2) },
        InputState::Cat {
            alpha: c(1.2, 0.0),
            parity: Parity::Odd,
        },
    ] {
        let psi = prepare_input(&st, auto_n_max(&st).unwrap(), 3).unwrap();
        assert_relative_eq!(
            oracle_fidelity(&psi, 0.0, Target::Cavity1),
            1.0,
            epsilon = 1e-8
        );
        if let InputState::Fock { .. } = st {
            assert_eq!(oracle_fidelity(&psi, 0.0, Target::Cavity2), 0.0);
        }
    }
}

#[test]
fn cross_block_amplitudes_stay_zero() {
    let p = SystemParams::from_dimensionless(1.0, 0.1, 0.05, 3.0, 2.0).unwrap();
    let st = InputState::Cat {
        alpha: c(1.0, 0.0),
        parity: Parity::Even,
    };
    let mut psi = prepare_input(&st, auto_n_max(&st).unwrap(), 30).unwrap();
    let before: Vec<usize> = psi.blocks.iter().map(|b| b.basis.n).collect();
    evolve(
        &p,
        &mut psi,
        &[5.0],
        &OracleControls::default(),
        |_, _, _| Ok(()),
    )
    .unwrap();
    let after: Vec<usize> = psi.blocks.iter().map(|b| b.basis.n).collect();
    assert_eq!(before, after);
    assert!(psi.blocks.iter().all(|b| b.basis.n % 2 == 0));
    assert_relative_eq!(psi.norm_sqr(), 1.0, epsilon = 1e-9);
}

#[test]
fn doubling_phonon_cutoff_leaves_distribution_unchanged() {
    let p = SystemParams::from_dimensionless(1.0, 0.1, 0.05, 3.0, 2.0).unwrap();
    let b = 2.0 * p.kappa0 * 2.0 / p.omega_m;
    let m = auto_m_max(b);
    let run = |m_max: usize| {
        let mut psi = prepare_input(&InputState::Fock { n: 2 }, 2, m_max).unwrap();
        evolve(
            &p,
            &mut psi,
            &[15.0],
            &OracleControls::default(),
            |_, _, _| Ok(()),
        )
        .unwrap();
        assert!(psi.phonon_leakage() < 1e-6);
        psi
    };
    let (a, b2) = (run(m), run(2 * m));
    let da = a.distribution();
    let db = b2.distribution();
    // compare (N, n1, m) probabilities over the common levels
    let mut diff: f64 = 0.0;
    for n1 in 0..=2 {
        for k in 0..=m {
            diff += (da[n1 * (m + 1) + k] - db[n1 * (2 * m + 1) + k]).abs();
        }
    }
    for n1 in 0..=2 {
        for k in m + 1..=2 * m {
            diff += db[n1 * (2 * m + 1) + k];
        }
    }
    assert!(diff < 1e-8, "{diff}");
}

#[test]
fn closed_forms_match_two_mode_brute_force() {
    let modes = TwoMode { cutoff: 24 };
    let cases: Vec<(InputState, f64, f64, f64)> = vec![
        (InputState::Fock { n: 3 }, 0.8, 0.7, 0.3),
        (
            InputState::Coherent {
                alpha: c(1.2, -0.5),
            },
            0.6,
            2.1,
            -1.0,
        ),
        (
            InputState::Cat {
                alpha: c(1.5, 0.0),
                parity: Parity::Even,
            },
            0.9,
            0.4,
            0.0,
        ),
        (
            InputState::Cat {
                alpha: c(0.7, 0.9),
                parity: Parity::Odd,
            },
            0.5,
            -1.3,
            2.0,
        ),
        (
            InputState::DisplacedSqueezed {
                alpha: c(0.9, 0.2),
                eta: c(0.3, 0.2),
            },
            0.75,
            0.9,
            0.5,
        ),
        (
            InputState::DisplacedSqueezed {
                alpha: c(0.0, 0.0),
                eta: c(0.0, -0.4),
            },
            0.95,
            -2.5,
            1.0,
        ),
    ];
    for (st, abs, theta, phase11) in cases {
        let amps = st.amplitudes(24).unwrap();
        let kept: f64 = amps.iter().map(|z| z.norm_sqr()).sum();
        assert!(1.0 - kept < 1e-10, "cutoff too small for {st:?}");
        let (fix, mov) = modes.fidelities(&amps, &transmittance(abs, theta, phase11));
        let f = fidelity(&st, abs, theta).unwrap();
        assert!(
            (f.f_fix - fix).abs() < 1e-8,
            "{st:?}: fix {} vs {fix}",
            f.f_fix
        );
        assert!(
            (f.f_mov - mov).abs() < 1e-8,
            "{st:?}: mov {} vs {mov}",
            f.f_mov
        );
    }
}

#[test]
fn oracle_matches_beam_splitter_fidelity_without_mirror() {
    // kappa0 = 0 reduces the three-mode model to the two-mode beam splitter
    let p = raw(1.0, 0.05, 0.0, 0.0);
    let st = InputState::Coherent { alpha: c(1.1, 0.4) };
    let t = 0.9;
    let mut psi = prepare_input(&st, auto_n_max(&st).unwrap(), 0).unwrap();
    evolve(&p, &mut psi, &[t], &OracleControls::default(), |_, _, _| {
        Ok(())
    })
    .unwrap();
    // T21 = -i sin t
    let theta = -std::f64::consts::FRAC_PI_2;
    let want = fidelity(&st, t.sin(), theta).unwrap();
    assert_relative_eq!(
        oracle_fidelity(&psi, theta, Target::Cavity2),
        want.f_mov,
        epsilon = 1e-8
    );
    assert_relative_eq!(
        oracle_fidelity(&psi, 0.0, Target::Cavity2),
        want.f_fix,
        epsilon = 1e-8
    );
}

#[test]
fn report_and_csv_are_reproducible() {
    let p = SystemParams::from_dimensionless(1.0, 0.1, 0.05, 3.0, 2.0).unwrap();
    let grid = sample_grid(0.25 * p.mechanical_period(), 201);
    let ctrl = OracleControls::default();
    let (run, rep) =
        compare_with_semiclassical(&p, &InputState::Fock { n: 2 }, &grid, &ctrl).unwrap();
    let (run2, rep2) =
        compare_with_semiclassical(&p, &InputState::Fock { n: 2 }, &grid, &ctrl).unwrap();
    assert_eq!(
        serde_json::to_string(&rep).unwrap(),
        serde_json::to_string(&rep2).unwrap()
    );
    assert!(rep.max_leakage < 1e-6 && rep.max_norm_defect < 1e-9);
    let mut a = Vec::new();
    let mut b = Vec::new();
    run.write_csv(&mut a).unwrap();
    run2.write_csv(&mut b).unwrap();
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("t_over_2pi_g,re_b_over_b0,"));
    assert_eq!(text.lines().count(), 202);
    let json = serde_json::to_value(&rep).unwrap();
    assert!(json.get("runtime_s").is_none());
    let _ = Complex64::default();
}
