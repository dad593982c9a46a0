use std::ffi::{CStr, CString};
use std::ptr;

use dynres_ffi::*;

fn last_error() -> String {
    let p = dynres_last_error();
    assert!(!p.is_null());
    let s = unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned();
    unsafe { dynres_string_free(p) };
    s
}

#[test]
fn params_round_trip() {
    let mut p = ptr::null_mut();
    assert_eq!(unsafe { dynres_params_reference(&mut p) }, DynresStatus::Ok);
    let mut v = DynresParamValues::default();
    assert_eq!(unsafe { dynres_params_values(p, &mut v) }, DynresStatus::Ok);
    assert_eq!(v.g, 1.0);
    assert!((v.delta_omega - 100.0).abs() < 1e-12);
    assert!((v.n_bar / v.n_threshold - 5.0).abs() < 1e-12);
    assert!((v.nu - 0.0625).abs() < 1e-12);
    assert_eq!(
        unsafe { dynres_params_set_damping(p, 1e-3, 1e-3, 0.0) },
        DynresStatus::Ok
    );
    assert_eq!(
        unsafe { dynres_params_set_damping(p, -1.0, 0.0, 0.0) },
        DynresStatus::InvalidParameter
    );
    assert!(last_error().contains("gamma1"));
    unsafe { dynres_params_free(p) };
}

#[test]
fn invalid_arguments_are_reported() {
    let mut p = ptr::null_mut();
    assert_eq!(
        unsafe { dynres_params_new(1.0, 0.0, 0.05, 3.0, 6.0, &mut p) },
        DynresStatus::InvalidParameter
    );
    assert!(p.is_null());
    assert_eq!(
        unsafe { dynres_params_reference(ptr::null_mut()) },
        DynresStatus::InvalidArgument
    );
    assert!(last_error().contains("null"));
    let mut t = ptr::null_mut();
    assert_eq!(
        unsafe { dynres_simulate(ptr::null(), 0.0, 10, &mut t) },
        DynresStatus::InvalidArgument
    );
    assert_eq!(unsafe { dynres_trajectory_len(ptr::null()) }, 0);
    assert!(unsafe { dynres_trajectory_unitarity_defect(ptr::null()) }.is_nan());
    unsafe {
        dynres_params_free(ptr::null_mut());
        dynres_trajectory_free(ptr::null_mut());
        dynres_string_free(ptr::null_mut());
    }
}

#[test]
fn trajectory_access_and_csv() {
    let mut p = ptr::null_mut();
    assert_eq!(
        unsafe { dynres_params_new(1.0, 0.1, 0.05, 3.0, 6.0, &mut p) },
        DynresStatus::Ok
    );
    let mut t = ptr::null_mut();
    assert_eq!(
        unsafe { dynres_simulate(p, 0.0, 501, &mut t) },
        DynresStatus::Ok
    );
    assert_eq!(unsafe { dynres_trajectory_len(t) }, 501);
    let mut q = DynresPoint::default();
    assert_eq!(
        unsafe { dynres_trajectory_point(t, 0, &mut q) },
        DynresStatus::Ok
    );
    assert_eq!((q.t_over_2pi_g, q.n1, q.n2), (0.0, 6.0, 0.0));
    let mut max_n2: f64 = 0.0;
    for i in 0..501 {
        unsafe { dynres_trajectory_point(t, i, &mut q) };
        assert!((q.n1 + q.n2 - 6.0).abs() < 1e-9);
        max_n2 = max_n2.max(q.n2);
    }
    assert!(max_n2 > 5.9);
    assert!(unsafe { dynres_trajectory_unitarity_defect(t) } < 1e-9);
    assert_eq!(
        unsafe { dynres_trajectory_point(t, 501, &mut q) },
        DynresStatus::InvalidArgument
    );

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("traj.csv").to_str().unwrap()).unwrap();
    assert_eq!(
        unsafe { dynres_trajectory_write_csv(t, path.as_ptr()) },
        DynresStatus::Ok
    );
    let text = std::fs::read_to_string(dir.path().join("traj.csv")).unwrap();
    assert_eq!(text.lines().count(), 502);
    assert!(text.starts_with("t_over_2pi_g,"));
    unsafe {
        dynres_trajectory_free(t);
        dynres_params_free(p);
    }
}

#[test]
fn fidelities() {
    let mut f = DynresFidelity::default();
    assert_eq!(
        unsafe { dynres_fidelity_fock(0.9, 3, &mut f) },
        DynresStatus::Ok
    );
    assert_eq!(f.f_fix, f.f_mov);
    assert!((f.f_fix - 0.9f64.powi(6)).abs() < 1e-15);
    assert_eq!(
        unsafe { dynres_fidelity_coherent(1.0, 0.3, 2.0, 0.0, &mut f) },
        DynresStatus::Ok
    );
    assert!((f.f_mov - 1.0).abs() < 1e-12);
    assert!(f.f_fix < 1.0);
    assert_eq!(
        unsafe { dynres_fidelity_cat(1.0, 0.0, 0.0, 0.0, true, &mut f) },
        DynresStatus::InvalidState
    );
    assert_eq!(
        unsafe { dynres_fidelity_displaced_squeezed(0.8, 0.1, 1.0, 0.0, 0.0, 0.0, &mut f) },
        DynresStatus::Ok
    );
    let mut g = DynresFidelity::default();
    unsafe { dynres_fidelity_coherent(0.8, 0.1, 1.0, 0.0, &mut g) };
    assert!((f.f_fix - g.f_fix).abs() < 1e-12 && (f.f_mov - g.f_mov).abs() < 1e-12);
    assert_eq!(
        unsafe { dynres_fidelity_fock(1.5, 1, &mut f) },
        DynresStatus::InvalidArgument
    );
    assert_eq!(
        unsafe { dynres_fidelity_fock(0.5, 1, ptr::null_mut()) },
        DynresStatus::InvalidArgument
    );
}

#[test]
fn version_is_static() {
    let v = unsafe { CStr::from_ptr(dynres_version()) }
        .to_str()
        .unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_the_api() {
    let h =
        std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/dynres.h")).unwrap();
    for name in [
        "dynres_params_new",
        "dynres_params_free",
        "dynres_simulate",
        "dynres_trajectory_point",
        "dynres_trajectory_free",
        "dynres_fidelity_displaced_squeezed",
        "dynres_last_error",
        "dynres_string_free",
        "typedef struct DynresParams DynresParams",
        "DYNRES_STATUS_TRUNCATION = 6",
    ] {
        assert!(h.contains(name), "header lacks {name}");
    }
}

// Compiles and runs a C program against the header and the static library.
// `cargo test` does not produce the staticlib, so the test builds it into a
// target directory of its own.
#[test]
fn c_program_links_and_runs() {
    let manifest = env!("CARGO_MANIFEST_DIR");
    let target = std::path::Path::new(manifest).join("../../target/c-smoke");
    let built = std::process::Command::new(env!("CARGO"))
        .args(["build", "--quiet", "--lib", "-p", "dynres-ffi", "--target-dir"])
        .arg(&target)
        .status()
        .expect("cargo available");
    assert!(built.success());
    let lib = target.join("debug/libdynres_ffi.a");
    assert!(lib.exists(), "static library missing at {}", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("smoke");
    let status = std::process::Command::new("cc")
        .arg(format!("{manifest}/tests/smoke.c"))
        .arg(format!("-I{manifest}/include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .expect("C compiler available");
    assert!(status.success());
    let out = std::process::Command::new(&bin).output().unwrap();
    assert!(
        out.status.success(),
        "smoke exited with {:?}",
        out.status.code()
    );
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("401 "), "{text}");
}
