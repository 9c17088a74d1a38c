use std::ffi::{c_char, CString};
use std::ptr;

use spectator_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 256];
    let n = unsafe { spectator_last_error(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf[..n.min(255)].iter().map(|&c| c as u8).collect();
    String::from_utf8(bytes).unwrap()
}

#[test]
fn analytic_values_and_errors() {
    let mut f = 0.0;
    unsafe {
        assert_eq!(spectator_fidelity_one_spectator(0.0, 1.0, &mut f), SpectatorStatus::Ok);
        assert_eq!(f, 0.5 + 0.5 * (-0.5f64).exp());
        assert_eq!(spectator_fidelity_one_spectator(1.0, -1.0, &mut f), SpectatorStatus::InvalidParameter);
        assert!(last_error().contains("sigma"));
        assert_eq!(spectator_fidelity_one_spectator(1.0, 1.0, ptr::null_mut()), SpectatorStatus::NullPointer);
        let mut t = 0.0;
        assert_eq!(spectator_optimal_rephasing_time_us(0.0280, -36.3 / 24.4, 30, 24.4, &mut t), SpectatorStatus::Ok);
        assert!((t - 0.4447).abs() < 1e-3, "{t}");
        assert_eq!(spectator_optimal_rephasing_time_us(0.0, 1.0, 30, 24.4, &mut t), SpectatorStatus::InvalidParameter);
    }
}

#[test]
fn last_error_truncates() {
    let mut f = 0.0;
    unsafe {
        spectator_fidelity_one_spectator(f64::NAN, 1.0, &mut f);
        let mut small = [0 as c_char; 4];
        let full = spectator_last_error(small.as_mut_ptr(), small.len());
        assert!(full > 3);
        assert_eq!(small[3], 0);
        assert_eq!(spectator_last_error(ptr::null_mut(), 0), full);
    }
}

#[test]
fn register_and_ensemble() {
    unsafe {
        let mut reg = ptr::null_mut();
        assert_eq!(spectator_register_new(&mut reg), SpectatorStatus::Ok);
        let m = CString::new("m").unwrap();
        assert_eq!(spectator_register_add(reg, m.as_ptr(), 24.4, 0.0, SpectatorRole::Memory), SpectatorStatus::Ok);
        assert_eq!(spectator_register_len(reg), 1);

        let mut opts = std::mem::zeroed::<SpectatorSimOptions>();
        assert_eq!(spectator_sim_options_default(&mut opts), SpectatorStatus::Ok);
        assert_eq!((opts.f00, opts.f01, opts.f10, opts.f11), (0.88, 0.12, 0.0, 1.0));
        opts.seed = 4;

        let mut sim = ptr::null_mut();
        assert_eq!(spectator_simulator_new(reg, &opts, &mut sim), SpectatorStatus::Ok);
        let mut a = SpectatorEnsembleResult::default();
        let mut b = SpectatorEnsembleResult::default();
        assert_eq!(spectator_ensemble_run(sim, 50, SpectatorProtocolKind::None, 0, 64, &mut a), SpectatorStatus::Ok);
        assert_eq!(spectator_ensemble_run(sim, 50, SpectatorProtocolKind::None, 0, 64, &mut b), SpectatorStatus::Ok);
        assert_eq!(a, b);
        assert_eq!(a.n_traj, 64);
        assert!(a.fidelity > 0.5 && a.fidelity < 1.0);
        assert_eq!(
            spectator_ensemble_run(sim, 50, SpectatorProtocolKind::MeasurementBased, 1, 8, &mut a),
            SpectatorStatus::InvalidParameter
        );
        spectator_simulator_free(sim);

        // a second memory makes the register invalid
        assert_eq!(spectator_register_add(reg, m.as_ptr(), 30.0, 0.0, SpectatorRole::Memory), SpectatorStatus::Ok);
        let mut bad = ptr::null_mut();
        assert_eq!(spectator_simulator_new(reg, &opts, &mut bad), SpectatorStatus::InvalidParameter);
        assert!(bad.is_null());
        spectator_register_free(reg);

        let mut fixture = ptr::null_mut();
        assert_eq!(spectator_register_fixture(&mut fixture), SpectatorStatus::Ok);
        assert_eq!(spectator_register_len(fixture), 3);
        opts.f00 = 0.5;
        assert_eq!(spectator_simulator_new(fixture, &opts, &mut bad), SpectatorStatus::InvalidParameter);
        spectator_register_free(fixture);
        spectator_register_free(ptr::null_mut());
    }
}

#[test]
fn phase_grid_round_trip() {
    unsafe {
        let mut prior = ptr::null_mut();
        assert_eq!(spectator_phase_gaussian(std::f64::consts::FRAC_PI_2, 0.0, 4096, &mut prior), SpectatorStatus::Ok);
        let mut theta = 0.0;
        assert_eq!(
            spectator_phase_readout_angle(prior, 1.0, SpectatorReadoutPolicy::Perpendicular, &mut theta),
            SpectatorStatus::Ok
        );
        let (mut post, mut p) = (ptr::null_mut(), 0.0);
        assert_eq!(spectator_phase_update(prior, 1.0, theta, 0, &mut post, &mut p), SpectatorStatus::Ok);
        assert!((p - 0.5).abs() < 1e-9);
        let (mut s0, mut s1) = (SpectatorPhaseStats::default(), SpectatorPhaseStats::default());
        spectator_phase_stats(prior, &mut s0);
        spectator_phase_stats(post, &mut s1);
        assert!(s1.sharpness > s0.sharpness);
        assert!(s1.circular_mean.is_finite());

        let gs = [1.0, 1.0];
        let (mut sigma, mut f) = (0.0, 0.0);
        assert_eq!(
            spectator_syndrome_average(
                prior,
                gs.as_ptr(),
                2,
                SpectatorReadoutPolicy::Perpendicular,
                &mut sigma,
                &mut f
            ),
            SpectatorStatus::Ok
        );
        assert!((f - 0.8619).abs() < 1e-3, "{f}");
        assert_eq!(
            spectator_syndrome_average(
                prior,
                ptr::null(),
                2,
                SpectatorReadoutPolicy::Perpendicular,
                &mut sigma,
                &mut f
            ),
            SpectatorStatus::NullPointer
        );
        assert_eq!(
            spectator_phase_update(prior, 1.0, 0.0, 3, &mut post, ptr::null_mut()),
            SpectatorStatus::InvalidParameter
        );
        spectator_phase_free(post);
        spectator_phase_free(prior);
    }
}

#[test]
fn curves_and_expected_fidelity() {
    unsafe {
        let ns = [0u64, 100, 1000];
        let fs = [0.97, 0.9, 0.6];
        let mut c = ptr::null_mut();
        assert_eq!(spectator_curve_new(ns.as_ptr(), fs.as_ptr(), ptr::null(), 3, &mut c), SpectatorStatus::Ok);
        let mut v = 0.0;
        assert_eq!(spectator_expected_fidelity(c, 1.0, 1e-9, &mut v), SpectatorStatus::Ok);
        // the first success is attempt 1, interpolated between the n = 0 and 100 points
        assert!((v - (0.97 - 0.07 / 100.0)).abs() < 1e-12, "{v}");
        assert_eq!(spectator_expected_fidelity(c, 0.0, 1e-9, &mut v), SpectatorStatus::InvalidParameter);
        spectator_curve_free(c);

        let mut r0 = ptr::null_mut();
        assert_eq!(spectator_curve_reference(0, &mut r0), SpectatorStatus::Ok);
        assert_eq!(spectator_expected_fidelity(r0, 0.5, 1e-9, &mut v), SpectatorStatus::Ok);
        assert!(v > 0.5 && v < 1.0);
        spectator_curve_free(r0);
        assert_eq!(spectator_curve_reference(9, &mut r0), SpectatorStatus::InvalidParameter);
    }
}

#[test]
fn version_is_nul_terminated() {
    let v = unsafe { std::ffi::CStr::from_ptr(spectator_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_entry_point() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/spectator.h")).unwrap();
    let src = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/src/lib.rs")).unwrap();
    let mut count = 0;
    for line in src.lines() {
        if let Some(rest) = line.split("extern \"C\" fn ").nth(1) {
            let name = rest.split('(').next().unwrap();
            assert!(header.contains(&format!("{name}(")), "{name} missing from header");
            count += 1;
        }
    }
    assert!(count >= 20);
}
