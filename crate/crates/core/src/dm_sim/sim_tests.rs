use std::f64::consts::{FRAC_1_SQRT_2, PI};

use num_complex::Complex64;
use rand::RngCore;

use super::spin::{self, Mat2};
use super::*;
use crate::phase_dist::{gate_posterior, FlipBranch, PhaseGrid};

/// Always returns zero, so `τ = 0` and outcome 0 whenever it is possible.
struct ZeroRng;

impl RngCore for ZeroRng {
    fn next_u32(&mut self) -> u32 {
        0
    }
    fn next_u64(&mut self) -> u64 {
        0
    }
    fn fill_bytes(&mut self, dest: &mut [u8]) {
        dest.fill(0);
    }
    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        dest.fill(0);
        Ok(())
    }
}

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn memory_only(a_par: f64, a_perp: f64) -> Register {
    Register::new(vec![NuclearSpinSpec::new("m", a_par, a_perp, Role::Memory)]).unwrap()
}

fn ideal_opts() -> ProtocolOptions {
    ProtocolOptions { readout: ReadoutModel::ideal(), ..Default::default() }
}

type M4 = [[Complex64; 4]; 4];

fn m4_mul(a: &M4, b: &M4) -> M4 {
    let mut o = [[c(0.0, 0.0); 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            for k in 0..4 {
                o[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    o
}

fn m4_adj(a: &M4) -> M4 {
    let mut o = [[c(0.0, 0.0); 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            o[i][j] = a[j][i].conj();
        }
    }
    o
}

/// nucleus ⊗ electron, electron least significant
fn kron(n: &Mat2, e: &Mat2) -> M4 {
    let mut o = [[c(0.0, 0.0); 4]; 4];
    for a in 0..2 {
        for b in 0..2 {
            for x in 0..2 {
                for y in 0..2 {
                    o[2 * a + x][2 * b + y] = n.0[a][b] * e.0[x][y];
                }
            }
        }
    }
    o
}

fn add4(a: &M4, b: &M4) -> M4 {
    let mut o = *a;
    for i in 0..4 {
        for j in 0..4 {
            o[i][j] += b[i][j];
        }
    }
    o
}

#[test]
fn single_attempt_matches_four_by_four_oracle() {
    let reg = memory_only(24.4, 0.0);
    let cfg = SequenceConfig { t_e_us: 0.9, t_i_us: 0.5, ..Default::default() };
    let spec = &reg.nuclei()[0];
    let mut st = DensityState::product(&[InitialState::PlusX.density()], 0).unwrap();
    entanglement_attempt(&mut st, &reg, &cfg, &mut ZeroRng).unwrap();

    // oracle: full electron-nuclear arithmetic
    let p0 = Mat2([[c(1.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(0.0, 0.0)]]);
    let p1 = Mat2([[c(0.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(1.0, 0.0)]]);
    let a = FRAC_1_SQRT_2;
    let pulse = Mat2([[c(a, 0.0), c(-a, 0.0)], [c(a, 0.0), c(a, 0.0)]]);
    let rho0 = kron(&InitialState::PlusX.density(), &p0);
    let rho1 = {
        let u = kron(&Mat2::IDENTITY, &pulse);
        m4_mul(&m4_mul(&u, &rho0), &m4_adj(&u))
    };
    let (u0, u1) = spin::build_propagators(spec, cfg.omega_l_khz, cfg.t_e_us);
    let evo = add4(&kron(&u0, &p0), &kron(&u1, &p1));
    let rho2 = m4_mul(&m4_mul(&evo, &rho1), &m4_adj(&evo));
    // reset: trace out the electron, re-prepare |0⟩
    let mut nuc = [[c(0.0, 0.0); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            nuc[i][j] = rho2[2 * i][2 * j] + rho2[2 * i + 1][2 * j + 1];
        }
    }
    let (w0, _) = spin::build_propagators(spec, cfg.omega_l_khz, cfg.t_i_us);
    let nuc = w0 * Mat2(nuc) * w0.adjoint();
    for i in 0..2 {
        for j in 0..2 {
            assert!((nuc.0[i][j] - st.get(i, j)).norm() < 1e-13);
        }
    }

    // rotating-frame coherence e^{iπA t_i} cos(πA t_e)
    let [x, y, _] = st.bloch(0);
    let w = PI * 24.4e-3;
    let expect = Complex64::from_polar((w * cfg.t_e_us).cos(), w * cfg.t_i_us);
    assert!((c(x, y) - expect).norm() < 1e-12, "{x} {y} vs {expect}");
}

#[test]
fn alpha_one_is_deterministic_rotation() {
    let reg = memory_only(24.4, 10.0);
    let cfg = SequenceConfig { alpha: c(1.0, 0.0), echo_at_half: false, ..Default::default() };
    let opts = ProtocolOptions { audit: true, ..ideal_opts() };
    let sim = Simulator::new(&reg, &cfg, &opts).unwrap();
    let st = sim.prepare(500, &mut rand::thread_rng()).unwrap();
    let (_, _, _, bvl, _) = bloch_of_memory(&st);
    assert!((bvl - 1.0).abs() < 1e-10);
}

#[test]
fn zero_attempts_ideal_fidelity() {
    let out =
        run_sequence(&Register::fixture(), &SequenceConfig::default(), 0, Protocol::None, &ideal_opts(), &mut ZeroRng)
            .unwrap();
    assert!((out.fidelity - 1.0).abs() < 1e-9);
    assert!((out.bloch[0] - 1.0).abs() < 1e-9);
}

#[test]
fn z_memory_never_dephases_without_perpendicular_coupling() {
    let reg = Register::fixture().without_perpendicular();
    let opts = ProtocolOptions { memory_state: InitialState::Zero, ..ideal_opts() };
    for n in [1u64, 17, 400] {
        let out =
            run_sequence(&reg, &SequenceConfig::default(), n, Protocol::None, &opts, &mut rand::thread_rng()).unwrap();
        assert!((out.bloch[2] - 1.0).abs() < 1e-9);
        assert!((out.bvl - 1.0).abs() < 1e-9);
    }
}

#[test]
fn long_run_preserves_invariants() {
    let reg = Register::fixture().without_perpendicular();
    let sim = Simulator::new(&reg, &SequenceConfig::default(), &ideal_opts()).unwrap();
    let st = sim.prepare(10_000, &mut trajectory_rngs(7, 0).0).unwrap();
    assert!((st.trace() - 1.0).abs() < 1e-8);
    assert!(st.hermiticity_error() < 1e-10);
    assert!(st.min_eigenvalue() > -1e-9);
}

#[test]
fn general_path_matches_diagonal_path() {
    // A⊥ = 0 run through the generic branch by a zero-size perpendicular
    // detour: compare the diagonal kernel with explicit per-qubit unitaries
    let reg = Register::fixture().without_perpendicular();
    let cfg = SequenceConfig::default();
    let mut a = DensityState::product(&[InitialState::PlusX.density(); 3], 0).unwrap();
    let mut b = a.clone();
    let mut rng = trajectory_rngs(3, 0).0;
    entanglement_attempt(&mut a, &reg, &cfg, &mut rng.clone()).unwrap();
    let tau = {
        use rand::Rng;
        let u: f64 = rng.gen();
        (-cfg.tau_d_us() * (1.0 - u).ln()).min(cfg.t_i_us)
    };
    let mut other = b.clone();
    for (q, s) in reg.nuclei().iter().enumerate() {
        let (u0, _) = spin::build_propagators(s, cfg.omega_l_khz, cfg.t_e_us + cfg.t_i_us);
        b.apply_1q(q, &u0);
        let (w0, _) = spin::build_propagators(s, cfg.omega_l_khz, cfg.t_i_us - tau);
        let (_, w1) = spin::build_propagators(s, cfg.omega_l_khz, cfg.t_e_us + tau);
        other.apply_1q(q, &(w0 * w1));
    }
    b.mix(cfg.p0(), &other, cfg.p1());
    for (x, y) in a.matrix().iter().zip(b.matrix()) {
        assert!((x - y).norm() < 1e-14);
    }
}

#[test]
fn time_ordering_invariance_without_perpendicular() {
    let s = NuclearSpinSpec::new("m", 24.4, 0.0, Role::Memory);
    let intervals = [(0.3, true), (1.1, false), (0.7, true), (0.2, false), (2.5, true)];
    let compose = |order: &[usize]| {
        order.iter().fold(Mat2::IDENTITY, |acc, &i| {
            let (t, excited) = intervals[i];
            let (u0, u1) = spin::build_propagators(&s, 432.0, t);
            (if excited { u1 } else { u0 }) * acc
        })
    };
    let base = compose(&[0, 1, 2, 3, 4]);
    let perm = compose(&[4, 2, 0, 3, 1]);
    for (x, y) in base.0.iter().flatten().zip(perm.0.iter().flatten()) {
        assert!((x - y).norm() < 1e-12);
    }
}

#[test]
fn measure_plus_y_ideal_and_noisy() {
    let reg = Register::new(vec![
        NuclearSpinSpec::new("m", 24.4, 0.0, Role::Memory),
        NuclearSpinSpec::new("s", 36.3, 0.0, Role::Spectator),
    ])
    .unwrap();
    let _ = reg;
    let st = DensityState::product(&[InitialState::PlusX.density(), InitialState::PlusY.density()], 0).unwrap();
    let mut a = st.clone();
    let (r, forced) = measure_spectator(&mut a, 1, &ReadoutModel::ideal(), &mut ZeroRng).unwrap();
    assert_eq!((r, forced), (0, false));
    // u just below 1 still reports bright: the dark branch is empty
    struct High;
    impl RngCore for High {
        fn next_u32(&mut self) -> u32 {
            u32::MAX
        }
        fn next_u64(&mut self) -> u64 {
            u64::MAX
        }
        fn fill_bytes(&mut self, d: &mut [u8]) {
            d.fill(255)
        }
        fn try_fill_bytes(&mut self, d: &mut [u8]) -> std::result::Result<(), rand::Error> {
            d.fill(255);
            Ok(())
        }
    }
    let mut b = st.clone();
    let (r, forced) = measure_spectator(&mut b, 1, &ReadoutModel::ideal(), &mut High).unwrap();
    assert_eq!((r, forced), (0, false));

    // F_RO: bright reported 88% of the time
    let mut rng = trajectory_rngs(11, 0).1;
    let n = 20_000;
    let bright = (0..n)
        .filter(|_| measure_spectator(&mut st.clone(), 1, &ReadoutModel::default(), &mut rng).unwrap().0 == 0)
        .count();
    let p = bright as f64 / n as f64;
    let se = (0.88 * 0.12 / n as f64).sqrt();
    assert!((p - 0.88).abs() < 4.0 * se, "{p}");
}

#[test]
fn equal_superposition_gives_orthogonal_posts() {
    let st = DensityState::product(&[InitialState::PlusX.density(), InitialState::PlusX.density()], 0).unwrap();
    let mut rng = trajectory_rngs(5, 0).1;
    let mut seen = [false; 2];
    let mut bright = 0;
    for _ in 0..2000 {
        let mut s = st.clone();
        let (r, _) = measure_spectator(&mut s, 1, &ReadoutModel::ideal(), &mut rng).unwrap();
        let y = s.bloch(1)[1];
        assert!((y - if r == 0 { 1.0 } else { -1.0 }).abs() < 1e-12);
        seen[r as usize] = true;
        bright += (r == 0) as usize;
    }
    assert!(seen[0] && seen[1]);
    assert!((bright as f64 / 2000.0 - 0.5).abs() < 0.05);
}

fn two_spin(g: f64) -> Register {
    Register::new(vec![
        NuclearSpinSpec::new("m", 24.4, 0.0, Role::Memory),
        NuclearSpinSpec::new("s", 24.4 * g, 0.0, Role::Spectator),
    ])
    .unwrap()
}

#[test]
fn gate_zero_wait_keeps_memory_marginal() {
    let reg = Register::fixture();
    let sim = Simulator::new(&reg, &SequenceConfig::default(), &ideal_opts()).unwrap();
    let st = sim.prepare(40, &mut trajectory_rngs(1, 0).0).unwrap();
    let before = st.reduced(0);
    let mut after = st.clone();
    gate_based_step(&mut after, &reg, 432.0, 1, 0.0, FlipBranch::Minus, &[]).unwrap();
    let r = after.reduced(0);
    for (x, y) in before.0.iter().flatten().zip(r.0.iter().flatten()) {
        assert!((x - y).norm() < 1e-12);
    }
    // the spectator is left in a Y eigenstate mixture, uncorrelated with the memory
    let y = after.bloch(1);
    assert!(y[0].abs() < 1e-12);
}

#[test]
fn gate_step_on_delta_phase_matches_posterior() {
    let reg = two_spin(1.0);
    let n = 4096;
    let grid = PhaseGrid::delta(0.9, n).unwrap();
    let i0 = grid.density().iter().position(|&v| v > 0.0).unwrap();
    let theta0 = grid.phi(i0);
    let w = std::f64::consts::TAU * 24.4e-3;
    let cells = 300.0;
    let phi_c = -cells * grid.spacing();
    let delta_t = -phi_c / w;

    let mut st = DensityState::product(&[InitialState::PlusX.density(), InitialState::PlusX.density()], 0).unwrap();
    st.rotate_in_frame(0, &Mat2::rz(theta0));
    st.rotate_in_frame(1, &Mat2::rz(theta0));
    gate_based_step(&mut st, &reg, 432.0, 1, delta_t, FlipBranch::Minus, &[]).unwrap();
    let [x, y, _] = st.bloch(0);
    // x + iy = w0 e^{iθ0} + w1 e^{i(θ0+φc)}
    let (a, b) = (Complex64::from_polar(1.0, theta0), Complex64::from_polar(1.0, theta0 + phi_c));
    let det = a.re * b.im - a.im * b.re;
    let w0 = (x * b.im - y * b.re) / det;
    let w1 = (a.re * y - a.im * x) / det;

    let post = gate_posterior(&grid, 1.0, phi_c, FlipBranch::Minus).unwrap();
    let h = grid.spacing();
    let i1 = (i0 as i64 - cells as i64).rem_euclid(n as i64) as usize;
    assert!((post.density()[i0] * h - w0).abs() < 1e-9, "{w0}");
    assert!((post.density()[i1] * h - w1).abs() < 1e-9, "{w1}");
    assert!((w0 - 0.5 * (1.0 + theta0.sin())).abs() < 1e-9);
}

#[test]
fn feedforward_splits_and_realigns() {
    let reg = two_spin(1.49);
    let cfg = SequenceConfig::default();
    let n_rea = 1000;
    let run = |feedforward: bool| {
        let opts = ProtocolOptions { feedforward, ..ideal_opts() };
        let sim = Simulator::new(&reg, &cfg, &opts).unwrap();
        super::ensemble_trajectories(&sim, n_rea, &[Protocol::MeasurementBased(1)], 400).unwrap().remove(0)
    };
    let raw = run(false);
    let split = |outs: &[ProtocolOutcome], r: u8| {
        let sel: Vec<_> = outs.iter().filter(|o| o.syndrome[0] == r).collect();
        sel.iter().map(|o| o.bloch[1]).sum::<f64>() / sel.len() as f64
    };
    let (y0, y1) = (split(&raw, 0), split(&raw, 1));
    assert!(y0 * y1 < 0.0 && y0.abs() > 0.1 && y1.abs() > 0.1, "{y0} {y1}");
    let y_all = raw.iter().map(|o| o.bloch[1]).sum::<f64>() / raw.len() as f64;
    assert!(y_all.abs() < 0.06, "{y_all}");

    let corrected = run(true);
    let e_raw = EnsembleOutcome::from_outcomes(n_rea, Protocol::MeasurementBased(1), 0, &raw);
    let e_cor = EnsembleOutcome::from_outcomes(n_rea, Protocol::MeasurementBased(1), 0, &corrected);
    assert!(e_cor.bvl > e_raw.bvl + 0.05, "{} vs {}", e_cor.bvl, e_raw.bvl);
}

#[test]
fn ensemble_is_deterministic_and_single_trajectory_matches() {
    let reg = Register::fixture();
    let cfg = SequenceConfig { seed: 99, ..Default::default() };
    let opts = ProtocolOptions::default();
    let a = ensemble_run(&reg, &cfg, &opts, 60, Protocol::MeasurementBased(2), 8).unwrap();
    let b = ensemble_run(&reg, &cfg, &opts, 60, Protocol::MeasurementBased(2), 8).unwrap();
    assert_eq!(a, b);

    let one = ensemble_run(&reg, &cfg, &opts, 60, Protocol::GateBased(1), 1).unwrap();
    let sim = Simulator::new(&reg, &cfg, &opts).unwrap();
    let (mut seq, mut proto) = trajectory_rngs(99, 0);
    let st = sim.prepare(60, &mut seq).unwrap();
    let single = sim.execute(st, &sim.plan(60, Protocol::GateBased(1)).unwrap(), &mut proto).unwrap();
    assert_eq!(one.mean, single.bloch);
}

#[test]
fn k_zero_ensemble_matches_characteristic_function() {
    let reg = memory_only(24.4, 0.0);
    let cfg = SequenceConfig { seed: 4, ..Default::default() };
    let n_rea = 300;
    let e = ensemble_run(&reg, &cfg, &ideal_opts(), n_rea, Protocol::None, 2000).unwrap();
    assert!(e.stderr_bvl > 0.0);
    // exact per-attempt factor |E[c]| by quadrature over τ
    let td = cfg.tau_d_us();
    let w = std::f64::consts::TAU * 24.4e-3;
    let steps = 200_000;
    let h = cfg.t_i_us / steps as f64;
    let mut ec = Complex64::from_polar(0.5, 0.5 * w * (cfg.t_e_us + cfg.t_i_us));
    for i in 0..steps {
        let tau = (i as f64 + 0.5) * h;
        let pdf = (-tau / td).exp() / td;
        ec += Complex64::from_polar(0.5 * pdf * h, 0.5 * w * (cfg.t_i_us - cfg.t_e_us - 2.0 * tau));
    }
    ec += Complex64::from_polar(0.5 * (-cfg.t_i_us / td).exp(), 0.5 * w * (-cfg.t_e_us - cfg.t_i_us));
    assert!((cfg.attempt_characteristic(24.4) - ec).norm() < 1e-9);
    let expect = ec.norm().powi(n_rea as i32);
    assert!((e.bvl - expect).abs() < 3.0 * e.stderr_bvl + 1e-6, "{} vs {expect} ± {}", e.bvl, e.stderr_bvl);
}

#[test]
fn gate_plan_waits_increase_with_attempts() {
    let reg = two_spin(1.49);
    let sim = Simulator::new(&reg, &SequenceConfig::default(), &ideal_opts()).unwrap();
    assert_eq!(sim.plan(0, Protocol::GateBased(1)).unwrap().gate_delays_us(), vec![0.0]);
    let mut last = 0.0;
    for n in [30u64, 100, 300, 600] {
        let d = sim.plan(n, Protocol::GateBased(1)).unwrap().gate_delays_us()[0];
        assert!(d > last, "{n}: {d}");
        last = d;
    }
}

#[test]
fn plan_rejects_too_many_spectators() {
    let sim = Simulator::new(&two_spin(1.0), &SequenceConfig::default(), &ideal_opts()).unwrap();
    assert!(sim.plan(10, Protocol::MeasurementBased(2)).is_err());
}

#[test]
fn corrections_beat_no_correction_with_and_without_echo() {
    for echo_at_half in [false, true] {
        for a in [36.3, -36.3] {
            let reg = Register::new(vec![
                NuclearSpinSpec::new("m", 24.4, 0.0, Role::Memory),
                NuclearSpinSpec::new("s", a, 0.0, Role::Spectator),
            ])
            .unwrap();
            let cfg = SequenceConfig { echo_at_half, seed: 2, ..Default::default() };
            let ps = [Protocol::None, Protocol::MeasurementBased(1), Protocol::GateBased(1)];
            let e = ensemble_sweep(&reg, &cfg, &ideal_opts(), 301, &ps, 40).unwrap();
            assert!(e[1].bvl > e[0].bvl + 0.02, "echo {echo_at_half} A {a}: {} vs {}", e[1].bvl, e[0].bvl);
            assert!(e[2].bvl > e[0].bvl + 0.02, "echo {echo_at_half} A {a}: {} vs {}", e[2].bvl, e[0].bvl);
        }
    }
}
