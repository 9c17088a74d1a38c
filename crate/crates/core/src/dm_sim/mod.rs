//! Trajectory-sampling density-matrix simulation of repeated entanglement
//! attempts on an electron-nuclear register, with measurement-based and
//! gate-based spectator protocols.
//!
//! Frequencies are in kHz and times in µs unless a name says otherwise.

use std::collections::HashSet;

use num_complex::Complex64;

use crate::error::{invalid, Result};
use crate::phase_dist::{ReadoutPolicy, DEFAULT_POINTS};

mod ensemble;
mod sequence;
#[cfg(test)]
mod sim_tests;
pub mod spin;
mod state;

pub use ensemble::{ensemble_run, ensemble_sweep, ensemble_trajectories, trajectory_rngs, EnsembleOutcome, TrajRng};
pub use sequence::{
    bloch_of_memory, entanglement_attempt, gate_based_step, measure_spectator, run_sequence, Plan, Simulator,
};
pub use spin::{build_propagators, Mat2};
pub use state::{DensityState, InitialState};

/// Default register capacity (electron + 3 nuclei, dim 16).
pub const DEFAULT_MAX_NUCLEI: usize = 3;
/// Hard capacity (electron + 5 nuclei, dim 64).
pub const HARD_MAX_NUCLEI: usize = 5;
/// Larmor frequency placeholder, from the quoted ~2.3 µs nuclear period.
pub const DEFAULT_OMEGA_L_KHZ: f64 = 432.0;
pub const DEFAULT_TAU_D_NS: f64 = 92.0;
pub const DEFAULT_T_I_US: f64 = 0.5;
/// Per-attempt dephasing the default `t_e` is calibrated to.
pub const DEFAULT_A_PAR_TE: f64 = 0.0271;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Memory,
    Spectator,
    Idle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NuclearSpinSpec {
    pub label: String,
    pub a_par_khz: f64,
    pub a_perp_khz: f64,
    pub role: Role,
}

impl NuclearSpinSpec {
    pub fn new(label: impl Into<String>, a_par_khz: f64, a_perp_khz: f64, role: Role) -> Self {
        Self { label: label.into(), a_par_khz, a_perp_khz, role }
    }
}

/// Ordered set of nuclear spins with exactly one memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Register {
    nuclei: Vec<NuclearSpinSpec>,
}

impl Register {
    pub fn new(nuclei: Vec<NuclearSpinSpec>) -> Result<Self> {
        Self::with_capacity(nuclei, DEFAULT_MAX_NUCLEI)
    }

    /// Like [`Register::new`] with a larger cap, up to [`HARD_MAX_NUCLEI`].
    /// Cost grows as `4^n` per step.
    pub fn with_capacity(nuclei: Vec<NuclearSpinSpec>, max_nuclei: usize) -> Result<Self> {
        if max_nuclei > HARD_MAX_NUCLEI {
            return Err(crate::Error::ResourceLimit(format!("at most {HARD_MAX_NUCLEI} nuclei")));
        }
        if nuclei.len() > max_nuclei {
            return Err(crate::Error::ResourceLimit(format!(
                "{} nuclei exceed the register cap of {max_nuclei}",
                nuclei.len()
            )));
        }
        let mut seen = HashSet::new();
        for s in &nuclei {
            if !seen.insert(s.label.as_str()) {
                return Err(invalid(format!("duplicate nucleus label {}", s.label)));
            }
            if !s.a_par_khz.is_finite() || !s.a_perp_khz.is_finite() {
                return Err(invalid(format!("non-finite hyperfine values for {}", s.label)));
            }
        }
        let memories = nuclei.iter().filter(|s| s.role == Role::Memory).count();
        if memories != 1 {
            return Err(invalid(format!("register needs exactly one memory, found {memories}")));
        }
        let mem = nuclei.iter().find(|s| s.role == Role::Memory).unwrap();
        if mem.a_par_khz == 0.0 {
            return Err(invalid("memory A_par must be nonzero"));
        }
        Ok(Self { nuclei })
    }

    /// C0 memory with C1, C2 spectators.
    pub fn fixture() -> Self {
        Self::new(vec![
            NuclearSpinSpec::new("C0", 24.4, 24.8, Role::Memory),
            NuclearSpinSpec::new("C1", -36.3, 26.6, Role::Spectator),
            NuclearSpinSpec::new("C2", 20.6, 41.5, Role::Spectator),
        ])
        .expect("fixture register is valid")
    }

    pub fn nuclei(&self) -> &[NuclearSpinSpec] {
        &self.nuclei
    }

    pub fn len(&self) -> usize {
        self.nuclei.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nuclei.is_empty()
    }

    pub fn memory_index(&self) -> usize {
        self.nuclei.iter().position(|s| s.role == Role::Memory).unwrap()
    }

    /// Spectator indices in listed order.
    pub fn spectators(&self) -> Vec<usize> {
        (0..self.nuclei.len()).filter(|&i| self.nuclei[i].role == Role::Spectator).collect()
    }

    /// Copy with every `A⊥` set to zero.
    pub fn without_perpendicular(&self) -> Self {
        let nuclei = self.nuclei.iter().map(|s| NuclearSpinSpec { a_perp_khz: 0.0, ..s.clone() }).collect();
        Self { nuclei }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SequenceConfig {
    pub omega_l_khz: f64,
    pub t_e_us: f64,
    pub t_i_us: f64,
    pub tau_d_ns: f64,
    /// Amplitude of electron `|0⟩` after the microwave pulse.
    pub alpha: Complex64,
    pub echo_at_half: bool,
    pub seed: u64,
}

impl Default for SequenceConfig {
    fn default() -> Self {
        let mut cfg = Self {
            omega_l_khz: DEFAULT_OMEGA_L_KHZ,
            t_e_us: 1.0,
            t_i_us: DEFAULT_T_I_US,
            tau_d_ns: DEFAULT_TAU_D_NS,
            alpha: Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0),
            echo_at_half: true,
            seed: 0,
        };
        cfg.t_e_us = cfg.t_e_for_dephasing(DEFAULT_A_PAR_TE, 24.4).expect("default calibration");
        cfg
    }
}

impl SequenceConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.omega_l_khz) || !positive(self.t_e_us) || !positive(self.t_i_us) || !positive(self.tau_d_ns) {
            return Err(invalid("omega_l, t_e, t_i and tau_d must be positive"));
        }
        let p = self.alpha.norm_sqr();
        if !(0.0..=1.0 + 1e-12).contains(&p) {
            return Err(invalid(format!("|alpha|^2 = {p} is outside [0, 1]")));
        }
        Ok(())
    }

    pub fn p0(&self) -> f64 {
        self.alpha.norm_sqr().min(1.0)
    }

    pub fn p1(&self) -> f64 {
        1.0 - self.p0()
    }

    pub fn tau_d_us(&self) -> f64 {
        self.tau_d_ns * 1e-3
    }

    /// First two moments of the reset time `min(Exp(τ_d), t_i)`, in µs.
    pub fn reset_moments(&self) -> (f64, f64) {
        let td = self.tau_d_us();
        let c = self.t_i_us / td;
        let e = (-c).exp();
        (td * (1.0 - e), 2.0 * td * td * (1.0 - e * (1.0 + c)))
    }

    /// Mean and variance of the rotating-frame phase one attempt imparts on
    /// a spin with conditional frequency difference `coupling_khz`.
    pub fn attempt_phase_moments(&self, coupling_khz: f64) -> (f64, f64) {
        let (m1, m2) = self.reset_moments();
        let w = std::f64::consts::TAU * coupling_khz * 1e-3;
        let p1 = self.p1();
        let t = self.t_e_us;
        let mean = 0.5 * w * ((t + self.t_i_us) - 2.0 * p1 * (t + m1));
        let second = t * t + 2.0 * t * m1 + m2;
        let var = w * w * (p1 * second - p1 * p1 * (t + m1).powi(2));
        (mean, var.max(0.0))
    }

    /// `E[e^{iφ}]` of the single-attempt phase, in closed form over the
    /// censored reset time.
    pub fn attempt_characteristic(&self, coupling_khz: f64) -> Complex64 {
        let w = std::f64::consts::TAU * coupling_khz * 1e-3;
        let (t, ti) = (self.t_e_us, self.t_i_us);
        let lam = Complex64::new(1.0 / self.tau_d_us(), w);
        let tail = (-lam * ti).exp();
        let e_tau = (1.0 - tail) / (lam * self.tau_d_us()) + tail;
        let a = Complex64::from_polar(1.0, 0.5 * w * (t + ti));
        let b = Complex64::from_polar(1.0, 0.5 * w * (ti - t)) * e_tau;
        self.p0() * a + self.p1() * b
    }

    /// Effective per-attempt dephasing `√Var` for a coupling.
    pub fn a_par_te(&self, coupling_khz: f64) -> f64 {
        self.attempt_phase_moments(coupling_khz).1.sqrt()
    }

    /// `t_e` giving per-attempt dephasing `target` on a spin with coupling
    /// `coupling_khz`, accounting for the reset-time spread.
    pub fn t_e_for_dephasing(&self, target: f64, coupling_khz: f64) -> Result<f64> {
        if !(target > 0.0) || coupling_khz == 0.0 {
            return Err(invalid("target dephasing and coupling must be nonzero"));
        }
        let f = |t_e: f64| SequenceConfig { t_e_us: t_e, ..*self }.a_par_te(coupling_khz) - target;
        let (mut lo, mut hi) = (0.0, 1.0);
        while f(hi) < 0.0 {
            hi *= 2.0;
            if hi > 1e9 {
                return Err(invalid("dephasing target unreachable"));
            }
        }
        if f(lo) > 0.0 {
            return Err(invalid(format!("reset-time spread alone exceeds dephasing {target}")));
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

/// Readout confusion probabilities `f_tr = P(report r | true t)` with
/// outcome 0 = bright.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReadoutModel {
    pub f00: f64,
    pub f01: f64,
    pub f10: f64,
    pub f11: f64,
    /// Misread branches replace the nuclear state by its fully dephased
    /// version.
    pub spinflip_dephases: bool,
}

impl Default for ReadoutModel {
    fn default() -> Self {
        Self { f00: 0.88, f01: 0.12, f10: 0.0, f11: 1.0, spinflip_dephases: true }
    }
}

impl ReadoutModel {
    pub fn ideal() -> Self {
        Self { f00: 1.0, f01: 0.0, f10: 0.0, f11: 1.0, spinflip_dephases: false }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.f00, self.f01, self.f10, self.f11];
        if all.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(invalid("readout probabilities must lie in [0, 1]"));
        }
        if (self.f00 + self.f01 - 1.0).abs() > 1e-12 || (self.f10 + self.f11 - 1.0).abs() > 1e-12 {
            return Err(invalid("readout columns must sum to 1"));
        }
        Ok(())
    }

    pub fn prob(&self, truth: u8, reported: u8) -> f64 {
        match (truth, reported) {
            (0, 0) => self.f00,
            (0, _) => self.f01,
            (_, 0) => self.f10,
            _ => self.f11,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Protocol {
    None,
    /// Sequential readout of the first `K` spectators with feedforward.
    MeasurementBased(usize),
    /// Spectator-controlled electron flips on the first `K` spectators.
    GateBased(usize),
}

impl Protocol {
    pub fn k(&self) -> usize {
        match self {
            Protocol::None => 0,
            Protocol::MeasurementBased(k) | Protocol::GateBased(k) => *k,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Protocol::None => "none",
            Protocol::MeasurementBased(_) => "measurement",
            Protocol::GateBased(_) => "gate",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolOptions {
    pub readout: ReadoutModel,
    pub policy: ReadoutPolicy,
    pub feedforward: bool,
    /// Explicit gate waits per used spectator; `None` picks the first BVL
    /// maximum of the real-time model.
    pub gate_delta_t_us: Option<Vec<f64>>,
    pub gate_echo_idle: bool,
    pub memory_state: InitialState,
    pub grid_points: usize,
    /// Audit positivity and trace at protocol boundaries.
    pub audit: bool,
}

impl Default for ProtocolOptions {
    fn default() -> Self {
        Self {
            readout: ReadoutModel::default(),
            policy: ReadoutPolicy::Perpendicular,
            feedforward: true,
            gate_delta_t_us: None,
            gate_echo_idle: true,
            memory_state: InitialState::PlusX,
            grid_points: DEFAULT_POINTS,
            audit: true,
        }
    }
}

/// Memory-qubit result of one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolOutcome {
    pub syndrome: Vec<u8>,
    pub bloch: [f64; 3],
    pub bvl: f64,
    pub fidelity: f64,
    pub applied_corrections: Vec<f64>,
    /// A reported outcome was forced: its probability vanished.
    pub forced: bool,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn register_validation() {
        let mem = NuclearSpinSpec::new("C0", 24.4, 0.0, Role::Memory);
        assert!(Register::new(vec![mem.clone(), mem.clone()]).is_err());
        assert!(Register::new(vec![NuclearSpinSpec::new("a", 1.0, 0.0, Role::Spectator)]).is_err());
        let many: Vec<_> = (0..4)
            .map(|i| NuclearSpinSpec::new(format!("n{i}"), 1.0, 0.0, if i == 0 { Role::Memory } else { Role::Idle }))
            .collect();
        assert!(matches!(Register::new(many.clone()), Err(crate::Error::ResourceLimit(_))));
        assert!(Register::with_capacity(many, 5).is_ok());
        let fx = Register::fixture();
        assert_eq!(fx.memory_index(), 0);
        assert_eq!(fx.spectators(), vec![1, 2]);
    }

    #[test]
    fn reset_moments_match_sampling_limits() {
        let cfg = SequenceConfig { t_i_us: 1e3, ..Default::default() };
        let (m1, m2) = cfg.reset_moments();
        let td = cfg.tau_d_us();
        assert!((m1 - td).abs() < 1e-12);
        assert!((m2 - 2.0 * td * td).abs() < 1e-12);
    }

    #[test]
    fn calibration_without_spread_is_pi_a_te() {
        // vanishing reset spread: a = π A t_e
        let cfg = SequenceConfig { tau_d_ns: 1e-9, ..Default::default() };
        let t_e = cfg.t_e_for_dephasing(0.0271, 24.4).unwrap();
        assert!((std::f64::consts::PI * 24.4e-3 * t_e - 0.0271).abs() < 1e-9);
        let d = SequenceConfig::default();
        assert!((d.a_par_te(24.4) - 0.0271).abs() < 1e-12);
        assert!(d.t_e_us < t_e);
    }

    #[test]
    fn readout_model_validation() {
        ReadoutModel::default().validate().unwrap();
        ReadoutModel::ideal().validate().unwrap();
        let bad = ReadoutModel { f00: 0.9, ..Default::default() };
        assert!(bad.validate().is_err());
        assert_eq!(ReadoutModel::default().prob(0, 1), 0.12);
    }

    #[test]
    fn sequence_validation() {
        assert!(SequenceConfig { t_e_us: 0.0, ..Default::default() }.validate().is_err());
        assert!(SequenceConfig { alpha: Complex64::new(1.1, 0.0), ..Default::default() }.validate().is_err());
        SequenceConfig::default().validate().unwrap();
    }
}
