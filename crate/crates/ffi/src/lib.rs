//! C ABI over `spectator-core`.
//!
//! Objects are opaque handles created by `*_new`-style functions and
//! released with the matching `*_free`. Every fallible call returns a
//! [`SpectatorStatus`]; on failure [`spectator_last_error`] describes it.
//! Handles are not thread-safe; errors are recorded per thread.

#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use spectator_core::analytic::{self, DephasingModel};
use spectator_core::dm_sim::{
    ensemble_run, InitialState, NuclearSpinSpec, Protocol, ProtocolOptions, ReadoutModel, Register, Role,
    SequenceConfig,
};
use spectator_core::phase_dist::{self, PhaseGrid, ReadoutPolicy, SpectatorMeasurement};
use spectator_core::strategy::{self, CurvePoint, CurveSource, FidelityCurve};
use spectator_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectatorStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidParameter = 2,
    Config = 3,
    ImpossibleOutcome = 4,
    CorruptedState = 5,
    Coverage = 6,
    FitFailure = 7,
    ResourceLimit = 8,
    Io = 9,
    InvalidUtf8 = 10,
    Panic = 11,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectatorRole {
    Memory = 0,
    Spectator = 1,
    Idle = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectatorMemoryState {
    PlusX = 0,
    PlusY = 1,
    Zero = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectatorProtocolKind {
    /// `k` is ignored.
    None = 0,
    MeasurementBased = 1,
    GateBased = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectatorReadoutPolicy {
    Perpendicular = 0,
    Argmax = 1,
}

/// Sequence, readout and protocol settings for a simulator.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectatorSimOptions {
    pub omega_l_khz: f64,
    pub t_e_us: f64,
    pub t_i_us: f64,
    pub tau_d_ns: f64,
    pub alpha_re: f64,
    pub alpha_im: f64,
    pub echo_at_half: bool,
    pub seed: u64,
    /// Readout confusion `f_tr = P(report r | true t)`, outcome 0 = bright.
    pub f00: f64,
    pub f01: f64,
    pub f10: f64,
    pub f11: f64,
    pub spinflip_dephases: bool,
    pub feedforward: bool,
    pub gate_echo_idle: bool,
    pub memory_state: SpectatorMemoryState,
    pub policy: SpectatorReadoutPolicy,
    pub grid_points: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SpectatorEnsembleResult {
    pub mean: [f64; 3],
    pub stderr: [f64; 3],
    pub bvl: f64,
    pub stderr_bvl: f64,
    pub fidelity: f64,
    pub n_traj: usize,
    pub forced: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SpectatorPhaseStats {
    pub sharpness: f64,
    pub holevo_variance: f64,
    /// NaN when the distribution is too flat for a mean.
    pub circular_mean: f64,
}

pub struct SpectatorRegister {
    nuclei: Vec<NuclearSpinSpec>,
}

pub struct SpectatorSimulator {
    register: Register,
    cfg: SequenceConfig,
    opts: ProtocolOptions,
}

pub struct SpectatorPhaseGrid {
    grid: PhaseGrid,
}

pub struct SpectatorCurve {
    curve: FidelityCurve,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> SpectatorStatus {
    match e {
        Error::InvalidParameter(_) => SpectatorStatus::InvalidParameter,
        Error::Config { .. } => SpectatorStatus::Config,
        Error::ImpossibleOutcome { .. } => SpectatorStatus::ImpossibleOutcome,
        Error::CorruptedState(_) => SpectatorStatus::CorruptedState,
        Error::Coverage(_) => SpectatorStatus::Coverage,
        Error::FitFailure(_) => SpectatorStatus::FitFailure,
        Error::ResourceLimit(_) => SpectatorStatus::ResourceLimit,
        Error::Io(_) => SpectatorStatus::Io,
    }
}

struct Fail(SpectatorStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(SpectatorStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SpectatorStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SpectatorStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            SpectatorStatus::Panic
        }
    }
}

unsafe fn get<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn get_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut T, value: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Copies the calling thread's last error message into `buf` (NUL
/// terminated, truncated to `len`). Returns the full message length.
#[no_mangle]
pub unsafe extern "C" fn spectator_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Static NUL-terminated version string.
#[no_mangle]
pub extern "C" fn spectator_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// analytic ---------------------------------------------------------------

#[no_mangle]
pub unsafe extern "C" fn spectator_fidelity_one_spectator(g: f64, sigma: f64, out: *mut f64) -> SpectatorStatus {
    guard(|| {
        if !g.is_finite() || !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Fail(
                SpectatorStatus::InvalidParameter,
                format!("need finite g and sigma >= 0, got {g}, {sigma}"),
            ));
        }
        put(out, analytic::fidelity_closed_form(g, sigma), "out")
    })
}

/// Gate wait maximizing the memory BVL after `n_rea` attempts, in µs.
#[no_mangle]
pub unsafe extern "C" fn spectator_optimal_rephasing_time_us(
    a_par_te: f64,
    g: f64,
    n_rea: u64,
    a_par_mem_khz: f64,
    out: *mut f64,
) -> SpectatorStatus {
    guard(|| {
        let model = DephasingModel::new(a_par_te, g)?;
        put(out, analytic::optimal_rephasing_time(&model, n_rea, a_par_mem_khz)? * 1e6, "out")
    })
}

// registers --------------------------------------------------------------

#[no_mangle]
pub unsafe extern "C" fn spectator_register_new(out: *mut *mut SpectatorRegister) -> SpectatorStatus {
    guard(|| put(out, Box::into_raw(Box::new(SpectatorRegister { nuclei: Vec::new() })), "out"))
}

/// C0 memory with C1 and C2 spectators.
#[no_mangle]
pub unsafe extern "C" fn spectator_register_fixture(out: *mut *mut SpectatorRegister) -> SpectatorStatus {
    guard(|| {
        let nuclei = Register::fixture().nuclei().to_vec();
        put(out, Box::into_raw(Box::new(SpectatorRegister { nuclei })), "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn spectator_register_add(
    reg: *mut SpectatorRegister,
    label: *const c_char,
    a_par_khz: f64,
    a_perp_khz: f64,
    role: SpectatorRole,
) -> SpectatorStatus {
    guard(|| {
        let reg = get_mut(reg, "register")?;
        if label.is_null() {
            return Err(null("label"));
        }
        let label = CStr::from_ptr(label)
            .to_str()
            .map_err(|_| Fail(SpectatorStatus::InvalidUtf8, "label is not UTF-8".into()))?;
        let role = match role {
            SpectatorRole::Memory => Role::Memory,
            SpectatorRole::Spectator => Role::Spectator,
            SpectatorRole::Idle => Role::Idle,
        };
        reg.nuclei.push(NuclearSpinSpec::new(label, a_par_khz, a_perp_khz, role));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn spectator_register_len(reg: *const SpectatorRegister) -> usize {
    reg.as_ref().map_or(0, |r| r.nuclei.len())
}

#[no_mangle]
pub unsafe extern "C" fn spectator_register_free(reg: *mut SpectatorRegister) {
    free(reg)
}

// simulation -------------------------------------------------------------

/// Library defaults, including the calibrated echo time.
#[no_mangle]
pub unsafe extern "C" fn spectator_sim_options_default(out: *mut SpectatorSimOptions) -> SpectatorStatus {
    guard(|| {
        let c = SequenceConfig::default();
        let r = ReadoutModel::default();
        let p = ProtocolOptions::default();
        put(
            out,
            SpectatorSimOptions {
                omega_l_khz: c.omega_l_khz,
                t_e_us: c.t_e_us,
                t_i_us: c.t_i_us,
                tau_d_ns: c.tau_d_ns,
                alpha_re: c.alpha.re,
                alpha_im: c.alpha.im,
                echo_at_half: c.echo_at_half,
                seed: c.seed,
                f00: r.f00,
                f01: r.f01,
                f10: r.f10,
                f11: r.f11,
                spinflip_dephases: r.spinflip_dephases,
                feedforward: p.feedforward,
                gate_echo_idle: p.gate_echo_idle,
                memory_state: SpectatorMemoryState::PlusX,
                policy: SpectatorReadoutPolicy::Perpendicular,
                grid_points: p.grid_points,
            },
            "out",
        )
    })
}

fn policy(p: SpectatorReadoutPolicy) -> ReadoutPolicy {
    match p {
        SpectatorReadoutPolicy::Perpendicular => ReadoutPolicy::Perpendicular,
        SpectatorReadoutPolicy::Argmax => ReadoutPolicy::Argmax,
    }
}

/// Validates the register and options; the register handle stays owned by
/// the caller.
#[no_mangle]
pub unsafe extern "C" fn spectator_simulator_new(
    reg: *const SpectatorRegister,
    opts: *const SpectatorSimOptions,
    out: *mut *mut SpectatorSimulator,
) -> SpectatorStatus {
    guard(|| {
        let reg = get(reg, "register")?;
        let o = *get(opts, "options")?;
        let register = Register::new(reg.nuclei.clone())?;
        let cfg = SequenceConfig {
            omega_l_khz: o.omega_l_khz,
            t_e_us: o.t_e_us,
            t_i_us: o.t_i_us,
            tau_d_ns: o.tau_d_ns,
            alpha: num_complex::Complex64::new(o.alpha_re, o.alpha_im),
            echo_at_half: o.echo_at_half,
            seed: o.seed,
        };
        cfg.validate()?;
        let readout =
            ReadoutModel { f00: o.f00, f01: o.f01, f10: o.f10, f11: o.f11, spinflip_dephases: o.spinflip_dephases };
        readout.validate()?;
        let opts = ProtocolOptions {
            readout,
            policy: policy(o.policy),
            feedforward: o.feedforward,
            gate_echo_idle: o.gate_echo_idle,
            memory_state: match o.memory_state {
                SpectatorMemoryState::PlusX => InitialState::PlusX,
                SpectatorMemoryState::PlusY => InitialState::PlusY,
                SpectatorMemoryState::Zero => InitialState::Zero,
            },
            grid_points: o.grid_points,
            ..ProtocolOptions::default()
        };
        put(out, Box::into_raw(Box::new(SpectatorSimulator { register, cfg, opts })), "out")
    })
}

/// Seeded ensemble of `n_traj` trajectories after `n_rea` attempts.
#[no_mangle]
pub unsafe extern "C" fn spectator_ensemble_run(
    sim: *const SpectatorSimulator,
    n_rea: u64,
    kind: SpectatorProtocolKind,
    k: usize,
    n_traj: usize,
    out: *mut SpectatorEnsembleResult,
) -> SpectatorStatus {
    guard(|| {
        let sim = get(sim, "simulator")?;
        let protocol = match kind {
            SpectatorProtocolKind::None => Protocol::None,
            SpectatorProtocolKind::MeasurementBased => Protocol::MeasurementBased(k),
            SpectatorProtocolKind::GateBased => Protocol::GateBased(k),
        };
        let e = ensemble_run(&sim.register, &sim.cfg, &sim.opts, n_rea, protocol, n_traj)?;
        put(
            out,
            SpectatorEnsembleResult {
                mean: e.mean,
                stderr: e.stderr,
                bvl: e.bvl,
                stderr_bvl: e.stderr_bvl,
                fidelity: e.fidelity,
                n_traj: e.n_traj,
                forced: e.forced,
            },
            "out",
        )
    })
}

#[no_mangle]
pub unsafe extern "C" fn spectator_simulator_free(sim: *mut SpectatorSimulator) {
    free(sim)
}

// phase distributions ----------------------------------------------------

#[no_mangle]
pub unsafe extern "C" fn spectator_phase_gaussian(
    sigma: f64,
    mean: f64,
    n_points: usize,
    out: *mut *mut SpectatorPhaseGrid,
) -> SpectatorStatus {
    guard(|| {
        let grid = phase_dist::gaussian_prior(sigma, mean, n_points)?;
        put(out, Box::into_raw(Box::new(SpectatorPhaseGrid { grid })), "out")
    })
}

/// Posterior after reading a spectator of relative coupling `g` at basis
/// angle `theta` with result `outcome` (0 or 1). `out_probability` may be
/// null.
#[no_mangle]
pub unsafe extern "C" fn spectator_phase_update(
    prior: *const SpectatorPhaseGrid,
    g: f64,
    theta: f64,
    outcome: u8,
    out: *mut *mut SpectatorPhaseGrid,
    out_probability: *mut f64,
) -> SpectatorStatus {
    guard(|| {
        let prior = get(prior, "prior")?;
        let m = SpectatorMeasurement::new(g, theta, outcome)?;
        let post = phase_dist::bayes_update(&prior.grid, &m)?;
        if !out_probability.is_null() {
            out_probability.write(post.outcome_probability);
        }
        put(out, Box::into_raw(Box::new(SpectatorPhaseGrid { grid: post.grid })), "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn spectator_phase_stats(
    grid: *const SpectatorPhaseGrid,
    out: *mut SpectatorPhaseStats,
) -> SpectatorStatus {
    guard(|| {
        let s = phase_dist::phase_stats(&get(grid, "grid")?.grid);
        put(
            out,
            SpectatorPhaseStats {
                sharpness: s.sharpness,
                holevo_variance: s.holevo_variance,
                circular_mean: s.circular_mean.unwrap_or(f64::NAN),
            },
            "out",
        )
    })
}

/// Readout angle chosen by `policy` for a spectator of coupling `g`.
#[no_mangle]
pub unsafe extern "C" fn spectator_phase_readout_angle(
    grid: *const SpectatorPhaseGrid,
    g: f64,
    policy_kind: SpectatorReadoutPolicy,
    out: *mut f64,
) -> SpectatorStatus {
    guard(|| put(out, policy(policy_kind).angle(&get(grid, "grid")?.grid, g), "out"))
}

/// Syndrome-averaged `(mean σ, F_avg)` over `m` sequential spectators.
#[no_mangle]
pub unsafe extern "C" fn spectator_syndrome_average(
    prior: *const SpectatorPhaseGrid,
    g_list: *const f64,
    m: usize,
    policy_kind: SpectatorReadoutPolicy,
    out_mean_sigma: *mut f64,
    out_f_avg: *mut f64,
) -> SpectatorStatus {
    guard(|| {
        let prior = get(prior, "prior")?;
        let gs: &[f64] = if m == 0 {
            &[]
        } else if g_list.is_null() {
            return Err(null("g_list"));
        } else {
            std::slice::from_raw_parts(g_list, m)
        };
        if out_mean_sigma.is_null() || out_f_avg.is_null() {
            return Err(null("output"));
        }
        let a = phase_dist::syndrome_average(&prior.grid, gs, policy(policy_kind))?;
        out_mean_sigma.write(a.mean_sigma);
        out_f_avg.write(a.f_avg);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn spectator_phase_free(grid: *mut SpectatorPhaseGrid) {
    free(grid)
}

// strategy ---------------------------------------------------------------

/// Curve through `len` points; `stderr` may be null.
#[no_mangle]
pub unsafe extern "C" fn spectator_curve_new(
    n_rea: *const u64,
    fidelity: *const f64,
    stderr: *const f64,
    len: usize,
    out: *mut *mut SpectatorCurve,
) -> SpectatorStatus {
    guard(|| {
        if n_rea.is_null() || fidelity.is_null() {
            return Err(null("curve data"));
        }
        let ns = std::slice::from_raw_parts(n_rea, len);
        let fs = std::slice::from_raw_parts(fidelity, len);
        let points = (0..len)
            .map(|i| CurvePoint {
                n_rea: ns[i],
                fidelity: fs[i],
                stderr: if stderr.is_null() { 0.0 } else { *stderr.add(i) },
            })
            .collect();
        let curve = FidelityCurve::new(points, CurveSource::External)?;
        put(out, Box::into_raw(Box::new(SpectatorCurve { curve })), "out")
    })
}

/// Built-in fitted gate-based curve for `k` ∈ {0, 1, 2}.
#[no_mangle]
pub unsafe extern "C" fn spectator_curve_reference(k: usize, out: *mut *mut SpectatorCurve) -> SpectatorStatus {
    guard(|| {
        let curve = strategy::reference_gate_curves()
            .remove(&k)
            .ok_or_else(|| Fail(SpectatorStatus::InvalidParameter, format!("no reference curve for K = {k}")))?;
        put(out, Box::into_raw(Box::new(SpectatorCurve { curve })), "out")
    })
}

/// Success-probability-weighted fidelity `F̄(p)`.
#[no_mangle]
pub unsafe extern "C" fn spectator_expected_fidelity(
    curve: *const SpectatorCurve,
    p: f64,
    tail_eps: f64,
    out: *mut f64,
) -> SpectatorStatus {
    guard(|| put(out, strategy::expected_fidelity(&get(curve, "curve")?.curve, p, tail_eps)?, "out"))
}

#[no_mangle]
pub unsafe extern "C" fn spectator_curve_free(curve: *mut SpectatorCurve) {
    free(curve)
}
