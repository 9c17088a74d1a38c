//! Entanglement attempts, spectator operations and protocol execution.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use num_complex::Complex64;
use rand::Rng;

use super::spin::{self, Mat2};
use super::state::{DensityState, InitialState};
use super::{Protocol, ProtocolOptions, ProtocolOutcome, ReadoutModel, Register, Role, SequenceConfig};
use crate::error::{invalid, Result};
use crate::optimize::golden_section_max;
use crate::phase_dist::{
    bayes_update, bloch_vector_length, gate_posterior_about, gaussian_prior, wrap_angle, FlipBranch, PhaseGrid,
    SpectatorMeasurement,
};

const SYMMETRIZE_EVERY: u64 = 100;
const FORCED_OUTCOME_MASS: f64 = 1e-15;
const GATE_SCAN_POINTS: usize = 256;

/// Per-attempt propagators, built once per configuration.
#[derive(Debug, Clone)]
struct AttemptKernel {
    p0: f64,
    p1: f64,
    t_e: f64,
    t_i: f64,
    tau_d: f64,
    omega: f64,
    nuclei: Vec<(f64, f64)>,
    /// `U0(t_e + t_i)`, identical for every nucleus.
    u0_full: Mat2,
    frame_step: Vec<Mat2>,
    diagonal: bool,
    diag_a: Vec<Complex64>,
}

fn diag_product(ms: impl Iterator<Item = Mat2>) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(1.0, 0.0)];
    for m in ms {
        out = out.iter().flat_map(|x| [x * m.0[0][0], x * m.0[1][1]]).collect();
    }
    out
}

impl AttemptKernel {
    fn new(register: &Register, cfg: &SequenceConfig) -> Self {
        let omega = cfg.omega_l_khz;
        let t = cfg.t_e_us + cfg.t_i_us;
        let u0_full = Mat2::precession(omega, 0.0, t);
        let frame_step =
            register.nuclei().iter().map(|s| Mat2::precession(spin::frame_frequency_khz(s, omega), 0.0, t)).collect();
        let diagonal = register.nuclei().iter().all(|s| s.a_perp_khz == 0.0);
        let n = register.len();
        Self {
            p0: cfg.p0(),
            p1: cfg.p1(),
            t_e: cfg.t_e_us,
            t_i: cfg.t_i_us,
            tau_d: cfg.tau_d_us(),
            omega,
            nuclei: register.nuclei().iter().map(|s| (s.a_par_khz, s.a_perp_khz)).collect(),
            u0_full,
            frame_step,
            diagonal,
            diag_a: diag_product(std::iter::repeat_n(u0_full, n)),
        }
    }

    /// `τ = min(Exp(τ_d), t_i)` by inverse transform, so `u = 0` gives 0.
    fn sample_tau<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.gen();
        (-self.tau_d * (1.0 - u).ln()).min(self.t_i)
    }

    fn flipped(&self, q: usize, tau: f64) -> Mat2 {
        let (a_par, a_perp) = self.nuclei[q];
        Mat2::precession(self.omega, 0.0, self.t_i - tau) * Mat2::precession(self.omega - a_par, a_perp, self.t_e + tau)
    }

    fn apply(&self, st: &mut DensityState, tau: f64) {
        let n = st.n_nuclei();
        if self.diagonal {
            let db = diag_product((0..n).map(|q| self.flipped(q, tau)));
            let d = st.dim();
            let rho = st.rho_mut();
            for r in 0..d {
                let (ar, br) = (self.diag_a[r] * self.p0, db[r] * self.p1);
                for c in 0..d {
                    rho[r * d + c] *= ar * self.diag_a[c].conj() + br * db[c].conj();
                }
            }
        } else if self.p1 == 0.0 {
            (0..n).for_each(|q| st.apply_1q(q, &self.u0_full));
        } else {
            let mut other = st.clone();
            for q in 0..n {
                other.apply_1q(q, &self.flipped(q, tau));
            }
            if self.p0 > 0.0 {
                (0..n).for_each(|q| st.apply_1q(q, &self.u0_full));
                st.mix(self.p0, &other, self.p1);
            } else {
                *st = other;
            }
        }
        for q in 0..n {
            st.advance_frame(q, &self.frame_step[q]);
        }
    }
}

/// One entanglement attempt: α-weighted electron pulse, conditional
/// evolution for `t_e + τ`, electron reset, then `t_i − τ` under `U0`.
pub fn entanglement_attempt<R: Rng + ?Sized>(
    state: &mut DensityState,
    register: &Register,
    cfg: &SequenceConfig,
    rng: &mut R,
) -> Result<()> {
    let k = AttemptKernel::new(register, cfg);
    let tau = k.sample_tau(rng);
    k.apply(state, tau);
    let tr = state.trace();
    if (tr - 1.0).abs() > super::state::TRACE_TOL {
        return Err(crate::Error::CorruptedState(format!("trace {tr} after attempt")));
    }
    Ok(())
}

/// Reads out nucleus `k` in its frame Y basis (bright = `+Y` = outcome 0)
/// through the confusion model. Returns the reported outcome and whether it
/// was forced by a vanishing probability.
pub fn measure_spectator<R: Rng + ?Sized>(
    state: &mut DensityState,
    k: usize,
    model: &ReadoutModel,
    rng: &mut R,
) -> Result<(u8, bool)> {
    let v = state.frame(k);
    let branch = |plus: bool| {
        let mut b = state.clone();
        b.apply_1q(k, &(v * Mat2::y_projector(plus) * v.adjoint()));
        b
    };
    let ideal = [branch(true), branch(false)];
    let p = [ideal[0].trace(), ideal[1].trace()];
    let q = |r: u8| model.prob(0, r) * p[0] + model.prob(1, r) * p[1];
    let u: f64 = rng.gen();
    let mut r = if u < q(0) { 0 } else { 1 };
    let mut forced = false;
    if q(r) < FORCED_OUTCOME_MASS {
        r = 1 - r;
        forced = true;
    }
    let mut post = ideal[0].clone();
    post.scale(0.0);
    for (truth, b) in ideal.iter().enumerate() {
        let w = model.prob(truth as u8, r);
        if w == 0.0 {
            continue;
        }
        if model.spinflip_dephases && truth as u8 != r {
            let mut d = b.clone();
            d.dephase_all();
            post.mix(1.0, &d, w);
        } else {
            post.mix(1.0, b, w);
        }
    }
    let tr = post.trace();
    if !(tr > 0.0) {
        return Err(crate::Error::ImpossibleOutcome { mass: tr });
    }
    post.scale(1.0 / tr);
    *state = post;
    Ok((r, forced))
}

/// Spectator-controlled electron flip followed by an electron-conditioned
/// wait of `delta_t_us`, electron reset included.
///
/// The electron flips on spectator `k`'s `−Y` state for
/// [`FlipBranch::Minus`] and on `+Y` for [`FlipBranch::Plus`]. Nuclei in
/// `echo` get an in-frame π pulse about X at `δt/2`. Frames follow the
/// electron-`|0⟩` evolution, so only the flipped branch picks up phase.
pub fn gate_based_step(
    state: &mut DensityState,
    register: &Register,
    omega_l_khz: f64,
    k: usize,
    delta_t_us: f64,
    branch: FlipBranch,
    echo: &[usize],
) -> Result<()> {
    if !(delta_t_us >= 0.0) || !delta_t_us.is_finite() {
        return Err(invalid(format!("gate wait must be nonnegative, got {delta_t_us}")));
    }
    let n = state.n_nuclei();
    let v = state.frame(k);
    let stay_plus = branch == FlipBranch::Minus;
    let mut stay = state.clone();
    stay.apply_1q(k, &(v * Mat2::y_projector(stay_plus) * v.adjoint()));
    let mut flip = state.clone();
    flip.apply_1q(k, &(v * Mat2::y_projector(!stay_plus) * v.adjoint()));

    let nuclei = register.nuclei();
    let u0 = |t: f64| Mat2::precession(omega_l_khz, 0.0, t);
    let u1 = |q: usize, t: f64| {
        let s = &nuclei[q];
        Mat2::precession(omega_l_khz - s.a_par_khz, s.a_perp_khz, t)
    };
    let half = 0.5 * delta_t_us;
    for q in 0..n {
        if echo.contains(&q) {
            // frame at the midpoint fixes the lab form of the echo pulse
            let mid = u0(half) * state.frame(q);
            let pulse = mid * Mat2::rx(PI) * mid.adjoint();
            stay.apply_1q(q, &(u0(half) * pulse * u0(half)));
            flip.apply_1q(q, &(u1(q, half) * pulse * u1(q, half)));
            let frame = u0(half) * pulse * mid;
            stay.frames[q] = frame;
        } else {
            stay.apply_1q(q, &u0(delta_t_us));
            flip.apply_1q(q, &u1(q, delta_t_us));
            stay.advance_frame(q, &u0(delta_t_us));
        }
    }
    stay.mix(1.0, &flip, 1.0);
    *state = stay;
    Ok(())
}

/// Memory Bloch vector in its rotating frame: `(x, y, z, bvl, fidelity)`
/// with fidelity `½ + ½ bvl`.
pub fn bloch_of_memory(state: &DensityState) -> (f64, f64, f64, f64, f64) {
    let [x, y, z] = state.bloch(state.memory_index());
    let bvl = (x * x + y * y + z * z).sqrt();
    (x, y, z, bvl, 0.5 + 0.5 * bvl)
}

#[derive(Debug, Clone)]
struct MeasureNode {
    q: usize,
    theta_model: f64,
    memory_corr: [f64; 2],
    spectator_corr: [Vec<(usize, f64)>; 2],
}

#[derive(Debug, Clone)]
struct GateStep {
    q: usize,
    center: f64,
    branch: FlipBranch,
    delta_t_us: f64,
}

#[derive(Debug, Clone)]
enum PlanKind {
    None,
    /// Decision tree; node for depth `d` and outcome prefix `p` sits at
    /// `2^d − 1 + p`.
    Measure(Vec<MeasureNode>),
    Gate {
        steps: Vec<GateStep>,
        echo: Vec<usize>,
        final_mean: f64,
    },
}

/// Precomputed real-time decisions for one `(n_rea, protocol)`; they depend
/// only on the configuration, so all trajectories share them.
#[derive(Debug, Clone)]
pub struct Plan {
    pub protocol: Protocol,
    pub n_rea: u64,
    /// Predicted memory phase mean and spread.
    pub mean: f64,
    pub sigma: f64,
    kind: PlanKind,
}

impl Plan {
    /// Gate waits chosen for each used spectator, in µs.
    pub fn gate_delays_us(&self) -> Vec<f64> {
        match &self.kind {
            PlanKind::Gate { steps, .. } => steps.iter().map(|s| s.delta_t_us).collect(),
            _ => Vec::new(),
        }
    }

    /// Model readout angle of the first spectator.
    pub fn first_readout_angle(&self) -> Option<f64> {
        match &self.kind {
            PlanKind::Measure(nodes) => nodes.first().map(|n| n.theta_model),
            _ => None,
        }
    }
}

/// Simulator bound to one register, sequence and protocol configuration.
#[derive(Debug, Clone)]
pub struct Simulator {
    register: Register,
    cfg: SequenceConfig,
    opts: ProtocolOptions,
    kernel: AttemptKernel,
    couplings: Vec<f64>,
}

fn circular_mean(grid: &PhaseGrid) -> f64 {
    grid.stats().circular_mean.unwrap_or(0.0)
}

fn scaled_arg(grid: &PhaseGrid, g: f64) -> f64 {
    let m = grid.scaled_moment(g);
    if m.norm() < 1e-12 {
        0.0
    } else {
        m.arg()
    }
}

impl Simulator {
    pub fn new(register: &Register, cfg: &SequenceConfig, opts: &ProtocolOptions) -> Result<Self> {
        cfg.validate()?;
        opts.readout.validate()?;
        let couplings = register.nuclei().iter().map(|s| spin::effective_coupling_khz(s, cfg.omega_l_khz)).collect();
        Ok(Self {
            register: register.clone(),
            cfg: *cfg,
            opts: opts.clone(),
            kernel: AttemptKernel::new(register, cfg),
            couplings,
        })
    }

    pub fn register(&self) -> &Register {
        &self.register
    }

    pub fn config(&self) -> &SequenceConfig {
        &self.cfg
    }

    pub fn options(&self) -> &ProtocolOptions {
        &self.opts
    }

    fn memory(&self) -> usize {
        self.register.memory_index()
    }

    /// Ratio of conditional frequency differences, spin `q` over memory.
    pub fn g(&self, q: usize) -> f64 {
        self.couplings[q] / self.couplings[self.memory()]
    }

    /// Predicted memory phase mean and standard deviation after `n_rea`
    /// attempts, echo included. The mean is unwrapped; spectator phases are
    /// `g·mean`.
    pub fn model_moments(&self, n_rea: u64) -> (f64, f64) {
        let (m1, v1) = self.cfg.attempt_phase_moments(self.couplings[self.memory()]);
        let n = n_rea as f64;
        let mean = if self.cfg.echo_at_half {
            let h = (n_rea / 2) as f64;
            m1 * (h - (n - h))
        } else {
            m1 * n
        };
        (mean, (n * v1).sqrt())
    }

    fn prior_grid(&self, sigma: f64) -> Result<PhaseGrid> {
        if sigma < 1e-9 {
            PhaseGrid::delta(0.0, self.opts.grid_points)
        } else {
            gaussian_prior(sigma, 0.0, self.opts.grid_points)
        }
    }

    pub fn initial_state(&self) -> DensityState {
        let states: Vec<Mat2> = self
            .register
            .nuclei()
            .iter()
            .map(|s| match s.role {
                Role::Memory => self.opts.memory_state.density(),
                Role::Spectator => InitialState::PlusX.density(),
                Role::Idle => InitialState::Zero.density(),
            })
            .collect();
        DensityState::product(&states, self.memory()).expect("register has a memory")
    }

    /// Runs `n_rea` attempts with the optional echo after attempt
    /// `⌊n_rea/2⌋`.
    pub fn prepare<R: Rng + ?Sized>(&self, n_rea: u64, rng: &mut R) -> Result<DensityState> {
        let mut st = self.initial_state();
        for i in 0..n_rea {
            if self.cfg.echo_at_half && i == n_rea / 2 {
                self.echo(&mut st);
            }
            let tau = self.kernel.sample_tau(rng);
            self.kernel.apply(&mut st, tau);
            if (i + 1) % SYMMETRIZE_EVERY == 0 {
                st.symmetrize();
            }
        }
        if self.opts.audit {
            st.check()?;
        }
        Ok(st)
    }

    fn echo(&self, st: &mut DensityState) {
        for q in 0..st.n_nuclei() {
            st.pulse_tracked(q, &Mat2::rx(PI));
        }
    }

    pub fn plan(&self, n_rea: u64, protocol: Protocol) -> Result<Plan> {
        let spectators = self.register.spectators();
        let k = protocol.k();
        if k > spectators.len() {
            return Err(invalid(format!("K = {k} exceeds the {} spectators", spectators.len())));
        }
        let (mean, sigma) = self.model_moments(n_rea);
        let kind = match protocol {
            Protocol::None => PlanKind::None,
            Protocol::MeasurementBased(_) => {
                let mut nodes = Vec::with_capacity((1 << k) - 1);
                self.measure_tree(&self.prior_grid(sigma)?, &spectators[..k], &mut nodes)?;
                PlanKind::Measure(nodes)
            }
            Protocol::GateBased(_) => self.gate_plan(n_rea, &self.prior_grid(sigma)?, &spectators, k)?,
        };
        Ok(Plan { protocol, n_rea, mean, sigma, kind })
    }

    /// Fills the tree breadth-first so node indices follow `2^d − 1 + p`.
    fn measure_tree(&self, prior: &PhaseGrid, used: &[usize], nodes: &mut Vec<MeasureNode>) -> Result<()> {
        let mut level = vec![prior.clone()];
        for (d, &q) in used.iter().enumerate() {
            let g = self.g(q);
            let mut next = Vec::with_capacity(level.len() * 2);
            for grid in &level {
                let theta = self.opts.policy.angle(grid, g);
                let mut memory_corr = [0.0; 2];
                let mut spectator_corr = [Vec::new(), Vec::new()];
                let mut posts = Vec::with_capacity(2);
                for r in 0..2u8 {
                    let m = SpectatorMeasurement::new(g, theta, r)?;
                    let post = bayes_update(grid, &m).map(|p| p.grid).unwrap_or_else(|_| grid.clone());
                    memory_corr[r as usize] = -wrap_angle(circular_mean(&post) - circular_mean(grid));
                    spectator_corr[r as usize] = used[d + 1..]
                        .iter()
                        .map(|&j| {
                            let gj = self.g(j);
                            (j, -wrap_angle(scaled_arg(&post, gj) - scaled_arg(grid, gj)))
                        })
                        .collect();
                    posts.push(post);
                }
                nodes.push(MeasureNode { q, theta_model: theta, memory_corr, spectator_corr });
                next.extend(posts);
            }
            level = next;
        }
        Ok(())
    }

    fn gate_plan(&self, n_rea: u64, prior: &PhaseGrid, spectators: &[usize], k: usize) -> Result<PlanKind> {
        let m = self.memory();
        // the tracked echo inverts the frame, and with it the in-frame shift
        let parity = if self.cfg.echo_at_half && n_rea > 0 { -1.0 } else { 1.0 };
        let w_mem = parity * TAU * self.couplings[m] * 1e-3;
        let mut grid = prior.clone();
        let mut steps = Vec::with_capacity(k);
        for (i, &q) in spectators[..k].iter().enumerate() {
            let g = self.g(q);
            // flip the side whose phase the shift pulls back toward the center
            let branch = if g * w_mem > 0.0 { FlipBranch::Plus } else { FlipBranch::Minus };
            let center = circular_mean(&grid);
            // flipped-branch memory shift is −2π A δt in an unflipped frame
            let dir = -w_mem.signum();
            let delta_t_us = match &self.opts.gate_delta_t_us {
                Some(list) => *list
                    .get(i)
                    .ok_or_else(|| invalid(format!("gate_delta_t needs {k} entries, got {}", list.len())))?,
                None => {
                    let bvl = |x: f64| {
                        gate_posterior_about(&grid, g, center, dir * x, branch)
                            .map(|p| bloch_vector_length(&p))
                            .unwrap_or(0.0)
                    };
                    first_peak(bvl, TAU) / w_mem.abs()
                }
            };
            grid = gate_posterior_about(&grid, g, center, -w_mem * delta_t_us, branch)?;
            steps.push(GateStep { q, center, branch, delta_t_us });
        }
        let echo = if self.opts.gate_echo_idle {
            (0..self.register.len())
                .filter(|&q| match self.register.nuclei()[q].role {
                    Role::Idle => true,
                    Role::Spectator => !spectators[..k].contains(&q),
                    Role::Memory => false,
                })
                .collect()
        } else {
            Vec::new()
        };
        Ok(PlanKind::Gate { steps, echo, final_mean: circular_mean(&grid) })
    }

    /// Applies a plan to a prepared state.
    pub fn execute<R: Rng + ?Sized>(&self, mut st: DensityState, plan: &Plan, rng: &mut R) -> Result<ProtocolOutcome> {
        let m = self.memory();
        let mut rot = vec![0.0; st.n_nuclei()];
        let mut syndrome = Vec::new();
        let mut corrections = Vec::new();
        let mut forced_any = false;
        let ff = self.opts.feedforward;
        match &plan.kind {
            PlanKind::None => {}
            PlanKind::Measure(nodes) => {
                if ff {
                    rotate(&mut st, &mut rot, m, -plan.mean);
                    corrections.push(-plan.mean);
                }
                let mut idx = 0;
                for d in 0..plan.protocol.k() {
                    let node = &nodes[idx];
                    let q = node.q;
                    let basis = node.theta_model + self.g(q) * plan.mean + rot[q];
                    rotate(&mut st, &mut rot, q, FRAC_PI_2 - basis);
                    let (r, forced) = measure_spectator(&mut st, q, &self.opts.readout, rng)?;
                    forced_any |= forced;
                    syndrome.push(r);
                    if ff {
                        let c = node.memory_corr[r as usize];
                        rotate(&mut st, &mut rot, m, c);
                        corrections.push(c);
                        for &(j, cj) in &node.spectator_corr[r as usize] {
                            rotate(&mut st, &mut rot, j, cj);
                        }
                    }
                    let prefix = idx + 1 - (1 << d);
                    idx = (1 << (d + 1)) - 1 + 2 * prefix + r as usize;
                }
            }
            PlanKind::Gate { steps, echo, final_mean } => {
                for step in steps {
                    let q = step.q;
                    let align = -self.g(q) * (plan.mean + step.center) - rot[q];
                    rotate(&mut st, &mut rot, q, align);
                    gate_based_step(
                        &mut st,
                        &self.register,
                        self.cfg.omega_l_khz,
                        q,
                        step.delta_t_us,
                        step.branch,
                        echo,
                    )?;
                }
                if ff {
                    let c = -(plan.mean + final_mean);
                    rotate(&mut st, &mut rot, m, c);
                    corrections.push(c);
                }
            }
        }
        if self.opts.audit {
            st.check()?;
        }
        let (x, y, z, bvl, fidelity) = bloch_of_memory(&st);
        Ok(ProtocolOutcome {
            syndrome,
            bloch: [x, y, z],
            bvl,
            fidelity,
            applied_corrections: corrections,
            forced: forced_any,
        })
    }
}

fn rotate(st: &mut DensityState, rot: &mut [f64], q: usize, a: f64) {
    st.rotate_in_frame(q, &Mat2::rz(a));
    rot[q] += a;
}

/// First local maximum of `f` on `[0, span]`: coarse scan, then golden
/// refinement inside the bracketing samples.
fn first_peak(f: impl Fn(f64) -> f64, span: f64) -> f64 {
    let xs: Vec<f64> = (0..GATE_SCAN_POINTS).map(|i| span * i as f64 / (GATE_SCAN_POINTS - 1) as f64).collect();
    let vals: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
    let i = (0..GATE_SCAN_POINTS - 1).find(|&i| vals[i] > vals[i + 1]).unwrap_or(GATE_SCAN_POINTS - 1);
    if i == 0 {
        return 0.0;
    }
    let hi = xs[(i + 1).min(GATE_SCAN_POINTS - 1)];
    golden_section_max(&f, xs[i - 1], hi, 1e-9).0
}

/// Single trajectory: prepare `n_rea` attempts and run `protocol`.
pub fn run_sequence<R: Rng + ?Sized>(
    register: &Register,
    cfg: &SequenceConfig,
    n_rea: u64,
    protocol: Protocol,
    opts: &ProtocolOptions,
    rng: &mut R,
) -> Result<ProtocolOutcome> {
    let sim = Simulator::new(register, cfg, opts)?;
    let plan = sim.plan(n_rea, protocol)?;
    let st = sim.prepare(n_rea, rng)?;
    sim.execute(st, &plan, rng)
}
