//! Subcommand implementations. Each returns the staged output set; the
//! caller commits it only on success.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;
use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex64;

use super::config::Config;
use super::output::OutputSet;
use crate::analytic::{
    fit_fidelity_xy, fit_fidelity_z, mean_phase_after_outcome, optimal_rephasing_time, sigma_of_n, DataPoint,
    DephasingModel, GMode, XyFitOptions, XyModel, ZFitOptions, ZModel,
};
use crate::dm_sim::{
    self, ensemble_sweep, spin, InitialState, NuclearSpinSpec, Protocol, ProtocolOptions, ReadoutModel, Register, Role,
    SequenceConfig, DEFAULT_MAX_NUCLEI,
};
use crate::error::{Error, Result};
use crate::optimize::golden_section_max;
use crate::phase_dist::{
    bayes_update, gaussian_prior, syndrome_average, ReadoutPolicy, SpectatorMeasurement, DEFAULT_POINTS,
};
use crate::strategy::{
    linear_p_grid, log_p_grid, reference_gate_curves, strategy_sweep, CurveModel, FidelityCurve, DEFAULT_TAIL_EPS,
};

fn cfg_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Config { line, msg: msg.into() }
}

const SEQUENCE_KEYS: [&str; 8] = [
    "sequence.omega_l_khz",
    "sequence.t_e_us",
    "sequence.a_par_te",
    "sequence.t_i_us",
    "sequence.tau_d_ns",
    "sequence.alpha",
    "sequence.echo_at_half",
    "sequence.max_nuclei",
];
const READOUT_KEYS: [&str; 4] = ["readout.f_bright", "readout.f_dark", "readout.spinflip_dephases", "readout.ideal"];
const PROTOCOL_KEYS: [&str; 6] = [
    "protocol.policy",
    "protocol.feedforward",
    "protocol.gate_delta_t_us",
    "protocol.gate_echo_idle",
    "protocol.grid_points",
    "protocol.audit",
];

fn known(groups: &[&[&'static str]]) -> Vec<&'static str> {
    groups.iter().flat_map(|g| g.iter().copied()).collect()
}

pub fn register_from(cfg: &Config) -> Result<Register> {
    let lines = cfg.register_lines();
    if lines.is_empty() {
        return Ok(Register::fixture());
    }
    let mut nuclei = Vec::with_capacity(lines.len());
    for (label, e) in lines {
        let parts: Vec<&str> = e.value.split_whitespace().collect();
        let [role, a_par, a_perp] = parts[..] else {
            return Err(cfg_err(e.line, format!("nucleus `{label}` expects `role A_par_kHz A_perp_kHz`")));
        };
        let role = match role {
            "memory" => Role::Memory,
            "spectator" => Role::Spectator,
            "idle" => Role::Idle,
            other => return Err(cfg_err(e.line, format!("unknown role `{other}` (memory, spectator, idle)"))),
        };
        let num = |s: &str| s.parse::<f64>().ok().filter(|v| v.is_finite());
        let (Some(a_par), Some(a_perp)) = (num(a_par), num(a_perp)) else {
            return Err(cfg_err(e.line, format!("nucleus `{label}` has non-numeric couplings")));
        };
        nuclei.push(NuclearSpinSpec::new(label.clone(), a_par, a_perp, role));
    }
    let cap = cfg.u64_or("sequence.max_nuclei", DEFAULT_MAX_NUCLEI as u64)? as usize;
    Register::with_capacity(nuclei, cap).map_err(|e| match e {
        Error::InvalidParameter(m) => cfg_err(lines[0].1.line, m),
        other => other,
    })
}

pub fn sequence_from(cfg: &Config, register: &Register, seed: u64) -> Result<SequenceConfig> {
    let d = SequenceConfig::default();
    let alpha = match cfg.f64_list("sequence.alpha")? {
        None => d.alpha,
        Some(v) if v.len() == 1 => Complex64::new(v[0], 0.0),
        Some(v) if v.len() == 2 => Complex64::new(v[0], v[1]),
        Some(_) => return Err(cfg_err(cfg.line_of("sequence.alpha"), "alpha expects `re` or `re im`")),
    };
    let mut s = SequenceConfig {
        omega_l_khz: cfg.f64_or("sequence.omega_l_khz", d.omega_l_khz)?,
        t_e_us: d.t_e_us,
        t_i_us: cfg.f64_or("sequence.t_i_us", d.t_i_us)?,
        tau_d_ns: cfg.f64_or("sequence.tau_d_ns", d.tau_d_ns)?,
        alpha,
        echo_at_half: cfg.bool_or("sequence.echo_at_half", d.echo_at_half)?,
        seed,
    };
    match (cfg.f64("sequence.t_e_us")?, cfg.f64("sequence.a_par_te")?) {
        (Some(_), Some(_)) => {
            return Err(cfg_err(cfg.line_of("sequence.a_par_te"), "give either t_e_us or a_par_te, not both"));
        }
        (Some(t), None) => s.t_e_us = t,
        (None, Some(a)) => {
            let mem = &register.nuclei()[register.memory_index()];
            let coupling = spin::effective_coupling_khz(mem, s.omega_l_khz);
            s.t_e_us = s
                .t_e_for_dephasing(a, coupling)
                .map_err(|e| cfg_err(cfg.line_of("sequence.a_par_te"), e.to_string()))?;
        }
        (None, None) => {}
    }
    s.validate().map_err(|e| cfg_err(0, e.to_string()))?;
    Ok(s)
}

pub fn readout_from(cfg: &Config) -> Result<ReadoutModel> {
    if cfg.bool_or("readout.ideal", false)? {
        return Ok(ReadoutModel::ideal());
    }
    let d = ReadoutModel::default();
    let fb = cfg.f64_or("readout.f_bright", d.f00)?;
    let fd = cfg.f64_or("readout.f_dark", d.f11)?;
    let m = ReadoutModel {
        f00: fb,
        f01: 1.0 - fb,
        f10: 1.0 - fd,
        f11: fd,
        spinflip_dephases: cfg.bool_or("readout.spinflip_dephases", d.spinflip_dephases)?,
    };
    m.validate().map_err(|e| cfg_err(cfg.line_of("readout.f_bright"), e.to_string()))?;
    Ok(m)
}

fn policy_from(cfg: &Config, key: &str) -> Result<ReadoutPolicy> {
    match cfg.str_or(key, "perpendicular") {
        "perpendicular" => Ok(ReadoutPolicy::Perpendicular),
        "argmax" => Ok(ReadoutPolicy::Argmax),
        other => Err(cfg_err(cfg.line_of(key), format!("policy `{other}` is not perpendicular or argmax"))),
    }
}

pub fn protocol_from(cfg: &Config) -> Result<ProtocolOptions> {
    let d = ProtocolOptions::default();
    let gate_delta_t_us = match cfg.str_or("protocol.gate_delta_t_us", "auto") {
        "auto" => None,
        _ => cfg.f64_list("protocol.gate_delta_t_us")?,
    };
    if let Some(v) = &gate_delta_t_us {
        if v.iter().any(|x| *x < 0.0) {
            return Err(cfg_err(cfg.line_of("protocol.gate_delta_t_us"), "gate waits must be nonnegative"));
        }
    }
    let grid_points = cfg.u64_or("protocol.grid_points", DEFAULT_POINTS as u64)? as usize;
    if grid_points < 16 {
        return Err(cfg_err(cfg.line_of("protocol.grid_points"), "grid_points must be at least 16"));
    }
    Ok(ProtocolOptions {
        readout: readout_from(cfg)?,
        policy: policy_from(cfg, "protocol.policy")?,
        feedforward: cfg.bool_or("protocol.feedforward", d.feedforward)?,
        gate_delta_t_us,
        gate_echo_idle: cfg.bool_or("protocol.gate_echo_idle", d.gate_echo_idle)?,
        memory_state: d.memory_state,
        grid_points,
        audit: cfg.bool_or("protocol.audit", d.audit)?,
    })
}

fn states_from(cfg: &Config) -> Result<Vec<InitialState>> {
    let names = cfg.str_list("sweep.memory_states").unwrap_or_else(|| vec!["+x".into()]);
    names
        .iter()
        .map(|n| match n.as_str() {
            "+x" | "x" => Ok(InitialState::PlusX),
            "+y" | "y" => Ok(InitialState::PlusY),
            "0" | "z" => Ok(InitialState::Zero),
            other => Err(cfg_err(cfg.line_of("sweep.memory_states"), format!("unknown memory state `{other}`"))),
        })
        .collect()
}

fn protocols_from(cfg: &Config) -> Result<Vec<Protocol>> {
    let ks = cfg.u64_list("sweep.k")?.unwrap_or_else(|| vec![0, 1, 2]);
    let kinds = cfg.str_list("sweep.protocols").unwrap_or_else(|| vec!["measurement".into(), "gate".into()]);
    let line = cfg.line_of("sweep.protocols");
    let mut out = Vec::new();
    for &k in &ks {
        if k == 0 {
            out.push(Protocol::None);
            continue;
        }
        for kind in &kinds {
            out.push(match kind.as_str() {
                "measurement" => Protocol::MeasurementBased(k as usize),
                "gate" => Protocol::GateBased(k as usize),
                other => return Err(cfg_err(line, format!("unknown protocol `{other}` (measurement, gate)"))),
            });
        }
    }
    Ok(out)
}

const SWEEP_KEYS: [&str; 7] = [
    "sweep.n_rea",
    "sweep.k",
    "sweep.protocols",
    "sweep.memory_states",
    "sweep.n_traj",
    "sweep.permutations",
    "sweep.delta_t_us",
];

fn n_traj_from(cfg: &Config, default: u64) -> Result<usize> {
    let n = cfg.u64_or("sweep.n_traj", default)?;
    if n == 0 {
        return Err(cfg_err(cfg.line_of("sweep.n_traj"), "n_traj must be at least 1"));
    }
    if n > 10_000_000 {
        return Err(Error::ResourceLimit(format!("n_traj = {n} exceeds 10^7")));
    }
    Ok(n as usize)
}

/// `M, mean_sigma, f_avg` plus posterior dumps along the syndrome with
/// outcome 1 on every even-numbered spectator.
pub fn bayes_narrowing(cfg: &Config) -> Result<OutputSet> {
    cfg.check_known(&["bayes.sigma0", "bayes.g", "bayes.policy", "bayes.grid_points", "bayes.mean"])?;
    let sigma0 = cfg.f64_or("bayes.sigma0", FRAC_PI_2)?;
    let mean = cfg.f64_or("bayes.mean", 0.0)?;
    let g = cfg.f64_list("bayes.g")?.unwrap_or_else(|| vec![1.0; 5]);
    let policy = policy_from(cfg, "bayes.policy")?;
    let points = cfg.u64_or("bayes.grid_points", DEFAULT_POINTS as u64)? as usize;
    let prior =
        gaussian_prior(sigma0, mean, points).map_err(|e| cfg_err(cfg.line_of("bayes.sigma0"), e.to_string()))?;

    let mut out = OutputSet::new();
    let mut table = String::from("M,mean_sigma,f_avg\n");
    for m in 0..=g.len() {
        let avg = syndrome_average(&prior, &g[..m], policy)?;
        let _ = writeln!(table, "{m},{},{}", avg.mean_sigma, avg.f_avg);
    }
    out.add("narrowing.csv", table);

    let mut grid = prior.clone();
    let mut syndrome = String::from("M,g,basis_angle,outcome,outcome_probability\n");
    out.add("pdf_M0.csv", grid.to_csv());
    for (i, &gi) in g.iter().enumerate() {
        let outcome = if (i + 1) % 2 == 0 { 1 } else { 0 };
        let theta = policy.angle(&grid, gi);
        let post = bayes_update(&grid, &SpectatorMeasurement::new(gi, theta, outcome)?)?;
        let _ = writeln!(syndrome, "{},{gi},{theta},{outcome},{}", i + 1, post.outcome_probability);
        grid = post.grid;
        out.add(format!("pdf_M{}.csv", i + 1), grid.to_csv());
    }
    out.add("syndrome.csv", syndrome);
    Ok(out)
}

/// Closed-form fidelity, outcome-conditioned mean phase and rephasing time
/// over `n_rea × g`.
pub fn analytic_sweep(cfg: &Config) -> Result<OutputSet> {
    cfg.check_known(&["sequence.a_par_te", "sweep.n_rea", "sweep.g", "sweep.a_par_mem_khz", "sweep.a_spam"])?;
    let a = cfg.f64_or("sequence.a_par_te", dm_sim::DEFAULT_A_PAR_TE)?;
    let ns = cfg.u64_list("sweep.n_rea")?.unwrap_or_else(|| (0..=2000).step_by(50).collect());
    let gs = cfg.f64_list("sweep.g")?.unwrap_or_else(|| vec![0.0, 1.0, 1.49]);
    let a_mem = cfg.f64_or("sweep.a_par_mem_khz", 24.4)?;
    let a_spam = cfg.f64_or("sweep.a_spam", 0.0)?;
    let mut s = String::from("n_rea,g,sigma,fidelity,mean_phase_0,delta_t_opt_us\n");
    for &g in &gs {
        let model = DephasingModel::new(a, g).map_err(|e| cfg_err(cfg.line_of("sweep.g"), e.to_string()))?;
        let xy = XyModel { a_spam, a_par_te: a, g };
        for &n in &ns {
            let sigma = sigma_of_n(&model, n);
            let dt = optimal_rephasing_time(&model, n, a_mem)? * 1e6;
            let _ = writeln!(
                s,
                "{n},{g},{sigma},{},{},{dt}",
                xy.eval(n as f64),
                mean_phase_after_outcome(&model, sigma, 0)
            );
        }
    }
    let mut out = OutputSet::new();
    out.add("analytic.csv", s);
    Ok(out)
}

fn ensemble_header() -> String {
    "n_rea,protocol,K,x,y,z,bvl,fidelity,stderr_x,stderr_y,stderr_z,n_traj,seed\n".to_string()
}

fn ensemble_row(s: &mut String, e: &dm_sim::EnsembleOutcome) {
    let _ = writeln!(
        s,
        "{},{},{},{},{},{},{},{},{},{},{},{},{}",
        e.n_rea,
        e.protocol.name(),
        e.protocol.k(),
        e.mean[0],
        e.mean[1],
        e.mean[2],
        e.bvl,
        e.fidelity,
        e.stderr[0],
        e.stderr[1],
        e.stderr[2],
        e.n_traj,
        e.seed
    );
}

/// Register with `memory` as the memory and every other non-idle nucleus a
/// spectator, in listed order.
fn with_memory(register: &Register, memory: usize) -> Result<Register> {
    let nuclei = register
        .nuclei()
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let role = if i == memory {
                Role::Memory
            } else if s.role == Role::Idle {
                Role::Idle
            } else {
                Role::Spectator
            };
            NuclearSpinSpec { role, ..s.clone() }
        })
        .collect();
    Register::with_capacity(nuclei, register.len().max(DEFAULT_MAX_NUCLEI))
}

/// Ensemble sweep over `n_rea × protocol × K × memory state`, with gate over
/// measurement BVL ratios and a no-spectator analytic overlay.
pub fn simulate(cfg: &Config, seed: u64) -> Result<OutputSet> {
    let keys = known(&[&SEQUENCE_KEYS, &READOUT_KEYS, &PROTOCOL_KEYS, &SWEEP_KEYS]);
    cfg.check_known(&keys)?;
    let base = register_from(cfg)?;
    let ns = cfg.u64_list("sweep.n_rea")?.unwrap_or_else(|| vec![0, 100, 300, 1000]);
    let protocols = protocols_from(cfg)?;
    let states = states_from(cfg)?;
    let n_traj = n_traj_from(cfg, 100)?;
    let base_opts = protocol_from(cfg)?;
    let permutations = cfg.bool_or("sweep.permutations", false)?;

    let memories: Vec<usize> = if permutations {
        (0..base.len()).filter(|&i| base.nuclei()[i].role != Role::Idle).collect()
    } else {
        vec![base.memory_index()]
    };
    let mut out = OutputSet::new();
    for &m in &memories {
        let register = if permutations { with_memory(&base, m)? } else { base.clone() };
        let seq = sequence_from(cfg, &register, seed)?;
        let suffix = if permutations { format!("_mem{}", register.nuclei()[m].label) } else { String::new() };
        // (state, n, protocol) -> bvl
        let mut bvl: BTreeMap<(usize, u64, Protocol), f64> = BTreeMap::new();
        for (si, &state) in states.iter().enumerate() {
            let opts = ProtocolOptions { memory_state: state, ..base_opts.clone() };
            let mut s = ensemble_header();
            for &n in &ns {
                for e in ensemble_sweep(&register, &seq, &opts, n, &protocols, n_traj)? {
                    bvl.insert((si, n, e.protocol), e.bvl);
                    ensemble_row(&mut s, &e);
                }
            }
            out.add(format!("ensemble_{}{suffix}.csv", file_state(state)), s);
        }
        out.add(format!("ratios{suffix}.csv"), ratio_table(&states, &ns, &protocols, &bvl));

        let mem = &register.nuclei()[register.memory_index()];
        let ec = seq.attempt_characteristic(spin::effective_coupling_khz(mem, seq.omega_l_khz)).norm();
        let mut s = String::from("n_rea,sigma_eff,fidelity_k0\n");
        for &n in &ns {
            let sigma = (-2.0 * n as f64 * ec.ln()).max(0.0).sqrt();
            let _ = writeln!(s, "{n},{sigma},{}", 0.5 + 0.5 * ec.powf(n as f64));
        }
        out.add(format!("overlay{suffix}.csv"), s);
    }
    Ok(out)
}

fn file_state(s: InitialState) -> &'static str {
    match s {
        InitialState::PlusX => "px",
        InitialState::PlusY => "py",
        InitialState::Zero => "z",
    }
}

fn ratio_table(
    states: &[InitialState],
    ns: &[u64],
    protocols: &[Protocol],
    bvl: &BTreeMap<(usize, u64, Protocol), f64>,
) -> String {
    let idx = |want: InitialState| states.iter().position(|s| *s == want);
    let (ix, iy, iz) = (idx(InitialState::PlusX), idx(InitialState::PlusY), idx(InitialState::Zero));
    let mut ks: Vec<usize> = protocols.iter().filter(|p| matches!(p, Protocol::GateBased(_))).map(|p| p.k()).collect();
    ks.retain(|k| protocols.contains(&Protocol::MeasurementBased(*k)));
    let mut s = String::from("n_rea,K,R_xy,R_z\n");
    for &n in ns {
        for &k in &ks {
            let r = |si: usize| bvl[&(si, n, Protocol::GateBased(k))] / bvl[&(si, n, Protocol::MeasurementBased(k))];
            let rxy: Vec<f64> = [ix, iy].into_iter().flatten().map(r).collect();
            let rxy =
                if rxy.is_empty() { String::new() } else { (rxy.iter().sum::<f64>() / rxy.len() as f64).to_string() };
            let rz = iz.map(r).map_or(String::new(), |v| v.to_string());
            let _ = writeln!(s, "{n},{k},{rxy},{rz}");
        }
    }
    s
}

/// First local maximum of sampled `(x, y)`, refined by a parabola through
/// the three bracketing samples.
pub fn first_maximum(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let i = (0..ys.len() - 1).find(|&i| ys[i] > ys[i + 1])?;
    if i == 0 {
        return Some(xs[0]);
    }
    let (x0, x1, x2) = (xs[i - 1], xs[i], xs[i + 1]);
    let (y0, y1, y2) = (ys[i - 1], ys[i], ys[i + 1]);
    let d = (x0 - x1) * (x0 - x2) * (x1 - x2);
    let a = (x2 * (y1 - y0) + x1 * (y0 - y2) + x0 * (y2 - y1)) / d;
    let b = (x2 * x2 * (y0 - y1) + x1 * x1 * (y2 - y0) + x0 * x0 * (y1 - y2)) / d;
    if !(a < 0.0) {
        return Some(x1);
    }
    Some((-b / (2.0 * a)).clamp(x0, x2))
}

/// Gate-wait sweep for the first spectator, first-maximum extraction and a
/// one-parameter fit of `δt_opt(n_rea)`.
pub fn gate_sweep(cfg: &Config, seed: u64) -> Result<OutputSet> {
    let keys = known(&[&SEQUENCE_KEYS, &READOUT_KEYS, &PROTOCOL_KEYS, &SWEEP_KEYS]);
    cfg.check_known(&keys)?;
    let register = register_from(cfg)?;
    let seq = sequence_from(cfg, &register, seed)?;
    let ns = cfg.u64_list("sweep.n_rea")?.unwrap_or_else(|| vec![0, 30, 100, 300]);
    let dts = cfg.f64_list("sweep.delta_t_us")?.unwrap_or_else(|| (0..=200).map(|i| 0.05 * i as f64).collect());
    if dts.iter().any(|d| *d < 0.0) {
        return Err(cfg_err(cfg.line_of("sweep.delta_t_us"), "gate waits must be nonnegative"));
    }
    let n_traj = n_traj_from(cfg, 100)?;
    let base = protocol_from(cfg)?;
    let spectators = register.spectators();
    let &q = spectators.first().ok_or_else(|| cfg_err(0, "gate sweep needs a spectator in the register"))?;
    let mem = &register.nuclei()[register.memory_index()];
    let a_mem = spin::effective_coupling_khz(mem, seq.omega_l_khz);
    let g = spin::effective_coupling_khz(&register.nuclei()[q], seq.omega_l_khz) / a_mem;

    let mut raw = String::from("n_rea,delta_t_us,bvl,stderr\n");
    let mut opt = String::from("n_rea,delta_t_opt_us\n");
    let mut found = Vec::new();
    for &n in &ns {
        let mut ys = Vec::with_capacity(dts.len());
        for &dt in &dts {
            let opts = ProtocolOptions { gate_delta_t_us: Some(vec![dt]), ..base.clone() };
            let e = ensemble_sweep(&register, &seq, &opts, n, &[Protocol::GateBased(1)], n_traj)?.remove(0);
            let _ = writeln!(raw, "{n},{dt},{},{}", e.bvl, e.stderr_bvl);
            ys.push(e.bvl);
        }
        match first_maximum(&dts, &ys) {
            Some(t) => {
                let _ = writeln!(opt, "{n},{t}");
                found.push((n, t));
            }
            None => {
                let _ = writeln!(opt, "{n},");
            }
        }
    }
    let mut fit = String::from("parameter,value\n");
    let usable: Vec<_> = found.iter().filter(|(n, t)| *n > 0 && *t > 0.0).copied().collect();
    if usable.is_empty() {
        fit.push_str("status,failed: no interior maximum\n");
    } else {
        let sse = |a: f64| -> f64 {
            let Ok(model) = DephasingModel::new(a, g) else { return f64::INFINITY };
            usable
                .iter()
                .map(|&(n, t)| {
                    (optimal_rephasing_time(&model, n, a_mem).map_or(f64::INFINITY, |v| v * 1e6) - t).powi(2)
                })
                .sum()
        };
        let (a, neg) = golden_section_max(|a| -sse(a), 1e-4, 0.3, 1e-10);
        let _ = writeln!(fit, "status,ok\na_par_te,{a}\ng,{g}\na_par_mem_khz,{a_mem}\nsse_us2,{}", -neg);
    }
    let mut out = OutputSet::new();
    out.add("gate_sweep.csv", raw);
    out.add("gate_opt.csv", opt);
    out.add("gate_fit.csv", fit);
    Ok(out)
}

fn curve_params(cfg: &Config, key: &str, n: usize) -> Result<Option<Vec<f64>>> {
    match cfg.f64_list(key)? {
        None => Ok(None),
        Some(v) if v.len() == n => Ok(Some(v)),
        Some(v) => Err(cfg_err(cfg.line_of(key), format!("`{key}` expects {n} numbers, got {}", v.len()))),
    }
}

/// Curves from `strategy.k<K>_xy = A_SPAM a_par_te g` and
/// `strategy.k<K>_z = A_SPAM_z N_1e`, or the built-in fitted set.
fn strategy_curves(cfg: &Config) -> Result<BTreeMap<usize, FidelityCurve>> {
    let mut curves = BTreeMap::new();
    for k in 0..=8usize {
        let xy = curve_params(cfg, &format!("strategy.k{k}_xy"), 3)?;
        let z = curve_params(cfg, &format!("strategy.k{k}_z"), 2)?;
        let xy = xy.map(|v| XyModel { a_spam: v[0], a_par_te: v[1], g: v[2] });
        let z = z.map(|v| ZModel { a_spam_z: v[0], n_1e: v[1], offset: 0.5 });
        let model = match (xy, z) {
            (Some(xy), Some(z)) => CurveModel::state_average(xy, z),
            (Some(xy), None) => CurveModel::Xy(xy),
            (None, Some(z)) => CurveModel::Z(z),
            (None, None) => continue,
        };
        curves.insert(k, FidelityCurve::from_model(model));
    }
    if curves.is_empty() {
        curves = reference_gate_curves();
    }
    Ok(curves)
}

pub fn strategy(cfg: &Config) -> Result<OutputSet> {
    let mut keys: Vec<String> = [
        "strategy.p_min",
        "strategy.p_max",
        "strategy.p_points",
        "strategy.p_scale",
        "strategy.tail_eps",
        "strategy.envelope",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for k in 0..=8 {
        keys.push(format!("strategy.k{k}_xy"));
        keys.push(format!("strategy.k{k}_z"));
    }
    cfg.check_known(&keys.iter().map(String::as_str).collect::<Vec<_>>())?;
    let curves = strategy_curves(cfg)?;
    let lo = cfg.f64_or("strategy.p_min", 1e-4)?;
    let hi = cfg.f64_or("strategy.p_max", 1.0)?;
    let n = cfg.u64_or("strategy.p_points", 41)? as usize;
    let grid = match cfg.str_or("strategy.p_scale", "log") {
        "log" => log_p_grid(lo, hi, n),
        "linear" => linear_p_grid(lo, hi, n),
        other => {
            return Err(cfg_err(cfg.line_of("strategy.p_scale"), format!("p_scale `{other}` is not log or linear")))
        }
    }
    .map_err(|e| cfg_err(cfg.line_of("strategy.p_min"), e.to_string()))?;
    let tail_eps = cfg.f64_or("strategy.tail_eps", DEFAULT_TAIL_EPS)?;
    let rep = strategy_sweep(&curves, &grid, tail_eps)?;
    let mut out = OutputSet::new();
    out.add("strategy.csv", rep.to_csv());
    out.add("best_k.csv", rep.best_csv());
    out.add("crossovers.csv", rep.crossovers_csv());
    if cfg.bool_or("strategy.envelope", true)? {
        let env = FidelityCurve::envelope(&curves.values().collect::<Vec<_>>())?;
        let mut s = String::from("p,fbar_envelope\n");
        for &p in &grid {
            let _ = writeln!(s, "{p},{}", crate::strategy::expected_fidelity(&env, p, tail_eps)?);
        }
        out.add("envelope.csv", s);
    }
    Ok(out)
}

/// Reads `n_rea,fidelity[,error]` rows; `#` lines and a non-numeric header
/// are skipped.
pub fn read_fit_data(text: &str) -> Result<Vec<DataPoint>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = t.split(',').map(str::trim).collect();
        let nums: Option<Vec<f64>> = cols.iter().map(|c| c.parse::<f64>().ok()).collect();
        match nums {
            None if out.is_empty() => continue,
            None => return Err(cfg_err(i + 1, format!("fit data row `{t}` is not numeric"))),
            Some(v) if v.len() == 2 => out.push(DataPoint::new(v[0], v[1], None)),
            Some(v) if v.len() >= 3 => out.push(DataPoint::new(v[0], v[1], Some(v[2]))),
            Some(_) => return Err(cfg_err(i + 1, "fit data rows need n_rea,fidelity[,error]")),
        }
    }
    Ok(out)
}

pub fn fit(cfg: &Config, config_dir: &Path) -> Result<OutputSet> {
    cfg.check_known(&["fit.data", "fit.basis", "fit.g", "fit.a_spam", "fit.a_spam_z", "fit.label"])?;
    let data_key = "fit.data";
    let rel = cfg.raw(data_key).ok_or_else(|| cfg_err(0, "fit needs `fit.data` (CSV of n_rea,fidelity[,error])"))?;
    let path = config_dir.join(&rel.value);
    let text = std::fs::read_to_string(&path).map_err(|e| cfg_err(rel.line, format!("{}: {e}", path.display())))?;
    let data = read_fit_data(&text)?;
    let label = cfg.str_or("fit.label", "data").to_string();
    let fixed_or_free = |key: &str| -> Result<Option<f64>> {
        match cfg.str_or(key, "free") {
            "free" => Ok(None),
            _ => cfg.f64(key),
        }
    };
    let result = match cfg.str_or("fit.basis", "xy") {
        "xy" => {
            let g = match cfg.str_or("fit.g", "0") {
                "free" => GMode::Free { start: 1.0 },
                s if s.starts_with("free:") => GMode::Free {
                    start: s[5..].parse().map_err(|_| cfg_err(cfg.line_of("fit.g"), "free:<start> needs a number"))?,
                },
                _ => GMode::Fixed(cfg.f64_or("fit.g", 0.0)?),
            };
            fit_fidelity_xy(&data, XyFitOptions { a_spam: fixed_or_free("fit.a_spam")?, g })?
        }
        "z" => fit_fidelity_z(&data, ZFitOptions { a_spam_z: fixed_or_free("fit.a_spam_z")? })?,
        other => return Err(cfg_err(cfg.line_of("fit.basis"), format!("basis `{other}` is not xy or z"))),
    };
    let mut out = OutputSet::new();
    out.add("fit.csv", result.to_csv());
    out.add("fit_report.txt", result.report(&label));
    Ok(out)
}
