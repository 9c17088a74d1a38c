//! Seeded trajectory ensembles.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{Protocol, ProtocolOptions, ProtocolOutcome, Register, SequenceConfig, Simulator};
use crate::error::{invalid, Result};

pub type TrajRng = ChaCha8Rng;

/// Independent streams for trajectory `idx`: one for the attempt sequence,
/// one for protocol outcomes. Every protocol of a sweep restarts from the
/// same protocol stream.
pub fn trajectory_rngs(seed: u64, idx: u64) -> (TrajRng, TrajRng) {
    let mut seq = ChaCha8Rng::seed_from_u64(seed);
    seq.set_stream(2 * idx);
    let mut proto = ChaCha8Rng::seed_from_u64(seed);
    proto.set_stream(2 * idx + 1);
    (seq, proto)
}

/// Trajectory-averaged memory Bloch vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleOutcome {
    pub n_rea: u64,
    pub protocol: Protocol,
    pub mean: [f64; 3],
    pub stderr: [f64; 3],
    pub bvl: f64,
    /// Standard error of the trajectory Bloch vectors projected on the mean
    /// direction.
    pub stderr_bvl: f64,
    pub fidelity: f64,
    pub n_traj: usize,
    pub seed: u64,
    pub forced: usize,
}

impl EnsembleOutcome {
    pub fn from_outcomes(n_rea: u64, protocol: Protocol, seed: u64, outcomes: &[ProtocolOutcome]) -> Self {
        let n = outcomes.len() as f64;
        let mut mean = [0.0; 3];
        for o in outcomes {
            for (m, b) in mean.iter_mut().zip(&o.bloch) {
                *m += b / n;
            }
        }
        let sem = |f: &dyn Fn(&ProtocolOutcome) -> f64, mu: f64| {
            if outcomes.len() < 2 {
                return 0.0;
            }
            let ss: f64 = outcomes.iter().map(|o| (f(o) - mu).powi(2)).sum();
            (ss / (n - 1.0) / n).sqrt()
        };
        let stderr = [0, 1, 2].map(|i| sem(&|o| o.bloch[i], mean[i]));
        let bvl = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
        let stderr_bvl = if bvl > 0.0 {
            let u = mean.map(|v| v / bvl);
            sem(&|o| o.bloch.iter().zip(&u).map(|(b, u)| b * u).sum(), bvl)
        } else {
            stderr.iter().map(|s| s * s).sum::<f64>().sqrt()
        };
        Self {
            n_rea,
            protocol,
            mean,
            stderr,
            bvl,
            stderr_bvl,
            fidelity: 0.5 + 0.5 * bvl,
            n_traj: outcomes.len(),
            seed,
            forced: outcomes.iter().filter(|o| o.forced).count(),
        }
    }

    pub fn stderr_fidelity(&self) -> f64 {
        0.5 * self.stderr_bvl
    }
}

/// Per-trajectory outcomes for each protocol, sharing the attempt sequence
/// of each trajectory. Indexed `[protocol][trajectory]`.
pub fn ensemble_trajectories(
    sim: &Simulator,
    n_rea: u64,
    protocols: &[Protocol],
    n_traj: usize,
) -> Result<Vec<Vec<ProtocolOutcome>>> {
    if n_traj == 0 {
        return Err(invalid("n_traj must be at least 1"));
    }
    let plans = protocols.iter().map(|p| sim.plan(n_rea, *p)).collect::<Result<Vec<_>>>()?;
    let seed = sim.config().seed;
    let rows: Vec<Result<Vec<ProtocolOutcome>>> = (0..n_traj as u64)
        .into_par_iter()
        .map(|i| {
            let (mut seq, proto) = trajectory_rngs(seed, i);
            let st = sim.prepare(n_rea, &mut seq)?;
            plans.iter().map(|plan| sim.execute(st.clone(), plan, &mut proto.clone())).collect()
        })
        .collect();
    let mut out = vec![Vec::with_capacity(n_traj); protocols.len()];
    for row in rows {
        for (slot, o) in out.iter_mut().zip(row?) {
            slot.push(o);
        }
    }
    Ok(out)
}

/// Averages over `n_traj` trajectories for several protocols at once.
pub fn ensemble_sweep(
    register: &Register,
    cfg: &SequenceConfig,
    opts: &ProtocolOptions,
    n_rea: u64,
    protocols: &[Protocol],
    n_traj: usize,
) -> Result<Vec<EnsembleOutcome>> {
    let sim = Simulator::new(register, cfg, opts)?;
    let per = ensemble_trajectories(&sim, n_rea, protocols, n_traj)?;
    Ok(protocols.iter().zip(&per).map(|(p, o)| EnsembleOutcome::from_outcomes(n_rea, *p, cfg.seed, o)).collect())
}

pub fn ensemble_run(
    register: &Register,
    cfg: &SequenceConfig,
    opts: &ProtocolOptions,
    n_rea: u64,
    protocol: Protocol,
    n_traj: usize,
) -> Result<EnsembleOutcome> {
    Ok(ensemble_sweep(register, cfg, opts, n_rea, &[protocol], n_traj)?.remove(0))
}
