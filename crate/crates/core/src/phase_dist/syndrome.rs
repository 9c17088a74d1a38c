//! Exhaustive syndrome enumeration for sequential spectator readout.

use super::{
    bayes_update, optimal_readout_angle, perpendicular_readout_angle, phase_stats, PhaseGrid, SpectatorMeasurement,
};
use crate::error::{Error, Result};

/// Largest spectator count enumerated exhaustively (2^12 leaves).
pub const MAX_EXHAUSTIVE_SPECTATORS: usize = 12;

/// How each spectator's readout basis is chosen from the running posterior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReadoutPolicy {
    /// Perpendicular to the predicted spectator Bloch vector.
    #[default]
    Perpendicular,
    /// Exact maximizer of the outcome-averaged posterior sharpness.
    Argmax,
}

impl ReadoutPolicy {
    pub fn angle(self, grid: &PhaseGrid, g: f64) -> f64 {
        match self {
            ReadoutPolicy::Perpendicular => perpendicular_readout_angle(grid, g),
            ReadoutPolicy::Argmax => optimal_readout_angle(grid, g),
        }
    }
}

/// Outcome-averaged circular standard deviation and best-axis fidelity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyndromeAverage {
    pub mean_sigma: f64,
    pub f_avg: f64,
}

/// Enumerates all `2^M` readout syndromes, weighting each leaf by its
/// probability. Leaves are visited depth-first with outcome 0 first, so the
/// reduction order is fixed.
pub fn syndrome_average(prior: &PhaseGrid, g_list: &[f64], policy: ReadoutPolicy) -> Result<SyndromeAverage> {
    if g_list.len() > MAX_EXHAUSTIVE_SPECTATORS {
        return Err(Error::ResourceLimit(format!(
            "{} spectators exceed the exhaustive limit of {MAX_EXHAUSTIVE_SPECTATORS}; use Monte-Carlo syndrome sampling",
            g_list.len()
        )));
    }
    prior.validate()?;
    let mut acc = SyndromeAverage { mean_sigma: 0.0, f_avg: 0.0 };
    descend(prior, g_list, policy, 1.0, &mut acc)?;
    Ok(acc)
}

fn descend(
    grid: &PhaseGrid,
    remaining: &[f64],
    policy: ReadoutPolicy,
    weight: f64,
    acc: &mut SyndromeAverage,
) -> Result<()> {
    let Some((&g, rest)) = remaining.split_first() else {
        let stats = phase_stats(grid);
        acc.mean_sigma += weight * stats.holevo_variance.sqrt();
        acc.f_avg += weight * (0.5 + 0.5 * stats.sharpness);
        return Ok(());
    };
    let theta = policy.angle(grid, g);
    for outcome in [0u8, 1] {
        let m = SpectatorMeasurement { g, basis_angle: theta, outcome };
        match bayes_update(grid, &m) {
            Ok(post) => descend(&post.grid, rest, policy, weight * post.outcome_probability, acc)?,
            Err(Error::ImpossibleOutcome { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase_dist::{gaussian_prior, DEFAULT_POINTS};
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn no_spectators_is_prior_fidelity() {
        let s = FRAC_PI_2;
        let prior = gaussian_prior(s, 0.0, DEFAULT_POINTS).unwrap();
        let avg = syndrome_average(&prior, &[], ReadoutPolicy::Perpendicular).unwrap();
        assert!((avg.f_avg - (0.5 + 0.5 * (-s * s / 2.0).exp())).abs() < 1e-4);
    }

    #[test]
    fn one_spectator_matches_closed_form() {
        let s = FRAC_PI_2;
        let prior = gaussian_prior(s, 0.0, DEFAULT_POINTS).unwrap();
        let avg = syndrome_average(&prior, &[1.0], ReadoutPolicy::Perpendicular).unwrap();
        let expected = crate::analytic::fidelity_closed_form(1.0, s);
        assert!((avg.f_avg - expected).abs() < 1e-3, "{} vs {expected}", avg.f_avg);
    }

    #[test]
    fn narrowing_is_monotone() {
        let prior = gaussian_prior(FRAC_PI_2, 0.0, DEFAULT_POINTS).unwrap();
        let mut last = syndrome_average(&prior, &[], ReadoutPolicy::Perpendicular).unwrap();
        for m in 1..=5 {
            let cur = syndrome_average(&prior, &vec![1.0; m], ReadoutPolicy::Perpendicular).unwrap();
            assert!(cur.mean_sigma < last.mean_sigma);
            assert!(cur.f_avg > last.f_avg);
            last = cur;
        }
    }

    #[test]
    fn zero_coupling_spectators_carry_no_information() {
        let prior = gaussian_prior(1.2, 0.0, 1024).unwrap();
        let base = syndrome_average(&prior, &[], ReadoutPolicy::Perpendicular).unwrap();
        for m in 1..=4 {
            for policy in [ReadoutPolicy::Perpendicular, ReadoutPolicy::Argmax] {
                let cur = syndrome_average(&prior, &vec![0.0; m], policy).unwrap();
                assert!((cur.f_avg - base.f_avg).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn too_many_spectators_is_resource_error() {
        let prior = gaussian_prior(1.0, 0.0, 64).unwrap();
        assert!(matches!(
            syndrome_average(&prior, &[1.0; 13], ReadoutPolicy::Perpendicular),
            Err(Error::ResourceLimit(_))
        ));
    }
}
