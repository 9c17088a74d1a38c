//! Closed-form single-spectator model.
//!
//! After `n` attempts the memory phase is taken as Gaussian with width
//! `σ = √n · a`, where `a` is the effective per-attempt phase step
//! (`A∥·t_e` folded into one dimensionless number). A spectator with
//! hyperfine ratio `g` read out perpendicular to its predicted Bloch vector
//! then narrows and shifts the memory distribution.
//!
//! Hyperfine couplings enter in kHz as ordinary frequencies; the single
//! conversion to angular rate happens in [`optimal_rephasing_time`].

mod fit;

use std::f64::consts::TAU;

use crate::error::{invalid, Result};

pub use fit::{fit_fidelity_xy, fit_fidelity_z, DataPoint, FitResult, GMode, XyFitOptions, ZFitOptions};

/// Dephasing strength and spectator coupling ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DephasingModel {
    pub a_par_te: f64,
    pub g: f64,
}

impl DephasingModel {
    pub fn new(a_par_te: f64, g: f64) -> Result<Self> {
        if !(a_par_te > 0.0) || !a_par_te.is_finite() {
            return Err(invalid(format!("a_par_te must be positive, got {a_par_te}")));
        }
        if !g.is_finite() {
            return Err(invalid("g must be finite"));
        }
        Ok(Self { a_par_te, g })
    }
}

/// SPAM parameters of the fit functions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpamParams {
    pub a_spam: f64,
    pub a_spam_z: f64,
    pub n_1e: f64,
    pub offset_a: f64,
}

impl Default for SpamParams {
    fn default() -> Self {
        Self { a_spam: 0.0, a_spam_z: 0.0, n_1e: f64::INFINITY, offset_a: 0.5 }
    }
}

impl SpamParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.a_spam) || !(0.0..=1.0).contains(&self.a_spam_z) {
            return Err(invalid("SPAM amplitudes must lie in [0, 1]"));
        }
        if !(self.n_1e > 0.0) {
            return Err(invalid("n_1e must be positive"));
        }
        Ok(())
    }
}

pub fn sigma_of_n(model: &DephasingModel, n_rea: u64) -> f64 {
    (n_rea as f64).sqrt() * model.a_par_te
}

/// Mean memory phase after spectator outcome `H`:
/// `(−1)^H · arctan(½ e^{−½g(g+2)σ²}(e^{2gσ²} − 1))`.
///
/// Evaluated as `arctan(e^{−g²σ²/2} sinh(gσ²))`, the same expression without
/// the overflow of `e^{2gσ²}`.
pub fn mean_phase_after_outcome(model: &DephasingModel, sigma: f64, outcome: u8) -> f64 {
    let s2 = sigma * sigma;
    let g = model.g.abs();
    let arg = if g * s2 < 300.0 {
        (-0.5 * g * g * s2).exp() * (g * s2).sinh()
    } else {
        0.5 * (g * s2 - 0.5 * g * g * s2).exp()
    };
    let phase = arg.atan().copysign(model.g);
    if outcome == 0 {
        phase
    } else {
        -phase
    }
}

/// Syndrome-averaged best-axis fidelity with one spectator,
/// `½ + ¼√ρ e^{−σ²/2}`.
pub fn fidelity_one_spectator(model: &DephasingModel, sigma: f64) -> f64 {
    fidelity_closed_form(model.g, sigma)
}

/// `½ + ¼√ρ e^{−σ²/2}` written as `½ + ½√(e^{−σ²} + ¼D²)` with
/// `D = e^{−(g−1)²σ²/2} − e^{−(g+1)²σ²/2}`, which stays finite at large σ.
/// For `D = 0` (in particular `g = 0`) this is exactly `½ + ½e^{−σ²/2}`.
pub fn fidelity_closed_form(g: f64, sigma: f64) -> f64 {
    0.5 + 0.5 * coherence_one_spectator(g, sigma)
}

/// Outcome-averaged memory Bloch vector length after one spectator readout.
pub fn coherence_one_spectator(g: f64, sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    let d = (-0.5 * (g - 1.0).powi(2) * s2).exp() - (-0.5 * (g + 1.0).powi(2) * s2).exp();
    if d == 0.0 {
        (-0.5 * s2).exp()
    } else {
        ((-s2).exp() + 0.25 * d * d).sqrt()
    }
}

/// XY-plane fit function `½ + ¼(1−A_SPAM)√ρ e^{−σ²/2}` with `σ = √n·a`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct XyModel {
    pub a_spam: f64,
    pub a_par_te: f64,
    pub g: f64,
}

impl XyModel {
    pub fn eval(&self, n_rea: f64) -> f64 {
        let sigma = n_rea.max(0.0).sqrt() * self.a_par_te;
        0.5 + 0.5 * (1.0 - self.a_spam) * coherence_one_spectator(self.g, sigma)
    }

    /// Large-`n` limit.
    pub fn asymptote(&self) -> f64 {
        if self.g == 1.0 || self.g == -1.0 {
            0.5 + 0.25 * (1.0 - self.a_spam)
        } else {
            0.5
        }
    }
}

/// Z-basis fit function `½(1−A_SPAM_z) e^{−n/N_{1/e}} + a`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZModel {
    pub a_spam_z: f64,
    pub n_1e: f64,
    pub offset: f64,
}

impl ZModel {
    pub fn eval(&self, n_rea: f64) -> f64 {
        0.5 * (1.0 - self.a_spam_z) * (-n_rea / self.n_1e).exp() + self.offset
    }

    pub fn asymptote(&self) -> f64 {
        self.offset
    }
}

/// Electron-conditioned wait that rephases the two spectator outcome
/// branches: `(1/2πA∥,m) · 2|⟨φ_H⟩|`, in seconds.
///
/// Nondecreasing in `n_rea` for `0 < |g| < 2`.
pub fn optimal_rephasing_time(model: &DephasingModel, n_rea: u64, a_par_mem_khz: f64) -> Result<f64> {
    if a_par_mem_khz == 0.0 || !a_par_mem_khz.is_finite() {
        return Err(invalid("memory A_par must be nonzero"));
    }
    let sigma = sigma_of_n(model, n_rea);
    let gap = 2.0 * mean_phase_after_outcome(model, sigma, 0).abs();
    Ok(gap / (TAU * a_par_mem_khz.abs() * 1e3))
}

/// Feedforward angle for outcome 0 on a Gaussian prior read out at `π/2`:
/// `arctan(−e^{−σ²/2} sinh σ²)`.
pub fn compensation_angle_gaussian(sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    let arg = if s2 < 300.0 { (-0.5 * s2).exp() * s2.sinh() } else { 0.5 * (0.5 * s2).exp() };
    (-arg).atan()
}
