//! Grid-based engine for cyclic phase distributions.
//!
//! A [`PhaseGrid`] holds a probability density sampled on a uniform grid over
//! one period `[-π, π)`. Integrals use the periodic rectangle rule, which is
//! spectrally accurate for smooth periodic integrands.

mod syndrome;

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use num_complex::Complex64;

use crate::error::{invalid, Error, Result};
use crate::optimize::scan_then_refine;

pub use syndrome::{syndrome_average, ReadoutPolicy, SyndromeAverage, MAX_EXHAUSTIVE_SPECTATORS};

pub const DEFAULT_POINTS: usize = 4096;
const MIN_POINTS: usize = 8;
const NORM_TOL: f64 = 1e-9;
const IMPOSSIBLE_MASS: f64 = 1e-15;
const UNDEFINED_SHARPNESS: f64 = 1e-12;
const WINDINGS: i32 = 5;
const READOUT_SCAN_POINTS: usize = 256;
const ANGLE_TOL: f64 = 1e-6;

/// Probability density of a cyclic phase on a uniform grid over `[-π, π)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseGrid {
    density: Vec<f64>,
}

/// One spectator readout: hyperfine ratio, basis angle in the XY plane and
/// the binary outcome (0 = bright).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectatorMeasurement {
    pub g: f64,
    pub basis_angle: f64,
    pub outcome: u8,
}

/// Circular statistics of a [`PhaseGrid`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseStats {
    pub sharpness: f64,
    pub holevo_variance: f64,
    /// `None` when the distribution is too close to uniform for the mean to
    /// carry information (sharpness below 1e-12).
    pub circular_mean: Option<f64>,
}

/// Posterior grid together with the probability of the observed outcome.
#[derive(Debug, Clone)]
pub struct Posterior {
    pub grid: PhaseGrid,
    pub outcome_probability: f64,
}

/// Per-outcome feedforward rotations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Compensation {
    pub phi_c0: f64,
    pub phi_c1: f64,
}

impl Compensation {
    pub fn for_outcome(&self, outcome: u8) -> f64 {
        if outcome == 0 {
            self.phi_c0
        } else {
            self.phi_c1
        }
    }
}

/// Which spectator state triggers the electron flip in the gate-based step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlipBranch {
    /// Flip on the spectator's −Y state (`k₋`).
    Minus,
    /// Flip on the spectator's +Y state (`k₊`).
    Plus,
}

impl FlipBranch {
    pub fn sign(self) -> f64 {
        match self {
            FlipBranch::Minus => 1.0,
            FlipBranch::Plus => -1.0,
        }
    }
}

impl SpectatorMeasurement {
    pub fn new(g: f64, basis_angle: f64, outcome: u8) -> Result<Self> {
        if outcome > 1 {
            return Err(invalid(format!("outcome must be 0 or 1, got {outcome}")));
        }
        if !basis_angle.is_finite() || !g.is_finite() {
            return Err(invalid("basis angle and g must be finite"));
        }
        Ok(Self { g, basis_angle, outcome })
    }

    /// Probability of this outcome given the memory phase `phi`.
    pub fn likelihood(&self, phi: f64) -> f64 {
        let sign = if self.outcome == 0 { 1.0 } else { -1.0 };
        0.5 * (1.0 + sign * (self.g * phi - self.basis_angle).cos())
    }
}

/// Wraps an angle to `(-π, π]`.
pub fn wrap_angle(x: f64) -> f64 {
    let mut y = x.rem_euclid(TAU);
    if y > PI {
        y -= TAU;
    }
    y
}

impl PhaseGrid {
    /// Builds a grid from raw (unnormalized) nonnegative density samples.
    pub fn from_density(mut density: Vec<f64>) -> Result<Self> {
        if density.len() < MIN_POINTS {
            return Err(invalid(format!("grid needs at least {MIN_POINTS} points")));
        }
        if density.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(invalid("density values must be finite and nonnegative"));
        }
        let h = TAU / density.len() as f64;
        let mass: f64 = density.iter().sum::<f64>() * h;
        if mass <= 0.0 {
            return Err(invalid("density has zero mass"));
        }
        density.iter_mut().for_each(|v| *v /= mass);
        Ok(Self { density })
    }

    pub fn uniform(n_points: usize) -> Result<Self> {
        Self::from_density(vec![1.0; n_points])
    }

    /// All mass at the grid point nearest to `phi0`.
    pub fn delta(phi0: f64, n_points: usize) -> Result<Self> {
        if n_points < MIN_POINTS {
            return Err(invalid(format!("grid needs at least {MIN_POINTS} points")));
        }
        let mut density = vec![0.0; n_points];
        density[Self::nearest_index(phi0, n_points)] = 1.0;
        Self::from_density(density)
    }

    fn nearest_index(phi: f64, n_points: usize) -> usize {
        let h = TAU / n_points as f64;
        let idx = ((wrap_angle(phi) + PI) / h).round() as i64;
        idx.rem_euclid(n_points as i64) as usize
    }

    pub fn n_points(&self) -> usize {
        self.density.len()
    }

    pub fn spacing(&self) -> f64 {
        TAU / self.density.len() as f64
    }

    pub fn phi(&self, j: usize) -> f64 {
        -PI + self.spacing() * j as f64
    }

    /// `f` sampled at grid point `j`. At `−π` the one-sided limits from both
    /// ends are averaged, so functions that are not `2π`-periodic (such as
    /// `cos(gφ)` with non-integer `g`) are sampled at their jump midpoint.
    pub fn sample<T>(&self, j: usize, f: impl Fn(f64) -> T) -> T
    where
        T: std::ops::Add<Output = T> + std::ops::Mul<f64, Output = T>,
    {
        if j == 0 {
            (f(-PI) + f(PI)) * 0.5
        } else {
            f(self.phi(j))
        }
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    /// Iterator over `(φ_j, P_j · Δφ)` pairs, i.e. grid points with their
    /// quadrature weights folded in.
    pub fn weighted(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let h = self.spacing();
        self.density.iter().enumerate().map(move |(j, p)| (-PI + h * j as f64, p * h))
    }

    pub fn total_mass(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.spacing()
    }

    /// Checks the normalization and positivity invariants.
    pub fn validate(&self) -> Result<()> {
        if self.density.iter().any(|v| *v < 0.0 || !v.is_finite()) {
            return Err(invalid("negative or non-finite density"));
        }
        let mass = self.total_mass();
        if (mass - 1.0).abs() > NORM_TOL {
            return Err(invalid(format!("grid mass {mass} is not 1")));
        }
        Ok(())
    }

    /// `∫ f(φ) e^{iφ} P(φ) dφ` style moments are built from this.
    pub fn expectation(&self, f: impl Fn(f64) -> Complex64) -> Complex64 {
        let h = self.spacing();
        (0..self.n_points()).map(|j| self.sample(j, &f) * (self.density[j] * h)).sum()
    }

    /// First circular moment `∫ e^{iφ} P(φ) dφ`.
    pub fn first_moment(&self) -> Complex64 {
        self.expectation(|phi| Complex64::from_polar(1.0, phi))
    }

    /// Circular moment of the scaled phase, `∫ e^{igφ} P(φ) dφ`.
    pub fn scaled_moment(&self, g: f64) -> Complex64 {
        self.expectation(|phi| Complex64::from_polar(1.0, g * phi))
    }

    pub fn stats(&self) -> PhaseStats {
        phase_stats(self)
    }

    /// Ordinary (non-cyclic) variance about the arithmetic mean on `[-π, π)`.
    pub fn linear_variance(&self) -> f64 {
        let mean: f64 = self.weighted().map(|(phi, w)| phi * w).sum();
        self.weighted().map(|(phi, w)| (phi - mean).powi(2) * w).sum()
    }

    /// `P(φ - shift)` by periodic linear interpolation. Integer multiples of
    /// the grid spacing shift exactly.
    pub fn shifted(&self, shift: f64) -> PhaseGrid {
        let n = self.density.len();
        let mut cells = shift / self.spacing();
        let nearest = cells.round();
        if (cells - nearest).abs() < 1e-9 {
            cells = nearest;
        }
        let base = cells.floor();
        let frac = cells - base;
        let base = base as i64;
        let density = (0..n as i64)
            .map(|j| {
                let i0 = (j - base).rem_euclid(n as i64) as usize;
                let i1 = (j - base - 1).rem_euclid(n as i64) as usize;
                (1.0 - frac) * self.density[i0] + frac * self.density[i1]
            })
            .collect();
        PhaseGrid { density }
    }

    /// CSV dump with header `phi,density`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("phi,density\n");
        for (j, p) in self.density.iter().enumerate() {
            out.push_str(&format!("{:.12e},{:.12e}\n", self.phi(j), p));
        }
        out
    }
}

/// Wrapped-normal prior on `n_points`, summing Gaussian images over winding
/// numbers `-5..=5`.
pub fn gaussian_prior(sigma: f64, mean: f64, n_points: usize) -> Result<PhaseGrid> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(invalid(format!("sigma must be positive, got {sigma}")));
    }
    if n_points < MIN_POINTS {
        return Err(invalid(format!("grid needs at least {MIN_POINTS} points")));
    }
    let h = TAU / n_points as f64;
    let norm = 1.0 / (sigma * TAU.sqrt());
    let density = (0..n_points)
        .map(|j| {
            let phi = -PI + h * j as f64;
            (-WINDINGS..=WINDINGS)
                .map(|k| {
                    let d = phi + TAU * k as f64 - mean;
                    norm * (-0.5 * d * d / (sigma * sigma)).exp()
                })
                .sum::<f64>()
        })
        .collect();
    PhaseGrid::from_density(density)
}

/// Bayesian update with the spectator likelihood
/// `½[1 + (−1)^m cos(gφ − θ)]`.
pub fn bayes_update(prior: &PhaseGrid, m: &SpectatorMeasurement) -> Result<Posterior> {
    let h = prior.spacing();
    let raw: Vec<f64> =
        prior.density.iter().enumerate().map(|(j, p)| prior.sample(j, |phi| m.likelihood(phi)) * p).collect();
    let mass = raw.iter().sum::<f64>() * h;
    if mass < IMPOSSIBLE_MASS {
        return Err(Error::ImpossibleOutcome { mass });
    }
    let density = raw.into_iter().map(|v| v / mass).collect();
    Ok(Posterior { grid: PhaseGrid { density }, outcome_probability: mass })
}

pub fn phase_stats(grid: &PhaseGrid) -> PhaseStats {
    let m1 = grid.first_moment();
    let sharpness = m1.norm().min(1.0);
    let holevo_variance = if sharpness > 0.0 { sharpness.powi(-2) - 1.0 } else { f64::INFINITY };
    let circular_mean = (sharpness >= UNDEFINED_SHARPNESS).then(|| m1.im.atan2(m1.re));
    PhaseStats { sharpness, holevo_variance, circular_mean }
}

/// Fidelity `∫ ½[1 + cos(φ − θ)] P(φ) dφ` of the XY-plane state along `theta`.
pub fn fidelity_along(grid: &PhaseGrid, theta: f64) -> f64 {
    let m1 = grid.first_moment();
    (0.5 + 0.5 * (m1 * Complex64::from_polar(1.0, -theta)).re).clamp(0.0, 1.0)
}

/// Fidelity along the best axis, `½ + ½S`.
pub fn best_axis_fidelity(grid: &PhaseGrid) -> f64 {
    0.5 + 0.5 * phase_stats(grid).sharpness
}

/// Outcome-averaged posterior sharpness as a function of the readout basis.
///
/// The moments are precomputed so each evaluation is O(1).
struct ReadoutObjective {
    c0: Complex64,
    c_cos: Complex64,
    c_sin: Complex64,
}

impl ReadoutObjective {
    fn new(grid: &PhaseGrid, g: f64) -> Self {
        let mut c0 = Complex64::new(0.0, 0.0);
        let mut c_cos = c0;
        let mut c_sin = c0;
        let h = grid.spacing();
        for (j, p) in grid.density.iter().enumerate() {
            let e = Complex64::from_polar(p * h * 0.5, grid.phi(j));
            c0 += e;
            c_cos += e * grid.sample(j, |phi| (g * phi).cos());
            c_sin += e * grid.sample(j, |phi| (g * phi).sin());
        }
        Self { c0, c_cos, c_sin }
    }

    fn eval(&self, theta: f64) -> f64 {
        let mix = self.c_cos * theta.cos() + self.c_sin * theta.sin();
        (self.c0 + mix).norm() + (self.c0 - mix).norm()
    }
}

/// Outcome-averaged posterior sharpness for readout basis `theta`.
pub fn readout_objective(grid: &PhaseGrid, g: f64, theta: f64) -> f64 {
    ReadoutObjective::new(grid, g).eval(theta)
}

/// Readout basis maximizing the outcome-averaged posterior sharpness.
///
/// The objective is π-periodic, so the search runs over `[0, π)`; a flat
/// objective returns `+π/2`.
pub fn optimal_readout_angle(grid: &PhaseGrid, g: f64) -> f64 {
    let obj = ReadoutObjective::new(grid, g);
    let samples: Vec<f64> =
        (0..READOUT_SCAN_POINTS).map(|i| obj.eval(PI * i as f64 / READOUT_SCAN_POINTS as f64)).collect();
    let (lo, hi) = samples.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    if hi - lo < 1e-12 {
        return FRAC_PI_2;
    }
    let (theta, _) = scan_then_refine(|t| obj.eval(t), 0.0, PI, READOUT_SCAN_POINTS, ANGLE_TOL);
    theta.rem_euclid(PI)
}

/// Readout basis perpendicular to the predicted spectator Bloch vector,
/// `arg⟨e^{igφ}⟩ + π/2`. Falls back to `+π/2` when the prediction is undefined.
pub fn perpendicular_readout_angle(grid: &PhaseGrid, g: f64) -> f64 {
    let m = grid.scaled_moment(g);
    if m.norm() < UNDEFINED_SHARPNESS {
        return FRAC_PI_2;
    }
    wrap_angle(m.im.atan2(m.re) + FRAC_PI_2)
}

/// Feedforward rotations maximizing the outcome-averaged fidelity along X.
///
/// Rotating outcome branch `m` by `φ_c` maps `P(φ|m)` to `P(φ − φ_c|m)`, so
/// the fidelity `½ + ½Re(e^{iφ_c}⟨e^{iφ}⟩_m)` peaks at `φ_c = −arg⟨e^{iφ}⟩_m`.
pub fn optimal_compensation(grid: &PhaseGrid, theta_m: f64, g: f64) -> Compensation {
    let angle = |outcome: u8| {
        let m = SpectatorMeasurement { g, basis_angle: theta_m, outcome };
        match bayes_update(grid, &m) {
            Ok(post) => post.grid.stats().circular_mean.map(|mu| -mu).unwrap_or(0.0),
            Err(_) => 0.0,
        }
    };
    Compensation { phi_c0: angle(0), phi_c1: angle(1) }
}

/// Fidelity along X after applying per-outcome rotations, averaged over
/// outcomes (the quantity [`optimal_compensation`] maximizes).
pub fn compensated_fidelity(grid: &PhaseGrid, theta_m: f64, g: f64, comp: Compensation) -> f64 {
    [0u8, 1]
        .iter()
        .map(|&outcome| {
            let m = SpectatorMeasurement { g, basis_angle: theta_m, outcome };
            let h = grid.spacing();
            grid.density
                .iter()
                .enumerate()
                .map(|(j, p)| {
                    let phi = grid.phi(j);
                    0.5 * (1.0 + (phi + comp.for_outcome(outcome)).cos()) * grid.sample(j, |x| m.likelihood(x)) * p * h
                })
                .sum::<f64>()
        })
        .sum()
}

/// Posterior after the gate-based step:
/// `½[1 + s sin(g_k φ)] P(φ) + ½[1 − s sin(g_k φ′)] P(φ′)` with `φ′ = φ − φ_c`
/// and `s = +1` for [`FlipBranch::Minus`].
///
/// The flipped branch is weighted at its pre-shift phase, which conserves
/// mass exactly.
pub fn gate_posterior(prior: &PhaseGrid, g_k: f64, phi_c: f64, branch: FlipBranch) -> Result<PhaseGrid> {
    gate_posterior_about(prior, g_k, 0.0, phi_c, branch)
}

/// [`gate_posterior`] with the spectator aligned to `center`, i.e. branch
/// weights `½[1 ± s sin(g_k(φ − center))]`.
pub fn gate_posterior_about(
    prior: &PhaseGrid,
    g_k: f64,
    center: f64,
    phi_c: f64,
    branch: FlipBranch,
) -> Result<PhaseGrid> {
    let s = branch.sign();
    let weight = |j: usize| prior.sample(j, |phi| (g_k * (phi - center)).sin());
    let n = prior.n_points();
    let stay: Vec<f64> = (0..n).map(|j| 0.5 * (1.0 + s * weight(j)) * prior.density[j]).collect();
    let flip =
        PhaseGrid { density: (0..n).map(|j| 0.5 * (1.0 - s * weight(j)) * prior.density[j]).collect() }.shifted(phi_c);
    let density = stay.iter().zip(&flip.density).map(|(a, b)| a + b).collect();
    let out = PhaseGrid { density };
    out.validate()?;
    Ok(out)
}

/// Bloch vector length of the memory for a phase distribution (the sharpness).
pub fn bloch_vector_length(grid: &PhaseGrid) -> f64 {
    grid.first_moment().norm()
}
