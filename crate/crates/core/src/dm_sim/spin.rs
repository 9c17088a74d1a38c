//! Single-spin 2×2 algebra and electron-conditioned propagators.
//!
//! Frequencies are in kHz and times in µs throughout, so a precession angle
//! is `2π · f · t · 1e-3`.

use std::ops::Mul;

use num_complex::Complex64;

use super::NuclearSpinSpec;

const KHZ_US: f64 = 1e-3;

pub(crate) fn angle(f_khz: f64, t_us: f64) -> f64 {
    std::f64::consts::TAU * f_khz * t_us * KHZ_US
}

/// Row-major 2×2 complex matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat2(pub [[Complex64; 2]; 2]);

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

impl Mat2 {
    pub const IDENTITY: Mat2 = Mat2([[ONE, ZERO], [ZERO, ONE]]);
    pub const X: Mat2 = Mat2([[ZERO, ONE], [ONE, ZERO]]);
    pub const Y: Mat2 = Mat2([[ZERO, Complex64::new(0.0, -1.0)], [I, ZERO]]);
    pub const Z: Mat2 = Mat2([[ONE, ZERO], [ZERO, Complex64::new(-1.0, 0.0)]]);

    pub fn adjoint(&self) -> Mat2 {
        let m = &self.0;
        Mat2([[m[0][0].conj(), m[1][0].conj()], [m[0][1].conj(), m[1][1].conj()]])
    }

    pub fn is_diagonal(&self) -> bool {
        self.0[0][1] == ZERO && self.0[1][0] == ZERO
    }

    pub fn scale(&self, s: Complex64) -> Mat2 {
        let m = &self.0;
        Mat2([[m[0][0] * s, m[0][1] * s], [m[1][0] * s, m[1][1] * s]])
    }

    pub fn add(&self, o: &Mat2) -> Mat2 {
        let (a, b) = (&self.0, &o.0);
        Mat2([[a[0][0] + b[0][0], a[0][1] + b[0][1]], [a[1][0] + b[1][0], a[1][1] + b[1][1]]])
    }

    /// `max |U†U − I|`.
    pub fn unitarity_error(&self) -> f64 {
        let p = self.adjoint() * *self;
        let d = p.add(&Mat2::IDENTITY.scale(-ONE));
        d.0.iter().flatten().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// `exp(−i θ/2 (n·σ))` for a unit axis `n`.
    pub fn rotation(theta: f64, n: [f64; 3]) -> Mat2 {
        let (s, c) = (0.5 * theta).sin_cos();
        let [nx, ny, nz] = n;
        Mat2([
            [Complex64::new(c, -s * nz), Complex64::new(-s * ny, -s * nx)],
            [Complex64::new(s * ny, -s * nx), Complex64::new(c, s * nz)],
        ])
    }

    pub fn rz(theta: f64) -> Mat2 {
        Mat2::rotation(theta, [0.0, 0.0, 1.0])
    }

    pub fn rx(theta: f64) -> Mat2 {
        Mat2::rotation(theta, [1.0, 0.0, 0.0])
    }

    /// Projector `½(I ± Y)`.
    pub fn y_projector(plus: bool) -> Mat2 {
        let s = if plus { 0.5 } else { -0.5 };
        Mat2::IDENTITY.scale(Complex64::new(0.5, 0.0)).add(&Mat2::Y.scale(Complex64::new(s, 0.0)))
    }

    /// `exp(−i 2π (a I_z + b I_x) t)` with frequencies in kHz, `t` in µs.
    pub fn precession(a_khz: f64, b_khz: f64, t_us: f64) -> Mat2 {
        let f = a_khz.hypot(b_khz);
        if f == 0.0 {
            return Mat2::IDENTITY;
        }
        Mat2::rotation(angle(f, t_us), [b_khz / f, 0.0, a_khz / f])
    }
}

impl Mul for Mat2 {
    type Output = Mat2;

    fn mul(self, o: Mat2) -> Mat2 {
        let (a, b) = (&self.0, &o.0);
        let e = |i: usize, j: usize| a[i][0] * b[0][j] + a[i][1] * b[1][j];
        Mat2([[e(0, 0), e(0, 1)], [e(1, 0), e(1, 1)]])
    }
}

/// Electron-conditioned propagators `(U0, U1)` over `t_us`:
/// `U0 = exp(−i2πω_l t I_z)`, `U1 = exp(−i2π[(ω_l − A∥)I_z + A⊥I_x]t)`.
pub fn build_propagators(spec: &NuclearSpinSpec, omega_l_khz: f64, t_us: f64) -> (Mat2, Mat2) {
    (Mat2::precession(omega_l_khz, 0.0, t_us), Mat2::precession(omega_l_khz - spec.a_par_khz, spec.a_perp_khz, t_us))
}

/// Nuclear precession frequency with the electron in `|1⟩`.
pub fn f1_khz(spec: &NuclearSpinSpec, omega_l_khz: f64) -> f64 {
    (omega_l_khz - spec.a_par_khz).hypot(spec.a_perp_khz)
}

/// Rotating-frame frequency, the mean of the two conditional frequencies.
pub fn frame_frequency_khz(spec: &NuclearSpinSpec, omega_l_khz: f64) -> f64 {
    0.5 * (omega_l_khz + f1_khz(spec, omega_l_khz))
}

/// Difference of the conditional frequencies, `ω_l − f₁`. Equals `A∥`
/// when `A⊥ = 0`.
pub fn effective_coupling_khz(spec: &NuclearSpinSpec, omega_l_khz: f64) -> f64 {
    omega_l_khz - f1_khz(spec, omega_l_khz)
}

/// Tilt of the electron-|1⟩ precession axis away from Z, in radians.
pub fn precession_tilt(spec: &NuclearSpinSpec, omega_l_khz: f64) -> f64 {
    spec.a_perp_khz.atan2(omega_l_khz - spec.a_par_khz)
}
