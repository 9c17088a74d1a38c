//! Nuclear-register density matrix with per-spin rotating frames.

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::spin::Mat2;
use crate::error::{Error, Result};

pub const HERMITIAN_TOL: f64 = 1e-10;
pub const TRACE_TOL: f64 = 1e-10;
pub const POSITIVITY_TOL: f64 = 1e-9;

/// Density matrix of the nuclear register.
///
/// The electron is reset to `|0⟩` after every operation, so only the
/// nuclear factor is stored; [`DensityState::to_full_matrix`] appends the
/// electron. Nucleus `q` is tensor factor `q` (the first listed is the most
/// significant). `frames[q]` maps the rotating frame of nucleus `q` to the
/// lab frame.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityState {
    n: usize,
    rho: Vec<Complex64>,
    pub(crate) frames: Vec<Mat2>,
    memory: usize,
}

/// Single-qubit states used for initialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialState {
    PlusX,
    PlusY,
    Zero,
}

impl InitialState {
    pub fn density(self) -> Mat2 {
        let h = Complex64::new(0.5, 0.0);
        let (one, zero) = (Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0));
        match self {
            InitialState::PlusX => Mat2([[h, h], [h, h]]),
            InitialState::PlusY => Mat2([[h, Complex64::new(0.0, -0.5)], [Complex64::new(0.0, 0.5), h]]),
            InitialState::Zero => Mat2([[one, zero], [zero, zero]]),
        }
    }

    pub fn bloch(self) -> [f64; 3] {
        match self {
            InitialState::PlusX => [1.0, 0.0, 0.0],
            InitialState::PlusY => [0.0, 1.0, 0.0],
            InitialState::Zero => [0.0, 0.0, 1.0],
        }
    }
}

impl DensityState {
    /// Product state from single-nucleus density matrices, all frames at
    /// identity.
    pub fn product(states: &[Mat2], memory: usize) -> Result<Self> {
        if states.is_empty() || memory >= states.len() {
            return Err(crate::error::invalid("register needs a memory nucleus"));
        }
        let mut rho = vec![Complex64::new(1.0, 0.0)];
        let mut dim = 1;
        for s in states {
            let next = dim * 2;
            let mut out = vec![Complex64::new(0.0, 0.0); next * next];
            for r in 0..dim {
                for c in 0..dim {
                    let v = rho[r * dim + c];
                    for a in 0..2 {
                        for b in 0..2 {
                            out[(2 * r + a) * next + 2 * c + b] = v * s.0[a][b];
                        }
                    }
                }
            }
            rho = out;
            dim = next;
        }
        Ok(Self { n: states.len(), rho, frames: vec![Mat2::IDENTITY; states.len()], memory })
    }

    pub fn n_nuclei(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        1 << self.n
    }

    pub fn memory_index(&self) -> usize {
        self.memory
    }

    pub fn frame(&self, q: usize) -> Mat2 {
        self.frames[q]
    }

    /// Row-major nuclear density matrix.
    pub fn matrix(&self) -> &[Complex64] {
        &self.rho
    }

    pub(crate) fn rho_mut(&mut self) -> &mut [Complex64] {
        &mut self.rho
    }

    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.rho[r * self.dim() + c]
    }

    /// Full matrix including the electron, ordered nuclei ⊗ electron with
    /// the electron in `|0⟩⟨0|`.
    pub fn to_full_matrix(&self) -> Vec<Complex64> {
        let d = self.dim();
        let full = 2 * d;
        let mut out = vec![Complex64::new(0.0, 0.0); full * full];
        for r in 0..d {
            for c in 0..d {
                out[(2 * r) * full + 2 * c] = self.rho[r * d + c];
            }
        }
        out
    }

    fn stride(&self, q: usize) -> usize {
        1 << (self.n - 1 - q)
    }

    /// `ρ ← U_q ρ U_q†` for a 2×2 operator on nucleus `q`. Also used with
    /// Hermitian projectors.
    pub fn apply_1q(&mut self, q: usize, u: &Mat2) {
        let d = self.dim();
        let s = self.stride(q);
        let m = &u.0;
        let rho = &mut self.rho;
        // left multiplication
        for r0 in (0..d).filter(|r| r & s == 0) {
            let r1 = r0 | s;
            for c in 0..d {
                let (a, b) = (rho[r0 * d + c], rho[r1 * d + c]);
                rho[r0 * d + c] = m[0][0] * a + m[0][1] * b;
                rho[r1 * d + c] = m[1][0] * a + m[1][1] * b;
            }
        }
        // right multiplication by U†
        let (c00, c01, c10, c11) = (m[0][0].conj(), m[0][1].conj(), m[1][0].conj(), m[1][1].conj());
        for r in 0..d {
            let row = &mut rho[r * d..(r + 1) * d];
            for k0 in (0..d).filter(|k| k & s == 0) {
                let k1 = k0 | s;
                let (a, b) = (row[k0], row[k1]);
                row[k0] = a * c00 + b * c01;
                row[k1] = a * c10 + b * c11;
            }
        }
    }

    /// `ρ_ij ← d_i ρ_ij d_j*` for a diagonal operator given by its diagonal.
    pub fn apply_diagonal(&mut self, diag: &[Complex64]) {
        let d = self.dim();
        for (r, &dr) in diag.iter().enumerate().take(d) {
            for (c, dc) in diag.iter().enumerate().take(d) {
                self.rho[r * d + c] *= dr * dc.conj();
            }
        }
    }

    /// Applies a rotation to nucleus `q` in its rotating frame,
    /// `V R V†` in the lab.
    pub fn rotate_in_frame(&mut self, q: usize, r: &Mat2) {
        let v = self.frames[q];
        self.apply_1q(q, &(v * *r * v.adjoint()));
    }

    /// In-frame rotation that the frame follows, so the reported state is
    /// unchanged at this instant (used for echo pulses).
    pub fn pulse_tracked(&mut self, q: usize, r: &Mat2) {
        let v = self.frames[q];
        let lab = v * *r * v.adjoint();
        self.apply_1q(q, &lab);
        self.frames[q] = lab * v;
    }

    /// Advances the frame of nucleus `q` by a lab-frame free evolution.
    pub fn advance_frame(&mut self, q: usize, u: &Mat2) {
        self.frames[q] = *u * self.frames[q];
    }

    /// `a·self + b·other`, elementwise.
    pub fn mix(&mut self, a: f64, other: &DensityState, b: f64) {
        for (x, y) in self.rho.iter_mut().zip(&other.rho) {
            *x = *x * a + *y * b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.rho.iter_mut().for_each(|x| *x *= s);
    }

    pub fn trace(&self) -> f64 {
        let d = self.dim();
        (0..d).map(|i| self.rho[i * d + i].re).sum()
    }

    /// Removes all coherences in the lab basis, keeping populations.
    pub fn dephase_all(&mut self) {
        let d = self.dim();
        for r in 0..d {
            for c in 0..d {
                if r != c {
                    self.rho[r * d + c] = Complex64::new(0.0, 0.0);
                }
            }
        }
    }

    /// `ρ ← ½(ρ + ρ†)`.
    pub fn symmetrize(&mut self) {
        let d = self.dim();
        for r in 0..d {
            self.rho[r * d + r].im = 0.0;
            for c in r + 1..d {
                let avg = 0.5 * (self.rho[r * d + c] + self.rho[c * d + r].conj());
                self.rho[r * d + c] = avg;
                self.rho[c * d + r] = avg.conj();
            }
        }
    }

    pub fn hermiticity_error(&self) -> f64 {
        let d = self.dim();
        let mut err: f64 = 0.0;
        for r in 0..d {
            for c in r..d {
                err = err.max((self.rho[r * d + c] - self.rho[c * d + r].conj()).norm());
            }
        }
        err
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let d = self.dim();
        let mut m = DMatrix::from_row_slice(d, d, &self.rho);
        // exact Hermitian input for the eigensolver
        m = (&m + m.adjoint()) * Complex64::new(0.5, 0.0);
        m.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Audits Hermiticity, unit trace and positivity.
    pub fn check(&self) -> Result<()> {
        let herm = self.hermiticity_error();
        let tr = self.trace();
        let min_eig = self.min_eigenvalue();
        if herm > HERMITIAN_TOL || (tr - 1.0).abs() > TRACE_TOL || min_eig < -POSITIVITY_TOL {
            return Err(Error::CorruptedState(format!(
                "hermiticity {herm:.3e}, trace {tr:.12}, min eigenvalue {min_eig:.3e}"
            )));
        }
        Ok(())
    }

    /// Reduced lab-frame density matrix of nucleus `q`.
    pub fn reduced(&self, q: usize) -> Mat2 {
        let d = self.dim();
        let s = self.stride(q);
        let mut out = [[Complex64::new(0.0, 0.0); 2]; 2];
        for i in (0..d).filter(|i| i & s == 0) {
            for (a, row) in out.iter_mut().enumerate() {
                for (b, o) in row.iter_mut().enumerate() {
                    *o += self.rho[(i | (a * s)) * d + (i | (b * s))];
                }
            }
        }
        Mat2(out)
    }

    /// Bloch vector of nucleus `q` in its rotating frame.
    pub fn bloch(&self, q: usize) -> [f64; 3] {
        let v = self.frames[q];
        let r = v.adjoint() * self.reduced(q) * v;
        let m = &r.0;
        [2.0 * m[1][0].re, 2.0 * m[1][0].im, m[0][0].re - m[1][1].re]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn three() -> DensityState {
        let s = [InitialState::PlusX.density(), InitialState::PlusY.density(), InitialState::Zero.density()];
        DensityState::product(&s, 1).unwrap()
    }

    #[test]
    fn product_state_marginals() {
        let st = three();
        st.check().unwrap();
        assert_eq!(st.dim(), 8);
        let close = |a: [f64; 3], b: [f64; 3]| a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-14);
        assert!(close(st.bloch(0), [1.0, 0.0, 0.0]));
        assert!(close(st.bloch(1), [0.0, 1.0, 0.0]));
        assert!(close(st.bloch(2), [0.0, 0.0, 1.0]));
    }

    #[test]
    fn pulse_tracked_leaves_reported_state() {
        let mut st = three();
        st.rotate_in_frame(0, &Mat2::rz(0.4));
        let before = st.bloch(0);
        st.pulse_tracked(0, &Mat2::rx(std::f64::consts::PI));
        let after = st.bloch(0);
        for (a, b) in before.iter().zip(&after) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn rotate_in_frame_moves_phase() {
        let mut st = three();
        st.rotate_in_frame(0, &Mat2::rz(std::f64::consts::FRAC_PI_2));
        let b = st.bloch(0);
        assert!((b[1] - 1.0).abs() < 1e-14, "{b:?}");
    }

    #[test]
    fn diagonal_matches_generic() {
        let mut a = three();
        let mut b = a.clone();
        let u = Mat2::rz(0.7);
        a.apply_1q(2, &u);
        a.apply_1q(0, &u);
        let diag: Vec<Complex64> = (0..8)
            .map(|i| {
                let bit = |q: usize| (i >> (2 - q)) & 1;
                u.0[bit(0)][bit(0)] * u.0[bit(2)][bit(2)]
            })
            .collect();
        b.apply_diagonal(&diag);
        for (x, y) in a.matrix().iter().zip(b.matrix()) {
            assert!((x - y).norm() < 1e-15);
        }
    }

    #[test]
    fn full_matrix_appends_electron_ground_state() {
        let st = three();
        let full = st.to_full_matrix();
        assert_eq!(full.len(), 256);
        let tr: f64 = (0..16).map(|i| full[i * 16 + i].re).sum();
        assert!((tr - 1.0).abs() < 1e-15);
        assert_eq!(full[16 + 1], Complex64::new(0.0, 0.0));
    }

    #[test]
    fn projectors_split_trace() {
        let st = three();
        let mut total = 0.0;
        for plus in [true, false] {
            let mut b = st.clone();
            b.apply_1q(1, &Mat2::y_projector(plus));
            total += b.trace();
            if plus {
                assert!((b.trace() - 1.0).abs() < 1e-14);
            }
        }
        assert!((total - 1.0).abs() < 1e-14);
    }

    #[test]
    fn check_flags_corruption() {
        let mut st = three();
        st.scale(1.1);
        assert!(matches!(st.check(), Err(Error::CorruptedState(_))));
    }

    #[test]
    fn dephasing_keeps_populations() {
        let mut st = three();
        let z = st.bloch(2);
        st.dephase_all();
        assert_eq!(st.bloch(2), z);
        assert_eq!(st.bloch(0), [0.0, 0.0, 0.0]);
        st.check().unwrap();
    }
}
