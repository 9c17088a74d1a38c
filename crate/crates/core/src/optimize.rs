//! Small numerical optimizers: golden-section line search and a damped
//! Gauss-Newton (Levenberg-Marquardt) least-squares solver with
//! central-difference Jacobians.

const INV_PHI: f64 = 0.618_033_988_749_894_8;

/// Golden-section search for a maximum of `f` on `[a, b]`.
///
/// Stops when the bracket is narrower than `tol`. Returns `(x, f(x))`.
pub fn golden_section_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    // 200 iterations shrink any bracket below f64 resolution
    for _ in 0..200 {
        if (b - a).abs() <= tol {
            break;
        }
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

/// Coarse scan over `n` equally spaced points of `[a, b)` followed by a
/// golden-section refinement around the best sample.
pub fn scan_then_refine(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize, tol: f64) -> (f64, f64) {
    let step = (b - a) / n as f64;
    let mut best = (a, f(a));
    for i in 1..n {
        let x = a + step * i as f64;
        let v = f(x);
        if v > best.1 {
            best = (x, v);
        }
    }
    let (x, v) = golden_section_max(&f, best.0 - step, best.0 + step, tol);
    if v >= best.1 {
        (x, v)
    } else {
        best
    }
}

/// Outcome of a least-squares minimization.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    pub params: Vec<f64>,
    /// Covariance estimate `(JᵀJ)⁻¹` at the solution, row-major.
    pub covariance: Vec<f64>,
    pub chi_squared: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Box bounds for a single parameter.
#[derive(Debug, Clone, Copy)]
pub struct Bounds {
    pub lower: f64,
    pub upper: f64,
}

impl Bounds {
    pub const FREE: Bounds = Bounds { lower: f64::NEG_INFINITY, upper: f64::INFINITY };

    fn clamp(&self, x: f64) -> f64 {
        x.max(self.lower).min(self.upper)
    }
}

/// Minimizes `Σ r_i(p)²` where `residuals` returns the (already weighted)
/// residual vector. Parameters are projected onto `bounds` after each step.
pub fn levenberg_marquardt(
    residuals: impl Fn(&[f64]) -> Vec<f64>,
    start: &[f64],
    bounds: &[Bounds],
    max_iter: usize,
) -> LeastSquares {
    let n = start.len();
    assert_eq!(bounds.len(), n);
    let mut p: Vec<f64> = start.iter().zip(bounds).map(|(x, b)| b.clamp(*x)).collect();
    let mut r = residuals(&p);
    let mut chi2 = sum_sq(&r);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < max_iter {
        iterations += 1;
        let jac = jacobian(&residuals, &p, bounds);
        let (jtj, jtr) = normal_equations(&jac, &r, n);
        let mut accepted = false;
        while lambda < 1e16 {
            let mut a = jtj.clone();
            for i in 0..n {
                a[i * n + i] += lambda * jtj[i * n + i].max(1e-30);
            }
            let rhs: Vec<f64> = jtr.iter().map(|v| -v).collect();
            let Some(delta) = solve(&a, &rhs, n) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = p.iter().zip(&delta).zip(bounds).map(|((x, d), b)| b.clamp(x + d)).collect();
            let r_trial = residuals(&trial);
            let chi2_trial = sum_sq(&r_trial);
            if chi2_trial.is_finite() && chi2_trial <= chi2 {
                let small_step = trial.iter().zip(&p).all(|(t, x)| (t - x).abs() <= 1e-12 * x.abs().max(1e-12));
                let small_gain = chi2 - chi2_trial <= 1e-15 * chi2.max(1e-300);
                p = trial;
                r = r_trial;
                chi2 = chi2_trial;
                lambda = (lambda * 0.1).max(1e-12);
                accepted = true;
                if small_step || small_gain {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // no downhill step exists at any damping: a (local) minimum
            converged = true;
        }
        if converged {
            break;
        }
    }

    let jac = jacobian(&residuals, &p, bounds);
    let (jtj, _) = normal_equations(&jac, &r, n);
    let covariance = invert(&jtj, n).unwrap_or_else(|| vec![f64::INFINITY; n * n]);
    LeastSquares { params: p, covariance, chi_squared: chi2, iterations, converged }
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|x| x * x).sum()
}

fn jacobian(residuals: &impl Fn(&[f64]) -> Vec<f64>, p: &[f64], bounds: &[Bounds]) -> Vec<Vec<f64>> {
    let mut cols = Vec::with_capacity(p.len());
    for j in 0..p.len() {
        let h = 1e-6 * p[j].abs().max(1e-3);
        let mut hi = p.to_vec();
        let mut lo = p.to_vec();
        hi[j] = bounds[j].clamp(p[j] + h);
        lo[j] = bounds[j].clamp(p[j] - h);
        let span = hi[j] - lo[j];
        let rh = residuals(&hi);
        let rl = residuals(&lo);
        cols.push(rh.iter().zip(&rl).map(|(a, b)| (a - b) / span).collect());
    }
    cols
}

fn normal_equations(jac: &[Vec<f64>], r: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut jtj = vec![0.0; n * n];
    let mut jtr = vec![0.0; n];
    for i in 0..n {
        jtr[i] = jac[i].iter().zip(r).map(|(a, b)| a * b).sum();
        for k in 0..n {
            jtj[i * n + k] = jac[i].iter().zip(&jac[k]).map(|(a, b)| a * b).sum();
        }
    }
    (jtj, jtr)
}

/// Gaussian elimination with partial pivoting on a dense `n×n` system.
fn solve(a: &[f64], b: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut m = a.to_vec();
    let mut x = b.to_vec();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i * n + col].abs().total_cmp(&m[j * n + col].abs()))?;
        if m[piv * n + col].abs() < 1e-300 {
            return None;
        }
        if piv != col {
            for k in 0..n {
                m.swap(piv * n + k, col * n + k);
            }
            x.swap(piv, col);
        }
        for row in col + 1..n {
            let f = m[row * n + col] / m[col * n + col];
            for k in col..n {
                m[row * n + k] -= f * m[col * n + k];
            }
            x[row] -= f * x[col];
        }
    }
    for col in (0..n).rev() {
        let mut s = x[col];
        for k in col + 1..n {
            s -= m[col * n + k] * x[k];
        }
        x[col] = s / m[col * n + col];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

fn invert(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut inv = vec![0.0; n * n];
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let col = solve(a, &e, n)?;
        for i in 0..n {
            inv[i * n + j] = col[i];
        }
    }
    Some(inv)
}
