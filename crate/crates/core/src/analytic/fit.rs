//! Weighted least-squares fits of the XY and Z fidelity models.

use std::fmt::Write as _;

use super::{XyModel, ZModel};
use crate::error::{invalid, Result};
use crate::optimize::{levenberg_marquardt, Bounds, LeastSquares};

const MAX_ITER: usize = 500;

/// One measured (or simulated) fidelity point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DataPoint {
    pub n_rea: f64,
    pub fidelity: f64,
    /// One-sigma error bar; `None` fits unweighted.
    pub error: Option<f64>,
}

impl DataPoint {
    pub fn new(n_rea: f64, fidelity: f64, error: Option<f64>) -> Self {
        Self { n_rea, fidelity, error }
    }
}

/// Whether `g` is held fixed or fitted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GMode {
    Fixed(f64),
    Free { start: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct XyFitOptions {
    /// Fixed XY SPAM amplitude; `None` fits it.
    pub a_spam: Option<f64>,
    pub g: GMode,
}

impl Default for XyFitOptions {
    fn default() -> Self {
        Self { a_spam: None, g: GMode::Fixed(0.0) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ZFitOptions {
    /// Fixed Z SPAM amplitude; `None` fits it.
    pub a_spam_z: Option<f64>,
}

/// Named fit parameters with one-sigma uncertainties.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub names: Vec<String>,
    pub values: Vec<f64>,
    pub uncertainties: Vec<f64>,
    /// Parameters that were held fixed, reported alongside the fitted ones.
    pub fixed: Vec<(String, f64)>,
    pub chi_squared: f64,
    pub reduced_chi_squared: f64,
    pub converged: bool,
    /// A parameter ran off to its unbounded limit (e.g. `N_{1/e} → ∞`).
    pub unbounded: bool,
    pub iterations: usize,
}

impl FitResult {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.values[i])
            .or_else(|| self.fixed.iter().find(|(n, _)| n == name).map(|(_, v)| *v))
    }

    pub fn uncertainty(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.uncertainties[i])
    }

    /// `parameter,value,uncertainty` rows, fixed parameters with an empty
    /// uncertainty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("parameter,value,uncertainty\n");
        for ((n, v), u) in self.names.iter().zip(&self.values).zip(&self.uncertainties) {
            let _ = writeln!(out, "{n},{v:.10e},{u:.10e}");
        }
        for (n, v) in &self.fixed {
            let _ = writeln!(out, "{n},{v:.10e},");
        }
        let _ = writeln!(out, "chi_squared,{:.10e},", self.chi_squared);
        let _ = writeln!(out, "reduced_chi_squared,{:.10e},", self.reduced_chi_squared);
        out
    }

    /// Plain-text table: one column per parameter, fixed values marked.
    pub fn report(&self, label: &str) -> String {
        let mut out = String::new();
        let _ = write!(out, "{label:<12}");
        for (n, v) in &self.fixed {
            let _ = write!(out, " | {n} = fixed, {v}");
        }
        for ((n, v), u) in self.names.iter().zip(&self.values).zip(&self.uncertainties) {
            let _ = write!(out, " | {n} = {v:.4e} ± {u:.1e}");
        }
        let _ = write!(out, " | chi2_red = {:.2}", self.reduced_chi_squared);
        if !self.converged {
            out.push_str(" | NOT CONVERGED");
        }
        if self.unbounded {
            out.push_str(" | UNBOUNDED");
        }
        out.push('\n');
        out
    }
}

fn check_data(data: &[DataPoint], n_free: usize) -> Result<()> {
    if data.len() < 3 || data.len() <= n_free {
        return Err(invalid(format!("need at least 3 data points and more than {n_free}")));
    }
    for p in data {
        if !p.n_rea.is_finite() || !p.fidelity.is_finite() || p.n_rea < 0.0 {
            return Err(invalid("data must be finite with n_rea >= 0"));
        }
        if let Some(e) = p.error {
            if !(e > 0.0) {
                return Err(invalid("error bars must be positive"));
            }
        }
    }
    Ok(())
}

fn weighted(data: &[DataPoint], model: impl Fn(f64) -> f64) -> Vec<f64> {
    data.iter().map(|p| (model(p.n_rea) - p.fidelity) / p.error.unwrap_or(1.0)).collect()
}

/// Uncertainties from `(JᵀWJ)⁻¹`; without error bars the covariance is
/// scaled by the reduced χ².
fn finish(
    ls: LeastSquares,
    names: Vec<String>,
    fixed: Vec<(String, f64)>,
    data: &[DataPoint],
) -> (FitResult, Vec<f64>) {
    let n = names.len();
    let dof = (data.len() - n).max(1) as f64;
    let reduced = ls.chi_squared / dof;
    let scale = if data.iter().all(|p| p.error.is_some()) { 1.0 } else { reduced };
    let unc = (0..n).map(|i| (ls.covariance[i * n + i] * scale).max(0.0).sqrt()).collect();
    let res = FitResult {
        names,
        values: ls.params.clone(),
        uncertainties: unc,
        fixed,
        chi_squared: ls.chi_squared,
        reduced_chi_squared: reduced,
        converged: ls.converged,
        unbounded: false,
        iterations: ls.iterations,
    };
    (res, ls.params)
}

/// Fits `F_xy = ½ + ¼(1−A_SPAM)√ρ e^{−σ²/2}` over `a_par_te` and optionally
/// `A_SPAM` and `g`.
pub fn fit_fidelity_xy(data: &[DataPoint], opts: XyFitOptions) -> Result<FitResult> {
    let fit_spam = opts.a_spam.is_none();
    let fit_g = matches!(opts.g, GMode::Free { .. });
    check_data(data, 1 + fit_spam as usize + fit_g as usize)?;

    let unpack = |p: &[f64]| {
        let mut i = 0;
        let a_spam = opts.a_spam.unwrap_or_else(|| {
            i += 1;
            p[0]
        });
        let a_par_te = p[i];
        let g = match opts.g {
            GMode::Fixed(g) => g,
            GMode::Free { .. } => p[i + 1],
        };
        XyModel { a_spam, a_par_te, g }
    };

    // starting point: SPAM from the earliest point, a_par_te from a log scan
    let first = data.iter().min_by(|a, b| a.n_rea.total_cmp(&b.n_rea)).unwrap();
    let spam0 = (2.0 * (1.0 - first.fidelity)).clamp(0.0, 0.9);
    let g0 = match opts.g {
        GMode::Fixed(g) => g,
        GMode::Free { start } => start,
    };
    let chi = |m: XyModel| weighted(data, |n| m.eval(n)).iter().map(|r| r * r).sum::<f64>();
    let a0 = (0..=120)
        .map(|k| 1e-4 * 10f64.powf(k as f64 / 40.0))
        .min_by(|a, b| {
            let ma = XyModel { a_spam: opts.a_spam.unwrap_or(spam0), a_par_te: *a, g: g0 };
            let mb = XyModel { a_par_te: *b, ..ma };
            chi(ma).total_cmp(&chi(mb))
        })
        .unwrap();

    let mut start = Vec::new();
    let mut bounds = Vec::new();
    let mut names = Vec::new();
    if fit_spam {
        start.push(spam0);
        bounds.push(Bounds { lower: 0.0, upper: 1.0 });
        names.push("A_SPAM".to_string());
    }
    start.push(a0);
    bounds.push(Bounds { lower: 1e-12, upper: f64::INFINITY });
    names.push("A_par_t_e".to_string());
    if fit_g {
        start.push(g0);
        bounds.push(Bounds::FREE);
        names.push("g".to_string());
    }
    let mut fixed = Vec::new();
    if let Some(a) = opts.a_spam {
        fixed.push(("A_SPAM".to_string(), a));
    }
    if let GMode::Fixed(g) = opts.g {
        fixed.push(("g".to_string(), g));
    }

    let ls = levenberg_marquardt(|p| weighted(data, |n| unpack(p).eval(n)), &start, &bounds, MAX_ITER);
    Ok(finish(ls, names, fixed, data).0)
}

/// Fits `F_z = ½(1−A_SPAM_z) e^{−n/N_{1/e}} + ½`.
///
/// The decay is fitted as a rate `1/N_{1/e}` so flat data converges to a
/// zero rate, which is reported through [`FitResult::unbounded`].
pub fn fit_fidelity_z(data: &[DataPoint], opts: ZFitOptions) -> Result<FitResult> {
    const OFFSET: f64 = 0.5;
    let fit_spam = opts.a_spam_z.is_none();
    check_data(data, 1 + fit_spam as usize)?;
    let n_max = data.iter().map(|p| p.n_rea).fold(0.0, f64::max).max(1.0);

    let unpack = |p: &[f64]| {
        let (a, rate) = match opts.a_spam_z {
            Some(a) => (a, p[0]),
            None => (p[0], p[1]),
        };
        (a, rate)
    };
    let eval = |a: f64, rate: f64, n: f64| 0.5 * (1.0 - a) * (-n * rate).exp() + OFFSET;

    let first = data.iter().min_by(|a, b| a.n_rea.total_cmp(&b.n_rea)).unwrap();
    let spam0 = (2.0 * (1.0 - first.fidelity)).clamp(0.0, 0.9);
    let mut start = Vec::new();
    let mut bounds = Vec::new();
    if fit_spam {
        start.push(spam0);
        bounds.push(Bounds { lower: 0.0, upper: 1.0 });
    }
    start.push(1.0 / n_max);
    bounds.push(Bounds { lower: 0.0, upper: f64::INFINITY });

    let ls = levenberg_marquardt(
        |p| {
            let (a, rate) = unpack(p);
            weighted(data, |n| eval(a, rate, n))
        },
        &start,
        &bounds,
        MAX_ITER,
    );
    let mut names = Vec::new();
    if fit_spam {
        names.push("A_SPAM_z".to_string());
    }
    names.push("rate".to_string());
    let mut fixed = vec![("a".to_string(), OFFSET)];
    if let Some(a) = opts.a_spam_z {
        fixed.insert(0, ("A_SPAM_z".to_string(), a));
    }
    let (mut res, params) = finish(ls, names, fixed, data);

    // report N_{1/e} = 1/rate with first-order error propagation
    let ri = res.names.len() - 1;
    let rate = params[ri];
    let rate_unc = res.uncertainties[ri];
    res.names[ri] = "N_1e".to_string();
    if rate * n_max < 1e-6 {
        res.unbounded = true;
        res.values[ri] = f64::INFINITY;
        res.uncertainties[ri] = f64::INFINITY;
    } else {
        res.values[ri] = 1.0 / rate;
        res.uncertainties[ri] = rate_unc / (rate * rate);
    }
    Ok(res)
}

impl FitResult {
    /// The fitted XY model. Missing parameters fall back to zero.
    pub fn xy_model(&self) -> XyModel {
        XyModel {
            a_spam: self.get("A_SPAM").unwrap_or(0.0),
            a_par_te: self.get("A_par_t_e").unwrap_or(0.0),
            g: self.get("g").unwrap_or(0.0),
        }
    }

    pub fn z_model(&self) -> ZModel {
        ZModel {
            a_spam_z: self.get("A_SPAM_z").unwrap_or(0.0),
            n_1e: self.get("N_1e").unwrap_or(f64::INFINITY),
            offset: self.get("a").unwrap_or(0.5),
        }
    }
}
