//! Expected memory fidelity when the attempt count until success is
//! geometric, and the spectator count that maximizes it.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::analytic::{XyModel, ZModel};
use crate::error::{invalid, Error, Result};

/// Default truncation: residual geometric mass below this is assigned the
/// curve asymptote.
pub const DEFAULT_TAIL_EPS: f64 = 1e-9;
/// Crossover bisection stops once the bracket is narrower than this.
pub const CROSSOVER_TOL: f64 = 1e-7;
/// Summation length cap.
pub const MAX_TERMS: u64 = 200_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurveSource {
    Analytic,
    Simulated,
    External,
}

impl CurveSource {
    pub fn name(self) -> &'static str {
        match self {
            CurveSource::Analytic => "analytic",
            CurveSource::Simulated => "simulated",
            CurveSource::External => "external",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub n_rea: u64,
    pub fidelity: f64,
    pub stderr: f64,
}

/// Closed-form fidelity versus attempt count.
#[derive(Debug, Clone, PartialEq)]
pub enum CurveModel {
    Xy(XyModel),
    Z(ZModel),
    /// Equal-weight mean of the members.
    Average(Vec<CurveModel>),
    /// Pointwise maximum of the members.
    Max(Vec<CurveModel>),
}

impl CurveModel {
    /// Mean over the initial states `+X`, `+Y` and `|0⟩`.
    pub fn state_average(xy: XyModel, z: ZModel) -> Self {
        CurveModel::Average(vec![CurveModel::Xy(xy), CurveModel::Xy(xy), CurveModel::Z(z)])
    }

    pub fn eval(&self, n_rea: f64) -> f64 {
        match self {
            CurveModel::Xy(m) => m.eval(n_rea),
            CurveModel::Z(m) => m.eval(n_rea),
            CurveModel::Average(ms) => ms.iter().map(|m| m.eval(n_rea)).sum::<f64>() / ms.len() as f64,
            CurveModel::Max(ms) => ms.iter().map(|m| m.eval(n_rea)).fold(f64::NEG_INFINITY, f64::max),
        }
    }

    pub fn asymptote(&self) -> f64 {
        match self {
            CurveModel::Xy(m) => m.asymptote(),
            CurveModel::Z(m) => m.asymptote(),
            CurveModel::Average(ms) => ms.iter().map(|m| m.asymptote()).sum::<f64>() / ms.len() as f64,
            CurveModel::Max(ms) => ms.iter().map(|m| m.asymptote()).fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Fidelity at integer attempt counts, optionally backed by a fitted model
/// that fills gaps and the tail.
#[derive(Debug, Clone, PartialEq)]
pub struct FidelityCurve {
    points: Vec<CurvePoint>,
    source: CurveSource,
    model: Option<CurveModel>,
}

impl FidelityCurve {
    pub fn new(points: Vec<CurvePoint>, source: CurveSource) -> Result<Self> {
        if points.is_empty() {
            return Err(invalid("curve needs at least one point"));
        }
        for w in points.windows(2) {
            if w[1].n_rea <= w[0].n_rea {
                return Err(invalid(format!("n_rea must increase strictly ({} after {})", w[1].n_rea, w[0].n_rea)));
            }
        }
        for p in &points {
            if !(0.0..=1.0).contains(&p.fidelity) {
                return Err(invalid(format!("fidelity {} at n_rea {} outside [0, 1]", p.fidelity, p.n_rea)));
            }
            if !(p.stderr >= 0.0) {
                return Err(invalid(format!("stderr at n_rea {} must be nonnegative", p.n_rea)));
            }
        }
        Ok(Self { points, source, model: None })
    }

    /// A curve given only by its model.
    pub fn from_model(model: CurveModel) -> Self {
        Self { points: Vec::new(), source: CurveSource::Analytic, model: Some(model) }
    }

    pub fn with_model(mut self, model: CurveModel) -> Self {
        self.model = Some(model);
        self
    }

    pub fn points(&self) -> &[CurvePoint] {
        &self.points
    }

    pub fn source(&self) -> CurveSource {
        self.source
    }

    pub fn model(&self) -> Option<&CurveModel> {
        self.model.as_ref()
    }

    /// Measured value when present, then the model, then linear
    /// interpolation inside the measured range.
    pub fn fidelity_at(&self, n: u64) -> Result<f64> {
        match self.points.binary_search_by_key(&n, |p| p.n_rea) {
            Ok(i) => Ok(self.points[i].fidelity),
            Err(i) => {
                if let Some(m) = &self.model {
                    return Ok(m.eval(n as f64).clamp(0.0, 1.0));
                }
                if i == 0 || i == self.points.len() {
                    return Err(Error::Coverage(format!("no data or model at n_rea = {n}")));
                }
                let (a, b) = (self.points[i - 1], self.points[i]);
                let t = (n - a.n_rea) as f64 / (b.n_rea - a.n_rea) as f64;
                Ok(a.fidelity + t * (b.fidelity - a.fidelity))
            }
        }
    }

    fn tail_value(&self, covered_to: u64) -> Result<f64> {
        if let Some(m) = &self.model {
            return Ok(m.asymptote());
        }
        match self.points.last() {
            Some(last) if last.n_rea >= covered_to => Ok(last.fidelity),
            _ => Err(Error::Coverage(format!(
                "curve ends at n_rea = {} but the geometric tail needs n_rea = {covered_to}; supply a model",
                self.points.last().map_or(0, |p| p.n_rea)
            ))),
        }
    }

    /// Per-`n` maximum over several curves, the idealized "decide per
    /// instance" strategy that ignores decision overhead.
    pub fn envelope(curves: &[&FidelityCurve]) -> Result<Self> {
        if curves.is_empty() {
            return Err(invalid("envelope needs at least one curve"));
        }
        let mut ns: Vec<u64> = curves.iter().flat_map(|c| c.points.iter().map(|p| p.n_rea)).collect();
        ns.sort_unstable();
        ns.dedup();
        let model = curves.iter().map(|c| c.model.clone()).collect::<Option<Vec<_>>>().map(CurveModel::Max);
        let mut points = Vec::with_capacity(ns.len());
        for n in ns {
            let mut best = f64::NEG_INFINITY;
            for c in curves {
                best = best.max(c.fidelity_at(n)?);
            }
            points.push(CurvePoint { n_rea: n, fidelity: best, stderr: 0.0 });
        }
        let source = curves[0].source;
        Ok(Self { points, source, model })
    }
}

fn check_p(p: f64) -> Result<()> {
    if p > 0.0 && p <= 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("success probability must lie in (0, 1], got {p}")))
    }
}

/// `P(n) = (1−p)^{n−1} p`.
pub fn success_pmf(p: f64, n: u64) -> Result<f64> {
    check_p(p)?;
    if n == 0 {
        return Err(invalid("attempt index starts at 1"));
    }
    if p == 1.0 {
        return Ok(if n == 1 { 1.0 } else { 0.0 });
    }
    Ok(((n - 1) as f64 * (-p).ln_1p()).exp() * p)
}

/// Smallest `N` with residual mass `(1−p)^N < tail_eps`.
pub fn truncation_length(p: f64, tail_eps: f64) -> Result<u64> {
    check_p(p)?;
    if !(tail_eps > 0.0 && tail_eps < 1.0) {
        return Err(invalid(format!("tail_eps must lie in (0, 1), got {tail_eps}")));
    }
    if p == 1.0 {
        return Ok(1);
    }
    let n = (tail_eps.ln() / (-p).ln_1p()).floor() + 1.0;
    if n > MAX_TERMS as f64 {
        return Err(Error::ResourceLimit(format!("p = {p} needs {n:.0} terms at tail_eps = {tail_eps}")));
    }
    Ok(n.max(1.0) as u64)
}

/// `F̄ = Σ_{n≥1} F(n) P(n)`, truncated where the residual mass drops below
/// `tail_eps`; the residual mass is weighted by the curve asymptote.
pub fn expected_fidelity(curve: &FidelityCurve, p: f64, tail_eps: f64) -> Result<f64> {
    let n_max = truncation_length(p, tail_eps)?;
    let q = 1.0 - p;
    let mut w = p;
    let mut sum = 0.0;
    let mut comp = 0.0;
    for n in 1..=n_max {
        let term = curve.fidelity_at(n)? * w - comp;
        let t = sum + term;
        comp = (t - sum) - term;
        sum = t;
        w *= q;
    }
    let residual = if p == 1.0 { 0.0 } else { (n_max as f64 * (-p).ln_1p()).exp() };
    if residual > 0.0 {
        sum += residual * curve.tail_value(n_max)?;
    }
    Ok(sum)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Crossover {
    pub p: f64,
    pub k_low: usize,
    pub k_high: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyReport {
    pub p_grid: Vec<f64>,
    pub fbar_by_k: BTreeMap<usize, Vec<f64>>,
    pub best_k: Vec<usize>,
    pub crossovers: Vec<Crossover>,
}

impl StrategyReport {
    /// Rows `p,K,fbar`, ordered by `p` then `K`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("p,K,fbar\n");
        for (i, p) in self.p_grid.iter().enumerate() {
            for (k, f) in &self.fbar_by_k {
                let _ = writeln!(s, "{p},{k},{}", f[i]);
            }
        }
        s
    }

    pub fn best_csv(&self) -> String {
        let mut s = String::from("p,best_K\n");
        for (p, k) in self.p_grid.iter().zip(&self.best_k) {
            let _ = writeln!(s, "{p},{k}");
        }
        s
    }

    pub fn crossovers_csv(&self) -> String {
        let mut s = String::from("p,K_low,K_high\n");
        for c in &self.crossovers {
            let _ = writeln!(s, "{},{},{}", c.p, c.k_low, c.k_high);
        }
        s
    }

    /// `p` values where the best `K` changes between adjacent grid points.
    pub fn transitions(&self) -> Vec<(f64, f64, usize, usize)> {
        let mut out = Vec::new();
        for i in 1..self.best_k.len() {
            if self.best_k[i] != self.best_k[i - 1] {
                out.push((self.p_grid[i - 1], self.p_grid[i], self.best_k[i - 1], self.best_k[i]));
            }
        }
        out
    }
}

/// Evaluates `F̄` per `(K, p)`, picks the best `K` (ties to the smaller) and
/// bisects every sign change of a pairwise difference.
pub fn strategy_sweep(
    curves: &BTreeMap<usize, FidelityCurve>,
    p_grid: &[f64],
    tail_eps: f64,
) -> Result<StrategyReport> {
    if curves.is_empty() {
        return Err(invalid("strategy sweep needs at least one curve"));
    }
    if p_grid.is_empty() {
        return Err(invalid("p grid is empty"));
    }
    for &p in p_grid {
        check_p(p)?;
    }
    for w in p_grid.windows(2) {
        if w[1] <= w[0] {
            return Err(invalid("p grid must increase strictly"));
        }
    }
    let mut fbar_by_k = BTreeMap::new();
    for (&k, c) in curves {
        let vals = p_grid.iter().map(|&p| expected_fidelity(c, p, tail_eps)).collect::<Result<Vec<_>>>()?;
        fbar_by_k.insert(k, vals);
    }
    let best_k = (0..p_grid.len())
        .map(|i| {
            let mut best = (usize::MAX, f64::NEG_INFINITY);
            for (&k, v) in &fbar_by_k {
                if v[i] > best.1 {
                    best = (k, v[i]);
                }
            }
            best.0
        })
        .collect();

    let ks: Vec<usize> = curves.keys().copied().collect();
    let mut crossovers = Vec::new();
    for (a, &ka) in ks.iter().enumerate() {
        for &kb in &ks[a + 1..] {
            let diff = |p: f64| -> Result<f64> {
                Ok(expected_fidelity(&curves[&kb], p, tail_eps)? - expected_fidelity(&curves[&ka], p, tail_eps)?)
            };
            let d: Vec<f64> = (0..p_grid.len()).map(|i| fbar_by_k[&kb][i] - fbar_by_k[&ka][i]).collect();
            // sign changes between consecutive nonzero differences; exact
            // zeros in between locate the crossing directly
            let mut prev: Option<usize> = None;
            for i in 0..p_grid.len() {
                if d[i] == 0.0 {
                    continue;
                }
                if let Some(j) = prev {
                    if d[j] * d[i] < 0.0 {
                        let p = if i > j + 1 { p_grid[j + 1] } else { bisect_root(&diff, p_grid[j], p_grid[i], d[j])? };
                        crossovers.push(Crossover { p, k_low: ka, k_high: kb });
                    }
                }
                prev = Some(i);
            }
        }
    }
    crossovers.sort_by(|x, y| x.p.total_cmp(&y.p).then(x.k_low.cmp(&y.k_low)).then(x.k_high.cmp(&y.k_high)));
    Ok(StrategyReport { p_grid: p_grid.to_vec(), fbar_by_k, best_k, crossovers })
}

fn bisect_root(f: &dyn Fn(f64) -> Result<f64>, mut lo: f64, mut hi: f64, f_lo: f64) -> Result<f64> {
    let lo_sign = f_lo.signum();
    while hi - lo > CROSSOVER_TOL {
        let mid = 0.5 * (lo + hi);
        let v = f(mid)?;
        if v == 0.0 {
            return Ok(mid);
        }
        if v.signum() == lo_sign {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Uniform grid of `n` points on `[lo, hi]`.
pub fn linear_p_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    check_p(lo)?;
    check_p(hi)?;
    if n < 2 || hi <= lo {
        return Err(invalid("p grid needs n ≥ 2 and lo < hi"));
    }
    Ok((0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect())
}

/// Logarithmic grid of `n` points on `[lo, hi]`.
pub fn log_p_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    check_p(lo)?;
    check_p(hi)?;
    if n < 2 || hi <= lo {
        return Err(invalid("p grid needs n ≥ 2 and lo < hi"));
    }
    let (a, b) = (lo.ln(), hi.ln());
    Ok((0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect())
}

/// Fitted gate-based curves for `K = 0, 1, 2`, averaged over the memory
/// initial states `+X`, `+Y` and `|0⟩`.
pub fn reference_gate_curves() -> BTreeMap<usize, FidelityCurve> {
    let table = [
        (0, 0.066, 0.0, 0.0271, 0.1033, 1950.0),
        (1, 0.081, 1.49, 0.0314, 0.1141, 3000.0),
        (2, 0.125, 0.588, 0.0300, 0.0961, 2600.0),
    ];
    table
        .into_iter()
        .map(|(k, a_spam, g, a, a_z, n_1e)| {
            let xy = XyModel { a_spam, a_par_te: a, g };
            let z = ZModel { a_spam_z: a_z, n_1e, offset: 0.5 };
            (k, FidelityCurve::from_model(CurveModel::state_average(xy, z)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn constant(c: f64, n_last: u64) -> FidelityCurve {
        let pts = (0..=n_last).map(|n| CurvePoint { n_rea: n, fidelity: c, stderr: 0.0 }).collect();
        FidelityCurve::new(pts, CurveSource::External).unwrap()
    }

    #[test]
    fn pmf_values() {
        assert_eq!(success_pmf(1.0, 1).unwrap(), 1.0);
        assert_eq!(success_pmf(1.0, 2).unwrap(), 0.0);
        assert!((success_pmf(0.5, 3).unwrap() - 0.125).abs() < 1e-15);
        assert!(success_pmf(0.0, 1).is_err());
        assert!(success_pmf(1.5, 1).is_err());
        assert!(success_pmf(0.5, 0).is_err());
        let tail = 0.99f64.powi(2000);
        assert!((tail - 1.86e-9).abs() < 0.01e-9);
        let head: f64 = (1..=2000).map(|n| success_pmf(0.01, n).unwrap()).sum();
        assert!((1.0 - head - tail).abs() < 1e-12);
    }

    #[test]
    fn truncation_length_meets_bound() {
        for p in [0.001, 0.01, 0.3, 0.999] {
            let n = truncation_length(p, 1e-9).unwrap();
            assert!((1.0 - p).powf(n as f64) < 1e-9);
            assert!((1.0 - p).powf((n - 1) as f64) >= 1e-9);
        }
        assert!(truncation_length(1e-12, 1e-9).is_err());
    }

    #[test]
    fn constant_curve_and_certain_success() {
        let c = constant(0.83, 50_000);
        for p in [0.001, 0.1, 0.7, 1.0] {
            assert!((expected_fidelity(&c, p, 1e-9).unwrap() - 0.83).abs() < 1e-12);
        }
        let curves = reference_gate_curves();
        let k0 = &curves[&0];
        assert!((expected_fidelity(k0, 1.0, 1e-9).unwrap() - k0.fidelity_at(1).unwrap()).abs() < 1e-15);
        let near = expected_fidelity(k0, 1.0 - 1e-8, 1e-9).unwrap();
        assert!((near - k0.fidelity_at(1).unwrap()).abs() < 1e-6);
    }

    #[test]
    fn coverage_errors_without_model() {
        let c = constant(0.9, 100);
        assert!(matches!(expected_fidelity(&c, 0.01, 1e-9), Err(Error::Coverage(_))));
        assert!(expected_fidelity(&c, 0.5, 1e-9).is_ok());
        let sparse = FidelityCurve::new(
            vec![
                CurvePoint { n_rea: 0, fidelity: 1.0, stderr: 0.0 },
                CurvePoint { n_rea: 10, fidelity: 0.5, stderr: 0.0 },
            ],
            CurveSource::Simulated,
        )
        .unwrap();
        assert!((sparse.fidelity_at(4).unwrap() - 0.8).abs() < 1e-15);
        assert!(sparse.fidelity_at(11).is_err());
    }

    #[test]
    fn curve_validation() {
        let p = |n, f| CurvePoint { n_rea: n, fidelity: f, stderr: 0.0 };
        assert!(FidelityCurve::new(vec![], CurveSource::External).is_err());
        assert!(FidelityCurve::new(vec![p(3, 0.9), p(3, 0.8)], CurveSource::External).is_err());
        assert!(FidelityCurve::new(vec![p(3, 1.2)], CurveSource::External).is_err());
    }

    #[test]
    fn model_fills_gaps_and_tail() {
        let xy = XyModel { a_spam: 0.066, a_par_te: 0.0271, g: 0.0 };
        let c = FidelityCurve::new(vec![CurvePoint { n_rea: 1, fidelity: 0.97, stderr: 0.01 }], CurveSource::Simulated)
            .unwrap()
            .with_model(CurveModel::Xy(xy));
        assert_eq!(c.fidelity_at(1).unwrap(), 0.97);
        assert!((c.fidelity_at(500).unwrap() - xy.eval(500.0)).abs() < 1e-15);
        let f = expected_fidelity(&c, 1e-4, 1e-9).unwrap();
        assert!(f > 0.5 && f < 0.6, "{f}");
    }

    #[test]
    fn reference_curves_cross_with_no_spectators_best_near_certainty() {
        let curves = reference_gate_curves();
        let grid = log_p_grid(1e-4, 1.0, 41).unwrap();
        let rep = strategy_sweep(&curves, &grid, 1e-9).unwrap();
        assert_eq!(*rep.best_k.last().unwrap(), 0);
        assert_ne!(rep.best_k[0], 0);
        assert!(!rep.transitions().is_empty());
        assert!(rep.crossovers.iter().any(|c| c.p > 0.0 && c.p < 1.0));
        let k0_vs_k2 = |rep: &StrategyReport| rep.crossovers.iter().find(|c| c.k_low == 0 && c.k_high == 2).unwrap().p;
        let coarse = strategy_sweep(&curves, &grid, 1e-6).unwrap();
        assert!((k0_vs_k2(&rep) - k0_vs_k2(&coarse)).abs() < 1e-4);
        // F̄_{K=2} beats K = 0 below the crossover and loses above it
        let p_x = k0_vs_k2(&rep);
        let fb = |k: usize, p: f64| expected_fidelity(&curves[&k], p, 1e-9).unwrap();
        assert!(fb(2, p_x * 0.5) > fb(0, p_x * 0.5));
        assert!(fb(2, (p_x * 2.0).min(1.0)) < fb(0, (p_x * 2.0).min(1.0)));
    }

    #[test]
    fn single_and_identical_curves() {
        let curves = reference_gate_curves();
        let grid = linear_p_grid(0.01, 1.0, 12).unwrap();
        let one: BTreeMap<_, _> = [(1, curves[&1].clone())].into_iter().collect();
        let rep = strategy_sweep(&one, &grid, 1e-9).unwrap();
        assert!(rep.best_k.iter().all(|&k| k == 1));
        let twins: BTreeMap<_, _> = [(0, curves[&2].clone()), (3, curves[&2].clone())].into_iter().collect();
        let rep = strategy_sweep(&twins, &grid, 1e-9).unwrap();
        assert!(rep.crossovers.is_empty());
        assert!(rep.best_k.iter().all(|&k| k == 0));
    }

    #[test]
    fn envelope_dominates_members() {
        let curves = reference_gate_curves();
        let env = FidelityCurve::envelope(&curves.values().collect::<Vec<_>>()).unwrap();
        for p in [0.001, 0.02, 0.5, 1.0] {
            let e = expected_fidelity(&env, p, 1e-9).unwrap();
            for c in curves.values() {
                assert!(e >= expected_fidelity(c, p, 1e-9).unwrap() - 1e-15);
            }
        }
    }

    #[test]
    fn csv_layout() {
        let curves = reference_gate_curves();
        let rep = strategy_sweep(&curves, &[0.01, 0.5], 1e-9).unwrap();
        let csv = rep.to_csv();
        assert_eq!(csv.lines().count(), 1 + 2 * 3);
        assert!(csv.starts_with("p,K,fbar\n0.01,0,"));
        assert!(rep.crossovers_csv().starts_with("p,K_low,K_high\n"));
    }

    #[test]
    fn sweep_rejects_bad_grids() {
        let curves = reference_gate_curves();
        assert!(strategy_sweep(&curves, &[], 1e-9).is_err());
        assert!(strategy_sweep(&curves, &[0.5, 0.2], 1e-9).is_err());
        assert!(strategy_sweep(&curves, &[0.0, 0.2], 1e-9).is_err());
        assert!(strategy_sweep(&BTreeMap::new(), &[0.5], 1e-9).is_err());
    }

    proptest! {
        #[test]
        fn dominance_is_preserved(p in 0.002f64..1.0, a in 0.01f64..0.05, extra in 0.0f64..0.2) {
            let lo = FidelityCurve::from_model(CurveModel::Xy(XyModel { a_spam: 0.1, a_par_te: a, g: 0.0 }));
            let hi = FidelityCurve::from_model(CurveModel::Xy(XyModel { a_spam: 0.1 - 0.5 * extra * 0.1, a_par_te: a, g: 0.0 }));
            prop_assert!(expected_fidelity(&hi, p, 1e-9).unwrap() >= expected_fidelity(&lo, p, 1e-9).unwrap() - 1e-14);
        }

        #[test]
        fn tail_refinement_is_small(p in 0.001f64..1.0) {
            for c in reference_gate_curves().values() {
                let a = expected_fidelity(c, p, 1e-6).unwrap();
                let b = expected_fidelity(c, p, 1e-9).unwrap();
                prop_assert!((a - b).abs() < 1e-5);
                prop_assert!((0.0..=1.0).contains(&b));
            }
        }
    }
}
