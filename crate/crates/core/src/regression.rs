//! Second-order response-surface regression: model matrix, least squares,
//! single-degree-of-freedom F-tests, profiler slices and the optimal ActF.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use crate::design::{FactorSpace, ScenarioDesign};
use crate::error::{Error, Result};

pub const ACTF: &str = "ActF";

/// How factor values enter the model terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Centering {
    /// Natural units shifted to the factor's midrange: `x - mid`,
    /// `(x - mid)(y - mid)`, `(x - mid)^2`.
    #[default]
    Midrange,
    /// Coded units in [-1, 1].
    Coded,
    /// Raw natural units, no centering.
    Raw,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Term {
    Intercept,
    Main(usize),
    Interaction(usize, usize),
    Quadratic(usize),
}

/// Intercept, main effects, all two-way interactions and quadratics.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub factors: Vec<String>,
    mids: Vec<f64>,
    halves: Vec<f64>,
    pub centering: Centering,
    terms: Vec<Term>,
}

impl ModelSpec {
    pub fn rsm(space: &FactorSpace, centering: Centering) -> Self {
        let k = space.len();
        let mut terms = vec![Term::Intercept];
        terms.extend((0..k).map(Term::Main));
        for i in 0..k {
            for j in i + 1..k {
                terms.push(Term::Interaction(i, j));
            }
        }
        terms.extend((0..k).map(Term::Quadratic));
        ModelSpec {
            factors: space.factors().iter().map(|f| f.name.clone()).collect(),
            mids: space.factors().iter().map(|f| f.mid()).collect(),
            halves: space.factors().iter().map(|f| f.half_range()).collect(),
            centering,
            terms,
        }
    }

    /// Number of parameters.
    pub fn p(&self) -> usize {
        self.terms.len()
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn term_index(&self, t: Term) -> Option<usize> {
        self.terms.iter().position(|&x| x == t)
    }

    pub fn factor_index(&self, name: &str) -> Option<usize> {
        self.factors.iter().position(|f| f == name)
    }

    fn transform(&self, i: usize, x: f64) -> f64 {
        match self.centering {
            Centering::Midrange => x - self.mids[i],
            Centering::Coded => (x - self.mids[i]) / self.halves[i],
            Centering::Raw => x,
        }
    }

    pub fn term_name(&self, t: Term) -> String {
        let f = &self.factors;
        match t {
            Term::Intercept => "Intercept".into(),
            Term::Main(i) => f[i].clone(),
            Term::Interaction(i, j) => format!("{}*{}", f[i], f[j]),
            Term::Quadratic(i) => match self.centering {
                Centering::Midrange => format!("({}-{})^2", f[i], self.mids[i]),
                _ => format!("{}^2", f[i]),
            },
        }
    }

    pub fn term_names(&self) -> Vec<String> {
        self.terms.iter().map(|&t| self.term_name(t)).collect()
    }

    /// Model row for one setting in natural units.
    pub fn row(&self, x: &[f64]) -> Vec<f64> {
        let z: Vec<f64> = x.iter().enumerate().map(|(i, &v)| self.transform(i, v)).collect();
        self.terms
            .iter()
            .map(|t| match *t {
                Term::Intercept => 1.0,
                Term::Main(i) => z[i],
                Term::Interaction(i, j) => z[i] * z[j],
                Term::Quadratic(i) => {
                    // Raw quadratics stay uncentered; the others are already centered.
                    z[i] * z[i]
                }
            })
            .collect()
    }

    pub fn matrix(&self, runs: &[Vec<f64>]) -> DMatrix<f64> {
        let mut x = DMatrix::zeros(runs.len(), self.p());
        for (r, run) in runs.iter().enumerate() {
            for (c, v) in self.row(run).into_iter().enumerate() {
                x[(r, c)] = v;
            }
        }
        x
    }
}

/// Model matrix and response vector for a design.
pub fn build_model_matrix(
    design: &ScenarioDesign,
    responses: &[f64],
    spec: &ModelSpec,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if responses.len() != design.n_runs() {
        return Err(Error::Precondition(format!(
            "{} responses for {} design rows",
            responses.len(),
            design.n_runs()
        )));
    }
    if let Some(k) = responses.iter().position(|y| !y.is_finite()) {
        return Err(Error::Domain(format!("response {k} is not finite")));
    }
    Ok((spec.matrix(&design.runs), DVector::from_column_slice(responses)))
}

/// Householder QR with column pivoting on remaining column norm.
pub(crate) struct PivotedQr {
    /// Upper-triangular factor in pivoted column order (first `rank` rows used).
    pub r: DMatrix<f64>,
    /// `perm[k]` = original column at pivoted position `k`.
    pub perm: Vec<usize>,
    pub rank: usize,
    /// Q^T y, when a right-hand side was supplied.
    pub qty: DVector<f64>,
}

pub(crate) const RANK_TOL: f64 = 1e-10;

pub(crate) fn pivoted_qr(x: &DMatrix<f64>, y: Option<&DVector<f64>>) -> PivotedQr {
    let (n, p) = x.shape();
    let mut a = x.clone();
    let mut qty = y.cloned().unwrap_or_else(|| DVector::zeros(n));
    let mut perm: Vec<usize> = (0..p).collect();
    let kmax = n.min(p);
    let scale = (0..p).map(|j| a.column(j).norm()).fold(0.0, f64::max);
    let mut rank = 0;
    for k in 0..kmax {
        let (mut best, mut best_norm) = (k, -1.0);
        for j in k..p {
            let nrm = a.view((k, j), (n - k, 1)).norm();
            if nrm > best_norm {
                best = j;
                best_norm = nrm;
            }
        }
        if best_norm <= RANK_TOL * scale.max(f64::MIN_POSITIVE) {
            break;
        }
        a.swap_columns(k, best);
        perm.swap(k, best);
        let alpha = {
            let x0 = a[(k, k)];
            if x0 >= 0.0 {
                -best_norm
            } else {
                best_norm
            }
        };
        let mut v: Vec<f64> = (k..n).map(|i| a[(i, k)]).collect();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|t| t * t).sum();
        if vnorm2 > 0.0 {
            for j in k..p {
                let s: f64 = v.iter().enumerate().map(|(t, vi)| vi * a[(k + t, j)]).sum::<f64>() * 2.0 / vnorm2;
                for (t, vi) in v.iter().enumerate() {
                    a[(k + t, j)] -= s * vi;
                }
            }
            let s: f64 = v.iter().enumerate().map(|(t, vi)| vi * qty[k + t]).sum::<f64>() * 2.0 / vnorm2;
            for (t, vi) in v.iter().enumerate() {
                qty[k + t] -= s * vi;
            }
        }
        for i in k + 1..n {
            a[(i, k)] = 0.0;
        }
        rank = k + 1;
    }
    PivotedQr { r: a.rows(0, kmax).into_owned(), perm, rank, qty }
}

/// Rank check naming the dependent columns.
pub(crate) fn require_full_rank(x: &DMatrix<f64>, names: &[String]) -> Result<PivotedQr> {
    let qr = pivoted_qr(x, None);
    if qr.rank < x.ncols() {
        return Err(Error::RankDeficient { columns: qr.perm[qr.rank..].iter().map(|&j| names[j].clone()).collect() });
    }
    Ok(qr)
}

/// Inverse of the leading `k` x `k` upper-triangular block.
fn upper_inverse(r: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let mut inv = DMatrix::zeros(k, k);
    for col in 0..k {
        for i in (0..=col).rev() {
            let mut s = if i == col { 1.0 } else { 0.0 };
            for j in i + 1..=col {
                s -= r[(i, j)] * inv[(j, col)];
            }
            inv[(i, col)] = s / r[(i, i)];
        }
    }
    inv
}

#[derive(Clone, Debug, PartialEq)]
pub struct OlsFit {
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// Diagonal of (X^T X)^-1.
    pub xtx_inv_diag: Vec<f64>,
    pub fitted: Vec<f64>,
    pub residuals: Vec<f64>,
    pub rss: f64,
    /// Total sum of squares about the mean.
    pub tss: f64,
    pub df_resid: usize,
    pub r2: f64,
}

impl OlsFit {
    pub fn mse(&self) -> f64 {
        if self.df_resid == 0 {
            f64::NAN
        } else {
            self.rss / self.df_resid as f64
        }
    }
}

/// Least squares via pivoted QR. Columns must be linearly independent.
pub fn fit_ols(x: &DMatrix<f64>, y: &DVector<f64>, names: &[String]) -> Result<OlsFit> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(Error::Precondition(format!("{} responses for {n} rows", y.len())));
    }
    if names.len() != p {
        return Err(Error::Precondition(format!("{} names for {p} columns", names.len())));
    }
    if n < p {
        return Err(Error::Infeasible(format!("{n} observations cannot fit {p} parameters")));
    }
    let qr = pivoted_qr(x, Some(y));
    if qr.rank < p {
        return Err(Error::RankDeficient { columns: qr.perm[qr.rank..].iter().map(|&j| names[j].clone()).collect() });
    }
    let rinv = upper_inverse(&qr.r, p);
    let bp = &rinv * qr.qty.rows(0, p);
    let mut coefficients = vec![0.0; p];
    let mut xtx_inv_diag = vec![0.0; p];
    for k in 0..p {
        coefficients[qr.perm[k]] = bp[k];
        xtx_inv_diag[qr.perm[k]] = rinv.row(k).norm_squared();
    }
    let b = DVector::from_column_slice(&coefficients);
    let fitted = x * &b;
    let residuals = y - &fitted;
    let rss = residuals.norm_squared();
    let mean = y.mean();
    let tss = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
    let df_resid = n - p;
    let mse = if df_resid > 0 { rss / df_resid as f64 } else { f64::NAN };
    Ok(OlsFit {
        names: names.to_vec(),
        std_errors: xtx_inv_diag.iter().map(|c| (c * mse).sqrt()).collect(),
        coefficients,
        xtx_inv_diag,
        fitted: fitted.iter().copied().collect(),
        residuals: residuals.iter().copied().collect(),
        rss,
        tss,
        df_resid,
        r2: if tss > 0.0 { 1.0 - rss / tss } else { 1.0 },
    })
}

/// Upper-tail probability of F(1, df) at `f`.
pub fn f_test_p(f: f64, df: usize) -> Result<f64> {
    if df == 0 {
        return Err(Error::Precondition("F test needs at least one residual degree of freedom".into()));
    }
    if !(f.is_finite() && f >= 0.0) {
        return Err(Error::Domain(format!("F ratio must be non-negative, got {f}")));
    }
    let dist = FisherSnedecor::new(1.0, df as f64).map_err(|e| Error::Domain(e.to_string()))?;
    Ok(dist.sf(f).clamp(0.0, 1.0))
}

/// One row of the effect table.
#[derive(Clone, Debug, PartialEq)]
pub struct EffectTest {
    pub effect: String,
    pub nparm: usize,
    pub df: usize,
    pub ss: f64,
    pub f: f64,
    pub p: f64,
}

/// Single-df tests for every non-intercept term:
/// SS = b^2 / [(X^T X)^-1]_jj, F = SS / MSE, p from the F(1, df_resid) tail.
pub fn effect_f_tests(fit: &OlsFit) -> Result<Vec<EffectTest>> {
    if fit.df_resid == 0 {
        return Err(Error::Precondition("zero residual degrees of freedom; effects cannot be tested".into()));
    }
    let mse = fit.mse();
    let mut out = Vec::new();
    for (j, name) in fit.names.iter().enumerate() {
        if name == "Intercept" {
            continue;
        }
        let b = fit.coefficients[j];
        let ss = b * b / fit.xtx_inv_diag[j];
        let f = if ss == 0.0 {
            0.0
        } else if mse > 0.0 {
            ss / mse
        } else {
            f64::INFINITY
        };
        let p = if f.is_infinite() { 0.0 } else { f_test_p(f, fit.df_resid)? };
        out.push(EffectTest { effect: name.clone(), nparm: 1, df: 1, ss, f, p });
    }
    Ok(out)
}

pub fn write_effects_csv<W: Write>(effects: &[EffectTest], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["effect", "nparm", "df", "ss", "f_ratio", "p_value"])?;
    for e in effects {
        w.write_record([
            e.effect.clone(),
            e.nparm.to_string(),
            e.df.to_string(),
            format!("{:.6}", e.ss),
            format!("{:.6}", e.f),
            format!("{:.6}", e.p),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn predict(spec: &ModelSpec, fit: &OlsFit, x: &[f64]) -> f64 {
    spec.row(x).iter().zip(&fit.coefficients).map(|(a, b)| a * b).sum()
}

/// Check a full setting against the factor ranges.
fn check_setting(space: &FactorSpace, at: &[f64]) -> Result<()> {
    if at.len() != space.len() {
        return Err(Error::Precondition(format!("{} settings for {} factors", at.len(), space.len())));
    }
    for (f, &v) in space.factors().iter().zip(at) {
        if !(v.is_finite() && v >= f.lo() - 1e-9 && v <= f.hi() + 1e-9) {
            return Err(Error::Domain(format!("{} = {v} outside [{}, {}]", f.name, f.lo(), f.hi())));
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProfilerSlice {
    pub factor: String,
    pub grid: Vec<f64>,
    pub predicted: Vec<f64>,
    /// Current setting of the factor and the prediction there.
    pub current: (f64, f64),
}

/// Predictions over one factor's range, other factors held at `at`.
pub fn profile(
    fit: &OlsFit,
    spec: &ModelSpec,
    space: &FactorSpace,
    factor: &str,
    at: &[f64],
    points: usize,
) -> Result<ProfilerSlice> {
    let i = spec.factor_index(factor).ok_or_else(|| Error::Unknown { kind: "factor", name: factor.into() })?;
    check_setting(space, at)?;
    let f = &space.factors()[i];
    let points = points.max(2);
    let mut x = at.to_vec();
    let mut grid = Vec::with_capacity(points);
    let mut predicted = Vec::with_capacity(points);
    for k in 0..points {
        let v = f.lo() + (f.hi() - f.lo()) * k as f64 / (points - 1) as f64;
        x[i] = v;
        grid.push(v);
        predicted.push(predict(spec, fit, &x));
    }
    Ok(ProfilerSlice { factor: factor.into(), grid, predicted, current: (at[i], predict(spec, fit, at)) })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActfOptimum {
    /// Recommended ActF within the factor range.
    pub value: f64,
    /// Unclamped vertex of the fitted quadratic (NaN when flat).
    pub vertex: f64,
    /// Coefficients of the slice in natural units: y = a + b x + c x^2.
    pub linear: f64,
    pub quadratic: f64,
    pub concave: bool,
    /// Concave with the vertex inside the range.
    pub interior: bool,
    pub predicted: f64,
}

/// Vertex of the fitted response along ActF with the other factors at `at`.
pub fn optimal_actf(fit: &OlsFit, spec: &ModelSpec, space: &FactorSpace, at: &[f64]) -> Result<ActfOptimum> {
    let i = spec.factor_index(ACTF).ok_or_else(|| Error::Unknown { kind: "factor", name: ACTF.into() })?;
    if spec.term_index(Term::Quadratic(i)).is_none() || spec.term_index(Term::Main(i)).is_none() {
        return Err(Error::Precondition("model has no ActF terms".into()));
    }
    check_setting(space, at)?;
    let f = &space.factors()[i];
    let (lo, hi) = (f.lo(), f.hi());
    let mid = f.mid();
    let h = f.half_range();
    // The slice is exactly quadratic in ActF; recover it from three points.
    let mut x = at.to_vec();
    let mut y = |v: f64| {
        x[i] = v;
        predict(spec, fit, &x)
    };
    let (y0, y1, y2) = (y(mid - h), y(mid), y(mid + h));
    let c = (y0 - 2.0 * y1 + y2) / (2.0 * h * h);
    let b_local = (y2 - y0) / (2.0 * h);
    // In t = x - mid: y = y1 + b_local t + c t^2.
    let linear = b_local - 2.0 * c * mid;
    let scale = y0.abs().max(y1.abs()).max(y2.abs()).max(1.0);
    let concave = c * h * h < -1e-12 * scale;
    let vertex = if c != 0.0 { mid - b_local / (2.0 * c) } else { f64::NAN };
    let (value, interior) = if concave {
        (vertex.clamp(lo, hi), (lo..=hi).contains(&vertex))
    } else if y(lo) >= y(hi) {
        (lo, false)
    } else {
        (hi, false)
    };
    Ok(ActfOptimum { value, vertex, linear, quadratic: c, concave, interior, predicted: y(value) })
}

/// Everything derived from one fit.
#[derive(Clone, Debug, PartialEq)]
pub struct RegressionReport {
    pub spec: ModelSpec,
    pub fit: OlsFit,
    pub effects: Vec<EffectTest>,
}

pub fn analyze(design: &ScenarioDesign, responses: &[f64], centering: Centering) -> Result<RegressionReport> {
    let spec = ModelSpec::rsm(&design.space, centering);
    let (x, y) = build_model_matrix(design, responses, &spec)?;
    let fit = fit_ols(&x, &y, &spec.term_names())?;
    let effects = effect_f_tests(&fit)?;
    Ok(RegressionReport { spec, fit, effects })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{Factor, FactorSpace};
    use approx::assert_abs_diff_eq;

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|j| format!("c{j}")).collect()
    }

    #[test]
    fn noiseless_line() {
        let x = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 2.0, 4.0]);
        let y = DVector::from_column_slice(&[2.0, 5.0, 8.0]);
        let fit = fit_ols(&x, &y, &names(3)).unwrap();
        for (got, want) in fit.coefficients.iter().zip([2.0, 3.0, 0.0]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-10);
        }
    }

    #[test]
    fn duplicated_column_is_named() {
        let x = DMatrix::from_row_slice(4, 3, &[1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 1.0, 3.0, 3.0, 1.0, 5.0, 5.0]);
        let y = DVector::from_column_slice(&[1.0, 2.0, 3.0, 4.0]);
        match fit_ols(&x, &y, &names(3)) {
            Err(Error::RankDeficient { columns }) => {
                assert_eq!(columns.len(), 1);
                assert!(columns[0] == "c1" || columns[0] == "c2");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn table_p_values() {
        assert_abs_diff_eq!(f_test_p(16.535, 6).unwrap(), 0.006603, epsilon = 5e-6);
        assert_abs_diff_eq!(f_test_p(0.040, 6).unwrap(), 0.84809, epsilon = 5e-5);
        assert_abs_diff_eq!(f_test_p(0.815, 6).unwrap(), 0.4014, epsilon = 5e-4);
        assert_eq!(f_test_p(0.0, 6).unwrap(), 1.0);
        assert!(f_test_p(1.0, 0).is_err());
    }

    #[test]
    fn zero_coefficient_has_unit_p() {
        // y depends on c1 only; c2 orthogonal with exactly zero effect.
        let x = DMatrix::from_row_slice(4, 3, &[1.0, -1.0, -1.0, 1.0, -1.0, 1.0, 1.0, 1.0, -1.0, 1.0, 1.0, 1.0]);
        let y = DVector::from_column_slice(&[1.0, 1.5, 3.0, 2.5]);
        let mut fit = fit_ols(&x, &y, &["Intercept".into(), "a".into(), "b".into()]).unwrap();
        let e = effect_f_tests(&fit).unwrap();
        assert_eq!(e.len(), 2);
        assert_abs_diff_eq!(e[1].ss, 0.0, epsilon = 1e-20);
        assert_abs_diff_eq!(e[1].p, 1.0, epsilon = 1e-9);
        fit.coefficients[2] = 0.0;
        let e = effect_f_tests(&fit).unwrap();
        assert_eq!((e[1].f, e[1].p), (0.0, 1.0));
    }

    #[test]
    fn vertex_arithmetic() {
        let space = FactorSpace::new(vec![Factor::discrete("ActF", vec![1.0, 1.05, 1.1, 1.15, 1.2, 1.25, 1.3])])
            .unwrap();
        let spec = ModelSpec::rsm(&space, Centering::Midrange);
        let mk = |b: [f64; 3]| OlsFit {
            names: spec.term_names(),
            coefficients: b.to_vec(),
            std_errors: vec![0.0; 3],
            xtx_inv_diag: vec![1.0; 3],
            fitted: vec![],
            residuals: vec![],
            rss: 0.0,
            tss: 0.0,
            df_resid: 1,
            r2: 1.0,
        };
        let o = optimal_actf(&mk([5.0, 0.0, -40.0]), &spec, &space, &[1.15]).unwrap();
        assert_abs_diff_eq!(o.value, 1.15, epsilon = 1e-12);
        assert!(o.concave && o.interior);
        let o = optimal_actf(&mk([5.0, 3.0, -40.0]), &spec, &space, &[1.15]).unwrap();
        assert_abs_diff_eq!(o.value, 1.1875, epsilon = 1e-12);
        let o = optimal_actf(&mk([5.0, 0.0, 10.0]), &spec, &space, &[1.15]).unwrap();
        assert!(!o.concave && !o.interior);
        assert!(o.value == 1.0 || o.value == 1.3);
        assert!(optimal_actf(&mk([5.0, 0.0, -40.0]), &spec, &space, &[1.5]).is_err());
    }
}
