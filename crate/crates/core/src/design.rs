//! Factor spaces and D-optimal designs for the second-order model.

use std::io::Write;

use nalgebra::DMatrix;
use rand::seq::IndexedRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::regression::{require_full_rank, Centering, ModelSpec};
use crate::streams;

pub const DEFAULT_RUNS: usize = 72;
pub const DESIGN_FORMAT: &str = "actf-design/1";

const RANGE_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FactorKind {
    Continuous { lo: f64, hi: f64 },
    Discrete { levels: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Factor {
    pub name: String,
    #[serde(flatten)]
    pub kind: FactorKind,
}

impl Factor {
    pub fn continuous(name: &str, lo: f64, hi: f64) -> Self {
        Factor { name: name.into(), kind: FactorKind::Continuous { lo, hi } }
    }

    pub fn discrete(name: &str, levels: Vec<f64>) -> Self {
        Factor { name: name.into(), kind: FactorKind::Discrete { levels } }
    }

    pub fn lo(&self) -> f64 {
        match &self.kind {
            FactorKind::Continuous { lo, .. } => *lo,
            FactorKind::Discrete { levels } => levels[0],
        }
    }

    pub fn hi(&self) -> f64 {
        match &self.kind {
            FactorKind::Continuous { hi, .. } => *hi,
            FactorKind::Discrete { levels } => levels[levels.len() - 1],
        }
    }

    pub fn mid(&self) -> f64 {
        (self.lo() + self.hi()) / 2.0
    }

    pub fn half_range(&self) -> f64 {
        (self.hi() - self.lo()) / 2.0
    }

    pub fn coded(&self, x: f64) -> f64 {
        (x - self.mid()) / self.half_range()
    }

    pub fn natural(&self, c: f64) -> f64 {
        self.mid() + c * self.half_range()
    }

    /// Exchange candidates: {lo, mid, hi} or the discrete levels.
    pub fn candidates(&self) -> Vec<f64> {
        match &self.kind {
            FactorKind::Continuous { lo, hi } => vec![*lo, (lo + hi) / 2.0, *hi],
            FactorKind::Discrete { levels } => levels.clone(),
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        match &self.kind {
            FactorKind::Continuous { lo, hi } => x.is_finite() && x >= lo - RANGE_TOL && x <= hi + RANGE_TOL,
            FactorKind::Discrete { levels } => levels.iter().any(|l| (l - x).abs() <= RANGE_TOL),
        }
    }

    fn check(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains([',', ';', '=', '\n', '\r', '"']) {
            return Err(Error::Domain(format!("bad factor name `{}`", self.name)));
        }
        match &self.kind {
            FactorKind::Continuous { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return Err(Error::Domain(format!("factor {}: need lo < hi, got [{lo}, {hi}]", self.name)));
                }
            }
            FactorKind::Discrete { levels } => {
                if levels.len() < 2 {
                    return Err(Error::Domain(format!("factor {}: need at least 2 levels", self.name)));
                }
                if levels.iter().any(|l| !l.is_finite()) || levels.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::Domain(format!(
                        "factor {}: levels must be finite and strictly increasing",
                        self.name
                    )));
                }
            }
        }
        Ok(())
    }

    fn spec_token(&self) -> String {
        match &self.kind {
            FactorKind::Continuous { lo, hi } => format!("{}=[{lo},{hi}]", self.name),
            FactorKind::Discrete { levels } => {
                let l: Vec<String> = levels.iter().map(|v| v.to_string()).collect();
                format!("{}={{{}}}", self.name, l.join(","))
            }
        }
    }
}

/// Ordered list of factors with unique names.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorSpace {
    factors: Vec<Factor>,
}

impl FactorSpace {
    pub fn new(factors: Vec<Factor>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::Domain("factor space is empty".into()));
        }
        for (i, f) in factors.iter().enumerate() {
            f.check()?;
            if factors[..i].iter().any(|g| g.name == f.name) {
                return Err(Error::Domain(format!("duplicate factor `{}`", f.name)));
            }
        }
        Ok(FactorSpace { factors })
    }

    /// The ten factors of the reference study.
    pub fn standard() -> Self {
        let mut f = Vec::new();
        for d in ["SB", "NB"] {
            for i in 1..=3 {
                f.push(Factor::continuous(&format!("VolSS_{d}{i}"), 200.0, 600.0));
            }
        }
        f.push(Factor::continuous("VolEB", 400.0, 1200.0));
        f.push(Factor::continuous("VolWB", 400.0, 1200.0));
        f.push(Factor::discrete("LT", vec![10.0, 20.0, 30.0]));
        f.push(Factor::discrete("ActF", (0..7).map(|k| 1.0 + 0.05 * k as f64).map(round6).collect()));
        FactorSpace { factors: f }
    }

    /// Standard factors by name, in the given order.
    pub fn standard_subset(names: &[String]) -> Result<Self> {
        let all = Self::standard();
        let factors = names
            .iter()
            .map(|n| all.get(n).cloned().ok_or_else(|| Error::Unknown { kind: "factor", name: n.clone() }))
            .collect::<Result<Vec<_>>>()?;
        Self::new(factors)
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.factors.iter().position(|f| f.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Factor> {
        self.factors.iter().find(|f| f.name == name)
    }

    /// Parameters of the full second-order model.
    pub fn rsm_params(&self) -> usize {
        let k = self.len();
        1 + 2 * k + k * (k - 1) / 2
    }

    fn spec_line(&self) -> String {
        let t: Vec<String> = self.factors.iter().map(Factor::spec_token).collect();
        format!("# {DESIGN_FORMAT} rsm {}", t.join(";"))
    }

    fn parse_spec_line(line: &str) -> Result<Self> {
        let rest = line
            .strip_prefix('#')
            .map(str::trim_start)
            .and_then(|l| l.strip_prefix(DESIGN_FORMAT))
            .ok_or_else(|| Error::parse("spec", format!("expected `# {DESIGN_FORMAT} ...`")))?;
        let rest = rest.trim();
        let rest = rest.strip_prefix("rsm").map(str::trim).unwrap_or(rest);
        let mut factors = Vec::new();
        for (k, tok) in rest.split(';').enumerate() {
            let path = format!("spec.factors[{k}]");
            let (name, dom) = tok.split_once('=').ok_or_else(|| Error::parse(&path, "expected name=domain"))?;
            let nums = |s: &str| -> Result<Vec<f64>> {
                s.split(',')
                    .map(|v| v.trim().parse::<f64>().map_err(|e| Error::parse(&path, e.to_string())))
                    .collect()
            };
            let dom = dom.trim();
            let kind = if let Some(s) = dom.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                match nums(s)?.as_slice() {
                    [lo, hi] => FactorKind::Continuous { lo: *lo, hi: *hi },
                    _ => return Err(Error::parse(&path, "continuous domain needs [lo,hi]")),
                }
            } else if let Some(s) = dom.strip_prefix('{').and_then(|s| s.strip_suffix('}')) {
                FactorKind::Discrete { levels: nums(s)? }
            } else {
                return Err(Error::parse(&path, "domain must be [lo,hi] or {levels}"));
            };
            factors.push(Factor { name: name.trim().to_string(), kind });
        }
        FactorSpace::new(factors).map_err(|e| Error::parse("spec", e.to_string()))
    }
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

/// Scenario matrix in natural units; row `i` is scenario `i + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioDesign {
    pub space: FactorSpace,
    pub runs: Vec<Vec<f64>>,
}

impl ScenarioDesign {
    pub fn new(space: FactorSpace, runs: Vec<Vec<f64>>) -> Result<Self> {
        for (r, run) in runs.iter().enumerate() {
            if run.len() != space.len() {
                return Err(Error::Domain(format!("run {} has {} settings, expected {}", r + 1, run.len(), space.len())));
            }
            for (f, &x) in space.factors().iter().zip(run) {
                if !f.contains(x) {
                    return Err(Error::Domain(format!("run {}: {} = {x} outside its domain", r + 1, f.name)));
                }
            }
        }
        Ok(ScenarioDesign { space, runs })
    }

    pub fn n_runs(&self) -> usize {
        self.runs.len()
    }

    pub fn setting(&self, run: usize, name: &str) -> Option<f64> {
        Some(self.runs.get(run)?[self.space.index_of(name)?])
    }

    pub fn coded(&self) -> Vec<Vec<f64>> {
        self.runs
            .iter()
            .map(|r| r.iter().zip(self.space.factors()).map(|(&x, f)| f.coded(x)).collect())
            .collect()
    }

    /// Second-order model matrix in coded units.
    pub fn model_matrix(&self) -> DMatrix<f64> {
        ModelSpec::rsm(&self.space, Centering::Coded).matrix(&self.runs)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{}", self.space.spec_line())?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.space.factors().iter().map(|f| f.name.as_str()))?;
        for run in &self.runs {
            w.write_record(run.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Parse a design CSV. Without a spec line the columns must be standard
/// factor names and take their default domains.
pub fn load_design(text: &str) -> Result<ScenarioDesign> {
    let (space, body) = match text.strip_prefix('#') {
        Some(_) => {
            let (line, body) = text.split_once('\n').unwrap_or((text, ""));
            (Some(FactorSpace::parse_spec_line(line.trim_end_matches('\r'))?), body)
        }
        None => (None, text),
    };
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(body.as_bytes());
    let header: Vec<String> =
        rdr.headers().map_err(|e| Error::parse("header", e.to_string()))?.iter().map(String::from).collect();
    let space = match space {
        Some(s) => {
            let names: Vec<&str> = s.factors().iter().map(|f| f.name.as_str()).collect();
            if header != names {
                return Err(Error::parse("header", format!("columns {header:?} do not match spec {names:?}")));
            }
            s
        }
        None => FactorSpace::standard_subset(&header).map_err(|e| Error::parse("header", e.to_string()))?,
    };
    let mut runs = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::parse(format!("row {}", r + 1), e.to_string()))?;
        if rec.len() != space.len() {
            return Err(Error::parse(format!("row {}", r + 1), format!("{} fields, expected {}", rec.len(), space.len())));
        }
        let mut run = Vec::with_capacity(space.len());
        for (f, cell) in space.factors().iter().zip(rec.iter()) {
            let path = format!("row {}.{}", r + 1, f.name);
            let v: f64 = cell.parse().map_err(|_| Error::parse(&path, format!("`{cell}` is not a number")))?;
            if !f.contains(v) {
                return Err(Error::parse(&path, format!("{v} outside [{}, {}] or not a level", f.lo(), f.hi())));
            }
            run.push(v);
        }
        runs.push(run);
    }
    if runs.is_empty() {
        return Err(Error::parse("rows", "design has no runs"));
    }
    Ok(ScenarioDesign { space, runs })
}

/// det(X^T X / n)^(1/p) of the coded second-order model matrix. The
/// coded-unit ideal for a single factor on [-1, 1] is 1.
pub fn d_efficiency(design: &ScenarioDesign) -> Result<f64> {
    efficiency_of(&design.model_matrix(), &ModelSpec::rsm(&design.space, Centering::Coded).term_names())
}

pub(crate) fn efficiency_of(x: &DMatrix<f64>, names: &[String]) -> Result<f64> {
    let qr = require_full_rank(x, names)?;
    let (n, p) = x.shape();
    let log_det: f64 = (0..p).map(|k| 2.0 * qr.r[(k, k)].abs().ln()).sum();
    Ok(((log_det - p as f64 * (n as f64).ln()) / p as f64).exp())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DesignOptions {
    pub restarts: usize,
    pub max_passes: usize,
}

impl Default for DesignOptions {
    fn default() -> Self {
        DesignOptions { restarts: 8, max_passes: 30 }
    }
}

/// Result of one coordinate-exchange restart.
#[derive(Clone, Debug)]
pub struct ExchangeRun {
    pub design: ScenarioDesign,
    pub log_det: f64,
    /// log det(X^T X) after the start and after every accepted exchange.
    pub history: Vec<f64>,
}

/// D-optimal design by coordinate exchange with the default options.
pub fn generate_design(space: &FactorSpace, n_runs: usize, seed: u64) -> Result<ScenarioDesign> {
    generate_design_with(space, n_runs, seed, &DesignOptions::default())
}

pub fn generate_design_with(
    space: &FactorSpace,
    n_runs: usize,
    seed: u64,
    opts: &DesignOptions,
) -> Result<ScenarioDesign> {
    check_runs(space, n_runs)?;
    let results: Vec<Result<ExchangeRun>> =
        (0..opts.restarts.max(1)).into_par_iter().map(|r| coordinate_exchange(space, n_runs, seed, r as u64, opts)).collect();
    let mut best: Option<ExchangeRun> = None;
    for r in results {
        let r = r?;
        if best.as_ref().map_or(true, |b| r.log_det > b.log_det) {
            best = Some(r);
        }
    }
    Ok(best.expect("at least one restart").design)
}

fn check_runs(space: &FactorSpace, n_runs: usize) -> Result<()> {
    let p = space.rsm_params();
    if n_runs < p {
        return Err(Error::Infeasible(format!(
            "{n_runs} runs cannot support the {p}-parameter second-order model; {} more needed",
            p - n_runs
        )));
    }
    Ok(())
}

/// One restart. Factors are processed in name order so that the search
/// does not depend on how the caller ordered the space.
pub fn coordinate_exchange(
    space: &FactorSpace,
    n_runs: usize,
    seed: u64,
    restart: u64,
    opts: &DesignOptions,
) -> Result<ExchangeRun> {
    check_runs(space, n_runs)?;
    let mut order: Vec<usize> = (0..space.len()).collect();
    order.sort_by(|&a, &b| space.factors()[a].name.cmp(&space.factors()[b].name));
    let canon = FactorSpace { factors: order.iter().map(|&i| space.factors()[i].clone()).collect() };
    let spec = ModelSpec::rsm(&canon, Centering::Coded);
    let p = spec.p();
    let cands: Vec<Vec<f64>> = canon.factors().iter().map(Factor::candidates).collect();
    let mut rng = streams::stream(seed, restart, "design");

    let mut runs = Vec::new();
    let mut m_inv = None;
    for _ in 0..1000 {
        runs = (0..n_runs).map(|_| cands.iter().map(|c| *c.choose(&mut rng).expect("candidates")).collect()).collect();
        if let Some(inv) = information_inverse(&spec, &runs) {
            m_inv = Some(inv);
            break;
        }
    }
    let (mut m_inv, mut log_det) =
        m_inv.ok_or_else(|| Error::Infeasible("no nonsingular starting design found".into()))?;
    let mut history = vec![log_det];

    for _ in 0..opts.max_passes {
        let mut improved = false;
        for i in 0..n_runs {
            for j in 0..canon.len() {
                let f_old = nalgebra::DVector::from_vec(spec.row(&runs[i]));
                let a = &m_inv * &f_old;
                let d_old = f_old.dot(&a);
                let mut best = (0.0, runs[i][j]);
                let mut x = runs[i].clone();
                for &c in &cands[j] {
                    if c == runs[i][j] {
                        continue;
                    }
                    x[j] = c;
                    let f_new = nalgebra::DVector::from_vec(spec.row(&x));
                    let b = &m_inv * &f_new;
                    let d_new = f_new.dot(&b);
                    let d_on = f_old.dot(&b);
                    // det ratio of swapping f_old for f_new, minus one.
                    let delta = (1.0 + d_new) * (1.0 - d_old) + d_on * d_on - 1.0;
                    if delta > best.0 {
                        best = (delta, c);
                    }
                }
                if best.0 > 1e-9 {
                    runs[i][j] = best.1;
                    let f_new = nalgebra::DVector::from_vec(spec.row(&runs[i]));
                    let b = &m_inv * &f_new;
                    m_inv -= (&b * b.transpose()) / (1.0 + f_new.dot(&b));
                    let a = &m_inv * &f_old;
                    m_inv += (&a * a.transpose()) / (1.0 - f_old.dot(&a));
                    log_det += (1.0 + best.0).ln();
                    history.push(log_det);
                    improved = true;
                }
            }
        }
        // Refresh to shed accumulated rounding.
        match information_inverse(&spec, &runs) {
            Some((inv, ld)) => {
                m_inv = inv;
                log_det = ld;
            }
            None => return Err(Error::Infeasible("design lost rank during exchange".into())),
        }
        if !improved {
            break;
        }
    }
    debug_assert_eq!(m_inv.nrows(), p);

    let mut back = vec![0; order.len()];
    for (k, &i) in order.iter().enumerate() {
        back[i] = k;
    }
    let natural: Vec<Vec<f64>> = runs.iter().map(|r| back.iter().map(|&k| r[k]).collect()).collect();
    Ok(ExchangeRun { design: ScenarioDesign { space: space.clone(), runs: natural }, log_det, history })
}

fn information_inverse(spec: &ModelSpec, runs: &[Vec<f64>]) -> Option<(DMatrix<f64>, f64)> {
    let x = spec.matrix(runs);
    let m = x.transpose() * &x;
    let chol = m.cholesky()?;
    let log_det: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    // Reject near-singular starts.
    let min_pivot = chol.l().diagonal().iter().copied().fold(f64::INFINITY, f64::min);
    if !(min_pivot > 1e-6) {
        return None;
    }
    Some((chol.inverse(), log_det))
}

/// Uniform draws from the candidate grid, redrawn until the model matrix has full rank.
pub fn random_design<R: Rng>(space: &FactorSpace, n_runs: usize, rng: &mut R) -> Result<ScenarioDesign> {
    check_runs(space, n_runs)?;
    let spec = ModelSpec::rsm(space, Centering::Coded);
    let cands: Vec<Vec<f64>> = space.factors().iter().map(Factor::candidates).collect();
    for _ in 0..1000 {
        let runs: Vec<Vec<f64>> =
            (0..n_runs).map(|_| cands.iter().map(|c| *c.choose(rng).expect("candidates")).collect()).collect();
        if information_inverse(&spec, &runs).is_some() {
            return Ok(ScenarioDesign { space: space.clone(), runs });
        }
    }
    Err(Error::Infeasible("no full-rank random design found".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_space_has_sixty_six_parameters() {
        let s = FactorSpace::standard();
        assert_eq!(s.len(), 10);
        assert_eq!(s.rsm_params(), 66);
        assert_eq!(s.get("ActF").unwrap().candidates(), vec![1.0, 1.05, 1.1, 1.15, 1.2, 1.25, 1.3]);
        assert_eq!(s.get("ActF").unwrap().mid(), 1.15);
    }

    #[test]
    fn factor_checks() {
        assert!(FactorSpace::new(vec![Factor::continuous("a", 1.0, 1.0)]).is_err());
        assert!(FactorSpace::new(vec![Factor::discrete("a", vec![2.0, 1.0])]).is_err());
        assert!(FactorSpace::new(vec![Factor::discrete("a", vec![1.0])]).is_err());
        assert!(FactorSpace::new(vec![Factor::continuous("a", 0.0, 1.0), Factor::continuous("a", 0.0, 1.0)])
            .is_err());
    }

    #[test]
    fn too_few_runs_names_the_deficit() {
        match generate_design(&FactorSpace::standard(), 50, 1) {
            Err(Error::Infeasible(m)) => assert!(m.contains("16 more"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn spec_line_round_trips() {
        let s = FactorSpace::standard();
        assert_eq!(FactorSpace::parse_spec_line(&s.spec_line()).unwrap(), s);
    }
}
