use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::sync::Mutex;

use serde_json::{json, Value};

use super::config::{ExperimentConfig, ResponseLevel};
use super::{compute_drp, sha256_hex, write_atomic};
use crate::design::{load_design, ScenarioDesign};
use crate::error::{Error, Result};
use crate::regression::{
    analyze, optimal_actf, profile, write_effects_csv, ActfOptimum, Centering, ProfilerSlice, RegressionReport, ACTF,
};

pub(crate) const JOURNAL_FILE: &str = "runs.partial.csv";
pub const JOURNAL_FORMAT: &str = "actf-journal/1";
const STORE_FORMAT: &str = "actf-store/1";
const JOURNAL_HEADER: &str = "scenario_id,seed,plan,avg_delay_s,veh_completed,spillback_flag,error";

/// Optimum reported by the reference study, printed for comparison.
pub const REFERENCE_ACTF: f64 = 1.15;

const PROFILE_POINTS: usize = 21;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PlanKind {
    Base,
    Factored,
}

impl fmt::Display for PlanKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PlanKind::Base => "base",
            PlanKind::Factored => "factored",
        })
    }
}

impl FromStr for PlanKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(PlanKind::Base),
            "factored" => Ok(PlanKind::Factored),
            _ => Err(Error::Unknown { kind: "plan", name: s.into() }),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub scenario: u64,
    pub seed: u64,
    pub plan: PlanKind,
    pub avg_delay_s: f64,
    pub vehicles_completed: u64,
    pub spillback: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub enum JournalEntry {
    Run(RunRecord),
    RunFailed { scenario: u64, seed: u64, plan: PlanKind, error: String },
    SetupFailed { scenario: u64, error: String },
}

impl JournalEntry {
    fn fields(&self) -> [String; 7] {
        match self {
            JournalEntry::Run(r) => [
                r.scenario.to_string(),
                r.seed.to_string(),
                r.plan.to_string(),
                // Shortest round-trip form, so resumed values are exact.
                r.avg_delay_s.to_string(),
                r.vehicles_completed.to_string(),
                u8::from(r.spillback).to_string(),
                String::new(),
            ],
            JournalEntry::RunFailed { scenario, seed, plan, error } => [
                scenario.to_string(),
                seed.to_string(),
                plan.to_string(),
                String::new(),
                String::new(),
                String::new(),
                error.clone(),
            ],
            JournalEntry::SetupFailed { scenario, error } => [
                scenario.to_string(),
                String::new(),
                "setup".into(),
                String::new(),
                String::new(),
                String::new(),
                error.clone(),
            ],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Journal {
    pub config_hash: String,
    pub entries: Vec<JournalEntry>,
    /// Bytes up to the end of the last complete line.
    pub complete_len: usize,
}

/// Parse a run journal. A trailing line without a newline is a torn write
/// and is ignored.
pub fn parse_journal(text: &str) -> Result<Journal> {
    let complete_len = text.rfind('\n').map_or(0, |i| i + 1);
    let text = &text[..complete_len];
    let mut lines = text.split_inclusive('\n');
    let first = lines.next().ok_or_else(|| Error::parse("journal", "empty journal"))?;
    let config_hash = first
        .trim_end()
        .strip_prefix("# ")
        .and_then(|l| l.strip_prefix(JOURNAL_FORMAT))
        .map(|h| h.trim().to_string())
        .filter(|h| !h.is_empty())
        .ok_or_else(|| Error::parse("journal", format!("expected `# {JOURNAL_FORMAT} <hash>`")))?;
    let body: String = lines.collect();
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(body.as_bytes());
    let header = rdr.headers().map_err(|e| Error::parse("journal.header", e.to_string()))?;
    if header.iter().collect::<Vec<_>>().join(",") != JOURNAL_HEADER {
        return Err(Error::parse("journal.header", format!("expected `{JOURNAL_HEADER}`")));
    }
    let mut entries = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let path = format!("journal.row {}", k + 1);
        let rec = rec.map_err(|e| Error::parse(&path, e.to_string()))?;
        if rec.len() != 7 {
            return Err(Error::parse(&path, format!("{} fields, expected 7", rec.len())));
        }
        let num = |i: usize, what: &str| -> Result<u64> {
            rec[i].parse::<u64>().map_err(|_| Error::parse(format!("{path}.{what}"), format!("`{}` is not an integer", &rec[i])))
        };
        let scenario = num(0, "scenario_id")?;
        if scenario == 0 {
            return Err(Error::parse(format!("{path}.scenario_id"), "scenario ids start at 1"));
        }
        let error = rec[6].to_string();
        let entry = if &rec[2] == "setup" {
            JournalEntry::SetupFailed { scenario, error }
        } else {
            let seed = num(1, "seed")?;
            let plan: PlanKind = rec[2].parse().map_err(|e: Error| Error::parse(format!("{path}.plan"), e.to_string()))?;
            if !error.is_empty() {
                JournalEntry::RunFailed { scenario, seed, plan, error }
            } else {
                let avg_delay_s: f64 = rec[3]
                    .parse()
                    .ok()
                    .filter(|d: &f64| d.is_finite() && *d >= 0.0)
                    .ok_or_else(|| Error::parse(format!("{path}.avg_delay_s"), "expected a non-negative number"))?;
                let spillback = match &rec[5] {
                    "0" => false,
                    "1" => true,
                    other => return Err(Error::parse(format!("{path}.spillback_flag"), format!("`{other}` is not 0 or 1"))),
                };
                JournalEntry::Run(RunRecord {
                    scenario,
                    seed,
                    plan,
                    avg_delay_s,
                    vehicles_completed: num(4, "veh_completed")?,
                    spillback,
                })
            }
        };
        entries.push(entry);
    }
    Ok(Journal { config_hash, entries, complete_len })
}

/// Load an existing journal for resumption, or start a new one.
pub(crate) fn open_journal(path: &Path, config_hash: &str) -> Result<Vec<JournalEntry>> {
    if path.exists() {
        let text = fs::read_to_string(path)?;
        let j = parse_journal(&text)?;
        if j.config_hash != config_hash {
            return Err(Error::Experiment(format!(
                "{} was written for a different configuration; remove it or use another output directory",
                path.display()
            )));
        }
        OpenOptions::new().write(true).open(path)?.set_len(j.complete_len as u64)?;
        return Ok(j.entries);
    }
    let mut f = File::create(path)?;
    writeln!(f, "# {JOURNAL_FORMAT} {config_hash}")?;
    writeln!(f, "{JOURNAL_HEADER}")?;
    f.sync_all()?;
    Ok(Vec::new())
}

pub(crate) fn append(journal: &Mutex<File>, entry: &JournalEntry) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(entry.fields())?;
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    let mut f = journal.lock().unwrap_or_else(|p| p.into_inner());
    f.write_all(&bytes)?;
    f.flush()?;
    Ok(())
}

pub(crate) fn write_header(dir: &Path, hash: &str, canonical: &str) -> Result<()> {
    let cfg: Value = serde_json::from_str(canonical).expect("canonical config is JSON");
    let doc = json!({ "config_hash": hash, "config": cfg });
    write_atomic(&dir.join("experiment.json"), format!("{}\n", serde_json::to_string_pretty(&doc).expect("json")).as_bytes())
}

pub(crate) fn write_runs(dir: &Path, runs: &[RunRecord]) -> Result<()> {
    let mut sorted: Vec<&RunRecord> = runs.iter().collect();
    sorted.sort_by_key(|r| (r.scenario, r.seed, r.plan));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["scenario_id", "seed", "plan", "avg_delay_s", "veh_completed", "spillback_flag"])?;
    for r in sorted {
        w.write_record([
            r.scenario.to_string(),
            r.seed.to_string(),
            r.plan.to_string(),
            format!("{:.6}", r.avg_delay_s),
            r.vehicles_completed.to_string(),
            u8::from(r.spillback).to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    write_atomic(&dir.join("runs.csv"), &bytes)
}

/// One scenario of the results store.
#[derive(Clone, Debug, PartialEq)]
pub struct DrpRow {
    pub scenario: u64,
    pub settings: Vec<f64>,
    pub base_delay_s: f64,
    pub factored_delay_s: f64,
    pub drp_pct: Option<f64>,
    /// `ok`, or why the scenario failed.
    pub status: String,
}

fn opt6(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.6}")
    } else {
        String::new()
    }
}

pub(crate) fn write_drp(dir: &Path, design: &ScenarioDesign, rows: &[DrpRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["scenario_id".to_string()];
    header.extend(design.space.factors().iter().map(|f| f.name.clone()));
    header.extend(["base_delay_s", "factored_delay_s", "drp_pct", "status"].map(String::from));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.scenario.to_string()];
        rec.extend(r.settings.iter().map(|v| v.to_string()));
        rec.push(opt6(r.base_delay_s));
        rec.push(opt6(r.factored_delay_s));
        rec.push(r.drp_pct.map(opt6).unwrap_or_default());
        rec.push(r.status.clone());
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    write_atomic(&dir.join("drp.csv"), &bytes)
}

/// Parse `drp.csv`; factor columns sit between `scenario_id` and the four
/// trailing result columns.
pub fn read_drp_csv(text: &str) -> Result<(Vec<String>, Vec<DrpRow>)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header: Vec<String> =
        rdr.headers().map_err(|e| Error::parse("drp.header", e.to_string()))?.iter().map(String::from).collect();
    let n = header.len();
    if n < 5 || header[0] != "scenario_id" || header[n - 4..] != ["base_delay_s", "factored_delay_s", "drp_pct", "status"] {
        return Err(Error::parse("drp.header", "expected scenario_id, factors..., base_delay_s, factored_delay_s, drp_pct, status"));
    }
    let factors = header[1..n - 4].to_vec();
    let mut rows = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let path = format!("drp.row {}", k + 1);
        let rec = rec.map_err(|e| Error::parse(&path, e.to_string()))?;
        if rec.len() != n {
            return Err(Error::parse(&path, format!("{} fields, expected {n}", rec.len())));
        }
        let num = |i: usize| -> Result<f64> {
            if rec[i].is_empty() {
                return Ok(f64::NAN);
            }
            rec[i].parse::<f64>().map_err(|_| Error::parse(format!("{path}.{}", header[i]), format!("`{}` is not a number", &rec[i])))
        };
        let scenario = rec[0].parse::<u64>().map_err(|_| Error::parse(format!("{path}.scenario_id"), "not an integer"))?;
        let settings = (1..n - 4).map(num).collect::<Result<Vec<_>>>()?;
        let drp = num(n - 2)?;
        rows.push(DrpRow {
            scenario,
            settings,
            base_delay_s: num(n - 4)?,
            factored_delay_s: num(n - 3)?,
            drp_pct: drp.is_finite().then_some(drp),
            status: rec[n - 1].to_string(),
        });
    }
    Ok((factors, rows))
}

fn read_runs(text: &str) -> Result<Vec<RunRecord>> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let path = format!("runs.row {}", k + 1);
        let rec = rec.map_err(|e| Error::parse(&path, e.to_string()))?;
        let bad = |what: &str| Error::parse(format!("{path}.{what}"), "malformed value");
        if rec.len() != 6 {
            return Err(Error::parse(&path, "expected 6 fields"));
        }
        out.push(RunRecord {
            scenario: rec[0].parse().map_err(|_| bad("scenario_id"))?,
            seed: rec[1].parse().map_err(|_| bad("seed"))?,
            plan: rec[2].parse().map_err(|_| bad("plan"))?,
            avg_delay_s: rec[3].parse().map_err(|_| bad("avg_delay_s"))?,
            vehicles_completed: rec[4].parse().map_err(|_| bad("veh_completed"))?,
            spillback: &rec[5] == "1",
        });
    }
    Ok(out)
}

/// Regression results of a store.
#[derive(Clone, Debug, PartialEq)]
pub struct StoreAnalysis {
    pub responses: usize,
    pub report: Option<RegressionReport>,
    pub profiles: Vec<ProfilerSlice>,
    pub optimum: Option<ActfOptimum>,
    /// p-value of the linear ActF term.
    pub actf_linear_p: Option<f64>,
    /// Why part of the analysis is missing.
    pub notes: Vec<String>,
}

/// Fit the response surface to a store's DRP table and (re)write
/// `effects.csv`, `profiles.csv`, `report.md` and `manifest.json`.
pub fn analyze_store(dir: &Path) -> Result<StoreAnalysis> {
    let header: Value = serde_json::from_str(&fs::read_to_string(dir.join("experiment.json"))?)
        .map_err(|e| Error::parse("experiment.json", e.to_string()))?;
    let config_hash = header["config_hash"].as_str().unwrap_or_default().to_string();
    let cfg = ExperimentConfig::parse(&header["config"].to_string())?;
    let design = load_design(&fs::read_to_string(dir.join("design.csv"))?)?;
    let (factors, rows) = read_drp_csv(&fs::read_to_string(dir.join("drp.csv"))?)?;
    let names: Vec<&str> = design.space.factors().iter().map(|f| f.name.as_str()).collect();
    if factors != names {
        return Err(Error::parse("drp.header", "factor columns do not match design.csv"));
    }

    let mut settings = Vec::new();
    let mut y = Vec::new();
    match cfg.response {
        ResponseLevel::Scenario => {
            for r in rows.iter().filter(|r| r.status == "ok") {
                if let Some(d) = r.drp_pct {
                    settings.push(r.settings.clone());
                    y.push(d);
                }
            }
        }
        ResponseLevel::Run => {
            let runs = read_runs(&fs::read_to_string(dir.join("runs.csv"))?)?;
            let by_key: BTreeMap<(u64, u64, PlanKind), f64> =
                runs.iter().map(|r| ((r.scenario, r.seed, r.plan), r.avg_delay_s)).collect();
            for r in rows.iter().filter(|r| r.status == "ok") {
                for seed in 0..cfg.seeds {
                    let b = by_key.get(&(r.scenario, seed, PlanKind::Base));
                    let f = by_key.get(&(r.scenario, seed, PlanKind::Factored));
                    if let (Some(&b), Some(&f)) = (b, f) {
                        if let Ok(d) = compute_drp(b, f) {
                            settings.push(r.settings.clone());
                            y.push(d);
                        }
                    }
                }
            }
        }
    }

    let mut analysis = StoreAnalysis {
        responses: y.len(),
        report: None,
        profiles: Vec::new(),
        optimum: None,
        actf_linear_p: None,
        notes: Vec::new(),
    };
    let fitted = ScenarioDesign::new(design.space.clone(), settings).and_then(|d| analyze(&d, &y, Centering::Midrange));
    match fitted {
        Ok(rep) => {
            let center: Vec<f64> = design.space.factors().iter().map(|f| f.mid()).collect();
            for f in design.space.factors() {
                analysis.profiles.push(profile(&rep.fit, &rep.spec, &design.space, &f.name, &center, PROFILE_POINTS)?);
            }
            if design.space.get(ACTF).is_some() {
                analysis.optimum = Some(optimal_actf(&rep.fit, &rep.spec, &design.space, &center)?);
                analysis.actf_linear_p = rep.effects.iter().find(|e| e.effect == ACTF).map(|e| e.p);
            } else {
                analysis.notes.push("ActF is not a design factor; no optimum estimated".into());
            }
            analysis.report = Some(rep);
        }
        Err(e) => analysis.notes.push(format!("response surface not fitted: {e}")),
    }

    let effects_path = dir.join("effects.csv");
    let profiles_path = dir.join("profiles.csv");
    match &analysis.report {
        Some(rep) => {
            let mut buf = Vec::new();
            write_effects_csv(&rep.effects, &mut buf)?;
            write_atomic(&effects_path, &buf)?;
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["factor", "value", "predicted_drp_pct"])?;
            for s in &analysis.profiles {
                for (x, p) in s.grid.iter().zip(&s.predicted) {
                    w.write_record([s.factor.clone(), format!("{x:.6}"), format!("{p:.6}")])?;
                }
            }
            write_atomic(&profiles_path, &w.into_inner().map_err(|e| Error::Io(e.into_error()))?)?;
        }
        None => {
            for p in [&effects_path, &profiles_path] {
                if p.exists() {
                    fs::remove_file(p)?;
                }
            }
        }
    }
    let report = render_report(&config_hash, &cfg, &design, &rows, &analysis);
    write_atomic(&dir.join("report.md"), report.as_bytes())?;

    let mut files = BTreeMap::new();
    for name in ["experiment.json", "design.csv", "runs.csv", "drp.csv", "effects.csv", "profiles.csv", "report.md"] {
        let p = dir.join(name);
        if p.exists() {
            files.insert(name.to_string(), sha256_hex(&fs::read(&p)?));
        }
    }
    let completion: BTreeMap<String, String> = rows.iter().map(|r| (r.scenario.to_string(), r.status.clone())).collect();
    let manifest = json!({
        "schema": STORE_FORMAT,
        "config_hash": config_hash,
        "scenarios": completion,
        "files": files,
    });
    write_atomic(&dir.join("manifest.json"), format!("{}\n", serde_json::to_string_pretty(&manifest).expect("json")).as_bytes())?;
    Ok(analysis)
}

fn render_report(
    hash: &str,
    cfg: &ExperimentConfig,
    design: &ScenarioDesign,
    rows: &[DrpRow],
    a: &StoreAnalysis,
) -> String {
    let mut s = String::new();
    let ok: Vec<&DrpRow> = rows.iter().filter(|r| r.status == "ok").collect();
    s += "# ActF experiment report\n\n";
    s += &format!("- Config hash: `{hash}`\n");
    s += &format!("- Scenarios: {} ({} failed)\n", rows.len(), rows.len() - ok.len());
    s += &format!("- Seeds per scenario: {}\n", cfg.seeds);
    s += &format!("- Simulated time per run: {:.0} s warm-up + {:.0} s analysis\n", cfg.sim.warmup_s, cfg.sim.analysis_s);
    s += &format!(
        "- Response: {} ({} observations)\n\n",
        match cfg.response {
            ResponseLevel::Scenario => "scenario DRP from seed-averaged delays",
            ResponseLevel::Run => "per-seed DRP",
        },
        a.responses
    );

    s += "## Delay reduction\n\n";
    let drps: Vec<f64> = ok.iter().filter_map(|r| r.drp_pct).collect();
    if drps.is_empty() {
        s += "No successful scenarios.\n\n";
    } else {
        let mean = drps.iter().sum::<f64>() / drps.len() as f64;
        let min = drps.iter().copied().fold(f64::INFINITY, f64::min);
        let max = drps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        s += &format!("Mean DRP {mean:.3} %, range [{min:.3}, {max:.3}] %.\n\n");
        if let Some(k) = design.space.index_of(ACTF) {
            let mut by: BTreeMap<String, (f64, usize)> = BTreeMap::new();
            for r in &ok {
                if let Some(d) = r.drp_pct {
                    let e = by.entry(format!("{:.2}", r.settings[k])).or_default();
                    e.0 += d;
                    e.1 += 1;
                }
            }
            s += "| ActF | Scenarios | Mean DRP (%) |\n|---|---|---|\n";
            for (level, (sum, n)) in &by {
                s += &format!("| {level} | {n} | {:.3} |\n", sum / *n as f64);
            }
            s += "\n";
        }
    }

    s += "## Effect tests\n\n";
    match &a.report {
        Some(rep) => {
            s += "| Source | Nparm | DF | Sum of Squares | F Ratio | Prob > F |\n|---|---|---|---|---|---|\n";
            for e in &rep.effects {
                s += &format!("| {} | {} | {} | {:.3} | {:.3} | {:.4} |\n", e.effect, e.nparm, e.df, e.ss, e.f, e.p);
            }
            s += &format!(
                "\nResidual DF {}, residual SS {:.3}, R² {:.4}.\n\n",
                rep.fit.df_resid, rep.fit.rss, rep.fit.r2
            );
        }
        None => s += "Not available.\n\n",
    }

    s += "## Optimal actuated factor\n\n";
    match &a.optimum {
        Some(o) => {
            s += &format!("- Estimated optimum: {:.4}\n", o.value);
            s += &format!("- Vertex of the fitted quadratic: {}\n", if o.vertex.is_finite() { format!("{:.4}", o.vertex) } else { "none (flat)".into() });
            s += &format!("- Curvature: {}\n", if o.concave { "concave" } else { "not concave" });
            s += &format!("- Interior: {}\n", if o.interior { "yes" } else { "no (range endpoint)" });
            s += &format!("- Predicted DRP at the optimum: {:.3} %\n", o.predicted);
            if let Some(p) = a.actf_linear_p {
                s += &format!("- Linear ActF term: Prob > F = {p:.4}\n");
            }
            s += &format!("- Reference optimum for comparison: {REFERENCE_ACTF:.2}\n");
            s += "\nOther factors are held at their midrange.\n\n";
        }
        None => s += "Not available.\n\n",
    }

    if !a.notes.is_empty() {
        s += "## Notes\n\n";
        for n in &a.notes {
            s += &format!("- {n}\n");
        }
        s += "\n";
    }
    let failed: Vec<&DrpRow> = rows.iter().filter(|r| r.status != "ok").collect();
    if !failed.is_empty() {
        s += "## Failed scenarios\n\n";
        for r in failed {
            s += &format!("- Scenario {}: {}\n", r.scenario, r.status);
        }
        s += "\n";
    }
    s
}
