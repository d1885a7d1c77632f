use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::design::{Factor, FactorSpace, DEFAULT_RUNS};
use crate::error::{from_json, Error, Result};
use crate::network::ExternalVolumes;
use crate::sim::{DemandProfile, SimParams, DEFAULT_PHF};
use crate::timing::WebsterParams;

pub const CONFIG_SCHEMA: &str = "actf-exp/1";

/// Environment variable that overrides the configured worker count.
pub const JOBS_ENV: &str = "ACTF_JOBS";

/// A design factor: a standard factor name with its default domain, or a name
/// with an explicit range or level list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FactorEntry {
    Name(String),
    Range { name: String, lo: f64, hi: f64 },
    Levels { name: String, levels: Vec<f64> },
}

impl FactorEntry {
    fn name(&self) -> &str {
        match self {
            FactorEntry::Name(n) | FactorEntry::Range { name: n, .. } | FactorEntry::Levels { name: n, .. } => n,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemandConfig {
    pub phf: f64,
    pub profile: DemandProfile,
    /// Simulated arterial volumes relative to the ones the base plan is built from.
    pub main_scale: f64,
    /// Same for side-street volumes.
    pub side_scale: f64,
}

impl Default for DemandConfig {
    fn default() -> Self {
        DemandConfig { phf: DEFAULT_PHF, profile: DemandProfile::Flat, main_scale: 1.0, side_scale: 1.0 }
    }
}

/// What one regression observation is.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResponseLevel {
    /// Scenario DRP from seed-averaged delays: one response per design row.
    #[default]
    Scenario,
    /// One DRP per (scenario, seed).
    Run,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: String,
    /// Network document; the built-in reference arterial when absent.
    #[serde(default)]
    pub network: Option<PathBuf>,
    /// Design CSV to replay instead of generating one.
    #[serde(default)]
    pub design: Option<PathBuf>,
    #[serde(default = "default_factors")]
    pub factors: Vec<FactorEntry>,
    /// Settings for standard factors left out of the design. Missing ones
    /// sit at their midrange.
    #[serde(default)]
    pub fixed: BTreeMap<String, f64>,
    #[serde(default = "default_runs")]
    pub n_runs: usize,
    #[serde(default = "default_seeds")]
    pub seeds: u64,
    #[serde(default = "default_design_seed")]
    pub design_seed: u64,
    #[serde(default)]
    pub sim: SimParams,
    #[serde(default)]
    pub webster: WebsterParams,
    #[serde(default)]
    pub demand: DemandConfig,
    #[serde(default)]
    pub response: ResponseLevel,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub jobs: Option<usize>,
}

fn default_factors() -> Vec<FactorEntry> {
    FactorSpace::standard().factors().iter().map(|f| FactorEntry::Name(f.name.clone())).collect()
}

fn default_runs() -> usize {
    DEFAULT_RUNS
}

fn default_seeds() -> u64 {
    10
}

fn default_design_seed() -> u64 {
    1
}

fn default_output() -> PathBuf {
    PathBuf::from("out/experiment")
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schema: CONFIG_SCHEMA.into(),
            network: None,
            design: None,
            factors: default_factors(),
            fixed: BTreeMap::new(),
            n_runs: DEFAULT_RUNS,
            seeds: default_seeds(),
            design_seed: default_design_seed(),
            sim: SimParams::default(),
            webster: WebsterParams::default(),
            demand: DemandConfig::default(),
            response: ResponseLevel::Scenario,
            output_dir: default_output(),
            jobs: None,
        }
    }
}

/// Resolved inputs for one scenario.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioInputs {
    pub volumes: ExternalVolumes,
    pub lt_pct: f64,
    pub actf: f64,
}

/// External entry fed by a standard volume factor.
pub fn volume_entry(factor: &str) -> Option<String> {
    match factor {
        "VolEB" => Some("EB".into()),
        "VolWB" => Some("WB".into()),
        _ => {
            FactorSpace::standard().get(factor)?;
            factor.strip_prefix("VolSS_").map(String::from)
        }
    }
}

impl ExperimentConfig {
    /// Parse and validate a config document. Relative paths are kept as written.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = from_json(text)?;
        if cfg.schema != CONFIG_SCHEMA {
            return Err(Error::parse("schema", format!("expected `{CONFIG_SCHEMA}`, found `{}`", cfg.schema)));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read a config file, resolving relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.network, &mut cfg.design].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.seeds == 0 {
            return bad("seeds must be at least 1".into());
        }
        if self.n_runs == 0 {
            return bad("n_runs must be at least 1".into());
        }
        if self.jobs == Some(0) {
            return bad("jobs must be at least 1".into());
        }
        self.sim.check().map_err(|e| Error::Config(format!("sim: {e}")))?;
        if self.sim.warmup_s + self.sim.analysis_s <= 0.0 {
            return bad("simulation duration must be positive".into());
        }
        if self.webster.sat_flow != self.sim.sat_flow_vphpl {
            return bad(format!(
                "webster.sat_flow ({}) and sim.sat_flow_vphpl ({}) differ",
                self.webster.sat_flow, self.sim.sat_flow_vphpl
            ));
        }
        let d = &self.demand;
        if !(d.phf > 0.0 && d.phf <= 1.0) {
            return bad(format!("demand.phf must lie in (0, 1], got {}", d.phf));
        }
        for (name, k) in [("main_scale", d.main_scale), ("side_scale", d.side_scale)] {
            if !(k.is_finite() && k >= 0.0) {
                return bad(format!("demand.{name} must be non-negative, got {k}"));
            }
        }
        let space = self.factor_space()?;
        for (name, v) in &self.fixed {
            if FactorSpace::standard().get(name).is_none() {
                return Err(Error::Unknown { kind: "factor", name: name.clone() });
            }
            if space.get(name).is_some() {
                return bad(format!("factor `{name}` is both designed and fixed"));
            }
            if !v.is_finite() {
                return bad(format!("fixed.{name} must be a number"));
            }
        }
        Ok(())
    }

    pub fn factor_space(&self) -> Result<FactorSpace> {
        let table = FactorSpace::standard();
        let mut factors = Vec::with_capacity(self.factors.len());
        for e in &self.factors {
            let default =
                table.get(e.name()).ok_or_else(|| Error::Unknown { kind: "factor", name: e.name().to_string() })?;
            factors.push(match e {
                FactorEntry::Name(_) => default.clone(),
                FactorEntry::Range { name, lo, hi } => Factor::continuous(name, *lo, *hi),
                FactorEntry::Levels { name, levels } => Factor::discrete(name, levels.clone()),
            });
        }
        FactorSpace::new(factors).map_err(|e| Error::Config(e.to_string()))
    }

    /// Full standard-factor settings for one design row.
    pub fn scenario_inputs(&self, space: &FactorSpace, row: &[f64]) -> Result<ScenarioInputs> {
        let table = FactorSpace::standard();
        let mut values: BTreeMap<&str, f64> = table.factors().iter().map(|f| (f.name.as_str(), f.mid())).collect();
        for (k, v) in &self.fixed {
            values.insert(k.as_str(), *v);
        }
        for (f, v) in space.factors().iter().zip(row) {
            match values.get_mut(f.name.as_str()) {
                Some(slot) => *slot = *v,
                None => return Err(Error::Unknown { kind: "factor", name: f.name.clone() }),
            }
        }
        let mut volumes = ExternalVolumes::default();
        for (name, v) in &values {
            if let Some(entry) = volume_entry(name) {
                volumes.0.insert(entry, *v);
            }
        }
        Ok(ScenarioInputs { volumes, lt_pct: values["LT"], actf: values["ActF"] })
    }

    /// Volumes actually simulated for a scenario.
    pub fn simulated_volumes(&self, planned: &ExternalVolumes) -> ExternalVolumes {
        ExternalVolumes(
            planned
                .0
                .iter()
                .map(|(id, v)| {
                    let k = if id == "EB" || id == "WB" { self.demand.main_scale } else { self.demand.side_scale };
                    (id.clone(), v * k)
                })
                .collect(),
        )
    }

    /// Worker count: the environment override, then the config, then the
    /// machine's parallelism.
    pub fn effective_jobs(&self) -> Result<usize> {
        if let Ok(v) = std::env::var(JOBS_ENV) {
            return match v.trim().parse::<usize>() {
                Ok(n) if n > 0 => Ok(n),
                _ => Err(Error::Config(format!("{JOBS_ENV} must be a positive integer, got `{v}`"))),
            };
        }
        Ok(self.jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())))
    }

    /// Canonical JSON with the fields that do not affect results cleared.
    pub(crate) fn canonical_json(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        c.jobs = None;
        c.network = c.network.map(|_| PathBuf::from("<network>"));
        c.design = c.design.map(|_| PathBuf::from("<design>"));
        serde_json::to_string_pretty(&c).expect("config serializes")
    }
}
