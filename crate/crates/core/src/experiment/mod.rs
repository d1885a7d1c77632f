//! The full pipeline: for every design row, build the base plan from the
//! row's volumes, derive the factored plan at the row's ActF, simulate both
//! over every seed, and reduce to a delay reduction percentage (DRP) per
//! scenario. Then fit the response surface and write the results store.
//!
//! Store layout under the output directory:
//!
//! | file | contents |
//! |---|---|
//! | `experiment.json` | canonical config and its hash |
//! | `design.csv` | the scenario matrix |
//! | `runs.csv` | one row per (scenario, seed, plan) |
//! | `drp.csv` | one row per scenario |
//! | `effects.csv` | single-df effect tests |
//! | `profiles.csv` | profiler slices at the design center |
//! | `report.md` | human-readable summary |
//! | `manifest.json` | file digests and completion map |
//!
//! While running, finished runs are appended to `runs.partial.csv` so an
//! interrupted experiment resumes where it stopped.

mod config;
mod store;

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

pub use config::{
    volume_entry, DemandConfig, ExperimentConfig, FactorEntry, ResponseLevel, ScenarioInputs, CONFIG_SCHEMA, JOBS_ENV,
};
pub use store::{
    analyze_store, parse_journal, read_drp_csv, DrpRow, Journal, JournalEntry, PlanKind, RunRecord, StoreAnalysis,
    JOURNAL_FORMAT, REFERENCE_ACTF,
};

use crate::design::{generate_design, load_design, ScenarioDesign};
use crate::error::{Error, Result};
use crate::network::{expand_volumes, load_network, reference_network, ArterialNetwork, REFERENCE_NETWORK_JSON};
use crate::sim::{run_simulation, DemandSpec, RunSpec};
use crate::timing::{apply_actf, optimize_base_plan, TimingPlan};

/// Share of failed scenarios above which the experiment is abandoned.
pub const MAX_FAILURE_SHARE: f64 = 0.2;

/// Delay reduction percentage, `100 (base - factored) / base`.
pub fn compute_drp(base_delay: f64, factored_delay: f64) -> Result<f64> {
    if !(base_delay.is_finite() && base_delay > 0.0) {
        return Err(Error::Domain(format!("base delay must be positive, got {base_delay}")));
    }
    if !factored_delay.is_finite() {
        return Err(Error::Domain(format!("factored delay must be finite, got {factored_delay}")));
    }
    Ok(100.0 * (base_delay - factored_delay) / base_delay)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Stop after this many new simulations, leaving the journal behind.
    pub stop_after: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSummary {
    pub output_dir: PathBuf,
    pub config_hash: String,
    pub scenarios: usize,
    pub failed: Vec<(u64, String)>,
    /// Simulations executed by this invocation.
    pub runs_executed: usize,
    /// Simulations recovered from the journal.
    pub runs_resumed: usize,
    pub analysis: StoreAnalysis,
}

struct Setup {
    base: TimingPlan,
    factored: TimingPlan,
    demand: DemandSpec,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn setup_scenario(
    cfg: &ExperimentConfig,
    net: &ArterialNetwork,
    design: &ScenarioDesign,
    row: &[f64],
) -> Result<Setup> {
    let inputs = cfg.scenario_inputs(&design.space, row)?;
    let mv = expand_volumes(net, &inputs.volumes, inputs.lt_pct)?;
    let base = optimize_base_plan(net, &mv, &cfg.webster)?;
    let factored = apply_actf(&base, inputs.actf)?.plan;
    let demand = DemandSpec {
        volumes: cfg.simulated_volumes(&inputs.volumes),
        lt_pct: inputs.lt_pct,
        phf: cfg.demand.phf,
        profile: cfg.demand.profile,
    };
    Ok(Setup { base, factored, demand })
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentSummary> {
    run_experiment_with(cfg, &RunOptions::default())
}

pub fn run_experiment_with(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<ExperimentSummary> {
    cfg.validate()?;
    let jobs = cfg.effective_jobs()?;
    let (net, net_text) = match &cfg.network {
        Some(p) => {
            let text = fs::read_to_string(p)?;
            (load_network(&text)?, text)
        }
        None => (reference_network(), REFERENCE_NETWORK_JSON.to_string()),
    };
    let (design, design_text) = match &cfg.design {
        Some(p) => {
            let text = fs::read_to_string(p)?;
            (load_design(&text)?, text)
        }
        None => (generate_design(&cfg.factor_space()?, cfg.n_runs, cfg.design_seed)?, String::new()),
    };
    let canonical = cfg.canonical_json();
    let config_hash = sha256_hex(format!("{canonical}\n{net_text}\n{design_text}").as_bytes());

    let dir = &cfg.output_dir;
    fs::create_dir_all(dir)?;
    store::write_header(dir, &config_hash, &canonical)?;
    let mut design_csv = Vec::new();
    design.write_csv(&mut design_csv)?;
    write_atomic(&dir.join("design.csv"), &design_csv)?;

    let journal_path = dir.join(store::JOURNAL_FILE);
    let resumed = store::open_journal(&journal_path, &config_hash)?;
    let mut done: BTreeMap<(u64, u64, PlanKind), JournalEntry> = BTreeMap::new();
    let mut setup_failed: BTreeMap<u64, String> = BTreeMap::new();
    for e in resumed {
        match &e {
            JournalEntry::SetupFailed { scenario, error } => {
                setup_failed.insert(*scenario, error.clone());
            }
            JournalEntry::Run(r) => {
                done.insert((r.scenario, r.seed, r.plan), e);
            }
            JournalEntry::RunFailed { scenario, seed, plan, .. } => {
                done.insert((*scenario, *seed, *plan), e);
            }
        }
    }
    let runs_resumed = done.len();
    let journal = Mutex::new(OpenOptions::new().append(true).open(&journal_path)?);

    let mut setups: Vec<Option<Setup>> = Vec::with_capacity(design.n_runs());
    for (i, row) in design.runs.iter().enumerate() {
        let id = i as u64 + 1;
        match setup_scenario(cfg, &net, &design, row) {
            Ok(s) if !setup_failed.contains_key(&id) => setups.push(Some(s)),
            Ok(_) => setups.push(None),
            Err(e) => {
                if !setup_failed.contains_key(&id) {
                    let entry = JournalEntry::SetupFailed { scenario: id, error: e.to_string() };
                    store::append(&journal, &entry)?;
                    setup_failed.insert(id, e.to_string());
                }
                setups.push(None);
            }
        }
    }

    let mut pending = Vec::new();
    for (i, s) in setups.iter().enumerate() {
        if s.is_none() {
            continue;
        }
        for seed in 0..cfg.seeds {
            for plan in [PlanKind::Base, PlanKind::Factored] {
                let key = (i as u64 + 1, seed, plan);
                if !done.contains_key(&key) {
                    pending.push(key);
                }
            }
        }
    }
    let stopped = opts.stop_after.is_some_and(|n| n < pending.len());
    if let Some(n) = opts.stop_after {
        pending.truncate(n);
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Experiment(format!("thread pool: {e}")))?;
    log::info!("{} simulations to run on {jobs} workers ({runs_resumed} resumed)", pending.len());
    let progress = AtomicUsize::new(0);
    let step = (pending.len() / 10).max(1);
    let fresh: Vec<Result<JournalEntry>> = pool.install(|| {
        pending
            .par_iter()
            .map(|&(id, seed, plan)| {
                let s = setups[(id - 1) as usize].as_ref().expect("scenario set up");
                let tp = match plan {
                    PlanKind::Base => &s.base,
                    PlanKind::Factored => &s.factored,
                };
                let entry = match run_simulation(&net, &s.demand, tp, RunSpec { scenario: id, seed }, &cfg.sim) {
                    Ok(r) => JournalEntry::Run(RunRecord {
                        scenario: id,
                        seed,
                        plan,
                        avg_delay_s: r.avg_delay_s,
                        vehicles_completed: r.vehicles_completed,
                        spillback: r.spillback,
                    }),
                    Err(e) => JournalEntry::RunFailed { scenario: id, seed, plan, error: e.to_string() },
                };
                store::append(&journal, &entry)?;
                let n = progress.fetch_add(1, Ordering::Relaxed) + 1;
                if n % step == 0 || n == pending.len() {
                    log::info!("{n}/{} simulations done", pending.len());
                }
                Ok(entry)
            })
            .collect()
    });
    let runs_executed = fresh.len();
    for e in fresh {
        let e = e?;
        if let JournalEntry::Run(r) = &e {
            done.insert((r.scenario, r.seed, r.plan), e);
        } else if let JournalEntry::RunFailed { scenario, seed, plan, .. } = &e {
            done.insert((*scenario, *seed, *plan), e);
        }
    }
    drop(journal);
    if stopped {
        return Err(Error::Experiment(format!("stopped after {runs_executed} new runs; rerun to resume")));
    }

    // Reduce to scenario rows.
    let mut runs = Vec::new();
    let mut rows = Vec::with_capacity(design.n_runs());
    let mut failed = Vec::new();
    for (i, row) in design.runs.iter().enumerate() {
        let id = i as u64 + 1;
        let mut status = setup_failed.get(&id).map(|e| format!("setup: {e}"));
        let (mut b, mut f) = (Vec::new(), Vec::new());
        if status.is_none() {
            for seed in 0..cfg.seeds {
                for plan in [PlanKind::Base, PlanKind::Factored] {
                    match &done[&(id, seed, plan)] {
                        JournalEntry::Run(r) => {
                            runs.push(r.clone());
                            match plan {
                                PlanKind::Base => b.push(r.avg_delay_s),
                                PlanKind::Factored => f.push(r.avg_delay_s),
                            }
                        }
                        JournalEntry::RunFailed { error, .. } => {
                            status.get_or_insert_with(|| format!("seed {seed} {plan}: {error}"));
                        }
                        JournalEntry::SetupFailed { .. } => unreachable!("keyed by run"),
                    }
                }
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
        let (base, factored) = (mean(&b), mean(&f));
        let drp = match status {
            None => match compute_drp(base, factored) {
                Ok(d) => Some(d),
                Err(e) => {
                    status = Some(e.to_string());
                    None
                }
            },
            Some(_) => None,
        };
        if let Some(s) = &status {
            failed.push((id, s.clone()));
        }
        rows.push(DrpRow {
            scenario: id,
            settings: row.clone(),
            base_delay_s: if b.is_empty() { f64::NAN } else { base },
            factored_delay_s: if f.is_empty() { f64::NAN } else { factored },
            drp_pct: drp,
            status: status.unwrap_or_else(|| "ok".into()),
        });
    }
    store::write_runs(dir, &runs)?;
    store::write_drp(dir, &design, &rows)?;

    let share = failed.len() as f64 / design.n_runs() as f64;
    if share > MAX_FAILURE_SHARE {
        return Err(Error::Experiment(format!(
            "{} of {} scenarios failed (more than {:.0}%); first: scenario {}: {}",
            failed.len(),
            design.n_runs(),
            100.0 * MAX_FAILURE_SHARE,
            failed[0].0,
            failed[0].1
        )));
    }
    let analysis = analyze_store(dir)?;
    fs::remove_file(&journal_path)?;
    Ok(ExperimentSummary {
        output_dir: dir.clone(),
        config_hash,
        scenarios: design.n_runs(),
        failed,
        runs_executed,
        runs_resumed,
        analysis,
    })
}

/// SHA-256 of every regular file in a store, by file name.
pub fn store_digest(dir: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        if entry.file_type()?.is_file() {
            let name = entry.file_name().to_string_lossy().into_owned();
            out.insert(name, sha256_hex(&fs::read(entry.path())?));
        }
    }
    Ok(out)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn drp_arithmetic() {
        assert_eq!(compute_drp(40.0, 30.0).unwrap(), 25.0);
        assert_eq!(compute_drp(30.0, 30.0).unwrap(), 0.0);
        assert!((compute_drp(30.0, 33.0).unwrap() + 10.0).abs() < 1e-12);
        assert!(compute_drp(0.0, 1.0).is_err());
        assert!(compute_drp(-1.0, 1.0).is_err());
    }
}
