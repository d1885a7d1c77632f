//! `actf`: command-line front end to the signal timing lab.
//!
//! Every subcommand reads and writes the documented file formats. Output
//! goes to `--out` when given, otherwise stdout; diagnostics go to stderr.
//! Usage errors exit 2, every other failure exits 1.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use actf_core::calibration::{check_calibration, load_counts, GehConvention};
use actf_core::controller::write_trace_csv;
use actf_core::design::{d_efficiency, generate_design, FactorSpace, DEFAULT_RUNS};
use actf_core::experiment::{analyze_store, run_experiment, ExperimentConfig, JOBS_ENV, REFERENCE_ACTF};
use actf_core::network::{
    expand_volumes, load_network, load_volumes, reference_network, reference_volumes, ArterialNetwork, ExternalVolumes,
};
use actf_core::sim::{run_simulation, write_link_counts_csv, write_runs_csv, DemandSpec, RunSpec, SimParams};
use actf_core::timing::{apply_actf, load_plan, optimize_base_plan, validate_plan, TimingPlan, WebsterParams};
use actf_core::Error;

#[derive(Parser)]
#[command(name = "actf", version, about = "Semi-actuated coordinated arterial signal timing lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Network documents.
    #[command(subcommand)]
    Net(NetCommand),
    /// Timing plans.
    #[command(subcommand)]
    Plan(PlanCommand),
    /// Single simulation runs.
    #[command(subcommand)]
    Sim(SimCommand),
    /// Compare simulated link volumes with counts using GEH.
    Calibrate(CalibrateArgs),
    /// Experimental designs.
    #[command(subcommand)]
    Doe(DoeCommand),
    /// Full experiments.
    #[command(subcommand)]
    Experiment(ExperimentCommand),
    /// Response surface analysis of a results store.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    /// Reports.
    #[command(subcommand)]
    Report(ReportCommand),
}

#[derive(Subcommand)]
enum NetCommand {
    /// Check a network document and list any findings.
    Validate {
        /// Network document; the bundled reference arterial when omitted.
        network: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Inputs {
    /// Network document (defaults to the bundled reference arterial).
    #[arg(long)]
    network: Option<PathBuf>,
    /// Demand document (defaults to the bundled reference volumes).
    #[arg(long)]
    volumes: Option<PathBuf>,
}

#[derive(Subcommand)]
enum PlanCommand {
    /// Build the Webster base plan for a network and demand.
    Base {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Derive the factored plan from a base plan.
    Actf {
        /// Base plan document.
        #[arg(long)]
        plan: PathBuf,
        /// Actuated factor, at least 1.
        #[arg(long)]
        factor: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum SimCommand {
    /// Simulate one plan for one seed and print the run row.
    Run(SimRunArgs),
}

#[derive(Args)]
struct SimRunArgs {
    #[command(flatten)]
    inputs: Inputs,
    /// Plan document.
    #[arg(long)]
    plan: PathBuf,
    #[arg(long)]
    seed: u64,
    /// Scenario id used to key the random streams.
    #[arg(long, default_value_t = 1)]
    scenario: u64,
    #[arg(long)]
    warmup: Option<f64>,
    #[arg(long)]
    analysis: Option<f64>,
    /// Write the per-tick signal trace CSV here.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Write hourly link throughput CSV here.
    #[arg(long)]
    link_counts: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Convention {
    Standard,
    Halved,
}

impl From<Convention> for GehConvention {
    fn from(c: Convention) -> Self {
        match c {
            Convention::Standard => GehConvention::Standard,
            Convention::Halved => GehConvention::Halved,
        }
    }
}

#[derive(Args)]
struct CalibrateArgs {
    /// Target counts, CSV with columns `link,count`.
    #[arg(long)]
    counts: PathBuf,
    /// Model volumes in the same format; simulated when omitted.
    #[arg(long)]
    model: Option<PathBuf>,
    #[command(flatten)]
    inputs: Inputs,
    /// Plan to simulate (defaults to the base plan for the demand).
    #[arg(long)]
    plan: Option<PathBuf>,
    /// Seeds 1..=N to average the simulated volumes over.
    #[arg(long, default_value_t = 3)]
    seeds: u64,
    #[arg(long, value_enum, default_value_t = Convention::Standard)]
    convention: Convention,
    /// Exit 1 when the calibration criteria are not met.
    #[arg(long)]
    strict: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum DoeCommand {
    /// Generate a D-optimal design for the second-order model.
    Generate {
        /// Factors to vary (default: all of them).
        #[arg(long, value_delimiter = ',')]
        factors: Vec<String>,
        #[arg(long, default_value_t = DEFAULT_RUNS)]
        runs: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum ExperimentCommand {
    /// Run (or resume) the experiment described by a config document.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override the output directory.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Parallel simulations; the environment variable wins over this.
        #[arg(long)]
        jobs: Option<usize>,
    },
}

#[derive(Subcommand)]
enum AnalyzeCommand {
    /// Refit the response surface from a store's DRP table and print the effect tests.
    Fit {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum ReportCommand {
    /// Rebuild a store's report and print it.
    Render {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // clap exits 2 on usage errors.
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report_error(&e);
            ExitCode::FAILURE
        }
    }
}

fn report_error(e: &anyhow::Error) {
    let mut err = io::stderr().lock();
    if let Some(Error::Validation { findings }) = e.downcast_ref::<Error>() {
        let _ = writeln!(err, "error: {} finding(s)", findings.len());
        for f in findings {
            let _ = writeln!(err, "  - {f}");
        }
        return;
    }
    let _ = writeln!(err, "error: {e}");
    for cause in e.chain().skip(1) {
        let _ = writeln!(err, "  caused by: {cause}");
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Net(NetCommand::Validate { network }) => net_validate(network.as_deref()),
        Command::Plan(PlanCommand::Base { inputs, out }) => {
            let net = network(&inputs)?;
            let (vols, lt) = volumes(&inputs)?;
            let plan = base_plan(&net, &vols, lt)?;
            emit(out.as_deref(), &plan.to_json())
        }
        Command::Plan(PlanCommand::Actf { plan, factor, out }) => {
            let base = read_plan(&plan)?;
            let t = apply_actf(&base, factor)?;
            emit(out.as_deref(), &t.plan.to_json())
        }
        Command::Sim(SimCommand::Run(args)) => sim_run(args),
        Command::Calibrate(args) => calibrate(args),
        Command::Doe(DoeCommand::Generate { factors, runs, seed, out }) => {
            let space = if factors.is_empty() { FactorSpace::standard() } else { FactorSpace::standard_subset(&factors)? };
            let design = generate_design(&space, runs, seed)?;
            eprintln!("D-efficiency {:.4}", d_efficiency(&design)?);
            let mut buf = Vec::new();
            design.write_csv(&mut buf)?;
            emit(out.as_deref(), &String::from_utf8(buf)?)
        }
        Command::Experiment(ExperimentCommand::Run { config, output, jobs }) => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(dir) = output {
                cfg.output_dir = dir;
            }
            if jobs.is_some() {
                cfg.jobs = jobs;
            }
            if let Ok(v) = std::env::var(JOBS_ENV) {
                log::info!("{JOBS_ENV}={v} overrides the configured parallelism");
            }
            cfg.validate()?;
            let s = run_experiment(&cfg)?;
            println!("store {}", s.output_dir.display());
            println!("config hash {}", s.config_hash);
            println!(
                "{} scenarios, {} failed, {} runs executed, {} resumed",
                s.scenarios,
                s.failed.len(),
                s.runs_executed,
                s.runs_resumed
            );
            if let Some(o) = &s.analysis.optimum {
                println!(
                    "optimal ActF {:.3} ({}; reference {REFERENCE_ACTF})",
                    o.value,
                    if o.concave { "concave" } else { "not concave" }
                );
            }
            for n in &s.analysis.notes {
                println!("note: {n}");
            }
            Ok(())
        }
        Command::Analyze(AnalyzeCommand::Fit { store, out }) => {
            let a = analyze_store(&store)?;
            if a.report.is_none() {
                bail!("no model fitted: {}", a.notes.join("; "));
            }
            let effects = read(&store.join("effects.csv"))?;
            emit(out.as_deref(), &effects)
        }
        Command::Report(ReportCommand::Render { store, out }) => {
            analyze_store(&store)?;
            let report = read(&store.join("report.md"))?;
            emit(out.as_deref(), &report)
        }
    }
}

fn net_validate(path: Option<&Path>) -> Result<()> {
    let net = match path {
        Some(p) => load_network(&read(p)?)?,
        None => reference_network(),
    };
    println!(
        "ok: {} intersections, {} links, {} external entries",
        net.intersections().len(),
        net.links().len(),
        net.externals().len()
    );
    Ok(())
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    let text = if text.ends_with('\n') { text.to_string() } else { format!("{text}\n") };
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            io::stdout().lock().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn network(inputs: &Inputs) -> Result<ArterialNetwork> {
    Ok(match &inputs.network {
        Some(p) => load_network(&read(p)?).with_context(|| format!("loading {}", p.display()))?,
        None => reference_network(),
    })
}

fn volumes(inputs: &Inputs) -> Result<(ExternalVolumes, f64)> {
    Ok(match &inputs.volumes {
        Some(p) => load_volumes(&read(p)?).with_context(|| format!("loading {}", p.display()))?,
        None => reference_volumes(),
    })
}

fn base_plan(net: &ArterialNetwork, vols: &ExternalVolumes, lt_pct: f64) -> Result<TimingPlan> {
    let mv = expand_volumes(net, vols, lt_pct)?;
    Ok(optimize_base_plan(net, &mv, &WebsterParams::default())?)
}

fn read_plan(path: &Path) -> Result<TimingPlan> {
    let plan = load_plan(&read(path)?).with_context(|| format!("loading {}", path.display()))?;
    validate_plan(&plan).into_result().with_context(|| format!("plan {} is invalid", path.display()))?;
    Ok(plan)
}

fn sim_run(args: SimRunArgs) -> Result<()> {
    let net = network(&args.inputs)?;
    let (vols, lt) = volumes(&args.inputs)?;
    let plan = read_plan(&args.plan)?;
    let mut params = SimParams { record_trace: args.trace.is_some(), ..SimParams::default() };
    if let Some(w) = args.warmup {
        params.warmup_s = w;
    }
    if let Some(a) = args.analysis {
        params.analysis_s = a;
    }
    params.check()?;
    let demand = DemandSpec::flat(vols, lt);
    let r = run_simulation(&net, &demand, &plan, RunSpec { scenario: args.scenario, seed: args.seed }, &params)?;
    if let Some(p) = &args.trace {
        write_trace_csv(&r.traces, fs::File::create(p).with_context(|| format!("writing {}", p.display()))?)?;
    }
    if let Some(p) = &args.link_counts {
        write_link_counts_csv(
            std::slice::from_ref(&r),
            fs::File::create(p).with_context(|| format!("writing {}", p.display()))?,
        )?;
    }
    if r.spillback {
        log::warn!("spillback on {}", r.spillback_links.join(", "));
    }
    let mut buf = Vec::new();
    write_runs_csv(std::slice::from_ref(&r), &mut buf)?;
    emit(args.out.as_deref(), &String::from_utf8(buf)?)
}

fn calibrate(args: CalibrateArgs) -> Result<()> {
    let counts = load_counts(&read(&args.counts)?).with_context(|| format!("loading {}", args.counts.display()))?;
    let model = match &args.model {
        Some(p) => load_counts(&read(p)?).with_context(|| format!("loading {}", p.display()))?,
        None => simulated_counts(&args)?,
    };
    let mut pairs = BTreeMap::new();
    for (link, &v) in &counts {
        let e = *model.get(link).with_context(|| format!("no model volume for link `{link}`"))?;
        pairs.insert(link.clone(), (e, v));
    }
    let report = check_calibration(&pairs, args.convention.into())?;
    let mut buf = Vec::new();
    report.write_csv(&mut buf)?;
    emit(args.out.as_deref(), &String::from_utf8(buf)?)?;
    eprintln!("{}", report.summary());
    if args.strict && !report.pass {
        bail!("calibration criteria not met");
    }
    Ok(())
}

fn simulated_counts(args: &CalibrateArgs) -> Result<BTreeMap<String, f64>> {
    if args.seeds == 0 {
        bail!("--seeds must be at least 1");
    }
    let net = network(&args.inputs)?;
    let (vols, lt) = volumes(&args.inputs)?;
    let plan = match &args.plan {
        Some(p) => read_plan(p)?,
        None => base_plan(&net, &vols, lt)?,
    };
    let demand = DemandSpec::flat(vols, lt);
    let params = SimParams::default();
    let mut sums: BTreeMap<String, f64> = BTreeMap::new();
    for seed in 1..=args.seeds {
        let r = run_simulation(&net, &demand, &plan, RunSpec { scenario: 1, seed }, &params)?;
        for (link, n) in r.link_counts {
            *sums.entry(link).or_default() += n;
        }
    }
    let k = args.seeds as f64;
    Ok(sums.into_iter().map(|(l, n)| (l, n / k)).collect())
}
