use std::fs;

use actf_core::experiment::{
    analyze_store, compute_drp, read_drp_csv, run_experiment, run_experiment_with, store_digest, ExperimentConfig,
    RunOptions,
};
use actf_core::Error;

fn smoke(dir: &std::path::Path, jobs: usize) -> ExperimentConfig {
    let mut c = ExperimentConfig::parse(
        r#"{
            "schema": "actf-exp/1",
            "factors": ["ActF"],
            "fixed": {"VolEB": 700, "VolWB": 600, "LT": 20},
            "n_runs": 6,
            "seeds": 3,
            "sim": {"warmup_s": 300, "analysis_s": 900}
        }"#,
    )
    .unwrap();
    c.output_dir = dir.to_path_buf();
    c.jobs = Some(jobs);
    c
}

#[test]
fn drp_examples() {
    assert_eq!(compute_drp(40.0, 30.0).unwrap(), 25.0);
    assert_eq!(compute_drp(40.0, 40.0).unwrap(), 0.0);
    assert!((compute_drp(30.0, 33.0).unwrap() + 10.0).abs() < 1e-12);
}

#[test]
fn identity_scenarios_have_zero_drp_and_stores_match() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("serial"), tmp.path().join("parallel"));
    let s = run_experiment(&smoke(&a, 1)).unwrap();
    assert!(s.failed.is_empty(), "{:?}", s.failed);
    assert_eq!(s.runs_executed, 36);
    run_experiment(&smoke(&b, 4)).unwrap();
    assert_eq!(store_digest(&a).unwrap(), store_digest(&b).unwrap());
    assert!(!a.join("runs.partial.csv").exists());

    let (factors, rows) = read_drp_csv(&fs::read_to_string(a.join("drp.csv")).unwrap()).unwrap();
    assert_eq!(factors, vec!["ActF"]);
    let ones: Vec<_> = rows.iter().filter(|r| r.settings[0] == 1.0).collect();
    assert!(!ones.is_empty());
    for r in ones {
        assert_eq!(r.drp_pct, Some(0.0));
        assert_eq!(r.base_delay_s, r.factored_delay_s);
    }
    let report = fs::read_to_string(a.join("report.md")).unwrap();
    assert!(report.contains("Estimated optimum"), "{report}");

    // Rerunning into the same directory reproduces every byte.
    let before = store_digest(&a).unwrap();
    run_experiment(&smoke(&a, 2)).unwrap();
    assert_eq!(store_digest(&a).unwrap(), before);

    // So does re-rendering from the stored tables.
    analyze_store(&a).unwrap();
    assert_eq!(store_digest(&a).unwrap(), before);
}

#[test]
fn interrupted_run_resumes_to_the_same_store() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("whole"), tmp.path().join("resumed"));
    run_experiment(&smoke(&a, 2)).unwrap();

    let cfg = smoke(&b, 2);
    let e = run_experiment_with(&cfg, &RunOptions { stop_after: Some(13) }).unwrap_err();
    assert!(matches!(e, Error::Experiment(_)), "{e}");
    // Simulate a torn final write.
    let journal = b.join("runs.partial.csv");
    let mut text = fs::read_to_string(&journal).unwrap();
    text.push_str("5,2,fact");
    fs::write(&journal, text).unwrap();

    let s = run_experiment(&cfg).unwrap();
    assert_eq!(s.runs_resumed, 13);
    assert_eq!(s.runs_executed, 36 - 13);
    assert_eq!(store_digest(&a).unwrap(), store_digest(&b).unwrap());
}

#[test]
fn journal_from_another_config_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = smoke(tmp.path(), 1);
    run_experiment_with(&cfg, &RunOptions { stop_after: Some(2) }).unwrap_err();
    let mut other = cfg.clone();
    other.seeds = 2;
    assert!(matches!(run_experiment(&other), Err(Error::Experiment(_))));
}

#[test]
fn single_identity_scenario() {
    // Too few rows for a generated design; replay one instead.
    let tmp = tempfile::tempdir().unwrap();
    let design = tmp.path().join("one.csv");
    fs::write(&design, "VolEB\n700\n").unwrap();
    let mut c = ExperimentConfig::parse(
        r#"{"schema": "actf-exp/1", "factors": ["VolEB"],
            "fixed": {"ActF": 1.0}, "seeds": 1,
            "sim": {"warmup_s": 120, "analysis_s": 600}}"#,
    )
    .unwrap();
    c.design = Some(design);
    c.output_dir = tmp.path().join("store");
    c.jobs = Some(1);
    let s = run_experiment(&c).unwrap();
    let (_, rows) = read_drp_csv(&fs::read_to_string(tmp.path().join("store/drp.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].drp_pct, Some(0.0));
    assert!(s.analysis.report.is_none());
    assert!(!s.analysis.notes.is_empty());
}

#[test]
fn oversaturated_scenarios_fail_the_experiment() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = ExperimentConfig::parse(
        r#"{"schema": "actf-exp/1", "factors": ["ActF"],
            "fixed": {"VolEB": 5000, "VolWB": 5000}, "n_runs": 3, "seeds": 1,
            "sim": {"warmup_s": 60, "analysis_s": 300}}"#,
    )
    .unwrap();
    c.output_dir = tmp.path().to_path_buf();
    match run_experiment(&c) {
        Err(Error::Experiment(m)) => assert!(m.contains("3 of 3"), "{m}"),
        other => panic!("{other:?}"),
    }
    let drp = fs::read_to_string(tmp.path().join("drp.csv")).unwrap();
    assert!(drp.contains("setup: infeasible"), "{drp}");
}
