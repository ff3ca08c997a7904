use std::fs;

use versabo::bench::harness::{PARTIAL_FILE, SUMMARY_FILE, TRACE_FILE};
use versabo::bench::systems::ContaminatedSystem;
use versabo::bench::{run_benchmark, run_trials, BenchError, BenchmarkConfig, RunOptions};
use versabo::data::{AuxKey, Input};
use versabo::probo::System;
use versabo::seed::Seed;

fn config(extra_cells: &str) -> BenchmarkConfig {
    let text = format!(
        r#"{{
        "trials": 2, "iterations": 3, "seed": 21,
        "mh": {{"steps": 200, "pool_cap": 30}},
        "optimizer": {{"budget": 20, "refine_rounds": 4}},
        "cells": [
            {{"id": "contam", "system": {{"id": "contaminated", "p": 0.33}}, "model": "gp",
              "acq": {{"kind": "ei"}}, "fidelity": {{"mode": "fixed", "m": 16}}}}{extra_cells}
        ]
    }}"#
    );
    BenchmarkConfig::from_json(&text).unwrap()
}

fn serial() -> RunOptions {
    RunOptions { serial: true, threads: None }
}

#[test]
fn trace_row_arithmetic() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_benchmark(&config(""), dir.path(), &serial()).unwrap();
    let trace = fs::read_to_string(&report.trace).unwrap();
    let lines: Vec<&str> = trace.lines().collect();
    assert_eq!(lines.len(), 1 + 2 * 3);
    assert_eq!(report.rows, 6);
    assert_eq!(
        lines[0],
        "cell_id,system,model,acq,fidelity_mode,trial,iter,best_f,observed_f,x0,x1,post_calls,gen_calls,inf_calls,wall_ms"
    );
    assert!(lines[1].starts_with("contam,contaminated,gp,ei,fixed16,0,1,"));
    assert!(lines[1..].iter().all(|l| l.split(',').count() == 15 && l.ends_with(",0")));
    let summary = fs::read_to_string(dir.path().join(SUMMARY_FILE)).unwrap();
    assert_eq!(summary.lines().count(), 1 + 3);
    assert!(!dir.path().join(PARTIAL_FILE).exists());
    assert!(dir.path().join(TRACE_FILE).exists());
}

#[test]
fn best_is_monotone_and_inputs_stay_in_box() {
    let extra = r#", {"system": {"id": "state"}, "model": "switching", "acq": {"kind": "ts"},
                     "fidelity": {"mode": "mf", "fidelities": [4, 16]}}"#;
    let cfg = config(extra);
    let outcomes = run_trials(&cfg, &serial(), &|_| {}).unwrap();
    assert_eq!(outcomes.len(), 4);
    for o in &outcomes {
        let system = cfg.cells[o.cell].system.build().unwrap();
        let recs = &o.result.as_ref().unwrap().trace.records;
        assert!(recs.windows(2).all(|w| w[1].best_f <= w[0].best_f));
        assert!(recs.iter().all(|r| system.search_box().contains(&r.x)));
    }
}

#[test]
fn mixed_dimensions_pad_x_columns() {
    let extra = r#", {"system": {"id": "phase_step"}, "model": "phaseshift", "acq": {"kind": "pi"},
                     "fidelity": {"mode": "fixed", "m": 8}}"#;
    let dir = tempfile::tempdir().unwrap();
    let report = run_benchmark(&config(extra), dir.path(), &serial()).unwrap();
    let trace = fs::read_to_string(report.trace).unwrap();
    let last = trace.lines().last().unwrap();
    let fields: Vec<&str> = last.split(',').collect();
    assert_eq!(fields[0], "cell1");
    assert_eq!(fields[10], "");
}

#[test]
fn wall_time_is_opt_in() {
    let mut cfg = config("");
    cfg.record_wall_time = true;
    cfg.iterations = 1;
    let dir = tempfile::tempdir().unwrap();
    let report = run_benchmark(&cfg, dir.path(), &serial()).unwrap();
    assert_eq!(fs::read_to_string(report.trace).unwrap().lines().count(), 3);
}

#[test]
fn multi_fidelity_spends_fewer_calls() {
    let extra = r#", {"id": "mf", "system": {"id": "contaminated", "p": 0.33}, "model": "gp",
                     "acq": {"kind": "ei"}, "fidelity": {"mode": "mf", "fidelities": [4, 16]}}"#;
    let cfg = config(extra);
    let outcomes = run_trials(&cfg, &serial(), &|_| {}).unwrap();
    let total = |c: usize| outcomes.iter().filter(|o| o.cell == c).map(|o| o.output().trace.gen_calls()).sum::<usize>();
    assert!(total(1) <= total(0), "{} vs {}", total(1), total(0));
}

#[test]
fn unwritable_output_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("occupied");
    fs::write(&file, "x").unwrap();
    let err = run_benchmark(&config(""), &file, &serial()).unwrap_err();
    assert!(matches!(err, BenchError::Io { .. }));
}

#[test]
fn contamination_rate_audit() {
    let system = ContaminatedSystem::new(2, 0.33).unwrap();
    let x = Input::new(vec![0.5, -1.0]).unwrap();
    let hits = (0..10_000u64)
        .filter(|&i| system.evaluate(&x, Seed(i)).aux_int(AuxKey::Contaminated) == Some(1))
        .count();
    let rate = hits as f64 / 10_000.0;
    assert!((rate - 0.33).abs() < 0.02, "{rate}");
}
