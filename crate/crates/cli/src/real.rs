//! The `real` verb: load a regression dataset, build the static
//! averaged-regressor model, and replay it through both distributed
//! estimators, reporting test error against communication spent.

use std::path::PathBuf;

use credo_core::estimators::EstimatorKind;
use credo_core::harness::default_probe_grid;
use credo_core::ingest::{build_static_model, load_csv, partition, run_replay, ReplayRecord};
use credo_core::rng::RunStreams;
use credo_core::schedules::WeightSchedule;

use crate::config::Config;
use crate::setup::{probe_list, provenance, resolve_schedule, schedule_request, topology_spec};
use crate::{CommonArgs, Failure, RunOverrides};

/// Per-probe curves averaged over runs, plus the final-pass scalars the
/// comparison is about.
struct Aggregate {
    kind: EstimatorKind,
    test_error: Vec<f64>,
    rel_test_error: Vec<f64>,
    comm_mean: Vec<f64>,
    comm_expected: Vec<f64>,
    final_comm: f64,
    final_test_error: f64,
}

impl Aggregate {
    fn from_runs(kind: EstimatorKind, runs: &[ReplayRecord<f64>]) -> Self {
        let probes = runs[0].probe_times.len();
        let k = runs.len() as f64;
        let mean_over = |get: fn(&ReplayRecord<f64>) -> &Vec<f64>| -> Vec<f64> {
            (0..probes)
                .map(|p| runs.iter().map(|r| get(r)[p]).sum::<f64>() / k)
                .collect()
        };
        let test_error = mean_over(|r| &r.test_error_mean);
        let final_test_error = test_error.last().copied().unwrap_or(f64::NAN);
        let comm_mean = mean_over(|r| &r.comm_mean);
        Self {
            kind,
            final_comm: comm_mean.last().copied().unwrap_or(f64::NAN),
            rel_test_error: mean_over(|r| &r.rel_test_error),
            comm_expected: mean_over(|r| &r.comm_expected),
            test_error,
            comm_mean,
            final_test_error,
        }
    }
}

pub fn run(common: &CommonArgs, overrides: &RunOverrides) -> Result<(), Failure> {
    let cfg = Config::load(&common.config)?;

    let d = cfg.section("dataset");
    let path = PathBuf::from(d.require("path")?);
    if !path.exists() {
        return Err(Failure::usage(format!(
            "dataset file {} does not exist (scripts/fetch_datasets.sh documents the sources)",
            path.display()
        )));
    }
    let target = d.require("target")?;
    let nodes: usize = d.require_parse("nodes")?;
    let per_node: usize = d.require_parse("per_node")?;
    let test_count: usize = d.require_parse("test")?;
    let partition_seed: u64 = d.parse_or("seed", 0)?;
    let noise_var: Option<f64> = d.auto_or("noise_var")?;

    let dataset = load_csv::<f64>(&path, target)?;
    println!(
        "dataset {}: {} usable rows, {} features, {} dropped",
        dataset.name,
        dataset.n_rows(),
        dataset.n_features(),
        dataset.n_dropped(),
    );
    let part = partition(&dataset, nodes, per_node, test_count, partition_seed)?;
    let setup = build_static_model(&dataset, &part, noise_var)?;

    let topo_spec = topology_spec(&cfg, Some(nodes))?;
    let topology = topo_spec.build::<f64>()?;
    if topology.n_nodes() != nodes {
        return Err(Failure::usage(format!(
            "topology has {} nodes but the dataset is partitioned over {nodes}",
            topology.n_nodes()
        )));
    }

    let request = schedule_request(&cfg)?;
    let resolved = resolve_schedule(&request, &setup.model, &topology)?;
    let schedule = WeightSchedule::new(resolved.params)?;

    let exp = cfg.section("experiment");
    let horizon = match (overrides.horizon, exp.auto_or::<u64>("horizon")?) {
        (Some(h), _) => h,
        (None, Some(h)) => h,
        (None, None) => setup.full_pass_horizon(),
    };
    let n_runs = match (overrides.runs, exp.parse::<usize>("runs")?) {
        (Some(r), _) => r,
        (None, Some(r)) => r,
        (None, None) => 1,
    };
    let master_seed = crate::resolve_seed(exp.parse_or("seed", 0)?, common.seed)?;
    let mut probes = probe_list(exp, "probes")?;
    if probes.is_empty() {
        probes = default_probe_grid(horizon);
    }
    cfg.check_consumed()?;

    println!(
        "replay: {nodes} nodes x {per_node} rows, noise variance {:.4}, \
         horizon {horizon}, {n_runs} run(s), a = {:.4}, shift = {}",
        setup.noise_var, resolved.params.a, resolved.params.shift,
    );

    let mut aggregates = Vec::new();
    for kind in [EstimatorKind::Benchmark, EstimatorKind::Credo] {
        let mut runs = Vec::with_capacity(n_runs);
        for i in 0..n_runs {
            let mut streams = RunStreams::derive(master_seed, i as u64);
            runs.push(run_replay(
                kind, &setup, &topology, &schedule, horizon, &mut streams, &probes,
            )?);
        }
        aggregates.push(Aggregate::from_runs(kind, &runs));
    }
    let bench = &aggregates[0];
    let credo = &aggregates[1];
    let comm_ratio = credo.final_comm / bench.final_comm;
    let error_ratio = credo.final_test_error / bench.final_test_error;

    let out = crate::prepare_out_dir(&common.out, "real")?;
    let header = provenance(
        &cfg,
        &[
            ("a", format!("{}", resolved.params.a)),
            ("shift", format!("{}", resolved.params.shift)),
            ("noise_var", format!("{}", setup.noise_var)),
            ("horizon", format!("{horizon}")),
            ("runs", format!("{n_runs}")),
            ("master_seed", format!("{master_seed}")),
        ],
    );
    write_curves(&out.join("real_results.csv"), &header, &probes, &aggregates)?;
    let summary = serde_json::json!({
        "dataset": dataset.name,
        "rows": dataset.n_rows(),
        "dropped": dataset.n_dropped(),
        "nodes": nodes,
        "per_node": per_node,
        "test": test_count,
        "noise_var": setup.noise_var,
        "horizon": horizon,
        "runs": n_runs,
        "master_seed": master_seed,
        "config": crate::setup::header_json(&header),
        "benchmark": scalars(bench),
        "credo": scalars(credo),
        "comm_ratio": comm_ratio,
        "test_error_ratio": error_ratio,
    });
    let mut text = serde_json::to_string_pretty(&summary)
        .map_err(|e| Failure::runtime(format!("cannot encode summary: {e}")))?;
    text.push('\n');
    std::fs::write(out.join("real_summary.json"), text)
        .map_err(|e| Failure::runtime(format!("cannot write summary: {e}")))?;

    for agg in &aggregates {
        println!(
            "  {}: {:.1} transmissions/node, final test error {:.4} \
             ({:.3} of the zero-estimate error)",
            agg.kind,
            agg.final_comm,
            agg.final_test_error,
            agg.rel_test_error.last().copied().unwrap_or(f64::NAN),
        );
    }
    println!("  communication ratio {comm_ratio:.3}, test-error ratio {error_ratio:.3}");
    println!("artifacts: {}", out.display());
    Ok(())
}

fn scalars(agg: &Aggregate) -> serde_json::Value {
    serde_json::json!({
        "final_comm_per_node": agg.final_comm,
        "final_test_error": agg.final_test_error,
        "final_rel_test_error": agg.rel_test_error.last().copied().unwrap_or(f64::NAN),
    })
}

fn write_curves(
    path: &std::path::Path,
    header: &[(String, String)],
    probes: &[u64],
    aggregates: &[Aggregate],
) -> Result<(), Failure> {
    use std::fmt::Write as _;
    let mut text = String::new();
    for (k, v) in header {
        writeln!(text, "# {k} = {v}").unwrap();
    }
    let mut cols = vec!["t".to_string()];
    for agg in aggregates {
        for suffix in ["comm_expected", "comm_mean", "test_error", "rel_test_error"] {
            cols.push(format!("{}_{suffix}", agg.kind));
        }
    }
    writeln!(text, "{}", cols.join(",")).unwrap();
    for (p, &t) in probes.iter().enumerate() {
        write!(text, "{t}").unwrap();
        for agg in aggregates {
            write!(
                text,
                ",{},{},{},{}",
                agg.comm_expected[p], agg.comm_mean[p], agg.test_error[p], agg.rel_test_error[p],
            )
            .unwrap();
        }
        writeln!(text).unwrap();
    }
    std::fs::write(path, text)
        .map_err(|e| Failure::runtime(format!("cannot write {}: {e}", path.display())))
}
