//! The `check-stats` verb: Monte Carlo verification of the gate and
//! Laplacian moment identities, one pass/fail line per identity.

use credo_core::harness::moment_checks;
use credo_core::rng::{stream_rng, STREAM_GATES};
use credo_core::schedules::{ScheduleParams, WeightSchedule};

use crate::config::Config;
use crate::setup::{provenance, schedule_request, topology_spec};
use crate::{CommonArgs, Failure};

pub fn run(common: &CommonArgs, draws_flag: Option<usize>) -> Result<(), Failure> {
    let cfg = Config::load(&common.config)?;
    let topo_spec = topology_spec(&cfg, None)?;
    let request = schedule_request(&cfg)?;
    // The innovation gain never enters the communication statistics, so
    // `a = auto` here just means the default.
    let params = ScheduleParams {
        a: request.a.unwrap_or(request.base.a),
        shift: request.shift.unwrap_or(request.base.shift),
        ..request.base
    };

    let check = cfg.section("check");
    let times: Vec<u64> = check.parse_list("times")?.unwrap_or_else(|| vec![0, 10, 100]);
    let draws = match (draws_flag, check.parse::<usize>("draws")?) {
        (Some(d), _) => d,
        (None, Some(d)) => d,
        (None, None) => 100_000,
    };
    let seed = crate::resolve_seed(check.parse_or("seed", 0)?, common.seed)?;
    let corrupt_tau1: Option<f64> = check.parse("corrupt_beta_tau1")?;
    cfg.check_consumed()?;

    let topology = topo_spec.build::<f64>()?;
    let draw_schedule = WeightSchedule::new(params)?;
    let theory_schedule = match corrupt_tau1 {
        // The deliberate negative control: expectations from a schedule
        // the draws do not follow must fail.
        Some(tau1) => WeightSchedule::new(ScheduleParams { tau1, ..params })?,
        None => WeightSchedule::new(params)?,
    };
    println!(
        "moment checks: {} draws at t in {:?} on {} nodes / {} edges{}",
        draws,
        times,
        topology.n_nodes(),
        topology.edges().len(),
        corrupt_tau1
            .map(|t| format!(" (negative control: expectations at tau1 = {t})"))
            .unwrap_or_default(),
    );

    let mut rng = stream_rng(seed, 0, STREAM_GATES);
    let checks = moment_checks(
        &draw_schedule, &theory_schedule, &topology, &times, draws, &mut rng,
    );
    for c in &checks {
        println!(
            "{}  {} at t = {}: observed {:+.6e}, expected {:+.6e}, tolerance {:.2e}",
            if c.pass { "pass" } else { "FAIL" },
            c.name,
            c.t,
            c.observed,
            c.expected,
            c.tolerance,
        );
    }

    let out = crate::prepare_out_dir(&common.out, "check-stats")?;
    let header = provenance(
        &cfg,
        &[
            ("draws", format!("{draws}")),
            ("seed", format!("{seed}")),
        ],
    );
    let artifact = serde_json::json!({
        "config": crate::setup::header_json(&header),
        "checks": checks,
    });
    let mut text = serde_json::to_string_pretty(&artifact)
        .map_err(|e| Failure::runtime(format!("cannot encode checks: {e}")))?;
    text.push('\n');
    std::fs::write(out.join("moments.json"), text)
        .map_err(|e| Failure::runtime(format!("cannot write moments.json: {e}")))?;
    println!("artifacts: {}", out.display());

    let failed: Vec<String> = checks
        .iter()
        .filter(|c| !c.pass)
        .map(|c| format!("{} at t = {}", c.name, c.t))
        .collect();
    if failed.is_empty() {
        println!("all {} identities within tolerance", checks.len());
        Ok(())
    } else {
        Err(Failure::runtime(format!(
            "{} of {} identities outside tolerance: {}",
            failed.len(),
            checks.len(),
            failed.join("; ")
        )))
    }
}
