//! The `rates` and `covariance` verbs: post-run analysis against the
//! theoretical decay exponents and the closed-form asymptotic
//! covariance.

use credo_core::estimators::EstimatorKind;
use credo_core::harness::{
    default_probe_grid, empirical_covariance, fit_loglog, monte_carlo, mse_vs_comm,
    oracle_covariance, theoretical_covariance, write_results_csv, write_summary_json,
    CovarianceSummary, EnsembleSummary, ExperimentSummary,
};

use crate::setup::{header_json, synth_plan};
use crate::{CommonArgs, Failure, RunOverrides};

pub fn rates(common: &CommonArgs, overrides: &RunOverrides) -> Result<(), Failure> {
    let plan = synth_plan(common, overrides, "oracle, benchmark, credo:0.49")?;
    let r = plan.cfg.section("rates");
    let window = (
        r.parse_or("window_lo", 1e3)?,
        r.parse_or("window_hi", plan.config.horizon as f64)?,
    );
    plan.cfg.check_consumed()?;

    println!(
        "rates: {} estimators, {} runs to t = {}, fit window [{}, {}]",
        plan.config.estimators.len(),
        plan.config.n_runs,
        plan.config.horizon,
        window.0,
        window.1,
    );
    let experiment = monte_carlo(&plan.config)?;

    let mut summaries = Vec::new();
    for ensemble in &experiment.ensembles {
        let vs_t = fit_loglog(&ensemble.mse_series(), window)?;
        let vs_comm = match ensemble.kind {
            EstimatorKind::Oracle => None,
            _ => Some(mse_vs_comm(ensemble, window)?),
        };
        // Consistency at the sensing-limited rate means slope -1 in t
        // for every estimator.
        print!(
            "  {}: MSE vs t slope {:+.3} (theory -1, r2 {:.4})",
            ensemble.label, vs_t.slope, vs_t.r_squared
        );
        match &vs_comm {
            Some(c) => println!(
                ", vs communication {:+.3} (theory {:+.3})",
                c.fit.slope, c.theory
            ),
            None => println!(),
        }
        let mut s = EnsembleSummary::describe(ensemble);
        s.mse_vs_t = Some(vs_t);
        s.mse_vs_comm = vs_comm;
        summaries.push(s);
    }

    let out = crate::prepare_out_dir(&common.out, "rates")?;
    write_results_csv(out.join("results.csv"), &experiment, &plan.header)?;
    let summary = ExperimentSummary {
        master_seed: plan.config.master_seed,
        horizon: plan.config.horizon,
        n_runs: plan.config.n_runs,
        config: header_json(&plan.header),
        ensembles: summaries,
        covariance: None,
    };
    write_summary_json(out.join("rates.json"), &summary)?;
    println!("artifacts: {}", out.display());
    Ok(())
}

pub fn covariance(common: &CommonArgs, overrides: &RunOverrides) -> Result<(), Failure> {
    let mut plan = synth_plan(common, overrides, "credo:0.49")?;
    let c = plan.cfg.section("covariance");
    let probe: u64 = c.parse_or("probe", plan.config.horizon)?;
    let node: usize = c.parse_or("node", 0)?;
    let tolerance: Option<f64> = c.parse("tolerance")?;
    plan.cfg.check_consumed()?;

    if probe > plan.config.horizon {
        return Err(Failure::usage(format!(
            "covariance probe {probe} is past the horizon {}",
            plan.config.horizon
        )));
    }
    // The probe must be on the grid for snapshots to exist there.
    let mut probes = if plan.config.probes.is_empty() {
        default_probe_grid(plan.config.horizon)
    } else {
        plan.config.probes.clone()
    };
    if let Err(at) = probes.binary_search(&probe) {
        probes.insert(at, probe);
    }
    plan.config.probes = probes;

    println!(
        "covariance: {} runs to t = {}, probe {probe}, node {node}",
        plan.config.n_runs, plan.config.horizon,
    );
    let experiment = monte_carlo(&plan.config)?;

    let mut entries = Vec::new();
    let mut failures = Vec::new();
    for ensemble in &experiment.ensembles {
        // The distributed estimators share one scaled limit; the
        // centralized one is measured against its own.
        let (theory, at_node) = match ensemble.kind {
            EstimatorKind::Oracle => (oracle_covariance(&plan.model)?, 0),
            _ => (theoretical_covariance(&plan.model, plan.config.schedule.a)?, node),
        };
        let report = empirical_covariance(
            &ensemble.records,
            &experiment.theta,
            probe,
            at_node,
            theory,
        )?;
        println!(
            "  {}: relative error {:.4} at node {at_node}, {:.4} pooled{}",
            ensemble.label,
            report.rel_error_node,
            report.rel_error_pooled,
            match tolerance {
                Some(tol) if report.rel_error_node <= tol => format!(" (<= {tol})"),
                Some(tol) => format!(" (FAIL: > {tol})"),
                None => String::new(),
            },
        );
        if let Some(tol) = tolerance {
            if report.rel_error_node > tol {
                failures.push(format!("{} ({:.4} > {tol})", ensemble.label, report.rel_error_node));
            }
        }
        let summary = CovarianceSummary::from_report(&report);
        entries.push(serde_json::json!({
            "label": ensemble.label,
            "kind": ensemble.kind.to_string(),
            "report": summary,
        }));
    }

    let out = crate::prepare_out_dir(&common.out, "covariance")?;
    let artifact = serde_json::json!({
        "config": header_json(&plan.header),
        "probe": probe,
        "tolerance": tolerance,
        "ensembles": entries,
    });
    let mut text = serde_json::to_string_pretty(&artifact)
        .map_err(|e| Failure::runtime(format!("cannot encode covariance report: {e}")))?;
    text.push('\n');
    std::fs::write(out.join("covariance.json"), text)
        .map_err(|e| Failure::runtime(format!("cannot write covariance.json: {e}")))?;
    println!("artifacts: {}", out.display());

    if failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::runtime(format!(
            "covariance outside tolerance for {}",
            failures.join(", ")
        )))
    }
}
