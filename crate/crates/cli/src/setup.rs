//! Translation from config sections to the library's experiment specs,
//! including `a = auto` / `shift = auto` resolution through the gain
//! condition.

use std::path::PathBuf;

use credo_core::estimators::EstimatorKind;
use credo_core::harness::{EstimatorSpec, ExperimentConfig, SensingSpec, ThetaSpec, TopologySpec};
use credo_core::schedules::ScheduleParams;
use credo_core::sensing::{check_assumption_m4, SensingModel};
use credo_core::topology::Topology;

use crate::config::{Config, ConfigError, SectionRef};
use crate::Failure;

/// `[topology]`; `default_nodes` (the dataset's split, for `real`)
/// stands in when the section gives no node count.
pub fn topology_spec(
    cfg: &Config,
    default_nodes: Option<usize>,
) -> Result<TopologySpec, ConfigError> {
    let s = cfg.section("topology");
    let nodes = |s: SectionRef<'_>| match default_nodes {
        Some(n) => s.parse_or("nodes", n),
        None => s.require_parse("nodes"),
    };
    let kind = s.get("kind").unwrap_or("random_geometric");
    Ok(match kind {
        "complete" => TopologySpec::Complete { n_nodes: nodes(s)? },
        "path" => TopologySpec::Path { n_nodes: nodes(s)? },
        "random_geometric" => TopologySpec::RandomGeometric {
            n_nodes: nodes(s)?,
            radius: s.auto_or("radius")?,
            seed: s.parse_or("seed", 0)?,
            max_attempts: s.parse_or("max_attempts", 200)?,
        },
        "file" => TopologySpec::File(PathBuf::from(s.require("path")?)),
        other => return Err(s.err("kind", format!("unknown topology kind {other:?}"))),
    })
}

pub fn sensing_spec(cfg: &Config) -> Result<SensingSpec, ConfigError> {
    let s = cfg.section("sensing");
    let kind = s.get("kind").unwrap_or("sparse");
    Ok(match kind {
        "sparse" => SensingSpec::Sparse {
            n_nodes: s.require_parse("nodes")?,
            param_dim: s.require_parse("param_dim")?,
            sparsity: s.require_parse("sparsity")?,
            noise_var: s.require_parse("noise_var")?,
            seed: s.parse_or("seed", 0)?,
            max_attempts: s.parse_or("max_attempts", 200)?,
        },
        "scalar_unit" => SensingSpec::ScalarUnit {
            n_nodes: s.require_parse("nodes")?,
            noise_var: s.require_parse("noise_var")?,
        },
        "file" => SensingSpec::File(PathBuf::from(s.require("path")?)),
        other => return Err(s.err("kind", format!("unknown sensing kind {other:?}"))),
    })
}

pub fn theta_spec(cfg: &Config, default_seed: u64) -> Result<ThetaSpec, ConfigError> {
    let s = cfg.section("experiment");
    let kind = s.get("theta").unwrap_or("standard_normal");
    Ok(match kind {
        "standard_normal" => ThetaSpec::StandardNormal {
            seed: s.parse_or("theta_seed", default_seed)?,
        },
        "ones" => ThetaSpec::Ones,
        "values" => ThetaSpec::Values(
            s.parse_list("theta_values")?
                .ok_or_else(|| s.err("theta_values", "required when theta = values"))?,
        ),
        other => return Err(s.err("theta", format!("unknown theta kind {other:?}"))),
    })
}

/// `oracle`, `benchmark`, `credo`, or `credo:TAU1`, comma-separated.
pub fn estimator_list(
    s: SectionRef<'_>,
    key: &str,
    default: &str,
) -> Result<Vec<EstimatorSpec<f64>>, ConfigError> {
    let raw = s.get(key).unwrap_or(default);
    let mut specs = Vec::new();
    for item in raw.split(',') {
        let item = item.trim();
        let spec = match item {
            "oracle" => EstimatorSpec::plain(EstimatorKind::Oracle),
            "benchmark" => EstimatorSpec::plain(EstimatorKind::Benchmark),
            "credo" => EstimatorSpec::plain(EstimatorKind::Credo),
            _ => match item.strip_prefix("credo:").and_then(|t| t.parse::<f64>().ok()) {
                Some(tau1) => EstimatorSpec::credo_with_tau1(tau1),
                None => {
                    return Err(s.err(
                        key,
                        format!(
                            "cannot parse estimator {item:?} \
                             (expected oracle | benchmark | credo | credo:TAU1)"
                        ),
                    ))
                }
            },
        };
        specs.push(spec);
    }
    if specs.is_empty() {
        return Err(s.err(key, "estimator list is empty"));
    }
    Ok(specs)
}

/// Schedule parameters with `a` and `shift` possibly deferred to the
/// gain condition (`None` = auto).
pub struct ScheduleRequest {
    pub base: ScheduleParams<f64>,
    pub a: Option<f64>,
    pub shift: Option<u64>,
}

pub fn schedule_request(cfg: &Config) -> Result<ScheduleRequest, ConfigError> {
    let s = cfg.section("schedule");
    let d = ScheduleParams::<f64>::default();
    let base = ScheduleParams {
        a: d.a,
        shift: d.shift,
        rho0: s.parse_or("rho0", d.rho0)?,
        zeta0: s.parse_or("zeta0", d.zeta0)?,
        eps: s.parse_or("epsilon", d.eps)?,
        tau1: s.parse_or("tau1", d.tau1)?,
        benchmark_b: s.parse_or("b", d.benchmark_b)?,
        benchmark_delta1: s.parse_or("delta1", d.benchmark_delta1)?,
    };
    Ok(ScheduleRequest {
        base,
        a: s.auto_or("a")?,
        shift: s.auto_or("shift")?,
    })
}

/// The resolved innovation gain and how it was chosen.
pub struct ResolvedSchedule {
    pub params: ScheduleParams<f64>,
    pub auto_tuned: bool,
    pub critical_min: f64,
    pub satisfied: bool,
}

/// Fills `a`/`shift` from the gain condition when unset: `a` becomes the
/// smallest admissible gain `1 / critical_min`, and `shift` grows until
/// the first-step innovation update is contraction-safe against the
/// stiffest single node, i.e. `a * max_n lambda_max(H_n' S_n^-1 H_n)
/// / (shift + 1) <= 1`. The per-node block is what the step size actually
/// multiplies — sizing against the summed Gram would overshoot by up to a
/// factor of N and push the `1/t` regime past any practical horizon. An
/// explicit `a` that violates the condition stands, with a warning — the
/// decay-rate guarantees are simply not promised there.
pub fn resolve_schedule(
    request: &ScheduleRequest,
    model: &SensingModel<f64>,
    topology: &Topology<f64>,
) -> Result<ResolvedSchedule, Failure> {
    let beta0 = (request.base.rho0 * request.base.zeta0).powi(2);
    let probe = check_assumption_m4(1.0, model, topology, beta0);
    let critical_min = probe.critical_min;

    let a = match request.a {
        Some(a) => a,
        None => {
            if critical_min <= 0.0 {
                return Err(Failure::runtime(format!(
                    "cannot auto-tune the gain: the critical spectral minimum is \
                     {critical_min:.3e} (disconnected graph or unobservable model)"
                )));
            }
            1.0 / critical_min
        }
    };
    let shift = match request.shift {
        Some(shift) => shift,
        None => {
            let stiffest_block = (0..model.n_nodes())
                .map(|n| {
                    let block = model.innovation_gain(n) * model.sensing(n);
                    block
                        .symmetric_eigenvalues()
                        .iter()
                        .copied()
                        .fold(0.0f64, f64::max)
                })
                .fold(0.0f64, f64::max);
            (a * stiffest_block).ceil().max(0.0) as u64
        }
    };
    let satisfied = a * critical_min >= 1.0;
    if !satisfied {
        log::warn!(
            "gain condition violated: a * critical_min = {:.3} < 1 \
             (a = {a:.4}, critical_min = {critical_min:.4})",
            a * critical_min
        );
    }
    Ok(ResolvedSchedule {
        params: ScheduleParams { a, shift, ..request.base },
        auto_tuned: request.a.is_none() || request.shift.is_none(),
        critical_min,
        satisfied,
    })
}

/// The header lines every artifact carries: the config as written plus
/// the values resolution filled in.
pub fn provenance(
    cfg: &Config,
    resolved: &[(&str, String)],
) -> Vec<(String, String)> {
    let mut header = vec![("config".to_string(), cfg.path().display().to_string())];
    header.extend(cfg.flatten());
    header.extend(
        resolved
            .iter()
            .map(|(k, v)| (format!("resolved.{k}"), v.clone())),
    );
    header
}

/// `log` (or absence) = the default geometric grid; otherwise an
/// explicit comma-separated probe list.
pub fn probe_list(s: SectionRef<'_>, key: &str) -> Result<Vec<u64>, ConfigError> {
    match s.get(key) {
        None | Some("log") => Ok(Vec::new()),
        Some(raw) => raw
            .split(',')
            .map(|item| {
                let item = item.trim();
                item.parse::<u64>()
                    .map_err(|_| s.err(key, format!("cannot parse probe {item:?}")))
            })
            .collect(),
    }
}

/// A fully resolved synthetic experiment: the config handle (so verbs
/// can read their own sections before the consumed check), the built
/// model, and the provenance pairs for artifact headers.
pub struct SynthPlan {
    pub cfg: Config,
    pub config: ExperimentConfig<f64>,
    pub model: SensingModel<f64>,
    pub resolved: ResolvedSchedule,
    pub header: Vec<(String, String)>,
}

/// Everything `synth`, `rates`, and `covariance` share: sections
/// `[topology]`, `[sensing]`, `[schedule]`, `[experiment]`.
pub fn synth_plan(
    common: &crate::CommonArgs,
    overrides: &crate::RunOverrides,
    default_estimators: &str,
) -> Result<SynthPlan, Failure> {
    let cfg = Config::load(&common.config)?;
    let topology_spec = topology_spec(&cfg, None)?;
    let sensing_spec = sensing_spec(&cfg)?;
    let request = schedule_request(&cfg)?;

    let exp = cfg.section("experiment");
    let estimators = estimator_list(exp, "estimators", default_estimators)?;
    let horizon = match (overrides.horizon, exp.parse::<u64>("horizon")?) {
        (Some(h), _) => h,
        (None, Some(h)) => h,
        (None, None) => return Err(exp.err("horizon", "required key is missing").into()),
    };
    let n_runs = match (overrides.runs, exp.parse::<usize>("runs")?) {
        (Some(r), _) => r,
        (None, Some(r)) => r,
        (None, None) => return Err(exp.err("runs", "required key is missing").into()),
    };
    let master_seed = crate::resolve_seed(exp.parse_or("seed", 0)?, common.seed)?;
    let probes = probe_list(exp, "probes")?;
    let theta = theta_spec(&cfg, master_seed)?;

    let model = sensing_spec.build::<f64>()?;
    let topology = topology_spec.build::<f64>()?;
    if model.n_nodes() != topology.n_nodes() {
        return Err(Failure::usage(format!(
            "sensing model has {} nodes but the topology has {}",
            model.n_nodes(),
            topology.n_nodes()
        )));
    }
    let resolved = resolve_schedule(&request, &model, &topology)?;

    let header = provenance(
        &cfg,
        &[
            ("a", format!("{}", resolved.params.a)),
            ("shift", format!("{}", resolved.params.shift)),
            ("master_seed", format!("{master_seed}")),
            ("horizon", format!("{horizon}")),
            ("runs", format!("{n_runs}")),
            ("gain_condition_satisfied", format!("{}", resolved.satisfied)),
        ],
    );
    Ok(SynthPlan {
        cfg,
        config: ExperimentConfig {
            topology: topology_spec,
            sensing: sensing_spec,
            schedule: resolved.params,
            estimators,
            theta,
            horizon,
            n_runs,
            master_seed,
            probes,
        },
        model,
        resolved,
        header,
    })
}

/// The provenance pairs as a JSON object for summary artifacts.
pub fn header_json(header: &[(String, String)]) -> serde_json::Value {
    serde_json::Value::Object(
        header
            .iter()
            .map(|(k, v)| (k.clone(), serde_json::Value::String(v.clone())))
            .collect(),
    )
}
