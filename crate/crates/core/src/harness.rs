//! Monte Carlo orchestration: ensembles of runs, the relative-MSE
//! metric, log-log rate fitting, asymptotic-covariance comparison, the
//! Laplacian moment checks, and CSV/JSON result artifacts.
//!
//! Runs are embarrassingly parallel; every aggregate is reduced in
//! run-index order after an ordered parallel collect, so results never
//! depend on thread count or completion order. Per-run randomness comes
//! from [`RunStreams::derive`] on `(master_seed, run_index)`, which makes
//! every estimator variant in an experiment see identical measurement
//! noise — the variants differ only where their definitions differ.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::estimators::{run, DistributedState, EstimatorKind, EstimatorError, RunRecord};
use crate::rng::{stream_rng, RunStreams};
use crate::scalar::{count, real, Real};
use crate::schedules::{gated_laplacian, ScheduleError, ScheduleParams, WeightSchedule};
use crate::sensing::{
    generate_sparse_sensing, gamma_matrix, Parameter, SensingError, SensingModel,
};
use crate::topology::{Topology, TopologyError};

/// Stream tag for drawing theta when a config asks for a random one.
const STREAM_THETA: u64 = 2;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("node {node} starts at the true parameter; relative MSE is undefined")]
    ZeroDenominator { node: usize },
    #[error("{got} of {total} runs diverged for {label}; ensemble abandoned")]
    TooManyDivergences {
        label: String,
        got: usize,
        total: usize,
    },
    #[error("rate fit needs at least {needed} points in the window, found {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("rate fit window contains a nonpositive value; log-log fit undefined")]
    NonPositiveValue,
    #[error("fit window ({lo}, {hi}) is invalid")]
    BadWindow { lo: f64, hi: f64 },
    #[error("no probe at t = {t}")]
    ProbeNotFound { t: u64 },
    #[error("covariance estimation needs at least {needed} runs, got {got}")]
    InsufficientRuns { needed: usize, got: usize },
    #[error(
        "Gamma - I/(2a) is not positive definite at a = {a}; \
         the gain condition (assumption M4) fails for this model"
    )]
    CovarianceNotDefined { a: f64 },
    #[error("global observability fails: the Gram matrix is singular")]
    SingularGram,
    #[error("config invalid: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Sensing(#[from] SensingError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// How an experiment obtains its communication graph.
#[derive(Debug, Clone, PartialEq)]
pub enum TopologySpec {
    Complete { n_nodes: usize },
    Path { n_nodes: usize },
    /// Uniform points in the unit square, edges within `radius`
    /// (`None` = the standard connectivity radius), regenerated until
    /// connected.
    RandomGeometric {
        n_nodes: usize,
        radius: Option<f64>,
        seed: u64,
        max_attempts: usize,
    },
    File(PathBuf),
}

impl TopologySpec {
    pub fn build<T: Real>(&self) -> Result<Topology<T>, HarnessError> {
        Ok(match self {
            TopologySpec::Complete { n_nodes } => Topology::complete(*n_nodes)?,
            TopologySpec::Path { n_nodes } => Topology::path(*n_nodes)?,
            TopologySpec::RandomGeometric { n_nodes, radius, seed, max_attempts } => {
                let r = radius.map(real::<T>).unwrap_or_else(|| {
                    Topology::<T>::connectivity_radius(*n_nodes)
                });
                let mut rng = stream_rng(*seed, 0, crate::rng::STREAM_TOPOLOGY);
                Topology::random_geometric(*n_nodes, r, *max_attempts, &mut rng)?
            }
            TopologySpec::File(path) => Topology::read_edge_list(path)?,
        })
    }

    pub fn n_nodes_hint(&self) -> Option<usize> {
        match self {
            TopologySpec::Complete { n_nodes }
            | TopologySpec::Path { n_nodes }
            | TopologySpec::RandomGeometric { n_nodes, .. } => Some(*n_nodes),
            TopologySpec::File(_) => None,
        }
    }
}

/// How an experiment obtains its measurement model.
#[derive(Debug, Clone, PartialEq)]
pub enum SensingSpec {
    /// Scalar rows with `sparsity` nonzero standard-normal entries,
    /// resampled until globally observable.
    Sparse {
        n_nodes: usize,
        param_dim: usize,
        sparsity: usize,
        noise_var: f64,
        seed: u64,
        max_attempts: usize,
    },
    /// Every node observes `theta` directly under unit-variance-style
    /// scalar noise — the desk configuration.
    ScalarUnit { n_nodes: usize, noise_var: f64 },
    File(PathBuf),
}

impl SensingSpec {
    pub fn build<T: Real>(&self) -> Result<SensingModel<T>, HarnessError> {
        Ok(match self {
            SensingSpec::Sparse { n_nodes, param_dim, sparsity, noise_var, seed, max_attempts } => {
                let mut rng = stream_rng(*seed, 0, crate::rng::STREAM_SENSING);
                generate_sparse_sensing(
                    *n_nodes, *param_dim, *sparsity, real::<T>(*noise_var), *max_attempts, &mut rng,
                )?
            }
            SensingSpec::ScalarUnit { n_nodes, noise_var } => {
                SensingModel::scalar_unit(*n_nodes, real::<T>(*noise_var))?
            }
            SensingSpec::File(path) => SensingModel::read_model(path)?,
        })
    }
}

/// How an experiment obtains the true parameter.
#[derive(Debug, Clone, PartialEq)]
pub enum ThetaSpec {
    /// Independent standard normal entries from the given seed.
    StandardNormal { seed: u64 },
    Values(Vec<f64>),
    Ones,
}

impl ThetaSpec {
    pub fn build<T: Real>(&self, param_dim: usize) -> Result<Parameter<T>, HarnessError> {
        Ok(match self {
            ThetaSpec::StandardNormal { seed } => {
                let mut rng = stream_rng(*seed, 0, STREAM_THETA);
                Parameter::standard_normal(param_dim, &mut rng)
            }
            ThetaSpec::Values(values) => {
                if values.len() != param_dim {
                    return Err(HarnessError::BadConfig(format!(
                        "theta has {} entries, model needs {param_dim}",
                        values.len()
                    )));
                }
                let converted: Vec<T> = values.iter().map(|&v| real(v)).collect();
                Parameter::from_slice(&converted)?
            }
            ThetaSpec::Ones => {
                let ones = vec![T::one(); param_dim];
                Parameter::from_slice(&ones)?
            }
        })
    }
}

/// One estimator variant to run: a kind plus an optional `tau1` override
/// layered on the experiment's base schedule (the gated estimator is
/// typically swept across `tau1` regimes).
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorSpec<T: Real> {
    pub kind: EstimatorKind,
    pub tau1: Option<T>,
}

impl<T: Real> EstimatorSpec<T> {
    pub fn plain(kind: EstimatorKind) -> Self {
        Self { kind, tau1: None }
    }

    pub fn credo_with_tau1(tau1: T) -> Self {
        Self { kind: EstimatorKind::Credo, tau1: Some(tau1) }
    }

    pub fn label(&self) -> String {
        match self.tau1 {
            Some(t1) => format!("{}_tau1_{}", self.kind, t1),
            None => self.kind.to_string(),
        }
    }

    pub fn resolve(&self, base: &ScheduleParams<T>) -> ScheduleParams<T> {
        let mut params = *base;
        if let Some(t1) = self.tau1 {
            params.tau1 = t1;
        }
        params
    }
}

/// Full description of a Monte Carlo experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig<T: Real> {
    pub topology: TopologySpec,
    pub sensing: SensingSpec,
    pub schedule: ScheduleParams<T>,
    pub estimators: Vec<EstimatorSpec<T>>,
    pub theta: ThetaSpec,
    pub horizon: u64,
    pub n_runs: usize,
    pub master_seed: u64,
    /// Empty = the default geometric grid.
    pub probes: Vec<u64>,
}

impl<T: Real> ExperimentConfig<T> {
    fn validate(&self) -> Result<(), HarnessError> {
        if self.n_runs < 1 {
            return Err(HarnessError::BadConfig("n_runs must be at least 1".into()));
        }
        if self.horizon < 2 {
            return Err(HarnessError::BadConfig("horizon must be at least 2".into()));
        }
        if self.estimators.is_empty() {
            return Err(HarnessError::BadConfig("no estimators requested".into()));
        }
        if self.probes.windows(2).any(|w| w[0] >= w[1])
            || self.probes.last().is_some_and(|&p| p > self.horizon)
        {
            return Err(HarnessError::BadConfig(
                "probe grid must be strictly increasing and within the horizon".into(),
            ));
        }
        Ok(())
    }
}

/// Geometrically spaced probe times, about 30 per decade, always ending
/// at the horizon. Dense enough for well-conditioned log-log fits
/// without storing every iteration.
pub fn default_probe_grid(horizon: u64) -> Vec<u64> {
    let mut grid = Vec::new();
    let mut k = 0u32;
    loop {
        let t = 10f64.powf(f64::from(k) / 30.0).round() as u64;
        if t > horizon {
            break;
        }
        if grid.last() != Some(&t) {
            grid.push(t);
        }
        k += 1;
    }
    if grid.last() != Some(&horizon) {
        grid.push(horizon);
    }
    grid
}

/// All runs of one estimator variant, with order-stable aggregates over
/// the runs that stayed finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble<T: Real> {
    pub label: String,
    pub kind: EstimatorKind,
    pub params: ScheduleParams<T>,
    pub probe_times: Vec<u64>,
    /// Successful runs in run-index order.
    pub records: Vec<RunRecord<T>>,
    /// `(run_index, time_of_divergence)` for runs that blew up.
    pub divergences: Vec<(usize, u64)>,
    pub n_runs: usize,
    pub mean_rel_mse: Vec<T>,
    pub std_rel_mse: Vec<T>,
    pub mean_comm: Vec<T>,
    pub expected_comm: Vec<T>,
}

impl<T: Real> Ensemble<T> {
    /// `(t, mean relative MSE)` pairs for rate fitting.
    pub fn mse_series(&self) -> Vec<(f64, f64)> {
        self.probe_times
            .iter()
            .zip(&self.mean_rel_mse)
            .map(|(&t, &v)| (t as f64, v.to_f64().unwrap()))
            .collect()
    }

    /// `(mean realized comm count, mean relative MSE)` pairs, keyed by
    /// the same probe times for window selection.
    pub fn mse_vs_comm_series(&self) -> Vec<(u64, f64, f64)> {
        self.probe_times
            .iter()
            .zip(self.mean_comm.iter().zip(&self.mean_rel_mse))
            .map(|(&t, (&c, &v))| (t, c.to_f64().unwrap(), v.to_f64().unwrap()))
            .collect()
    }
}

/// A resolved, executed experiment: the concrete model, graph, and
/// parameter all ensembles shared, plus one ensemble per estimator spec.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment<T: Real> {
    pub model: SensingModel<T>,
    pub topology: Topology<T>,
    pub theta: Parameter<T>,
    pub probes: Vec<u64>,
    pub ensembles: Vec<Ensemble<T>>,
    pub horizon: u64,
    pub n_runs: usize,
    pub master_seed: u64,
}

impl<T: Real> Experiment<T> {
    pub fn ensemble(&self, label: &str) -> Option<&Ensemble<T>> {
        self.ensembles.iter().find(|e| e.label == label)
    }
}

/// `(1/N) sum_n |x_n(t) - theta|^2 / |x_n(0) - theta|^2` — the
/// displayed metric, averaged across nodes after per-node normalization.
pub fn relative_mse<T: Real>(
    state: &DistributedState<T>,
    theta: &Parameter<T>,
    initial: &DMatrix<T>,
) -> Result<T, HarnessError> {
    let mut acc = T::zero();
    for n in 0..state.n_nodes() {
        let denom = (initial.row(n).transpose() - theta.value()).norm_squared();
        if !(denom > T::zero()) {
            return Err(HarnessError::ZeroDenominator { node: n });
        }
        acc += (state.node_estimate(n) - theta.value()).norm_squared() / denom;
    }
    Ok(acc / count::<T>(state.n_nodes()))
}

/// Runs `config.n_runs` independent runs of every requested estimator.
///
/// Each run index derives its own random streams from the master seed,
/// identically across estimator variants. Diverged runs are dropped from
/// the aggregates and reported; an ensemble where more than half the
/// runs diverge is an error.
pub fn monte_carlo<T: Real>(config: &ExperimentConfig<T>) -> Result<Experiment<T>, HarnessError> {
    config.validate()?;
    let topology = config.topology.build::<T>()?;
    let model = config.sensing.build::<T>()?;
    if topology.n_nodes() != model.n_nodes() {
        return Err(HarnessError::BadConfig(format!(
            "topology has {} nodes, sensing model has {}",
            topology.n_nodes(),
            model.n_nodes()
        )));
    }
    let theta = config.theta.build::<T>(model.param_dim())?;
    let probes = if config.probes.is_empty() {
        default_probe_grid(config.horizon)
    } else {
        config.probes.clone()
    };

    let mut ensembles = Vec::with_capacity(config.estimators.len());
    for spec in &config.estimators {
        let params = spec.resolve(&config.schedule);
        let schedule = WeightSchedule::new(params)?;
        let outcomes: Vec<Result<RunRecord<T>, EstimatorError>> = (0..config.n_runs)
            .into_par_iter()
            .map(|i| {
                let mut streams = RunStreams::derive(config.master_seed, i as u64);
                run(
                    spec.kind, &model, &topology, &schedule, &theta, config.horizon,
                    &mut streams, &probes,
                )
            })
            .collect();

        let mut records = Vec::new();
        let mut divergences = Vec::new();
        for (i, outcome) in outcomes.into_iter().enumerate() {
            match outcome {
                Ok(rec) => records.push(rec),
                Err(EstimatorError::Divergence { time_index }) => {
                    divergences.push((i, time_index))
                }
                Err(other) => return Err(other.into()),
            }
        }
        if divergences.len() * 2 > config.n_runs {
            return Err(HarnessError::TooManyDivergences {
                label: spec.label(),
                got: divergences.len(),
                total: config.n_runs,
            });
        }

        let n_ok = count::<T>(records.len());
        let n_probes = probes.len();
        let mut mean_rel_mse = vec![T::zero(); n_probes];
        let mut mean_comm = vec![T::zero(); n_probes];
        for rec in &records {
            for p in 0..n_probes {
                mean_rel_mse[p] += rec.rel_mse[p];
                mean_comm[p] += rec.comm_mean[p];
            }
        }
        for p in 0..n_probes {
            mean_rel_mse[p] /= n_ok;
            mean_comm[p] /= n_ok;
        }
        let mut std_rel_mse = vec![T::zero(); n_probes];
        if records.len() > 1 {
            for rec in &records {
                for p in 0..n_probes {
                    let d = rec.rel_mse[p] - mean_rel_mse[p];
                    std_rel_mse[p] += d * d;
                }
            }
            let denom = count::<T>(records.len() - 1);
            for s in &mut std_rel_mse {
                *s = (*s / denom).sqrt();
            }
        }
        let expected_comm = records
            .first()
            .map(|r| r.comm_expected.clone())
            .unwrap_or_else(|| vec![T::zero(); n_probes]);

        ensembles.push(Ensemble {
            label: spec.label(),
            kind: spec.kind,
            params,
            probe_times: probes.clone(),
            records,
            divergences,
            n_runs: config.n_runs,
            mean_rel_mse,
            std_rel_mse,
            mean_comm,
            expected_comm,
        });
    }

    Ok(Experiment {
        model,
        topology,
        theta,
        probes,
        ensembles,
        horizon: config.horizon,
        n_runs: config.n_runs,
        master_seed: config.master_seed,
    })
}

/// Least-squares line through `(log t, log value)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub window: (f64, f64),
    pub r_squared: f64,
    pub n_points: usize,
}

/// Fits `log value = slope * log t + intercept` over the points whose
/// abscissa lies in `[window.0, window.1]`.
pub fn fit_loglog(series: &[(f64, f64)], window: (f64, f64)) -> Result<RateFit, HarnessError> {
    if !(window.0 < window.1) || window.0 <= 0.0 {
        return Err(HarnessError::BadWindow { lo: window.0, hi: window.1 });
    }
    let points: Vec<(f64, f64)> = series
        .iter()
        .filter(|(t, _)| *t >= window.0 && *t <= window.1)
        .copied()
        .collect();
    if points.len() < 5 {
        return Err(HarnessError::TooFewPoints { needed: 5, got: points.len() });
    }
    if points.iter().any(|&(t, v)| t <= 0.0 || v <= 0.0) {
        return Err(HarnessError::NonPositiveValue);
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(t, v)| (t.ln(), v.ln())).collect();
    let n = logs.len() as f64;
    let mean_x = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ss_tot: f64 = logs.iter().map(|p| (p.1 - mean_y).powi(2)).sum();
    let ss_res: f64 = logs
        .iter()
        .map(|p| (p.1 - (slope * p.0 + intercept)).powi(2))
        .sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(RateFit {
        slope,
        intercept,
        window,
        r_squared,
        n_points: points.len(),
    })
}

/// A fitted decay rate next to its theoretical target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateComparison {
    pub fit: RateFit,
    pub theory: f64,
}

/// The theoretical MSE-vs-communication exponent for a schedule:
/// `-2/(eps - tau1 + 2)` for the gated estimator, `-1` for the
/// benchmark (whose communication count is `t` itself).
pub fn theory_comm_slope<T: Real>(kind: EstimatorKind, params: &ScheduleParams<T>) -> Option<f64> {
    match kind {
        EstimatorKind::Oracle => None,
        EstimatorKind::Benchmark => Some(-1.0),
        EstimatorKind::Credo => {
            let eps = params.eps.to_f64().unwrap();
            let tau1 = params.tau1.to_f64().unwrap();
            Some(-2.0 / (eps - tau1 + 2.0))
        }
    }
}

/// Fits mean relative MSE against mean realized communication count on a
/// log-log scale, selecting probes by the time window `[t_lo, t_hi]`.
pub fn mse_vs_comm<T: Real>(
    ensemble: &Ensemble<T>,
    window: (f64, f64),
) -> Result<RateComparison, HarnessError> {
    let series: Vec<(f64, f64)> = ensemble
        .mse_vs_comm_series()
        .into_iter()
        .filter(|&(t, _, _)| (t as f64) >= window.0 && (t as f64) <= window.1)
        .map(|(_, c, v)| (c, v))
        .collect();
    let comm_window = match (series.first(), series.last()) {
        (Some(&(lo, _)), Some(&(hi, _))) if lo < hi => (lo, hi),
        _ => return Err(HarnessError::TooFewPoints { needed: 5, got: series.len() }),
    };
    let fit = fit_loglog(&series, comm_window)?;
    let theory = theory_comm_slope(ensemble.kind, &ensemble.params).unwrap_or(f64::NAN);
    Ok(RateComparison { fit, theory })
}

/// Closed-form asymptotic covariance of `sqrt(t+1) (x_n(t) - theta)`:
/// `a I / (2N) + (Gamma - I/(2a))^-1 / (4N)`.
pub fn theoretical_covariance<T: Real>(
    model: &SensingModel<T>,
    a: T,
) -> Result<DMatrix<T>, HarnessError> {
    let m = model.param_dim();
    let n = count::<T>(model.n_nodes());
    let gamma = gamma_matrix(model);
    let shifted = &gamma - DMatrix::identity(m, m) * (T::one() / (a + a));
    let chol = nalgebra::Cholesky::new(shifted.clone()).ok_or_else(|| {
        HarnessError::CovarianceNotDefined { a: a.to_f64().unwrap_or(f64::NAN) }
    })?;
    let half = real::<T>(0.5);
    let quarter = real::<T>(0.25);
    let result =
        DMatrix::identity(m, m) * (a * half / n) + chol.inverse() * (quarter / n);
    Ok((&result + result.transpose()) * half)
}

/// The centralized reference covariance `(N Gamma)^-1`.
pub fn oracle_covariance<T: Real>(model: &SensingModel<T>) -> Result<DMatrix<T>, HarnessError> {
    let gram = crate::sensing::observability_gram(model).0;
    gram.try_inverse().ok_or(HarnessError::SingularGram)
}

/// Sample covariance of `sqrt(t+1) (x_n(t) - theta)` against the closed
/// form, estimated two ways: at one fixed node across runs, and pooled
/// over every node and run.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceReport<T: Real> {
    pub t_probe: u64,
    pub node: usize,
    pub empirical_node: DMatrix<T>,
    pub empirical_pooled: DMatrix<T>,
    pub theoretical: DMatrix<T>,
    pub rel_error_node: T,
    pub rel_error_pooled: T,
}

/// Estimates the scaled-error covariance from an ensemble's snapshots at
/// `t_probe`, comparing against `theoretical` in relative Frobenius
/// norm. Node `node`'s row gives the fixed-node estimate; the pooled
/// estimate uses every node's row of every run.
pub fn empirical_covariance<T: Real>(
    records: &[RunRecord<T>],
    theta: &Parameter<T>,
    t_probe: u64,
    node: usize,
    theoretical: DMatrix<T>,
) -> Result<CovarianceReport<T>, HarnessError> {
    if records.len() < 100 {
        return Err(HarnessError::InsufficientRuns { needed: 100, got: records.len() });
    }
    let idx = records[0]
        .probe_times
        .iter()
        .position(|&t| t == t_probe)
        .ok_or(HarnessError::ProbeNotFound { t: t_probe })?;
    let scale = real::<T>(((t_probe + 1) as f64).sqrt());
    let m = theta.dim();

    let sample_cov = |samples: &[nalgebra::DVector<T>]| {
        let k = count::<T>(samples.len());
        let mut mean = nalgebra::DVector::<T>::zeros(m);
        for s in samples {
            mean += s;
        }
        mean /= k;
        let mut cov = DMatrix::<T>::zeros(m, m);
        for s in samples {
            let d = s - &mean;
            cov += &d * d.transpose();
        }
        cov / count::<T>(samples.len() - 1)
    };

    let node_samples: Vec<_> = records
        .iter()
        .map(|r| (r.estimate_snapshots[idx].row(node).transpose() - theta.value()) * scale)
        .collect();
    let pooled_samples: Vec<_> = records
        .iter()
        .flat_map(|r| {
            let snap = &r.estimate_snapshots[idx];
            (0..snap.nrows())
                .map(|n| (snap.row(n).transpose() - theta.value()) * scale)
                .collect::<Vec<_>>()
        })
        .collect();

    let empirical_node = sample_cov(&node_samples);
    let empirical_pooled = sample_cov(&pooled_samples);
    let theory_norm = theoretical.norm();
    let rel = |emp: &DMatrix<T>| {
        if theory_norm > T::zero() {
            (emp - &theoretical).norm() / theory_norm
        } else {
            emp.norm()
        }
    };
    Ok(CovarianceReport {
        t_probe,
        node,
        rel_error_node: rel(&empirical_node),
        rel_error_pooled: rel(&empirical_pooled),
        empirical_node,
        empirical_pooled,
        theoretical,
    })
}

/// One Monte Carlo identity check: an observed statistic against its
/// closed-form expectation, passing within `tolerance` (4 standard
/// errors, or an exact-zero allowance for degenerate schedules).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentCheck {
    pub name: String,
    pub t: u64,
    pub observed: f64,
    pub expected: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Monte Carlo checks of the gated-Laplacian moment identities and the
/// communication-cost formula at the given times.
///
/// Gates are drawn from `draw_schedule`; expectations are evaluated on
/// `theory_schedule`. Passing the same schedule twice is the normal
/// check; passing different ones is the deliberate negative control
/// (corrupted expectations must fail).
pub fn moment_checks<T: Real, R: Rng + ?Sized>(
    draw_schedule: &WeightSchedule<T>,
    theory_schedule: &WeightSchedule<T>,
    topology: &Topology<T>,
    times: &[u64],
    n_draws: usize,
    rng: &mut R,
) -> Vec<MomentCheck> {
    let n = topology.n_nodes();
    let (ei, ej) = topology.edges()[0];
    let mut checks = Vec::new();

    for &t in times {
        let beta = theory_schedule.beta(t).to_f64().unwrap();
        let rho = theory_schedule.rho(t).to_f64().unwrap();
        let zeta = theory_schedule.zeta(t).to_f64().unwrap();

        // Accumulate the reference edge entry, its square, the full
        // entrywise mean Laplacian, and the gate activation count from
        // one shared set of draws.
        let mut sum_edge = 0.0;
        let mut sum_edge_sq = 0.0;
        let mut mean_l = DMatrix::<f64>::zeros(n, n);
        let mut active = 0usize;
        for _ in 0..n_draws {
            let gates = draw_schedule.draw_gates(t, n, rng);
            active += gates.active_count();
            let l = gated_laplacian(topology, &gates);
            let entry = l[(ei, ej)].to_f64().unwrap();
            sum_edge += entry;
            sum_edge_sq += entry * entry;
            for r in 0..n {
                for c in 0..n {
                    mean_l[(r, c)] += l[(r, c)].to_f64().unwrap();
                }
            }
        }
        let k = n_draws as f64;
        let mean_edge = sum_edge / k;
        let mean_edge_sq = sum_edge_sq / k;

        // E[L_ij] = -beta_t on the reference edge.
        let var_edge = (mean_edge_sq - mean_edge * mean_edge).max(0.0);
        let tol = 4.0 * (var_edge / k).sqrt() + 1e-12;
        checks.push(MomentCheck {
            name: format!("E[L_{ei}{ej}] = -beta"),
            t,
            observed: mean_edge,
            expected: -beta,
            tolerance: tol,
            pass: (mean_edge + beta).abs() <= tol,
        });

        // E[L_ij^2] = rho^4 zeta^2.
        let expected_sq = rho.powi(4) * zeta * zeta;
        // Var(L_ij^2) = E[L^4] - E[L^2]^2 = rho^8 zeta^2 (1 - zeta^2).
        let var_sq = rho.powi(8) * zeta * zeta * (1.0 - zeta * zeta).max(0.0);
        let tol_sq = 4.0 * (var_sq / k).sqrt() + 1e-12;
        checks.push(MomentCheck {
            name: format!("E[L_{ei}{ej}^2] = rho^4 zeta^2"),
            t,
            observed: mean_edge_sq,
            expected: expected_sq,
            tolerance: tol_sq,
            pass: (mean_edge_sq - expected_sq).abs() <= tol_sq,
        });

        // Entrywise E[L(t)] = beta_t * Lbar: report the worst entry in
        // units of its own 4-standard-error tolerance.
        let mut worst_ratio: f64 = 0.0;
        let mut worst_dev = 0.0;
        let mut worst_tol = 1e-12;
        for r in 0..n {
            for c in 0..n {
                let lbar = topology.laplacian()[(r, c)].to_f64().unwrap();
                let expect = beta * lbar;
                let observed = mean_l[(r, c)] / k;
                // Per-entry variance: rho^4 zeta^2 - beta^2 per incident
                // link; the diagonal aggregates degree-many links.
                let links = if r == c { topology.degree(r) as f64 } else { lbar.abs() };
                let var_entry = (rho.powi(4) * zeta * zeta - beta * beta).max(0.0) * links;
                let tol_entry = 4.0 * (var_entry / k).sqrt() + 1e-12;
                let ratio = (observed - expect).abs() / tol_entry;
                if ratio > worst_ratio {
                    worst_ratio = ratio;
                    worst_dev = observed - expect;
                    worst_tol = tol_entry;
                }
            }
        }
        checks.push(MomentCheck {
            name: "E[L(t)] = beta Lbar (worst entry)".into(),
            t,
            observed: worst_dev,
            expected: 0.0,
            tolerance: worst_tol,
            pass: worst_ratio <= 1.0,
        });

        // Gate activation frequency = zeta_t.
        let freq = active as f64 / (k * n as f64);
        let tol_freq = 4.0 * (zeta * (1.0 - zeta) / (k * n as f64)).sqrt() + 1e-12;
        checks.push(MomentCheck {
            name: "P[gate active] = zeta".into(),
            t,
            observed: freq,
            expected: zeta,
            tolerance: tol_freq,
            pass: (freq - zeta).abs() <= tol_freq,
        });
    }

    // Cumulative communication cost over the longest requested window:
    // mean realized per-node count vs the expected partial sum.
    if let Some(&t_max) = times.iter().max() {
        if t_max > 0 {
            let reps = 200usize.min(n_draws.max(1));
            let mut total = 0u64;
            let mut var_sum = 0.0;
            for s in 0..t_max {
                let zeta = draw_schedule.zeta(s).to_f64().unwrap();
                var_sum += zeta * (1.0 - zeta);
            }
            for _ in 0..reps {
                for s in 0..t_max {
                    let gates = draw_schedule.draw_gates(s, n, rng);
                    total += gates.active_count() as u64;
                }
            }
            let observed = total as f64 / (reps as f64 * n as f64);
            let expected = theory_schedule.expected_comm_cost(t_max).to_f64().unwrap();
            let tol = 4.0 * (var_sum / (reps as f64 * n as f64)).sqrt() + 1e-12;
            checks.push(MomentCheck {
                name: format!("C_{t_max} = sum zeta_s"),
                t: t_max,
                observed,
                expected,
                tolerance: tol,
                pass: (observed - expected).abs() <= tol,
            });
        }
    }
    checks
}

// --- artifacts ------------------------------------------------------------

/// Writes the per-probe mean curves of every ensemble as one CSV.
///
/// Leading `#` comment lines carry the provenance header (resolved
/// config and master seed); the column block per ensemble is
/// `{label}_comm_expected, {label}_comm_mean, {label}_rel_mse_mean,
/// {label}_rel_mse_std`. Byte-identical across reruns of the same
/// config and seed.
pub fn write_results_csv<T: Real>(
    path: impl AsRef<Path>,
    experiment: &Experiment<T>,
    header: &[(String, String)],
) -> Result<(), HarnessError> {
    use std::fmt::Write as _;
    let mut out = String::new();
    writeln!(out, "# master_seed = {}", experiment.master_seed).unwrap();
    writeln!(out, "# horizon = {}", experiment.horizon).unwrap();
    writeln!(out, "# n_runs = {}", experiment.n_runs).unwrap();
    for (k, v) in header {
        writeln!(out, "# {k} = {v}").unwrap();
    }
    let mut cols = vec!["t".to_string()];
    for e in &experiment.ensembles {
        for suffix in ["comm_expected", "comm_mean", "rel_mse_mean", "rel_mse_std"] {
            cols.push(format!("{}_{suffix}", e.label));
        }
    }
    writeln!(out, "{}", cols.join(",")).unwrap();
    for (p, &t) in experiment.probes.iter().enumerate() {
        write!(out, "{t}").unwrap();
        for e in &experiment.ensembles {
            write!(
                out,
                ",{},{},{},{}",
                e.expected_comm[p].to_f64().unwrap(),
                e.mean_comm[p].to_f64().unwrap(),
                e.mean_rel_mse[p].to_f64().unwrap(),
                e.std_rel_mse[p].to_f64().unwrap(),
            )
            .unwrap();
        }
        writeln!(out).unwrap();
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct EnsembleSummary {
    pub label: String,
    pub kind: String,
    pub n_runs: usize,
    pub n_diverged: usize,
    pub final_rel_mse_mean: f64,
    pub final_comm_mean: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mse_vs_t: Option<RateFit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mse_vs_comm: Option<RateComparison>,
}

impl EnsembleSummary {
    /// Summary with no fits attached; callers add fits where the
    /// experiment design supports them.
    pub fn describe<T: Real>(ensemble: &Ensemble<T>) -> Self {
        Self {
            label: ensemble.label.clone(),
            kind: ensemble.kind.to_string(),
            n_runs: ensemble.n_runs,
            n_diverged: ensemble.divergences.len(),
            final_rel_mse_mean: ensemble
                .mean_rel_mse
                .last()
                .and_then(|v| v.to_f64())
                .unwrap_or(f64::NAN),
            final_comm_mean: ensemble
                .mean_comm
                .last()
                .and_then(|v| v.to_f64())
                .unwrap_or(f64::NAN),
            mse_vs_t: None,
            mse_vs_comm: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CovarianceSummary {
    pub t_probe: u64,
    pub node: usize,
    pub theoretical: Vec<Vec<f64>>,
    pub empirical_node: Vec<Vec<f64>>,
    pub empirical_pooled: Vec<Vec<f64>>,
    pub rel_error_node: f64,
    pub rel_error_pooled: f64,
}

impl CovarianceSummary {
    pub fn from_report<T: Real>(report: &CovarianceReport<T>) -> Self {
        let to_rows = |m: &DMatrix<T>| {
            (0..m.nrows())
                .map(|i| (0..m.ncols()).map(|j| m[(i, j)].to_f64().unwrap()).collect())
                .collect()
        };
        Self {
            t_probe: report.t_probe,
            node: report.node,
            theoretical: to_rows(&report.theoretical),
            empirical_node: to_rows(&report.empirical_node),
            empirical_pooled: to_rows(&report.empirical_pooled),
            rel_error_node: report.rel_error_node.to_f64().unwrap(),
            rel_error_pooled: report.rel_error_pooled.to_f64().unwrap(),
        }
    }
}

/// The JSON artifact: config echo, seed, per-ensemble results, optional
/// covariance comparison.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentSummary {
    pub master_seed: u64,
    pub horizon: u64,
    pub n_runs: usize,
    pub config: serde_json::Value,
    pub ensembles: Vec<EnsembleSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub covariance: Option<CovarianceSummary>,
}

pub fn write_summary_json(
    path: impl AsRef<Path>,
    summary: &ExperimentSummary,
) -> Result<(), HarnessError> {
    let mut text = serde_json::to_string_pretty(summary)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}
