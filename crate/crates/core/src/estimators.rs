//! Update rules and run loops for the three estimators: the centralized
//! oracle, the always-communicating benchmark, and the randomly gated
//! distributed estimator, plus the averaged-sequence diagnostic.
//!
//! The benchmark and gated estimators share one consensus+innovation
//! kernel parameterized by a per-link weight function. The benchmark
//! passes the deterministic weight `w_t` for every link; the gated
//! estimator passes the product of the two endpoint gate values. Because
//! both paths execute the same floating-point operations in the same
//! order, forcing all gates on and handing the benchmark the matching
//! weight reproduces the gated estimator bit for bit — a
//! cross-implementation oracle the test suite leans on.

use nalgebra::{DMatrix, DVector, RowDVector};
use thiserror::Error;

use crate::rng::RunStreams;
use crate::scalar::{count, Real};
use crate::schedules::{CommLedger, GateVector, WeightSchedule};
use crate::sensing::{observe, ObservationBatch, Parameter, SensingModel};
use crate::topology::Topology;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("estimate matrix is {rows}x{cols}, expected {expected_rows}x{expected_cols}")]
    ShapeMismatch {
        rows: usize,
        cols: usize,
        expected_rows: usize,
        expected_cols: usize,
    },
    #[error("{what} carries time index {found}, state is at {state}")]
    TimeMismatch {
        what: &'static str,
        found: u64,
        state: u64,
    },
    #[error("gate vector required for the gated estimator")]
    MissingGates,
    #[error("observation batch has {found} nodes, model has {expected}")]
    NodeCountMismatch { found: usize, expected: usize },
    #[error("non-finite entry in estimate state")]
    NonFinite,
    #[error("estimate diverged: non-finite values at t = {time_index}")]
    Divergence { time_index: u64 },
    #[error("node {node} starts at the true parameter; relative MSE is undefined")]
    DegenerateInitial { node: usize },
    #[error("probe grid must be strictly increasing and end at or before the horizon")]
    BadProbes,
    #[error("horizon must be at least 1")]
    BadHorizon,
}

/// Which recursion a run executes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EstimatorKind {
    /// Centralized stochastic approximation using all N observations.
    Oracle,
    /// Distributed consensus+innovations, transmitting every step.
    Benchmark,
    /// Distributed consensus+innovations with randomly gated links.
    Credo,
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EstimatorKind::Oracle => "oracle",
            EstimatorKind::Benchmark => "benchmark",
            EstimatorKind::Credo => "credo",
        })
    }
}

/// Stacked estimates for a distributed estimator: row `n` is `x_n(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributedState<T: Real> {
    estimates: DMatrix<T>,
    time_index: u64,
}

impl<T: Real> DistributedState<T> {
    pub fn new(estimates: DMatrix<T>, time_index: u64) -> Result<Self, EstimatorError> {
        if estimates
            .iter()
            .any(|x| !x.to_f64().map(f64::is_finite).unwrap_or(false))
        {
            return Err(EstimatorError::NonFinite);
        }
        Ok(Self { estimates, time_index })
    }

    /// The standard initialization `x_n(0) = 0`.
    pub fn zeros(n_nodes: usize, param_dim: usize) -> Self {
        Self {
            estimates: DMatrix::zeros(n_nodes, param_dim),
            time_index: 0,
        }
    }

    /// Every node already at `theta` — the fixed-point configuration.
    pub fn consensus(theta: &Parameter<T>, n_nodes: usize) -> Self {
        let row = theta.value().transpose();
        Self {
            estimates: DMatrix::from_fn(n_nodes, theta.dim(), |_, j| row[j]),
            time_index: 0,
        }
    }

    pub fn estimates(&self) -> &DMatrix<T> {
        &self.estimates
    }

    /// `x_n(t)` as a column vector.
    pub fn node_estimate(&self, n: usize) -> DVector<T> {
        self.estimates.row(n).transpose()
    }

    pub fn n_nodes(&self) -> usize {
        self.estimates.nrows()
    }

    pub fn param_dim(&self) -> usize {
        self.estimates.ncols()
    }

    pub fn time_index(&self) -> u64 {
        self.time_index
    }
}

/// The centralized estimate `x_c(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleState<T: Real> {
    estimate: DVector<T>,
    time_index: u64,
}

impl<T: Real> OracleState<T> {
    pub fn new(estimate: DVector<T>, time_index: u64) -> Result<Self, EstimatorError> {
        if estimate
            .iter()
            .any(|x| !x.to_f64().map(f64::is_finite).unwrap_or(false))
        {
            return Err(EstimatorError::NonFinite);
        }
        Ok(Self { estimate, time_index })
    }

    pub fn zeros(param_dim: usize) -> Self {
        Self {
            estimate: DVector::zeros(param_dim),
            time_index: 0,
        }
    }

    pub fn estimate(&self) -> &DVector<T> {
        &self.estimate
    }

    pub fn time_index(&self) -> u64 {
        self.time_index
    }
}

/// Everything a single step needs. All constituents must sit at the
/// state's time index.
pub struct StepContext<'a, T: Real> {
    pub observations: &'a ObservationBatch<T>,
    pub gates: Option<&'a GateVector<T>>,
    pub schedule: &'a WeightSchedule<T>,
    pub model: &'a SensingModel<T>,
    pub topology: &'a Topology<T>,
}

impl<'a, T: Real> StepContext<'a, T> {
    fn validate(&self, state_time: u64, n_nodes: usize) -> Result<(), EstimatorError> {
        if self.observations.n_nodes() != self.model.n_nodes() {
            return Err(EstimatorError::NodeCountMismatch {
                found: self.observations.n_nodes(),
                expected: self.model.n_nodes(),
            });
        }
        if self.observations.time_index() != state_time {
            return Err(EstimatorError::TimeMismatch {
                what: "observation batch",
                found: self.observations.time_index(),
                state: state_time,
            });
        }
        if let Some(g) = self.gates {
            if g.time_index() != state_time {
                return Err(EstimatorError::TimeMismatch {
                    what: "gate vector",
                    found: g.time_index(),
                    state: state_time,
                });
            }
        }
        let _ = n_nodes;
        Ok(())
    }

    fn validate_distributed(&self, state: &DistributedState<T>) -> Result<(), EstimatorError> {
        self.validate(state.time_index, state.n_nodes())?;
        if state.n_nodes() != self.model.n_nodes()
            || state.n_nodes() != self.topology.n_nodes()
            || state.param_dim() != self.model.param_dim()
        {
            return Err(EstimatorError::ShapeMismatch {
                rows: state.n_nodes(),
                cols: state.param_dim(),
                expected_rows: self.model.n_nodes(),
                expected_cols: self.model.param_dim(),
            });
        }
        Ok(())
    }
}

/// `x_c(t+1) = x_c(t) + alpha_t sum_n H_n' Sigma_n^-1 (y_n - H_n x_c)`.
pub fn oracle_step<T: Real>(
    state: &OracleState<T>,
    ctx: &StepContext<'_, T>,
) -> Result<OracleState<T>, EstimatorError> {
    ctx.validate(state.time_index, 1)?;
    if state.estimate.len() != ctx.model.param_dim() {
        return Err(EstimatorError::ShapeMismatch {
            rows: 1,
            cols: state.estimate.len(),
            expected_rows: 1,
            expected_cols: ctx.model.param_dim(),
        });
    }
    let alpha = ctx.schedule.alpha(state.time_index);
    let mut innovation = DVector::zeros(state.estimate.len());
    for n in 0..ctx.model.n_nodes() {
        let residual = ctx.observations.node(n) - ctx.model.sensing(n) * &state.estimate;
        innovation += ctx.model.innovation_gain(n) * residual;
    }
    Ok(OracleState {
        estimate: &state.estimate + innovation * alpha,
        time_index: state.time_index + 1,
    })
}

/// Shared consensus+innovation kernel. `link_weight(n, l)` supplies the
/// mixing weight on the directed use of edge `{n, l}`; a weight of exactly
/// zero skips the link without touching the accumulator, so inactive
/// links leave no floating-point trace.
fn consensus_innovation_step<T: Real>(
    state: &DistributedState<T>,
    ctx: &StepContext<'_, T>,
    mut link_weight: impl FnMut(usize, usize) -> T,
) -> Result<DistributedState<T>, EstimatorError> {
    ctx.validate_distributed(state)?;
    let alpha = ctx.schedule.alpha(state.time_index);
    let x = &state.estimates;
    let m = state.param_dim();
    let mut next = x.clone();
    for n in 0..state.n_nodes() {
        let xn = x.row(n);
        let mut consensus = RowDVector::<T>::zeros(m);
        for &l in ctx.topology.neighbors(n) {
            let w = link_weight(n, l);
            if w != T::zero() {
                consensus += (xn - x.row(l)) * w;
            }
        }
        let residual = ctx.observations.node(n) - ctx.model.sensing(n) * xn.transpose();
        let innovation = ctx.model.innovation_gain(n) * residual;
        let mut row = next.row_mut(n);
        row -= consensus;
        row += (innovation * alpha).transpose();
    }
    Ok(DistributedState {
        estimates: next,
        time_index: state.time_index + 1,
    })
}

/// Benchmark update: full neighborhoods every step with the deterministic
/// consensus weight `w_t` from the schedule.
pub fn benchmark_step<T: Real>(
    state: &DistributedState<T>,
    ctx: &StepContext<'_, T>,
) -> Result<DistributedState<T>, EstimatorError> {
    let w = ctx.schedule.benchmark_weight(state.time_index);
    benchmark_step_with_weight(state, ctx, w)
}

/// Benchmark update with an explicit consensus weight. Exposed so tests
/// can hand it the gated estimator's effective link weight and demand
/// exact agreement.
pub fn benchmark_step_with_weight<T: Real>(
    state: &DistributedState<T>,
    ctx: &StepContext<'_, T>,
    weight: T,
) -> Result<DistributedState<T>, EstimatorError> {
    consensus_innovation_step(state, ctx, |_, _| weight)
}

/// Gated update, per-node form: the link `{n, l}` mixes with weight
/// `psi_n psi_l`, so it is active only when both endpoints transmit.
pub fn credo_step<T: Real>(
    state: &DistributedState<T>,
    ctx: &StepContext<'_, T>,
) -> Result<DistributedState<T>, EstimatorError> {
    let gates = ctx.gates.ok_or(EstimatorError::MissingGates)?;
    consensus_innovation_step(state, ctx, |n, l| gates.value(n) * gates.value(l))
}

/// Gated update, stacked matrix form: `X(t+1) = X - L(t) X + alpha_t R`
/// with `L(t)` the gated Laplacian and `R` the stacked innovations. Kept
/// as an independently coded cross-check of [`credo_step`].
pub fn credo_step_stacked<T: Real>(
    state: &DistributedState<T>,
    ctx: &StepContext<'_, T>,
) -> Result<DistributedState<T>, EstimatorError> {
    let gates = ctx.gates.ok_or(EstimatorError::MissingGates)?;
    ctx.validate_distributed(state)?;
    let alpha = ctx.schedule.alpha(state.time_index);
    let x = &state.estimates;
    let laplacian = crate::schedules::gated_laplacian(ctx.topology, gates);
    let mut innovations = DMatrix::zeros(state.n_nodes(), state.param_dim());
    for n in 0..state.n_nodes() {
        let residual = ctx.observations.node(n) - ctx.model.sensing(n) * x.row(n).transpose();
        let gain = ctx.model.innovation_gain(n) * residual;
        innovations.row_mut(n).copy_from(&gain.transpose());
    }
    Ok(DistributedState {
        estimates: x - laplacian * x + innovations * alpha,
        time_index: state.time_index + 1,
    })
}

/// `x_avg(t) = (1/N) sum_n x_n(t)` — the column mean of the estimates.
pub fn averaged_estimate<T: Real>(state: &DistributedState<T>) -> DVector<T> {
    let n = count::<T>(state.n_nodes());
    let mut avg = DVector::zeros(state.param_dim());
    for r in 0..state.n_nodes() {
        avg += state.estimates.row(r).transpose();
    }
    avg / n
}

/// The averaged-sequence recursion evaluated directly:
/// `x_avg(t+1) = x_avg(t) + (alpha_t/N) sum_n H_n' Sigma_n^-1 (y_n - H_n x_n)`.
/// Because the gated Laplacian's columns sum to zero, the consensus term
/// never moves the average; this diagnostic makes that identity testable
/// against the full update.
pub fn averaged_step_diagnostic<T: Real>(
    state: &DistributedState<T>,
    ctx: &StepContext<'_, T>,
) -> Result<DVector<T>, EstimatorError> {
    ctx.validate_distributed(state)?;
    let alpha = ctx.schedule.alpha(state.time_index);
    let n = count::<T>(state.n_nodes());
    let mut innovation = DVector::zeros(state.param_dim());
    for node in 0..state.n_nodes() {
        let residual = ctx.observations.node(node)
            - ctx.model.sensing(node) * state.estimates.row(node).transpose();
        innovation += ctx.model.innovation_gain(node) * residual;
    }
    Ok(averaged_estimate(state) + innovation * (alpha / n))
}

/// Everything one run produces: metric series on the probe grid plus the
/// final estimates. Snapshot rows follow the state layout (row per node;
/// a single row for the oracle).
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord<T: Real> {
    pub kind: EstimatorKind,
    pub probe_times: Vec<u64>,
    /// Relative MSE at each probe: `(1/N) sum_n |x_n - theta|^2 / |x_n(0) - theta|^2`.
    pub rel_mse: Vec<T>,
    /// Cumulative realized transmissions per node, averaged over nodes.
    pub comm_mean: Vec<T>,
    /// The schedule's expected cumulative transmissions per node.
    pub comm_expected: Vec<T>,
    pub estimate_snapshots: Vec<DMatrix<T>>,
    pub final_estimates: DMatrix<T>,
    pub horizon: u64,
}

impl<T: Real> RunRecord<T> {
    pub fn n_probes(&self) -> usize {
        self.probe_times.len()
    }
}

/// Runs one estimator from the standard zero initialization.
///
/// Observations are drawn once per node per step from the observation
/// stream; the gate stream is consumed only by the gated estimator, so
/// every kind sees identical measurement noise under a shared
/// [`RunStreams`] seed — common random numbers across estimators.
pub fn run<T: Real>(
    kind: EstimatorKind,
    model: &SensingModel<T>,
    topology: &Topology<T>,
    schedule: &WeightSchedule<T>,
    theta: &Parameter<T>,
    horizon: u64,
    streams: &mut RunStreams,
    probes: &[u64],
) -> Result<RunRecord<T>, EstimatorError> {
    let rows = match kind {
        EstimatorKind::Oracle => 1,
        _ => model.n_nodes(),
    };
    let initial = DMatrix::zeros(rows, model.param_dim());
    run_with_initial(kind, &initial, model, topology, schedule, theta, horizon, streams, probes)
}

/// Runs one estimator from an explicit initial condition (`1` row for the
/// oracle, `N` rows otherwise).
#[allow(clippy::too_many_arguments)]
pub fn run_with_initial<T: Real>(
    kind: EstimatorKind,
    initial: &DMatrix<T>,
    model: &SensingModel<T>,
    topology: &Topology<T>,
    schedule: &WeightSchedule<T>,
    theta: &Parameter<T>,
    horizon: u64,
    streams: &mut RunStreams,
    probes: &[u64],
) -> Result<RunRecord<T>, EstimatorError> {
    if horizon < 1 {
        return Err(EstimatorError::BadHorizon);
    }
    if probes.windows(2).any(|w| w[0] >= w[1]) || probes.last().is_some_and(|&p| p > horizon) {
        return Err(EstimatorError::BadProbes);
    }
    let n_nodes = model.n_nodes();
    let expected_rows = if kind == EstimatorKind::Oracle { 1 } else { n_nodes };
    if initial.nrows() != expected_rows || initial.ncols() != model.param_dim() {
        return Err(EstimatorError::ShapeMismatch {
            rows: initial.nrows(),
            cols: initial.ncols(),
            expected_rows,
            expected_cols: model.param_dim(),
        });
    }

    // Per-row squared distance to theta at t = 0, the relative-MSE
    // denominators. A row already at theta makes the metric undefined,
    // which only matters if a probe will ask for it (probe-free runs of
    // the fixed-point configuration are legitimate).
    let denominators: Vec<T> = (0..initial.nrows())
        .map(|r| (initial.row(r).transpose() - theta.value()).norm_squared())
        .collect();
    if !probes.is_empty() {
        if let Some(node) = denominators.iter().position(|&d| !(d > T::zero())) {
            return Err(EstimatorError::DegenerateInitial { node });
        }
    }

    let mut state = DistributedState::new(initial.clone(), 0)?;
    let mut oracle = OracleState::new(initial.row(0).transpose(), 0)?;
    let mut ledger = CommLedger::<T>::new(n_nodes);

    let mut record = RunRecord {
        kind,
        probe_times: probes.to_vec(),
        rel_mse: Vec::with_capacity(probes.len()),
        comm_mean: Vec::with_capacity(probes.len()),
        comm_expected: Vec::with_capacity(probes.len()),
        estimate_snapshots: Vec::with_capacity(probes.len()),
        final_estimates: DMatrix::zeros(0, 0),
        horizon,
    };
    let mut next_probe = 0usize;

    let capture = |time: u64,
                       est: &DMatrix<T>,
                       ledger: &CommLedger<T>,
                       record: &mut RunRecord<T>,
                       next_probe: &mut usize| {
        if record.probe_times.get(*next_probe) == Some(&time) {
            let rel = (0..est.nrows())
                .map(|r| (est.row(r).transpose() - theta.value()).norm_squared() / denominators[r])
                .sum::<T>()
                / count::<T>(est.nrows());
            record.rel_mse.push(rel);
            let (mean, expected) = match kind {
                EstimatorKind::Oracle => (T::zero(), T::zero()),
                EstimatorKind::Benchmark => {
                    (ledger.mean_count(), count::<T>(time as usize))
                }
                EstimatorKind::Credo => (ledger.mean_count(), schedule.expected_comm_cost(time)),
            };
            record.comm_mean.push(mean);
            record.comm_expected.push(expected);
            record.estimate_snapshots.push(est.clone());
            *next_probe += 1;
        }
    };

    capture(0, initial, &ledger, &mut record, &mut next_probe);

    for t in 0..horizon {
        let obs = observe(model, theta, t, &mut streams.observations);
        let estimates: DMatrix<T> = match kind {
            EstimatorKind::Oracle => {
                let ctx = StepContext {
                    observations: &obs,
                    gates: None,
                    schedule,
                    model,
                    topology,
                };
                oracle = oracle_step(&oracle, &ctx)?;
                DMatrix::from_fn(1, oracle.estimate.len(), |_, j| oracle.estimate[j])
            }
            EstimatorKind::Benchmark => {
                let ctx = StepContext {
                    observations: &obs,
                    gates: None,
                    schedule,
                    model,
                    topology,
                };
                state = benchmark_step(&state, &ctx)?;
                ledger.record_all();
                state.estimates.clone()
            }
            EstimatorKind::Credo => {
                let gates = schedule.draw_gates(t, n_nodes, &mut streams.gates);
                let ctx = StepContext {
                    observations: &obs,
                    gates: Some(&gates),
                    schedule,
                    model,
                    topology,
                };
                state = credo_step(&state, &ctx)?;
                ledger.record(schedule, &gates);
                state.estimates.clone()
            }
        };
        let sq: T = estimates.iter().map(|&v| v * v).sum();
        if !sq.to_f64().map(f64::is_finite).unwrap_or(false) {
            return Err(EstimatorError::Divergence { time_index: t + 1 });
        }
        capture(t + 1, &estimates, &ledger, &mut record, &mut next_probe);
        if t + 1 == horizon {
            record.final_estimates = estimates;
        }
    }
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RunStreams;
    use crate::schedules::ScheduleParams;
    use crate::sensing::NoiseKind;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar_schedule(a: f64, shift: u64) -> WeightSchedule<f64> {
        WeightSchedule::new(ScheduleParams {
            a,
            shift,
            ..ScheduleParams::default()
        })
        .unwrap()
    }

    /// b = 1, delta1 = 0 gives w_t = 1 for every t.
    fn unit_weight_schedule(a: f64) -> WeightSchedule<f64> {
        WeightSchedule::new(ScheduleParams {
            a,
            shift: 0,
            benchmark_b: 1.0,
            benchmark_delta1: 0.0,
            ..ScheduleParams::default()
        })
        .unwrap()
    }

    fn scalar_model(n: usize) -> SensingModel<f64> {
        SensingModel::scalar_unit(n, 1.0)
            .unwrap()
            .with_noise(NoiseKind::Noiseless)
    }

    #[test]
    fn oracle_noiseless_fixed_point_is_bitwise() {
        let model = scalar_model(2);
        let top = Topology::complete(2).unwrap();
        let sched = scalar_schedule(1.0, 0);
        let theta = Parameter::from_slice(&[1.25]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut state = OracleState::new(theta.value().clone(), 0).unwrap();
        for t in 0..10 {
            let obs = observe(&model, &theta, t, &mut rng);
            let ctx = StepContext {
                observations: &obs,
                gates: None,
                schedule: &sched,
                model: &model,
                topology: &top,
            };
            state = oracle_step(&state, &ctx).unwrap();
            assert_eq!(state.estimate()[0].to_bits(), 1.25f64.to_bits());
        }
    }

    #[test]
    fn oracle_one_step_hand_arithmetic() {
        // N = 1: x(1) = 0 + 1 * (1 - 0) = 1.
        let model = scalar_model(1);
        let top = Topology::complete(2).unwrap(); // oracle ignores topology
        let sched = scalar_schedule(1.0, 0);
        let theta = Parameter::from_slice(&[1.0]).unwrap();
        let obs = observe(&model, &theta, 0, &mut ChaCha8Rng::seed_from_u64(0));
        let ctx = StepContext {
            observations: &obs,
            gates: None,
            schedule: &sched,
            model: &model,
            topology: &top,
        };
        let next = oracle_step(&OracleState::zeros(1), &ctx).unwrap();
        assert_eq!(next.estimate()[0], 1.0);
        assert_eq!(next.time_index(), 1);

        // N = 2: innovations sum, x(1) = 0 + 1 * 2 * (1 - 0) = 2.
        let model2 = scalar_model(2);
        let obs2 = observe(&model2, &theta, 0, &mut ChaCha8Rng::seed_from_u64(0));
        let ctx2 = StepContext {
            observations: &obs2,
            gates: None,
            schedule: &sched,
            model: &model2,
            topology: &top,
        };
        let next2 = oracle_step(&OracleState::zeros(1), &ctx2).unwrap();
        assert_eq!(next2.estimate()[0], 2.0);
    }

    #[test]
    fn benchmark_two_node_hand_arithmetic() {
        // w = 1, a = 1, theta = 1, x = (0, 1), noiseless:
        // x1' = 0 - 1*(0-1) + 1*(1-0) = 2; x2' = 1 - 1*(1-0) + 1*(1-1) = 0.
        let model = scalar_model(2);
        let top = Topology::complete(2).unwrap();
        let sched = unit_weight_schedule(1.0);
        let theta = Parameter::from_slice(&[1.0]).unwrap();
        let obs = observe(&model, &theta, 0, &mut ChaCha8Rng::seed_from_u64(0));
        let x = DistributedState::new(DMatrix::from_column_slice(2, 1, &[0.0, 1.0]), 0).unwrap();
        let ctx = StepContext {
            observations: &obs,
            gates: None,
            schedule: &sched,
            model: &model,
            topology: &top,
        };
        let next = benchmark_step(&x, &ctx).unwrap();
        assert_eq!(next.estimates()[(0, 0)], 2.0);
        assert_eq!(next.estimates()[(1, 0)], 0.0);
        assert_eq!(next.time_index(), 1);
    }

    #[test]
    fn benchmark_fixed_point_and_zero_consensus_with_equal_rows() {
        let model = scalar_model(3);
        let top = Topology::path(3).unwrap();
        let theta = Parameter::from_slice(&[-0.75]).unwrap();
        let x = DistributedState::consensus(&theta, 3);
        let obs = observe(&model, &theta, 0, &mut ChaCha8Rng::seed_from_u64(0));
        // Huge consensus weight: with equal rows the consensus term is
        // exactly zero regardless of the weight; a = 0 kills innovation.
        let sched = WeightSchedule::<f64>::new(ScheduleParams {
            a: 0.0,
            benchmark_b: 1e9,
            benchmark_delta1: 0.0,
            ..ScheduleParams::default()
        })
        .unwrap();
        let ctx = StepContext {
            observations: &obs,
            gates: None,
            schedule: &sched,
            model: &model,
            topology: &top,
        };
        let next = benchmark_step(&x, &ctx).unwrap();
        assert_eq!(next.estimates(), x.estimates());
    }

    #[test]
    fn credo_all_gates_zero_and_zero_gain_is_identity() {
        let model = scalar_model(2);
        let top = Topology::complete(2).unwrap();
        let sched = scalar_schedule(0.0, 0);
        let theta = Parameter::from_slice(&[1.0]).unwrap();
        let x =
            DistributedState::new(DMatrix::from_column_slice(2, 1, &[0.3, -4.0]), 0).unwrap();
        let obs = observe(&model, &theta, 0, &mut ChaCha8Rng::seed_from_u64(0));
        let gates = GateVector::<f64>::silent(0, 2);
        let ctx = StepContext {
            observations: &obs,
            gates: Some(&gates),
            schedule: &sched,
            model: &model,
            topology: &top,
        };
        let next = credo_step(&x, &ctx).unwrap();
        assert_eq!(next.estimates(), x.estimates());
    }

    #[test]
    fn credo_two_node_hand_arithmetic() {
        let model = scalar_model(2);
        let top = Topology::complete(2).unwrap();
        let sched = scalar_schedule(0.5, 0);
        let theta = Parameter::from_slice(&[1.0]).unwrap();
        let gates = GateVector::uniform(1.0, 0, 2);
        let obs = observe(&model, &theta, 0, &mut ChaCha8Rng::seed_from_u64(0));

        // x = (0, 0): consensus vanishes, both nodes take half the innovation.
        let x0 = DistributedState::zeros(2, 1);
        let ctx = StepContext {
            observations: &obs,
            gates: Some(&gates),
            schedule: &sched,
            model: &model,
            topology: &top,
        };
        let next = credo_step(&x0, &ctx).unwrap();
        assert_eq!(next.estimates()[(0, 0)], 0.5);
        assert_eq!(next.estimates()[(1, 0)], 0.5);

        // x = (0, 1): x1' = 0 - 1*(0-1) + 0.5*1 = 1.5; x2' = 1 - 1*(1-0) + 0.5*0 = 0.
        let x1 =
            DistributedState::new(DMatrix::from_column_slice(2, 1, &[0.0, 1.0]), 0).unwrap();
        let next = credo_step(&x1, &ctx).unwrap();
        assert_eq!(next.estimates()[(0, 0)], 1.5);
        assert_eq!(next.estimates()[(1, 0)], 0.0);
    }

    #[test]
    fn credo_requires_gates() {
        let model = scalar_model(2);
        let top = Topology::complete(2).unwrap();
        let sched = scalar_schedule(0.5, 0);
        let theta = Parameter::from_slice(&[1.0]).unwrap();
        let obs = observe(&model, &theta, 0, &mut ChaCha8Rng::seed_from_u64(0));
        let ctx = StepContext {
            observations: &obs,
            gates: None,
            schedule: &sched,
            model: &model,
            topology: &top,
        };
        assert!(matches!(
            credo_step(&DistributedState::zeros(2, 1), &ctx),
            Err(EstimatorError::MissingGates)
        ));
    }

    #[test]
    fn step_rejects_stale_observations() {
        let model = scalar_model(2);
        let top = Topology::complete(2).unwrap();
        let sched = scalar_schedule(0.5, 0);
        let theta = Parameter::from_slice(&[1.0]).unwrap();
        let obs = observe(&model, &theta, 7, &mut ChaCha8Rng::seed_from_u64(0));
        let ctx = StepContext {
            observations: &obs,
            gates: None,
            schedule: &sched,
            model: &model,
            topology: &top,
        };
        assert!(matches!(
            benchmark_step(&DistributedState::zeros(2, 1), &ctx),
            Err(EstimatorError::TimeMismatch { what: "observation batch", found: 7, state: 0 })
        ));
    }

    /// Random small instance helper for property-style checks.
    fn random_instance(
        rng: &mut ChaCha8Rng,
    ) -> (SensingModel<f64>, Topology<f64>, WeightSchedule<f64>, Parameter<f64>, DistributedState<f64>)
    {
        let n = rng.gen_range(2..=5);
        let m = rng.gen_range(1..=3);
        let sensing = (0..n)
            .map(|_| DMatrix::from_fn(1, m, |_, _| rng.gen_range(-1.0..1.0)))
            .collect();
        let covs = vec![DMatrix::from_element(1, 1, rng.gen_range(0.2..1.0)); n];
        let model = SensingModel::new(sensing, covs).unwrap();
        let top = Topology::complete(n).unwrap();
        let sched = WeightSchedule::new(ScheduleParams {
            a: rng.gen_range(0.1..1.0),
            shift: 0,
            ..ScheduleParams::default()
        })
        .unwrap();
        let theta = Parameter::standard_normal(m, rng);
        let x = DistributedState::new(
            DMatrix::from_fn(n, m, |_, _| rng.gen_range(-2.0..2.0)),
            0,
        )
        .unwrap();
        (model, top, sched, theta, x)
    }

    #[test]
    fn per_node_and_stacked_forms_agree_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        for _ in 0..100 {
            let (model, top, sched, theta, x) = random_instance(&mut rng);
            let n = model.n_nodes();
            let obs = observe(&model, &theta, 0, &mut rng);
            let gates = sched.draw_gates(0, n, &mut rng);
            let ctx = StepContext {
                observations: &obs,
                gates: Some(&gates),
                schedule: &sched,
                model: &model,
                topology: &top,
            };
            let a = credo_step(&x, &ctx).unwrap();
            let b = credo_step_stacked(&x, &ctx).unwrap();
            let diff = (a.estimates() - b.estimates()).abs().max();
            assert!(diff <= 1e-12, "forms disagree by {diff}");
        }
    }

    #[test]
    fn averaged_estimate_examples() {
        let theta = Parameter::from_slice(&[2.0, -1.0]).unwrap();
        let x = DistributedState::consensus(&theta, 4);
        assert_eq!(averaged_estimate(&x), *theta.value());
        let y =
            DistributedState::new(DMatrix::from_column_slice(2, 1, &[0.0, 1.0]), 0).unwrap();
        assert_eq!(averaged_estimate(&y)[0], 0.5);
    }

    #[test]
    fn averaged_recursion_matches_full_step_average() {
        // The consensus term cannot move the average (Laplacian columns
        // sum to zero), so stepping then averaging equals the averaged
        // recursion up to round-off.
        let mut rng = ChaCha8Rng::seed_from_u64(4321);
        for _ in 0..50 {
            let (model, top, sched, theta, x) = random_instance(&mut rng);
            let obs = observe(&model, &theta, 0, &mut rng);
            let gates = sched.draw_gates(0, model.n_nodes(), &mut rng);
            let ctx = StepContext {
                observations: &obs,
                gates: Some(&gates),
                schedule: &sched,
                model: &model,
                topology: &top,
            };
            let direct = averaged_estimate(&credo_step_stacked(&x, &ctx).unwrap());
            let recursed = averaged_step_diagnostic(&x, &ctx).unwrap();
            assert_relative_eq!(direct, recursed, epsilon = 1e-12);
        }
    }

    #[test]
    fn forced_gates_reproduce_weighted_benchmark_exactly() {
        // Deterministic gates at value rho_t make every link weight
        // rho_t * rho_t; the benchmark fed that same product must match
        // bit for bit, including under measurement noise.
        let model = SensingModel::scalar_unit(4, 0.5).unwrap();
        let top = Topology::path(4).unwrap();
        let sched = scalar_schedule(0.3, 0);
        let theta = Parameter::from_slice(&[2.0]).unwrap();
        let mut rng_a = ChaCha8Rng::seed_from_u64(9);
        let mut rng_b = rng_a.clone();
        let mut xa = DistributedState::zeros(4, 1);
        let mut xb = DistributedState::zeros(4, 1);
        for t in 0..200 {
            let obs_a = observe(&model, &theta, t, &mut rng_a);
            let obs_b = observe(&model, &theta, t, &mut rng_b);
            assert_eq!(obs_a, obs_b);
            let gates = sched.forced_on_gates(t, 4);
            let ctx_a = StepContext {
                observations: &obs_a,
                gates: Some(&gates),
                schedule: &sched,
                model: &model,
                topology: &top,
            };
            xa = credo_step(&xa, &ctx_a).unwrap();
            let ctx_b = StepContext {
                observations: &obs_b,
                gates: None,
                schedule: &sched,
                model: &model,
                topology: &top,
            };
            let w = sched.rho(t) * sched.rho(t);
            xb = benchmark_step_with_weight(&xb, &ctx_b, w).unwrap();
            assert_eq!(xa.estimates(), xb.estimates(), "diverged at t = {t}");
        }
    }

    #[test]
    fn all_kinds_hold_the_consensus_fixed_point_over_a_run() {
        let model = scalar_model(3);
        let top = Topology::path(3).unwrap();
        let sched = scalar_schedule(0.5, 0);
        let theta = Parameter::from_slice(&[0.8]).unwrap();
        for kind in [EstimatorKind::Oracle, EstimatorKind::Benchmark, EstimatorKind::Credo] {
            let rows = if kind == EstimatorKind::Oracle { 1 } else { 3 };
            let initial = DMatrix::from_element(rows, 1, 0.8);
            let mut streams = RunStreams::derive(11, 0);
            let rec = run_with_initial(
                kind, &initial, &model, &top, &sched, &theta, 50, &mut streams, &[],
            )
            .unwrap();
            for v in rec.final_estimates.iter() {
                assert_eq!(v.to_bits(), 0.8f64.to_bits(), "{kind} left the fixed point");
            }
            // Requesting relative MSE from this start is rejected: the
            // initial condition sits at theta, so the metric is undefined.
            let mut streams = RunStreams::derive(11, 0);
            assert!(matches!(
                run_with_initial(
                    kind, &initial, &model, &top, &sched, &theta, 50, &mut streams, &[50],
                ),
                Err(EstimatorError::DegenerateInitial { node: 0 })
            ));
        }
    }

    #[test]
    fn run_horizon_one_equals_a_single_manual_step() {
        let model = SensingModel::scalar_unit(3, 1.0).unwrap();
        let top = Topology::complete(3).unwrap();
        let sched = scalar_schedule(0.4, 0);
        let theta = Parameter::from_slice(&[1.5]).unwrap();
        let mut streams = RunStreams::derive(5, 0);
        let rec = run(
            EstimatorKind::Credo, &model, &top, &sched, &theta, 1, &mut streams, &[1],
        )
        .unwrap();

        let mut manual = RunStreams::derive(5, 0);
        let obs = observe(&model, &theta, 0, &mut manual.observations);
        let gates = sched.draw_gates(0, 3, &mut manual.gates);
        let ctx = StepContext {
            observations: &obs,
            gates: Some(&gates),
            schedule: &sched,
            model: &model,
            topology: &top,
        };
        let next = credo_step(&DistributedState::zeros(3, 1), &ctx).unwrap();
        assert_eq!(rec.final_estimates, *next.estimates());
    }

    #[test]
    fn runs_are_deterministic_given_seed() {
        let model = SensingModel::scalar_unit(4, 1.0).unwrap();
        let top = Topology::path(4).unwrap();
        let sched = scalar_schedule(0.4, 0);
        let theta = Parameter::from_slice(&[2.0]).unwrap();
        let probes = [1, 10, 100];
        let mut s1 = RunStreams::derive(99, 3);
        let mut s2 = RunStreams::derive(99, 3);
        let a = run(EstimatorKind::Credo, &model, &top, &sched, &theta, 100, &mut s1, &probes)
            .unwrap();
        let b = run(EstimatorKind::Credo, &model, &top, &sched, &theta, 100, &mut s2, &probes)
            .unwrap();
        assert_eq!(a, b);
        let mut s3 = RunStreams::derive(100, 3);
        let c = run(EstimatorKind::Credo, &model, &top, &sched, &theta, 100, &mut s3, &probes)
            .unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn benchmark_comm_count_equals_horizon() {
        let model = SensingModel::scalar_unit(3, 1.0).unwrap();
        let top = Topology::complete(3).unwrap();
        let sched = scalar_schedule(0.4, 0);
        let theta = Parameter::from_slice(&[1.0]).unwrap();
        let mut streams = RunStreams::derive(7, 0);
        let rec = run(
            EstimatorKind::Benchmark, &model, &top, &sched, &theta, 250, &mut streams,
            &[10, 250],
        )
        .unwrap();
        assert_eq!(rec.comm_mean, vec![10.0, 250.0]);
        assert_eq!(rec.comm_expected, vec![10.0, 250.0]);
    }

    #[test]
    fn credo_comm_curve_is_nondecreasing_and_tracks_expectation() {
        let model = SensingModel::<f64>::scalar_unit(5, 1.0).unwrap();
        let top = Topology::complete(5).unwrap();
        let sched = WeightSchedule::new(ScheduleParams::default()).unwrap();
        let theta = Parameter::from_slice(&[1.0]).unwrap();
        let mut streams = RunStreams::derive(13, 0);
        let probes: Vec<u64> = vec![1, 10, 100, 500, 1000];
        let rec = run(
            EstimatorKind::Credo, &model, &top, &sched, &theta, 1000, &mut streams, &probes,
        )
        .unwrap();
        for w in rec.comm_mean.windows(2) {
            assert!(w[0] <= w[1]);
        }
        // Mean realized count should sit near the expected partial sum.
        let final_mean = *rec.comm_mean.last().unwrap();
        let expected = *rec.comm_expected.last().unwrap();
        assert!((final_mean - expected).abs() < 0.2 * expected + 10.0);
    }

    #[test]
    fn runaway_gain_reports_divergence_with_time() {
        let model = SensingModel::scalar_unit(1, 1.0).unwrap();
        let top = Topology::complete(2).unwrap();
        let sched = scalar_schedule(1000.0, 0);
        let theta = Parameter::from_slice(&[1.0]).unwrap();
        let mut streams = RunStreams::derive(3, 0);
        let err = run(
            EstimatorKind::Oracle, &model, &top, &sched, &theta, 10_000, &mut streams, &[],
        )
        .unwrap_err();
        match err {
            EstimatorError::Divergence { time_index } => {
                assert!(time_index > 0 && time_index < 10_000)
            }
            other => panic!("expected divergence, got {other}"),
        }
    }

    #[test]
    fn run_validates_probes_horizon_and_degenerate_initials() {
        let model = SensingModel::scalar_unit(2, 1.0).unwrap();
        let top = Topology::complete(2).unwrap();
        let sched = scalar_schedule(0.4, 0);
        let theta = Parameter::from_slice(&[1.0]).unwrap();
        let mut streams = RunStreams::derive(0, 0);
        assert!(matches!(
            run(EstimatorKind::Credo, &model, &top, &sched, &theta, 0, &mut streams, &[]),
            Err(EstimatorError::BadHorizon)
        ));
        assert!(matches!(
            run(EstimatorKind::Credo, &model, &top, &sched, &theta, 10, &mut streams, &[5, 5]),
            Err(EstimatorError::BadProbes)
        ));
        assert!(matches!(
            run(EstimatorKind::Credo, &model, &top, &sched, &theta, 10, &mut streams, &[11]),
            Err(EstimatorError::BadProbes)
        ));
        // theta = 0 makes the zero initialization degenerate.
        let zero = Parameter::from_slice(&[0.0]).unwrap();
        assert!(matches!(
            run(EstimatorKind::Credo, &model, &top, &sched, &zero, 10, &mut streams, &[10]),
            Err(EstimatorError::DegenerateInitial { node: 0 })
        ));
    }

    #[test]
    fn probe_zero_records_initial_state() {
        let model = SensingModel::scalar_unit(2, 1.0).unwrap();
        let top = Topology::complete(2).unwrap();
        let sched = scalar_schedule(0.4, 0);
        let theta = Parameter::from_slice(&[1.0]).unwrap();
        let mut streams = RunStreams::derive(0, 0);
        let rec = run(
            EstimatorKind::Benchmark, &model, &top, &sched, &theta, 5, &mut streams, &[0, 5],
        )
        .unwrap();
        assert_eq!(rec.rel_mse[0], 1.0);
        assert_eq!(rec.comm_mean[0], 0.0);
        assert_eq!(rec.estimate_snapshots[0], DMatrix::zeros(2, 1));
    }
}
