//! Real-dataset pipeline: CSV loading, node partitioning, the
//! averaged-regressor static measurement model, and the replay run loop
//! that feeds recorded targets through the distributed estimators.
//!
//! The preprocessing contract, in order: standardize features and
//! targets to zero mean and unit variance **on the train split**; give
//! each node the mean of its own train-split regressor rows as its
//! static `1 x F` sensing row; replay each node's train targets in a
//! fresh without-replacement order per run, with Gaussian noise added;
//! hold out a test set for prediction error. Standardization is a
//! documented deviation — without it, raw feature magnitudes on these
//! datasets push the innovation gains far outside usable ranges.

use nalgebra::{DMatrix, DVector, RowDVector};
use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::estimators::{
    benchmark_step, credo_step, DistributedState, EstimatorError, EstimatorKind, StepContext,
};
use crate::rng::RunStreams;
use crate::scalar::{count, real, Real};
use crate::schedules::{CommLedger, WeightSchedule};
use crate::sensing::{observability_gram, ObservationBatch, SensingError, SensingModel};
use crate::topology::Topology;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("CSV read failure: {0}")]
    Csv(#[from] csv::Error),
    #[error("no usable rows in {path} (dropped {dropped})")]
    EmptyDataset { path: String, dropped: usize },
    #[error("target column {0:?} not found in header")]
    BadTargetColumn(String),
    #[error("dataset has {available} rows; partition needs {needed}")]
    InsufficientRows { needed: usize, available: usize },
    #[error("partition must assign at least one node, one row per node, and one test row")]
    BadPartitionShape,
    #[error("global observability violated for this partition; reseed")]
    ObservabilityViolated,
    #[error("noise variance must be positive, got {0}")]
    BadNoiseVariance(f64),
    #[error("replay horizon {horizon} exceeds the per-node train size {per_node}")]
    HorizonPastData { horizon: u64, per_node: usize },
    #[error("replay supports the distributed estimators, not {0}")]
    UnsupportedKind(EstimatorKind),
    #[error("estimate has {got} entries, dataset has {expected} features")]
    EstimateDim { got: usize, expected: usize },
    #[error(transparent)]
    Sensing(#[from] SensingError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
}

/// A cleaned regression table: one target column split out of the
/// numeric feature matrix. `n_dropped` rows were discarded during
/// loading for missing or non-numeric cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T: Real> {
    pub name: String,
    features: DMatrix<T>,
    targets: DVector<T>,
    n_dropped: usize,
}

impl<T: Real> Dataset<T> {
    pub fn new(
        name: impl Into<String>,
        features: DMatrix<T>,
        targets: DVector<T>,
    ) -> Result<Self, IngestError> {
        let name = name.into();
        if features.nrows() == 0 || features.nrows() != targets.len() {
            return Err(IngestError::EmptyDataset { path: name, dropped: 0 });
        }
        Ok(Self { name, features, targets, n_dropped: 0 })
    }

    pub fn n_rows(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_dropped(&self) -> usize {
        self.n_dropped
    }

    pub fn feature_row(&self, i: usize) -> RowDVector<T> {
        RowDVector::from_row_slice(self.features.row(i).clone_owned().as_slice())
    }

    pub fn target(&self, i: usize) -> T {
        self.targets[i]
    }
}

/// Loads a numeric CSV with a header row, splitting out `target_column`
/// (matched by header name, or used as a zero-based index if no header
/// matches and it parses as one). Rows with missing, non-numeric, or
/// non-finite cells are dropped and counted.
pub fn load_csv<T: Real>(
    path: impl AsRef<std::path::Path>,
    target_column: &str,
) -> Result<Dataset<T>, IngestError> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let n_cols = headers.len();
    let target_idx = match headers.iter().position(|h| h.trim() == target_column) {
        Some(i) => i,
        None => target_column
            .parse::<usize>()
            .ok()
            .filter(|&i| i < n_cols)
            .ok_or_else(|| IngestError::BadTargetColumn(target_column.to_string()))?,
    };

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut targets: Vec<f64> = Vec::new();
    let mut dropped = 0usize;
    for record in reader.records() {
        let record = record?;
        if record.len() != n_cols {
            dropped += 1;
            continue;
        }
        let parsed: Option<Vec<f64>> = record
            .iter()
            .map(|cell| cell.trim().parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect();
        match parsed {
            Some(values) => {
                let mut features = values;
                let y = features.remove(target_idx);
                rows.push(features);
                targets.push(y);
            }
            None => dropped += 1,
        }
    }
    if rows.is_empty() {
        return Err(IngestError::EmptyDataset {
            path: path.display().to_string(),
            dropped,
        });
    }
    let n_features = n_cols - 1;
    let features = DMatrix::from_fn(rows.len(), n_features, |i, j| real::<T>(rows[i][j]));
    let targets = DVector::from_fn(targets.len(), |i, _| real::<T>(targets[i]));
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    Ok(Dataset { name, features, targets, n_dropped: dropped })
}

/// A disjoint split of dataset rows: one equal-size train list per node
/// plus a held-out test list, drawn uniformly without replacement.
#[derive(Debug, Clone, PartialEq)]
pub struct NodePartition {
    test: Vec<usize>,
    per_node: Vec<Vec<usize>>,
    seed: u64,
}

impl NodePartition {
    pub fn n_nodes(&self) -> usize {
        self.per_node.len()
    }

    pub fn per_node_size(&self) -> usize {
        self.per_node.first().map_or(0, Vec::len)
    }

    pub fn node_rows(&self, n: usize) -> &[usize] {
        &self.per_node[n]
    }

    pub fn test_rows(&self) -> &[usize] {
        &self.test
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Every train row, over all nodes.
    fn train_rows(&self) -> impl Iterator<Item = usize> + '_ {
        self.per_node.iter().flatten().copied()
    }
}

/// Splits `dataset` into `n_nodes` train lists of `per_node` rows each
/// plus `test_count` held-out rows, uniformly at random without
/// replacement. Deterministic in `seed`.
pub fn partition<T: Real>(
    dataset: &Dataset<T>,
    n_nodes: usize,
    per_node: usize,
    test_count: usize,
    seed: u64,
) -> Result<NodePartition, IngestError> {
    if n_nodes == 0 || per_node == 0 || test_count == 0 {
        return Err(IngestError::BadPartitionShape);
    }
    let needed = n_nodes * per_node + test_count;
    if needed > dataset.n_rows() {
        return Err(IngestError::InsufficientRows { needed, available: dataset.n_rows() });
    }
    let mut rng = crate::rng::stream_rng(seed, 0, crate::rng::STREAM_PARTITION);
    let picked = rand::seq::index::sample(&mut rng, dataset.n_rows(), needed).into_vec();
    let (test, train) = picked.split_at(test_count);
    let per_node_lists = train.chunks(per_node).map(<[usize]>::to_vec).collect();
    Ok(NodePartition {
        test: test.to_vec(),
        per_node: per_node_lists,
        seed,
    })
}

/// Affine maps taking raw features/targets to the standardized scale
/// fitted on the train split. Constant columns keep scale 1 so the map
/// stays invertible.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization<T: Real> {
    pub feature_mean: RowDVector<T>,
    pub feature_scale: RowDVector<T>,
    pub target_mean: T,
    pub target_scale: T,
}

impl<T: Real> Standardization<T> {
    pub fn fit(dataset: &Dataset<T>, partition: &NodePartition) -> Self {
        let f = dataset.n_features();
        let rows: Vec<usize> = partition.train_rows().collect();
        let k = count::<T>(rows.len());
        let mut feature_mean = RowDVector::zeros(f);
        let mut target_mean = T::zero();
        for &r in &rows {
            feature_mean += dataset.features.row(r);
            target_mean += dataset.targets[r];
        }
        feature_mean /= k;
        target_mean /= k;
        let mut feature_var = RowDVector::<T>::zeros(f);
        let mut target_var = T::zero();
        for &r in &rows {
            let d = dataset.features.row(r) - &feature_mean;
            feature_var += d.component_mul(&d);
            let dt = dataset.targets[r] - target_mean;
            target_var += dt * dt;
        }
        feature_var /= k;
        target_var /= k;
        let guard = |v: T| if v > T::zero() { v.sqrt() } else { T::one() };
        Self {
            feature_scale: feature_var.map(guard),
            target_scale: guard(target_var),
            feature_mean,
            target_mean,
        }
    }

    pub fn feature_row(&self, raw: &RowDVector<T>) -> RowDVector<T> {
        (raw - &self.feature_mean).component_div(&self.feature_scale)
    }

    pub fn target(&self, raw: T) -> T {
        (raw - self.target_mean) / self.target_scale
    }
}

/// Everything the replay loop needs, built once per (dataset, partition):
/// the static averaged-regressor model, the standardization that
/// produced it, each node's standardized train targets, and the
/// standardized test block.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplaySetup<T: Real> {
    pub model: SensingModel<T>,
    pub standardization: Standardization<T>,
    pub noise_var: T,
    /// Standardized train targets per node, in partition order.
    pub train_targets: Vec<Vec<T>>,
    pub test_features: DMatrix<T>,
    pub test_targets: DVector<T>,
}

impl<T: Real> ReplaySetup<T> {
    /// One full pass over each node's data.
    pub fn full_pass_horizon(&self) -> u64 {
        self.train_targets.first().map_or(0, Vec::len) as u64
    }
}

/// Builds a static model from explicit per-node regressor rows: node `n`
/// observes scalar `y = rows[n] theta + noise`. The global observability
/// consistency check runs before anything is returned.
pub fn static_model_from_rows<T: Real>(
    rows: &[RowDVector<T>],
    noise_var: T,
) -> Result<SensingModel<T>, IngestError> {
    if !(noise_var > T::zero()) {
        return Err(IngestError::BadNoiseVariance(noise_var.to_f64().unwrap_or(f64::NAN)));
    }
    let sensing = rows
        .iter()
        .map(|r| DMatrix::from_fn(1, r.len(), |_, j| r[j]))
        .collect();
    let covs = vec![DMatrix::from_element(1, 1, noise_var); rows.len()];
    let model = SensingModel::new(sensing, covs)?;
    if !observability_gram(&model).1 {
        return Err(IngestError::ObservabilityViolated);
    }
    Ok(model)
}

/// The preprocessing pipeline: standardize on the train split, average
/// each node's regressor rows into its static sensing row, attach scalar
/// noise of variance `noise_var` (default: 0.25 times the standardized
/// train-target variance), and stage the replay targets and test block.
///
/// Centering pins the size-weighted sum of the node rows to zero, so
/// their span has dimension at most `n_nodes - 1`; a partition with at
/// least `n_features + 1` nodes is required for the consistency check
/// to have any chance of passing.
pub fn build_static_model<T: Real>(
    dataset: &Dataset<T>,
    partition: &NodePartition,
    noise_var: Option<T>,
) -> Result<ReplaySetup<T>, IngestError> {
    let standardization = Standardization::fit(dataset, partition);
    let f = dataset.n_features();

    let mut rows = Vec::with_capacity(partition.n_nodes());
    let mut train_targets = Vec::with_capacity(partition.n_nodes());
    for n in 0..partition.n_nodes() {
        let node_rows = partition.node_rows(n);
        let mut mean = RowDVector::<T>::zeros(f);
        let mut targets = Vec::with_capacity(node_rows.len());
        for &r in node_rows {
            mean += standardization.feature_row(&dataset.feature_row(r));
            targets.push(standardization.target(dataset.targets[r]));
        }
        mean /= count::<T>(node_rows.len());
        rows.push(mean);
        train_targets.push(targets);
    }

    // Standardized train targets have variance 1 by construction, so the
    // default lands at 0.25; computed anyway so explicit partitions with
    // degenerate targets stay honest.
    let noise_var = match noise_var {
        Some(v) => v,
        None => {
            let all: Vec<T> = train_targets.iter().flatten().copied().collect();
            let k = count::<T>(all.len());
            let mean = all.iter().copied().sum::<T>() / k;
            let var = all.iter().map(|&y| (y - mean) * (y - mean)).sum::<T>() / k;
            real::<T>(0.25) * var
        }
    };
    let model = static_model_from_rows(&rows, noise_var)?;

    let test_rows = partition.test_rows();
    let mut test_features = DMatrix::zeros(test_rows.len(), f);
    let mut test_targets = DVector::zeros(test_rows.len());
    for (i, &r) in test_rows.iter().enumerate() {
        test_features
            .row_mut(i)
            .copy_from(&standardization.feature_row(&dataset.feature_row(r)));
        test_targets[i] = standardization.target(dataset.targets[r]);
    }

    Ok(ReplaySetup {
        model,
        standardization,
        noise_var,
        train_targets,
        test_features,
        test_targets,
    })
}

/// Per-node replay cursors: each node's standardized train targets in a
/// fresh without-replacement order, fully consumed over one pass.
#[derive(Debug, Clone)]
pub struct NodeStreams<T: Real> {
    ordered: Vec<Vec<T>>,
}

impl<T: Real> NodeStreams<T> {
    pub fn new<R: Rng + ?Sized>(setup: &ReplaySetup<T>, rng: &mut R) -> Self {
        let ordered = setup
            .train_targets
            .iter()
            .map(|targets| {
                let mut order = targets.clone();
                order.shuffle(rng);
                order
            })
            .collect();
        Self { ordered }
    }

    pub fn target(&self, node: usize, t: u64) -> T {
        self.ordered[node][t as usize]
    }

    pub fn node_targets(&self, node: usize) -> &[T] {
        &self.ordered[node]
    }
}

/// Mean squared prediction error of per-node estimates on the held-out
/// rows, on the standardized scale.
#[derive(Debug, Clone, PartialEq)]
pub struct TestErrorReport<T: Real> {
    pub per_node: Vec<T>,
    pub mean: T,
}

/// Evaluates one estimate against the standardized test block.
pub fn test_error_single<T: Real>(
    estimate: &DVector<T>,
    dataset: &Dataset<T>,
    partition: &NodePartition,
) -> Result<T, IngestError> {
    if estimate.len() != dataset.n_features() {
        return Err(IngestError::EstimateDim {
            got: estimate.len(),
            expected: dataset.n_features(),
        });
    }
    let standardization = Standardization::fit(dataset, partition);
    let mut acc = T::zero();
    for &r in partition.test_rows() {
        let x = standardization.feature_row(&dataset.feature_row(r));
        let y = standardization.target(dataset.targets[r]);
        let resid = y - (x * estimate)[0];
        acc += resid * resid;
    }
    Ok(acc / count::<T>(partition.test_rows().len()))
}

/// Evaluates every node's estimate (row `n` of `estimates`) plus the
/// across-node mean.
pub fn test_error<T: Real>(
    estimates: &DMatrix<T>,
    dataset: &Dataset<T>,
    partition: &NodePartition,
) -> Result<TestErrorReport<T>, IngestError> {
    let per_node: Vec<T> = (0..estimates.nrows())
        .map(|n| test_error_single(&estimates.row(n).transpose(), dataset, partition))
        .collect::<Result<_, _>>()?;
    let mean = per_node.iter().copied().sum::<T>() / count::<T>(per_node.len());
    Ok(TestErrorReport { per_node, mean })
}

fn test_error_against_block<T: Real>(
    estimates: &DMatrix<T>,
    features: &DMatrix<T>,
    targets: &DVector<T>,
) -> (Vec<T>, T) {
    let k = count::<T>(targets.len());
    let per_node: Vec<T> = (0..estimates.nrows())
        .map(|n| {
            let pred = features * estimates.row(n).transpose();
            (targets - pred).norm_squared() / k
        })
        .collect();
    let mean = per_node.iter().copied().sum::<T>() / count::<T>(per_node.len());
    (per_node, mean)
}

/// One replay run's output: test-error curves (raw and normalized by the
/// `x = 0` starting value) and communication counts on the probe grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayRecord<T: Real> {
    pub kind: EstimatorKind,
    pub probe_times: Vec<u64>,
    pub test_error_mean: Vec<T>,
    pub rel_test_error: Vec<T>,
    pub comm_mean: Vec<T>,
    pub comm_expected: Vec<T>,
    pub final_per_node: Vec<T>,
    pub final_estimates: DMatrix<T>,
    pub horizon: u64,
}

/// Replays recorded targets through a distributed estimator from the
/// zero initialization.
///
/// Observation at node `n`, step `t`: that node's `t`-th replayed target
/// plus Gaussian noise of the setup's variance. The order is reshuffled
/// per run from the observation stream; the gate stream drives the
/// gated estimator exactly as in synthetic runs.
#[allow(clippy::too_many_arguments)]
pub fn run_replay<T: Real>(
    kind: EstimatorKind,
    setup: &ReplaySetup<T>,
    topology: &Topology<T>,
    schedule: &WeightSchedule<T>,
    horizon: u64,
    streams: &mut RunStreams,
    probes: &[u64],
) -> Result<ReplayRecord<T>, IngestError> {
    if kind == EstimatorKind::Oracle {
        return Err(IngestError::UnsupportedKind(kind));
    }
    let per_node = setup.full_pass_horizon();
    if horizon > per_node {
        return Err(IngestError::HorizonPastData {
            horizon,
            per_node: per_node as usize,
        });
    }
    if probes.windows(2).any(|w| w[0] >= w[1]) || probes.last().is_some_and(|&p| p > horizon) {
        return Err(IngestError::Estimator(EstimatorError::BadProbes));
    }
    let n = setup.model.n_nodes();
    let f = setup.model.param_dim();
    let noise_std = setup.noise_var.sqrt();
    let node_streams = NodeStreams::new(setup, &mut streams.observations);

    let mut state = DistributedState::zeros(n, f);
    let mut ledger = CommLedger::<T>::new(n);
    let mut record = ReplayRecord {
        kind,
        probe_times: probes.to_vec(),
        test_error_mean: Vec::with_capacity(probes.len()),
        rel_test_error: Vec::with_capacity(probes.len()),
        comm_mean: Vec::with_capacity(probes.len()),
        comm_expected: Vec::with_capacity(probes.len()),
        final_per_node: Vec::new(),
        final_estimates: DMatrix::zeros(0, 0),
        horizon,
    };
    // The x = 0 baseline the relative curve divides by.
    let (_, base_error) =
        test_error_against_block(state.estimates(), &setup.test_features, &setup.test_targets);
    let mut next_probe = 0usize;

    let capture = |time: u64,
                   state: &DistributedState<T>,
                   ledger: &CommLedger<T>,
                   record: &mut ReplayRecord<T>,
                   next_probe: &mut usize| {
        if record.probe_times.get(*next_probe) == Some(&time) {
            let (_, mean) = test_error_against_block(
                state.estimates(),
                &setup.test_features,
                &setup.test_targets,
            );
            record.test_error_mean.push(mean);
            record.rel_test_error.push(mean / base_error);
            record.comm_mean.push(ledger.mean_count());
            let expected = match kind {
                EstimatorKind::Benchmark => count::<T>(time as usize),
                _ => schedule.expected_comm_cost(time),
            };
            record.comm_expected.push(expected);
            *next_probe += 1;
        }
    };
    capture(0, &state, &ledger, &mut record, &mut next_probe);

    for t in 0..horizon {
        let obs = ObservationBatch::new(
            (0..n)
                .map(|node| {
                    let y = node_streams.target(node, t)
                        + T::std_normal(&mut streams.observations) * noise_std;
                    DVector::from_element(1, y)
                })
                .collect(),
            t,
        );
        match kind {
            EstimatorKind::Benchmark => {
                let ctx = StepContext {
                    observations: &obs,
                    gates: None,
                    schedule,
                    model: &setup.model,
                    topology,
                };
                state = benchmark_step(&state, &ctx)?;
                ledger.record_all();
            }
            EstimatorKind::Credo => {
                let gates = schedule.draw_gates(t, n, &mut streams.gates);
                let ctx = StepContext {
                    observations: &obs,
                    gates: Some(&gates),
                    schedule,
                    model: &setup.model,
                    topology,
                };
                state = credo_step(&state, &ctx)?;
                ledger.record(schedule, &gates);
            }
            EstimatorKind::Oracle => unreachable!(),
        }
        let sq: T = state.estimates().iter().map(|&v| v * v).sum();
        if !sq.to_f64().map(f64::is_finite).unwrap_or(false) {
            return Err(IngestError::Estimator(EstimatorError::Divergence {
                time_index: t + 1,
            }));
        }
        capture(t + 1, &state, &ledger, &mut record, &mut next_probe);
    }
    let (per_node, _) =
        test_error_against_block(state.estimates(), &setup.test_features, &setup.test_targets);
    record.final_per_node = per_node;
    record.final_estimates = state.estimates().clone();
    Ok(record)
}
