//! Linear Gaussian measurement models: per-node sensing matrices, noise
//! covariances, observation sampling, and the observability quantities
//! built from them.
//!
//! Node `n` observes `y_n(t) = H_n theta + gamma_n(t)` with `H_n` an
//! `M_n x M` matrix and `gamma_n` zero-mean noise of covariance
//! `Sigma_n`. Per-node observability is not required (each `M_n` may be
//! less than `M`, and usually is); what the estimators need is the global
//! Gram matrix `G = sum_n H_n' Sigma_n^-1 H_n` to be full rank.
//! Desk-scale configurations with `M_n = M` are equally valid.
//!
//! Covariances are factored once at construction (Cholesky), so
//! observation draws and the precomputed innovation gains
//! `H_n' Sigma_n^-1` never re-decompose anything inside a run loop.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use thiserror::Error;

use crate::scalar::{count, real, Real};
use crate::topology::Topology;

#[derive(Debug, Error)]
pub enum SensingError {
    #[error("model needs at least one node")]
    Empty,
    #[error("node {node}: sensing matrix is {rows}x{cols}, expected {expected} columns")]
    ColumnMismatch {
        node: usize,
        rows: usize,
        cols: usize,
        expected: usize,
    },
    #[error("node {node}: noise covariance is {rows}x{cols}, expected {dim}x{dim}")]
    CovarianceShape {
        node: usize,
        rows: usize,
        cols: usize,
        dim: usize,
    },
    #[error("node {node}: noise covariance is not symmetric positive definite")]
    NotSpd { node: usize },
    #[error("node {node}: non-finite entry in model data")]
    NonFinite { node: usize },
    #[error("parameter vector has a non-finite entry")]
    NonFiniteParameter,
    #[error("sparsity {sparsity} invalid for parameter dimension {param_dim}")]
    BadSparsity { sparsity: usize, param_dim: usize },
    #[error("noise variance must be positive, got {0}")]
    BadNoiseVariance(f64),
    #[error(
        "could not satisfy global observability in {attempts} attempts \
         (n_nodes = {n_nodes}, param_dim = {param_dim}, sparsity = {sparsity})"
    )]
    ObservabilityUnsatisfied {
        attempts: usize,
        n_nodes: usize,
        param_dim: usize,
        sparsity: usize,
    },
    #[error("model file parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Measurement noise law. Gaussian is the shipped distribution; new
/// zero-mean variants slot in as additional variants here.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseKind {
    #[default]
    Gaussian,
    /// `y_n = H_n theta` exactly; the zero-noise mode used by
    /// fixed-point and equivalence tests.
    Noiseless,
}

/// The unknown `M`-vector being estimated.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T: Real> {
    value: DVector<T>,
}

impl<T: Real> Parameter<T> {
    pub fn new(value: DVector<T>) -> Result<Self, SensingError> {
        if value.iter().any(|x| !x.to_f64().map(f64::is_finite).unwrap_or(false)) {
            return Err(SensingError::NonFiniteParameter);
        }
        Ok(Self { value })
    }

    pub fn from_slice(values: &[T]) -> Result<Self, SensingError> {
        Self::new(DVector::from_column_slice(values))
    }

    /// Independent standard normal entries.
    pub fn standard_normal<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        Self {
            value: DVector::from_fn(dim, |_, _| T::std_normal(rng)),
        }
    }

    pub fn value(&self) -> &DVector<T> {
        &self.value
    }

    pub fn dim(&self) -> usize {
        self.value.len()
    }
}

/// One synchronous round of observations, `y_n(t)` for every node.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationBatch<T> {
    per_node: Vec<DVector<T>>,
    time_index: u64,
}

impl<T: Real> ObservationBatch<T> {
    pub fn new(per_node: Vec<DVector<T>>, time_index: u64) -> Self {
        Self { per_node, time_index }
    }

    pub fn node(&self, n: usize) -> &DVector<T> {
        &self.per_node[n]
    }

    pub fn n_nodes(&self) -> usize {
        self.per_node.len()
    }

    pub fn time_index(&self) -> u64 {
        self.time_index
    }
}

/// Immutable per-node measurement model.
#[derive(Debug, Clone, PartialEq)]
pub struct SensingModel<T: Real> {
    sensing: Vec<DMatrix<T>>,
    noise_cov: Vec<DMatrix<T>>,
    /// Lower Cholesky factors of the covariances, for sampling.
    noise_chol: Vec<DMatrix<T>>,
    /// `H_n' Sigma_n^-1`, the innovation gain applied to residuals.
    innovation_gain: Vec<DMatrix<T>>,
    param_dim: usize,
    noise: NoiseKind,
    /// Metadata only: the `2 + eps1` noise moment parameter; `None`
    /// means unbounded moments (Gaussian satisfies every choice).
    noise_moment_eps: Option<T>,
}

impl<T: Real> SensingModel<T> {
    pub fn new(
        sensing: Vec<DMatrix<T>>,
        noise_cov: Vec<DMatrix<T>>,
    ) -> Result<Self, SensingError> {
        if sensing.is_empty() || sensing.len() != noise_cov.len() {
            return Err(SensingError::Empty);
        }
        let param_dim = sensing[0].ncols();
        let mut noise_chol = Vec::with_capacity(sensing.len());
        let mut innovation_gain = Vec::with_capacity(sensing.len());
        for (node, (h, cov)) in sensing.iter().zip(&noise_cov).enumerate() {
            if h.ncols() != param_dim || h.nrows() == 0 {
                return Err(SensingError::ColumnMismatch {
                    node,
                    rows: h.nrows(),
                    cols: h.ncols(),
                    expected: param_dim,
                });
            }
            if cov.nrows() != h.nrows() || cov.ncols() != h.nrows() {
                return Err(SensingError::CovarianceShape {
                    node,
                    rows: cov.nrows(),
                    cols: cov.ncols(),
                    dim: h.nrows(),
                });
            }
            let finite =
                |m: &DMatrix<T>| m.iter().all(|x| x.to_f64().map(f64::is_finite).unwrap_or(false));
            if !finite(h) || !finite(cov) {
                return Err(SensingError::NonFinite { node });
            }
            let chol = nalgebra::Cholesky::new(cov.clone())
                .ok_or(SensingError::NotSpd { node })?;
            innovation_gain.push(h.transpose() * chol.inverse());
            noise_chol.push(chol.unpack());
        }
        Ok(Self {
            sensing,
            noise_cov,
            noise_chol,
            innovation_gain,
            param_dim,
            noise: NoiseKind::Gaussian,
            noise_moment_eps: None,
        })
    }

    /// Scalar desk model: every node observes `y = theta + noise` with
    /// `H_n = [1]`, `Sigma_n = [noise_var]`, `M = 1`.
    pub fn scalar_unit(n_nodes: usize, noise_var: T) -> Result<Self, SensingError> {
        let h = DMatrix::from_element(1, 1, T::one());
        let cov = DMatrix::from_element(1, 1, noise_var);
        Self::new(vec![h; n_nodes], vec![cov; n_nodes])
    }

    pub fn with_noise(mut self, noise: NoiseKind) -> Self {
        self.noise = noise;
        self
    }

    pub fn with_noise_moment_eps(mut self, eps: Option<T>) -> Self {
        self.noise_moment_eps = eps;
        self
    }

    pub fn n_nodes(&self) -> usize {
        self.sensing.len()
    }

    pub fn param_dim(&self) -> usize {
        self.param_dim
    }

    pub fn obs_dim(&self, node: usize) -> usize {
        self.sensing[node].nrows()
    }

    pub fn sensing(&self, node: usize) -> &DMatrix<T> {
        &self.sensing[node]
    }

    pub fn noise_cov(&self, node: usize) -> &DMatrix<T> {
        &self.noise_cov[node]
    }

    /// `H_n' Sigma_n^-1` (precomputed).
    pub fn innovation_gain(&self, node: usize) -> &DMatrix<T> {
        &self.innovation_gain[node]
    }

    pub fn noise(&self) -> NoiseKind {
        self.noise
    }

    pub fn noise_moment_eps(&self) -> Option<T> {
        self.noise_moment_eps
    }

    /// Draws `gamma_n` for one node: `L_n z` with `z` standard normal.
    /// Returns zeros under [`NoiseKind::Noiseless`].
    pub fn sample_noise<R: Rng + ?Sized>(&self, node: usize, rng: &mut R) -> DVector<T> {
        let m_n = self.obs_dim(node);
        match self.noise {
            NoiseKind::Noiseless => DVector::zeros(m_n),
            NoiseKind::Gaussian => {
                let z = DVector::from_fn(m_n, |_, _| T::std_normal(rng));
                &self.noise_chol[node] * z
            }
        }
    }
}

/// One observation round: `y_n = H_n theta + gamma_n`, noise independent
/// across nodes and calls, drawn in node order from the given stream.
pub fn observe<T: Real, R: Rng + ?Sized>(
    model: &SensingModel<T>,
    theta: &Parameter<T>,
    time_index: u64,
    rng: &mut R,
) -> ObservationBatch<T> {
    assert_eq!(
        theta.dim(),
        model.param_dim(),
        "parameter dimension must match model"
    );
    let per_node = (0..model.n_nodes())
        .map(|n| model.sensing(n) * theta.value() + model.sample_noise(n, rng))
        .collect();
    ObservationBatch::new(per_node, time_index)
}

/// `G = sum_n H_n' Sigma_n^-1 H_n` and a scale-invariant full-rank
/// verdict: smallest eigenvalue above `1e-8` times the largest.
pub fn observability_gram<T: Real>(model: &SensingModel<T>) -> (DMatrix<T>, bool) {
    let m = model.param_dim();
    let mut g = DMatrix::<T>::zeros(m, m);
    for n in 0..model.n_nodes() {
        g += model.innovation_gain(n) * model.sensing(n);
    }
    // Symmetrize round-off before the eigensolve.
    g = (&g + g.transpose()) * real::<T>(0.5);
    let eigs = nalgebra::SymmetricEigen::new(g.clone()).eigenvalues;
    let lambda_max = eigs.iter().copied().fold(T::zero(), |a, b| a.max(b));
    let lambda_min = eigs.iter().copied().fold(lambda_max, |a, b| a.min(b));
    let full_rank = lambda_max > T::zero() && lambda_min > real::<T>(1e-8) * lambda_max;
    (g, full_rank)
}

/// `Gamma = G / N`.
pub fn gamma_matrix<T: Real>(model: &SensingModel<T>) -> DMatrix<T> {
    observability_gram(model).0 / count::<T>(model.n_nodes())
}

/// The three spectral quantities in the gain condition
/// `a * min{lambda_min(Gamma), lambda_min(L kron I + blockdiag(H'S^-1H)), 1/beta0} >= 1`.
#[derive(Debug, Clone, Copy)]
pub struct GainConditionReport<T> {
    pub lambda_min_gamma: T,
    pub lambda_min_composite: T,
    pub inv_beta0: T,
    /// `min` of the three terms; the condition is `a * critical_min >= 1`.
    pub critical_min: T,
    pub a: T,
    pub satisfied: bool,
}

/// Evaluates the gain condition for innovation gain numerator `a`,
/// reporting each spectral term. The composite matrix is the `NM x NM`
/// sum of `L kron I_M` and the block-diagonal of the per-node
/// `H_n' Sigma_n^-1 H_n`.
pub fn check_assumption_m4<T: Real>(
    a: T,
    model: &SensingModel<T>,
    topology: &Topology<T>,
    beta0: T,
) -> GainConditionReport<T> {
    assert_eq!(model.n_nodes(), topology.n_nodes());
    let m = model.param_dim();
    let n = model.n_nodes();

    let gamma = gamma_matrix(model);
    let lambda_min_gamma = min_eigenvalue(&gamma);

    let mut composite = topology.laplacian().kronecker(&DMatrix::identity(m, m));
    for node in 0..n {
        let block = model.innovation_gain(node) * model.sensing(node);
        let offset = node * m;
        for i in 0..m {
            for j in 0..m {
                composite[(offset + i, offset + j)] += block[(i, j)];
            }
        }
    }
    let lambda_min_composite = min_eigenvalue(&composite);

    let inv_beta0 = T::one() / beta0;
    let critical_min = lambda_min_gamma.min(lambda_min_composite).min(inv_beta0);
    GainConditionReport {
        lambda_min_gamma,
        lambda_min_composite,
        inv_beta0,
        critical_min,
        a,
        satisfied: a * critical_min >= T::one(),
    }
}

fn min_eigenvalue<T: Real>(matrix: &DMatrix<T>) -> T {
    let sym = (matrix + matrix.transpose()) * real::<T>(0.5);
    let eigs = nalgebra::SymmetricEigen::new(sym).eigenvalues;
    eigs.iter()
        .copied()
        .fold(T::from_f64(f64::INFINITY).unwrap(), |a, b| a.min(b))
}

/// Random sparse sensing model: each `H_n` is a `1 x param_dim` row with
/// `sparsity` standard-normal entries at uniformly drawn distinct
/// positions and scalar noise variance `noise_var`. Resamples the whole
/// model until the global Gram matrix is full rank.
pub fn generate_sparse_sensing<T: Real, R: Rng + ?Sized>(
    n_nodes: usize,
    param_dim: usize,
    sparsity: usize,
    noise_var: T,
    max_attempts: usize,
    rng: &mut R,
) -> Result<SensingModel<T>, SensingError> {
    if sparsity == 0 || sparsity > param_dim {
        return Err(SensingError::BadSparsity { sparsity, param_dim });
    }
    if !(noise_var > T::zero()) {
        return Err(SensingError::BadNoiseVariance(
            noise_var.to_f64().unwrap_or(f64::NAN),
        ));
    }
    for _ in 0..max_attempts {
        let sensing: Vec<DMatrix<T>> = (0..n_nodes)
            .map(|_| {
                let mut row = DMatrix::zeros(1, param_dim);
                for pos in rand::seq::index::sample(rng, param_dim, sparsity) {
                    row[(0, pos)] = T::std_normal(rng);
                }
                row
            })
            .collect();
        let noise = vec![DMatrix::from_element(1, 1, noise_var); n_nodes];
        let model = SensingModel::new(sensing, noise)?;
        if observability_gram(&model).1 {
            return Ok(model);
        }
    }
    Err(SensingError::ObservabilityUnsatisfied {
        attempts: max_attempts,
        n_nodes,
        param_dim,
        sparsity,
    })
}

// --- model text format ----------------------------------------------------
//
//   nodes = N
//   param_dim = M
//   noise = gaussian | noiseless
//   noise_moment_eps = inf | <positive real>
//
//   [node k]           (k = 0..N-1, each with:)
//   H = [a b; c d]     (rows split by ';', entries by whitespace)
//   Sigma = [v]
//
// '#' starts a comment; blank lines are ignored. Values are written with
// enough digits to round-trip exactly.

impl<T: Real> SensingModel<T> {
    pub fn to_model_text(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::new();
        writeln!(out, "nodes = {}", self.n_nodes()).unwrap();
        writeln!(out, "param_dim = {}", self.param_dim).unwrap();
        let noise = match self.noise {
            NoiseKind::Gaussian => "gaussian",
            NoiseKind::Noiseless => "noiseless",
        };
        writeln!(out, "noise = {noise}").unwrap();
        match self.noise_moment_eps {
            None => writeln!(out, "noise_moment_eps = inf").unwrap(),
            Some(e) => writeln!(out, "noise_moment_eps = {e}").unwrap(),
        }
        for n in 0..self.n_nodes() {
            writeln!(out, "\n[node {n}]").unwrap();
            writeln!(out, "H = {}", format_matrix(&self.sensing[n])).unwrap();
            writeln!(out, "Sigma = {}", format_matrix(&self.noise_cov[n])).unwrap();
        }
        out
    }

    pub fn from_model_text(text: &str) -> Result<Self, SensingError> {
        let mut nodes = None;
        let mut param_dim = None;
        let mut noise = NoiseKind::Gaussian;
        let mut moment_eps: Option<T> = None;
        let mut sensing: Vec<Option<DMatrix<T>>> = Vec::new();
        let mut covs: Vec<Option<DMatrix<T>>> = Vec::new();
        let mut current: Option<usize> = None;

        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |reason: String| SensingError::Parse { line: line_no, reason };
            if let Some(rest) = line.strip_prefix('[') {
                let inner = rest
                    .strip_suffix(']')
                    .ok_or_else(|| err("unterminated section header".into()))?;
                let k = inner
                    .strip_prefix("node")
                    .map(str::trim)
                    .ok_or_else(|| err(format!("unknown section {inner:?}")))?
                    .parse::<usize>()
                    .map_err(|e| err(format!("bad node index: {e}")))?;
                let n = nodes.ok_or_else(|| err("node section before `nodes = ...`".into()))?;
                if k >= n {
                    return Err(err(format!("node index {k} out of range for {n} nodes")));
                }
                current = Some(k);
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| err(format!("expected `key = value`, got {line:?}")))?;
            match (key, current) {
                ("nodes", None) => {
                    let n: usize = value.parse().map_err(|e| err(format!("bad nodes: {e}")))?;
                    if n == 0 {
                        return Err(err("nodes must be positive".into()));
                    }
                    nodes = Some(n);
                    sensing = vec![None; n];
                    covs = vec![None; n];
                }
                ("param_dim", None) => {
                    let m: usize =
                        value.parse().map_err(|e| err(format!("bad param_dim: {e}")))?;
                    param_dim = Some(m);
                }
                ("noise", None) => {
                    noise = match value {
                        "gaussian" => NoiseKind::Gaussian,
                        "noiseless" => NoiseKind::Noiseless,
                        other => return Err(err(format!("unknown noise kind {other:?}"))),
                    };
                }
                ("noise_moment_eps", None) => {
                    moment_eps = if value == "inf" {
                        None
                    } else {
                        let v: f64 =
                            value.parse().map_err(|e| err(format!("bad moment eps: {e}")))?;
                        Some(real(v))
                    };
                }
                ("H", Some(k)) => sensing[k] = Some(parse_matrix(value).map_err(err)?),
                ("Sigma", Some(k)) => covs[k] = Some(parse_matrix(value).map_err(err)?),
                (other, _) => return Err(err(format!("unexpected key {other:?} here"))),
            }
        }

        let n = nodes.ok_or(SensingError::Parse {
            line: 0,
            reason: "missing `nodes = ...`".into(),
        })?;
        let m = param_dim.ok_or(SensingError::Parse {
            line: 0,
            reason: "missing `param_dim = ...`".into(),
        })?;
        let collect = |items: Vec<Option<DMatrix<T>>>, what: &str| {
            items
                .into_iter()
                .enumerate()
                .map(|(k, v)| {
                    v.ok_or_else(|| SensingError::Parse {
                        line: 0,
                        reason: format!("node {k} missing {what}"),
                    })
                })
                .collect::<Result<Vec<_>, _>>()
        };
        let sensing = collect(sensing, "H")?;
        if let Some(bad) = sensing.iter().position(|h| h.ncols() != m) {
            return Err(SensingError::Parse {
                line: 0,
                reason: format!("node {bad}: H has {} columns, param_dim is {m}", sensing[bad].ncols()),
            });
        }
        let covs = collect(covs, "Sigma")?;
        let _ = n;
        Ok(Self::new(sensing, covs)?
            .with_noise(noise)
            .with_noise_moment_eps(moment_eps))
    }

    pub fn write_model(&self, path: impl AsRef<std::path::Path>) -> Result<(), SensingError> {
        Ok(std::fs::write(path, self.to_model_text())?)
    }

    pub fn read_model(path: impl AsRef<std::path::Path>) -> Result<Self, SensingError> {
        Self::from_model_text(&std::fs::read_to_string(path)?)
    }
}

fn format_matrix<T: Real>(m: &DMatrix<T>) -> String {
    let rows: Vec<String> = (0..m.nrows())
        .map(|i| {
            (0..m.ncols())
                .map(|j| format!("{}", m[(i, j)]))
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    format!("[{}]", rows.join("; "))
}

fn parse_matrix<T: Real>(text: &str) -> Result<DMatrix<T>, String> {
    let inner = text
        .trim()
        .strip_prefix('[')
        .and_then(|s| s.strip_suffix(']'))
        .ok_or_else(|| format!("matrix literal must be bracketed, got {text:?}"))?;
    let rows: Vec<Vec<T>> = inner
        .split(';')
        .map(|row| {
            row.split_whitespace()
                .map(|tok| {
                    tok.parse::<f64>()
                        .map(|v| real::<T>(v))
                        .map_err(|e| format!("bad number {tok:?}: {e}"))
                })
                .collect()
        })
        .collect::<Result<_, _>>()?;
    if rows.is_empty() || rows[0].is_empty() {
        return Err("empty matrix literal".into());
    }
    let cols = rows[0].len();
    if rows.iter().any(|r| r.len() != cols) {
        return Err("ragged matrix literal".into());
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}
