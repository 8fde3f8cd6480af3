//! Simulation library for communication-efficient distributed
//! recursive least-squares estimation over sparse networks.
//!
//! A network of nodes observes noisy low-dimensional linear functions
//! of a common static parameter. No single node's observations pin the
//! parameter down; each one interleaves a consensus move over its
//! graph neighborhood with a local innovation step, under decaying
//! weight sequences. The gated estimator additionally switches each
//! node's transmissions off with growing probability, trading
//! per-step communication against convergence speed in a controlled
//! way. A centralized estimator with access to every observation and
//! an always-communicating distributed benchmark bound the comparison
//! from either side.
//!
//! Modules, bottom to top: [`scalar`] (the float abstraction),
//! [`rng`] (seed derivation and named streams), [`topology`],
//! [`schedules`], [`sensing`], [`estimators`] (the three recursions),
//! [`harness`] (Monte Carlo ensembles, rate fits, covariance and
//! moment checks), and [`ingest`] (CSV regression datasets replayed
//! through the distributed estimators).
//!
//! Everything numeric is generic over [`scalar::Real`]; the aliases
//! below pin the common choice of `f64`.

pub mod estimators;
pub mod harness;
pub mod ingest;
pub mod rng;
pub mod schedules;
pub mod scalar;
pub mod sensing;
pub mod topology;

pub type Topology64 = topology::Topology<f64>;
pub type SensingModel64 = sensing::SensingModel<f64>;
pub type Parameter64 = sensing::Parameter<f64>;
pub type ScheduleParams64 = schedules::ScheduleParams<f64>;
pub type WeightSchedule64 = schedules::WeightSchedule<f64>;
pub type DistributedState64 = estimators::DistributedState<f64>;
pub type OracleState64 = estimators::OracleState<f64>;
pub type RunRecord64 = estimators::RunRecord<f64>;
pub type ExperimentConfig64 = harness::ExperimentConfig<f64>;
pub type Experiment64 = harness::Experiment<f64>;
pub type Dataset64 = ingest::Dataset<f64>;
pub type ReplaySetup64 = ingest::ReplaySetup<f64>;
