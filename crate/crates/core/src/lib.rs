//! Private aggregation of teacher ensembles with a fairness audit.
//!
//! Teachers trained on disjoint private shards label a public set through
//! Gaussian noisy voting; a student learns from those labels. The audit
//! compares students trained on noisy and clean votes: how far their
//! parameters drift, how much extra risk each protected group bears, and
//! how those quantities relate to analytic upper bounds. Rényi accounting
//! reports the privacy spent.

pub mod data;
pub mod ensemble;
pub mod error;
pub mod experiment;
pub mod fairness;
pub mod model;
pub mod numeric;
pub mod privacy;
pub mod report;
pub mod rng;
pub mod train;

pub use data::{Dataset, Sample, SplitSpec, SynthSpec};
pub use ensemble::{EnsembleModel, VoteCounts, VoteResult, VoteVariant};
pub use error::{Error, Result};
pub use experiment::{run_experiment, run_sweep, ExperimentConfig, SweepSpec};
pub use fairness::{DeviationStats, RiskLoss};
pub use model::{Architecture, LabelTarget, ModelParams};
pub use privacy::{PrivacyParams, RdpLedger};
pub use report::FairnessReport;
pub use train::TrainConfig;
