//! Conditional policy generator for dynamic constraint satisfaction.
//!
//! A product-of-categoricals policy, one dense softmax cell per variable, is
//! fed Gaussian noise plus a learned class-label embedding. It is trained with
//! entropy-regularized REINFORCE on a reward built from the static constraint,
//! plus a likelihood term that pulls each label's samples into its region.
//! The Synt-ND benchmark and its brute-force oracle live in [`problem`].

pub mod error;
pub mod evalmetrics;
pub mod nncore;
pub mod policy;
pub mod problem;
pub mod training;

pub use error::{Error, Result};
pub use evalmetrics::{confusion, evaluate, reward_histogram, ConfusionMatrix, EvalReport, MetricOptions};
pub use nncore::{Adam, AdamConfig, SeededRng};
pub use policy::{ActionDistribution, GeneratorConfig, PolicyGenerator};
pub use problem::{
    enumerate_solutions, octant_of, octant_regions, Assignment, ConditionSet, DiscreteDomain, OracleResult,
    RegionSpec, SyntProblem,
};
pub use training::{train, NllForm, TrainConfig, TrainRecord, Trainer};

/// Build identifier embedded in every emitted document.
pub const BUILD_ID: &str = concat!("condgen ", env!("CARGO_PKG_VERSION"));
