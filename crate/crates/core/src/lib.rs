//! Estimators for information provision experiments.
//!
//! Standard panel and TSLS specifications recover weighted averages of
//! individual belief effects, with weights proportional to how far each
//! person's beliefs moved. The local least squares estimator in [`lls`]
//! conditions on updating heterogeneity so that only randomized variation in
//! beliefs remains, recovering the unweighted average partial effect.
//! [`simlab`] generates populations with known ground truth for checking both.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod datamodel;
pub mod estimators;
pub mod inference;
pub mod lls;
pub mod regress;
pub mod simlab;

pub use datamodel::{
    rank_transform, validate_dataset, validate_dataset_with_schema, Arm, BeliefRecord, DataError, Dataset,
    DerivedColumns, Design, EstimateResult,
};
