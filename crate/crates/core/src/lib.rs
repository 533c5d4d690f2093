//! Label-assignment machinery for open-world semi-supervised learning.
//!
//! The crate is `no_std` and only needs `alloc`. It covers:
//!
//! * [`sinkhorn`]: unconditional and conditional self-label assignment by
//!   log-domain entropic optimal transport.
//! * [`threshold`]: EMA learning-status tracking and the seen/novel
//!   hierarchical confidence thresholds.
//! * [`objectives`]: supervised, clustering (single and multi-view) and
//!   confidence losses with analytic logit gradients.
//! * [`theory`]: multinomial sampling, chi-square statistics, the two
//!   class-distribution estimators and their expected chi-square statistics.
//! * [`eval`]: Hungarian assignment, matched clustering accuracy, Manhattan
//!   bias and class-count estimation with k-means.
//! * [`harness`]: synthetic Gaussian-mixture data and a linear-softmax trainer
//!   that runs the whole pipeline end to end.
//!
//! File formats, the command-line front end and thread-parallel drivers live
//! in the companion `owssl` crate.
#![no_std]
#![forbid(unsafe_code)]
// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod eval;
pub mod features;
pub mod harness;
pub mod math;
pub mod objectives;
pub mod prob;
pub mod rng;
pub mod sinkhorn;
pub mod theory;
pub mod threshold;

pub use features::Features;
pub use prob::{softmax, validate_prob_matrix, ClassPrior, LabeledBlock, PartitionSpec, ProbError, ProbMatrix};
pub use rng::Rng;
