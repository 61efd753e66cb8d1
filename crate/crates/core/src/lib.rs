//! Learning SSD configurations for target workloads.
//!
//! The pipeline clusters block I/O traces into workload types, prunes
//! parameters that do not affect performance, and searches the remaining
//! configuration space with a Gaussian-process surrogate, validating
//! candidates in an embedded event-driven SSD simulator. Learned
//! configurations are kept per workload cluster in a JSON store.

// Negated comparisons double as NaN rejection.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod clustering;
pub mod confdb;
pub mod paramspace;
pub mod pruning;
pub mod simssd;
pub mod trace;
pub mod tuner;
