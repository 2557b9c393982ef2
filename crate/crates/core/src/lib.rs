//! Data-curation scaling lab.
//!
//! Corpus sampling, text-quality filters and junk-data injection on the data
//! side; run-log ingestion, Pareto frontiers, filter-vs-pool crossing points and
//! compute-threshold scaling laws on the analysis side; and numerical checks of
//! the rank-necessity and filter-improvement models.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod corpus;
pub mod factuality;
pub mod filters;
pub mod injection;
pub mod rng;
pub mod runlog;
pub mod scaling;
pub mod synth;
pub mod text;
pub mod theory;
