//! Trustworthiness assessment for UWB two-way-ranging localization.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod anomaly;
pub mod geometry;
pub mod harness;
pub mod localization;
pub mod ranging;
pub mod threats;
pub mod trust;
