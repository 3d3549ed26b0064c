//! Border-based touch sensing on elastic textiles: deformation model, stretch
//! sensor simulation, learned touch localization and indent classification.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod geometry;
pub mod sensing;
pub mod dataset;
pub mod models;
pub mod evaluation;
pub mod cli;
