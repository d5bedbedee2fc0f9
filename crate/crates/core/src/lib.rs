#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Difference-in-differences estimators for treatments that are
//! continuously distributed in every period.
//!
//! Movers (units whose treatment changes between two periods) are compared
//! with stayers (or quasi-stayers whose treatment barely changes) that share
//! the same baseline treatment, either through a local polynomial regression
//! of outcome changes on the baseline treatment or through propensity-score
//! reweighting of the controls.

pub mod error;
pub mod estimators;
pub mod inference;
pub mod montecarlo;
pub mod panel;
pub mod propensity;
pub mod report;
pub mod simulate;
pub mod smoothing;
pub mod stats;

pub use error::{Error, Result};
pub use panel::{classify, ingest, MoverStatus, Panel, Schema};
