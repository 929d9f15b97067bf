//! Library surface of the `ptrlab` experiment front end.
//!
//! [`config`] defines the JSON experiment schema and its validation;
//! [`runner`] implements the subcommands (training runs, paired
//! baseline/regularized comparisons, evaluation, diagnostics, gradient
//! checking, and the toy variance lab). The `ptrlab` binary is a thin
//! argument-parsing wrapper over these modules.

pub mod config;
pub mod runner;
