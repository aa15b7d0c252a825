//! Localization of a point gamma-ray source from Poisson detector counts.
//!
//! The forward model traces straight rays through polygonal buildings and
//! attenuates the inverse-square flux by the accumulated optical depth. On
//! top of it sit population optimizers, implicit filtering, a hybrid
//! global-then-local pipeline and two adaptive MCMC samplers.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod city;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod global_opt;
pub mod hybrid;
pub mod likelihood;
pub mod local_opt;
pub mod mcmc;
pub mod reference;
pub mod rng;
pub mod scenario;
pub mod transport;

pub use error::{Error, Result};
pub use likelihood::{FeasibleBox, Objective, ObjectiveContext, Vec3};
pub use transport::{Detector, ObservationSet, Scenario, SourceParams};
