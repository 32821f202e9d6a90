//! Solve `D x + eps x^q = f(t)` by reducing it to a cascade of linear
//! first-order systems, training a multi-head network once per equation class,
//! and computing the output head for each new instance in closed form.

pub mod analytic;
pub mod checkpoint;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod network;
pub mod oracle;
pub mod ode;
pub mod perturbation;
pub mod reduction;
pub mod training;
pub mod transfer;

pub use error::{Error, Result};
