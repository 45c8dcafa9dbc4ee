//! Joint interactive trajectory prediction for pairs of vehicles.
//!
//! The crate is organised bottom-up: [`numeric`] provides tensors, a
//! reverse-mode tape and the neural building blocks; [`scene`] holds the
//! scenario model; [`features`] mines interactive pairs and samples goal
//! targets; [`marginal`], [`joint`] and [`scorer`] form the prediction model;
//! [`metrics`] evaluates pair predictions.

pub mod error;
pub mod features;
pub mod joint;
pub mod marginal;
pub mod metrics;
pub mod model;
pub mod numeric;
pub mod scene;
pub mod scorer;
pub mod train;

pub use error::{Error, Result};
