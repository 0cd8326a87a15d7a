//! Simulation laboratory for random affine recursions `X_{n+1} = A_{n+1} X_n + B_{n+1}`
//! whose top Lyapunov exponent vanishes.
//!
//! The crate is organised bottom-up: [`linalg`] and [`projective`] supply the
//! geometry, [`models`] the laws of `(A, B)`, [`simulation`] the trajectory
//! engine, and [`estimators`], [`rk1`] and [`exterior`] the statistics built
//! on it. [`experiment`] and [`acceptance`] drive everything from JSON configs.

pub mod acceptance;
pub mod error;
pub mod estimators;
pub mod experiment;
pub mod exterior;
pub mod linalg;
pub mod models;
pub mod projective;
pub mod rk1;
pub mod simulation;
pub mod stream;

pub use error::{Error, Result};
