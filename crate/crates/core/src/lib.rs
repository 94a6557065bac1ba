//! Learning port-Hamiltonian dynamics with dissipation and control from
//! trajectory data.
//!
//! The numerical core (`autodiff`, `nets`, `models`, `odeint`) is generic over
//! [`Scalar`]; simulation, training and reporting run in [`Real`].

pub mod autodiff;
pub mod batch;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod experiment;
pub mod models;
pub mod nets;
pub mod odeint;
pub mod plot;
pub mod scalar;
pub mod simlab;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Precision of simulation, training and reports.
pub type Real = f64;
pub type Tensor = autodiff::Tensor<Real>;
pub type Tape = autodiff::Tape<Real>;
pub type Model = models::DynamicsModel<Real>;
pub type ParamStore = nets::ParamStore<Real>;
