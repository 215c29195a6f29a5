//! Stochastic difference-equation population models and numerical checks of
//! their boundedness, persistence and permanence criteria.

pub mod catalog;
pub mod engine;
pub mod env;
pub mod error;
pub mod lyap;
pub mod matrix;
pub mod models;
pub mod persist;
pub mod stats;

pub use catalog::{list_models, CatalogEntry, ModelConfig, Param};
pub use engine::{
    ensemble_hit_probability, ergodic_average, simulate, EmpiricalSummary, Functional,
    Observables, SetDescriptor, SimConfig, SimulationReport,
};
pub use env::{make_stream, EnvSpec, ScalarDist, Stream};
pub use error::{Error, Result};
pub use lyap::{digamma, lyapunov_mc, roerdink_gamma, GammaClosedFormInput, Norm};
pub use matrix::Matrix;
pub use models::{ExtinctionSet, ModelSpec, StateSpace, StochasticMap, Wire};
pub use stats::{RateEstimate, Sign};
