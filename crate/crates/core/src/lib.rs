//! Fluctuations of the particle current for independent random walks in a
//! one-dimensional i.i.d. random environment.

pub mod env;
pub mod error;
pub mod kernel;
pub mod limit;
pub mod linalg;
pub mod rng;
pub mod runner;
pub mod scalar;
pub mod sim;
pub mod stats;

pub use env::{EnvSpec, Environment, InitMode, QuenchedFunctionals, TheoryParams, Window};
pub use error::{Error, Result};
pub use limit::LimitParams;

/// Exact moment algebra for laws with rational atoms.
pub type ExactMoments = env::LawMoments<num_rational::Rational64>;
pub type Moments = env::LawMoments<f64>;
pub type Field = kernel::SiteField<f64>;
pub type FieldF32 = kernel::SiteField<f32>;
