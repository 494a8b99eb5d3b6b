//! Environment laws, realized environments and their deterministic functionals.

mod environment;
mod functionals;
mod law;
pub mod persist;
mod theory;

pub use environment::{Environment, Window};
pub use functionals::{
    front_index, BoundaryBias, QuenchedFunctionals, DENSITY_SERIES_MAX_DEPTH, DENSITY_SERIES_TOL,
};
pub use law::{ClosedForms, DiscreteLaw, EnvKind, EnvSpec, EnvSpecConfig, LawMoments};
pub use theory::{theory_params, InitMode, TheoryOptions, TheoryParams};
