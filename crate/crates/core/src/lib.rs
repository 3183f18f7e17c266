//! Routing problems with five composable constraints (capacity, open route,
//! backhaul, duration limit, time windows), the step-wise construction
//! environment used by neural solvers, an independent solution validator,
//! and small reference solvers.

pub mod baselines;
pub mod cvrplib;
pub mod env;
pub mod format;
pub mod generate;
mod instance;
pub mod solution;
pub mod validate;
mod variant;

pub use env::{ActionMask, Env, EnvError, State};
pub use generate::{generate_instance, GeneratorConfig};
pub use instance::{DistanceMatrix, Instance, InstanceError, TimeWindows};
pub use solution::{decompose_routes, Solution, StructureError};
pub use validate::{validate_solution, Validation, Violation};
pub use variant::{ParseVariantError, VariantSpec};

/// Time limit of every sub-route on time-window instances.
pub const HORIZON: f64 = 4.6;
/// Upper bound of the sampled route-length limit.
pub const MAX_ROUTE_LENGTH: f64 = 3.0;
