//! Probability primitives shared by every other module.

pub mod dist;
pub mod integrate;
pub mod values;
pub mod weight;

pub use dist::{DistSpec, TypeDistribution};
pub use integrate::{Estimate, Integrator, Method};
pub use values::{bits, Marginal, ValueModel, ValueSpec, WinStats};
pub use weight::{stieltjes, ParetoWeight, WeightSpec};
