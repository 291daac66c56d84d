pub mod error;
pub mod experiments;
pub mod fluid;
pub mod instance;
pub mod lp;
pub mod phases;
pub mod plot;
pub mod policies;
pub mod quality;
pub mod simulator;

pub use error::{Error, Result};
pub use fluid::{solve_capacity_plan, solve_feedback, solve_overloaded, solve_steady_state, FluidSolution};
pub use instance::{ClassParams, Instance, InstanceFile};
pub use quality::{derive_feedback, derive_quality, QualityDerived, QualityParams};
pub use policies::{PolicyKind, PolicySpec, Tiebreak};
pub use simulator::{detect_instability, run, SimConfig, SimMetrics, Simulation};
