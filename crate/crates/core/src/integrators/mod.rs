//! Deterministic and stochastic time stepping, noise streams and the
//! tabulated captured solution.

pub mod dopri5;
pub mod noise;
pub mod reference;
pub mod sde;
pub mod trajectory;

pub use dopri5::{integrate_ode, solve, DenseStep, OdeEnd, OdeOptions, OdeSolution, OdeStats};
pub use noise::{IncrementSource, NoNoise, NoiseStream};
pub use reference::{reference_solution, ReferenceConfig, ReferenceSolution};
pub use sde::{default_dt, integrate_sde, run_sde, step_count, AutoresonanceSde, FnSde, SdeEnd, SdeScheme, SdeSystem};
pub use trajectory::{fmt17, Trajectory, TrajectoryMeta, ERROR_COLUMNS, PENDULUM_COLUMNS, STATE_COLUMNS};
