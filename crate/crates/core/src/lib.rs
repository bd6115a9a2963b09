pub mod boxsim;
pub mod branching;
pub mod engulf;
pub mod error;
pub mod exact;
pub mod geomfield;
pub mod grid;
pub mod quad;
pub mod stats;
pub mod traj;
pub mod trajectory;

mod swarm;
