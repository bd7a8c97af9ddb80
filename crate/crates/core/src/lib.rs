//! Energy-optimal motion planning in a (time, position, lane) search space.
//!
//! The crate is layered bottom-up: [`spacetime`] holds grid and trajectory
//! types, [`vehicle`] the energy model, [`obstacles`] the analytic collision
//! predicates, [`heuristic`] the cost-to-go map, [`planner`] the hybrid A*
//! search, [`replan`] the receding-horizon loop and [`sim`] a closed-loop
//! traffic simulator built on top of all of them.

pub mod error;
pub mod format;
pub mod heuristic;
pub mod obstacles;
pub mod planner;
pub mod replan;
pub mod sim;
pub mod spacetime;
pub mod vehicle;

pub use error::{Error, Result};
