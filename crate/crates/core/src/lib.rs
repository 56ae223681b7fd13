//! Dynamic probabilistic risk assessment of hybrid systems.

pub mod model;
pub mod planner;
pub mod risk;
pub mod satellite;
pub mod scheduler;
pub mod simulator;
