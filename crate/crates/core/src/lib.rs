//! Signalized-intersection simulator with energy-optimal connected vehicles,
//! human-driven vehicles following the intelligent driver model, and an
//! adaptive pressure-based signal controller.

pub mod check;
pub mod config;
pub mod crossing;
pub mod hdv;
pub mod motion;
pub mod output;
pub mod planner;
pub mod signal;
pub mod sim;
pub mod standby;
pub mod sweep;
