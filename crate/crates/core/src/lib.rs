//! Distributed output consensus of heterogeneous linear followers to an
//! unknown multi-sinusoidal leader, with adaptive frequency estimation.

pub mod analysis;
pub mod controller;
pub mod export;
pub mod filter_form;
pub mod graph;
pub mod leader;
pub mod observer;
pub mod poly;
pub mod scenario;
pub mod sim;

pub use scenario::{load_scenario, parse_scenario, LoadOptions, Scenario};
