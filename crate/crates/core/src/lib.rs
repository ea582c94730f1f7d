//! Simulation toolkit for compositional (serial) high-order consensus.

pub mod cli;
pub mod dynamics;
pub mod graph;
pub mod metrics;
pub mod operators;
pub mod sim;
