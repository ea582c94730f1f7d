//! Scenario files, built-in presets and the batch runner.

pub mod presets;
pub mod run;
pub mod scenario;
