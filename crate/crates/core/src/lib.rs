//! Goal extraction from project descriptions with a generator-critic pair of
//! chat models, and a semantic evaluation harness for the extracted goals.

pub mod config;
pub mod datasets;
pub mod evaluation;
pub mod gateway;
pub mod model;
pub mod orchestrator;
pub mod prompting;
pub mod report;
pub mod runner;
