pub mod bop;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod fixture;
pub mod selftest;

pub use config::PipelineConfig;
