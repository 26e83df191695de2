//! Command-line front end and retrieval service.

pub mod commands;
pub mod config;
pub mod error;
pub mod remote;
pub mod service;
pub mod setup;

pub use error::CliError;
