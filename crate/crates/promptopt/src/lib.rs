//! Command-line driver and IO for black-box prompt optimization.
//!
//! The algorithms live in [`promptopt_core`]; this crate adds the HTTP
//! scoring client, a mock scoring server for integration tests, the
//! checkpoint/vocabulary/dataset file formats, run manifests and the CLI.

pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod files;
pub mod manifest;
pub mod mock_server;
pub mod remote;

pub use error::{Error, ExitStatus};
