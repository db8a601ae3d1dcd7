//! Command-line and HTTP front ends for `fairquota`.
//!
//! [`service`] holds the request handling both share, [`server`] the axum
//! router and [`cli`] the argument parsing behind the `fairquota` binary.

pub mod cli;
pub mod server;
pub mod service;

pub use service::{DatasetSnapshot, ServiceError};
