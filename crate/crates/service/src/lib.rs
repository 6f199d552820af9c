//! Routing gateway service and CLI.
//!
//! A single binary exposes the pipeline two ways: `serve` runs the HTTP
//! gateway (routing, answering, registry administration), and the `route`,
//! `answer`, `eval`, and `curate` subcommands drive the same code paths in
//! batch form. One [`config::ServiceConfig`] schema feeds both.

pub mod cli;
pub mod config;
pub mod http;

pub use config::ServiceConfig;
pub use http::{app, AppState};
