//! Command-line tools and the HTTP service.

pub mod commands;
pub mod server;
