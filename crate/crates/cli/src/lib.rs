//! Command line and HTTP surface over `thali-core`.

pub mod app;
pub mod cli;
pub mod error;
pub mod service;

pub use error::ApiError;
