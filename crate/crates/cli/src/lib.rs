//! Config-driven experiment runner and verifiers for `mtl-balance`.

pub mod app;
pub mod config;
pub mod experiment;
pub mod tables;
pub mod verify;
