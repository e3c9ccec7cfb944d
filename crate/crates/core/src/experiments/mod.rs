//! Desk-scale studies built on the training loop.

pub mod classification;
pub mod config;
pub mod lowrank;
pub mod sparse_regression;
pub mod sweep;
pub mod transfer;
