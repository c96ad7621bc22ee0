//! Simulation, preprocessing, training and serving around `headway-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod formats;
pub mod pipeline;
pub mod service;
