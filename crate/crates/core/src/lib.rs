//! Droplet detection, tracking and scoring for microfluidic constriction flows.

pub mod assignment;
pub mod config;
pub mod datagen;
pub mod geometry;
pub mod io;
pub mod kalman;
pub mod metrics;
pub mod pipeline;
pub mod raster;
pub mod rng;
pub mod simulator;
pub mod stitcher;
pub mod tracker;
