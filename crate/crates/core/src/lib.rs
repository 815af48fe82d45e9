//! Decentralized vision-based flocking workbench.
//!
//! The pipeline mirrors an imitation-learning study end to end: a classical
//! Reynolds-style flocking law acts as the expert, a six-camera software
//! renderer produces each drone's omnidirectional grayscale view, a dataset
//! builder records (image, expert command) pairs along randomized linear
//! trajectories, a small convolutional network learns the mapping, and a
//! closed-loop controller flies the learned policy back inside the
//! simulator. Saliency attribution and flock-quality metrics close the loop
//! for analysis.

pub mod attribution;
pub mod controller;
pub mod dataset;
pub mod error;
pub mod flocking;
pub mod math;
pub mod metrics;
pub mod nn;
pub mod render;
pub mod world;

pub use error::{Error, Result};
