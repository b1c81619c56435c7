//! Learned driving by imagination: an action-conditioned next-frame GAN, a key-press
//! classifier, and a planner that scores each action by how many generated frames
//! down the look-ahead tree it stays safe.

pub mod datalog;
pub mod error;
pub mod models;
pub mod numerics;
pub mod planner;
pub mod roadworld;
pub mod training;

pub use error::{Error, Result};
