//! Skeleton-based action recognition with spatial-temporal graph
//! convolutions, a discriminative feature learning head and
//! direction-invariant input features.

pub mod backbone;
pub mod dif;
pub mod error;
pub mod geom;
pub mod graph;
pub mod heads;
pub mod model;
pub mod nn;
pub mod rng;
pub mod saliency;
pub mod skeleton;
pub mod training;
pub mod verify;

pub use error::{Error, Result};
