//! Skeleton clips, their file formats, clip-level transforms and the
//! synthetic action generator.

pub mod clip;
pub mod io;
pub mod ops;
pub mod synthetic;
pub mod topology;

pub use clip::{Dataset, SkeletonClip, Split};
pub use io::{read_clip, write_clip_file, ClipFormat};
pub use ops::{
    add_gaussian_noise, augment_translate_rotate, resample_uniform, AugmentLog, AugmentParams,
};
pub use synthetic::{generate_synthetic_dataset, SyntheticSpec};
pub use topology::SkeletonTopology;
