//! Skeleton sequences, the 263-wide feature codec and dataset plumbing.

pub mod clip;
pub mod dataset;
pub mod features;
pub mod normalize;
pub mod skeleton;
pub mod toy;
pub mod window;

pub use clip::{MotionClip, RootPose};
pub use dataset::{split_fraction, ClipEntry, Dataset, DatasetManifest, FeatureCache, Split};
pub use features::{decode_features, encode_features, MotionFeatures, FEATURE_WIDTH};
pub use normalize::NormalizationStats;
pub use skeleton::{Skeleton, NUM_JOINTS};
pub use toy::generate_toy_dataset;
pub use window::{crop_window, leading_window, one_hot};
