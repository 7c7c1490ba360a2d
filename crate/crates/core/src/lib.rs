//! Skeleton-based action recognition with ten late-fused classifier channels.
//!
//! Three LSTM channels consume per-frame geometric features (relative
//! positions, joint-joint distances, joint-line distances) and seven small
//! CNN channels consume texture maps rendered from the same sequence (joint
//! trajectory maps on three planes, joint distance maps on four). Channel
//! probability vectors are combined by element-wise max, mean or product.

pub mod error;
pub mod eval;
pub mod features;
pub mod fusion;
pub mod geometry;
pub mod io;
pub mod maps;
pub mod nn;
pub mod pipeline;
pub mod preprocess;
pub mod skeleton;
pub mod toy;

pub use error::{Error, Result};
pub use skeleton::{Frame, Pose, SkeletonSequence, Topology, MAX_BODIES};
