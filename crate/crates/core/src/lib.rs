//! Range-image compression and place recognition for LiDAR scans.
//!
//! Scans are projected to range images, squeezed through a convolutional
//! encoder into a small bottleneck, matched pairwise by a Siamese tail and
//! decoded back into approximate point clouds.

mod bytes;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod pointcloud;
pub mod projection;
pub mod retrieval;
pub mod tensorfile;
pub mod training;
pub mod transmission;

pub use error::{Error, Result};
pub use pointcloud::{Point3, PointCloud, Pose};
pub use projection::{angular_resolution, project, unproject, ProjectionConfig, RangeImage};
pub use model::{Bottleneck, ModelProfile, ModelWeights, ProfileKind};
