//! Axial (Z) and coronal (X) motion correction for raster-scanned retinal volumes.
//!
//! The crate covers volume containers, synthetic phantoms with injected motion,
//! least-squares post-processing, the correction networks with their training
//! stages, and evaluation metrics.

pub mod container;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod nn;
pub mod simulate;
pub mod train;
pub mod volume;

pub use error::{Error, Result};
pub use eval::MetricsReport;
pub use nn::{NetConfig, NetKind, Network, Tensor4};
pub use simulate::{MotionConfig, MotionSample, Phantom, PhantomConfig};
pub use train::{TrainConfig, CleanSample};
pub use volume::{
    Boundaries, NormalizedBoundaries, VesselKind, VesselMap, Volume, VolumeGeometry,
    XDisplacementVec, ZDisplacementMap,
};
