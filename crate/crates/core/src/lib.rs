//! Evaluation, resampling, augmentation and metric-aware ensembling for 3D
//! tumor segmentation.
//!
//! The crate is organised by pipeline stage: [`io`] loads and stores NIfTI
//! volumes and manifests, [`geometry`] resamples between voxel grids,
//! [`augment`] applies seeded training-time transforms, [`ensemble`] fuses
//! member predictions, [`metrics`] scores segmentations, [`selection`]
//! searches for the best-balanced ensemble, and [`schedules`] evaluates
//! learning-rate laws. [`cli`] binds it all into the `segkit` binary.

pub mod augment;
pub mod cli;
pub mod config;
pub mod ensemble;
pub mod error;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod schedules;
pub mod selection;
pub mod volume;

pub use error::{Error, Result};
pub use volume::{Grid, ImageVolume, LabelSet, LabelVolume, ProbabilityVolume, Volume, VolumeKind};
