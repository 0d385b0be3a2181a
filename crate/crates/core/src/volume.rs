//! In-memory voxel grids.
//!
//! All volumes use one canonical layout: axis 0 varies fastest in the linear
//! data buffer, and each axis index increases along the matching world (RAS+)
//! axis. `origin` is the world coordinate (mm) of the center of voxel
//! `(0, 0, 0)`, following the NIfTI convention. Multi-channel volumes
//! (probability stacks) store channels as contiguous blocks, channel slowest.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance used when comparing spacings of two grids.
pub const SPACING_RTOL: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
}

impl Grid {
    pub fn new(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        Self::with_origin(dims, spacing, [0.0; 3])
    }

    pub fn with_origin(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::InvalidParameter(format!(
                "dims must be >= 1, got {dims:?}"
            )));
        }
        if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidParameter(format!(
                "spacing must be positive and finite, got {spacing:?}"
            )));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "origin must be finite, got {origin:?}"
            )));
        }
        Ok(Grid {
            dims,
            spacing,
            origin,
        })
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let x = idx % self.dims[0];
        let yz = idx / self.dims[0];
        [x, yz % self.dims[1], yz / self.dims[1]]
    }

    pub fn voxel_volume(&self) -> f64 {
        self.spacing[0] * self.spacing[1] * self.spacing[2]
    }

    /// Length of the grid's bounding-box diagonal in mm.
    pub fn physical_diagonal(&self) -> f64 {
        (0..3)
            .map(|a| {
                let e = self.dims[a] as f64 * self.spacing[a];
                e * e
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Same dims, spacing equal within [`SPACING_RTOL`] relative.
    pub fn matches(&self, other: &Grid) -> bool {
        self.dims == other.dims
            && self
                .spacing
                .iter()
                .zip(other.spacing.iter())
                .all(|(a, b)| (a - b).abs() <= SPACING_RTOL * a.abs().max(b.abs()))
    }

    pub fn ensure_matches(&self, other: &Grid) -> Result<()> {
        if self.matches(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "dims {:?} spacing {:?} vs dims {:?} spacing {:?}",
                self.dims, self.spacing, other.dims, other.spacing
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VolumeKind {
    Image,
    Labels,
    Probabilities,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Volume<T> {
    grid: Grid,
    channels: usize,
    data: Vec<T>,
}

pub type ImageVolume = Volume<f64>;
pub type LabelVolume = Volume<u16>;
pub type ProbabilityVolume = Volume<f32>;

impl<T> Volume<T> {
    pub fn from_vec(grid: Grid, data: Vec<T>) -> Result<Self> {
        Self::from_channels(grid, 1, data)
    }

    pub fn from_channels(grid: Grid, channels: usize, data: Vec<T>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::Dimensionality("channel count must be >= 1".into()));
        }
        if data.len() != grid.len() * channels {
            return Err(Error::Dimensionality(format!(
                "data length {} does not match {} voxels x {} channels",
                data.len(),
                grid.len(),
                channels
            )));
        }
        Ok(Volume {
            grid,
            channels,
            data,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dims(&self) -> [usize; 3] {
        self.grid.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.grid.spacing
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let n = self.grid.len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn map<U>(&self, f: impl Fn(&T) -> U) -> Volume<U> {
        Volume {
            grid: self.grid,
            channels: self.channels,
            data: self.data.iter().map(f).collect(),
        }
    }
}

impl<T: Clone> Volume<T> {
    pub fn filled(grid: Grid, value: T) -> Self {
        Volume {
            grid,
            channels: 1,
            data: vec![value; grid.len()],
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, z: usize) -> T {
        self.data[self.grid.index(x, y, z)].clone()
    }
}

impl Volume<u16> {
    pub fn label_set(&self) -> BTreeSet<u16> {
        self.data.iter().copied().collect()
    }
}

impl Volume<f64> {
    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

impl Volume<f32> {
    /// Checks the probability-stack invariants: values in [0, 1] and per-voxel
    /// class sums within `1e-5` of one.
    pub fn validate_probabilities(&self) -> Result<()> {
        let n = self.grid.len();
        for (i, v) in self.data.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite { index: i });
            }
            if !(0.0..=1.0).contains(v) {
                return Err(Error::InvalidProbabilities(format!(
                    "value {v} at linear index {i} outside [0, 1]"
                )));
            }
        }
        for voxel in 0..n {
            let s: f64 = (0..self.channels)
                .map(|c| self.data[c * n + voxel] as f64)
                .sum();
            if (s - 1.0).abs() > 1e-5 {
                return Err(Error::InvalidProbabilities(format!(
                    "class probabilities at voxel {voxel} sum to {s}"
                )));
            }
        }
        Ok(())
    }
}

/// Declared set of admissible label ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet(BTreeSet<u16>);

impl LabelSet {
    pub fn new(ids: impl IntoIterator<Item = u16>) -> Self {
        LabelSet(ids.into_iter().collect())
    }

    pub fn contains(&self, id: u16) -> bool {
        self.0.contains(&id)
    }

    pub fn ids(&self) -> Vec<u16> {
        self.0.iter().copied().collect()
    }
}

impl Default for LabelSet {
    /// Background 0, pancreas 1, tumor 2.
    fn default() -> Self {
        LabelSet::new([0, 1, 2])
    }
}
