//! Resampling between voxel grids.
//!
//! Voxels are treated as areas: the grid's outer corner stays fixed, and the
//! center of output voxel `j` along an axis lies at `corner + (j + 0.5) * ts`.
//! Samples falling outside the source are edge-clamped.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Grid, ImageVolume, LabelVolume, Volume};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum ImageOrder {
    Nearest,
    Linear,
    /// Catmull-Rom tricubic (a = -0.5).
    Cubic,
}

impl TryFrom<u8> for ImageOrder {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        match v {
            0 => Ok(ImageOrder::Nearest),
            1 => Ok(ImageOrder::Linear),
            3 => Ok(ImageOrder::Cubic),
            other => Err(Error::InvalidParameter(format!(
                "image interpolation order must be 0, 1 or 3, got {other}"
            ))),
        }
    }
}

impl From<ImageOrder> for u8 {
    fn from(o: ImageOrder) -> u8 {
        match o {
            ImageOrder::Nearest => 0,
            ImageOrder::Linear => 1,
            ImageOrder::Cubic => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum LabelOrder {
    Nearest,
    /// One-hot channels interpolated trilinearly, then argmax.
    Linear,
}

impl TryFrom<u8> for LabelOrder {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        match v {
            0 => Ok(LabelOrder::Nearest),
            1 => Ok(LabelOrder::Linear),
            other => Err(Error::InvalidParameter(format!(
                "label interpolation order must be 0 or 1, got {other}"
            ))),
        }
    }
}

impl From<LabelOrder> for u8 {
    fn from(o: LabelOrder) -> u8 {
        match o {
            LabelOrder::Nearest => 0,
            LabelOrder::Linear => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResamplePlan {
    pub source_dims: [usize; 3],
    pub source_spacing: [f64; 3],
    pub target_spacing: [f64; 3],
    pub target_dims: [usize; 3],
    pub image_order: ImageOrder,
    pub label_order: LabelOrder,
    /// Clamp tricubic output to the source value range.
    #[serde(default)]
    pub clamp_cubic: bool,
}

impl ResamplePlan {
    pub fn new(
        source_dims: [usize; 3],
        source_spacing: [f64; 3],
        target_spacing: [f64; 3],
        image_order: ImageOrder,
        label_order: LabelOrder,
    ) -> Result<Self> {
        let target_dims = target_grid(source_dims, source_spacing, target_spacing)?;
        Ok(ResamplePlan {
            source_dims,
            source_spacing,
            target_spacing,
            target_dims,
            image_order,
            label_order,
            clamp_cubic: false,
        })
    }

    pub fn for_grid(
        source: &Grid,
        target_spacing: [f64; 3],
        image_order: ImageOrder,
        label_order: LabelOrder,
    ) -> Result<Self> {
        Self::new(
            source.dims,
            source.spacing,
            target_spacing,
            image_order,
            label_order,
        )
    }

    pub fn with_clamp_cubic(mut self, on: bool) -> Self {
        self.clamp_cubic = on;
        self
    }

    fn check_source(&self, grid: &Grid) -> Result<()> {
        let expected = Grid::new(self.source_dims, self.source_spacing)?;
        if !expected.matches(grid) {
            return Err(Error::GridMismatch(format!(
                "plan expects dims {:?} spacing {:?}, volume has dims {:?} spacing {:?}",
                self.source_dims, self.source_spacing, grid.dims, grid.spacing
            )));
        }
        Ok(())
    }

    fn target(&self, source: &Grid) -> Grid {
        let origin = std::array::from_fn(|a| {
            source.origin[a] + 0.5 * (self.target_spacing[a] - source.spacing[a])
        });
        Grid {
            dims: self.target_dims,
            spacing: self.target_spacing,
            origin,
        }
    }

    /// Continuous source index for each target index, per axis.
    fn source_coords(&self) -> [Vec<f64>; 3] {
        std::array::from_fn(|a| {
            let ratio = self.target_spacing[a] / self.source_spacing[a];
            (0..self.target_dims[a])
                .map(|j| (j as f64 + 0.5) * ratio - 0.5)
                .collect()
        })
    }
}

/// `round(dims * spacing / target)` per axis, half away from zero, at least 1.
pub fn target_grid(
    source_dims: [usize; 3],
    source_spacing: [f64; 3],
    target_spacing: [f64; 3],
) -> Result<[usize; 3]> {
    if source_dims.contains(&0) {
        return Err(Error::InvalidParameter(format!(
            "source dims must be positive, got {source_dims:?}"
        )));
    }
    for s in source_spacing.iter().chain(target_spacing.iter()) {
        if !(*s > 0.0 && s.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "spacing must be positive, got source {source_spacing:?} target {target_spacing:?}"
            )));
        }
    }
    Ok(std::array::from_fn(|a| {
        let exact = source_dims[a] as f64 * source_spacing[a] / target_spacing[a];
        (exact.round() as usize).max(1)
    }))
}

#[inline]
fn clamp_index(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    if a == b {
        return a;
    }
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    (a + t * (b - a)).clamp(lo, hi)
}

#[inline]
fn catmull_rom(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        -0.5 * t3 + t2 - 0.5 * t,
        1.5 * t3 - 2.5 * t2 + 1.0,
        -1.5 * t3 + 2.0 * t2 + 0.5 * t,
        0.5 * t3 - 0.5 * t2,
    ]
}

/// Floor index and fraction of a coordinate clamped into `[0, n - 1]`.
#[inline]
fn split(p: f64, n: usize) -> (usize, f64) {
    let p = p.clamp(0.0, (n - 1) as f64);
    let i = p.floor();
    let i_us = i as usize;
    if i_us >= n - 1 {
        (n - 1, 0.0)
    } else {
        (i_us, p - i)
    }
}

#[inline]
pub(crate) fn nearest_index(p: [f64; 3], dims: [usize; 3]) -> [usize; 3] {
    std::array::from_fn(|a| clamp_index((p[a] + 0.5).floor() as isize, dims[a]))
}

pub(crate) fn sample_linear(data: &[f64], dims: [usize; 3], p: [f64; 3]) -> f64 {
    let (x0, fx) = split(p[0], dims[0]);
    let (y0, fy) = split(p[1], dims[1]);
    let (z0, fz) = split(p[2], dims[2]);
    let x1 = (x0 + 1).min(dims[0] - 1);
    let y1 = (y0 + 1).min(dims[1] - 1);
    let z1 = (z0 + 1).min(dims[2] - 1);
    let at = |x: usize, y: usize, z: usize| data[x + dims[0] * (y + dims[1] * z)];
    let c00 = lerp(at(x0, y0, z0), at(x1, y0, z0), fx);
    let c10 = lerp(at(x0, y1, z0), at(x1, y1, z0), fx);
    let c01 = lerp(at(x0, y0, z1), at(x1, y0, z1), fx);
    let c11 = lerp(at(x0, y1, z1), at(x1, y1, z1), fx);
    lerp(lerp(c00, c10, fy), lerp(c01, c11, fy), fz)
}

pub(crate) fn sample_cubic(data: &[f64], dims: [usize; 3], p: [f64; 3]) -> f64 {
    let (x0, fx) = split(p[0], dims[0]);
    let (y0, fy) = split(p[1], dims[1]);
    let (z0, fz) = split(p[2], dims[2]);
    let (wx, wy, wz) = (catmull_rom(fx), catmull_rom(fy), catmull_rom(fz));
    let xs: [usize; 4] = std::array::from_fn(|k| clamp_index(x0 as isize + k as isize - 1, dims[0]));
    let ys: [usize; 4] = std::array::from_fn(|k| clamp_index(y0 as isize + k as isize - 1, dims[1]));
    let zs: [usize; 4] = std::array::from_fn(|k| clamp_index(z0 as isize + k as isize - 1, dims[2]));
    let mut acc = 0.0;
    for (kz, &z) in zs.iter().enumerate() {
        let mut plane = 0.0;
        for (ky, &y) in ys.iter().enumerate() {
            let row = &data[dims[0] * (y + dims[1] * z)..];
            let mut line = 0.0;
            for (kx, &x) in xs.iter().enumerate() {
                line += wx[kx] * row[x];
            }
            plane += wy[ky] * line;
        }
        acc += wz[kz] * plane;
    }
    acc
}

/// Samples an image at a continuous voxel-index position.
pub(crate) fn sample_image(
    data: &[f64],
    dims: [usize; 3],
    p: [f64; 3],
    order: ImageOrder,
) -> f64 {
    match order {
        ImageOrder::Nearest => {
            let [x, y, z] = nearest_index(p, dims);
            data[x + dims[0] * (y + dims[1] * z)]
        }
        ImageOrder::Linear => sample_linear(data, dims, p),
        ImageOrder::Cubic => sample_cubic(data, dims, p),
    }
}

/// Samples a label map at a continuous voxel-index position. Linear order
/// interpolates the one-hot indicator of each label present among the eight
/// neighbours and takes the argmax (ties to the lowest label id).
pub(crate) fn sample_label(data: &[u16], dims: [usize; 3], p: [f64; 3], order: LabelOrder) -> u16 {
    match order {
        LabelOrder::Nearest => {
            let [x, y, z] = nearest_index(p, dims);
            data[x + dims[0] * (y + dims[1] * z)]
        }
        LabelOrder::Linear => {
            let (x0, fx) = split(p[0], dims[0]);
            let (y0, fy) = split(p[1], dims[1]);
            let (z0, fz) = split(p[2], dims[2]);
            let x1 = (x0 + 1).min(dims[0] - 1);
            let y1 = (y0 + 1).min(dims[1] - 1);
            let z1 = (z0 + 1).min(dims[2] - 1);
            let at = |x: usize, y: usize, z: usize| data[x + dims[0] * (y + dims[1] * z)];
            let corners = [
                at(x0, y0, z0),
                at(x1, y0, z0),
                at(x0, y1, z0),
                at(x1, y1, z0),
                at(x0, y0, z1),
                at(x1, y0, z1),
                at(x0, y1, z1),
                at(x1, y1, z1),
            ];
            let mut labels = corners;
            labels.sort_unstable();
            let mut best = labels[0];
            let mut best_w = f64::NEG_INFINITY;
            let mut prev = None;
            for &l in &labels {
                if prev == Some(l) {
                    continue;
                }
                prev = Some(l);
                let ind = |k: usize| if corners[k] == l { 1.0 } else { 0.0 };
                let c00 = lerp(ind(0), ind(1), fx);
                let c10 = lerp(ind(2), ind(3), fx);
                let c01 = lerp(ind(4), ind(5), fx);
                let c11 = lerp(ind(6), ind(7), fx);
                let w = lerp(lerp(c00, c10, fy), lerp(c01, c11, fy), fz);
                if w > best_w {
                    best_w = w;
                    best = l;
                }
            }
            best
        }
    }
}

/// Evaluates `f(x, y, z)` for every voxel of `dims`, parallel over z-slices.
pub(crate) fn fill_parallel<T>(
    dims: [usize; 3],
    f: impl Fn(usize, usize, usize) -> T + Sync,
) -> Vec<T>
where
    T: Send + Default + Clone,
{
    let slice = dims[0] * dims[1];
    let mut out = vec![T::default(); slice * dims[2]];
    out.par_chunks_mut(slice).enumerate().for_each(|(z, chunk)| {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                chunk[x + dims[0] * y] = f(x, y, z);
            }
        }
    });
    out
}

pub fn resample_image(v: &ImageVolume, plan: &ResamplePlan) -> Result<ImageVolume> {
    plan.check_source(v.grid())?;
    let target = plan.target(v.grid());
    let [cx, cy, cz] = plan.source_coords();
    let dims = v.dims();
    let data = v.data();
    let out = fill_parallel(target.dims, |x, y, z| {
        sample_image(data, dims, [cx[x], cy[y], cz[z]], plan.image_order)
    });
    let out = if plan.clamp_cubic && plan.image_order == ImageOrder::Cubic {
        let (lo, hi) = v.min_max();
        out.into_iter().map(|x| x.clamp(lo, hi)).collect()
    } else {
        out
    };
    Volume::from_vec(target, out)
}

pub fn resample_labels(v: &LabelVolume, plan: &ResamplePlan) -> Result<LabelVolume> {
    plan.check_source(v.grid())?;
    let target = plan.target(v.grid());
    let [cx, cy, cz] = plan.source_coords();
    let dims = v.dims();
    let data = v.data();
    let out = fill_parallel(target.dims, |x, y, z| {
        sample_label(data, dims, [cx[x], cy[y], cz[z]], plan.label_order)
    });
    Volume::from_vec(target, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(dims: [usize; 3], s: [f64; 3]) -> Grid {
        Grid::new(dims, s).unwrap()
    }

    #[test]
    fn target_grid_examples() {
        assert_eq!(
            target_grid([100; 3], [2.0; 3], [1.0; 3]).unwrap(),
            [200, 200, 200]
        );
        assert_eq!(
            target_grid([17, 33, 9], [1.0; 3], [1.0; 3]).unwrap(),
            [17, 33, 9]
        );
        assert_eq!(target_grid([7; 3], [0.1; 3], [1.0; 3]).unwrap(), [1, 1, 1]);
        // 5 * 0.5 / 1 = 2.5 rounds away from zero
        assert_eq!(target_grid([5, 1, 1], [0.5, 1.0, 1.0], [1.0; 3]).unwrap()[0], 3);
        assert!(target_grid([1; 3], [0.0, 1.0, 1.0], [1.0; 3]).is_err());
        assert!(target_grid([1; 3], [1.0; 3], [-1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn order_validation() {
        assert!(ImageOrder::try_from(2).is_err());
        assert!(LabelOrder::try_from(3).is_err());
        assert_eq!(ImageOrder::try_from(3).unwrap(), ImageOrder::Cubic);
    }

    #[test]
    fn constant_is_preserved_for_all_orders() {
        let g = grid([5, 4, 3], [2.0, 1.5, 3.0]);
        let v = Volume::filled(g, 5.0);
        for order in [ImageOrder::Nearest, ImageOrder::Linear, ImageOrder::Cubic] {
            let plan =
                ResamplePlan::for_grid(&g, [0.7, 1.0, 1.3], order, LabelOrder::Nearest).unwrap();
            let out = resample_image(&v, &plan).unwrap();
            assert!(out.data().iter().all(|&x| (x - 5.0).abs() < 1e-6));
        }
    }

    #[test]
    fn identity_plan_bit_exact() {
        let g = grid([4, 5, 6], [1.2, 0.8, 2.5]);
        let v = Volume::from_vec(g, (0..120).map(|i| (i as f64).sin()).collect()).unwrap();
        for order in [ImageOrder::Nearest, ImageOrder::Linear, ImageOrder::Cubic] {
            let plan = ResamplePlan::for_grid(&g, g.spacing, order, LabelOrder::Nearest).unwrap();
            assert_eq!(resample_image(&v, &plan).unwrap(), v);
        }
        let l = Volume::from_vec(g, (0..120).map(|i| (i % 3) as u16).collect()).unwrap();
        let plan =
            ResamplePlan::for_grid(&g, g.spacing, ImageOrder::Nearest, LabelOrder::Nearest)
                .unwrap();
        assert_eq!(resample_labels(&l, &plan).unwrap(), l);
    }

    #[test]
    fn trilinear_reproduces_ramp() {
        let g = grid([20, 3, 3], [2.0; 3]);
        // value = physical position of the voxel center along axis 0, measured from the corner
        let v = Volume::from_vec(
            g,
            (0..g.len()).map(|i| (g.coords(i)[0] as f64 + 0.5) * 2.0).collect(),
        )
        .unwrap();
        let plan =
            ResamplePlan::for_grid(&g, [1.0; 3], ImageOrder::Linear, LabelOrder::Nearest).unwrap();
        let out = resample_image(&v, &plan).unwrap();
        assert_eq!(out.dims(), [40, 6, 6]);
        for i in 0..out.grid().len() {
            let [x, _, _] = out.grid().coords(i);
            if (1..39).contains(&x) {
                assert!((out.data()[i] - (x as f64 + 0.5)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn output_origin_keeps_corner() {
        let g = Grid::with_origin([4, 4, 4], [2.0; 3], [1.0, 2.0, 3.0]).unwrap();
        let v = Volume::filled(g, 0.0);
        let plan =
            ResamplePlan::for_grid(&g, [1.0; 3], ImageOrder::Linear, LabelOrder::Nearest).unwrap();
        let out = resample_image(&v, &plan).unwrap();
        assert_eq!(out.grid().origin, [0.5, 1.5, 2.5]);
    }

    #[test]
    fn cubic_overshoot_and_clamp_flag() {
        let g = grid([8, 1, 1], [1.0; 3]);
        let v = Volume::from_vec(g, vec![0., 0., 0., 0., 1., 1., 1., 1.]).unwrap();
        let plan = ResamplePlan::for_grid(&g, [0.3, 1.0, 1.0], ImageOrder::Cubic, LabelOrder::Nearest)
            .unwrap();
        let free = resample_image(&v, &plan).unwrap();
        let (lo, hi) = free.min_max();
        assert!(lo < 0.0 && hi > 1.0, "expected overshoot, got [{lo}, {hi}]");
        let clamped = resample_image(&v, &plan.with_clamp_cubic(true)).unwrap();
        let (lo, hi) = clamped.min_max();
        assert!(lo >= 0.0 && hi <= 1.0);
    }

    #[test]
    fn plan_must_match_volume() {
        let g = grid([4, 4, 4], [1.0; 3]);
        let other = grid([4, 4, 5], [1.0; 3]);
        let plan =
            ResamplePlan::for_grid(&other, [1.0; 3], ImageOrder::Linear, LabelOrder::Nearest)
                .unwrap();
        assert!(matches!(
            resample_image(&Volume::filled(g, 0.0), &plan),
            Err(Error::GridMismatch(_))
        ));
    }

    #[test]
    fn single_label_stays_single() {
        let g = grid([5, 6, 7], [1.3, 0.9, 2.0]);
        let v = Volume::filled(g, 2u16);
        for lo in [LabelOrder::Nearest, LabelOrder::Linear] {
            let plan = ResamplePlan::for_grid(&g, [0.6, 1.7, 1.0], ImageOrder::Nearest, lo).unwrap();
            let out = resample_labels(&v, &plan).unwrap();
            assert!(out.data().iter().all(|&l| l == 2));
        }
    }

    #[test]
    fn half_volume_linear_vs_nearest_boundary() {
        // labels 1 | 2 split along axis 0 on a 4x4x4 grid, upsampled 2x
        let g = grid([4, 4, 4], [2.0; 3]);
        let v = Volume::from_vec(
            g,
            (0..64).map(|i| if g.coords(i)[0] < 2 { 1 } else { 2 }).collect(),
        )
        .unwrap();
        let p0 = ResamplePlan::for_grid(&g, [1.0; 3], ImageOrder::Nearest, LabelOrder::Nearest).unwrap();
        let p1 = ResamplePlan::for_grid(&g, [1.0; 3], ImageOrder::Nearest, LabelOrder::Linear).unwrap();
        let a = resample_labels(&v, &p0).unwrap();
        let b = resample_labels(&v, &p1).unwrap();

        // brute-force oracle: explicit one-hot channels interpolated with per-axis weights
        let oracle = |x: usize| -> u16 {
            let p = (x as f64 + 0.5) * 0.5 - 0.5;
            let p = p.clamp(0.0, 3.0);
            let i0 = p.floor() as usize;
            let i1 = (i0 + 1).min(3);
            let t = p - i0 as f64;
            let ch = |label: u16| {
                let v0 = if (if i0 < 2 { 1 } else { 2 }) == label { 1.0 } else { 0.0 };
                let v1 = if (if i1 < 2 { 1 } else { 2 }) == label { 1.0 } else { 0.0 };
                v0 * (1.0 - t) + v1 * t
            };
            if ch(2) > ch(1) { 2 } else { 1 }
        };
        let boundary = |vol: &LabelVolume| (0..8).find(|&x| vol.at(x, 3, 3) == 2).unwrap();
        for x in 0..8 {
            assert_eq!(b.at(x, 2, 2), oracle(x));
        }
        assert!(boundary(&a).abs_diff(boundary(&b)) <= 1);
        assert!(b.data().iter().all(|&l| l == 1 || l == 2));
    }
}
