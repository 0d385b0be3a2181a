//! Surfel extraction and the distance-based surface metrics.
//!
//! Surfels live on the dual grid: dual cell `c` spans voxels `c - 1` and `c`
//! along each axis (so a grid with `n` voxels has `n + 1` cells). A cell whose
//! 8-voxel occupancy code is neither 0 nor 255 is a surfel; its area comes
//! from the marching-cubes triangulation of that code with vertices scaled by
//! the voxel spacing. Directed distances are the distance transform of the
//! other mask's surfel cells sampled at this mask's surfel cells.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::edt::squared_edt;
use super::mc_table::TRIANGLES;
use super::BinaryMask;

/// Offsets of the eight cube corners, in marching-cubes corner order.
pub const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

/// Corner pairs joined by each of the twelve cube edges.
const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [2, 3],
    [3, 0],
    [4, 5],
    [5, 6],
    [6, 7],
    [7, 4],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

/// Surface area (mm^2) contributed by a dual cell, indexed by occupancy code.
/// Bit `k` of the code is set when the voxel at corner `CORNERS[k]` of the
/// cell is inside the mask.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfelAreaTable {
    areas: [f64; 256],
}

impl SurfelAreaTable {
    /// Builds the table by triangulating every code with edge-midpoint
    /// vertices in a cell of size `spacing`.
    pub fn new(spacing: [f64; 3]) -> Self {
        let midpoint = |e: usize| -> [f64; 3] {
            let [a, b] = EDGES[e];
            std::array::from_fn(|k| 0.5 * (CORNERS[a][k] + CORNERS[b][k]) as f64 * spacing[k])
        };
        let mut areas = [0.0; 256];
        for (code, area) in areas.iter_mut().enumerate() {
            let tris = &TRIANGLES[code];
            let mut total = 0.0;
            for t in tris.chunks_exact(3) {
                if t[0] < 0 {
                    break;
                }
                let p0 = midpoint(t[0] as usize);
                let p1 = midpoint(t[1] as usize);
                let p2 = midpoint(t[2] as usize);
                let u = [p1[0] - p0[0], p1[1] - p0[1], p1[2] - p0[2]];
                let v = [p2[0] - p0[0], p2[1] - p0[1], p2[2] - p0[2]];
                let n = [
                    u[1] * v[2] - u[2] * v[1],
                    u[2] * v[0] - u[0] * v[2],
                    u[0] * v[1] - u[1] * v[0],
                ];
                total += 0.5 * (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
            }
            *area = total;
        }
        SurfelAreaTable { areas }
    }

    #[inline]
    pub fn area(&self, code: u8) -> f64 {
        self.areas[code as usize]
    }

    pub fn as_slice(&self) -> &[f64; 256] {
        &self.areas
    }
}

/// Surfels of one mask on a (possibly cropped) dual grid.
struct Surfels {
    /// Linear dual-cell index of each surfel.
    cells: Vec<usize>,
    areas: Vec<f64>,
    /// Per dual cell: is it a surfel.
    border: Vec<bool>,
}

/// Area-weighted directed surface distances between two masks, each
/// direction sorted by ascending distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceDistances {
    pub areas_ref: Vec<f64>,
    pub areas_pred: Vec<f64>,
    pub dist_ref_to_pred: Vec<f64>,
    pub dist_pred_to_ref: Vec<f64>,
}

fn union_bbox(a: &BinaryMask, b: &BinaryMask) -> Option<([usize; 3], [usize; 3])> {
    let grid = a.grid();
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    let mut any = false;
    for (i, (&x, &y)) in a.bits().iter().zip(b.bits()).enumerate() {
        if x || y {
            any = true;
            let c = grid.coords(i);
            for k in 0..3 {
                lo[k] = lo[k].min(c[k]);
                hi[k] = hi[k].max(c[k]);
            }
        }
    }
    any.then_some((lo, hi))
}

fn extract(
    mask: &BinaryMask,
    lo: [usize; 3],
    hi: [usize; 3],
    cdims: [usize; 3],
    table: &SurfelAreaTable,
) -> Surfels {
    let grid = mask.grid();
    let bits = mask.bits();
    let inside = |v: [isize; 3]| -> bool {
        (0..3).all(|k| v[k] >= lo[k] as isize && v[k] <= hi[k] as isize)
            && bits[grid.index(v[0] as usize, v[1] as usize, v[2] as usize)]
    };
    let n = cdims[0] * cdims[1] * cdims[2];
    let mut border = vec![false; n];
    let mut cells = Vec::new();
    let mut areas = Vec::new();
    for cz in 0..cdims[2] {
        for cy in 0..cdims[1] {
            for cx in 0..cdims[0] {
                let base = [
                    lo[0] as isize + cx as isize - 1,
                    lo[1] as isize + cy as isize - 1,
                    lo[2] as isize + cz as isize - 1,
                ];
                let mut code = 0u8;
                for (k, off) in CORNERS.iter().enumerate() {
                    let v = [
                        base[0] + off[0] as isize,
                        base[1] + off[1] as isize,
                        base[2] + off[2] as isize,
                    ];
                    if inside(v) {
                        code |= 1 << k;
                    }
                }
                if code != 0 && code != 255 {
                    let idx = cx + cdims[0] * (cy + cdims[1] * cz);
                    border[idx] = true;
                    cells.push(idx);
                    areas.push(table.area(code));
                }
            }
        }
    }
    Surfels {
        cells,
        areas,
        border,
    }
}

fn sorted_by_distance(areas: Vec<f64>, dists: Vec<f64>) -> (Vec<f64>, Vec<f64>) {
    let mut pairs: Vec<(f64, f64)> = dists.into_iter().zip(areas).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().map(|(d, a)| (a, d)).unzip()
}

/// Computes surfels of both masks and the directed distances between them.
/// Fails with [`Error::BothEmpty`] when neither mask has a voxel set.
pub fn surface_distances(reference: &BinaryMask, pred: &BinaryMask) -> Result<SurfaceDistances> {
    reference.grid().ensure_matches(pred.grid())?;
    let (lo, hi) = union_bbox(reference, pred).ok_or(Error::BothEmpty)?;
    let spacing = reference.grid().spacing;
    let table = SurfelAreaTable::new(spacing);
    let cdims = [hi[0] - lo[0] + 2, hi[1] - lo[1] + 2, hi[2] - lo[2] + 2];

    let r = extract(reference, lo, hi, cdims, &table);
    let p = extract(pred, lo, hi, cdims, &table);

    let directed = |from: &Surfels, to: &Surfels| -> Vec<f64> {
        if from.cells.is_empty() {
            return Vec::new();
        }
        let d2 = squared_edt(cdims, spacing, &to.border);
        from.cells.iter().map(|&c| d2[c].sqrt()).collect()
    };
    let d_rp = directed(&r, &p);
    let d_pr = directed(&p, &r);

    let (areas_ref, dist_ref_to_pred) = sorted_by_distance(r.areas, d_rp);
    let (areas_pred, dist_pred_to_ref) = sorted_by_distance(p.areas, d_pr);
    Ok(SurfaceDistances {
        areas_ref,
        areas_pred,
        dist_ref_to_pred,
        dist_pred_to_ref,
    })
}

impl SurfaceDistances {
    fn check_both(&self) -> Result<()> {
        if self.areas_ref.is_empty() {
            return Err(Error::EmptySurface("reference"));
        }
        if self.areas_pred.is_empty() {
            return Err(Error::EmptySurface("prediction"));
        }
        Ok(())
    }

    /// Largest directed distance in either direction.
    pub fn hausdorff(&self) -> Result<f64> {
        self.check_both()?;
        let a = *self.dist_ref_to_pred.last().unwrap();
        let b = *self.dist_pred_to_ref.last().unwrap();
        Ok(a.max(b))
    }
}

/// Fraction of total surface area lying within `tolerance_mm` of the other surface.
pub fn surface_dice(sd: &SurfaceDistances, tolerance_mm: f64) -> Result<f64> {
    if !(tolerance_mm >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "tolerance must be >= 0, got {tolerance_mm}"
        )));
    }
    sd.check_both()?;
    let within = |areas: &[f64], dists: &[f64]| -> f64 {
        areas
            .iter()
            .zip(dists)
            .filter(|(_, &d)| d <= tolerance_mm)
            .map(|(a, _)| a)
            .sum::<f64>()
    };
    let overlap = within(&sd.areas_ref, &sd.dist_ref_to_pred)
        + within(&sd.areas_pred, &sd.dist_pred_to_ref);
    let total = sd.areas_ref.iter().sum::<f64>() + sd.areas_pred.iter().sum::<f64>();
    Ok(overlap / total)
}

fn weighted_mean(areas: &[f64], dists: &[f64]) -> f64 {
    let num: f64 = areas.iter().zip(dists).map(|(a, d)| a * d).sum();
    num / areas.iter().sum::<f64>()
}

/// Mean of the two area-weighted directed average distances.
pub fn masd(sd: &SurfaceDistances) -> Result<f64> {
    sd.check_both()?;
    Ok(0.5 * weighted_mean(&sd.areas_ref, &sd.dist_ref_to_pred)
        + 0.5 * weighted_mean(&sd.areas_pred, &sd.dist_pred_to_ref))
}

/// Smallest distance whose cumulative area fraction reaches `fraction`;
/// inputs must be sorted by ascending distance.
pub fn directed_percentile(areas: &[f64], dists: &[f64], fraction: f64) -> f64 {
    let total: f64 = areas.iter().sum();
    let mut cum = 0.0;
    for (i, a) in areas.iter().enumerate() {
        cum += a;
        if cum / total >= fraction {
            return dists[i];
        }
    }
    *dists.last().unwrap_or(&f64::INFINITY)
}

/// Robust Hausdorff distance at the given percentile (e.g. 95.0).
pub fn robust_hausdorff(sd: &SurfaceDistances, percent: f64) -> Result<f64> {
    sd.check_both()?;
    let q = percent / 100.0;
    Ok(directed_percentile(&sd.areas_ref, &sd.dist_ref_to_pred, q)
        .max(directed_percentile(&sd.areas_pred, &sd.dist_pred_to_ref, q)))
}

pub fn hd95(sd: &SurfaceDistances) -> Result<f64> {
    robust_hausdorff(sd, 95.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Grid;

    fn cube_mask(dims: [usize; 3], spacing: [f64; 3], lo: [usize; 3], hi: [usize; 3]) -> BinaryMask {
        let g = Grid::new(dims, spacing).unwrap();
        let bits = (0..g.len())
            .map(|i| {
                let c = g.coords(i);
                (0..3).all(|k| c[k] >= lo[k] && c[k] <= hi[k])
            })
            .collect();
        BinaryMask::new(g, bits).unwrap()
    }

    #[test]
    fn isotropic_area_constants() {
        let t = SurfelAreaTable::new([1.0; 3]);
        assert_eq!(t.area(0), 0.0);
        assert_eq!(t.area(255), 0.0);
        // single corner: equilateral triangle cutting three edges at their midpoints
        assert!((t.area(1) - 0.21650635094610965).abs() < 1e-15);
        // two corners sharing an edge: a rectangle 1 x sqrt(2)/2
        assert!((t.area(0b0000_0011) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        // a full face of four corners: unit square
        assert!((t.area(0b0000_1111) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn area_table_positive_and_corner_symmetric() {
        let t = SurfelAreaTable::new([0.7, 1.3, 2.1]);
        for c in 1..255u8 {
            assert!(t.area(c) > 0.0, "code {c}");
        }
        // single corners and single edges are unambiguous, so the complement
        // triangulates the same surface
        for k in 0..8 {
            let c = 1u8 << k;
            assert!((t.area(c) - t.area(!c)).abs() < 1e-12, "corner {k}");
        }
        for [a, b] in EDGES {
            let c = (1u8 << a) | (1u8 << b);
            assert!((t.area(c) - t.area(!c)).abs() < 1e-12, "edge {a}-{b}");
        }
    }

    #[test]
    fn triangle_edges_belong_to_code() {
        // every triangle vertex lies on an edge whose endpoints disagree
        for code in 0..256usize {
            for &e in TRIANGLES[code].iter().take_while(|&&e| e >= 0) {
                let [a, b] = EDGES[e as usize];
                assert_ne!((code >> a) & 1, (code >> b) & 1, "code {code} edge {e}");
            }
        }
    }

    #[test]
    fn anisotropic_area_face() {
        // a face perpendicular to axis 2 has area sx * sy
        let t = SurfelAreaTable::new([2.0, 3.0, 5.0]);
        assert!((t.area(0b0000_1111) - 6.0).abs() < 1e-12);
    }

    #[test]
    fn identical_masks_zero_distance() {
        let m = cube_mask([8, 8, 8], [1.0, 1.5, 0.5], [2, 2, 2], [5, 4, 6]);
        let sd = surface_distances(&m, &m).unwrap();
        assert!(sd.dist_ref_to_pred.iter().all(|&d| d == 0.0));
        assert_eq!(surface_dice(&sd, 0.0).unwrap(), 1.0);
        assert_eq!(masd(&sd).unwrap(), 0.0);
        assert_eq!(hd95(&sd).unwrap(), 0.0);
    }

    /// Directed distances by brute force over the full dual grid.
    fn brute_directed(from: &BinaryMask, to: &BinaryMask) -> Vec<f64> {
        let g = from.grid();
        let cells = |m: &BinaryMask| -> Vec<[f64; 3]> {
            let mut out = Vec::new();
            for cz in 0..=g.dims[2] {
                for cy in 0..=g.dims[1] {
                    for cx in 0..=g.dims[0] {
                        let mut on = 0;
                        for off in CORNERS {
                            let v = [cx + off[0], cy + off[1], cz + off[2]];
                            if (0..3).all(|k| v[k] >= 1 && v[k] <= g.dims[k])
                                && m.bits()[g.index(v[0] - 1, v[1] - 1, v[2] - 1)]
                            {
                                on += 1;
                            }
                        }
                        if on != 0 && on != 8 {
                            out.push([cx as f64, cy as f64, cz as f64]);
                        }
                    }
                }
            }
            out
        };
        let (a, b) = (cells(from), cells(to));
        let s = g.spacing;
        let mut d: Vec<f64> = a
            .iter()
            .map(|p| {
                b.iter()
                    .map(|q| {
                        let dx = (p[0] - q[0]) * s[0];
                        let dy = (p[1] - q[1]) * s[1];
                        let dz = (p[2] - q[2]) * s[2];
                        (dx * dx + dy * dy + dz * dz).sqrt()
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        d.sort_by(f64::total_cmp);
        d
    }

    #[test]
    fn single_voxels_apart() {
        let a = cube_mask([20, 3, 3], [1.0; 3], [2, 1, 1], [2, 1, 1]);
        let b = cube_mask([20, 3, 3], [1.0; 3], [12, 1, 1], [12, 1, 1]);
        let sd = surface_distances(&a, &b).unwrap();
        assert_eq!(sd.areas_ref.len(), 8);
        assert!(sd.dist_ref_to_pred.iter().all(|&d| (9.0..=10.0).contains(&d)));
        assert_eq!(sd.dist_ref_to_pred, brute_directed(&a, &b));
        assert_eq!(sd.dist_pred_to_ref, brute_directed(&b, &a));
        // near and far surfel layers sit d - 1 and d apart
        assert_eq!(masd(&sd).unwrap(), 9.5);
        assert_eq!(hd95(&sd).unwrap(), 10.0);

        let c = cube_mask([20, 3, 3], [1.0; 3], [5, 1, 1], [5, 1, 1]);
        let sd = surface_distances(&a, &c).unwrap();
        assert_eq!(surface_dice(&sd, 5.0).unwrap(), 1.0);
        assert!((surface_dice(&sd, 2.0).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(surface_dice(&sd, 1.9).unwrap(), 0.0);
        assert_eq!(hd95(&sd).unwrap(), 3.0);
    }

    #[test]
    fn shifted_cube_matches_brute_force() {
        let a = cube_mask([9, 9, 9], [1.0; 3], [2, 2, 2], [5, 5, 5]);
        let b = cube_mask([9, 9, 9], [1.0; 3], [3, 2, 2], [6, 5, 5]);
        let sd = surface_distances(&a, &b).unwrap();
        assert_eq!(sd.dist_ref_to_pred, brute_directed(&a, &b));
        assert_eq!(sd.dist_pred_to_ref, brute_directed(&b, &a));
    }

    #[test]
    fn percentile_rule_by_hand() {
        let areas = [0.96, 0.04];
        let dists = [1.0, 9.0];
        assert_eq!(directed_percentile(&areas, &dists, 0.95), 1.0);
        let areas = [0.94, 0.06];
        assert_eq!(directed_percentile(&areas, &dists, 0.95), 9.0);
    }

    #[test]
    fn empty_cases() {
        let g = Grid::new([4, 4, 4], [1.0; 3]).unwrap();
        let e = BinaryMask::new(g, vec![false; 64]).unwrap();
        assert!(matches!(surface_distances(&e, &e), Err(Error::BothEmpty)));
        let m = cube_mask([4, 4, 4], [1.0; 3], [1, 1, 1], [2, 2, 2]);
        let sd = surface_distances(&m, &e).unwrap();
        assert!(sd.areas_pred.is_empty());
        assert!(sd.dist_ref_to_pred.iter().all(|d| d.is_infinite()));
        assert!(matches!(masd(&sd), Err(Error::EmptySurface("prediction"))));
        assert!(matches!(hd95(&sd), Err(Error::EmptySurface(_))));
    }

    #[test]
    fn dilated_cube_bounded_by_sqrt3() {
        let a = cube_mask([10, 10, 10], [1.0; 3], [3, 3, 3], [5, 5, 5]);
        let b = cube_mask([10, 10, 10], [1.0; 3], [2, 2, 2], [6, 6, 6]);
        let sd = surface_distances(&a, &b).unwrap();
        assert!(sd.hausdorff().unwrap() <= 3f64.sqrt() + 1e-12);
    }
}
