//! Brute-force oracles and random generators shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use segkit::metrics::{BinaryMask, SurfelAreaTable, CORNERS};
use segkit::{Grid, ImageVolume, LabelVolume, Volume};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_spacing(r: &mut impl Rng) -> [f64; 3] {
    std::array::from_fn(|_| r.random_range(0.3..3.0))
}

pub fn random_dims(r: &mut impl Rng, max: usize) -> [usize; 3] {
    std::array::from_fn(|_| r.random_range(1..=max))
}

/// Union of a few random ellipsoids, optionally sprinkled with noise voxels.
pub fn random_blob(r: &mut impl Rng, dims: [usize; 3]) -> Vec<bool> {
    let n = dims[0] * dims[1] * dims[2];
    let mut bits = vec![false; n];
    let blobs = r.random_range(1..=3);
    for _ in 0..blobs {
        let c: [f64; 3] = std::array::from_fn(|k| r.random_range(0.0..dims[k] as f64));
        let rad: [f64; 3] = std::array::from_fn(|k| r.random_range(0.5..(dims[k] as f64 / 2.0).max(1.0)));
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    let p = [x as f64, y as f64, z as f64];
                    let q: f64 = (0..3).map(|k| ((p[k] - c[k]) / rad[k]).powi(2)).sum();
                    if q <= 1.0 {
                        bits[x + dims[0] * (y + dims[1] * z)] = true;
                    }
                }
            }
        }
    }
    if r.random_bool(0.3) {
        let flips = r.random_range(1..=(n / 10).max(1));
        for _ in 0..flips {
            let i = r.random_range(0..n);
            bits[i] = !bits[i];
        }
    }
    bits
}

pub fn nonempty_blob(r: &mut impl Rng, dims: [usize; 3]) -> Vec<bool> {
    loop {
        let b = random_blob(r, dims);
        if b.iter().any(|&x| x) {
            return b;
        }
    }
}

pub fn mask(grid: Grid, bits: Vec<bool>) -> BinaryMask {
    BinaryMask::new(grid, bits).unwrap()
}

pub fn labels_from_bits(grid: Grid, bits: &[bool], id: u16) -> LabelVolume {
    Volume::from_vec(grid, bits.iter().map(|&b| if b { id } else { 0 }).collect()).unwrap()
}

pub fn random_labels(r: &mut impl Rng, grid: Grid, ids: &[u16]) -> LabelVolume {
    let data = (0..grid.len()).map(|_| ids[r.random_range(0..ids.len())]).collect();
    Volume::from_vec(grid, data).unwrap()
}

pub fn random_image(r: &mut impl Rng, grid: Grid) -> ImageVolume {
    let data = (0..grid.len()).map(|_| r.random_range(-100.0..100.0)).collect();
    Volume::from_vec(grid, data).unwrap()
}

fn sq_dist(a: [usize; 3], b: [usize; 3], s: [f64; 3]) -> f64 {
    let d = |k: usize| (a[k] as f64 - b[k] as f64) * s[k];
    let (dx, dy, dz) = (d(0), d(1), d(2));
    (dx * dx + dy * dy) + dz * dz
}

/// Nearest-true-voxel distance by exhaustive search.
pub fn brute_edt(dims: [usize; 3], spacing: [f64; 3], bits: &[bool]) -> Vec<f64> {
    let coords = |i: usize| [i % dims[0], (i / dims[0]) % dims[1], i / (dims[0] * dims[1])];
    let features: Vec<[usize; 3]> = (0..bits.len()).filter(|&i| bits[i]).map(coords).collect();
    (0..bits.len())
        .map(|i| {
            let p = coords(i);
            features
                .iter()
                .map(|&f| sq_dist(p, f, spacing))
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect()
}

/// Surface elements of a mask on the full dual grid: cell `c` sits between
/// voxels `c - 1` and `c` along every axis.
pub struct OracleSurface {
    pub cells: Vec<[usize; 3]>,
    pub areas: Vec<f64>,
}

pub fn oracle_surface(dims: [usize; 3], spacing: [f64; 3], bits: &[bool]) -> OracleSurface {
    let table = SurfelAreaTable::new(spacing);
    let voxel = |v: [isize; 3]| -> bool {
        (0..3).all(|k| v[k] >= 0 && v[k] < dims[k] as isize)
            && bits[v[0] as usize + dims[0] * (v[1] as usize + dims[1] * v[2] as usize)]
    };
    let mut cells = Vec::new();
    let mut areas = Vec::new();
    for cz in 0..=dims[2] {
        for cy in 0..=dims[1] {
            for cx in 0..=dims[0] {
                let mut code = 0u8;
                for (k, off) in CORNERS.iter().enumerate() {
                    let v = [
                        cx as isize + off[0] as isize - 1,
                        cy as isize + off[1] as isize - 1,
                        cz as isize + off[2] as isize - 1,
                    ];
                    if voxel(v) {
                        code |= 1 << k;
                    }
                }
                if code != 0 && code != 255 {
                    cells.push([cx, cy, cz]);
                    areas.push(table.area(code));
                }
            }
        }
    }
    OracleSurface { cells, areas }
}

/// Distance from every surfel of `from` to the closest surfel of `to`, by
/// explicit pairwise comparison.
pub fn pairwise_directed(from: &OracleSurface, to: &OracleSurface, spacing: [f64; 3]) -> Vec<f64> {
    from.cells
        .iter()
        .map(|&a| {
            to.cells
                .iter()
                .map(|&b| sq_dist(a, b, spacing))
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect()
}

/// First distance at which the cumulative area fraction reaches `q`.
pub fn cumulative_percentile(areas: &[f64], dists: &[f64], q: f64) -> f64 {
    let mut order: Vec<usize> = (0..dists.len()).collect();
    order.sort_by(|&i, &j| dists[i].total_cmp(&dists[j]));
    let total: f64 = order.iter().map(|&i| areas[i]).sum();
    let mut cum = 0.0;
    for &i in &order {
        cum += areas[i];
        if cum / total >= q {
            return dists[i];
        }
    }
    dists[*order.last().unwrap()]
}

#[derive(Debug, Clone, Copy)]
pub struct OracleMetrics {
    pub dice: f64,
    pub surface_dice: f64,
    pub masd: f64,
    pub hd95: f64,
    pub volume_ref: f64,
    pub volume_pred: f64,
}

/// Every metric for a pair of non-empty masks, from first principles.
pub fn oracle_metrics(dims: [usize; 3], spacing: [f64; 3], a: &[bool], b: &[bool], tol: f64) -> OracleMetrics {
    let na = a.iter().filter(|&&x| x).count();
    let nb = b.iter().filter(|&&x| x).count();
    let both = a.iter().zip(b).filter(|(&x, &y)| x && y).count();
    let voxel = spacing[0] * spacing[1] * spacing[2];

    let sa = oracle_surface(dims, spacing, a);
    let sb = oracle_surface(dims, spacing, b);
    let dab = pairwise_directed(&sa, &sb, spacing);
    let dba = pairwise_directed(&sb, &sa, spacing);

    let within = |areas: &[f64], d: &[f64]| -> f64 {
        areas.iter().zip(d).filter(|(_, &x)| x <= tol).map(|(a, _)| a).sum()
    };
    let total_a: f64 = sa.areas.iter().sum();
    let total_b: f64 = sb.areas.iter().sum();
    let mean = |areas: &[f64], d: &[f64], total: f64| -> f64 {
        areas.iter().zip(d).map(|(a, x)| a * x).sum::<f64>() / total
    };
    OracleMetrics {
        dice: 2.0 * both as f64 / (na + nb) as f64,
        surface_dice: (within(&sa.areas, &dab) + within(&sb.areas, &dba)) / (total_a + total_b),
        masd: 0.5 * mean(&sa.areas, &dab, total_a) + 0.5 * mean(&sb.areas, &dba, total_b),
        hd95: cumulative_percentile(&sa.areas, &dab, 0.95).max(cumulative_percentile(&sb.areas, &dba, 0.95)),
        volume_ref: na as f64 * voxel,
        volume_pred: nb as f64 * voxel,
    }
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

pub fn rel_close(a: f64, b: f64, rtol: f64) -> bool {
    (a - b).abs() <= rtol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// Prints the one-line verdict for an acceptance criterion, then fails the
/// test when it did not hold.
pub fn verdict(id: u32, name: &str, ok: bool, detail: &str) {
    println!("criterion {id} [{name}]: {} ({detail})", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {id} [{name}] failed: {detail}");
}
