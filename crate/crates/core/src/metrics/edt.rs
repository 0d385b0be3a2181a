//! Exact anisotropic Euclidean distance transform.
//!
//! Separable lower-envelope-of-parabolas algorithm (Felzenszwalb and
//! Huttenlocher), one pass per axis in the order 0, 1, 2. Squared distances
//! accumulate as `((dx*sx)^2 + (dy*sy)^2) + (dz*sz)^2`.

use rayon::prelude::*;

use crate::volume::{Grid, Volume};

use super::BinaryMask;

/// One-dimensional squared distance transform of sampled function `f` with
/// sample spacing `w`. `f` may contain `+inf` for non-feature sites.
fn dt_1d(f: &[f64], w: f64, out: &mut [f64], v: &mut Vec<usize>, z: &mut Vec<f64>) {
    let n = f.len();
    v.clear();
    z.clear();
    let w2 = w * w;
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        let fq = f[q] + w2 * (q * q) as f64;
        loop {
            let Some(&top) = v.last() else {
                v.push(q);
                z.push(f64::NEG_INFINITY);
                break;
            };
            let ft = f[top] + w2 * (top * top) as f64;
            let s = (fq - ft) / (2.0 * w2 * (q - top) as f64);
            if s <= *z.last().unwrap() {
                v.pop();
                z.pop();
                continue;
            }
            v.push(q);
            z.push(s);
            break;
        }
    }
    if v.is_empty() {
        out.fill(f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while k + 1 < v.len() && z[k + 1] < q as f64 {
            k += 1;
        }
        let d = (q as f64 - v[k] as f64) * w;
        *o = f[v[k]] + d * d;
    }
}

/// Squared distance (mm^2) from every voxel center to the nearest feature
/// voxel center; `+inf` everywhere when there are no features.
pub fn squared_edt(dims: [usize; 3], spacing: [f64; 3], feature: &[bool]) -> Vec<f64> {
    let [nx, ny, nz] = dims;
    debug_assert_eq!(feature.len(), nx * ny * nz);
    let mut g: Vec<f64> = feature
        .iter()
        .map(|&b| if b { 0.0 } else { f64::INFINITY })
        .collect();
    if !feature.iter().any(|&b| b) {
        return g;
    }

    // axis 0: contiguous rows
    g.par_chunks_mut(nx).for_each_init(
        || (vec![0.0; nx], Vec::new(), Vec::new()),
        |(buf, v, z), row| {
            buf.copy_from_slice(row);
            dt_1d(buf, spacing[0], row, v, z);
        },
    );

    // axis 1: columns inside each z-slice
    g.par_chunks_mut(nx * ny).for_each_init(
        || (vec![0.0; ny], vec![0.0; ny], Vec::new(), Vec::new()),
        |(inp, out, v, z), slice| {
            for x in 0..nx {
                for y in 0..ny {
                    inp[y] = slice[x + nx * y];
                }
                dt_1d(inp, spacing[1], out, v, z);
                for y in 0..ny {
                    slice[x + nx * y] = out[y];
                }
            }
        },
    );

    // axis 2: compute each (x, y) pillar independently, then scatter
    if nz > 1 {
        let plane = nx * ny;
        let src = &g;
        let pillars: Vec<Vec<f64>> = (0..plane)
            .into_par_iter()
            .map_init(
                || (vec![0.0; nz], Vec::new(), Vec::new()),
                |(inp, v, z), p| {
                    for k in 0..nz {
                        inp[k] = src[p + plane * k];
                    }
                    let mut out = vec![0.0; nz];
                    dt_1d(inp, spacing[2], &mut out, v, z);
                    out
                },
            )
            .collect();
        for (p, pillar) in pillars.into_iter().enumerate() {
            for (k, val) in pillar.into_iter().enumerate() {
                g[p + plane * k] = val;
            }
        }
    }
    g
}

/// Euclidean distance (mm) from each voxel center to the nearest true voxel.
pub fn edt(mask: &BinaryMask) -> Volume<f64> {
    let grid: Grid = *mask.grid();
    let d = squared_edt(grid.dims, grid.spacing, mask.bits())
        .into_iter()
        .map(f64::sqrt)
        .collect();
    Volume::from_vec(grid, d).expect("length matches grid")
}
