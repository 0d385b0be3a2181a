//! Intensity transforms and simulated low resolution.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{fill_parallel, resample_image, ImageOrder, LabelOrder, ResamplePlan};
use crate::volume::{ImageVolume, Volume};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IntensityKind {
    /// Gaussian blur, sigma in mm.
    Blur { sigma_mm: f64 },
    /// Unsharp mask `img + lambda * (img - blur(img))`.
    Sharpen { lambda: f64, sigma_mm: f64 },
    Gamma { gamma: f64 },
    /// Additive zero-mean Gaussian noise.
    Noise { sigma: f64 },
}

impl IntensityKind {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| {
            Err(Error::InvalidParameter(format!("{what} out of range: {v}")))
        };
        match *self {
            IntensityKind::Blur { sigma_mm } if !(sigma_mm > 0.0 && sigma_mm.is_finite()) => {
                bad("blur sigma", sigma_mm)
            }
            IntensityKind::Sharpen { sigma_mm, .. } if !(sigma_mm > 0.0 && sigma_mm.is_finite()) => {
                bad("sharpen sigma", sigma_mm)
            }
            IntensityKind::Sharpen { lambda, .. } if !lambda.is_finite() => bad("sharpen lambda", lambda),
            IntensityKind::Gamma { gamma } if !(gamma > 0.0 && gamma.is_finite()) => bad("gamma", gamma),
            IntensityKind::Noise { sigma } if !(sigma >= 0.0 && sigma.is_finite()) => bad("noise sigma", sigma),
            _ => Ok(()),
        }
    }
}

/// Normalised Gaussian taps for `sigma` voxels, truncated at 4 sigma.
fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma).ceil() as usize;
    let w: Vec<f64> = (0..=2 * radius)
        .map(|k| {
            let d = k as f64 - radius as f64;
            libm::exp(-0.5 * d * d / (sigma * sigma))
        })
        .collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

fn convolve_axis(data: &[f64], dims: [usize; 3], axis: usize, kernel: &[f64]) -> Vec<f64> {
    let radius = (kernel.len() / 2) as isize;
    let n = dims[axis] as isize;
    let stride = [1, dims[0], dims[0] * dims[1]][axis];
    fill_parallel(dims, |x, y, z| {
        let i = x + dims[0] * (y + dims[1] * z);
        let pos = [x, y, z][axis] as isize;
        let base = i - pos as usize * stride;
        kernel
            .iter()
            .enumerate()
            .map(|(k, w)| {
                let j = (pos + k as isize - radius).clamp(0, n - 1) as usize;
                w * data[base + j * stride]
            })
            .sum()
    })
}

/// Separable Gaussian blur with edge clamping; `sigma_mm` is converted to
/// voxels per axis using the grid spacing.
pub fn gaussian_blur(img: &ImageVolume, sigma_mm: f64) -> Result<ImageVolume> {
    IntensityKind::Blur { sigma_mm }.validate()?;
    let dims = img.dims();
    let mut data = img.data().to_vec();
    for axis in 0..3 {
        let kernel = gaussian_kernel(sigma_mm / img.spacing()[axis]);
        if kernel.len() > 1 {
            data = convolve_axis(&data, dims, axis, &kernel);
        }
    }
    Volume::from_vec(*img.grid(), data)
}

/// Two standard normal draws by the Box-Muller transform.
fn normal_pair(rng: &mut impl Rng) -> (f64, f64) {
    // 1 - u lies in (0, 1], keeping the logarithm finite
    let u1 = 1.0 - rng.random::<f64>();
    let u2 = rng.random::<f64>();
    let r = libm::sqrt(-2.0 * libm::log(u1));
    let t = 2.0 * std::f64::consts::PI * u2;
    (r * libm::cos(t), r * libm::sin(t))
}

pub fn intensity_transform(img: &ImageVolume, kind: IntensityKind, seed: u64) -> Result<ImageVolume> {
    kind.validate()?;
    match kind {
        IntensityKind::Blur { sigma_mm } => gaussian_blur(img, sigma_mm),
        IntensityKind::Sharpen { lambda, sigma_mm } => {
            if lambda == 0.0 {
                return Ok(img.clone());
            }
            let blurred = gaussian_blur(img, sigma_mm)?;
            let data = img
                .data()
                .iter()
                .zip(blurred.data())
                .map(|(&x, &b)| x + lambda * (x - b))
                .collect();
            Volume::from_vec(*img.grid(), data)
        }
        IntensityKind::Gamma { gamma } => {
            let (lo, hi) = img.min_max();
            let range = hi - lo;
            if !(range > 0.0) {
                return Ok(img.clone());
            }
            Ok(img.map(|&x| libm::pow((x - lo) / range, gamma) * range + lo))
        }
        IntensityKind::Noise { sigma } => {
            if sigma == 0.0 {
                return Ok(img.clone());
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut data = img.data().to_vec();
            for pair in data.chunks_mut(2) {
                let (a, b) = normal_pair(&mut rng);
                pair[0] += sigma * a;
                if let Some(x) = pair.get_mut(1) {
                    *x += sigma * b;
                }
            }
            Volume::from_vec(*img.grid(), data)
        }
    }
}

/// Downsamples by `factor` with nearest-neighbour sampling and brings the
/// result back onto the input grid with tricubic interpolation.
pub fn simulate_low_res(img: &ImageVolume, factor: f64) -> Result<ImageVolume> {
    if !(factor >= 1.0 && factor.is_finite()) {
        return Err(Error::InvalidParameter(format!("low-res factor must be >= 1, got {factor}")));
    }
    if factor == 1.0 {
        return Ok(img.clone());
    }
    let grid = *img.grid();
    let low_dims: [usize; 3] =
        std::array::from_fn(|a| ((grid.dims[a] as f64 / factor).round() as usize).max(1));
    let low_spacing: [f64; 3] =
        std::array::from_fn(|a| grid.dims[a] as f64 * grid.spacing[a] / low_dims[a] as f64);
    let down = ResamplePlan {
        source_dims: grid.dims,
        source_spacing: grid.spacing,
        target_spacing: low_spacing,
        target_dims: low_dims,
        image_order: ImageOrder::Nearest,
        label_order: LabelOrder::Nearest,
        clamp_cubic: false,
    };
    let low = resample_image(img, &down)?;
    let up = ResamplePlan {
        source_dims: low_dims,
        source_spacing: low_spacing,
        target_spacing: grid.spacing,
        target_dims: grid.dims,
        image_order: ImageOrder::Cubic,
        label_order: LabelOrder::Nearest,
        clamp_cubic: false,
    };
    let back = resample_image(&low, &up)?;
    Volume::from_vec(grid, back.into_data())
}
