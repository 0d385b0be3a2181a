//! Seeded training-time augmentation: spatial rotation and scaling with
//! per-preset interpolation orders, plus blur, sharpen, simulated low
//! resolution, gamma and noise.
//!
//! Each transform in a preset draws from its own ChaCha8 stream (stream id =
//! position in the transform list) seeded by the preset seed, so adding or
//! removing a transform never shifts the random draws of the others.
//! Transcendental functions come from `libm` so results do not depend on the
//! platform math library.

mod intensity;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use intensity::{gaussian_blur, intensity_transform, simulate_low_res, IntensityKind};

use crate::error::{Error, Result};
use crate::geometry::{fill_parallel, sample_image, sample_label, ImageOrder, LabelOrder};
use crate::volume::{ImageVolume, LabelVolume, Volume};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PresetName {
    Da5,
    Da5ord0,
    Da5segord0,
    Default,
}

impl PresetName {
    /// Image and label interpolation orders fixed by the preset name.
    pub fn orders(self) -> (ImageOrder, LabelOrder) {
        match self {
            PresetName::Da5 | PresetName::Default => (ImageOrder::Cubic, LabelOrder::Linear),
            PresetName::Da5ord0 => (ImageOrder::Nearest, LabelOrder::Nearest),
            PresetName::Da5segord0 => (ImageOrder::Cubic, LabelOrder::Nearest),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "da5" => Ok(PresetName::Da5),
            "da5ord0" => Ok(PresetName::Da5ord0),
            "da5segord0" => Ok(PresetName::Da5segord0),
            "default" => Ok(PresetName::Default),
            other => Err(Error::InvalidParameter(format!(
                "unknown preset `{other}` (expected da5, da5ord0, da5segord0 or default)"
            ))),
        }
    }
}

/// Closed interval `[lo, hi]` a parameter is drawn from uniformly.
pub type Range = [f64; 2];

fn draw(rng: &mut impl Rng, r: Range) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        r[0] + (r[1] - r[0]) * rng.random::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TransformSpec {
    Spatial {
        probability: f64,
        /// Per-axis rotation angle range in degrees.
        rotation_deg: Range,
        scale: Range,
        /// Draw one scale per axis instead of a single isotropic factor.
        #[serde(default)]
        independent_scale: bool,
    },
    Blur {
        probability: f64,
        sigma_mm: Range,
    },
    Sharpen {
        probability: f64,
        lambda: Range,
        sigma_mm: Range,
    },
    LowRes {
        probability: f64,
        factor: Range,
    },
    Gamma {
        probability: f64,
        gamma: Range,
    },
    Noise {
        probability: f64,
        sigma: Range,
    },
}

impl TransformSpec {
    pub fn probability(&self) -> f64 {
        match *self {
            TransformSpec::Spatial { probability, .. }
            | TransformSpec::Blur { probability, .. }
            | TransformSpec::Sharpen { probability, .. }
            | TransformSpec::LowRes { probability, .. }
            | TransformSpec::Gamma { probability, .. }
            | TransformSpec::Noise { probability, .. } => probability,
        }
    }

    pub fn set_probability(&mut self, p: f64) {
        match self {
            TransformSpec::Spatial { probability, .. }
            | TransformSpec::Blur { probability, .. }
            | TransformSpec::Sharpen { probability, .. }
            | TransformSpec::LowRes { probability, .. }
            | TransformSpec::Gamma { probability, .. }
            | TransformSpec::Noise { probability, .. } => *probability = p,
        }
    }

    fn ranges(&self) -> Vec<(&'static str, Range, f64, bool)> {
        // (name, range, lower bound, bound is exclusive)
        match *self {
            TransformSpec::Spatial { rotation_deg, scale, .. } => vec![
                ("rotation_deg", rotation_deg, f64::NEG_INFINITY, false),
                ("scale", scale, 0.0, true),
            ],
            TransformSpec::Blur { sigma_mm, .. } => vec![("sigma_mm", sigma_mm, 0.0, true)],
            TransformSpec::Sharpen { lambda, sigma_mm, .. } => vec![
                ("lambda", lambda, f64::NEG_INFINITY, false),
                ("sigma_mm", sigma_mm, 0.0, true),
            ],
            TransformSpec::LowRes { factor, .. } => vec![("factor", factor, 1.0, false)],
            TransformSpec::Gamma { gamma, .. } => vec![("gamma", gamma, 0.0, true)],
            TransformSpec::Noise { sigma, .. } => vec![("sigma", sigma, 0.0, false)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.probability();
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidParameter(format!("probability {p} outside [0, 1]")));
        }
        for (name, [lo, hi], min, exclusive) in self.ranges() {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::InvalidParameter(format!(
                    "{name} range [{lo}, {hi}] is not ordered"
                )));
            }
            if lo < min || (exclusive && lo == min) {
                return Err(Error::InvalidParameter(format!(
                    "{name} range [{lo}, {hi}] goes below {min}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentPreset {
    pub name: PresetName,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub transforms: Vec<TransformSpec>,
}

impl AugmentPreset {
    /// Built-in transform list for a preset name. The ranges and firing
    /// probabilities are defaults, not values taken from any trainer.
    pub fn builtin(name: PresetName, seed: u64) -> Self {
        let heavy = name != PresetName::Default;
        let p = |light: f64, da5: f64| if heavy { da5 } else { light };
        let transforms = vec![
            TransformSpec::Spatial {
                probability: p(0.2, 0.4),
                rotation_deg: [-30.0, 30.0],
                scale: [0.7, 1.4],
                independent_scale: false,
            },
            TransformSpec::Blur {
                probability: p(0.2, 0.3),
                sigma_mm: [0.5, 1.5],
            },
            TransformSpec::Sharpen {
                probability: p(0.0, 0.3),
                lambda: [0.5, 2.0],
                sigma_mm: [0.5, 1.5],
            },
            TransformSpec::LowRes {
                probability: p(0.25, 0.35),
                factor: [1.0, 2.0],
            },
            TransformSpec::Gamma {
                probability: p(0.3, 0.4),
                gamma: [0.7, 1.5],
            },
            TransformSpec::Noise {
                probability: p(0.1, 0.2),
                sigma: [0.0, 0.1],
            },
        ];
        AugmentPreset { name, seed, transforms }
    }

    pub fn orders(&self) -> (ImageOrder, LabelOrder) {
        self.name.orders()
    }

    pub fn validate(&self) -> Result<()> {
        self.transforms.iter().try_for_each(TransformSpec::validate)
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let p: AugmentPreset =
            toml::from_str(s).map_err(|e| Error::Config(format!("augment preset: {e}")))?;
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("preset serializes")
    }
}

/// Rotation (radians, about axes 0, 1, 2) and per-axis scale of one spatial draw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialParams {
    pub rotation: [f64; 3],
    pub scale: [f64; 3],
}

impl SpatialParams {
    pub fn identity() -> Self {
        SpatialParams {
            rotation: [0.0; 3],
            scale: [1.0; 3],
        }
    }
}

type Mat3 = [[f64; 3]; 3];

fn matmul(a: &Mat3, b: &Mat3) -> Mat3 {
    std::array::from_fn(|i| std::array::from_fn(|j| (0..3).map(|k| a[i][k] * b[k][j]).sum()))
}

/// `Rz * Ry * Rx * diag(scale)` with entries within 1e-12 of an integer snapped
/// to it, so quarter turns are exact permutations.
fn linear_map(p: &SpatialParams) -> Mat3 {
    let [ax, ay, az] = p.rotation;
    let (sx, cx) = (libm::sin(ax), libm::cos(ax));
    let (sy, cy) = (libm::sin(ay), libm::cos(ay));
    let (sz, cz) = (libm::sin(az), libm::cos(az));
    let rx = [[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]];
    let ry = [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]];
    let rz = [[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]];
    let scale = [
        [p.scale[0], 0.0, 0.0],
        [0.0, p.scale[1], 0.0],
        [0.0, 0.0, p.scale[2]],
    ];
    let mut m = matmul(&matmul(&matmul(&rz, &ry), &rx), &scale);
    for v in m.iter_mut().flatten() {
        if (*v - v.round()).abs() < 1e-12 {
            *v = v.round();
        }
    }
    m
}

/// Resamples image and labels through the same rotation and scaling about
/// the volume centre. For each output voxel at physical offset `d` from the
/// centre the source is read at `R * S * d`, so scales above 1 shrink the
/// content. The output grid equals the input grid.
pub fn spatial_transform(
    img: &ImageVolume,
    lab: &LabelVolume,
    params: &SpatialParams,
    preset: &AugmentPreset,
) -> Result<(ImageVolume, LabelVolume)> {
    let (image_order, label_order) = preset.orders();
    spatial_transform_with_orders(img, lab, params, image_order, label_order)
}

/// [`spatial_transform`] with explicit interpolation orders.
pub fn spatial_transform_with_orders(
    img: &ImageVolume,
    lab: &LabelVolume,
    params: &SpatialParams,
    image_order: ImageOrder,
    label_order: LabelOrder,
) -> Result<(ImageVolume, LabelVolume)> {
    img.grid().ensure_matches(lab.grid())?;
    if img.dims() != lab.dims() {
        return Err(Error::GridMismatch("image and label dims differ".into()));
    }
    if let Some(s) = params.scale.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
        return Err(Error::InvalidParameter(format!("scale must be > 0, got {s}")));
    }
    if params.rotation.iter().any(|r| !r.is_finite()) {
        return Err(Error::InvalidParameter("rotation must be finite".into()));
    }
    let m = linear_map(params);
    let dims = img.dims();
    let spacing = img.spacing();
    let center: [f64; 3] = std::array::from_fn(|a| (dims[a] as f64 - 1.0) * 0.5);
    // the physical map expressed in voxel units of each axis
    let a: Mat3 = std::array::from_fn(|i| std::array::from_fn(|j| m[i][j] * (spacing[j] / spacing[i])));
    let source = |x: usize, y: usize, z: usize| -> [f64; 3] {
        let d = [x as f64 - center[0], y as f64 - center[1], z as f64 - center[2]];
        std::array::from_fn(|i| a[i][0] * d[0] + a[i][1] * d[1] + a[i][2] * d[2] + center[i])
    };
    let idata = img.data();
    let ldata = lab.data();
    let out_img = fill_parallel(dims, |x, y, z| sample_image(idata, dims, source(x, y, z), image_order));
    let out_lab = fill_parallel(dims, |x, y, z| sample_label(ldata, dims, source(x, y, z), label_order));
    Ok((
        Volume::from_vec(*img.grid(), out_img)?,
        Volume::from_vec(*lab.grid(), out_lab)?,
    ))
}

/// Generator for the transform at `index` in a preset seeded with `seed`.
pub fn transform_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// What a pipeline run actually applied, in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AppliedTransform {
    Spatial(SpatialParams),
    Intensity(IntensityKind),
    LowRes { factor: f64 },
}

/// Runs the preset's transforms in order, each firing with its probability.
/// Labels are only touched by spatial transforms.
pub fn apply_pipeline(
    img: &ImageVolume,
    lab: &LabelVolume,
    preset: &AugmentPreset,
) -> Result<(ImageVolume, LabelVolume, Vec<AppliedTransform>)> {
    preset.validate()?;
    img.grid().ensure_matches(lab.grid())?;
    let mut img = img.clone();
    let mut lab = lab.clone();
    let mut applied = Vec::new();
    for (index, t) in preset.transforms.iter().enumerate() {
        let mut rng = transform_rng(preset.seed, index);
        if rng.random::<f64>() >= t.probability() {
            continue;
        }
        let step = match *t {
            TransformSpec::Spatial {
                rotation_deg,
                scale,
                independent_scale,
                ..
            } => {
                let rotation = std::array::from_fn(|_| draw(&mut rng, rotation_deg).to_radians());
                let first = draw(&mut rng, scale);
                let scale = if independent_scale {
                    [first, draw(&mut rng, scale), draw(&mut rng, scale)]
                } else {
                    [first; 3]
                };
                let p = SpatialParams { rotation, scale };
                (img, lab) = spatial_transform(&img, &lab, &p, preset)?;
                AppliedTransform::Spatial(p)
            }
            TransformSpec::LowRes { factor, .. } => {
                let factor = draw(&mut rng, factor);
                img = simulate_low_res(&img, factor)?;
                AppliedTransform::LowRes { factor }
            }
            TransformSpec::Blur { sigma_mm, .. } => {
                let kind = IntensityKind::Blur {
                    sigma_mm: draw(&mut rng, sigma_mm),
                };
                img = intensity_transform(&img, kind, 0)?;
                AppliedTransform::Intensity(kind)
            }
            TransformSpec::Sharpen { lambda, sigma_mm, .. } => {
                let kind = IntensityKind::Sharpen {
                    lambda: draw(&mut rng, lambda),
                    sigma_mm: draw(&mut rng, sigma_mm),
                };
                img = intensity_transform(&img, kind, 0)?;
                AppliedTransform::Intensity(kind)
            }
            TransformSpec::Gamma { gamma, .. } => {
                let kind = IntensityKind::Gamma {
                    gamma: draw(&mut rng, gamma),
                };
                img = intensity_transform(&img, kind, 0)?;
                AppliedTransform::Intensity(kind)
            }
            TransformSpec::Noise { sigma, .. } => {
                let kind = IntensityKind::Noise {
                    sigma: draw(&mut rng, sigma),
                };
                let noise_seed = rng.random::<u64>();
                img = intensity_transform(&img, kind, noise_seed)?;
                AppliedTransform::Intensity(kind)
            }
        };
        applied.push(step);
    }
    Ok((img, lab, applied))
}
