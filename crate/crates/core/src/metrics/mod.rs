//! Challenge metrics: tumor Dice, surface Dice at a tolerance, MASD, HD95,
//! and tumor volume (aggregated into a cohort RMSE by [`aggregate_cohort`]).

mod edt;
mod mc_table;
pub(crate) mod report;
mod surface;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Grid, LabelVolume};

pub use edt::{edt, squared_edt};
pub use report::{aggregate_cohort, sig9, Aggregate, CohortReport};
pub use surface::{
    directed_percentile, hd95, masd, robust_hausdorff, surface_dice, surface_distances,
    SurfaceDistances, SurfelAreaTable, CORNERS,
};

#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    grid: Grid,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(grid: Grid, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != grid.len() {
            return Err(Error::Dimensionality(format!(
                "mask has {} bits for {} voxels",
                bits.len(),
                grid.len()
            )));
        }
        Ok(BinaryMask { grid, bits })
    }

    pub fn from_labels(labels: &LabelVolume, label_id: u16) -> Self {
        BinaryMask {
            grid: *labels.grid(),
            bits: labels.data().iter().map(|&l| l == label_id).collect(),
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flag {
    BothEmpty,
    RefEmpty,
    PredEmpty,
    Penalized,
}

impl fmt::Display for Flag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Flag::BothEmpty => "both_empty",
            Flag::RefEmpty => "ref_empty",
            Flag::PredEmpty => "pred_empty",
            Flag::Penalized => "penalized",
        })
    }
}

/// Dice value plus the emptiness flag that produced it, if any.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiceResult {
    pub value: f64,
    pub flag: Option<Flag>,
}

/// `2|A ∩ B| / (|A| + |B|)`; both empty gives 1.0, one empty gives 0.0.
pub fn dice(reference: &BinaryMask, pred: &BinaryMask) -> Result<DiceResult> {
    reference.grid.ensure_matches(&pred.grid)?;
    let (mut a, mut b, mut both) = (0usize, 0usize, 0usize);
    for (&x, &y) in reference.bits.iter().zip(&pred.bits) {
        a += x as usize;
        b += y as usize;
        both += (x && y) as usize;
    }
    Ok(match (a, b) {
        (0, 0) => DiceResult {
            value: 1.0,
            flag: Some(Flag::BothEmpty),
        },
        (0, _) => DiceResult {
            value: 0.0,
            flag: Some(Flag::RefEmpty),
        },
        (_, 0) => DiceResult {
            value: 0.0,
            flag: Some(Flag::PredEmpty),
        },
        _ => DiceResult {
            value: 2.0 * both as f64 / (a + b) as f64,
            flag: None,
        },
    })
}

/// Foreground voxel count times voxel volume (mm^3).
pub fn tumor_volume(mask: &BinaryMask) -> f64 {
    mask.count() as f64 * mask.grid.voxel_volume()
}

/// What to do with surface metrics when exactly one mask is empty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmptyPolicy {
    /// Surface Dice 0, MASD and HD95 set to the grid's physical diagonal.
    #[default]
    Penalize,
    /// Leave the surface metrics undefined and drop them from cohort means.
    Exclude,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VolumeUnit {
    #[default]
    Mm3,
    Ml,
}

impl VolumeUnit {
    pub fn from_mm3(self, v: f64) -> f64 {
        match self {
            VolumeUnit::Mm3 => v,
            VolumeUnit::Ml => v / 1000.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub label_id: u16,
    pub tolerance_mm: f64,
    pub empty_policy: EmptyPolicy,
    pub volume_unit: VolumeUnit,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            label_id: 2,
            tolerance_mm: 5.0,
            empty_policy: EmptyPolicy::Penalize,
            volume_unit: VolumeUnit::Mm3,
        }
    }
}

/// Per-case metric record. Surface metrics are `None` only when the
/// `exclude` policy dropped them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseMetrics {
    pub case_id: String,
    #[serde(serialize_with = "report::ser_f64")]
    pub dice: f64,
    #[serde(serialize_with = "report::ser_opt_f64")]
    pub surface_dice: Option<f64>,
    #[serde(serialize_with = "report::ser_opt_f64")]
    pub masd_mm: Option<f64>,
    #[serde(serialize_with = "report::ser_opt_f64")]
    pub hd95_mm: Option<f64>,
    #[serde(serialize_with = "report::ser_f64")]
    pub volume_ref_mm3: f64,
    #[serde(serialize_with = "report::ser_f64")]
    pub volume_pred_mm3: f64,
    pub flags: Vec<Flag>,
}

impl CaseMetrics {
    pub fn has_flag(&self, f: Flag) -> bool {
        self.flags.contains(&f)
    }
}

/// Evaluates one case on label `config.label_id`; both volumes must share a grid.
pub fn evaluate_case(
    case_id: &str,
    reference: &LabelVolume,
    pred: &LabelVolume,
    config: &EvalConfig,
) -> Result<CaseMetrics> {
    if !(config.tolerance_mm >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "tolerance must be >= 0, got {}",
            config.tolerance_mm
        )));
    }
    reference.grid().ensure_matches(pred.grid())?;
    let r = BinaryMask::from_labels(reference, config.label_id);
    let p = BinaryMask::from_labels(pred, config.label_id);
    let d = dice(&r, &p)?;
    let mut flags: Vec<Flag> = d.flag.into_iter().collect();

    let (sdice, masd_v, hd_v) = match d.flag {
        None => {
            let sd = surface_distances(&r, &p)?;
            (
                Some(surface_dice(&sd, config.tolerance_mm)?),
                Some(masd(&sd)?),
                Some(hd95(&sd)?),
            )
        }
        Some(Flag::BothEmpty) => match config.empty_policy {
            EmptyPolicy::Penalize => (Some(1.0), Some(0.0), Some(0.0)),
            EmptyPolicy::Exclude => (None, None, None),
        },
        Some(_) => match config.empty_policy {
            EmptyPolicy::Penalize => {
                flags.push(Flag::Penalized);
                let diag = r.grid.physical_diagonal();
                (Some(0.0), Some(diag), Some(diag))
            }
            EmptyPolicy::Exclude => (None, None, None),
        },
    };

    Ok(CaseMetrics {
        case_id: case_id.to_string(),
        dice: d.value,
        surface_dice: sdice,
        masd_mm: masd_v,
        hd95_mm: hd_v,
        volume_ref_mm3: tumor_volume(&r),
        volume_pred_mm3: tumor_volume(&p),
        flags,
    })
}
