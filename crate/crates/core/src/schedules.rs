//! Closed-form learning-rate schedules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_POLY_EXPONENT: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleFamily {
    Poly,
    PolyWarmup,
    CosineWarmup,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub family: ScheduleFamily,
    pub lr0: f64,
    pub max_epochs: u32,
    #[serde(default = "default_exponent")]
    pub exponent: f64,
    #[serde(default)]
    pub warmup_epochs: u32,
}

fn default_exponent() -> f64 {
    DEFAULT_POLY_EXPONENT
}

impl ScheduleSpec {
    pub fn poly(lr0: f64, max_epochs: u32) -> Self {
        ScheduleSpec {
            family: ScheduleFamily::Poly,
            lr0,
            max_epochs,
            exponent: DEFAULT_POLY_EXPONENT,
            warmup_epochs: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::InvalidParameter(format!("lr0 must be > 0, got {}", self.lr0)));
        }
        if self.max_epochs == 0 {
            return Err(Error::InvalidParameter("max_epochs must be >= 1".into()));
        }
        if self.family != ScheduleFamily::CosineWarmup && !(self.exponent > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "exponent must be > 0, got {}",
                self.exponent
            )));
        }
        match self.family {
            ScheduleFamily::Poly if self.warmup_epochs != 0 => Err(Error::InvalidParameter(
                "the poly family has no warmup; use poly_warmup".into(),
            )),
            ScheduleFamily::PolyWarmup | ScheduleFamily::CosineWarmup
                if self.warmup_epochs >= self.max_epochs =>
            {
                Err(Error::InvalidParameter(format!(
                    "warmup_epochs ({}) must be < max_epochs ({})",
                    self.warmup_epochs, self.max_epochs
                )))
            }
            _ => Ok(()),
        }
    }
}

/// Learning rate at a (possibly fractional) epoch in `[0, max_epochs]`.
pub fn lr_at_continuous(spec: &ScheduleSpec, epoch: f64) -> Result<f64> {
    spec.validate()?;
    let max = spec.max_epochs as f64;
    if !(0.0..=max).contains(&epoch) {
        return Err(Error::InvalidParameter(format!(
            "epoch {epoch} outside [0, {max}]"
        )));
    }
    let warm = spec.warmup_epochs as f64;
    if spec.family != ScheduleFamily::Poly && epoch < warm {
        return Ok(spec.lr0 * epoch / warm);
    }
    let t = (epoch - warm) / (max - warm);
    Ok(match spec.family {
        ScheduleFamily::Poly | ScheduleFamily::PolyWarmup => {
            spec.lr0 * (1.0 - t).powf(spec.exponent)
        }
        ScheduleFamily::CosineWarmup => spec.lr0 * 0.5 * (1.0 + (std::f64::consts::PI * t).cos()),
    })
}

pub fn lr_at(spec: &ScheduleSpec, epoch: u32) -> Result<f64> {
    if epoch > spec.max_epochs {
        return Err(Error::InvalidParameter(format!(
            "epoch {epoch} outside [0, {}]",
            spec.max_epochs
        )));
    }
    lr_at_continuous(spec, epoch as f64)
}

/// `epoch,lr` CSV for every integer epoch.
pub fn lr_curve_csv(spec: &ScheduleSpec) -> Result<String> {
    spec.validate()?;
    let mut out = String::from("epoch,lr\n");
    for e in 0..=spec.max_epochs {
        out.push_str(&format!("{},{}\n", e, lr_at(spec, e)?));
    }
    Ok(out)
}
