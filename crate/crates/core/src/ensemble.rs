//! Fusion of stored member predictions (probability stacks or label maps).
//!
//! Reductions sum the weighted per-member terms of each voxel in ascending
//! order, so results do not depend on member order. Ties in the final argmax
//! go to the lowest class or label id.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{self, RawVolume};
use crate::volume::{Grid, LabelSet, LabelVolume, ProbabilityVolume, Volume};

/// Placeholder substituted with the case id in member paths.
pub const CASE_PLACEHOLDER: &str = "{case_id}";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Checkpoint {
    Best,
    Final,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleMode {
    #[default]
    ProbAvg,
    Majority,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleMember {
    pub member_id: String,
    /// Free-form provenance tag, e.g. "all-rounder", "volume", "boundary".
    pub model_tag: String,
    pub fold: u8,
    pub checkpoint: Checkpoint,
    /// Prediction file; may contain `{case_id}` for multi-case use.
    pub path: PathBuf,
}

impl EnsembleMember {
    pub fn path_for(&self, case_id: Option<&str>) -> PathBuf {
        let s = self.path.to_string_lossy();
        match case_id {
            Some(id) if s.contains(CASE_PLACEHOLDER) => PathBuf::from(s.replace(CASE_PLACEHOLDER, id)),
            _ => self.path.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSpec {
    #[serde(default)]
    pub mode: EnsembleMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    pub members: Vec<EnsembleMember>,
}

pub(crate) fn validate_members(members: &[EnsembleMember]) -> Result<()> {
    if members.is_empty() {
        return Err(Error::InvalidParameter("ensemble needs at least one member".into()));
    }
    let mut seen = HashSet::new();
    for m in members {
        if m.member_id.is_empty() {
            return Err(Error::InvalidParameter("member id must not be empty".into()));
        }
        if !seen.insert(m.member_id.as_str()) {
            return Err(Error::InvalidParameter(format!("duplicate member id `{}`", m.member_id)));
        }
        if m.fold > 4 {
            return Err(Error::InvalidParameter(format!(
                "member `{}` has fold {}, expected 0-4",
                m.member_id, m.fold
            )));
        }
        if m.path.as_os_str().is_empty() {
            return Err(Error::InvalidParameter(format!("member `{}` has an empty path", m.member_id)));
        }
    }
    Ok(())
}

pub(crate) fn validate_weights(weights: &[f64]) -> Result<()> {
    if let Some(w) = weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
        return Err(Error::InvalidParameter(format!("weights must be positive, got {w}")));
    }
    Ok(())
}

impl EnsembleSpec {
    pub fn validate(&self) -> Result<()> {
        validate_members(&self.members)?;
        if let Some(w) = &self.weights {
            if w.len() != self.members.len() {
                return Err(Error::InvalidParameter(format!(
                    "{} weights for {} members",
                    w.len(),
                    self.members.len()
                )));
            }
            validate_weights(w)?;
        }
        Ok(())
    }

    pub fn resolved_weights(&self) -> Vec<f64> {
        self.weights
            .clone()
            .unwrap_or_else(|| vec![1.0; self.members.len()])
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let spec: EnsembleSpec =
            toml::from_str(s).map_err(|e| Error::Config(format!("ensemble spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    /// Reads a spec file; relative member paths resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut spec = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or_else(|| Path::new(""));
        for m in &mut spec.members {
            m.path = base.join(&m.path);
        }
        Ok(spec)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("spec serializes")
    }
}

/// A member's stored prediction for one case.
#[derive(Debug, Clone, PartialEq)]
pub enum MemberPrediction {
    Probabilities(ProbabilityVolume),
    Labels(LabelVolume),
}

impl MemberPrediction {
    pub fn grid(&self) -> &Grid {
        match self {
            MemberPrediction::Probabilities(p) => p.grid(),
            MemberPrediction::Labels(l) => l.grid(),
        }
    }

    /// Loads a 4D file as a probability stack and a 3D file as a label map.
    pub fn load(path: impl AsRef<Path>, labels: &LabelSet) -> Result<Self> {
        let RawVolume {
            grid,
            channels,
            ndim,
            values,
        } = io::read_raw(path)?;
        if ndim == 4 {
            let data = values.iter().map(|&v| v as f32).collect();
            let p = Volume::from_channels(grid, channels, data)?;
            p.validate_probabilities()?;
            Ok(MemberPrediction::Probabilities(p))
        } else {
            Ok(MemberPrediction::Labels(io::labels_from_values(grid, &values, labels)?))
        }
    }

    pub fn labels(&self) -> LabelVolume {
        match self {
            MemberPrediction::Probabilities(p) => argmax_labels(p),
            MemberPrediction::Labels(l) => l.clone(),
        }
    }
}

fn check_weights(n: usize, weights: &[f64]) -> Result<()> {
    if n == 0 {
        return Err(Error::EmptyInput("no ensemble members".into()));
    }
    if weights.len() != n {
        return Err(Error::InvalidParameter(format!(
            "{} weights for {} members",
            weights.len(),
            n
        )));
    }
    validate_weights(weights)
}

fn check_stacks(members: &[&ProbabilityVolume]) -> Result<()> {
    let first = members[0];
    for m in &members[1..] {
        first.grid().ensure_matches(m.grid())?;
        if m.channels() != first.channels() {
            return Err(Error::GridMismatch(format!(
                "class count {} vs {}",
                first.channels(),
                m.channels()
            )));
        }
    }
    Ok(())
}

/// Per voxel and class, the order-independent weighted sum over members.
fn weighted_sums(members: &[&ProbabilityVolume], weights: &[f64]) -> Vec<f64> {
    let len = members[0].data().len();
    let mut terms = vec![0.0f64; members.len()];
    (0..len)
        .map(|i| {
            for (t, (m, w)) in terms.iter_mut().zip(members.iter().zip(weights)) {
                *t = w * m.data()[i] as f64;
            }
            terms.sort_by(f64::total_cmp);
            terms.iter().sum()
        })
        .collect()
}

fn argmax_channels(grid: Grid, channels: usize, sums: &[f64]) -> LabelVolume {
    let n = grid.len();
    let labels = (0..n)
        .map(|v| {
            let mut best = 0usize;
            for c in 1..channels {
                if sums[c * n + v] > sums[best * n + v] {
                    best = c;
                }
            }
            best as u16
        })
        .collect();
    Volume::from_vec(grid, labels).expect("grid length")
}

/// Weighted per-voxel mean of the members' class probabilities, renormalised
/// so each voxel sums to one.
pub fn average_probabilities(
    members: &[&ProbabilityVolume],
    weights: &[f64],
) -> Result<ProbabilityVolume> {
    check_weights(members.len(), weights)?;
    check_stacks(members)?;
    let sums = weighted_sums(members, weights);
    let grid = *members[0].grid();
    let channels = members[0].channels();
    let n = grid.len();
    let mut out = vec![0.0f32; sums.len()];
    for v in 0..n {
        let total: f64 = (0..channels).map(|c| sums[c * n + v]).sum();
        for c in 0..channels {
            out[c * n + v] = if total > 0.0 {
                (sums[c * n + v] / total) as f32
            } else {
                1.0 / channels as f32
            };
        }
    }
    Volume::from_channels(grid, channels, out)
}

/// Per-voxel argmax over classes, ties to the lowest class index.
pub fn argmax_labels(p: &ProbabilityVolume) -> LabelVolume {
    let sums: Vec<f64> = p.data().iter().map(|&x| x as f64).collect();
    argmax_channels(*p.grid(), p.channels(), &sums)
}

/// Argmax of the weighted probability sums, computed without rounding the
/// average to single precision first.
pub fn prob_avg_labels(members: &[&ProbabilityVolume], weights: &[f64]) -> Result<LabelVolume> {
    check_weights(members.len(), weights)?;
    check_stacks(members)?;
    let sums = weighted_sums(members, weights);
    Ok(argmax_channels(*members[0].grid(), members[0].channels(), &sums))
}

/// Weighted plurality vote per voxel, ties to the lowest label id.
pub fn majority_vote(members: &[&LabelVolume], weights: &[f64]) -> Result<LabelVolume> {
    check_weights(members.len(), weights)?;
    let grid = *members[0].grid();
    for m in &members[1..] {
        grid.ensure_matches(m.grid())?;
    }
    let mut votes: Vec<(u16, f64)> = Vec::with_capacity(members.len());
    let labels = (0..grid.len())
        .map(|i| {
            votes.clear();
            votes.extend(members.iter().zip(weights).map(|(m, &w)| (m.data()[i], w)));
            // group by label, weights ascending within a label
            votes.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
            let mut best = (votes[0].0, f64::NEG_INFINITY);
            let mut k = 0;
            while k < votes.len() {
                let label = votes[k].0;
                let mut total = 0.0;
                while k < votes.len() && votes[k].0 == label {
                    total += votes[k].1;
                    k += 1;
                }
                if total > best.1 {
                    best = (label, total);
                }
            }
            best.0
        })
        .collect();
    Volume::from_vec(grid, labels)
}

/// Fuses already loaded member predictions according to `mode`.
pub fn combine_predictions(
    preds: &[&MemberPrediction],
    weights: &[f64],
    mode: EnsembleMode,
) -> Result<LabelVolume> {
    check_weights(preds.len(), weights)?;
    match mode {
        EnsembleMode::ProbAvg => {
            let stacks = preds
                .iter()
                .map(|p| match p {
                    MemberPrediction::Probabilities(s) => Ok(s),
                    MemberPrediction::Labels(_) => Err(Error::InvalidParameter(
                        "prob_avg needs probability stacks from every member".into(),
                    )),
                })
                .collect::<Result<Vec<_>>>()?;
            prob_avg_labels(&stacks, weights)
        }
        EnsembleMode::Majority => {
            let labels: Vec<LabelVolume> = preds.iter().map(|p| p.labels()).collect();
            let refs: Vec<&LabelVolume> = labels.iter().collect();
            majority_vote(&refs, weights)
        }
    }
}

/// Loads every member's prediction (for `case_id` when paths are templated)
/// and fuses them. Load failures name the member.
pub fn combine(spec: &EnsembleSpec, case_id: Option<&str>, labels: &LabelSet) -> Result<LabelVolume> {
    spec.validate()?;
    let preds = spec
        .members
        .iter()
        .map(|m| {
            MemberPrediction::load(m.path_for(case_id), labels).map_err(|e| Error::MemberLoad {
                member_id: m.member_id.clone(),
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&MemberPrediction> = preds.iter().collect();
    combine_predictions(&refs, &spec.resolved_weights(), spec.mode)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stack(probs: &[[f32; 2]]) -> ProbabilityVolume {
        let g = Grid::new([probs.len(), 1, 1], [1.0; 3]).unwrap();
        let mut data: Vec<f32> = probs.iter().map(|p| p[0]).collect();
        data.extend(probs.iter().map(|p| p[1]));
        Volume::from_channels(g, 2, data).unwrap()
    }

    fn labels(v: &[u16]) -> LabelVolume {
        Volume::from_vec(Grid::new([v.len(), 1, 1], [1.0; 3]).unwrap(), v.to_vec()).unwrap()
    }

    #[test]
    fn average_examples() {
        let a = stack(&[[0.8, 0.2]]);
        let b = stack(&[[0.2, 0.8]]);
        let avg = average_probabilities(&[&a, &b], &[1.0, 1.0]).unwrap();
        assert!((avg.data()[0] - 0.5).abs() < 1e-6 && (avg.data()[1] - 0.5).abs() < 1e-6);
        assert_eq!(argmax_labels(&avg).data(), &[0]);
        let avg = average_probabilities(&[&a, &b], &[3.0, 1.0]).unwrap();
        assert!((avg.data()[0] - 0.65).abs() < 1e-6 && (avg.data()[1] - 0.35).abs() < 1e-6);
        let same = average_probabilities(&[&a, &a, &a], &[1.0; 3]).unwrap();
        assert_eq!(same, a);
    }

    #[test]
    fn average_rejects_bad_inputs() {
        let a = stack(&[[0.8, 0.2]]);
        let b = stack(&[[0.8, 0.2], [0.5, 0.5]]);
        assert!(matches!(
            average_probabilities(&[&a, &b], &[1.0, 1.0]),
            Err(Error::GridMismatch(_))
        ));
        assert!(average_probabilities(&[&a, &a], &[1.0, 0.0]).is_err());
        assert!(average_probabilities(&[&a], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn argmax_ties_and_one_hot() {
        let g = Grid::new([2, 1, 1], [1.0; 3]).unwrap();
        let third = 1.0f32 / 3.0;
        let p = Volume::from_channels(g, 3, vec![third, 0.0, third, 0.0, third, 1.0]).unwrap();
        assert_eq!(argmax_labels(&p).data(), &[0, 2]);
    }

    #[test]
    fn majority_examples() {
        let a = labels(&[2, 1, 0]);
        assert_eq!(majority_vote(&[&a, &a, &a], &[1.0; 3]).unwrap(), a);
        let m = majority_vote(&[&labels(&[2]), &labels(&[2]), &labels(&[0])], &[1.0; 3]).unwrap();
        assert_eq!(m.data(), &[2]);
        let m = majority_vote(&[&labels(&[1]), &labels(&[2])], &[1.0; 2]).unwrap();
        assert_eq!(m.data(), &[1]);
        let m = majority_vote(&[&labels(&[1]), &labels(&[2])], &[1.0, 1.5]).unwrap();
        assert_eq!(m.data(), &[2]);
    }

    #[test]
    fn majority_grid_mismatch() {
        assert!(matches!(
            majority_vote(&[&labels(&[1]), &labels(&[1, 2])], &[1.0; 2]),
            Err(Error::GridMismatch(_))
        ));
    }

    #[test]
    fn spec_parsing_and_validation() {
        let toml = r#"
            mode = "majority"
            [[members]]
            member_id = "a"
            model_tag = "all-rounder"
            fold = 0
            checkpoint = "best"
            path = "a.nii.gz"
            [[members]]
            member_id = "b"
            model_tag = "volume"
            fold = 3
            checkpoint = "final"
            path = "b/{case_id}.nii.gz"
        "#;
        let spec = EnsembleSpec::from_toml_str(toml).unwrap();
        assert_eq!(spec.mode, EnsembleMode::Majority);
        assert_eq!(spec.resolved_weights(), vec![1.0, 1.0]);
        assert_eq!(
            spec.members[1].path_for(Some("case_9")),
            PathBuf::from("b/case_9.nii.gz")
        );
        let back = EnsembleSpec::from_toml_str(&spec.to_toml_string()).unwrap();
        assert_eq!(back, spec);

        let dup = toml.replace("member_id = \"b\"", "member_id = \"a\"");
        assert!(EnsembleSpec::from_toml_str(&dup).is_err());
        let bad_fold = toml.replace("fold = 3", "fold = 5");
        assert!(EnsembleSpec::from_toml_str(&bad_fold).is_err());
        let bad_ckpt = toml.replace("\"final\"", "\"last\"");
        assert!(EnsembleSpec::from_toml_str(&bad_ckpt).is_err());
        let bad_weights = format!("weights = [1.0]\n{toml}");
        assert!(EnsembleSpec::from_toml_str(&bad_weights).is_err());
    }

    #[test]
    fn prob_avg_refuses_label_members() {
        let p = MemberPrediction::Labels(labels(&[1]));
        assert!(combine_predictions(&[&p], &[1.0], EnsembleMode::ProbAvg).is_err());
        assert_eq!(
            combine_predictions(&[&p], &[1.0], EnsembleMode::Majority).unwrap(),
            labels(&[1])
        );
    }
}
