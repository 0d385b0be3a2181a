//! Cohort aggregation and report serialization.
//!
//! JSON layout: `{ "config": {...}, "cases": [CaseMetrics...], "aggregate": {...} }`.
//! Every floating-point field is rounded to 9 significant digits on output;
//! undefined values serialize as `null`.

use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};

use super::{CaseMetrics, EmptyPolicy, EvalConfig, Flag, VolumeUnit};

/// Rounds to 9 significant decimal digits.
pub fn sig9(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.8e}").parse().unwrap_or(x)
}

pub(crate) fn ser_f64<S: Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if x.is_finite() {
        s.serialize_f64(sig9(*x))
    } else {
        s.serialize_none()
    }
}

pub(crate) fn ser_opt_f64<S: Serializer>(
    x: &Option<f64>,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    match x {
        Some(v) => ser_f64(v, s),
        None => s.serialize_none(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n_cases: usize,
    #[serde(serialize_with = "ser_f64")]
    pub mean_dice: f64,
    #[serde(serialize_with = "ser_opt_f64")]
    pub mean_surface_dice: Option<f64>,
    #[serde(serialize_with = "ser_opt_f64")]
    pub mean_masd_mm: Option<f64>,
    #[serde(serialize_with = "ser_opt_f64")]
    pub mean_hd95_mm: Option<f64>,
    #[serde(serialize_with = "ser_f64")]
    pub volume_rmse: f64,
    pub volume_unit: VolumeUnit,
    pub n_both_empty: usize,
    pub n_ref_empty: usize,
    pub n_pred_empty: usize,
    pub n_penalized: usize,
    /// Cases whose surface metrics were dropped under the `exclude` policy.
    pub n_excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortReport {
    pub config: EvalConfig,
    pub cases: Vec<CaseMetrics>,
    pub aggregate: Aggregate,
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = values
        .flatten()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Unweighted means over cases plus `sqrt(mean((V_pred - V_ref)^2))`.
pub fn aggregate_cohort(cases: Vec<CaseMetrics>, config: &EvalConfig) -> Result<CohortReport> {
    if cases.is_empty() {
        return Err(Error::EmptyInput("cohort has no cases".into()));
    }
    let n = cases.len();
    let mean_dice = cases.iter().map(|c| c.dice).sum::<f64>() / n as f64;
    let mse = cases
        .iter()
        .map(|c| {
            let e = config.volume_unit.from_mm3(c.volume_pred_mm3)
                - config.volume_unit.from_mm3(c.volume_ref_mm3);
            e * e
        })
        .sum::<f64>()
        / n as f64;
    let count = |f: Flag| cases.iter().filter(|c| c.has_flag(f)).count();
    let n_excluded = if config.empty_policy == EmptyPolicy::Exclude {
        cases.iter().filter(|c| c.surface_dice.is_none()).count()
    } else {
        0
    };
    let aggregate = Aggregate {
        n_cases: n,
        mean_dice,
        mean_surface_dice: mean_of(cases.iter().map(|c| c.surface_dice)),
        mean_masd_mm: mean_of(cases.iter().map(|c| c.masd_mm)),
        mean_hd95_mm: mean_of(cases.iter().map(|c| c.hd95_mm)),
        volume_rmse: mse.sqrt(),
        volume_unit: config.volume_unit,
        n_both_empty: count(Flag::BothEmpty),
        n_ref_empty: count(Flag::RefEmpty),
        n_pred_empty: count(Flag::PredEmpty),
        n_penalized: count(Flag::Penalized),
        n_excluded,
    };
    Ok(CohortReport {
        config: *config,
        cases,
        aggregate,
    })
}

fn fmt_num(x: f64) -> String {
    if x.is_finite() {
        sig9(x).to_string()
    } else {
        String::new()
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_num).unwrap_or_default()
}

impl CohortReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row per case plus a trailing `__aggregate__` row carrying the means
    /// and the volume RMSE.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "case_id,dice,surface_dice,masd_mm,hd95_mm,volume_ref_mm3,volume_pred_mm3,volume_rmse,flags\n",
        );
        for c in &self.cases {
            let flags: Vec<String> = c.flags.iter().map(|f| f.to_string()).collect();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},,{}\n",
                csv_field(&c.case_id),
                fmt_num(c.dice),
                fmt_opt(c.surface_dice),
                fmt_opt(c.masd_mm),
                fmt_opt(c.hd95_mm),
                fmt_num(c.volume_ref_mm3),
                fmt_num(c.volume_pred_mm3),
                flags.join(";")
            ));
        }
        let a = &self.aggregate;
        out.push_str(&format!(
            "__aggregate__,{},{},{},{},,,{},\n",
            fmt_num(a.mean_dice),
            fmt_opt(a.mean_surface_dice),
            fmt_opt(a.mean_masd_mm),
            fmt_opt(a.mean_hd95_mm),
            fmt_num(a.volume_rmse),
        ));
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn case(id: &str, dice: f64, vr: f64, vp: f64) -> CaseMetrics {
        CaseMetrics {
            case_id: id.into(),
            dice,
            surface_dice: Some(dice),
            masd_mm: Some(1.0),
            hd95_mm: Some(2.0),
            volume_ref_mm3: vr,
            volume_pred_mm3: vp,
            flags: vec![],
        }
    }

    #[test]
    fn single_case_aggregate() {
        let r = aggregate_cohort(vec![case("a", 0.7, 1000.0, 1234.0)], &EvalConfig::default())
            .unwrap();
        assert_eq!(r.aggregate.mean_dice, 0.7);
        assert_eq!(r.aggregate.mean_masd_mm, Some(1.0));
        assert_eq!(r.aggregate.volume_rmse, 234.0);
    }

    #[test]
    fn rmse_symmetric_errors() {
        let r = aggregate_cohort(
            vec![case("a", 0.5, 500.0, 600.0), case("b", 0.5, 500.0, 400.0)],
            &EvalConfig::default(),
        )
        .unwrap();
        assert_eq!(r.aggregate.volume_rmse, 100.0);
        let ml = EvalConfig {
            volume_unit: VolumeUnit::Ml,
            ..EvalConfig::default()
        };
        let r = aggregate_cohort(
            vec![case("a", 0.5, 500.0, 600.0), case("b", 0.5, 500.0, 400.0)],
            &ml,
        )
        .unwrap();
        assert!((r.aggregate.volume_rmse - 0.1).abs() < 1e-15);
    }

    #[test]
    fn exclude_policy_means() {
        let cfg = EvalConfig {
            empty_policy: EmptyPolicy::Exclude,
            ..EvalConfig::default()
        };
        let mut flagged = case("b", 0.0, 10.0, 0.0);
        flagged.surface_dice = None;
        flagged.masd_mm = None;
        flagged.hd95_mm = None;
        flagged.flags = vec![Flag::PredEmpty];
        let r = aggregate_cohort(vec![case("a", 0.8, 10.0, 10.0), flagged], &cfg).unwrap();
        assert_eq!(r.aggregate.mean_surface_dice, Some(0.8));
        assert_eq!(r.aggregate.mean_dice, 0.4);
        assert_eq!(r.aggregate.n_excluded, 1);
        assert_eq!(r.aggregate.n_pred_empty, 1);
    }

    #[test]
    fn empty_cohort_rejected() {
        assert!(aggregate_cohort(vec![], &EvalConfig::default()).is_err());
    }

    #[test]
    fn nine_significant_digits() {
        assert_eq!(sig9(2.0 / 3.0), 0.666666667);
        assert_eq!(sig9(123456789012.0), 123456789000.0);
        let r = aggregate_cohort(vec![case("a", 2.0 / 3.0, 1.0, 2.0)], &EvalConfig::default())
            .unwrap();
        let json = r.to_json();
        assert!(json.contains("\"dice\": 0.666666667"));
        let csv = r.to_csv();
        assert!(csv.lines().last().unwrap().starts_with("__aggregate__,0.666666667"));
        assert_eq!(csv.lines().count(), 3);
    }
}
