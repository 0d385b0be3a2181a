//! Metric-aware ensemble selection: evaluate member subsets on validation
//! cases and rank them by a composite of the five cohort metrics.
//!
//! The composite of a subset is the weighted mean of its per-metric
//! normalized values, each direction-aligned so 1 is best. Rankings sort by
//! score (descending), then member count (ascending), then the sorted member
//! ids (lexicographic).

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};
use std::path::Path;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ensemble::{
    combine_predictions, validate_members, EnsembleMember, EnsembleMode, EnsembleSpec,
    MemberPrediction,
};
use crate::error::{Error, Result};
use crate::io::{self, ReferenceRow};
use crate::metrics::{aggregate_cohort, evaluate_case, CohortReport, EvalConfig};
use crate::metrics::report::{ser_f64, sig9};
use crate::volume::{LabelSet, LabelVolume};

pub const DEFAULT_BUDGET: u128 = 100_000;

pub const METRIC_NAMES: [&str; 5] = ["dice", "surface_dice", "masd", "hd95", "volume_rmse"];
const HIGHER_IS_BETTER: [bool; 5] = [true, true, false, false, false];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// `(x - min) / (max - min)`, inverted for lower-is-better metrics.
    #[default]
    Minmax,
    /// Dense rank among distinct values, scaled to [0, 1].
    Rank,
}

impl Normalization {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "minmax" => Ok(Normalization::Minmax),
            "rank" => Ok(Normalization::Rank),
            other => Err(Error::InvalidParameter(format!(
                "unknown normalization `{other}` (expected minmax or rank)"
            ))),
        }
    }
}

/// Weights of dice, surface dice, MASD, HD95 and volume RMSE.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricWeights(pub [f64; 5]);

impl Default for MetricWeights {
    fn default() -> Self {
        MetricWeights([0.2; 5])
    }
}

impl MetricWeights {
    pub fn validate(&self) -> Result<()> {
        if self.0.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::InvalidParameter(format!(
                "metric weights must be nonnegative, got {:?}",
                self.0
            )));
        }
        let total: f64 = self.0.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "metric weights must sum to 1, got {total}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompositeScore {
    #[serde(serialize_with = "ser_f64")]
    pub dice: f64,
    #[serde(serialize_with = "ser_f64")]
    pub surface_dice: f64,
    #[serde(serialize_with = "ser_f64")]
    pub masd: f64,
    #[serde(serialize_with = "ser_f64")]
    pub hd95: f64,
    #[serde(serialize_with = "ser_f64")]
    pub volume_rmse: f64,
    #[serde(serialize_with = "ser_f64")]
    pub score: f64,
}

impl CompositeScore {
    pub fn normalized(&self) -> [f64; 5] {
        [self.dice, self.surface_dice, self.masd, self.hd95, self.volume_rmse]
    }
}

/// The five raw cohort metrics used for scoring; undefined means count as worst.
pub fn raw_metrics(r: &CohortReport) -> [Option<f64>; 5] {
    let a = &r.aggregate;
    [
        Some(a.mean_dice),
        a.mean_surface_dice,
        a.mean_masd_mm,
        a.mean_hd95_mm,
        Some(a.volume_rmse),
    ]
}

fn normalize_column(col: &[Option<f64>], higher_better: bool, norm: Normalization) -> Vec<f64> {
    // oriented so larger is better; undefined sorts below everything
    let vals: Vec<Option<f64>> = col
        .iter()
        .map(|v| v.filter(|x| !x.is_nan()).map(|x| if higher_better { x } else { -x }))
        .collect();
    match norm {
        Normalization::Minmax => {
            let defined = vals.iter().flatten();
            let lo = defined.clone().cloned().fold(f64::INFINITY, f64::min);
            let hi = defined.cloned().fold(f64::NEG_INFINITY, f64::max);
            vals.iter()
                .map(|v| match v {
                    None if lo > hi => 1.0,
                    None => 0.0,
                    Some(_) if hi == lo => 1.0,
                    Some(x) => (x - lo) / (hi - lo),
                })
                .collect()
        }
        Normalization::Rank => {
            let key = |v: &Option<f64>| v.map_or(f64::NEG_INFINITY, |x| x);
            let mut distinct: Vec<f64> = vals.iter().map(key).collect();
            distinct.sort_by(f64::total_cmp);
            distinct.dedup();
            if distinct.len() == 1 {
                return vec![1.0; vals.len()];
            }
            let span = (distinct.len() - 1) as f64;
            vals.iter()
                .map(|v| {
                    let k = key(v);
                    distinct.partition_point(|d| *d < k) as f64 / span
                })
                .collect()
        }
    }
}

/// Normalizes raw metric rows across the population and forms the weighted
/// composite; the output order matches the input.
pub fn normalize_raw(
    raw: &[[Option<f64>; 5]],
    weights: &MetricWeights,
    norm: Normalization,
) -> Result<Vec<CompositeScore>> {
    weights.validate()?;
    if raw.is_empty() {
        return Err(Error::EmptyInput("no reports to normalize".into()));
    }
    let cols: Vec<Vec<f64>> = (0..5)
        .map(|m| {
            let col: Vec<Option<f64>> = raw.iter().map(|r| r[m]).collect();
            normalize_column(&col, HIGHER_IS_BETTER[m], norm)
        })
        .collect();
    let total: f64 = weights.0.iter().sum();
    Ok((0..raw.len())
        .map(|i| {
            let v: [f64; 5] = std::array::from_fn(|m| cols[m][i]);
            let score = v.iter().zip(&weights.0).map(|(x, w)| x * w).sum::<f64>() / total;
            CompositeScore {
                dice: v[0],
                surface_dice: v[1],
                masd: v[2],
                hd95: v[3],
                volume_rmse: v[4],
                score,
            }
        })
        .collect())
}

pub fn normalize_metrics(
    reports: &[CohortReport],
    weights: &MetricWeights,
    norm: Normalization,
) -> Result<Vec<CompositeScore>> {
    let raw: Vec<[Option<f64>; 5]> = reports.iter().map(raw_metrics).collect();
    normalize_raw(&raw, weights, norm)
}

/// One validation case of a pool with every member's prediction for it.
#[derive(Debug, Clone)]
pub struct PoolCase {
    pub case_id: String,
    pub reference: LabelVolume,
    /// One prediction per pool member, in member order.
    pub predictions: Vec<MemberPrediction>,
}

/// On-disk pool description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolFile {
    /// CSV with `case_id` and `reference` columns.
    pub cases: std::path::PathBuf,
    #[serde(default)]
    pub mode: EnsembleMode,
    pub members: Vec<EnsembleMember>,
}

/// Candidate members with their validation predictions loaded, plus a cache
/// of subset evaluations keyed by member ids and content digests.
#[derive(Debug)]
pub struct CandidatePool {
    members: Vec<EnsembleMember>,
    cases: Vec<PoolCase>,
    digests: Vec<String>,
    cache: Mutex<HashMap<String, CohortReport>>,
}

fn volume_digest(p: &MemberPrediction) -> String {
    let mut h = Sha256::new();
    let g = p.grid();
    for d in g.dims {
        h.update((d as u64).to_le_bytes());
    }
    for s in g.spacing {
        h.update(s.to_le_bytes());
    }
    match p {
        MemberPrediction::Probabilities(v) => {
            h.update(b"p");
            h.update((v.channels() as u64).to_le_bytes());
            for x in v.data() {
                h.update(x.to_le_bytes());
            }
        }
        MemberPrediction::Labels(v) => {
            h.update(b"l");
            for x in v.data() {
                h.update(x.to_le_bytes());
            }
        }
    }
    hex::encode(h.finalize())
}

impl CandidatePool {
    /// Builds a pool from in-memory predictions. Member digests are taken
    /// over the prediction contents.
    pub fn new(members: Vec<EnsembleMember>, cases: Vec<PoolCase>) -> Result<Self> {
        validate_members(&members)?;
        if cases.is_empty() {
            return Err(Error::EmptyInput("pool has no validation cases".into()));
        }
        for c in &cases {
            if c.predictions.len() != members.len() {
                return Err(Error::InvalidParameter(format!(
                    "case `{}` has {} predictions for {} members",
                    c.case_id,
                    c.predictions.len(),
                    members.len()
                )));
            }
            for (m, p) in members.iter().zip(&c.predictions) {
                c.reference.grid().ensure_matches(p.grid()).map_err(|e| Error::MemberLoad {
                    member_id: m.member_id.clone(),
                    source: Box::new(e),
                })?;
            }
        }
        let digests = (0..members.len())
            .map(|m| {
                let mut h = Sha256::new();
                for c in &cases {
                    h.update(volume_digest(&c.predictions[m]).as_bytes());
                }
                hex::encode(h.finalize())
            })
            .collect();
        Ok(CandidatePool {
            members,
            cases,
            digests,
            cache: Mutex::new(HashMap::new()),
        })
    }

    /// Loads a pool file: member paths are templated on `{case_id}` and,
    /// like the case list, resolved against the pool file's directory.
    /// Member digests hash the prediction files' SHA-256 digests.
    pub fn load(path: impl AsRef<Path>, labels: &LabelSet) -> Result<(Self, EnsembleMode)> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut file: PoolFile =
            toml::from_str(&text).map_err(|e| Error::Config(format!("pool file: {e}")))?;
        let base = std::path::absolute(path.parent().unwrap_or_else(|| Path::new("")))
            .map_err(|e| Error::io(path, e))?;
        for m in &mut file.members {
            m.path = base.join(&m.path);
        }
        validate_members(&file.members)?;
        let refs = io::read_references(base.join(&file.cases))?;
        Self::load_members(file.members, &refs, labels).map(|p| (p, file.mode))
    }

    pub fn load_members(
        members: Vec<EnsembleMember>,
        refs: &[ReferenceRow],
        labels: &LabelSet,
    ) -> Result<Self> {
        let cases = refs
            .par_iter()
            .map(|r| {
                let reference = io::read_labels(&r.reference, labels)?;
                let predictions = members
                    .iter()
                    .map(|m| {
                        MemberPrediction::load(m.path_for(Some(&r.case_id)), labels).map_err(|e| {
                            Error::MemberLoad {
                                member_id: m.member_id.clone(),
                                source: Box::new(e),
                            }
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(PoolCase {
                    case_id: r.case_id.clone(),
                    reference,
                    predictions,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut pool = Self::new(members, cases)?;
        pool.digests = pool
            .members
            .iter()
            .map(|m| {
                let mut h = Sha256::new();
                for r in refs {
                    h.update(io::file_digest(m.path_for(Some(&r.case_id)))?.as_bytes());
                }
                Ok(hex::encode(h.finalize()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(pool)
    }

    pub fn members(&self) -> &[EnsembleMember] {
        &self.members
    }

    pub fn cases(&self) -> &[PoolCase] {
        &self.cases
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Number of cached subset evaluations.
    pub fn cache_len(&self) -> usize {
        self.cache.lock().expect("cache lock").len()
    }

    fn cache_key(&self, subset: &[usize], mode: EnsembleMode, config: &EvalConfig) -> String {
        let mut parts: Vec<(&str, &str)> = subset
            .iter()
            .map(|&i| (self.members[i].member_id.as_str(), self.digests[i].as_str()))
            .collect();
        parts.sort();
        let mut key = format!("{mode:?}|{}", serde_json::to_string(config).expect("config"));
        for (id, d) in parts {
            key.push('|');
            key.push_str(id);
            key.push(':');
            key.push_str(d);
        }
        key
    }

    /// Cohort report of the ensemble formed by the members at `subset`.
    pub fn evaluate_subset(
        &self,
        subset: &[usize],
        mode: EnsembleMode,
        config: &EvalConfig,
    ) -> Result<CohortReport> {
        if subset.is_empty() {
            return Err(Error::InvalidParameter("empty subset".into()));
        }
        let key = self.cache_key(subset, mode, config);
        if let Some(r) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(r.clone());
        }
        let weights = vec![1.0; subset.len()];
        let cases = self
            .cases
            .iter()
            .map(|c| {
                let preds: Vec<&MemberPrediction> = subset.iter().map(|&i| &c.predictions[i]).collect();
                let labels = combine_predictions(&preds, &weights, mode)?;
                evaluate_case(&c.case_id, &c.reference, &labels, config)
            })
            .collect::<Result<Vec<_>>>()?;
        let report = aggregate_cohort(cases, config)?;
        self.cache
            .lock()
            .expect("cache lock")
            .insert(key, report.clone());
        Ok(report)
    }

    /// The ensemble spec for a subset, with member paths as held by the pool.
    pub fn spec_for(&self, subset: &[usize], mode: EnsembleMode) -> EnsembleSpec {
        let mut idx = subset.to_vec();
        idx.sort_by(|&a, &b| self.members[a].member_id.cmp(&self.members[b].member_id));
        EnsembleSpec {
            mode,
            weights: None,
            members: idx.iter().map(|&i| self.members[i].clone()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedSubset {
    /// Sorted member ids.
    pub members: Vec<String>,
    pub score: CompositeScore,
    pub report: CohortReport,
    #[serde(skip)]
    pub indices: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchOptions {
    pub mode: EnsembleMode,
    pub weights: MetricWeights,
    pub norm: Normalization,
    pub eval: EvalConfig,
    pub budget: u128,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            mode: EnsembleMode::ProbAvg,
            weights: MetricWeights::default(),
            norm: Normalization::Minmax,
            eval: EvalConfig::default(),
            budget: DEFAULT_BUDGET,
        }
    }
}

pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Number of subsets with sizes in `[size_min, size_max]`.
pub fn subset_count(n: usize, size_min: usize, size_max: usize) -> u128 {
    (size_min..=size_max).map(|k| binomial(n, k)).sum()
}

fn combinations(n: usize, k: usize, out: &mut Vec<Vec<usize>>) {
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        let Some(i) = (0..k).rev().find(|&i| idx[i] != i + n - k) else {
            return;
        };
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

fn sorted_ids(pool: &CandidatePool, subset: &[usize]) -> Vec<String> {
    let mut ids: Vec<String> = subset.iter().map(|&i| pool.members[i].member_id.clone()).collect();
    ids.sort();
    ids
}

fn compare(a: &RankedSubset, b: &RankedSubset) -> Ordering {
    b.score
        .score
        .total_cmp(&a.score.score)
        .then(a.members.len().cmp(&b.members.len()))
        .then_with(|| a.members.cmp(&b.members))
}

/// Evaluates every subset in parallel and ranks them with scores normalized
/// over this population.
fn evaluate_and_rank(
    pool: &CandidatePool,
    subsets: Vec<Vec<usize>>,
    opts: &SearchOptions,
) -> Result<Vec<RankedSubset>> {
    let reports = subsets
        .par_iter()
        .map(|s| pool.evaluate_subset(s, opts.mode, &opts.eval))
        .collect::<Result<Vec<_>>>()?;
    let scores = normalize_metrics(&reports, &opts.weights, opts.norm)?;
    let mut ranked: Vec<RankedSubset> = subsets
        .into_iter()
        .zip(reports)
        .zip(scores)
        .map(|((indices, report), score)| RankedSubset {
            members: sorted_ids(pool, &indices),
            score,
            report,
            indices,
        })
        .collect();
    ranked.sort_by(compare);
    Ok(ranked)
}

fn check_sizes(n: usize, size_min: usize, size_max: usize) -> Result<()> {
    if !(1 <= size_min && size_min <= size_max && size_max <= n) {
        return Err(Error::InvalidParameter(format!(
            "need 1 <= size_min ({size_min}) <= size_max ({size_max}) <= pool size ({n})"
        )));
    }
    Ok(())
}

/// Exhaustive search over all subsets with sizes in `[size_min, size_max]`.
pub fn search_subsets(
    pool: &CandidatePool,
    size_min: usize,
    size_max: usize,
    opts: &SearchOptions,
) -> Result<Vec<RankedSubset>> {
    opts.weights.validate()?;
    check_sizes(pool.len(), size_min, size_max)?;
    let count = subset_count(pool.len(), size_min, size_max);
    if count > opts.budget {
        return Err(Error::BudgetExceeded {
            count,
            budget: opts.budget,
        });
    }
    let mut subsets = Vec::with_capacity(count as usize);
    for k in size_min..=size_max {
        combinations(pool.len(), k, &mut subsets);
    }
    evaluate_and_rank(pool, subsets, opts)
}

/// Greedy growth from singletons: at each size the `beam_width` best subsets
/// (scored within that size) are extended by every member not yet in them.
/// The returned ranking covers every evaluated subset of sizes `1..=size_max`.
pub fn beam_search_subsets(
    pool: &CandidatePool,
    size_max: usize,
    beam_width: usize,
    opts: &SearchOptions,
) -> Result<Vec<RankedSubset>> {
    opts.weights.validate()?;
    check_sizes(pool.len(), 1, size_max)?;
    if beam_width == 0 {
        return Err(Error::InvalidParameter("beam width must be >= 1".into()));
    }
    let mut evaluated: Vec<Vec<usize>> = Vec::new();
    let mut level: Vec<Vec<usize>> = (0..pool.len()).map(|i| vec![i]).collect();
    for size in 1..=size_max {
        evaluated.extend(level.iter().cloned());
        if size == size_max {
            break;
        }
        let ranked = evaluate_and_rank(pool, level, opts)?;
        let mut next = BTreeSet::new();
        for r in ranked.iter().take(beam_width) {
            for m in 0..pool.len() {
                if !r.indices.contains(&m) {
                    let mut s = r.indices.clone();
                    s.push(m);
                    s.sort_unstable();
                    next.insert(s);
                }
            }
        }
        level = next.into_iter().collect();
        if level.is_empty() {
            break;
        }
    }
    evaluate_and_rank(pool, evaluated, opts)
}

/// Every member on its own, ranked.
pub fn rank_members(pool: &CandidatePool, opts: &SearchOptions) -> Result<Vec<RankedSubset>> {
    search_subsets(pool, 1, 1, opts)
}

/// Ranked output of a selection run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionReport {
    pub options: SelectionEcho,
    pub evaluated: usize,
    pub ranked: Vec<RankedSubset>,
    pub members: Vec<MemberScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionEcho {
    pub strategy: String,
    pub size_min: usize,
    pub size_max: usize,
    pub mode: EnsembleMode,
    pub weights: [f64; 5],
    pub norm: Normalization,
    pub eval: EvalConfig,
    pub budget: u128,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MemberScore {
    pub member_id: String,
    pub model_tag: String,
    #[serde(serialize_with = "ser_f64")]
    pub score: f64,
    #[serde(serialize_with = "ser_f64")]
    pub mean_dice: f64,
}

impl MemberScore {
    pub fn from_ranked(pool: &CandidatePool, r: &RankedSubset) -> Self {
        let m = &pool.members[r.indices[0]];
        MemberScore {
            member_id: m.member_id.clone(),
            model_tag: m.model_tag.clone(),
            score: sig9(r.score.score),
            mean_dice: r.report.aggregate.mean_dice,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::Checkpoint;
    use crate::volume::{Grid, Volume};

    fn member(id: &str) -> EnsembleMember {
        EnsembleMember {
            member_id: id.into(),
            model_tag: "t".into(),
            fold: 0,
            checkpoint: Checkpoint::Best,
            path: format!("{id}.nii.gz").into(),
        }
    }

    fn raw(v: [f64; 5]) -> [Option<f64>; 5] {
        v.map(Some)
    }

    #[test]
    fn single_report_degenerate() {
        let s = normalize_raw(&[raw([0.5, 0.5, 3.0, 9.0, 100.0])], &MetricWeights::default(), Normalization::Minmax)
            .unwrap();
        assert_eq!(s[0].normalized(), [1.0; 5]);
        assert_eq!(s[0].score, 1.0);
    }

    #[test]
    fn dominance_by_hand() {
        let a = raw([0.8, 0.9, 1.0, 3.0, 10.0]);
        let b = raw([0.6, 0.7, 2.0, 5.0, 20.0]);
        for norm in [Normalization::Minmax, Normalization::Rank] {
            let s = normalize_raw(&[b, a], &MetricWeights::default(), norm).unwrap();
            assert_eq!(s[1].score, 1.0);
            assert_eq!(s[0].score, 0.0);
        }
    }

    #[test]
    fn affine_transform_keeps_ranking() {
        let rows = vec![
            raw([0.8, 0.5, 4.0, 3.0, 10.0]),
            raw([0.6, 0.9, 2.0, 5.0, 25.0]),
            raw([0.7, 0.7, 3.0, 4.5, 15.0]),
        ];
        let base = normalize_raw(&rows, &MetricWeights::default(), Normalization::Minmax).unwrap();
        let shifted: Vec<_> = rows
            .iter()
            .map(|r| {
                let mut r = *r;
                r[2] = r[2].map(|x| 3.5 * x + 7.0);
                r
            })
            .collect();
        let other = normalize_raw(&shifted, &MetricWeights::default(), Normalization::Minmax).unwrap();
        for (x, y) in base.iter().zip(&other) {
            assert!((x.score - y.score).abs() < 1e-12);
        }
    }

    #[test]
    fn undefined_metric_counts_as_worst() {
        let mut b = raw([0.6, 0.7, 2.0, 5.0, 20.0]);
        b[2] = None;
        let s = normalize_raw(&[raw([0.6, 0.7, 3.0, 5.0, 20.0]), b], &MetricWeights::default(), Normalization::Minmax)
            .unwrap();
        assert_eq!(s[0].masd, 1.0);
        assert_eq!(s[1].masd, 0.0);
    }

    #[test]
    fn weight_validation() {
        assert!(MetricWeights([0.5, 0.5, 0.0, 0.0, 0.0]).validate().is_ok());
        assert!(MetricWeights([0.5, 0.6, 0.0, 0.0, 0.0]).validate().is_err());
        assert!(MetricWeights([1.2, -0.2, 0.0, 0.0, 0.0]).validate().is_err());
    }

    #[test]
    fn counts() {
        assert_eq!(binomial(8, 4), 70);
        assert_eq!(subset_count(8, 1, 8), 255);
        assert_eq!(subset_count(40, 1, 40), (1u128 << 40) - 1);
        let mut v = Vec::new();
        combinations(4, 2, &mut v);
        assert_eq!(v, vec![vec![0, 1], vec![0, 2], vec![0, 3], vec![1, 2], vec![1, 3], vec![2, 3]]);
    }

    fn labels(g: Grid, on: impl Fn(usize) -> bool) -> LabelVolume {
        Volume::from_vec(g, (0..g.len()).map(|i| if on(i) { 2 } else { 0 }).collect()).unwrap()
    }

    fn dominance_pool() -> CandidatePool {
        let g = Grid::new([8, 8, 8], [1.0; 3]).unwrap();
        let truth = |i: usize| {
            let [x, y, z] = g.coords(i);
            (2..6).contains(&x) && (2..6).contains(&y) && (2..6).contains(&z)
        };
        let reference = labels(g, truth);
        let good = MemberPrediction::Labels(reference.clone());
        let bad = MemberPrediction::Labels(labels(g, |i| truth(i) && g.coords(i)[0] < 4));
        CandidatePool::new(
            vec![member("b"), member("a")],
            vec![PoolCase {
                case_id: "c1".into(),
                reference,
                predictions: vec![bad, good],
            }],
        )
        .unwrap()
    }

    #[test]
    fn dominant_single_member_wins() {
        let pool = dominance_pool();
        let opts = SearchOptions {
            mode: EnsembleMode::Majority,
            ..SearchOptions::default()
        };
        let ranked = search_subsets(&pool, 1, 1, &opts).unwrap();
        assert_eq!(ranked[0].members, vec!["a"]);
        assert_eq!(ranked[0].score.score, 1.0);
        let beam = beam_search_subsets(&pool, 1, 1, &opts).unwrap();
        assert_eq!(beam[0].members, vec!["a"]);
    }

    #[test]
    fn identical_members_tie_break() {
        let g = Grid::new([6, 6, 6], [1.0; 3]).unwrap();
        let reference = labels(g, |i| g.coords(i)[0] > 2);
        let pred = MemberPrediction::Labels(labels(g, |i| g.coords(i)[0] > 3));
        let pool = CandidatePool::new(
            vec![member("m2"), member("m0"), member("m1")],
            vec![PoolCase {
                case_id: "c".into(),
                reference,
                predictions: vec![pred.clone(), pred.clone(), pred],
            }],
        )
        .unwrap();
        let opts = SearchOptions {
            mode: EnsembleMode::Majority,
            ..SearchOptions::default()
        };
        let ranked = search_subsets(&pool, 1, 3, &opts).unwrap();
        assert_eq!(ranked.len(), 7);
        assert!(ranked.iter().all(|r| r.score.score == 1.0));
        assert_eq!(ranked[0].members, vec!["m0"]);
        assert_eq!(ranked[6].members, vec!["m0", "m1", "m2"]);
    }

    #[test]
    fn budget_enforced_and_cache_used() {
        let pool = dominance_pool();
        let opts = SearchOptions {
            mode: EnsembleMode::Majority,
            budget: 2,
            ..SearchOptions::default()
        };
        assert!(matches!(
            search_subsets(&pool, 1, 2, &opts),
            Err(Error::BudgetExceeded { count: 3, budget: 2 })
        ));
        search_subsets(&pool, 1, 1, &opts).unwrap();
        assert_eq!(pool.cache_len(), 2);
        search_subsets(&pool, 1, 1, &opts).unwrap();
        assert_eq!(pool.cache_len(), 2);
        assert!(search_subsets(&pool, 0, 1, &opts).is_err());
        assert!(search_subsets(&pool, 1, 3, &opts).is_err());
    }

    #[test]
    fn spec_for_sorts_members() {
        let pool = dominance_pool();
        let spec = pool.spec_for(&[0, 1], EnsembleMode::Majority);
        let ids: Vec<&str> = spec.members.iter().map(|m| m.member_id.as_str()).collect();
        assert_eq!(ids, ["a", "b"]);
    }
}
