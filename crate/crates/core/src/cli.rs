//! The `segkit` command line.
//!
//! Exit codes: 0 success, 1 validation or usage error, 2 I/O error. Data goes
//! to stdout and diagnostics to stderr; `--json-errors` turns the stderr
//! diagnostic into `{"error": <kind>, "message": <text>}`.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use toml::{Table, Value};

use crate::augment::{apply_pipeline, AppliedTransform, AugmentPreset, PresetName};
use crate::config::{resolve_config, RunConfig};
use crate::ensemble::{combine, EnsembleSpec};
use crate::error::{Error, Result};
use crate::geometry::{resample_image, resample_labels, ImageOrder, LabelOrder, ResamplePlan};
use crate::io::{self, Manifest, ManifestRow};
use crate::metrics::{aggregate_cohort, evaluate_case, CaseMetrics, CohortReport};
use crate::schedules::{lr_curve_csv, ScheduleFamily, ScheduleSpec, DEFAULT_POLY_EXPONENT};
use crate::selection::{
    beam_search_subsets, rank_members, search_subsets, subset_count, CandidatePool, MemberScore,
    MetricWeights, RankedSubset, SearchOptions, SelectionEcho, SelectionReport,
};

pub const TOOL: &str = "segkit";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(name = "segkit", version, about = "Evaluate, resample, augment, ensemble and select 3D segmentations")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Ignore unknown keys in the config file.
    #[arg(long, global = true)]
    no_strict: bool,
    /// Print errors as JSON objects on stderr.
    #[arg(long, global = true)]
    json_errors: bool,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Label values accepted in label maps, comma separated.
    #[arg(long, global = true, value_delimiter = ',', value_name = "IDS")]
    label_set: Option<Vec<u16>>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PolicyArg {
    Penalize,
    Exclude,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum UnitArg {
    Mm3,
    Ml,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum NormArg {
    Minmax,
    Rank,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    ProbAvg,
    Majority,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FamilyArg {
    Poly,
    PolyWarmup,
    CosineWarmup,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Label id evaluated as the foreground.
    #[arg(long)]
    label: Option<u16>,
    /// Surface Dice tolerance in mm.
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long, value_enum)]
    empty_policy: Option<PolicyArg>,
    #[arg(long, value_enum)]
    volume_unit: Option<UnitArg>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Resample an image and/or label map to a target spacing.
    Resample {
        #[arg(long)]
        image: Option<PathBuf>,
        #[arg(long)]
        seg: Option<PathBuf>,
        #[arg(long, requires = "image")]
        out_image: Option<PathBuf>,
        #[arg(long, requires = "seg")]
        out_seg: Option<PathBuf>,
        #[arg(long, num_args = 3, value_names = ["X", "Y", "Z"])]
        spacing: Option<Vec<f64>>,
        #[arg(long)]
        image_order: Option<u8>,
        #[arg(long)]
        label_order: Option<u8>,
        /// Clamp tricubic output to the input intensity range.
        #[arg(long)]
        clamp_cubic: bool,
    },
    /// Apply a seeded augmentation pipeline to an image and label map.
    Augment {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        seg: PathBuf,
        #[arg(long)]
        out_image: PathBuf,
        #[arg(long)]
        out_seg: PathBuf,
        /// Built-in preset: da5, da5ord0, da5segord0 or default.
        #[arg(long, default_value = "da5", conflicts_with = "preset_file")]
        preset: String,
        /// TOML preset file.
        #[arg(long)]
        preset_file: Option<PathBuf>,
    },
    /// Fuse member predictions listed in an ensemble spec.
    Ensemble {
        #[arg(long)]
        spec: PathBuf,
        /// Output label map for a single case.
        #[arg(long, conflicts_with_all = ["manifest", "out_dir"], required_unless_present = "manifest")]
        output: Option<PathBuf>,
        /// Substituted for `{case_id}` in member paths.
        #[arg(long, requires = "output")]
        case_id: Option<String>,
        /// CSV with `case_id` and `reference` columns; one output per case.
        #[arg(long, requires = "out_dir")]
        manifest: Option<PathBuf>,
        #[arg(long, requires = "manifest")]
        out_dir: Option<PathBuf>,
        /// Override the ensemble spec's fusion mode.
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
    },
    /// Metrics for one reference/prediction pair.
    EvalCase {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Metrics for every case of a manifest plus cohort aggregates.
    EvalCohort {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        eval: EvalArgs,
        /// Also write the per-case table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Also write the bare cohort report JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Search member subsets for the best-balanced ensemble.
    Select {
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 1)]
        size_min: usize,
        /// Defaults to the pool size.
        #[arg(long)]
        size_max: Option<usize>,
        /// Fall back to beam search of this width when the subset count
        /// exceeds the budget.
        #[arg(long)]
        beam: Option<usize>,
        #[arg(long, value_enum)]
        norm: Option<NormArg>,
        /// Metric weights: dice, surface dice, MASD, HD95, volume RMSE.
        #[arg(long, num_args = 5, value_names = ["DICE", "SDICE", "MASD", "HD95", "RMSE"])]
        weights: Option<Vec<f64>>,
        #[arg(long)]
        budget: Option<u64>,
        /// Number of ranked subsets to keep.
        #[arg(long)]
        top: Option<usize>,
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Learning-rate curve as `epoch,lr` CSV.
    LrCurve {
        #[arg(long, value_enum, default_value = "poly")]
        family: FamilyArg,
        #[arg(long)]
        lr0: f64,
        #[arg(long)]
        max_epochs: u32,
        #[arg(long, default_value_t = DEFAULT_POLY_EXPONENT)]
        exponent: f64,
        /// Required for the warmup families.
        #[arg(long)]
        warmup_epochs: Option<u32>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Resample { .. } => "resample",
            Command::Augment { .. } => "augment",
            Command::Ensemble { .. } => "ensemble",
            Command::EvalCase { .. } => "eval-case",
            Command::EvalCohort { .. } => "eval-cohort",
            Command::Select { .. } => "select",
            Command::LrCurve { .. } => "lr-curve",
        }
    }
}

fn str_value(v: impl ValueEnum) -> Value {
    let name = v.to_possible_value().expect("no skipped variants").get_name().replace('-', "_");
    Value::String(name)
}

fn float_array(v: &[f64]) -> Value {
    Value::Array(v.iter().map(|&x| Value::Float(x)).collect())
}

/// Config entries set by flags.
fn flag_table(g: &GlobalArgs, cmd: &Command) -> Table {
    let mut t = Table::new();
    if let Some(s) = g.seed {
        t.insert("seed".into(), Value::Integer(s as i64));
    }
    if let Some(j) = g.jobs {
        t.insert("jobs".into(), Value::Integer(j as i64));
    }
    if let Some(l) = &g.label_set {
        t.insert("labels".into(), Value::Array(l.iter().map(|&x| Value::Integer(x as i64)).collect()));
    }
    let eval = |e: &EvalArgs, t: &mut Table| {
        if let Some(l) = e.label {
            t.insert("label_id".into(), Value::Integer(l as i64));
        }
        if let Some(x) = e.tolerance {
            t.insert("tolerance_mm".into(), Value::Float(x));
        }
        if let Some(p) = e.empty_policy {
            t.insert("empty_policy".into(), str_value(p));
        }
        if let Some(u) = e.volume_unit {
            t.insert("volume_unit".into(), str_value(u));
        }
    };
    match cmd {
        Command::Resample {
            spacing,
            image_order,
            label_order,
            ..
        } => {
            if let Some(s) = spacing {
                t.insert("spacing".into(), float_array(s));
            }
            if let Some(o) = image_order {
                t.insert("image_order".into(), Value::Integer(*o as i64));
            }
            if let Some(o) = label_order {
                t.insert("label_order".into(), Value::Integer(*o as i64));
            }
        }
        Command::EvalCase { eval: e, .. } | Command::EvalCohort { eval: e, .. } => eval(e, &mut t),
        Command::Select {
            eval: e,
            norm,
            weights,
            budget,
            top,
            ..
        } => {
            eval(e, &mut t);
            if let Some(n) = norm {
                t.insert("norm".into(), str_value(*n));
            }
            if let Some(w) = weights {
                t.insert("metric_weights".into(), float_array(w));
            }
            if let Some(b) = budget {
                t.insert("budget".into(), Value::Integer(*b as i64));
            }
            if let Some(n) = top {
                t.insert("top_n".into(), Value::Integer(*n as i64));
            }
        }
        _ => {}
    }
    t
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

fn digest(path: &Path) -> Result<FileDigest> {
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: io::file_digest(path)?,
    })
}

/// Common wrapper of every JSON output.
#[derive(Debug, Serialize)]
pub struct Envelope<'a, T: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'a str,
    pub config: &'a RunConfig,
    pub inputs: Vec<FileDigest>,
    pub result: T,
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("output serializes");
    s.push('\n');
    s
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    command: &'static str,
    out: &'a mut Vec<u8>,
}

impl Ctx<'_> {
    fn emit<T: Serialize>(&mut self, inputs: Vec<FileDigest>, result: T) -> Result<String> {
        let text = to_json(&Envelope {
            tool: TOOL,
            version: VERSION,
            command: self.command,
            config: self.cfg,
            inputs,
            result,
        });
        self.print(&text)?;
        Ok(text)
    }

    fn print(&mut self, text: &str) -> Result<()> {
        self.out
            .write_all(text.as_bytes())
            .map_err(|e| Error::io("<stdout>", e))
    }
}

#[derive(Serialize)]
struct ResampleResult {
    plan: ResamplePlan,
    outputs: Vec<FileDigest>,
}

#[derive(Serialize)]
struct AugmentResult {
    preset: AugmentPreset,
    applied: Vec<AppliedTransform>,
    outputs: Vec<FileDigest>,
}

#[derive(Serialize)]
struct EnsembleResult {
    spec: EnsembleSpec,
    outputs: Vec<FileDigest>,
}

#[derive(Serialize)]
struct SelectResult<'a> {
    selection: &'a SelectionReport,
    winner_spec: String,
    winner_report: String,
}

fn run(cmd: Command, ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    match cmd {
        Command::Resample {
            image,
            seg,
            out_image,
            out_seg,
            clamp_cubic,
            ..
        } => {
            if image.is_none() && seg.is_none() {
                return Err(Error::InvalidParameter("give --image and/or --seg".into()));
            }
            if image.is_some() != out_image.is_some() || seg.is_some() != out_seg.is_some() {
                return Err(Error::InvalidParameter(
                    "each input needs its output path (--out-image, --out-seg)".into(),
                ));
            }
            let image_order = ImageOrder::try_from(cfg.image_order)?;
            let label_order = LabelOrder::try_from(cfg.label_order)?;
            let img = image.as_deref().map(io::read_image).transpose()?;
            let lab = seg
                .as_deref()
                .map(|p| io::read_labels(p, &cfg.label_set()))
                .transpose()?;
            let grid = *img
                .as_ref()
                .map(|v| v.grid())
                .or(lab.as_ref().map(|v| v.grid()))
                .expect("one input");
            if let (Some(i), Some(l)) = (&img, &lab) {
                i.grid().ensure_matches(l.grid())?;
            }
            let plan = ResamplePlan::for_grid(&grid, cfg.spacing, image_order, label_order)?
                .with_clamp_cubic(clamp_cubic);
            let mut inputs = Vec::new();
            let mut outputs = Vec::new();
            if let (Some(v), Some(src), Some(dst)) = (&img, &image, &out_image) {
                inputs.push(digest(src)?);
                io::write_volume(&resample_image(v, &plan)?, dst)?;
                outputs.push(digest(dst)?);
            }
            if let (Some(v), Some(src), Some(dst)) = (&lab, &seg, &out_seg) {
                inputs.push(digest(src)?);
                io::write_volume(&resample_labels(v, &plan)?, dst)?;
                outputs.push(digest(dst)?);
            }
            ctx.emit(inputs, ResampleResult { plan, outputs })?;
        }
        Command::Augment {
            image,
            seg,
            out_image,
            out_seg,
            preset,
            preset_file,
        } => {
            let mut preset = match preset_file {
                Some(p) => AugmentPreset::load(p)?,
                None => AugmentPreset::builtin(PresetName::parse(&preset)?, 0),
            };
            preset.seed = cfg.seed;
            let img = io::read_image(&image)?;
            let lab = io::read_labels(&seg, &cfg.label_set())?;
            let (img2, lab2, applied) = apply_pipeline(&img, &lab, &preset)?;
            io::write_volume(&img2, &out_image)?;
            io::write_volume(&lab2, &out_seg)?;
            let inputs = vec![digest(&image)?, digest(&seg)?];
            let outputs = vec![digest(&out_image)?, digest(&out_seg)?];
            ctx.emit(
                inputs,
                AugmentResult {
                    preset,
                    applied,
                    outputs,
                },
            )?;
        }
        Command::Ensemble {
            spec: spec_path,
            output,
            case_id,
            manifest,
            out_dir,
            mode,
        } => {
            let mut spec = EnsembleSpec::load(&spec_path)?;
            if let Some(m) = mode {
                spec.mode = match m {
                    ModeArg::ProbAvg => crate::ensemble::EnsembleMode::ProbAvg,
                    ModeArg::Majority => crate::ensemble::EnsembleMode::Majority,
                };
            }
            let labels = cfg.label_set();
            let mut inputs = vec![digest(&spec_path)?];
            let mut outputs = Vec::new();
            if let Some(out) = output {
                for m in &spec.members {
                    inputs.push(digest(&m.path_for(case_id.as_deref()))?);
                }
                let fused = combine(&spec, case_id.as_deref(), &labels)?;
                io::write_volume(&fused, &out)?;
                outputs.push(digest(&out)?);
            } else {
                let (manifest, out_dir) = (manifest.expect("clap"), out_dir.expect("clap"));
                inputs.push(digest(&manifest)?);
                let refs = io::read_references(&manifest)?;
                create_dir(&out_dir)?;
                let fused = refs
                    .par_iter()
                    .map(|r| combine(&spec, Some(&r.case_id), &labels))
                    .collect::<Result<Vec<_>>>()?;
                let mut rows = Vec::new();
                for (r, v) in refs.iter().zip(&fused) {
                    for m in &spec.members {
                        inputs.push(digest(&m.path_for(Some(&r.case_id)))?);
                    }
                    let name = format!("{}.nii.gz", r.case_id);
                    let dst = out_dir.join(&name);
                    io::write_volume(v, &dst)?;
                    outputs.push(digest(&dst)?);
                    rows.push(ManifestRow {
                        case_id: r.case_id.clone(),
                        reference: std::path::absolute(&r.reference)
                            .map_err(|e| Error::io(&r.reference, e))?,
                        prediction: PathBuf::from(name),
                    });
                }
                let out_manifest = out_dir.join("manifest.csv");
                Manifest { rows }.write_csv(&out_manifest)?;
                outputs.push(digest(&out_manifest)?);
            }
            ctx.emit(inputs, EnsembleResult { spec, outputs })?;
        }
        Command::EvalCase { reference, pred, .. } => {
            let labels = cfg.label_set();
            let r = io::read_labels(&reference, &labels)?;
            let p = io::read_labels(&pred, &labels)?;
            let case_id = pred
                .file_name()
                .map(|n| n.to_string_lossy().trim_end_matches(".gz").trim_end_matches(".nii").to_string())
                .unwrap_or_default();
            let m: CaseMetrics = evaluate_case(&case_id, &r, &p, &cfg.eval())?;
            ctx.emit(vec![digest(&reference)?, digest(&pred)?], m)?;
        }
        Command::EvalCohort {
            manifest,
            csv,
            report,
            ..
        } => {
            let rep = eval_cohort(&manifest, cfg)?;
            let mut inputs = vec![digest(&manifest)?];
            let m = io::read_manifest(&manifest)?;
            for row in &m.rows {
                inputs.push(digest(&row.reference)?);
                inputs.push(digest(&row.prediction)?);
            }
            if let Some(p) = csv {
                write_file(&p, &rep.to_csv())?;
            }
            if let Some(p) = report {
                write_file(&p, &(rep.to_json() + "\n"))?;
            }
            ctx.emit(inputs, &rep)?;
        }
        Command::Select {
            pool: pool_path,
            out_dir,
            size_min,
            size_max,
            beam,
            ..
        } => {
            let (pool, mode) = CandidatePool::load(&pool_path, &cfg.label_set())?;
            let size_max = size_max.unwrap_or(pool.len());
            let opts = SearchOptions {
                mode,
                weights: MetricWeights(cfg.metric_weights),
                norm: cfg.norm,
                eval: cfg.eval(),
                budget: cfg.budget as u128,
            };
            let exhaustive = subset_count(pool.len(), size_min, size_max.min(pool.len()));
            let (strategy, ranked): (String, Vec<RankedSubset>) = match beam {
                Some(w) if exhaustive > opts.budget => {
                    if size_min != 1 {
                        return Err(Error::InvalidParameter(
                            "beam search starts from single members; use --size-min 1".into(),
                        ));
                    }
                    (format!("beam:{w}"), beam_search_subsets(&pool, size_max, w, &opts)?)
                }
                _ => ("exhaustive".into(), search_subsets(&pool, size_min, size_max, &opts)?),
            };
            let members = rank_members(&pool, &opts)?
                .iter()
                .map(|r| MemberScore::from_ranked(&pool, r))
                .collect();
            let winner = ranked.first().expect("at least one subset").clone();
            let selection = SelectionReport {
                options: SelectionEcho {
                    strategy,
                    size_min,
                    size_max,
                    mode,
                    weights: opts.weights.0,
                    norm: opts.norm,
                    eval: opts.eval,
                    budget: opts.budget,
                },
                evaluated: ranked.len(),
                ranked: ranked.into_iter().take(cfg.top_n.max(1)).collect(),
                members,
            };
            create_dir(&out_dir)?;
            let spec_path = out_dir.join("winner.toml");
            write_file(&spec_path, &pool.spec_for(&winner.indices, mode).to_toml_string())?;
            let report_path = out_dir.join("winner_report.json");
            write_file(&report_path, &(winner.report.to_json() + "\n"))?;
            let mut inputs = vec![digest(&pool_path)?];
            for c in pool.cases() {
                for m in pool.members() {
                    inputs.push(digest(&m.path_for(Some(&c.case_id)))?);
                }
            }
            let result = SelectResult {
                selection: &selection,
                winner_spec: spec_path.display().to_string(),
                winner_report: report_path.display().to_string(),
            };
            let text = ctx.emit(inputs, result)?;
            write_file(&out_dir.join("ranked.json"), &text)?;
        }
        Command::LrCurve {
            family,
            lr0,
            max_epochs,
            exponent,
            warmup_epochs,
        } => {
            let family = match family {
                FamilyArg::Poly => ScheduleFamily::Poly,
                FamilyArg::PolyWarmup => ScheduleFamily::PolyWarmup,
                FamilyArg::CosineWarmup => ScheduleFamily::CosineWarmup,
            };
            let warmup_epochs = match (family, warmup_epochs) {
                (ScheduleFamily::Poly, w) => w.unwrap_or(0),
                (_, Some(w)) => w,
                (_, None) => {
                    return Err(Error::InvalidParameter(
                        "warmup families need --warmup-epochs".into(),
                    ))
                }
            };
            let spec = ScheduleSpec {
                family,
                lr0,
                max_epochs,
                exponent,
                warmup_epochs,
            };
            ctx.print(&lr_curve_csv(&spec)?)?;
        }
    }
    Ok(())
}

/// Evaluates every manifest case (in parallel, order preserved) and aggregates.
pub fn eval_cohort(manifest: &Path, cfg: &RunConfig) -> Result<CohortReport> {
    let m = io::read_manifest(manifest)?;
    let labels = cfg.label_set();
    let eval = cfg.eval();
    let cases = m
        .rows
        .par_iter()
        .map(|row| {
            let r = io::read_labels(&row.reference, &labels)?;
            let p = io::read_labels(&row.prediction, &labels)?;
            evaluate_case(&row.case_id, &r, &p, &eval)
        })
        .collect::<Result<Vec<_>>>()?;
    aggregate_cohort(cases, &eval)
}

#[derive(Serialize)]
struct ErrorObject<'a> {
    error: &'a str,
    message: String,
}

fn report_error(err: &mut dyn Write, json: bool, kind: &str, message: String) {
    let text = if json {
        serde_json::to_string(&ErrorObject { error: kind, message }).expect("error serializes")
    } else {
        format!("error: {message}")
    };
    let _ = writeln!(err, "{text}");
}

/// Runs the command line with an explicit environment (only `SEGKIT_*`
/// variables are read) and returns the exit code.
pub fn dispatch_with_env<I, T>(
    argv: I,
    env: Vec<(String, String)>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let json = argv.iter().any(|a| a == "--json-errors");
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{}", e.render());
                return 0;
            }
            if json {
                report_error(err, true, "usage", e.render().to_string());
            } else {
                let _ = write!(err, "{}", e.render());
            }
            return 1;
        }
    };
    let flags = flag_table(&cli.global, &cli.command);
    let result = resolve_config(cli.global.config.as_deref(), env, flags, !cli.global.no_strict)
        .and_then(|cfg| {
            let threads = rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.jobs)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            let command = cli.command.name();
            let mut buf = Vec::new();
            let r = threads.install(|| {
                let mut ctx = Ctx {
                    cfg: &cfg,
                    command,
                    out: &mut buf,
                };
                run(cli.command, &mut ctx)
            });
            out.write_all(&buf).map_err(|e| Error::io("<stdout>", e))?;
            r
        });
    match result {
        Ok(()) => 0,
        Err(e) => {
            report_error(err, json, e.kind(), e.to_string());
            if e.is_io() {
                2
            } else {
                1
            }
        }
    }
}

/// Runs the command line against the process environment.
pub fn dispatch<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let env = std::env::vars().filter(|(k, _)| k.starts_with(crate::config::ENV_PREFIX)).collect();
    dispatch_with_env(argv, env, out, err)
}
