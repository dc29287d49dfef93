//! Command-line surface. Every subcommand writes its outputs, a flat
//! `metrics.csv` and a `run.json` into `--out`.

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use spurious_core::dataset::group_counts;
use spurious_core::gwae::{train_gwae, Backbone, GwaeConfig, GwaeDims, Reconstruction};
use spurious_core::harness::{bootstrap, upper_bound, ExperimentResult};
use spurious_core::pca::fit_pca;
use spurious_core::pipeline::{run_pipeline, sweep, Artifacts, PipelineSpec, SweepKind};
use spurious_core::probe::{evaluate, fit_probe};
use spurious_core::spuriousness::{random_rotation, spuriousness_scores, top_n_core};
use spurious_core::synth::{generate, SynthConfig};
use spurious_core::AttributionSummary;

use crate::error::{CliError, CliResult, EXIT_OK, EXIT_VALIDATION};
use crate::formats::{load_summary, save_dataset, save_map};
use crate::manifest::{load_manifest, write_manifest, LoadedManifest, Manifest, SplitEntry, MANIFEST_VERSION};
use crate::model_io::{load_model, save_model};
use crate::report::{read_sweep_csv, render_text, write_csv, write_sweep_csv, write_text};
use crate::run::{hash_inputs, metric_differences, read_json, write_json, write_metrics_csv, RunFile, METRICS_FILE, RUN_FILE};

#[derive(Debug, Parser)]
#[command(name = "spurious", version, about = "Spurious-feature scoring, group-aware autoencoders and probe evaluation on frozen embeddings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

fn default_out() -> PathBuf {
    PathBuf::from(".")
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct Common {
    /// Master seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Manifest naming the dataset splits, attribution summaries and models.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, default_value = ".")]
    #[serde(skip, default = "default_out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Default, Args, Serialize, Deserialize)]
pub struct ExtraArtifacts {
    /// Additional autoencoder directory for pipeline specs.
    #[arg(long = "model", value_name = "ID=DIR")]
    pub models: Vec<String>,
    /// Additional attribution summary for pipeline specs.
    #[arg(long = "summary", value_name = "ID=PATH")]
    pub summaries: Vec<String>,
}

/// Inclusive range `start:end:step` (or `start:end`, or a single value).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NRange {
    pub start: usize,
    pub end: usize,
    pub step: usize,
}

impl NRange {
    pub fn values(&self) -> Vec<usize> {
        (self.start..=self.end).step_by(self.step).collect()
    }
}

impl FromStr for NRange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |p: &str| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}"));
        let (start, end, step) = match parts.as_slice() {
            [a] => (num(a)?, num(a)?, 1),
            [a, b] => (num(a)?, num(b)?, 1),
            [a, b, c] => (num(a)?, num(b)?, num(c)?),
            _ => return Err("expected start:end:step".into()),
        };
        if start == 0 || step == 0 || end < start {
            return Err("range needs 0 < start <= end and a positive step".into());
        }
        Ok(Self { start, end, step })
    }
}

impl fmt::Display for NRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.start, self.end, self.step)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackboneArg {
    Resnet50,
    Regnety,
    Dinov2,
}

impl From<BackboneArg> for Backbone {
    fn from(b: BackboneArg) -> Self {
        match b {
            BackboneArg::Resnet50 => Backbone::Resnet50,
            BackboneArg::Regnety => Backbone::Regnety,
            BackboneArg::Dinov2 => Backbone::Dinov2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReconstructionArg {
    Norm,
    Squared,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepArg {
    Captum,
    Pca,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ProbeArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    /// Split to fit on.
    #[arg(long, default_value = "train")]
    pub train: String,
    /// Split to evaluate on.
    #[arg(long, default_value = "test")]
    pub test: String,
    /// Restrict the probe to these feature columns.
    #[arg(long, value_delimiter = ',')]
    pub features: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ScoreArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    /// Attribution id from the manifest, or a summary file.
    #[arg(long)]
    pub summary: String,
    /// Also list the N least spurious neurons.
    #[arg(long)]
    pub top: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct RotateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    /// Dimension; defaults to the manifest's.
    #[arg(long)]
    pub dim: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct GwaeTrainArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[arg(long, default_value = "train")]
    pub train: String,
    /// Full training configuration (JSON); flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Label-part size preset.
    #[arg(long, value_enum)]
    pub backbone: Option<BackboneArg>,
    /// Label-part size; the attribute part gets the same size.
    #[arg(long)]
    pub label_dim: Option<usize>,
    /// Explicit part sizes as Y,C,N.
    #[arg(long, value_delimiter = ',')]
    pub dims: Option<Vec<usize>>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub rec_weight: Option<f64>,
    #[arg(long)]
    pub hsic_weight: Option<f64>,
    #[arg(long, value_enum)]
    pub reconstruction: Option<ReconstructionArg>,
    /// Train on raw rather than standardized features.
    #[arg(long)]
    pub no_standardize: bool,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct GwaeExportArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    /// Model id from the manifest, or a model directory.
    #[arg(long)]
    pub model: String,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct PcaArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[arg(long, default_value = "train")]
    pub split: String,
    /// Components to export; all by default.
    #[arg(long)]
    pub n: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct PipelineArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[command(flatten)]
    #[serde(flatten)]
    pub extra: ExtraArtifacts,
    /// Pipeline spec (JSON); the raw-feature probe by default.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, default_value = "train")]
    pub train: String,
    #[arg(long, default_value = "test")]
    pub test: String,
    /// Repeat on this many bootstrap resamples and report mean and std.
    #[arg(long)]
    pub bootstrap: Option<usize>,
    /// With --bootstrap, reuse the unchanged training set every time.
    #[arg(long)]
    pub no_resample: bool,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SweepArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[command(flatten)]
    #[serde(flatten)]
    pub extra: ExtraArtifacts,
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, default_value = "train")]
    pub train: String,
    #[arg(long, default_value = "test")]
    pub test: String,
    /// Which step's N to vary.
    #[arg(long, value_enum)]
    pub transform: SweepArg,
    /// Values of N as start:end:step, inclusive.
    #[arg(long)]
    pub n: NRange,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct UpperBoundArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[command(flatten)]
    #[serde(flatten)]
    pub extra: ExtraArtifacts,
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub test: String,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct BootstrapArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[command(flatten)]
    #[serde(flatten)]
    pub extra: ExtraArtifacts,
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, default_value = "train")]
    pub train: String,
    #[arg(long, default_value = "test")]
    pub test: String,
    #[arg(long, default_value_t = 5)]
    pub reps: usize,
    /// Reuse the unchanged training set for every repetition.
    #[arg(long)]
    pub no_resample: bool,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SynthGenArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    /// Generator configuration (JSON); flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub k_core: Option<usize>,
    #[arg(long)]
    pub k_sp: Option<usize>,
    #[arg(long)]
    pub k_noise: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub core_spread: Option<f64>,
    #[arg(long)]
    pub kappa: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ReportArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    /// Experiment result files (`result.json` from pipeline, bootstrap or upper-bound).
    #[arg(long, num_args = 1.., required = true)]
    pub results: Vec<PathBuf>,
    /// Sweep CSV to copy alongside as the curve data.
    #[arg(long)]
    pub sweep: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct RerunArgs {
    /// A `run.json` written by an earlier command.
    pub run_file: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, default_value = ".")]
    #[serde(skip, default = "default_out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum Command {
    /// Fit a logistic probe on one split and evaluate it on another.
    Probe(ProbeArgs),
    /// Per-neuron spuriousness scores from an attribution summary.
    Score(ScoreArgs),
    /// Emit a seeded random rotation map.
    Rotate(RotateArgs),
    /// Train a group-aware linear autoencoder.
    GwaeTrain(GwaeTrainArgs),
    /// Export a trained encoder as one affine map on raw features.
    GwaeExport(GwaeExportArgs),
    /// Fit PCA on a split and emit the projection map.
    Pca(PcaArgs),
    /// Run a pipeline spec, optionally bootstrapped.
    Pipeline(PipelineArgs),
    /// Vary the N of a pipeline step and record the curve.
    Sweep(SweepArgs),
    /// Cross-validated probe on the test set.
    UpperBound(UpperBoundArgs),
    /// Repeat a pipeline on bootstrap resamples of the training set.
    Bootstrap(BootstrapArgs),
    /// Generate a synthetic dataset with planted factors.
    SynthGen(SynthGenArgs),
    /// Render experiment results as tables.
    Report(ReportArgs),
    /// Re-execute a recorded run and check that its metrics reproduce.
    Rerun(RerunArgs),
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

fn absolute_opt(p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        *path = absolute(path);
    }
}

/// Rewrites `value` to an absolute path when it names an existing file.
fn absolute_if_exists(value: &mut String) {
    let p = Path::new(value.as_str());
    if p.exists() {
        *value = absolute(p).to_string_lossy().into_owned();
    }
}

fn absolute_pairs(values: &mut [String]) {
    for v in values {
        if let Some((id, path)) = v.split_once('=') {
            *v = format!("{id}={}", absolute(Path::new(path)).display());
        }
    }
}

impl Command {
    pub fn common(&self) -> Option<&Common> {
        Some(match self {
            Self::Probe(a) => &a.common,
            Self::Score(a) => &a.common,
            Self::Rotate(a) => &a.common,
            Self::GwaeTrain(a) => &a.common,
            Self::GwaeExport(a) => &a.common,
            Self::Pca(a) => &a.common,
            Self::Pipeline(a) => &a.common,
            Self::Sweep(a) => &a.common,
            Self::UpperBound(a) => &a.common,
            Self::Bootstrap(a) => &a.common,
            Self::SynthGen(a) => &a.common,
            Self::Report(a) => &a.common,
            Self::Rerun(_) => return None,
        })
    }

    fn common_mut(&mut self) -> Option<&mut Common> {
        Some(match self {
            Self::Probe(a) => &mut a.common,
            Self::Score(a) => &mut a.common,
            Self::Rotate(a) => &mut a.common,
            Self::GwaeTrain(a) => &mut a.common,
            Self::GwaeExport(a) => &mut a.common,
            Self::Pca(a) => &mut a.common,
            Self::Pipeline(a) => &mut a.common,
            Self::Sweep(a) => &mut a.common,
            Self::UpperBound(a) => &mut a.common,
            Self::Bootstrap(a) => &mut a.common,
            Self::SynthGen(a) => &mut a.common,
            Self::Report(a) => &mut a.common,
            Self::Rerun(_) => return None,
        })
    }

    pub fn set_out(&mut self, out: PathBuf) {
        match self {
            Self::Rerun(a) => a.out = out,
            other => other.common_mut().expect("non-rerun command").out = out,
        }
    }

    /// Makes every input path absolute so the recorded command can be
    /// replayed from any working directory.
    pub fn absolutize(&mut self) {
        if let Some(c) = self.common_mut() {
            absolute_opt(&mut c.manifest);
        }
        match self {
            Self::Score(a) => absolute_if_exists(&mut a.summary),
            Self::GwaeTrain(a) => absolute_opt(&mut a.config),
            Self::GwaeExport(a) => absolute_if_exists(&mut a.model),
            Self::Pipeline(a) => {
                absolute_opt(&mut a.spec);
                absolute_pairs(&mut a.extra.models);
                absolute_pairs(&mut a.extra.summaries);
            }
            Self::Sweep(a) => {
                absolute_opt(&mut a.spec);
                absolute_pairs(&mut a.extra.models);
                absolute_pairs(&mut a.extra.summaries);
            }
            Self::UpperBound(a) => {
                absolute_opt(&mut a.spec);
                absolute_pairs(&mut a.extra.models);
                absolute_pairs(&mut a.extra.summaries);
            }
            Self::Bootstrap(a) => {
                absolute_opt(&mut a.spec);
                absolute_pairs(&mut a.extra.models);
                absolute_pairs(&mut a.extra.summaries);
            }
            Self::SynthGen(a) => absolute_opt(&mut a.config),
            Self::Report(a) => {
                for r in &mut a.results {
                    *r = absolute(r);
                }
                absolute_opt(&mut a.sweep);
            }
            Self::Probe(_) | Self::Rotate(_) | Self::Pca(_) | Self::Rerun(_) => {}
        }
    }
}

/// What a command produced, before it is written out.
pub struct Outcome {
    /// Fully resolved parameters (specs, configs) beyond the command line.
    pub resolved: Value,
    pub metrics: Value,
    /// Files read.
    pub inputs: Vec<PathBuf>,
    /// Human-readable summary for stdout.
    pub message: String,
}

struct Ctx {
    inputs: Vec<PathBuf>,
    out: PathBuf,
}

impl Ctx {
    fn new(common: &Common) -> CliResult<Self> {
        fs::create_dir_all(&common.out).map_err(|e| CliError::io(&common.out, e))?;
        Ok(Self {
            inputs: Vec::new(),
            out: common.out.clone(),
        })
    }

    fn out(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn manifest(&mut self, common: &Common) -> CliResult<LoadedManifest> {
        let path = common
            .manifest
            .as_ref()
            .ok_or_else(|| CliError::Usage("this command needs --manifest".into()))?;
        let loaded = load_manifest(path)?;
        self.inputs.extend(loaded.files.iter().cloned());
        Ok(loaded)
    }

    fn spec(&mut self, path: Option<&Path>) -> CliResult<PipelineSpec> {
        match path {
            None => Ok(PipelineSpec::baseline()),
            Some(p) => {
                let spec = read_json(p)?;
                self.inputs.push(p.to_path_buf());
                Ok(spec)
            }
        }
    }

    fn artifacts(&mut self, base: &Artifacts, extra: &ExtraArtifacts) -> CliResult<Artifacts> {
        let mut out = base.clone();
        for pair in &extra.models {
            let (id, dir) = split_pair(pair)?;
            let (model, files) = load_model(Path::new(dir))?;
            self.inputs.extend(files);
            out.models.insert(id.to_string(), model);
        }
        for pair in &extra.summaries {
            let (id, path) = split_pair(pair)?;
            let path = Path::new(path);
            let s = load_summary(path).map_err(|e| CliError::format(path, e))?;
            self.inputs.push(path.to_path_buf());
            out.summaries.insert(id.to_string(), s);
        }
        Ok(out)
    }
}

fn split_pair(s: &str) -> CliResult<(&str, &str)> {
    s.split_once('=')
        .filter(|(id, path)| !id.is_empty() && !path.is_empty())
        .ok_or_else(|| CliError::Usage(format!("expected ID=PATH, got {s:?}")))
}

fn pct(x: f64) -> String {
    format!("{:.1}", 100.0 * x)
}

fn experiment_message(r: &ExperimentResult) -> String {
    format!(
        "accuracy={}±{} wga={}±{}",
        pct(r.accuracy.mean),
        pct(r.accuracy.std),
        pct(r.wga.mean),
        pct(r.wga.std)
    )
}

fn experiment_metrics(r: &ExperimentResult) -> Value {
    json!({
        "accuracy": r.accuracy,
        "wga": r.wga,
        "reps": r.reps,
    })
}

fn save_result(ctx: &Ctx, mut r: ExperimentResult, started: Instant) -> CliResult<()> {
    r.wall_clock_secs = Some(started.elapsed().as_secs_f64());
    write_json(&r, &ctx.out("result.json"))
}

fn probe_cmd(a: &ProbeArgs) -> CliResult<Outcome> {
    let mut ctx = Ctx::new(&a.common)?;
    let m = ctx.manifest(&a.common)?;
    let train = m.dataset(&a.train)?;
    let test = m.dataset(&a.test)?;
    let model = fit_probe(train, a.features.as_deref())?;
    let report = evaluate(&model, test)?;
    write_json(&model, &ctx.out("probe.json"))?;
    Ok(Outcome {
        resolved: Value::Null,
        metrics: json!({ "report": report, "probe": model.diagnostics }),
        inputs: ctx.inputs,
        message: format!("accuracy={} wga={}", pct(report.accuracy), pct(report.wga)),
    })
}

fn score_cmd(a: &ScoreArgs) -> CliResult<Outcome> {
    let mut ctx = Ctx::new(&a.common)?;
    let summary: AttributionSummary = match &a.common.manifest {
        Some(_) => {
            let m = ctx.manifest(&a.common)?;
            match m.artifacts.summaries.get(&a.summary) {
                Some(s) => s.clone(),
                None => {
                    let p = Path::new(&a.summary);
                    ctx.inputs.push(p.to_path_buf());
                    load_summary(p).map_err(|e| CliError::format(p, e))?
                }
            }
        }
        None => {
            let p = Path::new(&a.summary);
            ctx.inputs.push(p.to_path_buf());
            load_summary(p).map_err(|e| CliError::format(p, e))?
        }
    };
    let scores = spuriousness_scores(&summary);
    let path = ctx.out("scores.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::csv(&path, e))?;
    w.write_record(["neuron", "score"]).map_err(|e| CliError::csv(&path, e))?;
    for (i, s) in scores.scores.iter().enumerate() {
        w.write_record([i.to_string(), s.to_string()]).map_err(|e| CliError::csv(&path, e))?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    let top = a.top.map(|n| top_n_core(&scores, n)).transpose()?;
    let message = match &top {
        Some(t) => format!("space={} top={:?}", scores.space_id, t),
        None => format!("space={} neurons={}", scores.space_id, scores.len()),
    };
    Ok(Outcome {
        resolved: json!({ "space_id": scores.space_id }),
        metrics: json!({ "scores": scores.scores, "top": top }),
        inputs: ctx.inputs,
        message,
    })
}

fn rotate_cmd(a: &RotateArgs) -> CliResult<Outcome> {
    let mut ctx = Ctx::new(&a.common)?;
    let dim = match a.dim {
        Some(d) => d,
        None => ctx.manifest(&a.common)?.manifest.d,
    };
    let map = random_rotation(dim, a.common.seed)?;
    let path = ctx.out("rotation.spfm");
    save_map(&map, &path).map_err(|e| CliError::format(&path, e))?;
    Ok(Outcome {
        resolved: json!({ "dim": dim, "space_id": map.meta()["space_id"] }),
        metrics: json!({ "orthogonality_defect": map.orthogonality_defect() }),
        inputs: ctx.inputs,
        message: format!("wrote {} ({dim}x{dim})", path.display()),
    })
}

fn gwae_config(a: &GwaeTrainArgs, d: usize, ctx: &mut Ctx) -> CliResult<GwaeConfig> {
    if a.dims.as_ref().is_some_and(|v| v.len() != 3) {
        return Err(CliError::Usage("--dims takes exactly three sizes, Y,C,N".into()));
    }
    let mut cfg = match (&a.config, &a.dims, a.label_dim, a.backbone) {
        (Some(p), _, _, _) => {
            ctx.inputs.push(p.clone());
            read_json::<GwaeConfig>(p)?
        }
        (None, Some(dims), _, _) => GwaeConfig::new(GwaeDims::new(dims[0], dims[1], dims[2])?),
        (None, None, Some(label), _) => GwaeConfig::new(GwaeDims::split(d, label)?),
        (None, None, None, Some(b)) => GwaeConfig::for_backbone(b.into(), d)?,
        (None, None, None, None) => {
            return Err(CliError::Usage(
                "give one of --config, --dims, --label-dim or --backbone".into(),
            ))
        }
    };
    if a.config.is_some() {
        if let Some(dims) = &a.dims {
            cfg.dims = GwaeDims::new(dims[0], dims[1], dims[2])?;
        }
    }
    cfg.seed = a.common.seed;
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.lr {
        cfg.optimizer.learning_rate = v;
    }
    if let Some(v) = a.rec_weight {
        cfg.rec_weight = v;
    }
    if let Some(v) = a.hsic_weight {
        cfg.hsic_weight = v;
    }
    if let Some(r) = a.reconstruction {
        cfg.reconstruction = match r {
            ReconstructionArg::Norm => Reconstruction::Norm,
            ReconstructionArg::Squared => Reconstruction::SquaredNorm,
        };
    }
    if a.no_standardize {
        cfg.standardize = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn gwae_train_cmd(a: &GwaeTrainArgs) -> CliResult<Outcome> {
    let mut ctx = Ctx::new(&a.common)?;
    let m = ctx.manifest(&a.common)?;
    let train = m.dataset(&a.train)?;
    let cfg = gwae_config(a, train.dim(), &mut ctx)?;
    let model = train_gwae(train, &cfg)?;
    let dir = ctx.out("model");
    save_model(&model, &dir)?;
    let last = model.history().last().map(|h| h.loss);
    let first = model.history().first().map(|h| h.loss);
    Ok(Outcome {
        resolved: json!({ "config": cfg, "space_id": model.space_id() }),
        metrics: json!({ "first_epoch": first, "last_epoch": last }),
        inputs: ctx.inputs,
        message: format!("space_id={} model={}", model.space_id(), dir.display()),
    })
}

fn gwae_export_cmd(a: &GwaeExportArgs) -> CliResult<Outcome> {
    let mut ctx = Ctx::new(&a.common)?;
    let from_manifest = match &a.common.manifest {
        Some(_) => ctx.manifest(&a.common)?.artifacts.models.get(&a.model).cloned(),
        None => None,
    };
    let model = match from_manifest {
        Some(m) => m,
        None => {
            let (m, files) = load_model(Path::new(&a.model))?;
            ctx.inputs.extend(files);
            m
        }
    };
    let map = model.exported_encoder()?;
    let path = ctx.out("encoder.spfm");
    save_map(&map, &path).map_err(|e| CliError::format(&path, e))?;
    let dims = model.dims();
    Ok(Outcome {
        resolved: json!({ "space_id": model.space_id(), "dims": [dims.label, dims.attribute, dims.residual] }),
        metrics: json!({}),
        inputs: ctx.inputs,
        message: format!("space_id={} encoder={}", model.space_id(), path.display()),
    })
}

fn pca_cmd(a: &PcaArgs) -> CliResult<Outcome> {
    let mut ctx = Ctx::new(&a.common)?;
    let m = ctx.manifest(&a.common)?;
    let ds = m.dataset(&a.split)?;
    let pca = fit_pca(&ds.to_matrix())?;
    let n = a.n.unwrap_or(pca.n_components());
    let map = pca.to_map(n)?;
    let path = ctx.out("pca.spfm");
    save_map(&map, &path).map_err(|e| CliError::format(&path, e))?;
    let var = pca.explained_variance();
    let vpath = ctx.out("explained_variance.csv");
    let mut w = csv::Writer::from_path(&vpath).map_err(|e| CliError::csv(&vpath, e))?;
    w.write_record(["component", "singular_value", "explained_variance"])
        .map_err(|e| CliError::csv(&vpath, e))?;
    for (k, (s, v)) in pca.singular_values.iter().zip(&var).enumerate() {
        w.write_record([k.to_string(), s.to_string(), v.to_string()])
            .map_err(|e| CliError::csv(&vpath, e))?;
    }
    w.flush().map_err(|e| CliError::io(&vpath, e))?;
    Ok(Outcome {
        resolved: json!({ "components": n }),
        metrics: json!({ "singular_values": pca.singular_values }),
        inputs: ctx.inputs,
        message: format!("wrote {} ({n} components)", path.display()),
    })
}

fn pipeline_cmd(a: &PipelineArgs) -> CliResult<Outcome> {
    let started = Instant::now();
    let mut ctx = Ctx::new(&a.common)?;
    let m = ctx.manifest(&a.common)?;
    let spec = ctx.spec(a.spec.as_deref())?;
    let artifacts = ctx.artifacts(&m.artifacts, &a.extra)?;
    let train = m.dataset(&a.train)?;
    let test = m.dataset(&a.test)?;
    match a.bootstrap {
        Some(reps) => {
            let r = bootstrap(train, test, &spec, &artifacts, reps, a.common.seed, !a.no_resample)?;
            let out = Outcome {
                resolved: json!({ "spec": spec }),
                metrics: experiment_metrics(&r),
                inputs: ctx.inputs.clone(),
                message: experiment_message(&r),
            };
            save_result(&ctx, r, started)?;
            Ok(out)
        }
        None => {
            let run = run_pipeline(&spec, train, test, &artifacts)?;
            write_json(&run, &ctx.out("result.json"))?;
            Ok(Outcome {
                resolved: json!({ "spec": spec }),
                metrics: json!({
                    "report": run.report,
                    "n_features": run.n_features,
                    "selected": run.selected,
                    "probe": run.probe,
                }),
                inputs: ctx.inputs,
                message: format!("accuracy={} wga={}", pct(run.report.accuracy), pct(run.report.wga)),
            })
        }
    }
}

fn sweep_cmd(a: &SweepArgs) -> CliResult<Outcome> {
    let mut ctx = Ctx::new(&a.common)?;
    let m = ctx.manifest(&a.common)?;
    let spec = ctx.spec(a.spec.as_deref())?;
    let artifacts = ctx.artifacts(&m.artifacts, &a.extra)?;
    let kind = match a.transform {
        SweepArg::Captum => SweepKind::Captum,
        SweepArg::Pca => SweepKind::Pca,
    };
    let ns = a.n.values();
    let points = sweep(&spec, kind, &ns, m.dataset(&a.train)?, m.dataset(&a.test)?, &artifacts)?;
    let path = ctx.out("sweep.csv");
    write_sweep_csv(&points, &path)?;
    let best = points.iter().max_by(|p, q| p.wga.total_cmp(&q.wga).then(q.n.cmp(&p.n)));
    Ok(Outcome {
        resolved: json!({ "spec": spec, "n": ns }),
        metrics: json!({ "points": points }),
        inputs: ctx.inputs,
        message: match best {
            Some(b) => format!("{} points, best wga={} at N={}", points.len(), pct(b.wga), b.n),
            None => "no points".into(),
        },
    })
}

fn upper_bound_cmd(a: &UpperBoundArgs) -> CliResult<Outcome> {
    let started = Instant::now();
    let mut ctx = Ctx::new(&a.common)?;
    let m = ctx.manifest(&a.common)?;
    let spec = ctx.spec(a.spec.as_deref())?;
    let artifacts = ctx.artifacts(&m.artifacts, &a.extra)?;
    let r = upper_bound(m.dataset(&a.test)?, &spec, &artifacts, a.folds, a.common.seed)?;
    let out = Outcome {
        resolved: json!({ "spec": spec }),
        metrics: experiment_metrics(&r),
        inputs: ctx.inputs.clone(),
        message: experiment_message(&r),
    };
    save_result(&ctx, r, started)?;
    Ok(out)
}

fn bootstrap_cmd(a: &BootstrapArgs) -> CliResult<Outcome> {
    let started = Instant::now();
    let mut ctx = Ctx::new(&a.common)?;
    let m = ctx.manifest(&a.common)?;
    let spec = ctx.spec(a.spec.as_deref())?;
    let artifacts = ctx.artifacts(&m.artifacts, &a.extra)?;
    let r = bootstrap(
        m.dataset(&a.train)?,
        m.dataset(&a.test)?,
        &spec,
        &artifacts,
        a.reps,
        a.common.seed,
        !a.no_resample,
    )?;
    let mut message = experiment_message(&r);
    if r.total_redraws() > 0 {
        message.push_str(&format!(" (redrew {} degenerate resamples)", r.total_redraws()));
    }
    let out = Outcome {
        resolved: json!({ "spec": spec }),
        metrics: experiment_metrics(&r),
        inputs: ctx.inputs.clone(),
        message,
    };
    save_result(&ctx, r, started)?;
    Ok(out)
}

fn synth_gen_cmd(a: &SynthGenArgs) -> CliResult<Outcome> {
    let mut ctx = Ctx::new(&a.common)?;
    let mut cfg = match &a.config {
        Some(p) => {
            ctx.inputs.push(p.clone());
            read_json::<SynthConfig>(p)?
        }
        None => SynthConfig::default(),
    };
    cfg.seed = a.common.seed;
    let set = |slot: &mut usize, v: Option<usize>| {
        if let Some(v) = v {
            *slot = v;
        }
    };
    set(&mut cfg.k_core, a.k_core);
    set(&mut cfg.k_sp, a.k_sp);
    set(&mut cfg.k_noise, a.k_noise);
    set(&mut cfg.d, a.dim);
    set(&mut cfg.n_train, a.n_train);
    set(&mut cfg.n_test, a.n_test);
    let setf = |slot: &mut f64, v: Option<f64>| {
        if let Some(v) = v {
            *slot = v;
        }
    };
    setf(&mut cfg.rho, a.rho);
    setf(&mut cfg.mu, a.mu);
    setf(&mut cfg.sigma, a.sigma);
    setf(&mut cfg.core_spread, a.core_spread);
    setf(&mut cfg.kappa, a.kappa);

    let (train, test, truth) = generate(&cfg)?;
    let mut splits = Vec::new();
    for ds in [&train, &test] {
        let name = format!("{}.spfd", ds.split_tag());
        let path = ctx.out(&name);
        save_dataset(ds, &path).map_err(|e| CliError::format(&path, e))?;
        splits.push(SplitEntry {
            split_tag: ds.split_tag().to_string(),
            path: PathBuf::from(name),
            n: ds.len(),
        });
    }
    write_json(&truth, &ctx.out("truth.json"))?;
    let manifest = Manifest {
        format_version: MANIFEST_VERSION,
        d: cfg.d,
        splits,
        attributions: Vec::new(),
        models: Vec::new(),
        provenance: json!({ "generator": "synth", "config": cfg }),
    };
    let mpath = ctx.out("manifest.json");
    write_manifest(&manifest, &mpath)?;
    Ok(Outcome {
        resolved: json!({ "config": cfg }),
        metrics: json!({
            "train_groups": group_counts(&train),
            "test_groups": group_counts(&test),
            "condition": truth.condition,
        }),
        inputs: ctx.inputs,
        message: format!("wrote {}", mpath.display()),
    })
}

fn report_cmd(a: &ReportArgs) -> CliResult<Outcome> {
    let mut ctx = Ctx::new(&a.common)?;
    let mut results = Vec::with_capacity(a.results.len());
    for p in &a.results {
        results.push(read_json::<ExperimentResult>(p)?);
        ctx.inputs.push(p.clone());
    }
    let text = render_text(&results)?;
    write_text(&text, &ctx.out("table.txt"))?;
    write_csv(&results, &ctx.out("table.csv"))?;
    let mut curve = Value::Null;
    if let Some(p) = &a.sweep {
        let points = read_sweep_csv(p)?;
        ctx.inputs.push(p.clone());
        write_sweep_csv(&points, &ctx.out("curve.csv"))?;
        curve = json!(points);
    }
    let rows: Vec<Value> = results
        .iter()
        .map(|r| json!({ "accuracy": r.accuracy, "wga": r.wga }))
        .collect();
    Ok(Outcome {
        resolved: Value::Null,
        metrics: json!({ "rows": rows, "curve": curve }),
        inputs: ctx.inputs,
        message: text.trim_end().to_string(),
    })
}

fn execute(cmd: &Command) -> CliResult<Outcome> {
    match cmd {
        Command::Probe(a) => probe_cmd(a),
        Command::Score(a) => score_cmd(a),
        Command::Rotate(a) => rotate_cmd(a),
        Command::GwaeTrain(a) => gwae_train_cmd(a),
        Command::GwaeExport(a) => gwae_export_cmd(a),
        Command::Pca(a) => pca_cmd(a),
        Command::Pipeline(a) => pipeline_cmd(a),
        Command::Sweep(a) => sweep_cmd(a),
        Command::UpperBound(a) => upper_bound_cmd(a),
        Command::Bootstrap(a) => bootstrap_cmd(a),
        Command::SynthGen(a) => synth_gen_cmd(a),
        Command::Report(a) => report_cmd(a),
        Command::Rerun(_) => Err(CliError::Usage("rerun cannot be nested".into())),
    }
}

/// Runs one command, writing its outputs, `metrics.csv` and `run.json`.
pub fn run_command(mut cmd: Command) -> CliResult<(RunFile, String)> {
    if let Command::Rerun(a) = &cmd {
        return rerun(a);
    }
    cmd.absolutize();
    let out = cmd.common().expect("non-rerun command").out.clone();
    let outcome = execute(&cmd)?;
    let mut inputs = outcome.inputs;
    inputs.sort();
    inputs.dedup();
    let run = RunFile {
        tool: format!("spurious {}", env!("CARGO_PKG_VERSION")),
        command: cmd,
        resolved: outcome.resolved,
        inputs: hash_inputs(&inputs)?,
        metrics: outcome.metrics,
    };
    write_metrics_csv(&run.metrics, &out.join(METRICS_FILE))?;
    write_json(&run, &out.join(RUN_FILE))?;
    Ok((run, outcome.message))
}

fn rerun(a: &RerunArgs) -> CliResult<(RunFile, String)> {
    let recorded: RunFile = read_json(&a.run_file)?;
    let current = hash_inputs(&recorded.inputs.keys().cloned().collect::<Vec<_>>())?;
    for (path, hash) in &recorded.inputs {
        if current.get(path) != Some(hash) {
            return Err(CliError::Invalid(format!("input {} changed since the recorded run", path.display())));
        }
    }
    let mut cmd = recorded.command.clone();
    cmd.set_out(a.out.clone());
    let (run, message) = run_command(cmd)?;
    let diffs = metric_differences(&recorded.metrics, &run.metrics);
    if !diffs.is_empty() {
        return Err(CliError::Invalid(format!("metrics differ from the recorded run: {}", diffs.join(", "))));
    }
    Ok((run, format!("{message}\nall metrics reproduced")))
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    let started = Instant::now();
    match run_command(cli.command) {
        Ok((_, message)) => {
            println!("{message}");
            eprintln!("done in {:.2?}", started.elapsed());
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn n_range_is_inclusive() {
        let r: NRange = "20:400:20".parse().unwrap();
        assert_eq!(r.values().len(), 20);
        assert_eq!(r.values().last(), Some(&400));
        assert!("0:4:1".parse::<NRange>().is_err());
        assert!("5:4".parse::<NRange>().is_err());
        assert_eq!("7".parse::<NRange>().unwrap().values(), vec![7]);
    }

    #[test]
    fn command_round_trips_through_json() {
        let cli = Cli::try_parse_from([
            "spurious", "sweep", "--manifest", "m.json", "--transform", "captum", "--n", "2:10:2", "--seed", "3",
        ])
        .unwrap();
        let text = serde_json::to_string(&cli.command).unwrap();
        assert!(text.contains(r#""name":"sweep""#));
        assert!(!text.contains("\"out\""));
        let back: Command = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cli.command);
    }

    #[test]
    fn unknown_flag_is_a_usage_error() {
        assert_eq!(main_with_args(["spurious", "probe", "--bogus"]), EXIT_VALIDATION);
        assert_eq!(main_with_args(["spurious", "frobnicate"]), EXIT_VALIDATION);
    }
}
