//! Feature pipelines: an ordered list of transforms applied to the training
//! and test features, followed by a probe fit on train and evaluated on test.
//!
//! Each intermediate feature space carries an id. The raw backbone space is
//! `raw`, a seeded rotation of it is `rot:<seed>` and a trained autoencoder's
//! encoding uses the model's own id. Top-N attribution selection is only
//! allowed with a summary computed in the current space, and only for the
//! neurons that are still present.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dataset::{AttributionSummary, EmbeddingDataset, RAW_SPACE};
use crate::gwae::{train_gwae, GwaeConfig, GwaeModel};
use crate::lbfgs::LbfgsOptions;
use crate::linear_map::apply_map;
use crate::metrics::EvalReport;
use crate::pca::{fit_pca, project};
use crate::probe::{evaluate_matrix, fit_probe_matrix, FitDiagnostics};
use crate::spuriousness::{random_rotation, rotation_space_id, scores_over_rows, top_n_of};
use crate::{Error, Matrix, Result};

/// Part of an autoencoder's output to keep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Slice {
    Y,
    C,
    N,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AllComponents {
    #[serde(rename = "all")]
    All,
}

/// Number of principal components to keep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PcaCount {
    Count(usize),
    All(AllComponents),
}

impl PcaCount {
    pub const ALL: Self = Self::All(AllComponents::All);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Transform {
    /// Multiply by a seeded Haar-random rotation.
    Rotate { seed: u64 },
    /// Encode with a stored autoencoder and keep one slice.
    Gwae { model: String, slice: Slice },
    /// Train an autoencoder on the current training rows, then encode.
    GwaeTrain { config: GwaeConfig, slice: Slice },
    /// Keep the `n` neurons with the largest spuriousness score.
    Captum { summary: String, n: usize },
    /// Project onto the leading principal components of the training rows.
    Pca { n: PcaCount },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSpec {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub transforms: Vec<Transform>,
    #[serde(default)]
    pub probe: LbfgsOptions,
    #[serde(default)]
    pub seed: u64,
}

impl PipelineSpec {
    pub fn baseline() -> Self {
        Self {
            name: Some("z".into()),
            transforms: Vec::new(),
            probe: LbfgsOptions::default(),
            seed: 0,
        }
    }

    pub fn with(mut self, t: Transform) -> Self {
        self.transforms.push(t);
        self
    }

    /// Row label in composed-transform notation, e.g. `PCA^20(GwAE(z,g)[y])`.
    pub fn label(&self) -> String {
        if let Some(name) = &self.name {
            return name.clone();
        }
        let mut s = String::from("z");
        for t in &self.transforms {
            s = match t {
                Transform::Rotate { .. } => format!("Rot({s})"),
                Transform::Gwae { slice, .. } | Transform::GwaeTrain { slice, .. } => match slice {
                    Slice::Full => format!("GwAE({s},g)"),
                    Slice::Y => format!("GwAE({s},g)[y]"),
                    Slice::C => format!("GwAE({s},g)[c]"),
                    Slice::N => format!("GwAE({s},g)[n]"),
                },
                Transform::Captum { n, .. } => format!("Captum^{n}({s},m)"),
                Transform::Pca { n: PcaCount::Count(n) } => format!("PCA^{n}({s})"),
                Transform::Pca { n: PcaCount::All(_) } => format!("PCA^inf({s})"),
            };
        }
        s
    }

    pub fn trains_autoencoder(&self) -> bool {
        self.transforms
            .iter()
            .any(|t| matches!(t, Transform::GwaeTrain { .. }))
    }
}

/// Stored models and summaries that transforms refer to by id.
#[derive(Debug, Clone, Default)]
pub struct Artifacts {
    pub models: BTreeMap<String, GwaeModel>,
    pub summaries: BTreeMap<String, AttributionSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineRun {
    pub spec: PipelineSpec,
    pub report: EvalReport,
    /// Id and width of the space the probe was fit in.
    pub space_id: String,
    pub n_features: usize,
    /// Neuron ids (in the last attributable space) kept by selection steps.
    pub selected: Option<Vec<usize>>,
    pub probe: FitDiagnostics,
}

struct Space {
    train: Matrix,
    test: Matrix,
    id: String,
    /// Neuron ids of the `id` space for each current column; `None` = identity.
    columns: Option<Vec<usize>>,
    id_width: usize,
}

impl Space {
    fn rename(&mut self, fresh: String, width: usize) {
        self.id = fresh;
        self.columns = None;
        self.id_width = width;
    }

    fn child_id(&self, step: &str) -> String {
        if self.id == RAW_SPACE && self.columns.is_none() {
            step.to_string()
        } else {
            format!("{}|{step}", self.id)
        }
    }
}

/// Training rows of a pipeline run.
pub struct TrainRows<'a> {
    pub data: &'a EmbeddingDataset,
    /// Rows of `data` used for training, repeats allowed.
    pub rows: &'a [usize],
    /// Whether attribution summaries are row-aligned with `data`.
    pub summaries_aligned: bool,
}

/// Runs `spec` with `train` and `test`, using every training row.
pub fn run_pipeline(
    spec: &PipelineSpec,
    train: &EmbeddingDataset,
    test: &EmbeddingDataset,
    artifacts: &Artifacts,
) -> Result<PipelineRun> {
    let rows: Vec<usize> = (0..train.len()).collect();
    let test_rows: Vec<usize> = (0..test.len()).collect();
    run_pipeline_on(
        spec,
        TrainRows {
            data: train,
            rows: &rows,
            summaries_aligned: true,
        },
        test,
        &test_rows,
        artifacts,
    )
}

fn gather(ds: &EmbeddingDataset, rows: &[usize]) -> Matrix {
    let d = ds.dim();
    let mut m = Matrix::zeros(rows.len(), d);
    for (r, &j) in rows.iter().enumerate() {
        for (c, &v) in ds.row(j).iter().enumerate() {
            m[(r, c)] = v as f64;
        }
    }
    m
}

/// Runs `spec` on selected rows of the training and test datasets.
pub fn run_pipeline_on(
    spec: &PipelineSpec,
    train: TrainRows<'_>,
    test: &EmbeddingDataset,
    test_rows: &[usize],
    artifacts: &Artifacts,
) -> Result<PipelineRun> {
    if train.data.dim() != test.dim() {
        return Err(Error::DimensionMismatch {
            context: "train vs test dimension",
            expected: train.data.dim(),
            actual: test.dim(),
        });
    }
    let y_train: Vec<u8> = train.rows.iter().map(|&j| train.data.labels()[j]).collect();
    let c_train: Vec<u8> = train.rows.iter().map(|&j| train.data.attributes()[j]).collect();
    let y_test: Vec<u8> = test_rows.iter().map(|&j| test.labels()[j]).collect();
    let c_test: Vec<u8> = test_rows.iter().map(|&j| test.attributes()[j]).collect();

    let mut space = Space {
        train: gather(train.data, train.rows),
        test: gather(test, test_rows),
        id: RAW_SPACE.to_string(),
        columns: None,
        id_width: train.data.dim(),
    };
    let mut selected = None;

    for t in &spec.transforms {
        match t {
            Transform::Rotate { seed } => {
                let map = random_rotation(space.train.ncols(), *seed)?;
                space.train = apply_map(&space.train, &map)?;
                space.test = apply_map(&space.test, &map)?;
                let fresh = space.child_id(&rotation_space_id(*seed));
                let width = space.train.ncols();
                space.rename(fresh, width);
            }
            Transform::Gwae { model, slice } => {
                let m = artifacts
                    .models
                    .get(model)
                    .ok_or_else(|| Error::UnknownArtifact(model.clone()))?;
                apply_gwae(&mut space, m, *slice)?;
            }
            Transform::GwaeTrain { config, slice } => {
                let ds = EmbeddingDataset::from_matrix("train", &space.train, y_train.clone(), c_train.clone())?;
                let m = train_gwae(&ds, config)?;
                apply_gwae(&mut space, &m, *slice)?;
            }
            Transform::Captum { summary, n } => {
                let s = artifacts
                    .summaries
                    .get(summary)
                    .ok_or_else(|| Error::UnknownArtifact(summary.clone()))?;
                if s.space_id() != space.id {
                    return Err(Error::SpaceMismatch {
                        summary: s.space_id().to_string(),
                        current: space.id.clone(),
                    });
                }
                if s.dim() != space.id_width {
                    return Err(Error::DimensionMismatch {
                        context: "summary width vs feature space",
                        expected: space.id_width,
                        actual: s.dim(),
                    });
                }
                if !train.summaries_aligned {
                    return Err(Error::InvalidArgument(
                        "attribution summaries are not aligned with these training rows".into(),
                    ));
                }
                if s.len() != train.data.len() {
                    return Err(Error::DimensionMismatch {
                        context: "summary rows vs training rows",
                        expected: train.data.len(),
                        actual: s.len(),
                    });
                }
                let scores = scores_over_rows(s, train.rows);
                let neurons: Vec<usize> = match &space.columns {
                    Some(cols) => cols.clone(),
                    None => (0..space.train.ncols()).collect(),
                };
                let local: Vec<f64> = neurons.iter().map(|&i| scores.scores[i]).collect();
                let keep = top_n_of(&local, *n)?;
                space.train = space.train.select_columns(keep.iter());
                space.test = space.test.select_columns(keep.iter());
                let kept: Vec<usize> = keep.iter().map(|&k| neurons[k]).collect();
                selected = Some(kept.clone());
                space.columns = Some(kept);
            }
            Transform::Pca { n } => {
                let pca = fit_pca(&space.train)?;
                let k = match n {
                    PcaCount::Count(k) => *k,
                    PcaCount::All(_) => pca.n_components(),
                };
                space.train = project(&pca, &space.train, k)?;
                space.test = project(&pca, &space.test, k)?;
                let fresh = space.child_id("pca");
                space.rename(fresh, k);
            }
        }
    }

    let probe = fit_probe_matrix(&space.train, &y_train, None, &spec.probe)?;
    let report = evaluate_matrix(&probe, &space.test, &y_test, &c_test)?;
    Ok(PipelineRun {
        spec: spec.clone(),
        report,
        space_id: space.id,
        n_features: space.train.ncols(),
        selected,
        probe: probe.diagnostics,
    })
}

fn apply_gwae(space: &mut Space, model: &GwaeModel, slice: Slice) -> Result<()> {
    let dims = model.dims();
    let full_train = model.encode_full(&space.train)?;
    let full_test = model.encode_full(&space.test)?;
    let range = match slice {
        Slice::Y => dims.label_range(),
        Slice::C => dims.attribute_range(),
        Slice::N => dims.residual_range(),
        Slice::Full => 0..dims.total(),
    };
    space.train = full_train.columns(range.start, range.len()).into_owned();
    space.test = full_test.columns(range.start, range.len()).into_owned();
    let fresh = space.child_id(model.space_id());
    space.rename(fresh, dims.total());
    if slice != Slice::Full {
        space.columns = Some(range.collect());
    }
    Ok(())
}

/// Which transform a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepKind {
    Captum,
    Pca,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub n: usize,
    pub accuracy: f64,
    pub wga: f64,
}

/// Re-runs `base` for every `n`, replacing the count of its last transform of
/// the given kind. A PCA step is appended when `base` has none.
pub fn sweep(
    base: &PipelineSpec,
    kind: SweepKind,
    ns: &[usize],
    train: &EmbeddingDataset,
    test: &EmbeddingDataset,
    artifacts: &Artifacts,
) -> Result<Vec<SweepPoint>> {
    let position = base.transforms.iter().rposition(|t| match kind {
        SweepKind::Captum => matches!(t, Transform::Captum { .. }),
        SweepKind::Pca => matches!(t, Transform::Pca { .. }),
    });
    let mut points = Vec::with_capacity(ns.len());
    for &n in ns {
        let mut spec = base.clone();
        match (kind, position) {
            (SweepKind::Captum, Some(i)) => {
                if let Transform::Captum { n: slot, .. } = &mut spec.transforms[i] {
                    *slot = n;
                }
            }
            (SweepKind::Captum, None) => {
                return Err(Error::InvalidArgument(
                    "a captum sweep needs a captum step naming the summary".into(),
                ));
            }
            (SweepKind::Pca, Some(i)) => spec.transforms[i] = Transform::Pca { n: PcaCount::Count(n) },
            (SweepKind::Pca, None) => spec.transforms.push(Transform::Pca { n: PcaCount::Count(n) }),
        }
        let run = run_pipeline(&spec, train, test, artifacts)?;
        points.push(SweepPoint {
            n,
            accuracy: run.report.accuracy,
            wga: run.report.wga,
        });
    }
    Ok(points)
}
