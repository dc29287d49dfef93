//! JSON manifest naming the dataset splits, attribution summaries and
//! trained models of one backbone. Relative paths resolve against the
//! manifest's directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spurious_core::dataset::RAW_SPACE;
use spurious_core::gwae::GwaeModel;
use spurious_core::pipeline::Artifacts;
use spurious_core::{AttributionSummary, EmbeddingDataset};

use crate::error::{CliError, CliResult};
use crate::formats::{load_dataset, load_summary};
use crate::model_io::load_model;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitEntry {
    pub split_tag: String,
    pub path: PathBuf,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributionEntry {
    /// Defaults to the space id.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub space_id: String,
    pub path: PathBuf,
}

impl AttributionEntry {
    pub fn key(&self) -> &str {
        self.id.as_deref().unwrap_or(&self.space_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEntry {
    pub id: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub d: usize,
    pub splits: Vec<SplitEntry>,
    #[serde(default)]
    pub attributions: Vec<AttributionEntry>,
    #[serde(default)]
    pub models: Vec<ModelEntry>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub provenance: serde_json::Value,
}

/// A manifest whose files have been read and checked against it.
#[derive(Debug, Clone)]
pub struct LoadedManifest {
    pub path: PathBuf,
    pub manifest: Manifest,
    pub datasets: BTreeMap<String, EmbeddingDataset>,
    pub artifacts: Artifacts,
    /// Every file read while loading.
    pub files: Vec<PathBuf>,
}

impl LoadedManifest {
    pub fn dataset(&self, tag: &str) -> CliResult<&EmbeddingDataset> {
        self.datasets.get(tag).ok_or_else(|| {
            CliError::Invalid(format!(
                "manifest {} has no split {tag:?} (available: {})",
                self.path.display(),
                self.datasets.keys().cloned().collect::<Vec<_>>().join(", ")
            ))
        })
    }
}

fn invalid(path: &Path, msg: String) -> CliError {
    CliError::Invalid(format!("{}: {msg}", path.display()))
}

pub fn read_manifest(path: &Path) -> CliResult<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::json(path, e))
}

pub fn write_manifest(manifest: &Manifest, path: &Path) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(manifest).map_err(|e| CliError::json(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Reads the manifest and every file it names, checking headers against it.
pub fn load_manifest(path: &Path) -> CliResult<LoadedManifest> {
    let manifest = read_manifest(path)?;
    if manifest.format_version != MANIFEST_VERSION {
        return Err(invalid(path, format!("unsupported manifest version {}", manifest.format_version)));
    }
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
    let mut files = vec![path.to_path_buf()];

    let mut datasets = BTreeMap::new();
    for entry in &manifest.splits {
        let file = resolve(&entry.path);
        let ds = load_dataset(&file).map_err(|e| CliError::format(&file, e))?;
        if ds.len() != entry.n || ds.dim() != manifest.d || ds.split_tag() != entry.split_tag {
            return Err(invalid(
                path,
                format!(
                    "split {:?} declares n={} d={} but {} holds {:?} with n={} d={}",
                    entry.split_tag,
                    entry.n,
                    manifest.d,
                    file.display(),
                    ds.split_tag(),
                    ds.len(),
                    ds.dim()
                ),
            ));
        }
        if datasets.insert(entry.split_tag.clone(), ds).is_some() {
            return Err(invalid(path, format!("split {:?} listed twice", entry.split_tag)));
        }
        files.push(file);
    }

    let mut summaries: BTreeMap<String, AttributionSummary> = BTreeMap::new();
    for entry in &manifest.attributions {
        let file = resolve(&entry.path);
        let s = load_summary(&file).map_err(|e| CliError::format(&file, e))?;
        if s.space_id() != entry.space_id {
            return Err(invalid(
                path,
                format!("{} has space id {:?}, manifest says {:?}", file.display(), s.space_id(), entry.space_id),
            ));
        }
        if s.space_id() == RAW_SPACE && s.dim() != manifest.d {
            return Err(invalid(path, format!("raw summary {} has d={}, manifest d={}", file.display(), s.dim(), manifest.d)));
        }
        if let Some(train) = datasets.get("train") {
            if s.len() != train.len() {
                return Err(invalid(
                    path,
                    format!("summary {} has {} rows, train split has {}", file.display(), s.len(), train.len()),
                ));
            }
        }
        if summaries.insert(entry.key().to_string(), s).is_some() {
            return Err(invalid(path, format!("attribution id {:?} listed twice", entry.key())));
        }
        files.push(file);
    }

    let mut models: BTreeMap<String, GwaeModel> = BTreeMap::new();
    for entry in &manifest.models {
        let dir = resolve(&entry.path);
        let (model, model_files) = load_model(&dir)?;
        if model.dims().total() != manifest.d {
            return Err(invalid(path, format!("model {:?} expects d={}", entry.id, model.dims().total())));
        }
        if models.insert(entry.id.clone(), model).is_some() {
            return Err(invalid(path, format!("model id {:?} listed twice", entry.id)));
        }
        files.extend(model_files);
    }

    Ok(LoadedManifest {
        path: path.to_path_buf(),
        manifest,
        datasets,
        artifacts: Artifacts { models, summaries },
        files,
    })
}
