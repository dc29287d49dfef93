//! Trained autoencoders on disk: one directory holding the four maps, a JSON
//! config and the per-epoch loss history.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spurious_core::gwae::{EpochLoss, GwaeConfig, GwaeModel, LossBreakdown, Standardization};

use crate::error::{CliError, CliResult};
use crate::formats::{load_map, save_map};

pub const ENCODER_FILE: &str = "encoder.spfm";
pub const DECODER_FILE: &str = "decoder.spfm";
pub const HEAD_Y_FILE: &str = "head_y.spfm";
pub const HEAD_C_FILE: &str = "head_c.spfm";
pub const CONFIG_FILE: &str = "config.json";
pub const HISTORY_FILE: &str = "history.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelConfigFile {
    space_id: String,
    config: GwaeConfig,
    standardization: Option<Standardization>,
}

#[derive(Debug, Serialize, Deserialize)]
struct HistoryRow {
    epoch: usize,
    total: f64,
    ce_y: f64,
    ce_c: f64,
    rec: f64,
    hsic: f64,
}

pub fn save_model(model: &GwaeModel, dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    for (name, map) in [
        (ENCODER_FILE, model.encoder()),
        (DECODER_FILE, model.decoder()),
        (HEAD_Y_FILE, model.head_y()),
        (HEAD_C_FILE, model.head_c()),
    ] {
        let path = dir.join(name);
        save_map(map, &path).map_err(|e| CliError::format(&path, e))?;
    }
    let cfg = ModelConfigFile {
        space_id: model.space_id().to_string(),
        config: model.config().clone(),
        standardization: model.standardization().cloned(),
    };
    let path = dir.join(CONFIG_FILE);
    let mut text = serde_json::to_string_pretty(&cfg).map_err(|e| CliError::json(&path, e))?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;

    let path = dir.join(HISTORY_FILE);
    let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::csv(&path, e))?;
    for h in model.history() {
        let l = h.loss;
        w.serialize(HistoryRow {
            epoch: h.epoch,
            total: l.total,
            ce_y: l.ce_y,
            ce_c: l.ce_c,
            rec: l.rec,
            hsic: l.hsic,
        })
        .map_err(|e| CliError::csv(&path, e))?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))
}

/// Loads a model directory, returning the model and the files it read.
pub fn load_model(dir: &Path) -> CliResult<(GwaeModel, Vec<PathBuf>)> {
    let mut files = Vec::new();
    let mut map = |name: &str| {
        let path = dir.join(name);
        let m = load_map(&path).map_err(|e| CliError::format(&path, e));
        files.push(path);
        m
    };
    let encoder = map(ENCODER_FILE)?;
    let decoder = map(DECODER_FILE)?;
    let head_y = map(HEAD_Y_FILE)?;
    let head_c = map(HEAD_C_FILE)?;

    let path = dir.join(CONFIG_FILE);
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let cfg: ModelConfigFile = serde_json::from_str(&text).map_err(|e| CliError::json(&path, e))?;
    files.push(path);

    let path = dir.join(HISTORY_FILE);
    let mut history = Vec::new();
    let mut r = csv::Reader::from_path(&path).map_err(|e| CliError::csv(&path, e))?;
    for row in r.deserialize::<HistoryRow>() {
        let row = row.map_err(|e| CliError::csv(&path, e))?;
        history.push(EpochLoss {
            epoch: row.epoch,
            loss: LossBreakdown {
                total: row.total,
                ce_y: row.ce_y,
                ce_c: row.ce_c,
                rec: row.rec,
                hsic: row.hsic,
            },
        });
    }
    files.push(path);

    let model = GwaeModel::from_parts(
        cfg.config,
        encoder,
        decoder,
        head_y,
        head_c,
        cfg.standardization,
        history,
        cfg.space_id,
    )?;
    Ok((model, files))
}
