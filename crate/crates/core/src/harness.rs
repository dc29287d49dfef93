//! Evaluation protocols: bootstrap repetitions over resampled training sets and
//! the stratified cross-validated upper bound on the test set.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{counts_of, EmbeddingDataset};
use crate::pipeline::{run_pipeline_on, Artifacts, PipelineSpec, TrainRows, Transform};
use crate::rng::{derive_seed, seeded_rng};
use crate::{Error, Result};

/// Resamples tried per repetition before giving up.
pub const MAX_REDRAWS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Bootstrap,
    UpperBound,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Repetition {
    pub index: usize,
    pub seed: u64,
    pub accuracy: f64,
    pub wga: f64,
    /// Degenerate resamples discarded before this one was accepted.
    pub redraws: usize,
    pub train_size: usize,
    pub eval_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let (mean, std) = crate::math::mean_std(values);
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub protocol: Protocol,
    pub label: String,
    pub spec: PipelineSpec,
    pub seed: u64,
    pub reps: Vec<Repetition>,
    pub accuracy: Summary,
    pub wga: Summary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_clock_secs: Option<f64>,
}

impl ExperimentResult {
    fn from_reps(protocol: Protocol, spec: &PipelineSpec, seed: u64, reps: Vec<Repetition>) -> Self {
        let acc: Vec<f64> = reps.iter().map(|r| r.accuracy).collect();
        let wga: Vec<f64> = reps.iter().map(|r| r.wga).collect();
        Self {
            protocol,
            label: spec.label(),
            spec: spec.clone(),
            seed,
            accuracy: Summary::of(&acc),
            wga: Summary::of(&wga),
            reps,
            wall_clock_secs: None,
        }
    }

    pub fn total_redraws(&self) -> usize {
        self.reps.iter().map(|r| r.redraws).sum()
    }
}

/// Splits `0..c.len()` into `folds` parts with near-equal counts of each
/// attribute value. Fold sizes differ by at most one.
pub fn stratified_folds(c: &[u8], folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 {
        return Err(Error::InvalidArgument("need at least two folds".into()));
    }
    if c.len() < folds {
        return Err(Error::InvalidArgument(alloc::format!(
            "{} examples cannot fill {folds} folds",
            c.len()
        )));
    }
    let mut rng = seeded_rng(seed);
    let mut order = Vec::with_capacity(c.len());
    for value in 0..2u8 {
        let mut idx: Vec<usize> = (0..c.len()).filter(|&j| c[j] == value).collect();
        idx.shuffle(&mut rng);
        order.extend(idx);
    }
    let mut parts = alloc::vec![Vec::new(); folds];
    for (k, j) in order.into_iter().enumerate() {
        parts[k % folds].push(j);
    }
    for p in &mut parts {
        p.sort_unstable();
    }
    Ok(parts)
}

fn has_both_classes(y: &[u8], rows: &[usize]) -> bool {
    let ones = rows.iter().filter(|&&j| y[j] == 1).count();
    ones > 0 && ones < rows.len()
}

/// Cross-validated probe on the test set: for each fold, the feature
/// pipeline and probe are fit on the other folds and evaluated on it.
pub fn upper_bound(
    test: &EmbeddingDataset,
    spec: &PipelineSpec,
    artifacts: &Artifacts,
    folds: usize,
    seed: u64,
) -> Result<ExperimentResult> {
    let c = test.attributes();
    if !c.contains(&0) || !c.contains(&1) {
        return Err(Error::InvalidDataset(
            "upper bound needs both attribute values in the test set".into(),
        ));
    }
    if spec.transforms.iter().any(|t| matches!(t, Transform::Captum { .. })) {
        return Err(Error::InvalidArgument(
            "attribution selection is not available inside the upper-bound protocol".into(),
        ));
    }
    let parts = stratified_folds(c, folds, seed)?;
    let mut reps = Vec::with_capacity(folds);
    for (i, held_out) in parts.iter().enumerate() {
        let train_rows: Vec<usize> = parts
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != i)
            .flat_map(|(_, p)| p.iter().copied())
            .collect();
        if !has_both_classes(test.labels(), &train_rows) || !has_both_classes(test.labels(), held_out) {
            return Err(Error::InvalidDataset(alloc::format!("fold {i} is missing a class")));
        }
        let fold_seed = derive_seed(seed, i as u64);
        let run = run_pipeline_on(
            &reseeded(spec, fold_seed),
            TrainRows {
                data: test,
                rows: &train_rows,
                summaries_aligned: false,
            },
            test,
            held_out,
            artifacts,
        )?;
        reps.push(Repetition {
            index: i,
            seed: fold_seed,
            accuracy: run.report.accuracy,
            wga: run.report.wga,
            redraws: 0,
            train_size: train_rows.len(),
            eval_size: held_out.len(),
        });
    }
    Ok(ExperimentResult::from_reps(Protocol::UpperBound, spec, seed, reps))
}

/// Gives every in-pipeline autoencoder the repetition's seed.
fn reseeded(spec: &PipelineSpec, seed: u64) -> PipelineSpec {
    let mut out = spec.clone();
    out.seed = seed;
    for t in &mut out.transforms {
        if let Transform::GwaeTrain { config, .. } = t {
            config.seed = seed;
        }
    }
    out
}

/// Draws a same-size resample of `0..n` with replacement, redrawing while it
/// lacks a class (or a group when `need_groups`).
pub fn resample_rows(
    y: &[u8],
    c: &[u8],
    need_groups: bool,
    seed: u64,
    index: usize,
) -> Result<(Vec<usize>, usize)> {
    let n = y.len();
    if n == 0 {
        return Err(Error::Empty("training set"));
    }
    for attempt in 0..MAX_REDRAWS {
        let mut rng = seeded_rng(derive_seed(seed, attempt as u64));
        let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        let ry: Vec<u8> = rows.iter().map(|&j| y[j]).collect();
        let rc: Vec<u8> = rows.iter().map(|&j| c[j]).collect();
        let counts = counts_of(&ry, &rc);
        let ok = if need_groups {
            counts.iter().all(|&k| k > 0)
        } else {
            counts[0] + counts[1] > 0 && counts[2] + counts[3] > 0
        };
        if ok {
            return Ok((rows, attempt));
        }
    }
    Err(Error::ResampleExhausted(index))
}

/// Repeats `spec` `reps` times, each on a resample of the training set (or on
/// the unchanged training set when `resample` is false).
pub fn bootstrap(
    train: &EmbeddingDataset,
    test: &EmbeddingDataset,
    spec: &PipelineSpec,
    artifacts: &Artifacts,
    reps: usize,
    seed: u64,
    resample: bool,
) -> Result<ExperimentResult> {
    if reps < 2 {
        return Err(Error::InvalidArgument("bootstrap needs at least two repetitions".into()));
    }
    let need_groups = spec.trains_autoencoder();
    let test_rows: Vec<usize> = (0..test.len()).collect();
    let mut out = Vec::with_capacity(reps);
    for r in 0..reps {
        let rep_seed = derive_seed(seed, r as u64);
        let (rows, redraws) = if resample {
            resample_rows(train.labels(), train.attributes(), need_groups, rep_seed, r)?
        } else {
            ((0..train.len()).collect(), 0)
        };
        let run = run_pipeline_on(
            &reseeded(spec, rep_seed),
            TrainRows {
                data: train,
                rows: &rows,
                summaries_aligned: true,
            },
            test,
            &test_rows,
            artifacts,
        )?;
        out.push(Repetition {
            index: r,
            seed: rep_seed,
            accuracy: run.report.accuracy,
            wga: run.report.wga,
            redraws,
            train_size: rows.len(),
            eval_size: test_rows.len(),
        });
    }
    Ok(ExperimentResult::from_reps(Protocol::Bootstrap, spec, seed, out))
}
