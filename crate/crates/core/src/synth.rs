//! Synthetic embeddings with planted core, spurious and noise factors.
//!
//! Each example has a label `y` (fair coin) and an attribute `c` that equals
//! `y` with probability `rho`. Core latents are Gaussian with spread
//! `core_spread` and mean `±mu` along their first axis, driven by `y`;
//! spurious latents have unit spread and mean `±mu` along their first axis,
//! driven by `c`; noise latents are isotropic with scale `sigma`. Embeddings
//! are `A · latents` for a seeded Gaussian `A` whose condition number is at
//! most `kappa`. The test split always uses `rho = 0.5`.

use alloc::format;
use alloc::vec::Vec;
use core::ops::Range;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::EmbeddingDataset;
use crate::lbfgs::LbfgsOptions;
use crate::metrics::EvalReport;
use crate::probe::{evaluate_matrix, fit_probe_matrix};
use crate::rng::{derive_seed, seeded_rng};
use crate::{Error, Matrix, Result};

/// Mixing matrices tried before giving up on the conditioning bound.
pub const MAX_MIXING_DRAWS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub k_core: usize,
    pub k_sp: usize,
    pub k_noise: usize,
    pub d: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// Fraction of training examples with `c == y`.
    pub rho: f64,
    pub mu: f64,
    pub sigma: f64,
    /// Within-class standard deviation of the core latents.
    pub core_spread: f64,
    pub kappa: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            k_core: 4,
            k_sp: 4,
            k_noise: 8,
            d: 64,
            n_train: 4800,
            n_test: 4000,
            rho: 0.95,
            mu: 3.0,
            sigma: 1.0,
            core_spread: 2.0,
            kappa: 10.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn latent_dim(&self) -> usize {
        self.k_core + self.k_sp + self.k_noise
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(format!("synth config: {msg}")));
        if self.k_core == 0 || self.k_sp == 0 || self.k_noise == 0 {
            return bad("latent dimensions must be positive");
        }
        if self.d < self.latent_dim() {
            return bad("output dimension is smaller than the latent dimension");
        }
        if self.n_train == 0 || self.n_test == 0 {
            return bad("split sizes must be positive");
        }
        if !(self.rho >= 0.5 && self.rho < 1.0) {
            return bad("rho must lie in [0.5, 1)");
        }
        if self.kappa.is_nan() || self.kappa < 1.0 {
            return bad("kappa must be at least 1");
        }
        if !(self.mu >= 0.0 && self.sigma >= 0.0 && self.core_spread >= 0.0) {
            return bad("mu, sigma and core_spread must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthGroundTruth {
    /// `d x k` mixing matrix, row-major.
    pub mixing: Vec<f64>,
    pub d: usize,
    pub k: usize,
    pub core: Range<usize>,
    pub spurious: Range<usize>,
    pub noise: Range<usize>,
    pub condition: f64,
    /// Core rows of the pseudo-inverse of the mixing matrix, row-major.
    pub core_recovery: Vec<f64>,
}

impl SynthGroundTruth {
    pub fn mixing_matrix(&self) -> Matrix {
        Matrix::from_row_slice(self.d, self.k, &self.mixing)
    }

    pub fn core_recovery_matrix(&self) -> Matrix {
        Matrix::from_row_slice(self.core.len(), self.d, &self.core_recovery)
    }
}

fn condition_number(a: &Matrix) -> f64 {
    let sv = a.singular_values();
    let max = sv.max();
    let min = sv.min();
    if min > 0.0 { max / min } else { f64::INFINITY }
}

fn draw_mixing(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<(Matrix, f64)> {
    let k = cfg.latent_dim();
    for _ in 0..MAX_MIXING_DRAWS {
        let mut a = Matrix::zeros(cfg.d, k);
        for r in 0..cfg.d {
            for c in 0..k {
                a[(r, c)] = rng.sample::<f64, _>(StandardNormal);
            }
        }
        let cond = condition_number(&a);
        if cond <= cfg.kappa {
            return Ok((a, cond));
        }
    }
    Err(Error::ConditioningFailed(MAX_MIXING_DRAWS))
}

fn draw_split(
    cfg: &SynthConfig,
    mixing: &Matrix,
    n: usize,
    rho: f64,
    tag: &str,
    rng: &mut ChaCha8Rng,
) -> Result<EmbeddingDataset> {
    let k = cfg.latent_dim();
    let mut y = Vec::with_capacity(n);
    let mut c = Vec::with_capacity(n);
    let mut latents = Matrix::zeros(n, k);
    for j in 0..n {
        let yj = u8::from(rng.random::<f64>() < 0.5);
        let cj = if rng.random::<f64>() < rho { yj } else { 1 - yj };
        let sy = if yj == 1 { 1.0 } else { -1.0 };
        let sc = if cj == 1 { 1.0 } else { -1.0 };
        for i in 0..k {
            let g: f64 = rng.sample(StandardNormal);
            latents[(j, i)] = if i < cfg.k_core {
                cfg.core_spread * g + if i == 0 { sy * cfg.mu } else { 0.0 }
            } else if i < cfg.k_core + cfg.k_sp {
                g + if i == cfg.k_core { sc * cfg.mu } else { 0.0 }
            } else {
                cfg.sigma * g
            };
        }
        y.push(yj);
        c.push(cj);
    }
    let z = latents * mixing.transpose();
    EmbeddingDataset::from_matrix(tag, &z, y, c)
}

/// Draws the train and test splits and the ground truth for `cfg`.
pub fn generate(cfg: &SynthConfig) -> Result<(EmbeddingDataset, EmbeddingDataset, SynthGroundTruth)> {
    cfg.validate()?;
    let mut mix_rng = seeded_rng(derive_seed(cfg.seed, 0));
    let (a, condition) = draw_mixing(cfg, &mut mix_rng)?;
    let train = draw_split(cfg, &a, cfg.n_train, cfg.rho, "train", &mut seeded_rng(derive_seed(cfg.seed, 1)))?;
    let test = draw_split(cfg, &a, cfg.n_test, 0.5, "test", &mut seeded_rng(derive_seed(cfg.seed, 2)))?;

    let pinv = a
        .clone()
        .pseudo_inverse(1e-12)
        .map_err(|e| Error::InvalidArgument(format!("pseudo-inverse failed: {e}")))?;
    let k = cfg.latent_dim();
    let core_recovery: Vec<f64> = (0..cfg.k_core)
        .flat_map(|r| (0..cfg.d).map(move |c| (r, c)))
        .map(|(r, c)| pinv[(r, c)])
        .collect();
    let mixing: Vec<f64> = (0..cfg.d)
        .flat_map(|r| (0..k).map(move |c| (r, c)))
        .map(|(r, c)| a[(r, c)])
        .collect();
    let truth = SynthGroundTruth {
        mixing,
        d: cfg.d,
        k,
        core: 0..cfg.k_core,
        spurious: cfg.k_core..cfg.k_core + cfg.k_sp,
        noise: cfg.k_core + cfg.k_sp..k,
        condition,
        core_recovery,
    };
    Ok((train, test, truth))
}

/// Probe trained on the recovered core latents only.
pub fn oracle_core_wga(
    truth: &SynthGroundTruth,
    train: &EmbeddingDataset,
    test: &EmbeddingDataset,
) -> Result<EvalReport> {
    let p = truth.core_recovery_matrix();
    let xtr = train.to_matrix() * p.transpose();
    let xte = test.to_matrix() * p.transpose();
    let model = fit_probe_matrix(&xtr, train.labels(), None, &LbfgsOptions::default())?;
    evaluate_matrix(&model, &xte, test.labels(), test.attributes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            n_train: 400,
            n_test: 300,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_and_shaped() {
        let (a, b, t) = generate(&small()).unwrap();
        let (a2, b2, t2) = generate(&small()).unwrap();
        assert_eq!(a, a2);
        assert_eq!(b, b2);
        assert_eq!(t, t2);
        assert_eq!((a.len(), a.dim(), b.len()), (400, 64, 300));
        assert!(t.condition <= 10.0);
    }

    #[test]
    fn core_recovery_inverts_mixing() {
        let (_, _, t) = generate(&small()).unwrap();
        let prod = t.core_recovery_matrix() * t.mixing_matrix();
        for r in 0..4 {
            for c in 0..16 {
                let want = if r == c { 1.0 } else { 0.0 };
                assert!((prod[(r, c)] - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn tight_kappa_fails() {
        let cfg = SynthConfig {
            kappa: 1.0,
            ..small()
        };
        assert!(matches!(generate(&cfg), Err(Error::ConditioningFailed(_))));
    }

    #[test]
    fn rejects_bad_rho() {
        let cfg = SynthConfig { rho: 1.0, ..small() };
        assert!(generate(&cfg).is_err());
    }
}
