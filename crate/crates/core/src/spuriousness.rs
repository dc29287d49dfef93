//! Spuriousness scores from attribution summaries, top-N neuron selection and
//! the random-rotation control.
//!
//! For example `j` and neuron `i` the per-example score is the mean absolute
//! attribution on the foreground (object) pixels minus the mean absolute
//! attribution on the background pixels. A neuron's score is the average of
//! its per-example scores over the training set, so large positive scores mark
//! neurons that look at the object and negative scores mark neurons that look
//! at the background.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::dataset::AttributionSummary;
use crate::linear_map::{LinearMap, MapKind};
use crate::{seeded_rng, Error, Matrix, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpuriousnessVector {
    pub scores: Vec<f64>,
    pub space_id: String,
    pub n_examples: usize,
}

impl SpuriousnessVector {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Per-example scores `fg - bg` as an `n x d` matrix.
pub fn per_example_scores(summary: &AttributionSummary) -> Matrix {
    let (n, d) = (summary.len(), summary.dim());
    let fg = summary.foreground();
    let bg = summary.background();
    Matrix::from_fn(n, d, |j, i| fg[j * d + i] as f64 - bg[j * d + i] as f64)
}

/// Neuron scores averaged over every example of the summary.
pub fn spuriousness_scores(summary: &AttributionSummary) -> SpuriousnessVector {
    let rows: Vec<usize> = (0..summary.len()).collect();
    scores_over_rows(summary, &rows)
}

/// Neuron scores averaged over the listed examples (repeats count repeatedly).
///
/// Used to recompute scores on bootstrap resamples of the training set.
pub fn scores_over_rows(summary: &AttributionSummary, rows: &[usize]) -> SpuriousnessVector {
    let d = summary.dim();
    let fg = summary.foreground();
    let bg = summary.background();
    let mut acc = alloc::vec![0.0f64; d];
    for &j in rows {
        let base = j * d;
        for (i, a) in acc.iter_mut().enumerate() {
            *a += fg[base + i] as f64 - bg[base + i] as f64;
        }
    }
    let inv = if rows.is_empty() { 0.0 } else { 1.0 / rows.len() as f64 };
    SpuriousnessVector {
        scores: acc.into_iter().map(|v| v * inv).collect(),
        space_id: summary.space_id().to_string(),
        n_examples: rows.len(),
    }
}

/// Indices of the `n` largest scores, largest first; ties go to the lower index.
pub fn top_n_core(s: &SpuriousnessVector, n: usize) -> Result<Vec<usize>> {
    top_n_of(&s.scores, n)
}

pub(crate) fn top_n_of(scores: &[f64], n: usize) -> Result<Vec<usize>> {
    if n == 0 || n > scores.len() {
        return Err(Error::InvalidArgument(alloc::format!(
            "N = {n} outside 1..={}",
            scores.len()
        )));
    }
    if let Some(i) = scores.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(alloc::format!("score {i} is not finite")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(n);
    Ok(order)
}

/// A Haar-distributed rotation (orthogonal, determinant +1) of size `dim`.
///
/// Draws a standard Gaussian matrix, takes its QR factorization, flips the
/// columns of `Q` so the diagonal of `R` is positive, then negates the first
/// column if the determinant is negative.
pub fn random_rotation(dim: usize, seed: u64) -> Result<LinearMap> {
    rotation_matrix(dim, seed).and_then(|q| {
        LinearMap::from_matrix(
            MapKind::Rotation,
            &q,
            None,
            json!({ "seed": seed, "space_id": rotation_space_id(seed) }),
        )
    })
}

/// The `f64` rotation behind [`random_rotation`].
pub fn rotation_matrix(dim: usize, seed: u64) -> Result<Matrix> {
    if dim == 0 {
        return Err(Error::InvalidArgument("rotation dimension must be positive".into()));
    }
    let mut rng = seeded_rng(seed);
    // Row-major fill so the draw order does not depend on storage layout.
    let mut g = Matrix::zeros(dim, dim);
    for r in 0..dim {
        for c in 0..dim {
            g[(r, c)] = rng.sample::<f64, _>(StandardNormal);
        }
    }
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for k in 0..dim {
        if r[(k, k)] < 0.0 {
            q.column_mut(k).neg_mut();
        }
    }
    if q.clone().determinant() < 0.0 {
        q.column_mut(0).neg_mut();
    }
    Ok(q)
}

/// Space id given to features after a seeded rotation.
pub fn rotation_space_id(seed: u64) -> String {
    alloc::format!("rot:{seed}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn summary(n: usize, d: usize, fg: Vec<f32>, bg: Vec<f32>) -> AttributionSummary {
        AttributionSummary::new("raw", n, d, fg, bg).unwrap()
    }

    #[test]
    fn single_example() {
        let s = spuriousness_scores(&summary(1, 1, vec![0.8], vec![0.3]));
        assert!((s.scores[0] - 0.5).abs() < 1e-7);
    }

    #[test]
    fn averages_examples() {
        let s = spuriousness_scores(&summary(2, 1, vec![0.6, 0.2], vec![0.1, 0.1]));
        assert!((s.scores[0] - 0.3).abs() < 1e-7);
    }

    #[test]
    fn equal_fg_bg_gives_zero() {
        let m = vec![0.1, 0.7, 0.3, 0.0, 2.0, 0.5];
        let s = spuriousness_scores(&summary(2, 3, m.clone(), m));
        assert!(s.scores.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn top_n_examples() {
        let s = SpuriousnessVector {
            scores: vec![0.3, -0.1, 0.5],
            space_id: "raw".into(),
            n_examples: 1,
        };
        assert_eq!(top_n_core(&s, 2).unwrap(), vec![2, 0]);
        let tie = SpuriousnessVector {
            scores: vec![0.2, 0.2],
            ..s.clone()
        };
        assert_eq!(top_n_core(&tie, 1).unwrap(), vec![0]);
        assert!(top_n_core(&s, 0).is_err());
        assert!(top_n_core(&s, 4).is_err());
    }

    #[test]
    fn rotation_dim_one_is_identity() {
        let r = random_rotation(1, 42).unwrap();
        assert_eq!(r.weights(), &[1.0]);
    }

    #[test]
    fn rotation_dim_16_is_special_orthogonal() {
        for seed in 0..5 {
            let q = rotation_matrix(16, seed).unwrap();
            let map = random_rotation(16, seed).unwrap();
            assert!(map.orthogonality_defect() < 1e-5);
            assert!((q.determinant() - 1.0).abs() < 1e-5);
            assert!((map.weight_matrix().determinant() - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn rotation_is_deterministic() {
        assert_eq!(random_rotation(8, 3).unwrap(), random_rotation(8, 3).unwrap());
        assert_ne!(random_rotation(8, 3).unwrap(), random_rotation(8, 4).unwrap());
    }
}
