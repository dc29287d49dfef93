//! Linear probes: unregularized binary logistic regression on frozen
//! features, fit with L-BFGS from a zero start.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dataset::EmbeddingDataset;
use crate::lbfgs::{self, LbfgsOptions, Termination};
use crate::math::{sigmoid, softplus};
use crate::metrics::{evaluate_predictions, EvalReport};
use crate::{Error, Matrix, Result, Vector};

/// Optimizer diagnostics recorded with every fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub final_loss: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub termination: Termination,
}

/// A fitted probe; the logit of `x` is `w · x + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Columns of the input the probe was fit on, when it used a subset.
    pub feature_index: Option<Vec<usize>>,
    pub diagnostics: FitDiagnostics,
}

impl ProbeModel {
    pub fn logits(&self, x: &Matrix) -> Result<Vector> {
        let cols = self.columns(x)?;
        let w = Vector::from_column_slice(&self.weights);
        let mut out = match cols {
            Some(sub) => sub * w,
            None => x * w,
        };
        out.add_scalar_mut(self.bias);
        Ok(out)
    }

    fn columns(&self, x: &Matrix) -> Result<Option<Matrix>> {
        match &self.feature_index {
            Some(idx) => {
                if let Some(&bad) = idx.iter().find(|&&i| i >= x.ncols()) {
                    return Err(Error::DimensionMismatch {
                        context: "probe feature index vs input width",
                        expected: x.ncols(),
                        actual: bad + 1,
                    });
                }
                Ok(Some(x.select_columns(idx.iter())))
            }
            None => {
                if x.ncols() != self.weights.len() {
                    return Err(Error::DimensionMismatch {
                        context: "probe input width",
                        expected: self.weights.len(),
                        actual: x.ncols(),
                    });
                }
                Ok(None)
            }
        }
    }
}

/// Fits a probe on the rows of `x` with binary labels `y`.
pub fn fit_probe_matrix(
    x: &Matrix,
    y: &[u8],
    feature_index: Option<&[usize]>,
    opts: &LbfgsOptions,
) -> Result<ProbeModel> {
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch {
            context: "probe rows vs labels",
            expected: y.len(),
            actual: x.nrows(),
        });
    }
    let positives = y.iter().filter(|&&v| v == 1).count();
    if positives == 0 || positives == y.len() {
        return Err(Error::SingleClass);
    }
    let sub;
    let design = match feature_index {
        Some(idx) => {
            if let Some(&bad) = idx.iter().find(|&&i| i >= x.ncols()) {
                return Err(Error::InvalidArgument(alloc::format!(
                    "feature index {bad} out of range for {} columns",
                    x.ncols()
                )));
            }
            sub = x.select_columns(idx.iter());
            &sub
        }
        None => x,
    };

    let (n, p) = design.shape();
    let targets = Vector::from_iterator(n, y.iter().map(|&v| v as f64));
    let inv_n = 1.0 / n as f64;
    let objective = |theta: &[f64], grad: &mut [f64]| {
        let w = Vector::from_column_slice(&theta[..p]);
        let b = theta[p];
        let mut z = design * &w;
        z.add_scalar_mut(b);
        let mut loss = 0.0;
        let mut resid = Vector::zeros(n);
        for j in 0..n {
            loss += softplus(z[j]) - targets[j] * z[j];
            resid[j] = sigmoid(z[j]) - targets[j];
        }
        let gw = design.tr_mul(&resid);
        for i in 0..p {
            grad[i] = gw[i] * inv_n;
        }
        grad[p] = resid.sum() * inv_n;
        loss * inv_n
    };
    let result = lbfgs::minimize(objective, alloc::vec![0.0; p + 1], opts)?;
    let diagnostics = FitDiagnostics {
        final_loss: result.value,
        grad_norm: result.grad_norm,
        iterations: result.iterations,
        evaluations: result.evaluations,
        converged: result.converged(),
        termination: result.termination,
    };
    let mut weights = result.x;
    let bias = weights.pop().unwrap_or(0.0);
    Ok(ProbeModel {
        weights,
        bias,
        feature_index: feature_index.map(<[usize]>::to_vec),
        diagnostics,
    })
}

/// Fits a probe on a dataset, optionally restricted to `feature_index` columns.
pub fn fit_probe(train: &EmbeddingDataset, feature_index: Option<&[usize]>) -> Result<ProbeModel> {
    fit_probe_matrix(
        &train.to_matrix(),
        train.labels(),
        feature_index,
        &LbfgsOptions::default(),
    )
}

/// Class predictions; a logit of exactly zero predicts class 0.
pub fn predict(model: &ProbeModel, x: &Matrix) -> Result<Vec<u8>> {
    Ok(model
        .logits(x)?
        .iter()
        .map(|&z| u8::from(z > 0.0))
        .collect())
}

/// Accuracy and worst-group accuracy of `model` on the rows of `x`.
pub fn evaluate_matrix(model: &ProbeModel, x: &Matrix, y: &[u8], c: &[u8]) -> Result<EvalReport> {
    if y.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let pred = predict(model, x)?;
    evaluate_predictions(&pred, y, c)
}

pub fn evaluate(model: &ProbeModel, test: &EmbeddingDataset) -> Result<EvalReport> {
    evaluate_matrix(model, &test.to_matrix(), test.labels(), test.attributes())
}
