//! Affine maps `x -> W x + b` applied row-wise to feature matrices.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::{Error, Matrix, Result};

/// What a [`LinearMap`] represents. The discriminants are the on-disk codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
#[repr(u8)]
pub enum MapKind {
    Rotation = 0,
    Encoder = 1,
    Pca = 2,
    Generic = 3,
}

impl MapKind {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Self::Rotation),
            1 => Some(Self::Encoder),
            2 => Some(Self::Pca),
            3 => Some(Self::Generic),
            _ => None,
        }
    }
}

/// An `out_dim x in_dim` affine map with `f32` storage.
///
/// Weights are stored exactly as they are serialized, so a map survives a
/// save/load cycle bit for bit. Arithmetic in [`apply_map`] is done in `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearMap {
    kind: MapKind,
    out_dim: usize,
    in_dim: usize,
    /// Row-major `out_dim * in_dim`.
    weights: Vec<f32>,
    bias: Option<Vec<f32>>,
    meta: Value,
}

impl LinearMap {
    pub fn new(
        kind: MapKind,
        out_dim: usize,
        in_dim: usize,
        weights: Vec<f32>,
        bias: Option<Vec<f32>>,
        meta: Value,
    ) -> Result<Self> {
        if weights.len() != out_dim * in_dim {
            return Err(Error::DimensionMismatch {
                context: "map weight length",
                expected: out_dim * in_dim,
                actual: weights.len(),
            });
        }
        if let Some(b) = &bias {
            if b.len() != out_dim {
                return Err(Error::DimensionMismatch {
                    context: "map bias length",
                    expected: out_dim,
                    actual: b.len(),
                });
            }
        }
        if kind == MapKind::Rotation {
            if out_dim != in_dim {
                return Err(Error::InvalidArgument("rotation maps must be square".into()));
            }
            if bias.is_some() {
                return Err(Error::InvalidArgument("rotation maps carry no bias".into()));
            }
        }
        if weights.iter().chain(bias.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("map has non-finite entries".into()));
        }
        Ok(Self {
            kind,
            out_dim,
            in_dim,
            weights,
            bias,
            meta,
        })
    }

    /// Rounds an `f64` weight matrix (and optional bias) to a map.
    pub fn from_matrix(
        kind: MapKind,
        weights: &Matrix,
        bias: Option<&[f64]>,
        meta: Value,
    ) -> Result<Self> {
        let (out_dim, in_dim) = weights.shape();
        let mut w = Vec::with_capacity(out_dim * in_dim);
        for r in 0..out_dim {
            for c in 0..in_dim {
                w.push(weights[(r, c)] as f32);
            }
        }
        let b = bias.map(|b| b.iter().map(|&v| v as f32).collect());
        Self::new(kind, out_dim, in_dim, w, b, meta)
    }

    pub fn identity(dim: usize) -> Self {
        let mut w = alloc::vec![0.0f32; dim * dim];
        for i in 0..dim {
            w[i * dim + i] = 1.0;
        }
        Self {
            kind: MapKind::Generic,
            out_dim: dim,
            in_dim: dim,
            weights: w,
            bias: None,
            meta: Value::Null,
        }
    }

    pub fn kind(&self) -> MapKind {
        self.kind
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn bias(&self) -> Option<&[f32]> {
        self.bias.as_deref()
    }

    pub fn meta(&self) -> &Value {
        &self.meta
    }

    pub fn meta_mut(&mut self) -> &mut Value {
        &mut self.meta
    }

    pub fn weight_matrix(&self) -> Matrix {
        Matrix::from_fn(self.out_dim, self.in_dim, |r, c| self.weights[r * self.in_dim + c] as f64)
    }

    pub fn bias_vec(&self) -> Option<Vec<f64>> {
        self.bias.as_ref().map(|b| b.iter().map(|&v| v as f64).collect())
    }

    /// `max |W Wᵀ - I|`, meaningful for square maps.
    pub fn orthogonality_defect(&self) -> f64 {
        let w = self.weight_matrix();
        let g = &w * w.transpose();
        let mut worst = 0.0f64;
        for r in 0..g.nrows() {
            for c in 0..g.ncols() {
                let target = if r == c { 1.0 } else { 0.0 };
                worst = worst.max((g[(r, c)] - target).abs());
            }
        }
        worst
    }
}

/// Applies `map` to every row of `x`: row `j` becomes `W x_j + b`.
pub fn apply_map(x: &Matrix, map: &LinearMap) -> Result<Matrix> {
    if x.ncols() != map.in_dim {
        return Err(Error::DimensionMismatch {
            context: "apply_map input width",
            expected: map.in_dim,
            actual: x.ncols(),
        });
    }
    let mut out = x * map.weight_matrix().transpose();
    if let Some(b) = &map.bias {
        for (col, &bv) in b.iter().enumerate() {
            let bv = bv as f64;
            out.column_mut(col).add_scalar_mut(bv);
        }
    }
    Ok(out)
}
