//! Principal component analysis through the SVD of the centered data.
//!
//! Component signs are fixed so that each component's entry of largest
//! magnitude is positive (the earliest such entry on ties), which makes fitted
//! projections reproducible.

use alloc::vec::Vec;

use serde_json::json;

use crate::linear_map::{LinearMap, MapKind};
use crate::{Error, Matrix, Result, Vector};

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Vector,
    /// `k x p`, orthonormal rows, ordered by decreasing singular value.
    pub components: Matrix,
    pub singular_values: Vec<f64>,
    pub n_fitted: usize,
}

impl PcaModel {
    pub fn n_components(&self) -> usize {
        self.components.nrows()
    }

    /// Variance along each component, `s_k^2 / (n - 1)`.
    pub fn explained_variance(&self) -> Vec<f64> {
        let denom = (self.n_fitted - 1) as f64;
        self.singular_values.iter().map(|s| s * s / denom).collect()
    }

    /// The first `n` components as an affine map `x -> C (x - mean)`.
    pub fn to_map(&self, n: usize) -> Result<LinearMap> {
        check_count(self, n)?;
        let c = self.components.rows(0, n).into_owned();
        let shift = &c * &self.mean;
        let bias: Vec<f64> = shift.iter().map(|v| -v).collect();
        LinearMap::from_matrix(MapKind::Pca, &c, Some(&bias), json!({ "components": n }))
    }
}

fn check_count(pca: &PcaModel, n: usize) -> Result<()> {
    if n == 0 || n > pca.n_components() {
        return Err(Error::InvalidArgument(alloc::format!(
            "component count {n} outside 1..={}",
            pca.n_components()
        )));
    }
    Ok(())
}

/// Fits PCA on the rows of `x`.
pub fn fit_pca(x: &Matrix) -> Result<PcaModel> {
    let (n, p) = x.shape();
    if n < 2 {
        return Err(Error::InvalidArgument("PCA needs at least two rows".into()));
    }
    if p == 0 {
        return Err(Error::Empty("PCA input has no columns"));
    }
    let mean = Vector::from_fn(p, |c, _| x.column(c).sum() / n as f64);
    let mut centered = x.clone();
    for (c, mut col) in centered.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mean[c]);
    }
    let svd = centered.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::InvalidArgument("SVD did not produce right singular vectors".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .total_cmp(&svd.singular_values[a])
            .then(a.cmp(&b))
    });
    let k = order.len();
    let mut components = Matrix::zeros(k, p);
    let mut singular_values = Vec::with_capacity(k);
    for (row, &src) in order.iter().enumerate() {
        let mut v: Vec<f64> = v_t.row(src).iter().copied().collect();
        let mut pivot = 0;
        for (i, val) in v.iter().enumerate() {
            if val.abs() > v[pivot].abs() {
                pivot = i;
            }
        }
        if v[pivot] < 0.0 {
            v.iter_mut().for_each(|e| *e = -*e);
        }
        for (col, val) in v.into_iter().enumerate() {
            components[(row, col)] = val;
        }
        singular_values.push(svd.singular_values[src]);
    }
    Ok(PcaModel {
        mean,
        components,
        singular_values,
        n_fitted: n,
    })
}

/// Scores of the rows of `x` on the first `n` components.
pub fn project(pca: &PcaModel, x: &Matrix, n: usize) -> Result<Matrix> {
    check_count(pca, n)?;
    if x.ncols() != pca.mean.len() {
        return Err(Error::DimensionMismatch {
            context: "PCA input width",
            expected: pca.mean.len(),
            actual: x.ncols(),
        });
    }
    let mut centered = x.clone();
    for (c, mut col) in centered.column_iter_mut().enumerate() {
        col.add_scalar_mut(-pca.mean[c]);
    }
    Ok(centered * pca.components.rows(0, n).transpose())
}

/// Maps component scores back to the input space.
pub fn inverse_project(pca: &PcaModel, scores: &Matrix) -> Result<Matrix> {
    let n = scores.ncols();
    check_count(pca, n)?;
    let mut out = scores * pca.components.rows(0, n);
    for (c, mut col) in out.column_iter_mut().enumerate() {
        col.add_scalar_mut(pca.mean[c]);
    }
    Ok(out)
}
