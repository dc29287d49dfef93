//! Hilbert-Schmidt independence criterion (biased empirical estimator) with
//! Gaussian kernels, and its gradient with respect to both inputs.
//!
//! For `m` paired samples with Gram matrices `K` and `L` the estimate is
//! `tr(K H L H) / (m - 1)^2` with the centering matrix `H = I - 11ᵀ / m`.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::math::{exp, sqrt};
use crate::{Error, Matrix, Result};

/// Kernel applied to each of the two inputs.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Kernel {
    /// Gaussian kernel whose bandwidth is the median pairwise distance of the
    /// batch, or 1 when that median is zero.
    #[default]
    GaussianMedian,
    /// Gaussian kernel `exp(-|a - b|^2 / (2 s^2))` with a fixed `s`.
    Gaussian { bandwidth: f64 },
}

/// Bandwidth used when the median pairwise distance is zero.
pub const FALLBACK_BANDWIDTH: f64 = 1.0;

struct Gram {
    k: Matrix,
    sq_dist: Matrix,
    bandwidth: f64,
    /// Pairs whose distance defines the median bandwidth, with their weight.
    median_pairs: Vec<(usize, usize, f64)>,
}

fn pairwise_sq_dist(x: &Matrix) -> Matrix {
    let m = x.nrows();
    let mut d = Matrix::zeros(m, m);
    for a in 0..m {
        for b in (a + 1)..m {
            let mut s = 0.0;
            for c in 0..x.ncols() {
                let t = x[(a, c)] - x[(b, c)];
                s += t * t;
            }
            d[(a, b)] = s;
            d[(b, a)] = s;
        }
    }
    d
}

/// Median of the distances over unordered pairs, with the pair(s) defining it.
fn median_distance(sq_dist: &Matrix) -> (f64, Vec<(usize, usize, f64)>) {
    let m = sq_dist.nrows();
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(m * (m - 1) / 2);
    for a in 0..m {
        for b in (a + 1)..m {
            pairs.push((sqrt(sq_dist[(a, b)]), a, b));
        }
    }
    let cmp = |p: &(f64, usize, usize), q: &(f64, usize, usize)| {
        p.0.total_cmp(&q.0).then(p.1.cmp(&q.1)).then(p.2.cmp(&q.2))
    };
    let count = pairs.len();
    let mid = count / 2;
    let (left, upper, _) = pairs.select_nth_unstable_by(mid, cmp);
    let upper = *upper;
    if count % 2 == 1 {
        (upper.0, alloc::vec![(upper.1, upper.2, 1.0)])
    } else {
        let lower = *left.iter().max_by(|p, q| cmp(p, q)).expect("at least two pairs");
        (
            0.5 * (lower.0 + upper.0),
            alloc::vec![(lower.1, lower.2, 0.5), (upper.1, upper.2, 0.5)],
        )
    }
}

fn gram(x: &Matrix, kernel: Kernel) -> Gram {
    let sq_dist = pairwise_sq_dist(x);
    let (bandwidth, median_pairs) = match kernel {
        Kernel::Gaussian { bandwidth } => (bandwidth, Vec::new()),
        Kernel::GaussianMedian => {
            let (med, pairs) = median_distance(&sq_dist);
            if med > 0.0 && med.is_finite() {
                (med, pairs)
            } else {
                (FALLBACK_BANDWIDTH, Vec::new())
            }
        }
    };
    let scale = -0.5 / (bandwidth * bandwidth);
    let k = sq_dist.map(|d| exp(d * scale));
    Gram {
        k,
        sq_dist,
        bandwidth,
        median_pairs,
    }
}

/// `H K H` for symmetric `K`.
fn center(k: &Matrix) -> Matrix {
    let m = k.nrows();
    let inv = 1.0 / m as f64;
    let means: Vec<f64> = (0..m).map(|i| k.row(i).sum() * inv).collect();
    let grand = means.iter().sum::<f64>() * inv;
    Matrix::from_fn(m, m, |i, j| k[(i, j)] - means[i] - means[j] + grand)
}

fn check(x: &Matrix, y: &Matrix) -> Result<()> {
    if x.nrows() != y.nrows() {
        return Err(Error::DimensionMismatch {
            context: "hsic sample counts",
            expected: x.nrows(),
            actual: y.nrows(),
        });
    }
    if x.nrows() < 2 {
        return Err(Error::InvalidArgument("hsic needs at least two samples".into()));
    }
    Ok(())
}

/// Biased HSIC estimate between the rows of `x` and the rows of `y`.
pub fn hsic(x: &Matrix, y: &Matrix, kernel: Kernel) -> Result<f64> {
    check(x, y)?;
    let gx = gram(x, kernel);
    let gy = gram(y, kernel);
    let m = x.nrows() as f64;
    let value = center(&gx.k).component_mul(&gy.k).sum() / ((m - 1.0) * (m - 1.0));
    Ok(value.max(0.0))
}

/// HSIC with the gradients with respect to `x` and `y`.
///
/// The median bandwidth is differentiated through the pair distance(s) that
/// define it.
pub fn hsic_with_grad(x: &Matrix, y: &Matrix, kernel: Kernel) -> Result<(f64, Matrix, Matrix)> {
    check(x, y)?;
    let gx = gram(x, kernel);
    let gy = gram(y, kernel);
    let m = x.nrows() as f64;
    let norm = 1.0 / ((m - 1.0) * (m - 1.0));
    let kc = center(&gx.k);
    let value = kc.component_mul(&gy.k).sum() * norm;
    if value <= 0.0 {
        return Ok((0.0, Matrix::zeros(x.nrows(), x.ncols()), Matrix::zeros(y.nrows(), y.ncols())));
    }
    // d value / d K = H L H * norm and vice versa.
    let lc = center(&gy.k);
    let dx = gram_input_grad(x, &gx, &(lc * norm));
    let dy = gram_input_grad(y, &gy, &(kc * norm));
    Ok((value, dx, dy))
}

/// Back-propagates `d value / d K` to the kernel inputs.
fn gram_input_grad(x: &Matrix, g: &Gram, dk: &Matrix) -> Matrix {
    let s2 = g.bandwidth * g.bandwidth;
    // W = dK ∘ K; dK_ab/dx_a = -K_ab (x_a - x_b) / s^2 and K is symmetric.
    let w = dk.component_mul(&g.k);
    let row_sums: Vec<f64> = (0..w.nrows()).map(|i| w.row(i).sum()).collect();
    let wx = &w * x;
    let mut grad = Matrix::from_fn(x.nrows(), x.ncols(), |a, c| {
        -2.0 / s2 * (row_sums[a] * x[(a, c)] - wx[(a, c)])
    });
    if !g.median_pairs.is_empty() {
        // dK_ab/ds = K_ab D_ab / s^3.
        let d_bw = w.component_mul(&g.sq_dist).sum() / (s2 * g.bandwidth);
        for &(a, b, weight) in &g.median_pairs {
            let dist = sqrt(g.sq_dist[(a, b)]);
            if dist == 0.0 {
                continue;
            }
            let coef = d_bw * weight / dist;
            for c in 0..x.ncols() {
                let t = coef * (x[(a, c)] - x[(b, c)]);
                grad[(a, c)] += t;
                grad[(b, c)] -= t;
            }
        }
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_rows_give_zero() {
        let x = Matrix::from_element(6, 2, 3.0);
        let y = Matrix::from_fn(6, 1, |r, _| r as f64);
        assert_eq!(hsic(&x, &y, Kernel::default()).unwrap(), 0.0);
    }

    #[test]
    fn requires_two_samples_and_matching_rows() {
        let a = Matrix::zeros(1, 2);
        assert!(hsic(&a, &a, Kernel::default()).is_err());
        assert!(hsic(&Matrix::zeros(3, 1), &Matrix::zeros(4, 1), Kernel::default()).is_err());
    }

    #[test]
    fn median_of_even_pair_count() {
        // Points 0, 1, 3 on a line: distances 1, 2, 3 (odd count).
        let x = Matrix::from_row_slice(3, 1, &[0.0, 1.0, 3.0]);
        let (med, pairs) = median_distance(&pairwise_sq_dist(&x));
        assert_eq!(med, 2.0);
        assert_eq!(pairs.len(), 1);
        // Four points: six distances 1,2,3,1,2,1 -> sorted 1,1,1,2,2,3 -> median 1.5.
        let x = Matrix::from_row_slice(4, 1, &[0.0, 1.0, 2.0, 3.0]);
        let (med, pairs) = median_distance(&pairwise_sq_dist(&x));
        assert_eq!(med, 1.5);
        assert_eq!(pairs.len(), 2);
    }

    #[test]
    fn symmetric_and_nonnegative() {
        let x = Matrix::from_fn(7, 2, |r, c| ((r * 3 + c * 5) % 7) as f64 * 0.3);
        let y = Matrix::from_fn(7, 3, |r, c| ((r * 2 + c) % 5) as f64 - 1.0);
        let a = hsic(&x, &y, Kernel::default()).unwrap();
        let b = hsic(&y, &x, Kernel::default()).unwrap();
        assert!(a >= 0.0);
        assert!((a - b).abs() < 1e-10);
    }
}
