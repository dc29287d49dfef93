//! Embedding datasets, attribution summaries and group bookkeeping.
//!
//! Every example carries a binary label `y` and a binary spurious attribute
//! `c`. The group of an example is `2 * y + c`, so the four groups are
//! `0 = (y0, c0)`, `1 = (y0, c1)`, `2 = (y1, c0)` and `3 = (y1, c1)`. The group
//! is always derived from `y` and `c` and never stored.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::index;
use rand::seq::SliceRandom;

use crate::{seeded_rng, Error, Matrix, Result};

/// Number of (label, attribute) groups.
pub const NUM_GROUPS: usize = 4;

/// Group id of an example with label `y` and attribute `c`.
#[inline]
pub fn group_of(y: u8, c: u8) -> usize {
    2 * y as usize + c as usize
}

/// An `n x d` matrix of frozen embeddings with per-example label and
/// spurious attribute.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingDataset {
    split_tag: String,
    n: usize,
    d: usize,
    /// Row-major `n * d` features.
    z: Vec<f32>,
    y: Vec<u8>,
    c: Vec<u8>,
}

impl EmbeddingDataset {
    /// Builds a dataset, checking shapes, label ranges and finiteness.
    pub fn new(
        split_tag: impl Into<String>,
        d: usize,
        z: Vec<f32>,
        y: Vec<u8>,
        c: Vec<u8>,
    ) -> Result<Self> {
        let n = y.len();
        if c.len() != n {
            return Err(Error::DimensionMismatch {
                context: "attribute vector length",
                expected: n,
                actual: c.len(),
            });
        }
        if z.len() != n * d {
            return Err(Error::DimensionMismatch {
                context: "feature matrix length",
                expected: n * d,
                actual: z.len(),
            });
        }
        if let Some(j) = y.iter().chain(c.iter()).position(|&v| v > 1) {
            return Err(Error::InvalidDataset(format!(
                "non-binary label or attribute at position {}",
                j % n.max(1)
            )));
        }
        if let Some(k) = z.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset(format!(
                "non-finite feature at row {}, column {}",
                k / d,
                k % d
            )));
        }
        Ok(Self {
            split_tag: split_tag.into(),
            n,
            d,
            z,
            y,
            c,
        })
    }

    /// Builds a dataset from an `n x d` matrix (values are rounded to `f32`).
    pub fn from_matrix(
        split_tag: impl Into<String>,
        features: &Matrix,
        y: Vec<u8>,
        c: Vec<u8>,
    ) -> Result<Self> {
        let (n, d) = features.shape();
        let mut z = Vec::with_capacity(n * d);
        for j in 0..n {
            for i in 0..d {
                z.push(features[(j, i)] as f32);
            }
        }
        Self::new(split_tag, d, z, y, c)
    }

    pub fn split_tag(&self) -> &str {
        &self.split_tag
    }

    pub fn with_split_tag(mut self, tag: impl Into<String>) -> Self {
        self.split_tag = tag.into();
        self
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Row-major feature storage.
    pub fn features(&self) -> &[f32] {
        &self.z
    }

    pub fn row(&self, j: usize) -> &[f32] {
        &self.z[j * self.d..(j + 1) * self.d]
    }

    pub fn labels(&self) -> &[u8] {
        &self.y
    }

    pub fn attributes(&self) -> &[u8] {
        &self.c
    }

    pub fn group(&self, j: usize) -> usize {
        group_of(self.y[j], self.c[j])
    }

    pub fn groups(&self) -> Vec<usize> {
        (0..self.n).map(|j| self.group(j)).collect()
    }

    /// Features widened to `f64`.
    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_fn(self.n, self.d, |r, c| self.z[r * self.d + c] as f64)
    }

    /// A new dataset made of the given rows, in the given order (repeats allowed).
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut z = Vec::with_capacity(rows.len() * self.d);
        let mut y = Vec::with_capacity(rows.len());
        let mut c = Vec::with_capacity(rows.len());
        for &j in rows {
            z.extend_from_slice(self.row(j));
            y.push(self.y[j]);
            c.push(self.c[j]);
        }
        Self {
            split_tag: self.split_tag.clone(),
            n: rows.len(),
            d: self.d,
            z,
            y,
            c,
        }
    }
}

/// Number of examples in each of the four groups.
pub fn group_counts(ds: &EmbeddingDataset) -> [usize; NUM_GROUPS] {
    counts_of(ds.labels(), ds.attributes())
}

pub(crate) fn counts_of(y: &[u8], c: &[u8]) -> [usize; NUM_GROUPS] {
    let mut counts = [0; NUM_GROUPS];
    for (&yj, &cj) in y.iter().zip(c) {
        counts[group_of(yj, cj)] += 1;
    }
    counts
}

/// Row indices of a group-balanced version of `ds`.
///
/// Every group is grown to the size of the largest group: each row is copied
/// `max / count` times, the remaining `max % count` rows are drawn uniformly
/// without replacement, and the final order is a seeded shuffle.
pub fn upsample_indices(y: &[u8], c: &[u8], seed: u64) -> Result<Vec<usize>> {
    let counts = counts_of(y, c);
    if let Some(g) = counts.iter().position(|&k| k == 0) {
        return Err(Error::EmptyGroup(g));
    }
    let target = counts.iter().copied().max().unwrap_or(0);
    let mut members: [Vec<usize>; NUM_GROUPS] = Default::default();
    for (j, (&yj, &cj)) in y.iter().zip(c).enumerate() {
        members[group_of(yj, cj)].push(j);
    }

    let mut rng = seeded_rng(seed);
    let mut out = Vec::with_capacity(target * NUM_GROUPS);
    for rows in &members {
        let copies = target / rows.len();
        for _ in 0..copies {
            out.extend_from_slice(rows);
        }
        let remainder = target % rows.len();
        if remainder > 0 {
            let picked = index::sample(&mut rng, rows.len(), remainder);
            let mut picked = picked.into_vec();
            picked.sort_unstable();
            out.extend(picked.into_iter().map(|k| rows[k]));
        }
    }
    out.shuffle(&mut rng);
    Ok(out)
}

/// Group-balanced copy of `ds` (see [`upsample_indices`]).
pub fn upsample_groups(ds: &EmbeddingDataset, seed: u64) -> Result<EmbeddingDataset> {
    let rows = upsample_indices(ds.labels(), ds.attributes(), seed)?;
    Ok(ds.select_rows(&rows))
}

/// Space id of the untransformed backbone features.
pub const RAW_SPACE: &str = "raw";

/// Per-example, per-neuron foreground and background mean absolute
/// attributions. Row `j` refers to row `j` of the matching dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionSummary {
    space_id: String,
    n: usize,
    d: usize,
    fg: Vec<f32>,
    bg: Vec<f32>,
}

impl AttributionSummary {
    pub fn new(
        space_id: impl Into<String>,
        n: usize,
        d: usize,
        fg: Vec<f32>,
        bg: Vec<f32>,
    ) -> Result<Self> {
        for (name, m) in [("foreground", &fg), ("background", &bg)] {
            if m.len() != n * d {
                return Err(Error::DimensionMismatch {
                    context: "attribution matrix length",
                    expected: n * d,
                    actual: m.len(),
                });
            }
            if let Some(k) = m.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::InvalidDataset(format!(
                    "{name} attribution at row {}, neuron {} is negative or non-finite",
                    k / d,
                    k % d
                )));
            }
        }
        Ok(Self {
            space_id: space_id.into(),
            n,
            d,
            fg,
            bg,
        })
    }

    pub fn space_id(&self) -> &str {
        &self.space_id
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn foreground(&self) -> &[f32] {
        &self.fg
    }

    pub fn background(&self) -> &[f32] {
        &self.bg
    }

    /// Checks that a raw-space summary lines up with `ds`.
    pub fn check_against(&self, ds: &EmbeddingDataset) -> Result<()> {
        if self.n != ds.len() {
            return Err(Error::DimensionMismatch {
                context: "summary rows vs dataset rows",
                expected: ds.len(),
                actual: self.n,
            });
        }
        if self.space_id == RAW_SPACE && self.d != ds.dim() {
            return Err(Error::DimensionMismatch {
                context: "raw summary width vs dataset dimension",
                expected: ds.dim(),
                actual: self.d,
            });
        }
        Ok(())
    }
}

impl core::fmt::Display for EmbeddingDataset {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        let counts = group_counts(self);
        write!(
            f,
            "{} n={} d={} groups={:?}",
            if self.split_tag.is_empty() {
                "<untagged>".to_string()
            } else {
                self.split_tag.clone()
            },
            self.n,
            self.d,
            counts
        )
    }
}
