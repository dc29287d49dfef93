//! Identify, remove and linearly disentangle spurious features in frozen
//! embedding datasets.
//!
//! The crate is `no_std` (it needs `alloc`). Everything here is a pure
//! function of its inputs and an explicit seed; file formats, manifests and
//! the command line live in the `spurious` companion crate.
//!
//! The main pieces:
//!
//! * [`dataset`]: embedding datasets, group bookkeeping and group upsampling.
//! * [`linear_map`]: affine maps (rotations, encoders, PCA projections).
//! * [`probe`]: unregularized logistic-regression probes fit with [`lbfgs`].
//! * [`metrics`]: accuracy and worst-group accuracy.
//! * [`spuriousness`]: per-neuron spuriousness scores, top-N selection and
//!   Haar-random rotations.
//! * [`hsic`]: the Hilbert-Schmidt independence criterion and its gradient.
//! * [`gwae`]: the group-aware linear autoencoder.
//! * [`pca`]: principal component analysis with a fixed sign convention.
//! * [`pipeline`]: composition of the transforms above into evaluated runs.
//! * [`harness`]: test-set cross-validated upper bound and bootstrap.
//! * [`synth`]: planted-factor synthetic datasets with a ground-truth oracle.
#![cfg_attr(not(feature = "std"), no_std)]
#![warn(clippy::std_instead_of_alloc)]
#![warn(clippy::std_instead_of_core)]

extern crate alloc;

mod error;
mod math;
mod rng;

pub mod adam;
pub mod dataset;
pub mod gwae;
pub mod harness;
pub mod hsic;
pub mod lbfgs;
pub mod linear_map;
pub mod metrics;
pub mod pca;
pub mod pipeline;
pub mod probe;
pub mod spuriousness;
pub mod synth;

pub use self::dataset::{AttributionSummary, EmbeddingDataset};
pub use self::error::{Error, Result};
pub use self::linear_map::{LinearMap, MapKind};
pub use self::rng::{derive_seed, seeded_rng};

/// Dense column-major matrix used for all numerical work.
pub type Matrix = nalgebra::DMatrix<f64>;
/// Dense column vector.
pub type Vector = nalgebra::DVector<f64>;
