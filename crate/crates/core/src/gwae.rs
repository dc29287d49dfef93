//! Group-aware linear autoencoder.
//!
//! A linear encoder maps a (standardized) embedding `z` to `u = We z + be`,
//! whose first `d_y` coordinates form the label part, the next `d_c` the
//! attribute part and the remaining `d_n` the residual part. Two linear heads
//! predict the label from the label part and the attribute from the attribute
//! part, a linear decoder reconstructs `z` from all of `u`, and an HSIC term
//! pushes the label and attribute parts towards independence:
//!
//! ```text
//! loss = ce(Hy u_y, y) + ce(Hc u_c, c) + λ_rec · mean_j |ẑ_j - z_j| + λ_hsic · HSIC(u_y, u_c)
//! ```
//!
//! Training runs on the group-upsampled training set, so the label and the
//! attribute are independent in the data the HSIC term sees.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::adam::{Adam, AdamConfig};
use crate::dataset::{counts_of, upsample_indices, EmbeddingDataset};
use crate::hsic::{hsic_with_grad, Kernel};
use crate::linear_map::{apply_map, LinearMap, MapKind};
use crate::math::{exp, ln, sqrt};
use crate::{derive_seed, seeded_rng, Error, Matrix, Result};

/// Widths of the label, attribute and residual parts of the encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GwaeDims {
    pub label: usize,
    pub attribute: usize,
    pub residual: usize,
}

impl GwaeDims {
    pub fn new(label: usize, attribute: usize, residual: usize) -> Result<Self> {
        if label == 0 || attribute == 0 || residual == 0 {
            return Err(Error::InvalidArgument(format!(
                "all encoding parts must be non-empty, got ({label}, {attribute}, {residual})"
            )));
        }
        Ok(Self {
            label,
            attribute,
            residual,
        })
    }

    /// `d_c = d_y` and `d_n = d - 2 d_y`.
    pub fn split(d: usize, label: usize) -> Result<Self> {
        if 2 * label >= d {
            return Err(Error::InvalidArgument(format!(
                "label width {label} leaves no residual part in dimension {d}"
            )));
        }
        Self::new(label, label, d - 2 * label)
    }

    pub fn total(&self) -> usize {
        self.label + self.attribute + self.residual
    }

    pub fn label_range(&self) -> core::ops::Range<usize> {
        0..self.label
    }

    pub fn attribute_range(&self) -> core::ops::Range<usize> {
        self.label..self.label + self.attribute
    }

    pub fn residual_range(&self) -> core::ops::Range<usize> {
        self.label + self.attribute..self.total()
    }
}

/// Backbones with a preset label-part width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backbone {
    Resnet50,
    Regnety,
    Dinov2,
}

impl Backbone {
    pub fn label_dim(self) -> usize {
        match self {
            Self::Resnet50 => 128,
            Self::Regnety => 462,
            Self::Dinov2 => 96,
        }
    }
}

/// Form of the reconstruction penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reconstruction {
    /// Batch mean of `|ẑ_j - z_j|`.
    #[default]
    Norm,
    /// Batch mean of `|ẑ_j - z_j|^2`.
    SquaredNorm,
}

/// Training configuration. In JSON only `dims` is required.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GwaeConfig {
    pub dims: GwaeDims,
    #[serde(default = "defaults::rec_weight")]
    pub rec_weight: f64,
    #[serde(default = "defaults::hsic_weight")]
    pub hsic_weight: f64,
    #[serde(default)]
    pub kernel: Kernel,
    #[serde(default)]
    pub reconstruction: Reconstruction,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub optimizer: AdamConfig,
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::standardize")]
    pub standardize: bool,
}

mod defaults {
    pub fn rec_weight() -> f64 {
        10.0
    }
    pub fn hsic_weight() -> f64 {
        50.0
    }
    pub fn batch_size() -> usize {
        128
    }
    pub fn epochs() -> usize {
        100
    }
    pub fn standardize() -> bool {
        true
    }
}

impl GwaeConfig {
    pub fn new(dims: GwaeDims) -> Self {
        Self {
            dims,
            rec_weight: defaults::rec_weight(),
            hsic_weight: defaults::hsic_weight(),
            kernel: Kernel::GaussianMedian,
            reconstruction: Reconstruction::Norm,
            batch_size: defaults::batch_size(),
            optimizer: AdamConfig::default(),
            epochs: defaults::epochs(),
            seed: 0,
            standardize: defaults::standardize(),
        }
    }

    pub fn for_backbone(backbone: Backbone, d: usize) -> Result<Self> {
        Ok(Self::new(GwaeDims::split(d, backbone.label_dim())?))
    }

    pub fn validate(&self) -> Result<()> {
        GwaeDims::new(self.dims.label, self.dims.attribute, self.dims.residual)?;
        if !(self.rec_weight >= 0.0 && self.hsic_weight >= 0.0) {
            return Err(Error::InvalidArgument("loss weights must be nonnegative".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidArgument("batch size must be at least 2".into()));
        }
        Ok(())
    }
}

/// Per-feature affine standardization `(z - mean) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardization {
    /// Column means and population standard deviations; zero deviations become 1.
    pub fn fit(x: &Matrix) -> Self {
        let n = x.nrows() as f64;
        let mut mean = Vec::with_capacity(x.ncols());
        let mut scale = Vec::with_capacity(x.ncols());
        for col in x.column_iter() {
            let mu = col.sum() / n;
            let var = col.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
            let sd = sqrt(var);
            mean.push(mu);
            scale.push(if sd > 0.0 { sd } else { 1.0 });
        }
        Self { mean, scale }
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        if x.ncols() != self.mean.len() {
            return Err(Error::DimensionMismatch {
                context: "standardization width",
                expected: self.mean.len(),
                actual: x.ncols(),
            });
        }
        Ok(Matrix::from_fn(x.nrows(), x.ncols(), |r, c| {
            (x[(r, c)] - self.mean[c]) / self.scale[c]
        }))
    }
}

/// Mean loss components of one epoch (or one batch).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub ce_y: f64,
    pub ce_c: f64,
    pub rec: f64,
    pub hsic: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    #[serde(flatten)]
    pub loss: LossBreakdown,
}

/// Trainable parameters in `f64`. Biases are column matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct GwaeParams {
    pub enc_w: Matrix,
    pub enc_b: Matrix,
    pub dec_w: Matrix,
    pub dec_b: Matrix,
    pub head_y_w: Matrix,
    pub head_y_b: Matrix,
    pub head_c_w: Matrix,
    pub head_c_b: Matrix,
}

impl GwaeParams {
    /// Uniform `±1/sqrt(fan_in)` initialization for every layer.
    pub fn init(dims: GwaeDims, seed: u64) -> Self {
        let d = dims.total();
        let mut rng = seeded_rng(seed);
        let mut layer = |out: usize, inp: usize| {
            let bound = 1.0 / sqrt(inp as f64);
            let mut w = Matrix::zeros(out, inp);
            for r in 0..out {
                for c in 0..inp {
                    w[(r, c)] = rng.random_range(-bound..bound);
                }
            }
            let b = Matrix::from_fn(out, 1, |_, _| rng.random_range(-bound..bound));
            (w, b)
        };
        let (enc_w, enc_b) = layer(d, d);
        let (dec_w, dec_b) = layer(d, d);
        let (head_y_w, head_y_b) = layer(2, dims.label);
        let (head_c_w, head_c_b) = layer(2, dims.attribute);
        Self {
            enc_w,
            enc_b,
            dec_w,
            dec_b,
            head_y_w,
            head_y_b,
            head_c_w,
            head_c_b,
        }
    }

    pub fn zeros_like(&self) -> Self {
        let z = |m: &Matrix| Matrix::zeros(m.nrows(), m.ncols());
        Self {
            enc_w: z(&self.enc_w),
            enc_b: z(&self.enc_b),
            dec_w: z(&self.dec_w),
            dec_b: z(&self.dec_b),
            head_y_w: z(&self.head_y_w),
            head_y_b: z(&self.head_y_b),
            head_c_w: z(&self.head_c_w),
            head_c_b: z(&self.head_c_b),
        }
    }

    pub fn blocks(&self) -> [&Matrix; 8] {
        [
            &self.enc_w,
            &self.enc_b,
            &self.dec_w,
            &self.dec_b,
            &self.head_y_w,
            &self.head_y_b,
            &self.head_c_w,
            &self.head_c_b,
        ]
    }

    pub fn blocks_mut(&mut self) -> [&mut Matrix; 8] {
        [
            &mut self.enc_w,
            &mut self.enc_b,
            &mut self.dec_w,
            &mut self.dec_b,
            &mut self.head_y_w,
            &mut self.head_y_b,
            &mut self.head_c_w,
            &mut self.head_c_b,
        ]
    }

    fn from_maps(
        encoder: &LinearMap,
        decoder: &LinearMap,
        head_y: &LinearMap,
        head_c: &LinearMap,
    ) -> Self {
        let bias = |m: &LinearMap| {
            let b = m.bias_vec().unwrap_or_else(|| alloc::vec![0.0; m.out_dim()]);
            Matrix::from_column_slice(b.len(), 1, &b)
        };
        Self {
            enc_w: encoder.weight_matrix(),
            enc_b: bias(encoder),
            dec_w: decoder.weight_matrix(),
            dec_b: bias(decoder),
            head_y_w: head_y.weight_matrix(),
            head_y_b: bias(head_y),
            head_c_w: head_c.weight_matrix(),
            head_c_b: bias(head_c),
        }
    }
}

fn affine_rows(x: &Matrix, w: &Matrix, b: &Matrix) -> Matrix {
    let mut out = x * w.transpose();
    for (c, mut col) in out.column_iter_mut().enumerate() {
        col.add_scalar_mut(b[(c, 0)]);
    }
    out
}

fn column_sums(m: &Matrix) -> Matrix {
    Matrix::from_fn(m.ncols(), 1, |c, _| m.column(c).sum())
}

/// Mean two-class softmax cross-entropy and its gradient w.r.t. the logits.
fn softmax_ce(logits: &Matrix, target: &[u8]) -> (f64, Matrix) {
    let b = logits.nrows();
    let inv = 1.0 / b as f64;
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(b, 2);
    for j in 0..b {
        let (l0, l1) = (logits[(j, 0)], logits[(j, 1)]);
        let mx = l0.max(l1);
        let (e0, e1) = (exp(l0 - mx), exp(l1 - mx));
        let lse = mx + ln(e0 + e1);
        let t = target[j] as usize;
        loss += lse - logits[(j, t)];
        let p = [e0 / (e0 + e1), e1 / (e0 + e1)];
        for k in 0..2 {
            grad[(j, k)] = (p[k] - if k == t { 1.0 } else { 0.0 }) * inv;
        }
    }
    (loss * inv, grad)
}

/// Loss on a standardized batch and, when `with_grad`, its gradient.
pub fn loss_and_grad(
    params: &GwaeParams,
    config: &GwaeConfig,
    z: &Matrix,
    y: &[u8],
    c: &[u8],
    with_grad: bool,
) -> Result<(LossBreakdown, Option<GwaeParams>)> {
    let dims = config.dims;
    let b = z.nrows();
    if z.ncols() != dims.total() {
        return Err(Error::DimensionMismatch {
            context: "autoencoder batch width",
            expected: dims.total(),
            actual: z.ncols(),
        });
    }
    if y.len() != b || c.len() != b {
        return Err(Error::DimensionMismatch {
            context: "autoencoder batch labels",
            expected: b,
            actual: y.len().min(c.len()),
        });
    }
    if b < 2 {
        return Err(Error::InvalidArgument("autoencoder batch needs at least two rows".into()));
    }

    let u = affine_rows(z, &params.enc_w, &params.enc_b);
    let u_y = u.columns(dims.label_range().start, dims.label).into_owned();
    let u_c = u.columns(dims.attribute_range().start, dims.attribute).into_owned();
    let logits_y = affine_rows(&u_y, &params.head_y_w, &params.head_y_b);
    let logits_c = affine_rows(&u_c, &params.head_c_w, &params.head_c_b);
    let (ce_y, d_logits_y) = softmax_ce(&logits_y, y);
    let (ce_c, d_logits_c) = softmax_ce(&logits_c, c);

    let z_hat = affine_rows(&u, &params.dec_w, &params.dec_b);
    let resid = z_hat - z;
    let inv_b = 1.0 / b as f64;
    let mut rec = 0.0;
    let mut d_resid = Matrix::zeros(b, resid.ncols());
    for j in 0..b {
        let row = resid.row(j);
        let sq = row.norm_squared();
        match config.reconstruction {
            Reconstruction::Norm => {
                let norm = sqrt(sq);
                rec += norm;
                if norm > 0.0 {
                    d_resid.row_mut(j).copy_from(&(row * (inv_b / norm)));
                }
            }
            Reconstruction::SquaredNorm => {
                rec += sq;
                d_resid.row_mut(j).copy_from(&(row * (2.0 * inv_b)));
            }
        }
    }
    rec *= inv_b;

    let (hsic, g_hy, g_hc) = hsic_with_grad(&u_y, &u_c, config.kernel)?;
    let total = ce_y + ce_c + config.rec_weight * rec + config.hsic_weight * hsic;
    let losses = LossBreakdown {
        total,
        ce_y,
        ce_c,
        rec,
        hsic,
    };
    if !with_grad {
        return Ok((losses, None));
    }

    let d_resid = d_resid * config.rec_weight;
    let mut g = params.zeros_like();
    g.head_y_w = d_logits_y.tr_mul(&u_y);
    g.head_y_b = column_sums(&d_logits_y);
    g.head_c_w = d_logits_c.tr_mul(&u_c);
    g.head_c_b = column_sums(&d_logits_c);
    g.dec_w = d_resid.tr_mul(&u);
    g.dec_b = column_sums(&d_resid);

    let mut d_u = &d_resid * &params.dec_w;
    let d_u_y = &d_logits_y * &params.head_y_w + g_hy * config.hsic_weight;
    let d_u_c = &d_logits_c * &params.head_c_w + g_hc * config.hsic_weight;
    {
        let mut block = d_u.columns_mut(dims.label_range().start, dims.label);
        block += &d_u_y;
    }
    {
        let mut block = d_u.columns_mut(dims.attribute_range().start, dims.attribute);
        block += &d_u_c;
    }
    g.enc_w = d_u.tr_mul(z);
    g.enc_b = column_sums(&d_u);
    Ok((losses, Some(g)))
}

/// A trained autoencoder. Weights are held with `f32` precision, exactly as
/// they are serialized.
#[derive(Debug, Clone, PartialEq)]
pub struct GwaeModel {
    config: GwaeConfig,
    encoder: LinearMap,
    decoder: LinearMap,
    head_y: LinearMap,
    head_c: LinearMap,
    standardization: Option<Standardization>,
    history: Vec<EpochLoss>,
    space_id: String,
}

impl GwaeModel {
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        config: GwaeConfig,
        encoder: LinearMap,
        decoder: LinearMap,
        head_y: LinearMap,
        head_c: LinearMap,
        standardization: Option<Standardization>,
        history: Vec<EpochLoss>,
        space_id: impl Into<String>,
    ) -> Result<Self> {
        config.validate()?;
        let dims = config.dims;
        let d = dims.total();
        let shapes = [
            ("encoder", &encoder, d, d),
            ("decoder", &decoder, d, d),
            ("label head", &head_y, 2, dims.label),
            ("attribute head", &head_c, 2, dims.attribute),
        ];
        for (name, map, out, inp) in shapes {
            if map.out_dim() != out || map.in_dim() != inp {
                return Err(Error::InvalidArgument(format!(
                    "{name} is {}x{}, expected {out}x{inp}",
                    map.out_dim(),
                    map.in_dim()
                )));
            }
        }
        if let Some(s) = &standardization {
            if s.mean.len() != d || s.scale.len() != d {
                return Err(Error::DimensionMismatch {
                    context: "standardization width",
                    expected: d,
                    actual: s.mean.len(),
                });
            }
        }
        Ok(Self {
            config,
            encoder,
            decoder,
            head_y,
            head_c,
            standardization,
            history,
            space_id: space_id.into(),
        })
    }

    fn from_params(
        config: GwaeConfig,
        params: &GwaeParams,
        standardization: Option<Standardization>,
        history: Vec<EpochLoss>,
    ) -> Result<Self> {
        let dims = config.dims;
        let space_id = format!(
            "gwae:{}:{}-{}-{}",
            config.seed, dims.label, dims.attribute, dims.residual
        );
        let meta = json!({
            "dims": [dims.label, dims.attribute, dims.residual],
            "space_id": space_id,
        });
        let col = |m: &Matrix| m.column(0).iter().copied().collect::<Vec<f64>>();
        let encoder = LinearMap::from_matrix(
            MapKind::Encoder,
            &params.enc_w,
            Some(&col(&params.enc_b)),
            meta.clone(),
        )?;
        let decoder = LinearMap::from_matrix(
            MapKind::Generic,
            &params.dec_w,
            Some(&col(&params.dec_b)),
            meta.clone(),
        )?;
        let head_y = LinearMap::from_matrix(
            MapKind::Generic,
            &params.head_y_w,
            Some(&col(&params.head_y_b)),
            meta.clone(),
        )?;
        let head_c = LinearMap::from_matrix(
            MapKind::Generic,
            &params.head_c_w,
            Some(&col(&params.head_c_b)),
            meta,
        )?;
        Self::from_parts(
            config,
            encoder,
            decoder,
            head_y,
            head_c,
            standardization,
            history,
            space_id,
        )
    }

    /// A model with the given parameters and no training history.
    pub fn with_params(
        config: GwaeConfig,
        params: &GwaeParams,
        standardization: Option<Standardization>,
    ) -> Result<Self> {
        config.validate()?;
        Self::from_params(config, params, standardization, Vec::new())
    }

    pub fn config(&self) -> &GwaeConfig {
        &self.config
    }

    pub fn dims(&self) -> GwaeDims {
        self.config.dims
    }

    pub fn encoder(&self) -> &LinearMap {
        &self.encoder
    }

    pub fn decoder(&self) -> &LinearMap {
        &self.decoder
    }

    pub fn head_y(&self) -> &LinearMap {
        &self.head_y
    }

    pub fn head_c(&self) -> &LinearMap {
        &self.head_c
    }

    pub fn standardization(&self) -> Option<&Standardization> {
        self.standardization.as_ref()
    }

    pub fn history(&self) -> &[EpochLoss] {
        &self.history
    }

    /// Id of the encoded feature space, matched against attribution summaries.
    pub fn space_id(&self) -> &str {
        &self.space_id
    }

    pub fn set_space_id(&mut self, id: impl Into<String>) {
        self.space_id = id.into();
        let id = self.space_id.clone();
        for map in [
            &mut self.encoder,
            &mut self.decoder,
            &mut self.head_y,
            &mut self.head_c,
        ] {
            if let Some(obj) = map.meta_mut().as_object_mut() {
                obj.insert("space_id".into(), id.clone().into());
            }
        }
    }

    pub fn params(&self) -> GwaeParams {
        GwaeParams::from_maps(&self.encoder, &self.decoder, &self.head_y, &self.head_c)
    }

    fn standardize(&self, z: &Matrix) -> Result<Matrix> {
        match &self.standardization {
            Some(s) => s.apply(z),
            None => Ok(z.clone()),
        }
    }

    /// Full encoder output for raw inputs.
    pub fn encode_full(&self, z: &Matrix) -> Result<Matrix> {
        apply_map(&self.standardize(z)?, &self.encoder)
    }

    /// Encoder output split into label, attribute and residual parts.
    pub fn encode(&self, z: &Matrix) -> Result<(Matrix, Matrix, Matrix)> {
        let u = self.encode_full(z)?;
        let dims = self.config.dims;
        Ok((
            u.columns(dims.label_range().start, dims.label).into_owned(),
            u.columns(dims.attribute_range().start, dims.attribute).into_owned(),
            u.columns(dims.residual_range().start, dims.residual).into_owned(),
        ))
    }

    /// Loss components on a raw (unstandardized) batch.
    pub fn loss(&self, z: &Matrix, y: &[u8], c: &[u8]) -> Result<LossBreakdown> {
        let zs = self.standardize(z)?;
        loss_and_grad(&self.params(), &self.config, &zs, y, c, false).map(|(l, _)| l)
    }

    /// The encoder with standardization folded in, as one map on raw inputs.
    pub fn exported_encoder(&self) -> Result<LinearMap> {
        let mut w = self.encoder.weight_matrix();
        let mut b = self
            .encoder
            .bias_vec()
            .unwrap_or_else(|| alloc::vec![0.0; self.encoder.out_dim()]);
        if let Some(s) = &self.standardization {
            for c in 0..w.ncols() {
                w.column_mut(c).scale_mut(1.0 / s.scale[c]);
            }
            for (r, br) in b.iter_mut().enumerate() {
                *br -= (0..w.ncols()).map(|c| w[(r, c)] * s.mean[c]).sum::<f64>();
            }
        }
        let dims = self.config.dims;
        let meta = json!({
            "dims": [dims.label, dims.attribute, dims.residual],
            "space_id": self.space_id,
            "standardization_folded": self.standardization.is_some(),
            "seed": self.config.seed,
        });
        LinearMap::from_matrix(MapKind::Encoder, &w, Some(&b), meta)
    }
}

/// Shorthand for [`gwae_loss`] on a model.
pub fn gwae_loss(model: &GwaeModel, z: &Matrix, y: &[u8], c: &[u8]) -> Result<LossBreakdown> {
    model.loss(z, y, c)
}

/// Trains the autoencoder on the group-upsampled version of `train`.
pub fn train_gwae(train: &EmbeddingDataset, config: &GwaeConfig) -> Result<GwaeModel> {
    config.validate()?;
    let dims = config.dims;
    if train.dim() != dims.total() {
        return Err(Error::DimensionMismatch {
            context: "autoencoder input dimension",
            expected: dims.total(),
            actual: train.dim(),
        });
    }
    let counts = counts_of(train.labels(), train.attributes());
    if let Some(g) = counts.iter().position(|&k| k == 0) {
        return Err(Error::EmptyGroup(g));
    }
    let rows = upsample_indices(train.labels(), train.attributes(), derive_seed(config.seed, 0))?;
    let upsampled = train.select_rows(&rows);
    let raw = upsampled.to_matrix();
    let standardization = config.standardize.then(|| Standardization::fit(&raw));
    let x = match &standardization {
        Some(s) => s.apply(&raw)?,
        None => raw,
    };
    let y = upsampled.labels();
    let c = upsampled.attributes();

    let mut params = GwaeParams::init(dims, derive_seed(config.seed, 1));
    let shapes: Vec<(usize, usize)> = params.blocks().iter().map(|m| m.shape()).collect();
    let mut adam = Adam::new(config.optimizer, &shapes);
    let mut order_rng = seeded_rng(derive_seed(config.seed, 2));
    let n = x.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut order_rng);
        let mut sums = LossBreakdown::default();
        let mut seen = 0usize;
        for batch in order.chunks(config.batch_size) {
            if batch.len() < 2 {
                continue;
            }
            let zb = Matrix::from_fn(batch.len(), x.ncols(), |r, col| x[(batch[r], col)]);
            let yb: Vec<u8> = batch.iter().map(|&j| y[j]).collect();
            let cb: Vec<u8> = batch.iter().map(|&j| c[j]).collect();
            let (loss, grad) = loss_and_grad(&params, config, &zb, &yb, &cb, true)?;
            let grad = grad.expect("gradient requested");
            if !loss.total.is_finite() || grad.blocks().iter().any(|g| g.iter().any(|v| !v.is_finite())) {
                return Err(Error::Divergence { epoch });
            }
            let w = batch.len() as f64;
            sums.total += w * loss.total;
            sums.ce_y += w * loss.ce_y;
            sums.ce_c += w * loss.ce_c;
            sums.rec += w * loss.rec;
            sums.hsic += w * loss.hsic;
            seen += batch.len();
            let mut blocks = params.blocks_mut();
            adam.step(&mut blocks, &grad.blocks());
        }
        let inv = 1.0 / seen.max(1) as f64;
        history.push(EpochLoss {
            epoch,
            loss: LossBreakdown {
                total: sums.total * inv,
                ce_y: sums.ce_y * inv,
                ce_c: sums.ce_c * inv,
                rec: sums.rec * inv,
                hsic: sums.hsic * inv,
            },
        });
    }
    GwaeModel::from_params(config.clone(), &params, standardization, history)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> GwaeConfig {
        GwaeConfig::new(GwaeDims::new(2, 2, 2).unwrap())
    }

    #[test]
    fn config_json_needs_only_dims() {
        let cfg: GwaeConfig =
            serde_json::from_str(r#"{"dims":{"label":2,"attribute":2,"residual":2},"epochs":3}"#).unwrap();
        assert_eq!(cfg, GwaeConfig { epochs: 3, ..tiny_config() });
    }

    #[test]
    fn dims_split() {
        let d = GwaeDims::split(2048, 128).unwrap();
        assert_eq!((d.label, d.attribute, d.residual), (128, 128, 1792));
        assert!(GwaeDims::split(10, 5).is_err());
        assert_eq!(Backbone::Regnety.label_dim(), 462);
    }

    #[test]
    fn inverse_decoder_gives_zero_reconstruction() {
        let cfg = tiny_config();
        let mut p = GwaeParams::init(cfg.dims, 3);
        p.enc_w = Matrix::identity(6, 6) * 2.0;
        p.enc_b = Matrix::zeros(6, 1);
        p.dec_w = Matrix::identity(6, 6) * 0.5;
        p.dec_b = Matrix::zeros(6, 1);
        let z = Matrix::from_fn(4, 6, |r, c| (r as f64 - 1.5) * 0.5 + c as f64 * 0.25);
        let y = [0, 1, 0, 1];
        let c = [1, 1, 0, 0];
        let (l, _) = loss_and_grad(&p, &cfg, &z, &y, &c, false).unwrap();
        assert!(l.rec.abs() < 1e-12);
        assert!((l.total - (l.ce_y + l.ce_c + 50.0 * l.hsic)).abs() < 1e-12);
    }

    #[test]
    fn uniform_head_gives_ln2() {
        let cfg = tiny_config();
        let mut p = GwaeParams::init(cfg.dims, 1);
        p.head_y_w = Matrix::zeros(2, 2);
        p.head_y_b = Matrix::zeros(2, 1);
        let z = Matrix::from_fn(4, 6, |r, c| (r * 7 + c) as f64 * 0.1);
        let (l, _) = loss_and_grad(&p, &cfg, &z, &[0, 1, 0, 1], &[0, 0, 1, 1], false).unwrap();
        assert!((l.ce_y - core::f64::consts::LN_2).abs() < 1e-6);
    }

    #[test]
    fn encode_slices_identity_encoder() {
        let d = 5;
        let cfg = GwaeConfig {
            standardize: false,
            ..GwaeConfig::new(GwaeDims::new(1, 1, 3).unwrap())
        };
        let mut p = GwaeParams::init(cfg.dims, 0);
        p.enc_w = Matrix::identity(d, d);
        p.enc_b = Matrix::zeros(d, 1);
        let model = GwaeModel::with_params(cfg, &p, None).unwrap();
        let z = Matrix::from_row_slice(1, 5, &[3.0, 4.0, 5.0, 6.0, 7.0]);
        let (zy, zc, zn) = model.encode(&z).unwrap();
        assert_eq!(zy[(0, 0)], 3.0);
        assert_eq!(zc[(0, 0)], 4.0);
        assert_eq!(zn.ncols(), 3);
        let full = model.encode_full(&z).unwrap();
        assert_eq!(full, apply_map(&z, model.encoder()).unwrap());
    }

    #[test]
    fn training_requires_every_group() {
        let ds = EmbeddingDataset::new(
            "train",
            6,
            alloc::vec![0.0; 18],
            alloc::vec![0, 0, 1],
            alloc::vec![0, 1, 0],
        )
        .unwrap();
        assert_eq!(train_gwae(&ds, &tiny_config()), Err(Error::EmptyGroup(3)));
    }
}
