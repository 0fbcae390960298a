//! The deconvolutional density network and its ablation variants.
//!
//! ```text
//!  x ──► Linear─┐                       ┌─► μ ─┐
//!               ├─ BN ─ tanh ─ Linear ─ BN ─ tanh ─┤       ├─ z = μ + σ·ε ─► Linear ─► reshape ─► J pathways
//!  [y∘m, m] ─► Linear─┘                       └─► σ ─┘
//! ```
//!
//! Each pathway grows a `[C₀, L₀]` feature map to `N` logits through
//! `(Upsample, Conv, BatchNorm, LeakyReLU) × 2` followed by
//! `(Upsample, Conv)`, then applies a softmax. For one-dimensional targets
//! the masked branch is absent and the first layer sees `x` only.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{
    BatchNorm1d, Conv1d, Graph, Linear, Mode, ParamStore, PendingStats, Scalar, Tensor, Var,
    LEAKY_SLOPE,
};
use crate::error::{DdnError, Result};
use crate::objective::BinPartition;
use crate::rng::DdnRng;

/// Added to the softplus output so that σ stays strictly positive.
pub const SIGMA_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Deconvolutional estimator with a variational layer.
    Ddn,
    /// Deconvolutional estimator; the variational layer is replaced by a
    /// tanh-activated dense layer.
    DdnNoVl,
    /// Dense softmax head straight from the encoder.
    Mlp,
    /// Dense softmax head on top of the variational layer.
    MlpVl,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Ddn, Variant::DdnNoVl, Variant::Mlp, Variant::MlpVl];

    pub fn has_variational_layer(self) -> bool {
        matches!(self, Variant::Ddn | Variant::MlpVl)
    }

    pub fn is_deconvolutional(self) -> bool {
        matches!(self, Variant::Ddn | Variant::DdnNoVl)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Ddn => "ddn",
            Variant::DdnNoVl => "ddn_no_vl",
            Variant::Mlp => "mlp",
            Variant::MlpVl => "mlp_vl",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = DdnError;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| {
                DdnError::config(format!(
                    "unknown variant '{s}' (expected ddn, ddn_no_vl, mlp or mlp_vl)"
                ))
            })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub target_dim: usize,
    pub bins: usize,
    pub latent_dim: usize,
    pub beta: f64,
    pub variant: Variant,
    pub ranges: Vec<(f64, f64)>,
    pub hidden_width: usize,
    pub branch_width: usize,
    /// Channel counts along a pathway, starting at the reshaped map.
    pub channels: Vec<usize>,
    pub initial_length: usize,
    pub kernel_width: usize,
    pub upsample_factor: usize,
}

impl ModelConfig {
    /// Defaults: 256 bins, 16 latent codes, 64-wide hidden layers, two
    /// 32-wide input branches, pathway 4 → 16 → 64 → 256 with channels
    /// 16 → 8 → 4 → 1 and kernel width 5.
    pub fn new(input_dim: usize, ranges: Vec<(f64, f64)>, variant: Variant, beta: f64) -> Result<Self> {
        let cfg = Self {
            input_dim,
            target_dim: ranges.len(),
            bins: 256,
            latent_dim: 16,
            beta,
            variant,
            ranges,
            hidden_width: 64,
            branch_width: 32,
            channels: vec![16, 8, 4, 1],
            initial_length: 4,
            kernel_width: 5,
            upsample_factor: 4,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Changes the bin count and re-derives the pathway geometry: the
    /// largest factor in {4, 3, 2} whose cube divides `bins` is used as the
    /// upsampling factor.
    pub fn with_bins(mut self, bins: usize) -> Result<Self> {
        let stages = (self.channels.len() - 1) as u32;
        let factor = [4usize, 3, 2]
            .into_iter()
            .find(|f| bins % f.pow(stages) == 0 && bins / f.pow(stages) >= 1)
            .ok_or_else(|| {
                DdnError::config(format!(
                    "{bins} bins cannot be reached from an integer initial length by {stages} integer upsampling stages (need a multiple of 8, 27 or 64)"
                ))
            })?;
        self.bins = bins;
        self.upsample_factor = factor;
        self.initial_length = bins / factor.pow(stages);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(DdnError::config("input dimension must be positive"));
        }
        if self.target_dim == 0 || self.ranges.len() != self.target_dim {
            return Err(DdnError::config("one range per target dimension required"));
        }
        for &(lo, hi) in &self.ranges {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(DdnError::config(format!("invalid target range ({lo}, {hi})")));
            }
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(DdnError::config(format!("beta must be >= 0, got {}", self.beta)));
        }
        if self.channels.len() < 2 || *self.channels.last().unwrap() != 1 {
            return Err(DdnError::config("pathway channels must end with a single channel"));
        }
        if self.kernel_width % 2 == 0 {
            return Err(DdnError::config("kernel width must be odd"));
        }
        if self.upsample_factor == 0 || self.initial_length == 0 {
            return Err(DdnError::config("pathway lengths must be positive"));
        }
        let stages = (self.channels.len() - 1) as u32;
        if self.initial_length * self.upsample_factor.pow(stages) != self.bins {
            return Err(DdnError::config(format!(
                "{} bins != initial length {} x factor {}^{stages}",
                self.bins, self.initial_length, self.upsample_factor
            )));
        }
        if self.branch_width * 2 != self.hidden_width && self.target_dim > 1 {
            return Err(DdnError::config("two input branches must fill the hidden width"));
        }
        Ok(())
    }

    pub fn partitions(&self) -> Vec<BinPartition> {
        self.ranges
            .iter()
            .map(|&(lo, hi)| BinPartition::new(lo, hi, self.bins).expect("validated range"))
            .collect()
    }
}

/// Binary gate over target dimensions: 1 lets a target in as a condition.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ConditionalMask(Vec<u8>);

impl ConditionalMask {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if bits.iter().any(|&b| b > 1) {
            return Err(DdnError::config("mask bits must be 0 or 1"));
        }
        Ok(Self(bits))
    }

    pub fn empty(len: usize) -> Self {
        Self(vec![0; len])
    }

    /// Mask with ones exactly at `indices`.
    pub fn with_ones(len: usize, indices: &[usize]) -> Self {
        let mut bits = vec![0; len];
        for &i in indices {
            bits[i] = 1;
        }
        Self(bits)
    }

    pub fn bits(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_set(&self, j: usize) -> bool {
        self.0[j] == 1
    }
}

impl fmt::Display for ConditionalMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0 {
            write!(f, "{b}")?;
        }
        Ok(())
    }
}

/// Mean and standard deviation of a diagonal Gaussian over the latent codes.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentGaussian {
    mu: Vec<f64>,
    sigma: Vec<f64>,
}

impl LatentGaussian {
    pub fn new(mu: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        if mu.len() != sigma.len() {
            return Err(DdnError::dim("mu and sigma lengths differ"));
        }
        if sigma.iter().any(|&s| !(s > 0.0)) {
            return Err(DdnError::Numeric("sigma must be strictly positive".into()));
        }
        Ok(Self { mu, sigma })
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    /// Train mode draws `z = μ + σ·ε`; eval mode returns `μ` exactly.
    pub fn sample<R: Rng + ?Sized>(&self, mode: Mode, rng: &mut R) -> Vec<f64> {
        match mode {
            Mode::Eval => self.mu.clone(),
            Mode::Train => self
                .mu
                .iter()
                .zip(&self.sigma)
                .map(|(&m, &s)| {
                    let e: f64 = rng.sample(StandardNormal);
                    m + s * e
                })
                .collect(),
        }
    }
}

/// One probability vector of length N per target dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadOutputs(Vec<Vec<f32>>);

impl HeadOutputs {
    pub fn new(heads: Vec<Vec<f32>>) -> Result<Self> {
        if heads.is_empty() || heads.iter().any(|h| h.len() != heads[0].len() || h.is_empty()) {
            return Err(DdnError::dim("heads must be non-empty and share one length"));
        }
        Ok(Self(heads))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn head(&self, j: usize) -> &[f32] {
        &self.0[j]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f32]> {
        self.0.iter().map(Vec::as_slice)
    }

    pub fn into_inner(self) -> Vec<Vec<f32>> {
        self.0
    }
}

/// Network input for a batch: the conditions `x` and, for multivariate
/// targets, the masked-target block `[y ∘ m, m]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelInput {
    rows: usize,
    x: Vec<f64>,
    masked: Option<Vec<f64>>,
}

impl ModelInput {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn masked(&self) -> Option<&[f64]> {
        self.masked.as_deref()
    }

    /// Stacks per-sample inputs built by [`assemble_input`].
    pub fn stack(parts: &[ModelInput]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| DdnError::dim("empty batch"))?;
        let mut x = Vec::new();
        let mut masked = first.masked.as_ref().map(|_| Vec::new());
        let mut rows = 0;
        for p in parts {
            if p.masked.is_some() != masked.is_some() {
                return Err(DdnError::dim("mixed masked and unmasked inputs"));
            }
            x.extend_from_slice(&p.x);
            if let (Some(dst), Some(src)) = (masked.as_mut(), p.masked.as_ref()) {
                dst.extend_from_slice(src);
            }
            rows += p.rows;
        }
        Ok(Self { rows, x, masked })
    }
}

/// Builds the input of one sample. For `J = 1` the input is `x` alone and
/// the mask is ignored.
pub fn assemble_input(
    config: &ModelConfig,
    x: &[f64],
    y: &[f64],
    mask: &ConditionalMask,
) -> Result<ModelInput> {
    if x.len() != config.input_dim {
        return Err(DdnError::dim(format!(
            "expected {} features, got {}",
            config.input_dim,
            x.len()
        )));
    }
    if config.target_dim == 1 {
        return Ok(ModelInput {
            rows: 1,
            x: x.to_vec(),
            masked: None,
        });
    }
    if y.len() != config.target_dim || mask.len() != config.target_dim {
        return Err(DdnError::dim(format!(
            "expected {} targets and mask bits, got {} and {}",
            config.target_dim,
            y.len(),
            mask.len()
        )));
    }
    let mut masked: Vec<f64> = y
        .iter()
        .zip(mask.bits())
        .map(|(&v, &b)| if b == 1 { v } else { 0.0 })
        .collect();
    masked.extend(mask.bits().iter().map(|&b| b as f64));
    Ok(ModelInput {
        rows: 1,
        x: x.to_vec(),
        masked: Some(masked),
    })
}

#[derive(Clone, Debug)]
enum InputStage {
    Plain(Linear),
    Split { x: Linear, masked: Linear },
}

#[derive(Clone, Debug)]
enum Bottleneck {
    Variational { mu: Linear, sigma: Linear },
    Dense(Linear),
    Identity,
}

#[derive(Clone, Debug)]
struct Block {
    conv: Conv1d,
    bn: Option<BatchNorm1d>,
}

#[derive(Clone, Debug)]
enum Estimator {
    Deconv { dense: Linear, pathways: Vec<Vec<Block>> },
    Dense(Linear),
}

#[derive(Clone, Debug)]
struct Layers {
    input: InputStage,
    input_bn: BatchNorm1d,
    hidden: Linear,
    hidden_bn: BatchNorm1d,
    bottleneck: Bottleneck,
    estimator: Estimator,
}

/// Tape nodes produced by one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardVars {
    /// `[B, N]` probability matrix per target dimension.
    pub heads: Vec<Var>,
    pub mu: Option<Var>,
    pub sigma: Option<Var>,
}

/// Parameterized encoder, latent layer and per-dimension heads.
#[derive(Clone, Debug)]
pub struct DdnModel<T: Scalar = f32> {
    config: ModelConfig,
    params: ParamStore<T>,
    layers: Layers,
}

impl<T: Scalar> DdnModel<T> {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut p = ParamStore::new();
        let c = &config;
        let (input, first_width) = if c.target_dim == 1 {
            (
                InputStage::Plain(Linear::new(&mut p, "enc.in", c.input_dim, c.hidden_width, rng)),
                c.hidden_width,
            )
        } else {
            let x = Linear::new(&mut p, "enc.in_x", c.input_dim, c.branch_width, rng);
            let masked = Linear::new(&mut p, "enc.in_mask", 2 * c.target_dim, c.branch_width, rng);
            (InputStage::Split { x, masked }, 2 * c.branch_width)
        };
        let input_bn = BatchNorm1d::new(&mut p, "enc.in_bn", first_width);
        let hidden = Linear::new(&mut p, "enc.hidden", first_width, c.hidden_width, rng);
        let hidden_bn = BatchNorm1d::new(&mut p, "enc.hidden_bn", c.hidden_width);

        let bottleneck = match c.variant {
            Variant::Ddn | Variant::MlpVl => Bottleneck::Variational {
                mu: Linear::new(&mut p, "vl.mu", c.hidden_width, c.latent_dim, rng),
                sigma: Linear::new(&mut p, "vl.sigma", c.hidden_width, c.latent_dim, rng),
            },
            Variant::DdnNoVl => {
                Bottleneck::Dense(Linear::new(&mut p, "latent", c.hidden_width, c.latent_dim, rng))
            }
            Variant::Mlp => Bottleneck::Identity,
        };
        let latent_width = match bottleneck {
            Bottleneck::Identity => c.hidden_width,
            _ => c.latent_dim,
        };

        let estimator = if c.variant.is_deconvolutional() {
            let c0 = c.channels[0];
            let dense = Linear::new(
                &mut p,
                "est.dense",
                latent_width,
                c.target_dim * c0 * c.initial_length,
                rng,
            );
            let stages = c.channels.len() - 1;
            let pathways = (0..c.target_dim)
                .map(|j| {
                    (0..stages)
                        .map(|s| {
                            let name = format!("est.head{j}.block{s}");
                            let conv = Conv1d::new(
                                &mut p,
                                &format!("{name}.conv"),
                                c.channels[s],
                                c.channels[s + 1],
                                c.kernel_width,
                                rng,
                            );
                            let bn = (s + 1 < stages)
                                .then(|| BatchNorm1d::new(&mut p, &format!("{name}.bn"), c.channels[s + 1]));
                            Block { conv, bn }
                        })
                        .collect()
                })
                .collect();
            Estimator::Deconv { dense, pathways }
        } else {
            Estimator::Dense(Linear::new(
                &mut p,
                "est.dense",
                latent_width,
                c.target_dim * c.bins,
                rng,
            ))
        };

        Ok(Self {
            config,
            params: p,
            layers: Layers {
                input,
                input_bn,
                hidden,
                hidden_bn,
                bottleneck,
                estimator,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// Same parameters at another precision.
    pub fn cast<U: Scalar>(&self) -> DdnModel<U> {
        DdnModel {
            config: self.config.clone(),
            params: self.params.cast(),
            layers: self.layers.clone(),
        }
    }

    /// Records a forward pass on `g`.
    ///
    /// `noise` holds `rows × latent_dim` standard-normal draws for the
    /// variational layer; `None` means ε = 0. In train mode, batch-norm
    /// statistics are pushed to `pending` when given.
    pub fn forward_graph(
        &self,
        g: &mut Graph<T>,
        input: &ModelInput,
        mode: Mode,
        noise: Option<&[f64]>,
        mut pending: Option<&mut Vec<PendingStats<T>>>,
    ) -> Result<ForwardVars> {
        let c = &self.config;
        let p = &self.params;
        let rows = input.rows;
        if input.x.len() != rows * c.input_dim {
            return Err(DdnError::dim("input rows do not match the feature count"));
        }
        let x = g.constant(Tensor::from_f64(&[rows, c.input_dim], &input.x)?);
        let first = match (&self.layers.input, &input.masked) {
            (InputStage::Plain(l), None) => l.forward(g, p, x)?,
            (InputStage::Split { x: lx, masked: lm }, Some(m)) => {
                if m.len() != rows * 2 * c.target_dim {
                    return Err(DdnError::dim("masked block has the wrong width"));
                }
                let mv = g.constant(Tensor::from_f64(&[rows, 2 * c.target_dim], m)?);
                let hx = lx.forward(g, p, x)?;
                let hm = lm.forward(g, p, mv)?;
                g.concat(&[hx, hm])?
            }
            (InputStage::Plain(_), Some(_)) => {
                return Err(DdnError::dim("univariate model given a masked-target block"))
            }
            (InputStage::Split { .. }, None) => {
                return Err(DdnError::dim("multivariate model needs a masked-target block"))
            }
        };
        let h = self.layers.input_bn.forward(g, p, first, mode, pending.as_deref_mut())?;
        let h = g.tanh(h);
        let h = self.layers.hidden.forward(g, p, h)?;
        let h = self.layers.hidden_bn.forward(g, p, h, mode, pending.as_deref_mut())?;
        let h = g.tanh(h);

        let (z, mu, sigma) = match &self.layers.bottleneck {
            Bottleneck::Variational { mu, sigma } => {
                let m = mu.forward(g, p, h)?;
                let raw = sigma.forward(g, p, h)?;
                let sp = g.softplus(raw);
                let s = g.offset(sp, T::of(SIGMA_FLOOR));
                let z = match noise {
                    Some(eps) => {
                        if eps.len() != rows * c.latent_dim {
                            return Err(DdnError::dim("noise buffer has the wrong length"));
                        }
                        let e = g.constant(Tensor::from_f64(&[rows, c.latent_dim], eps)?);
                        let se = g.mul(s, e)?;
                        g.add(m, se)?
                    }
                    None => m,
                };
                (z, Some(m), Some(s))
            }
            Bottleneck::Dense(l) => {
                let z = l.forward(g, p, h)?;
                (g.tanh(z), None, None)
            }
            Bottleneck::Identity => (h, None, None),
        };

        let heads = self.estimate_graph(g, z, mode, pending)?;
        Ok(ForwardVars { heads, mu, sigma })
    }

    fn estimate_graph(
        &self,
        g: &mut Graph<T>,
        z: Var,
        mode: Mode,
        mut pending: Option<&mut Vec<PendingStats<T>>>,
    ) -> Result<Vec<Var>> {
        let c = &self.config;
        let p = &self.params;
        let rows = g.shape(z)[0];
        match &self.layers.estimator {
            Estimator::Deconv { dense, pathways } => {
                let c0 = c.channels[0];
                let d = dense.forward(g, p, z)?;
                let maps = g.reshape(d, &[rows, c.target_dim * c0, c.initial_length])?;
                let mut heads = Vec::with_capacity(c.target_dim);
                for (j, blocks) in pathways.iter().enumerate() {
                    let mut h = g.narrow(maps, j * c0, c0)?;
                    for block in blocks {
                        h = g.upsample_nearest(h, c.upsample_factor)?;
                        h = block.conv.forward(g, p, h)?;
                        if let Some(bn) = &block.bn {
                            h = bn.forward(g, p, h, mode, pending.as_deref_mut())?;
                            h = g.leaky_relu(h, T::of(LEAKY_SLOPE));
                        }
                    }
                    let logits = g.reshape(h, &[rows, c.bins])?;
                    heads.push(g.softmax(logits)?);
                }
                Ok(heads)
            }
            Estimator::Dense(l) => {
                let logits = l.forward(g, p, z)?;
                (0..c.target_dim)
                    .map(|j| {
                        let part = g.narrow(logits, j * c.bins, c.bins)?;
                        g.softmax(part)
                    })
                    .collect()
            }
        }
    }

    /// Eval-mode heads for every row of `input`: entry `j` is the flattened
    /// `[rows, N]` probability matrix of dimension `j`.
    pub fn predict(&self, input: &ModelInput) -> Result<Vec<Vec<T>>> {
        let mut g = Graph::new();
        let out = self.forward_graph(&mut g, input, Mode::Eval, None, None)?;
        Ok(out.heads.iter().map(|&h| g.value(h).to_vec()).collect())
    }

    /// Eval-mode latent distribution of each row; `None` for variants
    /// without a variational layer.
    pub fn encode(&self, input: &ModelInput) -> Result<Option<Vec<LatentGaussian>>> {
        let mut g = Graph::new();
        let out = self.forward_graph(&mut g, input, Mode::Eval, None, None)?;
        let (Some(mu), Some(sigma)) = (out.mu, out.sigma) else {
            return Ok(None);
        };
        let d = self.config.latent_dim;
        let (mv, sv) = (g.value(mu), g.value(sigma));
        (0..input.rows)
            .map(|r| {
                LatentGaussian::new(
                    mv[r * d..(r + 1) * d].iter().map(|v| v.f64()).collect(),
                    sv[r * d..(r + 1) * d].iter().map(|v| v.f64()).collect(),
                )
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    /// Runs the estimator alone on a latent vector (eval mode).
    pub fn estimate_heads(&self, z: &[f64]) -> Result<HeadOutputs> {
        let width = match self.layers.bottleneck {
            Bottleneck::Identity => self.config.hidden_width,
            _ => self.config.latent_dim,
        };
        if z.len() != width {
            return Err(DdnError::dim(format!("latent vector of length {}, expected {width}", z.len())));
        }
        let mut g = Graph::new();
        let zv = g.constant(Tensor::from_f64(&[1, width], z)?);
        let heads = self.estimate_graph(&mut g, zv, Mode::Eval, None)?;
        HeadOutputs::new(
            heads
                .iter()
                .map(|&h| g.value(h).iter().map(|v| v.f64() as f32).collect())
                .collect(),
        )
    }

    /// Single-sample forward pass. Train mode draws ε from `rng` but, since
    /// batch statistics need two rows, is only meaningful through the
    /// batched trainer; eval mode sets ε = 0 and uses running statistics.
    pub fn forward(
        &self,
        x: &[f64],
        y: &[f64],
        mask: &ConditionalMask,
        mode: Mode,
        rng: &mut DdnRng,
    ) -> Result<(HeadOutputs, Option<LatentGaussian>)> {
        let input = assemble_input(&self.config, x, y, mask)?;
        let noise: Option<Vec<f64>> = match (mode, self.config.variant.has_variational_layer()) {
            (Mode::Train, true) => Some(
                (0..self.config.latent_dim)
                    .map(|_| rng.sample(StandardNormal))
                    .collect(),
            ),
            _ => None,
        };
        let mut g = Graph::new();
        let out = self.forward_graph(&mut g, &input, mode, noise.as_deref(), None)?;
        let heads = HeadOutputs::new(
            out.heads
                .iter()
                .map(|&h| g.value(h).iter().map(|v| v.f64() as f32).collect())
                .collect(),
        )?;
        let latent = match (out.mu, out.sigma) {
            (Some(m), Some(s)) => Some(LatentGaussian::new(
                g.value(m).iter().map(|v| v.f64()).collect(),
                g.value(s).iter().map(|v| v.f64()).collect(),
            )?),
            _ => None,
        };
        Ok((heads, latent))
    }
}
