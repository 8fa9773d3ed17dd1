//! The temporal refinement network.
//!
//! Every column of a [`WindowBatch`] is one scalar channel over `T` frames.
//! Layers act along the time axis only, so the same weights are shared by all
//! channels and all batch items.
//!
//! Two variants:
//!
//! * **basic**: `encoder (T→H) → N residual blocks (H→H) → decoder (H→T)`.
//! * **motion-aware**: three such branches fed with positions, first
//!   differences (velocity, `T−1` frames) and second differences
//!   (acceleration, `T−2` frames). Each branch decodes to `T` frames; a linear
//!   fusion layer maps the stacked `3T` embedding to the refined window.
//!
//! A residual block computes `x + W₂·σ(W₁·x + b₁) + b₂`. The encoder output
//! goes through σ (LeakyReLU); decoder and fusion are linear.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Normalization;
use crate::error::{Error, Result};
use crate::nn::{
    dense_forward, dense_input_grad, dense_param_grads, init_dense, leaky_relu_backward,
    leaky_relu_in_place, DenseLayer, DEFAULT_LEAKY_SLOPE,
};
use crate::numerics::{Matrix, RngState};

/// `T × cols` block of windows; one column per (channel, batch item) pair.
pub type WindowBatch = Matrix;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Basic,
    MotionAware,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothNetConfig {
    pub variant: Variant,
    pub window_t: usize,
    pub hidden: usize,
    pub blocks: usize,
    #[serde(default = "default_slope")]
    pub leaky_slope: f64,
}

fn default_slope() -> f64 {
    DEFAULT_LEAKY_SLOPE
}

impl SmoothNetConfig {
    /// Eight layers: encoder, three two-layer blocks, decoder.
    pub fn basic(window_t: usize) -> Self {
        Self {
            variant: Variant::Basic,
            window_t,
            hidden: 256,
            blocks: 3,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
        }
    }

    /// Three branches of encoder, one block, decoder.
    pub fn motion_aware(window_t: usize) -> Self {
        Self {
            variant: Variant::MotionAware,
            window_t,
            hidden: 256,
            blocks: 1,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
        }
    }

    pub fn with_hidden(mut self, hidden: usize) -> Self {
        self.hidden = hidden;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let min_t = match self.variant {
            Variant::Basic => 2,
            Variant::MotionAware => 3,
        };
        if self.window_t < min_t {
            return Err(Error::config(format!(
                "window_t = {} is below the minimum of {min_t} for the {:?} variant",
                self.window_t, self.variant
            )));
        }
        if self.hidden == 0 {
            return Err(Error::config("hidden must be at least 1"));
        }
        if self.blocks == 0 {
            return Err(Error::config("blocks must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.leaky_slope) {
            return Err(Error::config(format!(
                "leaky_slope must lie in [0, 1), got {}",
                self.leaky_slope
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    pub fc1: DenseLayer,
    pub fc2: DenseLayer,
}

/// Encoder, residual blocks and decoder over one input stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub encoder: DenseLayer,
    pub blocks: Vec<ResidualBlock>,
    pub decoder: DenseLayer,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SmoothNetWeights {
    Basic(Branch),
    MotionAware {
        position: Branch,
        velocity: Branch,
        acceleration: Branch,
        fusion: DenseLayer,
    },
}

struct BranchCache {
    input: Matrix,
    encoder_pre: Matrix,
    /// Block inputs `h_0 … h_{N−1}` followed by the decoder input `h_N`.
    hidden: Vec<Matrix>,
    block_pre: Vec<Matrix>,
    block_act: Vec<Matrix>,
}

impl Branch {
    fn init(in_dim: usize, window_t: usize, hidden: usize, blocks: usize, rng: &mut RngState) -> Self {
        Self {
            encoder: init_dense(in_dim, hidden, rng),
            blocks: (0..blocks)
                .map(|_| ResidualBlock {
                    fc1: init_dense(hidden, hidden, rng),
                    fc2: init_dense(hidden, hidden, rng),
                })
                .collect(),
            decoder: init_dense(hidden, window_t, rng),
        }
    }

    fn zeros(in_dim: usize, window_t: usize, hidden: usize, blocks: usize) -> Self {
        Self {
            encoder: DenseLayer::zeros(in_dim, hidden),
            blocks: (0..blocks)
                .map(|_| ResidualBlock {
                    fc1: DenseLayer::zeros(hidden, hidden),
                    fc2: DenseLayer::zeros(hidden, hidden),
                })
                .collect(),
            decoder: DenseLayer::zeros(hidden, window_t),
        }
    }

    fn forward(&self, x: Matrix, slope: f64) -> Result<(Matrix, BranchCache)> {
        let encoder_pre = dense_forward(&self.encoder, &x)?;
        let mut h = encoder_pre.clone();
        leaky_relu_in_place(&mut h, slope);
        let mut hidden = Vec::with_capacity(self.blocks.len() + 1);
        let mut block_pre = Vec::with_capacity(self.blocks.len());
        let mut block_act = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let pre = dense_forward(&block.fc1, &h)?;
            let mut act = pre.clone();
            leaky_relu_in_place(&mut act, slope);
            let mut next = dense_forward(&block.fc2, &act)?;
            next.add_assign(&h);
            hidden.push(h);
            block_pre.push(pre);
            block_act.push(act);
            h = next;
        }
        let out = dense_forward(&self.decoder, &h)?;
        hidden.push(h);
        Ok((
            out,
            BranchCache {
                input: x,
                encoder_pre,
                hidden,
                block_pre,
                block_act,
            },
        ))
    }

    /// Parameter gradients for an upstream gradient on the branch output.
    fn backward(&self, cache: &BranchCache, grad_out: &Matrix, slope: f64) -> Result<Branch> {
        let n = self.blocks.len();
        let (dw, db) = dense_param_grads(&self.decoder, &cache.hidden[n], grad_out)?;
        let decoder = DenseLayer { weight: dw, bias: db };
        let mut gh = dense_input_grad(&self.decoder, grad_out)?;

        let mut blocks = Vec::with_capacity(n);
        for (i, block) in self.blocks.iter().enumerate().rev() {
            let (w2, b2) = dense_param_grads(&block.fc2, &cache.block_act[i], &gh)?;
            let mut gu = dense_input_grad(&block.fc2, &gh)?;
            leaky_relu_backward(&cache.block_pre[i], &mut gu, slope);
            let (w1, b1) = dense_param_grads(&block.fc1, &cache.hidden[i], &gu)?;
            gh.add_assign(&dense_input_grad(&block.fc1, &gu)?);
            blocks.push(ResidualBlock {
                fc1: DenseLayer { weight: w1, bias: b1 },
                fc2: DenseLayer { weight: w2, bias: b2 },
            });
        }
        blocks.reverse();

        leaky_relu_backward(&cache.encoder_pre, &mut gh, slope);
        let (ew, eb) = dense_param_grads(&self.encoder, &cache.input, &gh)?;
        Ok(Branch {
            encoder: DenseLayer { weight: ew, bias: eb },
            blocks,
            decoder,
        })
    }

    fn named_layers<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a DenseLayer)>) {
        out.push((format!("{prefix}encoder"), &self.encoder));
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((format!("{prefix}blocks.{i}.fc1"), &b.fc1));
            out.push((format!("{prefix}blocks.{i}.fc2"), &b.fc2));
        }
        out.push((format!("{prefix}decoder"), &self.decoder));
    }

    fn layers_mut<'a>(&'a mut self, out: &mut Vec<&'a mut DenseLayer>) {
        out.push(&mut self.encoder);
        for b in &mut self.blocks {
            out.push(&mut b.fc1);
            out.push(&mut b.fc2);
        }
        out.push(&mut self.decoder);
    }
}

enum ForwardCache {
    Basic(BranchCache),
    MotionAware {
        position: BranchCache,
        velocity: BranchCache,
        acceleration: BranchCache,
        fused_input: Matrix,
    },
}

impl SmoothNetWeights {
    pub fn init(cfg: &SmoothNetConfig, rng: &mut RngState) -> Result<Self> {
        cfg.validate()?;
        let (t, h, n) = (cfg.window_t, cfg.hidden, cfg.blocks);
        Ok(match cfg.variant {
            Variant::Basic => SmoothNetWeights::Basic(Branch::init(t, t, h, n, rng)),
            Variant::MotionAware => SmoothNetWeights::MotionAware {
                position: Branch::init(t, t, h, n, rng),
                velocity: Branch::init(t - 1, t, h, n, rng),
                acceleration: Branch::init(t - 2, t, h, n, rng),
                fusion: init_dense(3 * t, t, rng),
            },
        })
    }

    pub fn zeros(cfg: &SmoothNetConfig) -> Result<Self> {
        cfg.validate()?;
        let (t, h, n) = (cfg.window_t, cfg.hidden, cfg.blocks);
        Ok(match cfg.variant {
            Variant::Basic => SmoothNetWeights::Basic(Branch::zeros(t, t, h, n)),
            Variant::MotionAware => SmoothNetWeights::MotionAware {
                position: Branch::zeros(t, t, h, n),
                velocity: Branch::zeros(t - 1, t, h, n),
                acceleration: Branch::zeros(t - 2, t, h, n),
                fusion: DenseLayer::zeros(3 * t, t),
            },
        })
    }

    pub fn variant(&self) -> Variant {
        match self {
            SmoothNetWeights::Basic(_) => Variant::Basic,
            SmoothNetWeights::MotionAware { .. } => Variant::MotionAware,
        }
    }

    /// Layers with their checkpoint names, in canonical parameter order.
    pub fn named_layers(&self) -> Vec<(String, &DenseLayer)> {
        let mut out = Vec::new();
        match self {
            SmoothNetWeights::Basic(b) => b.named_layers("", &mut out),
            SmoothNetWeights::MotionAware {
                position,
                velocity,
                acceleration,
                fusion,
            } => {
                position.named_layers("position.", &mut out);
                velocity.named_layers("velocity.", &mut out);
                acceleration.named_layers("acceleration.", &mut out);
                out.push(("fusion".to_string(), fusion));
            }
        }
        out
    }

    pub fn layers_mut(&mut self) -> Vec<&mut DenseLayer> {
        let mut out = Vec::new();
        match self {
            SmoothNetWeights::Basic(b) => b.layers_mut(&mut out),
            SmoothNetWeights::MotionAware {
                position,
                velocity,
                acceleration,
                fusion,
            } => {
                position.layers_mut(&mut out);
                velocity.layers_mut(&mut out);
                acceleration.layers_mut(&mut out);
                out.push(fusion);
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_layers().iter().map(|(_, l)| l.param_count()).sum()
    }

    /// All parameters, layer by layer, weight before bias.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (_, l) in self.named_layers() {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::shape(format!(
                "{} values for {} parameters",
                flat.len(),
                self.param_count()
            )));
        }
        let mut off = 0;
        for l in self.layers_mut() {
            let nw = l.weight.as_slice().len();
            l.weight.as_mut_slice().copy_from_slice(&flat[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.named_layers()
            .iter()
            .all(|(_, l)| l.weight.is_finite() && l.bias.iter().all(|b| b.is_finite()))
    }

    /// Shape check against a configuration.
    pub fn check_config(&self, cfg: &SmoothNetConfig) -> Result<()> {
        cfg.validate()?;
        let reference = SmoothNetWeights::zeros(cfg)?;
        if reference.variant() != self.variant() {
            return Err(Error::shape(format!(
                "weights are {:?}, config says {:?}",
                self.variant(),
                cfg.variant
            )));
        }
        let mine = self.named_layers();
        let want = reference.named_layers();
        if mine.len() != want.len() {
            return Err(Error::shape(format!(
                "{} layers, config implies {}",
                mine.len(),
                want.len()
            )));
        }
        for ((name, l), (_, r)) in mine.iter().zip(&want) {
            if l.weight.shape() != r.weight.shape() || l.bias.len() != r.bias.len() {
                return Err(Error::shape(format!(
                    "layer {name} is {:?}, expected {:?}",
                    l.weight.shape(),
                    r.weight.shape()
                )));
            }
        }
        Ok(())
    }

    fn forward_cached(&self, cfg: &SmoothNetConfig, batch: &Matrix) -> Result<(Matrix, ForwardCache)> {
        if batch.rows() != cfg.window_t {
            return Err(Error::shape(format!(
                "batch has {} frames, model window is {}",
                batch.rows(),
                cfg.window_t
            )));
        }
        let slope = cfg.leaky_slope;
        match self {
            SmoothNetWeights::Basic(b) => {
                let (out, cache) = b.forward(batch.clone(), slope)?;
                Ok((out, ForwardCache::Basic(cache)))
            }
            SmoothNetWeights::MotionAware {
                position,
                velocity,
                acceleration,
                fusion,
            } => {
                let vel = diff_velocity(batch)?;
                let acc = diff_acceleration(&vel)?;
                let (p_out, p_cache) = position.forward(batch.clone(), slope)?;
                let (v_out, v_cache) = velocity.forward(vel, slope)?;
                let (a_out, a_cache) = acceleration.forward(acc, slope)?;
                let fused_input = Matrix::vstack(&[&p_out, &v_out, &a_out])?;
                let out = dense_forward(fusion, &fused_input)?;
                Ok((
                    out,
                    ForwardCache::MotionAware {
                        position: p_cache,
                        velocity: v_cache,
                        acceleration: a_cache,
                        fused_input,
                    },
                ))
            }
        }
    }

    fn backward(&self, cfg: &SmoothNetConfig, cache: &ForwardCache, grad_out: &Matrix) -> Result<SmoothNetWeights> {
        let slope = cfg.leaky_slope;
        match (self, cache) {
            (SmoothNetWeights::Basic(b), ForwardCache::Basic(c)) => {
                Ok(SmoothNetWeights::Basic(b.backward(c, grad_out, slope)?))
            }
            (
                SmoothNetWeights::MotionAware {
                    position,
                    velocity,
                    acceleration,
                    fusion,
                },
                ForwardCache::MotionAware {
                    position: pc,
                    velocity: vc,
                    acceleration: ac,
                    fused_input,
                },
            ) => {
                let t = cfg.window_t;
                let (fw, fb) = dense_param_grads(fusion, fused_input, grad_out)?;
                let g_cat = dense_input_grad(fusion, grad_out)?;
                Ok(SmoothNetWeights::MotionAware {
                    position: position.backward(pc, &g_cat.row_range(0, t), slope)?,
                    velocity: velocity.backward(vc, &g_cat.row_range(t, 2 * t), slope)?,
                    acceleration: acceleration.backward(ac, &g_cat.row_range(2 * t, 3 * t), slope)?,
                    fusion: DenseLayer { weight: fw, bias: fb },
                })
            }
            _ => unreachable!("cache built by the same weights"),
        }
    }
}

/// Configuration plus weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothNet {
    pub config: SmoothNetConfig,
    pub weights: SmoothNetWeights,
}

/// Loss values for one batch; `total` is what gets minimized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub pose: f64,
    pub accel: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    PoseOnly,
    AccelOnly,
    #[default]
    PosePlusAccel,
}

impl SmoothNet {
    pub fn new(config: SmoothNetConfig, rng: &mut RngState) -> Result<Self> {
        let weights = SmoothNetWeights::init(&config, rng)?;
        Ok(Self { config, weights })
    }

    pub fn from_parts(config: SmoothNetConfig, weights: SmoothNetWeights) -> Result<Self> {
        weights.check_config(&config)?;
        Ok(Self { config, weights })
    }

    pub fn window(&self) -> usize {
        self.config.window_t
    }

    pub fn param_count(&self) -> usize {
        self.weights.param_count()
    }

    pub fn forward(&self, batch: &WindowBatch) -> Result<WindowBatch> {
        Ok(self.weights.forward_cached(&self.config, batch)?.0)
    }

    /// Forward, loss and parameter gradients for one training batch.
    pub fn loss_and_grads(
        &self,
        noisy: &WindowBatch,
        clean: &WindowBatch,
        accel_target: &Matrix,
        kind: LossKind,
    ) -> Result<(LossBreakdown, SmoothNetWeights)> {
        let (out, cache) = self.weights.forward_cached(&self.config, noisy)?;
        let (loss, grad) = loss_with_grad(&out, clean, accel_target, kind)?;
        let grads = self.weights.backward(&self.config, &cache, &grad)?;
        Ok((loss, grads))
    }
}

pub fn forward_basic(cfg: &SmoothNetConfig, weights: &SmoothNetWeights, batch: &WindowBatch) -> Result<WindowBatch> {
    if cfg.variant != Variant::Basic || weights.variant() != Variant::Basic {
        return Err(Error::config("forward_basic needs a basic configuration and weights"));
    }
    Ok(weights.forward_cached(cfg, batch)?.0)
}

pub fn forward_motion_aware(
    cfg: &SmoothNetConfig,
    weights: &SmoothNetWeights,
    batch: &WindowBatch,
) -> Result<WindowBatch> {
    if cfg.variant != Variant::MotionAware || weights.variant() != Variant::MotionAware {
        return Err(Error::config(
            "forward_motion_aware needs a motion-aware configuration and weights",
        ));
    }
    Ok(weights.forward_cached(cfg, batch)?.0)
}

/// Row differences `y[t] − y[t−1]`, `T−1` rows.
pub fn diff_velocity(y: &WindowBatch) -> Result<Matrix> {
    row_difference(y)
}

/// Row differences of a velocity block, i.e. the three-point second
/// difference of the underlying positions. `T−2` rows.
pub fn diff_acceleration(v: &Matrix) -> Result<Matrix> {
    row_difference(v)
}

fn row_difference(y: &Matrix) -> Result<Matrix> {
    if y.rows() < 2 {
        return Err(Error::shape(format!(
            "differencing needs at least 2 frames, got {}",
            y.rows()
        )));
    }
    let cols = y.cols();
    let mut d = Matrix::zeros(y.rows() - 1, cols);
    for t in 1..y.rows() {
        let (prev, cur) = (y.row(t - 1), y.row(t));
        for ((o, a), b) in d.row_mut(t - 1).iter_mut().zip(cur).zip(prev) {
            *o = a - b;
        }
    }
    Ok(d)
}

/// Second difference `y[t+1] − 2y[t] + y[t−1]` computed in one stencil.
pub fn second_difference(y: &Matrix) -> Result<Matrix> {
    if y.rows() < 3 {
        return Err(Error::shape(format!(
            "second difference needs at least 3 frames, got {}",
            y.rows()
        )));
    }
    let mut d = Matrix::zeros(y.rows() - 2, y.cols());
    for t in 1..y.rows() - 1 {
        let (a, b, c) = (y.row(t - 1), y.row(t), y.row(t + 1));
        for (j, o) in d.row_mut(t - 1).iter_mut().enumerate() {
            *o = c[j] - 2.0 * b[j] + a[j];
        }
    }
    Ok(d)
}

/// Mean absolute position error over all entries.
pub fn loss_pose(g_hat: &WindowBatch, y: &WindowBatch) -> Result<f64> {
    if g_hat.shape() != y.shape() {
        return Err(Error::shape(format!(
            "prediction {:?} vs target {:?}",
            g_hat.shape(),
            y.shape()
        )));
    }
    Ok(mean_abs_diff(g_hat.as_slice(), y.as_slice()))
}

/// Mean absolute error between the second difference of the prediction and a
/// target acceleration block.
pub fn loss_accel(g_hat: &WindowBatch, a_gt: &Matrix) -> Result<f64> {
    let acc = second_difference(g_hat)?;
    if acc.shape() != a_gt.shape() {
        return Err(Error::shape(format!(
            "acceleration {:?} vs target {:?}",
            acc.shape(),
            a_gt.shape()
        )));
    }
    Ok(mean_abs_diff(acc.as_slice(), a_gt.as_slice()))
}

/// `loss_pose + loss_accel` with the target acceleration taken from `y`.
pub fn loss_total(g_hat: &WindowBatch, y: &WindowBatch) -> Result<f64> {
    let a_gt = second_difference(y)?;
    Ok(loss_pose(g_hat, y)? + loss_accel(g_hat, &a_gt)?)
}

fn mean_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Loss value and its gradient with respect to the prediction.
pub fn loss_with_grad(
    g_hat: &WindowBatch,
    y: &WindowBatch,
    a_gt: &Matrix,
    kind: LossKind,
) -> Result<(LossBreakdown, Matrix)> {
    let pose = loss_pose(g_hat, y)?;
    let accel = loss_accel(g_hat, a_gt)?;
    let mut grad = Matrix::zeros(g_hat.rows(), g_hat.cols());
    let (use_pose, use_accel) = match kind {
        LossKind::PoseOnly => (true, false),
        LossKind::AccelOnly => (false, true),
        LossKind::PosePlusAccel => (true, true),
    };
    if use_pose {
        let n = g_hat.as_slice().len() as f64;
        for ((g, a), b) in grad
            .as_mut_slice()
            .iter_mut()
            .zip(g_hat.as_slice())
            .zip(y.as_slice())
        {
            *g += sign(a - b) / n;
        }
    }
    if use_accel {
        let acc = second_difference(g_hat)?;
        let n = acc.as_slice().len() as f64;
        let cols = g_hat.cols();
        for t in 0..acc.rows() {
            for j in 0..cols {
                let s = sign(acc.get(t, j) - a_gt.get(t, j)) / n;
                if s != 0.0 {
                    let g = grad.as_mut_slice();
                    g[t * cols + j] += s;
                    g[(t + 1) * cols + j] -= 2.0 * s;
                    g[(t + 2) * cols + j] += s;
                }
            }
        }
    }
    let total = match kind {
        LossKind::PoseOnly => pose,
        LossKind::AccelOnly => accel,
        LossKind::PosePlusAccel => pose + accel,
    };
    Ok((LossBreakdown { pose, accel, total }, grad))
}

/// Number of scalar weights and biases implied by a configuration.
pub fn param_count(cfg: &SmoothNetConfig) -> usize {
    let (t, h, n) = (cfg.window_t, cfg.hidden, cfg.blocks);
    let branch = |in_dim: usize| (in_dim * h + h) + n * 2 * (h * h + h) + (h * t + t);
    match cfg.variant {
        Variant::Basic => branch(t),
        Variant::MotionAware => branch(t) + branch(t - 1) + branch(t - 2) + (3 * t * t + t),
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainMeta {
    pub epochs: usize,
    pub seed: u64,
    pub final_loss: Option<f64>,
    /// Input normalization the model was trained under; inference repeats it.
    #[serde(default)]
    pub normalization: Normalization,
}

/// A model plus the metadata of the run that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: SmoothNet,
    pub train_meta: TrainMeta,
}

#[derive(Serialize, Deserialize)]
struct TensorDoc<T> {
    shape: [usize; 2],
    data: Vec<T>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointDoc<T> {
    format_version: u32,
    config: SmoothNetConfig,
    weights: BTreeMap<String, TensorDoc<T>>,
    train_meta: TrainMeta,
}

impl Checkpoint {
    pub fn new(model: SmoothNet, train_meta: TrainMeta) -> Self {
        Self { model, train_meta }
    }

    /// JSON document with weights rounded to 32-bit floats.
    pub fn to_json(&self) -> Result<String> {
        let mut weights = BTreeMap::new();
        for (name, layer) in self.model.weights.named_layers() {
            let w = &layer.weight;
            weights.insert(
                format!("{name}.weight"),
                TensorDoc {
                    shape: [w.rows(), w.cols()],
                    data: w.as_slice().iter().map(|&v| v as f32).collect::<Vec<f32>>(),
                },
            );
            weights.insert(
                format!("{name}.bias"),
                TensorDoc {
                    shape: [layer.bias.len(), 1],
                    data: layer.bias.iter().map(|&v| v as f32).collect(),
                },
            );
        }
        let doc = CheckpointDoc {
            format_version: CHECKPOINT_FORMAT_VERSION,
            config: self.model.config.clone(),
            weights,
            train_meta: self.train_meta.clone(),
        };
        serde_json::to_string(&doc).map_err(|e| Error::Parse {
            context: "checkpoint".into(),
            message: e.to_string(),
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: CheckpointDoc<f32> = serde_json::from_str(text).map_err(|e| Error::Parse {
            context: "checkpoint".into(),
            message: e.to_string(),
        })?;
        if doc.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Validation(format!(
                "unsupported checkpoint format_version {}",
                doc.format_version
            )));
        }
        let config = doc.config;
        let mut weights = SmoothNetWeights::zeros(&config)?;
        let mut tensors = doc.weights;
        // Names are resolved against a freshly shaped weight set so that
        // missing, extra and mis-shaped tensors are all reported.
        let names: Vec<String> = weights
            .named_layers()
            .into_iter()
            .map(|(n, _)| n)
            .collect();
        for (name, layer) in names.iter().zip(weights.layers_mut()) {
            let w = take_tensor(&mut tensors, &format!("{name}.weight"), layer.weight.shape())?;
            let b = take_tensor(&mut tensors, &format!("{name}.bias"), (layer.bias.len(), 1))?;
            layer.weight.as_mut_slice().copy_from_slice(&w);
            layer.bias.copy_from_slice(&b);
        }
        if let Some(extra) = tensors.keys().next() {
            return Err(Error::Validation(format!(
                "checkpoint has unexpected tensor '{extra}'"
            )));
        }
        Ok(Self {
            model: SmoothNet { config, weights },
            train_meta: doc.train_meta,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

fn take_tensor(
    tensors: &mut BTreeMap<String, TensorDoc<f32>>,
    name: &str,
    shape: (usize, usize),
) -> Result<Vec<f64>> {
    let t = tensors
        .remove(name)
        .ok_or_else(|| Error::Validation(format!("checkpoint is missing tensor '{name}'")))?;
    if (t.shape[0], t.shape[1]) != shape || t.data.len() != shape.0 * shape.1 {
        return Err(Error::Validation(format!(
            "tensor '{name}' has shape {:?} with {} values, expected {shape:?}",
            t.shape,
            t.data.len()
        )));
    }
    if t.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation(format!("tensor '{name}' is not finite")));
    }
    Ok(t.data.into_iter().map(f64::from).collect())
}
