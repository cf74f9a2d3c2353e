//! The beat tracking network.
//!
//! A convolutional stem reduces 128 mel bands to 32 bands of 32 channels.
//! Each frontend block runs a frequency-directed and a time-directed
//! partial transformer, then halves the bands and doubles the channels with
//! a strided convolution. The flattened result is projected into a stack of
//! full-sequence transformer blocks, and the Sum Head produces per-frame
//! beat and downbeat logits.

use beatrack_tensor::{BatchNormConfig, Checkpoint, Element, NormMode, RunningStats, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub n_mels: usize,
    pub stem_channels: usize,
    pub head_dim: usize,
    /// Attention heads of each frontend block; its length is the block count.
    pub frontend_heads: Vec<usize>,
    pub main_dim: usize,
    pub main_heads: usize,
    pub main_blocks: usize,
    pub ffn_mult: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::full()
    }
}

impl ModelConfig {
    /// The 20M-parameter configuration.
    pub fn full() -> Self {
        Self {
            n_mels: 128,
            stem_channels: 32,
            head_dim: 32,
            frontend_heads: vec![1, 2, 4],
            main_dim: 512,
            main_heads: 16,
            main_blocks: 6,
            ffn_mult: 4,
        }
    }

    /// The 2M-parameter configuration with a 128-wide main transformer.
    pub fn small() -> Self {
        Self {
            main_dim: 128,
            main_heads: 4,
            ..Self::full()
        }
    }

    pub fn frontend_blocks(&self) -> usize {
        self.frontend_heads.len()
    }

    /// Bands and channels entering frontend block `b` (or leaving the
    /// frontend when `b == frontend_blocks()`).
    pub fn frontend_shape(&self, b: usize) -> (usize, usize) {
        ((self.n_mels / 4) >> b, self.stem_channels << b)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.n_mels == 0 || self.n_mels % 4 != 0 {
            return fail(format!("n_mels must be a positive multiple of 4, got {}", self.n_mels));
        }
        if self.stem_channels == 0 || self.head_dim == 0 || self.head_dim % 2 != 0 {
            return fail("stem_channels must be positive and head_dim positive and even".into());
        }
        for (b, &heads) in self.frontend_heads.iter().enumerate() {
            let (bands, channels) = self.frontend_shape(b);
            if heads * self.head_dim != channels {
                return fail(format!(
                    "frontend block {b}: {heads} heads of {} do not cover {channels} channels",
                    self.head_dim
                ));
            }
            if bands < 2 || bands % 2 != 0 {
                return fail(format!("frontend block {b}: band count {bands} must be even"));
            }
        }
        if self.main_heads == 0 || self.main_heads * self.head_dim != self.main_dim {
            return fail(format!(
                "main_dim {} must equal main_heads {} x head_dim {}",
                self.main_dim, self.main_heads, self.head_dim
            ));
        }
        if self.ffn_mult == 0 {
            return fail("ffn_mult must be positive".into());
        }
        Ok(())
    }
}

/// How a parameter is treated by the optimizer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Decayed weight matrix or kernel.
    Weight,
    Bias,
    /// Scale or shift of a normalization layer.
    Norm,
    /// Running statistic; not trained.
    Buffer,
}

impl ParamKind {
    pub fn trainable(self) -> bool {
        self != ParamKind::Buffer
    }

    pub fn decays(self) -> bool {
        self == ParamKind::Weight
    }
}

#[derive(Clone, Debug)]
pub struct Param<E: Element> {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor<E>,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore<E: Element> {
    params: Vec<Param<E>>,
}

impl<E: Element> ParamStore<E> {
    fn add(&mut self, name: String, kind: ParamKind, value: Tensor<E>) -> usize {
        self.params.push(Param { name, kind, value });
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<E>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<E>> {
        self.params.iter_mut()
    }

    pub fn get(&self, id: usize) -> &Param<E> {
        &self.params[id]
    }

    pub fn get_mut(&mut self, id: usize) -> &mut Param<E> {
        &mut self.params[id]
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }
}

/// Draws from N(0, σ²) truncated to ±2σ.
fn trunc_normal<E: Element>(shape: &[usize], std: f64, rng: &mut ChaCha8Rng) -> Tensor<E> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    Tensor::from_fn(shape.to_vec(), |_| loop {
        let z: f64 = normal.sample(rng);
        if z.abs() <= 2.0 {
            break E::of(z * std);
        }
    })
}

const INIT_STD: f64 = 0.02;

struct Builder<'a, E: Element> {
    store: &'a mut ParamStore<E>,
    rng: ChaCha8Rng,
}

impl<E: Element> Builder<'_, E> {
    fn weight(&mut self, name: String, shape: &[usize]) -> usize {
        let t = trunc_normal(shape, INIT_STD, &mut self.rng);
        self.store.add(name, ParamKind::Weight, t)
    }

    fn fill(&mut self, name: String, kind: ParamKind, n: usize, value: f64) -> usize {
        self.store.add(name, kind, Tensor::full([n], E::of(value)))
    }

    fn linear(&mut self, name: &str, din: usize, dout: usize, bias: bool) -> Linear {
        Linear {
            w: self.weight(format!("{name}.weight"), &[din, dout]),
            b: bias.then(|| self.fill(format!("{name}.bias"), ParamKind::Bias, dout, 0.0)),
        }
    }

    fn layer_norm(&mut self, name: &str, dim: usize) -> LayerNorm {
        LayerNorm {
            scale: self.fill(format!("{name}.scale"), ParamKind::Norm, dim, 1.0),
            shift: self.fill(format!("{name}.shift"), ParamKind::Norm, dim, 0.0),
        }
    }

    fn batch_norm(&mut self, name: &str, dim: usize, axis: usize) -> BatchNorm {
        BatchNorm {
            scale: self.fill(format!("{name}.scale"), ParamKind::Norm, dim, 1.0),
            shift: self.fill(format!("{name}.shift"), ParamKind::Norm, dim, 0.0),
            mean: self.fill(format!("{name}.running_mean"), ParamKind::Buffer, dim, 0.0),
            var: self.fill(format!("{name}.running_var"), ParamKind::Buffer, dim, 1.0),
            axis,
        }
    }

    fn transformer(&mut self, name: &str, dim: usize, heads: usize, ffn: usize) -> TransformerLayer {
        TransformerLayer {
            norm_attn: self.layer_norm(&format!("{name}.norm_attn"), dim),
            qkv: self.linear(&format!("{name}.attn.qkv"), dim, 3 * dim, false),
            gate: self.linear(&format!("{name}.attn.gate"), dim, heads, true),
            out: self.linear(&format!("{name}.attn.out"), dim, dim, true),
            norm_ffn: self.layer_norm(&format!("{name}.norm_ffn"), dim),
            ffn_in: self.linear(&format!("{name}.ffn.fc1"), dim, ffn, true),
            ffn_out: self.linear(&format!("{name}.ffn.fc2"), ffn, dim, true),
            heads,
        }
    }
}

/// Running-statistics update produced by a train-mode forward pass.
#[derive(Clone, Debug)]
pub struct StatUpdate<E> {
    mean_id: usize,
    var_id: usize,
    mean: Vec<E>,
    var: Vec<E>,
}

struct Ctx<'a, E: Element> {
    tape: &'a mut Tape<E>,
    vars: &'a [Var],
    store: &'a ParamStore<E>,
    mode: NormMode,
    stats: Vec<StatUpdate<E>>,
}

#[derive(Clone, Debug)]
struct Linear {
    w: usize,
    b: Option<usize>,
}

impl Linear {
    /// Affine map of the last axis; leading axes are flattened into one
    /// matrix product.
    fn forward<E: Element>(&self, cx: &mut Ctx<'_, E>, x: Var) -> Result<Var> {
        let shape = cx.tape.shape(x).to_vec();
        let din = *shape.last().expect("rank >= 1");
        let dout = cx.store.get(self.w).value.shape()[1];
        let rows = shape.iter().product::<usize>() / din.max(1);
        let flat = cx.tape.reshape(x, &[rows, din])?;
        let mut y = cx.tape.matmul(flat, cx.vars[self.w])?;
        if let Some(b) = self.b {
            y = cx.tape.add(y, cx.vars[b])?;
        }
        let mut out_shape = shape;
        *out_shape.last_mut().expect("rank >= 1") = dout;
        Ok(cx.tape.reshape(y, &out_shape)?)
    }
}

#[derive(Clone, Debug)]
struct LayerNorm {
    scale: usize,
    shift: usize,
}

impl LayerNorm {
    fn forward<E: Element>(&self, cx: &mut Ctx<'_, E>, x: Var) -> Result<Var> {
        Ok(cx.tape.layer_norm(x, cx.vars[self.scale], cx.vars[self.shift])?)
    }
}

#[derive(Clone, Debug)]
struct BatchNorm {
    scale: usize,
    shift: usize,
    mean: usize,
    var: usize,
    axis: usize,
}

impl BatchNorm {
    fn forward<E: Element>(&self, cx: &mut Ctx<'_, E>, x: Var) -> Result<Var> {
        let mut mean = cx.store.get(self.mean).value.data().to_vec();
        let mut var = cx.store.get(self.var).value.data().to_vec();
        let y = cx.tape.batch_norm(
            x,
            cx.vars[self.scale],
            cx.vars[self.shift],
            self.axis,
            RunningStats {
                mean: &mut mean,
                var: &mut var,
            },
            cx.mode,
            BatchNormConfig::default(),
        )?;
        if cx.mode == NormMode::Train {
            cx.stats.push(StatUpdate {
                mean_id: self.mean,
                var_id: self.var,
                mean,
                var,
            });
        }
        Ok(y)
    }
}

/// Pre-norm transformer layer with rotary, per-head sigmoid-gated
/// self-attention and a GeLU feedforward network.
#[derive(Clone, Debug)]
struct TransformerLayer {
    norm_attn: LayerNorm,
    qkv: Linear,
    gate: Linear,
    out: Linear,
    norm_ffn: LayerNorm,
    ffn_in: Linear,
    ffn_out: Linear,
    heads: usize,
}

impl TransformerLayer {
    /// `x: [N, L, C]`, attending along `L`.
    fn forward<E: Element>(&self, cx: &mut Ctx<'_, E>, x: Var) -> Result<Var> {
        let h = self.norm_attn.forward(cx, x)?;
        let a = self.attention(cx, h)?;
        let x = cx.tape.add(x, a)?;
        let h = self.norm_ffn.forward(cx, x)?;
        let h = self.ffn_in.forward(cx, h)?;
        let h = cx.tape.gelu(h);
        let h = self.ffn_out.forward(cx, h)?;
        Ok(cx.tape.add(x, h)?)
    }

    fn attention<E: Element>(&self, cx: &mut Ctx<'_, E>, x: Var) -> Result<Var> {
        let &[n, l, c] = cx.tape.shape(x) else {
            unreachable!("attention input is [N, L, C]")
        };
        let (heads, d) = (self.heads, c / self.heads);
        let qkv = self.qkv.forward(cx, x)?;
        let qkv = cx.tape.reshape(qkv, &[n, l, 3, heads, d])?;
        let qkv = cx.tape.permute(qkv, &[2, 0, 3, 1, 4])?;
        let mut parts = [qkv; 3];
        for (i, p) in parts.iter_mut().enumerate() {
            let s = cx.tape.slice(qkv, 0, i, 1)?;
            *p = cx.tape.reshape(s, &[n, heads, l, d])?;
        }
        let [q, k, v] = parts;
        let q = cx.tape.rope(q)?;
        let k = cx.tape.rope(k)?;
        let scale = E::of(1.0 / (d as f64).sqrt());
        let a = cx.tape.attention(q, k, v, scale)?;
        let g = self.gate.forward(cx, x)?;
        let g = cx.tape.sigmoid(g);
        let g = cx.tape.permute(g, &[0, 2, 1])?;
        let g = cx.tape.reshape(g, &[n, heads, l, 1])?;
        let a = cx.tape.mul(a, g)?;
        let a = cx.tape.permute(a, &[0, 2, 1, 3])?;
        let a = cx.tape.reshape(a, &[n, l, c])?;
        self.out.forward(cx, a)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// Each frame is a sequence over frequency bands.
    Frequency,
    /// Each band is a sequence over time.
    Time,
}

#[derive(Clone, Debug)]
struct PartialTransformer {
    layer: TransformerLayer,
    direction: Direction,
}

impl PartialTransformer {
    /// `x: [B, T, F, C]`; the axis not attended over is folded into the batch.
    fn forward<E: Element>(&self, cx: &mut Ctx<'_, E>, x: Var) -> Result<Var> {
        let &[b, t, f, c] = cx.tape.shape(x) else {
            unreachable!("partial transformer input is [B, T, F, C]")
        };
        match self.direction {
            Direction::Frequency => {
                let seq = cx.tape.reshape(x, &[b * t, f, c])?;
                let y = self.layer.forward(cx, seq)?;
                Ok(cx.tape.reshape(y, &[b, t, f, c])?)
            }
            Direction::Time => {
                let xt = cx.tape.permute(x, &[0, 2, 1, 3])?;
                let seq = cx.tape.reshape(xt, &[b * f, t, c])?;
                let y = self.layer.forward(cx, seq)?;
                let y = cx.tape.reshape(y, &[b, f, t, c])?;
                Ok(cx.tape.permute(y, &[0, 2, 1, 3])?)
            }
        }
    }
}

#[derive(Clone, Debug)]
struct FrontendBlock {
    freq: PartialTransformer,
    time: PartialTransformer,
    conv: usize,
    norm: BatchNorm,
}

/// Intermediate shapes recorded during a forward pass, batch axis included.
pub type ShapeTrace = Vec<(String, Vec<usize>)>;

/// Result of [`Model::forward`].
pub struct Forward<E> {
    /// `[B, T, 2]`: beat then downbeat logits.
    pub logits: Var,
    pub trace: ShapeTrace,
    /// Pending running-statistics updates (train mode only); apply with
    /// [`Model::apply_stats`].
    pub stats: Vec<StatUpdate<E>>,
}

#[derive(Clone, Debug)]
pub struct Model<E: Element> {
    config: ModelConfig,
    store: ParamStore<E>,
    stem_norm_in: BatchNorm,
    stem_conv: usize,
    stem_norm_out: BatchNorm,
    frontend: Vec<FrontendBlock>,
    projection: Linear,
    main: Vec<TransformerLayer>,
    final_norm: LayerNorm,
    head_beat: Linear,
    head_downbeat: Linear,
}

impl<E: Element> Model<E> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::default();
        let mut bd = Builder {
            store: &mut store,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let c0 = config.stem_channels;
        let stem_norm_in = bd.batch_norm("stem.norm_in", config.n_mels, 2);
        let stem_conv = bd.weight("stem.conv.weight".into(), &[3, 4, 1, c0]);
        let stem_norm_out = bd.batch_norm("stem.norm_out", c0, 3);
        let ffn_mult = config.ffn_mult;
        let frontend = (0..config.frontend_blocks())
            .map(|b| {
                let (_, c) = config.frontend_shape(b);
                let heads = config.frontend_heads[b];
                let name = format!("frontend.{b}");
                FrontendBlock {
                    freq: PartialTransformer {
                        layer: bd.transformer(&format!("{name}.freq"), c, heads, ffn_mult * c),
                        direction: Direction::Frequency,
                    },
                    time: PartialTransformer {
                        layer: bd.transformer(&format!("{name}.time"), c, heads, ffn_mult * c),
                        direction: Direction::Time,
                    },
                    conv: bd.weight(format!("{name}.conv.weight"), &[3, 3, c, 2 * c]),
                    norm: bd.batch_norm(&format!("{name}.norm"), 2 * c, 3),
                }
            })
            .collect();
        let (bands, channels) = config.frontend_shape(config.frontend_blocks());
        let d = config.main_dim;
        let projection = bd.linear("projection", bands * channels, d, true);
        let main = (0..config.main_blocks)
            .map(|i| bd.transformer(&format!("main.{i}"), d, config.main_heads, ffn_mult * d))
            .collect();
        let final_norm = bd.layer_norm("final_norm", d);
        let head_beat = bd.linear("head.beat", d, 1, true);
        let head_downbeat = bd.linear("head.downbeat", d, 1, true);
        Ok(Self {
            config,
            store,
            stem_norm_in,
            stem_conv,
            stem_norm_out,
            frontend,
            projection,
            main,
            final_norm,
            head_beat,
            head_downbeat,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<E> {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<E> {
        &mut self.store
    }

    /// Number of trainable scalars.
    pub fn num_parameters(&self) -> usize {
        self.store.iter().filter(|p| p.kind.trainable()).map(|p| p.value.numel()).sum()
    }

    /// Records every parameter on `tape`: trainable ones as gradient
    /// leaves, buffers as constants. Indices match [`ParamStore`] ids.
    pub fn bind(&self, tape: &mut Tape<E>) -> Vec<Var> {
        self.store
            .iter()
            .map(|p| {
                if p.kind.trainable() {
                    tape.param(&p.value)
                } else {
                    tape.constant(p.value.clone())
                }
            })
            .collect()
    }

    /// Runs the network on `spec: [B, T, n_mels]` (or `[T, n_mels]`) with
    /// parameters bound by [`Model::bind`].
    pub fn forward(&self, tape: &mut Tape<E>, params: &[Var], spec: Var, mode: NormMode) -> Result<Forward<E>> {
        let shape = tape.shape(spec).to_vec();
        let (b, t) = match shape[..] {
            [t, m] if m == self.config.n_mels => (1, t),
            [b, t, m] if m == self.config.n_mels => (b, t),
            _ => {
                return Err(Error::InvalidInput(format!(
                    "expected a [B, T, {}] spectrogram, got {shape:?}",
                    self.config.n_mels
                )))
            }
        };
        if t == 0 || b == 0 {
            return Err(Error::InvalidInput("spectrogram has no frames".into()));
        }
        if params.len() != self.store.len() {
            return Err(Error::InvalidInput(format!(
                "{} bound parameters for a model with {}",
                params.len(),
                self.store.len()
            )));
        }
        let mut cx = Ctx {
            tape,
            vars: params,
            store: &self.store,
            mode,
            stats: Vec::new(),
        };
        let mut trace = ShapeTrace::new();
        let mut x = cx.tape.reshape(spec, &[b, t, self.config.n_mels])?;
        trace.push(("input".into(), cx.tape.shape(x).to_vec()));

        x = self.stem_norm_in.forward(&mut cx, x)?;
        x = cx.tape.reshape(x, &[b, t, self.config.n_mels, 1])?;
        x = cx.tape.conv2d(x, cx.vars[self.stem_conv], (1, 4), (1, 0))?;
        x = self.stem_norm_out.forward(&mut cx, x)?;
        x = cx.tape.gelu(x);
        trace.push(("stem".into(), cx.tape.shape(x).to_vec()));

        for (i, block) in self.frontend.iter().enumerate() {
            x = block.freq.forward(&mut cx, x)?;
            x = block.time.forward(&mut cx, x)?;
            x = cx.tape.conv2d(x, cx.vars[block.conv], (1, 2), (1, 1))?;
            x = block.norm.forward(&mut cx, x)?;
            x = cx.tape.gelu(x);
            trace.push((format!("frontend.{i}"), cx.tape.shape(x).to_vec()));
        }

        let (bands, channels) = self.config.frontend_shape(self.config.frontend_blocks());
        x = cx.tape.reshape(x, &[b, t, bands * channels])?;
        trace.push(("flatten".into(), cx.tape.shape(x).to_vec()));
        x = self.projection.forward(&mut cx, x)?;
        trace.push(("projection".into(), cx.tape.shape(x).to_vec()));

        for layer in &self.main {
            x = layer.forward(&mut cx, x)?;
        }
        trace.push(("main".into(), cx.tape.shape(x).to_vec()));
        x = self.final_norm.forward(&mut cx, x)?;

        let beat_only = self.head_beat.forward(&mut cx, x)?;
        let downbeat = self.head_downbeat.forward(&mut cx, x)?;
        let beat = cx.tape.add(beat_only, downbeat)?;
        let logits = cx.tape.concat(&[beat, downbeat], 2)?;
        trace.push(("logits".into(), cx.tape.shape(logits).to_vec()));
        Ok(Forward {
            logits,
            trace,
            stats: cx.stats,
        })
    }

    /// Eval-mode logits `[B, T, 2]` for a batch of spectrograms.
    pub fn infer(&self, spec: Tensor<E>) -> Result<Tensor<E>> {
        let mut tape = Tape::new();
        let params: Vec<Var> = self.store.iter().map(|p| tape.constant(p.value.clone())).collect();
        let x = tape.constant(spec);
        let out = self.forward(&mut tape, &params, x, NormMode::Eval)?;
        Ok(tape.value(out.logits).clone())
    }

    pub fn apply_stats(&mut self, stats: Vec<StatUpdate<E>>) {
        for s in stats {
            self.store.get_mut(s.mean_id).value.data_mut().copy_from_slice(&s.mean);
            self.store.get_mut(s.var_id).value.data_mut().copy_from_slice(&s.var);
        }
    }

    /// Gradients of every parameter after `tape.backward`, zero-filled for
    /// buffers and unused parameters.
    pub fn gradients(&self, tape: &Tape<E>, params: &[Var]) -> Vec<Vec<E>> {
        self.store
            .iter()
            .zip(params)
            .map(|(p, &v)| {
                tape.grad(v)
                    .map_or_else(|| vec![E::zero(); p.value.numel()], <[E]>::to_vec)
            })
            .collect()
    }

    /// Same model with every value converted to `F`.
    pub fn cast<F: Element>(&self) -> Model<F> {
        let mut store = ParamStore::default();
        for p in self.store.iter() {
            store.add(p.name.clone(), p.kind, p.value.cast());
        }
        Model {
            config: self.config.clone(),
            store,
            stem_norm_in: self.stem_norm_in.clone(),
            stem_conv: self.stem_conv,
            stem_norm_out: self.stem_norm_out.clone(),
            frontend: self.frontend.clone(),
            projection: self.projection.clone(),
            main: self.main.clone(),
            final_norm: self.final_norm.clone(),
            head_beat: self.head_beat.clone(),
            head_downbeat: self.head_downbeat.clone(),
        }
    }

    /// Parameters and buffers plus the configuration under `meta.model`.
    pub fn to_checkpoint(&self, mut meta: serde_json::Value) -> Result<Checkpoint<E>> {
        if !meta.is_object() {
            meta = serde_json::json!({});
        }
        meta["model"] = serde_json::to_value(&self.config)?;
        let mut ck = Checkpoint::new(meta);
        for p in self.store.iter() {
            ck.push(p.name.clone(), p.value.clone());
        }
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint<E>) -> Result<Self> {
        let config: ModelConfig = serde_json::from_value(
            ck.meta
                .get("model")
                .cloned()
                .ok_or_else(|| Error::InvalidInput("checkpoint has no model configuration".into()))?,
        )?;
        let mut model = Self::new(config, 0)?;
        for p in model.store.iter_mut() {
            let t = ck
                .get(&p.name)
                .ok_or_else(|| Error::InvalidInput(format!("checkpoint is missing `{}`", p.name)))?;
            if t.shape() != p.value.shape() {
                return Err(Error::InvalidInput(format!(
                    "`{}` has shape {:?} in checkpoint, model expects {:?}",
                    p.name,
                    t.shape(),
                    p.value.shape()
                )));
            }
            p.value = t.clone();
        }
        Ok(model)
    }

    /// Shared handles to the head layers, for tests of the Sum Head.
    pub fn head_param_ids(&self) -> HeadParams {
        HeadParams {
            beat_weight: self.head_beat.w,
            beat_bias: self.head_beat.b.expect("head has bias"),
            downbeat_weight: self.head_downbeat.w,
            downbeat_bias: self.head_downbeat.b.expect("head has bias"),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct HeadParams {
    pub beat_weight: usize,
    pub beat_bias: usize,
    pub downbeat_weight: usize,
    pub downbeat_bias: usize,
}
