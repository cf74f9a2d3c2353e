//! AdamW with selective weight decay, warmup plus cosine learning-rate
//! schedule, gradient accumulation and the epoch loop.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use beatrack_tensor::{Checkpoint, Element, NormMode, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{excerpt_count, mask_augment, sample_excerpts, Piece};
use crate::dsp::FRAME_RATE;
use crate::error::{file_error, invalid, Error, Result};
use crate::loss::{batch_loss, compute_positive_weights, FrameTargets, LossKind, PositiveWeight};
use crate::metrics::{EvalReport, Scores};
use crate::model::{Model, ModelConfig, ParamStore, StatUpdate};
use crate::predict::BeatTracker;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Micro-batches per optimizer step.
    pub accumulation: usize,
    pub warmup_steps: u64,
    pub peak_lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub loss: LossKind,
    /// Weight positives by the negative-to-positive ratio of the training
    /// set; otherwise every weight is one.
    pub positive_weights: bool,
    /// Apply masking augmentation to every drawn excerpt.
    pub augment: bool,
    pub excerpt_seconds: f64,
    pub excerpt_alpha: f64,
    /// Evaluate on validation pieces every this many epochs; 0 disables.
    pub validate_every: usize,
    /// Write a checkpoint every this many epochs; the last epoch is always
    /// written.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 8,
            accumulation: 8,
            warmup_steps: 1000,
            peak_lr: 8e-4,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            loss: LossKind::ShiftTolerant,
            positive_weights: true,
            augment: true,
            excerpt_seconds: 30.0,
            excerpt_alpha: 0.65,
            validate_every: 5,
            checkpoint_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |key: &str, why: &str| Err(Error::Config(format!("`{key}` {why}")));
        if self.epochs == 0 {
            return fail("epochs", "must be positive");
        }
        if self.batch_size == 0 {
            return fail("batch_size", "must be positive");
        }
        if self.accumulation == 0 {
            return fail("accumulation", "must be positive");
        }
        if !(self.peak_lr > 0.0 && self.peak_lr.is_finite()) {
            return fail("peak_lr", "must be a positive number");
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return fail("beta1", "must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return fail("beta2", "must lie in [0, 1)");
        }
        if !(self.eps > 0.0) {
            return fail("eps", "must be positive");
        }
        if !(self.weight_decay >= 0.0) {
            return fail("weight_decay", "must be non-negative");
        }
        if !(self.excerpt_seconds > 0.0) || (self.excerpt_seconds * FRAME_RATE).round() < 1.0 {
            return fail("excerpt_seconds", "must cover at least one frame");
        }
        if !(self.excerpt_alpha > 0.0) {
            return fail("excerpt_alpha", "must be positive");
        }
        Ok(())
    }

    pub fn samples_per_step(&self) -> usize {
        self.batch_size * self.accumulation
    }

    pub fn excerpt_frames(&self) -> usize {
        (self.excerpt_seconds * FRAME_RATE).round() as usize
    }
}

/// Learning rate for optimizer step `step` of `total`: linear warmup to the
/// peak, then cosine annealing to zero at `total`.
pub fn lr_at(step: u64, total: u64, cfg: &TrainConfig) -> Result<f64> {
    if step > total {
        return Err(invalid(format!("step {step} is past the schedule end {total}")));
    }
    let peak = cfg.peak_lr;
    let warmup = cfg.warmup_steps;
    if step < warmup || total <= warmup {
        return Ok(peak * step as f64 / warmup.max(1) as f64);
    }
    let progress = (step - warmup) as f64 / (total - warmup) as f64;
    Ok(peak * 0.5 * (1.0 + (PI * progress).cos()))
}

/// AdamW with decoupled weight decay applied only to weight parameters.
#[derive(Clone, Debug)]
pub struct AdamW<E: Element> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Vec<E>>,
    v: Vec<Vec<E>>,
    decayed: Vec<usize>,
}

impl<E: Element> AdamW<E> {
    pub fn new(params: &ParamStore<E>, cfg: &TrainConfig) -> Self {
        let zeros = || params.iter().map(|p| vec![E::zero(); p.value.numel()]).collect();
        Self {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
            step: 0,
            m: zeros(),
            v: zeros(),
            decayed: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Parameter ids that received weight decay in the latest step.
    pub fn last_decayed(&self) -> &[usize] {
        &self.decayed
    }

    pub fn moments(&self, id: usize) -> (&[E], &[E]) {
        (&self.m[id], &self.v[id])
    }

    /// One update of every trainable parameter. Fails without touching any
    /// parameter if a gradient is not finite.
    pub fn step(&mut self, params: &mut ParamStore<E>, grads: &[Vec<E>], lr: f64) -> Result<()> {
        if grads.len() != params.len() {
            return Err(invalid(format!("{} gradients for {} parameters", grads.len(), params.len())));
        }
        for (p, g) in params.iter().zip(grads) {
            if let Some(i) = g.iter().position(|v| !v.as_f64().is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient of `{}` is {} at index {i}",
                    p.name,
                    g[i].as_f64()
                )));
            }
        }
        self.step += 1;
        self.decayed.clear();
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (self.beta1, self.beta2);
        for (id, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if !p.kind.trainable() {
                continue;
            }
            let decay = p.kind.decays() && self.weight_decay > 0.0;
            if decay {
                self.decayed.push(id);
            }
            let (m, v) = (&mut self.m[id], &mut self.v[id]);
            for (k, w) in p.value.data_mut().iter_mut().enumerate() {
                let gk = g[k].as_f64();
                let mut x = w.as_f64();
                if decay {
                    x *= 1.0 - lr * self.weight_decay;
                }
                let mk = b1 * m[k].as_f64() + (1.0 - b1) * gk;
                let vk = b2 * v[k].as_f64() + (1.0 - b2) * gk * gk;
                m[k] = E::of(mk);
                v[k] = E::of(vk);
                x -= lr * (mk / bc1) / ((vk / bc2).sqrt() + self.eps);
                *w = E::of(x);
            }
        }
        Ok(())
    }

    fn save(&self, params: &ParamStore<E>, ck: &mut Checkpoint<E>) {
        for (id, p) in params.iter().enumerate() {
            if p.kind.trainable() {
                let shape = p.value.shape().to_vec();
                ck.push(format!("optimizer.m.{}", p.name), tensor(&shape, self.m[id].clone()));
                ck.push(format!("optimizer.v.{}", p.name), tensor(&shape, self.v[id].clone()));
            }
        }
    }

    fn load(&mut self, params: &ParamStore<E>, ck: &Checkpoint<E>, step: u64) -> Result<()> {
        for (id, p) in params.iter().enumerate() {
            if !p.kind.trainable() {
                continue;
            }
            for (key, dst) in [("m", &mut self.m[id]), ("v", &mut self.v[id])] {
                let name = format!("optimizer.{key}.{}", p.name);
                let t = ck
                    .get(&name)
                    .ok_or_else(|| invalid(format!("checkpoint is missing `{name}`")))?;
                if t.numel() != dst.len() {
                    return Err(invalid(format!("`{name}` has the wrong size")));
                }
                dst.copy_from_slice(t.data());
            }
        }
        self.step = step;
        Ok(())
    }
}

fn tensor<E: Element>(shape: &[usize], data: Vec<E>) -> Tensor<E> {
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

/// One training example: a spectrogram excerpt and its targets.
#[derive(Clone, Debug)]
pub struct Sample {
    pub spec: Vec<f32>,
    pub targets: FrameTargets,
}

/// Stacks samples of equal length into a `[B, T, bins]` tensor.
pub fn stack<E: Element>(samples: &[Sample], bins: usize) -> Result<(Tensor<E>, Vec<FrameTargets>)> {
    let t = samples.first().map_or(0, |s| s.targets.frames());
    let mut data = Vec::with_capacity(samples.len() * t * bins);
    for s in samples {
        if s.targets.frames() != t || s.spec.len() != t * bins {
            return Err(invalid("samples in a batch must have equal length"));
        }
        data.extend(s.spec.iter().map(|&v| E::of(v as f64)));
    }
    let targets = samples.iter().map(|s| s.targets.clone()).collect();
    Ok((Tensor::new([samples.len(), t, bins], data)?, targets))
}

/// Summed gradients of `Σ_i (B_i / N) L_i` over micro-batches, where `L_i`
/// is the batch-mean loss of micro-batch `i` and `N` the total sample
/// count: the gradient of the mean loss over all samples.
pub struct Accumulated<E> {
    pub loss: f64,
    pub grads: Vec<Vec<E>>,
    pub stats: Vec<StatUpdate<E>>,
}

pub fn accumulate<E: Element>(
    model: &mut Model<E>,
    micro_batches: &[(Tensor<E>, Vec<FrameTargets>)],
    weights: PositiveWeight,
    kind: LossKind,
    mode: NormMode,
) -> Result<Accumulated<E>> {
    let total: usize = micro_batches.iter().map(|(_, t)| t.len()).sum();
    let mut grads: Vec<Vec<E>> = model.params().iter().map(|p| vec![E::zero(); p.value.numel()]).collect();
    let mut loss = 0.0;
    let mut stats = Vec::new();
    for (spec, targets) in micro_batches {
        let share = targets.len() as f64 / total as f64;
        let mut tape = Tape::new();
        let params = model.bind(&mut tape);
        let x = tape.constant(spec.clone());
        let out = model.forward(&mut tape, &params, x, mode)?;
        let l = batch_loss(&mut tape, out.logits, targets, weights, kind)?;
        let l = tape.scale(l, E::of(share));
        loss += tape.value(l).item().as_f64();
        tape.backward(l)?;
        for (acc, g) in grads.iter_mut().zip(model.gradients(&tape, &params)) {
            for (a, b) in acc.iter_mut().zip(g) {
                *a += b;
            }
        }
        if mode == NormMode::Train {
            model.apply_stats(out.stats.clone());
            stats.extend(out.stats);
        }
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("loss is {loss}")));
    }
    Ok(Accumulated { loss, grads, stats })
}

/// Per-epoch training record, one row of `metrics.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub step: u64,
    pub lr: f64,
    pub train_loss: f64,
    pub val_beat_f1: Option<f64>,
    pub val_downbeat_f1: Option<f64>,
}

/// Optimizer steps per epoch, from the expected number of excerpts.
pub fn steps_per_epoch(pieces: &[Piece], cfg: &TrainConfig) -> u64 {
    let samples: usize = pieces
        .iter()
        .map(|p| excerpt_count(p.seconds(), cfg.excerpt_alpha, cfg.excerpt_seconds))
        .sum();
    samples.div_ceil(cfg.samples_per_step()) as u64
}

/// The epoch loop, checkpoints and metrics history.
pub struct Trainer {
    pub model: Model<f32>,
    pub cfg: TrainConfig,
    pub optimizer: AdamW<f32>,
    pub weights: PositiveWeight,
    pub history: Vec<EpochMetrics>,
    /// Mean training loss of every optimizer step so far in this session.
    pub step_losses: Vec<f64>,
    epoch: usize,
    total_steps: u64,
    out_dir: Option<PathBuf>,
}

impl Trainer {
    pub fn new(model_cfg: ModelConfig, cfg: TrainConfig, train: &[Piece]) -> Result<Self> {
        cfg.validate()?;
        if train.is_empty() {
            return Err(invalid("training set is empty"));
        }
        let model = Model::new(model_cfg, cfg.seed)?;
        let weights = if cfg.positive_weights {
            compute_positive_weights(train.iter().map(|p| &p.targets))?
        } else {
            PositiveWeight::ONE
        };
        let optimizer = AdamW::new(model.params(), &cfg);
        let total_steps = steps_per_epoch(train, &cfg) * cfg.epochs as u64;
        Ok(Self {
            model,
            cfg,
            optimizer,
            weights,
            history: Vec::new(),
            step_losses: Vec::new(),
            epoch: 0,
            total_steps,
            out_dir: None,
        })
    }

    /// Directory receiving `epoch<N>.ckpt` files and `metrics.csv`.
    pub fn with_output(mut self, dir: impl Into<PathBuf>) -> Self {
        self.out_dir = Some(dir.into());
        self
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    pub fn total_steps(&self) -> u64 {
        self.total_steps
    }

    /// The excerpts of one epoch in training order. Depends only on the
    /// seed and the epoch number.
    pub fn epoch_plan(&self, train: &[Piece], epoch: usize) -> Vec<(usize, usize)> {
        let mut rng = epoch_rng(self.cfg.seed, epoch, 0);
        let mut plan = Vec::new();
        for (i, p) in train.iter().enumerate() {
            for start in sample_excerpts(p.seconds(), self.cfg.excerpt_alpha, self.cfg.excerpt_seconds, &mut rng) {
                plan.push((i, (start * FRAME_RATE).round() as usize));
            }
        }
        plan.shuffle(&mut rng);
        plan
    }

    fn draw(&self, piece: &Piece, start: usize, rng: &mut ChaCha8Rng) -> Sample {
        let len = self.cfg.excerpt_frames();
        let spec = piece.spec.window(start, len);
        let targets = piece.targets.window(start, len);
        if self.cfg.augment {
            let a = mask_augment(&spec, &targets, rng);
            Sample {
                spec: a.spec.values,
                targets: a.targets,
            }
        } else {
            Sample {
                spec: spec.values,
                targets,
            }
        }
    }

    /// Runs one epoch and returns its record.
    pub fn train_epoch(&mut self, train: &[Piece], valid: &[Piece]) -> Result<EpochMetrics> {
        let epoch = self.epoch + 1;
        let plan = self.epoch_plan(train, epoch);
        let mut aug_rng = epoch_rng(self.cfg.seed, epoch, 1);
        let bins = train[0].spec.bins;
        let mut loss_sum = 0.0;
        let mut lr = 0.0;
        for step_plan in plan.chunks(self.cfg.samples_per_step()) {
            let mut micro = Vec::new();
            for chunk in step_plan.chunks(self.cfg.batch_size) {
                let samples: Vec<Sample> = chunk
                    .iter()
                    .map(|&(i, start)| self.draw(&train[i], start, &mut aug_rng))
                    .collect();
                micro.push(stack::<f32>(&samples, bins)?);
            }
            let acc = accumulate(&mut self.model, &micro, self.weights, self.cfg.loss, NormMode::Train)?;
            let step = (self.optimizer.steps_taken() + 1).min(self.total_steps);
            lr = lr_at(step, self.total_steps, &self.cfg)?;
            self.optimizer.step(self.model.params_mut(), &acc.grads, lr)?;
            loss_sum += acc.loss * step_plan.len() as f64;
            self.step_losses.push(acc.loss);
        }
        let mut record = EpochMetrics {
            epoch,
            step: self.optimizer.steps_taken(),
            lr,
            train_loss: loss_sum / plan.len().max(1) as f64,
            val_beat_f1: None,
            val_downbeat_f1: None,
        };
        if !valid.is_empty() && self.cfg.validate_every > 0 && epoch % self.cfg.validate_every == 0 {
            let report = self.evaluate(valid)?;
            record.val_beat_f1 = report.macro_beat().map(|s| s.f1);
            record.val_downbeat_f1 = report.macro_downbeat().map(|s| s.f1);
        }
        log::info!(
            "epoch {epoch}: loss {:.4}, lr {:.2e}, step {}{}",
            record.train_loss,
            record.lr,
            record.step,
            record
                .val_beat_f1
                .map_or(String::new(), |f| format!(", val beat F1 {f:.3}"))
        );
        self.epoch = epoch;
        self.history.push(record.clone());
        if let Some(dir) = self.out_dir.clone() {
            let last = epoch == self.cfg.epochs;
            if last || (self.cfg.checkpoint_every > 0 && epoch % self.cfg.checkpoint_every == 0) {
                self.save(&dir.join(format!("epoch{epoch}.ckpt")))?;
            }
            self.write_history(&dir.join("metrics.csv"))?;
        }
        Ok(record)
    }

    /// Trains the remaining epochs.
    pub fn run(&mut self, train: &[Piece], valid: &[Piece]) -> Result<&[EpochMetrics]> {
        while self.epoch < self.cfg.epochs {
            self.train_epoch(train, valid)?;
        }
        Ok(&self.history)
    }

    pub fn tracker(&self) -> BeatTracker {
        BeatTracker::new(self.model.clone(), self.cfg.excerpt_seconds)
    }

    pub fn evaluate(&self, pieces: &[Piece]) -> Result<EvalReport> {
        let tracker = self.tracker();
        let mut report = EvalReport::default();
        for p in pieces {
            let preds = tracker.predict_spectrogram(&p.spec)?;
            report.push(crate::metrics::evaluate_piece(
                &p.id,
                &p.annotation.beats(),
                p.annotation.downbeats_if_known().as_deref(),
                &preds,
            ));
        }
        Ok(report)
    }

    pub fn checkpoint(&self) -> Result<Checkpoint<f32>> {
        let meta = serde_json::json!({
            "train": self.cfg,
            "epoch": self.epoch,
            "step": self.optimizer.steps_taken(),
            "total_steps": self.total_steps,
            "weights": self.weights,
            "history": self.history,
            "excerpt_seconds": self.cfg.excerpt_seconds,
        });
        let mut ck = self.model.to_checkpoint(meta)?;
        self.optimizer.save(self.model.params(), &mut ck);
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(self.checkpoint()?.save(path)?)
    }

    /// Restores a trainer from a checkpoint written by [`Trainer::save`].
    pub fn resume(ck: &Checkpoint<f32>) -> Result<Self> {
        let meta = &ck.meta;
        let field = |k: &str| {
            meta.get(k)
                .cloned()
                .ok_or_else(|| invalid(format!("checkpoint has no `{k}` record")))
        };
        let cfg: TrainConfig = serde_json::from_value(field("train")?)?;
        let model = Model::from_checkpoint(ck)?;
        let mut optimizer = AdamW::new(model.params(), &cfg);
        let step: u64 = serde_json::from_value(field("step")?)?;
        optimizer.load(model.params(), ck, step)?;
        Ok(Self {
            model,
            optimizer,
            weights: serde_json::from_value(field("weights")?)?,
            history: serde_json::from_value(field("history")?)?,
            step_losses: Vec::new(),
            epoch: serde_json::from_value(field("epoch")?)?,
            total_steps: serde_json::from_value(field("total_steps")?)?,
            cfg,
            out_dir: None,
        })
    }

    pub fn write_history(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(file_error(path))?;
        let mut w = csv::Writer::from_writer(file);
        for row in &self.history {
            w.serialize(row)?;
        }
        w.flush().map_err(file_error(path))?;
        Ok(())
    }

    /// Mean validation scores, for monitoring.
    pub fn validation_scores(&self, pieces: &[Piece]) -> Result<(Option<Scores>, Option<Scores>)> {
        let report = self.evaluate(pieces)?;
        Ok((report.macro_beat(), report.macro_downbeat()))
    }
}

/// Independent random stream per (seed, epoch, purpose).
fn epoch_rng(seed: u64, epoch: usize, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((epoch as u64) << 8) | purpose);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ParamKind;

    #[test]
    fn schedule_values() {
        let cfg = TrainConfig::default();
        assert!((lr_at(500, 10_000, &cfg).unwrap() - 4e-4).abs() < 1e-15);
        assert!((lr_at(1000, 10_000, &cfg).unwrap() - 8e-4).abs() < 1e-15);
        assert!(lr_at(10_000, 10_000, &cfg).unwrap().abs() < 1e-12);
        assert_eq!(lr_at(0, 10_000, &cfg).unwrap(), 0.0);
        assert!(lr_at(10_001, 10_000, &cfg).is_err());
        let before = lr_at(999, 10_000, &cfg).unwrap();
        let after = lr_at(1001, 10_000, &cfg).unwrap();
        assert!((before - 8e-4).abs() < 1e-6 && (after - 8e-4).abs() < 1e-6);
    }

    fn scalar_store(kind: ParamKind, value: f64) -> ParamStore<f64> {
        let mut model = Model::<f64>::new(
            ModelConfig {
                n_mels: 4,
                stem_channels: 2,
                head_dim: 2,
                frontend_heads: vec![],
                main_dim: 2,
                main_heads: 1,
                main_blocks: 0,
                ffn_mult: 1,
            },
            0,
        )
        .unwrap();
        let store = model.params_mut();
        for p in store.iter_mut() {
            p.kind = kind;
            p.value.data_mut().fill(value);
        }
        store.clone()
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut store = scalar_store(ParamKind::Bias, 1.0);
        let cfg = TrainConfig {
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        let mut opt = AdamW::new(&store, &cfg);
        let grads: Vec<Vec<f64>> = store.iter().map(|p| vec![1.0; p.value.numel()]).collect();
        opt.step(&mut store, &grads, 0.1).unwrap();
        for p in store.iter() {
            for &v in p.value.data() {
                assert!((v - 0.9).abs() < 1e-6, "{v}");
            }
        }
    }

    #[test]
    fn zero_gradient_without_decay_is_identity() {
        let mut store = scalar_store(ParamKind::Weight, 0.3);
        let cfg = TrainConfig {
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        let mut opt = AdamW::new(&store, &cfg);
        let grads: Vec<Vec<f64>> = store.iter().map(|p| vec![0.0; p.value.numel()]).collect();
        opt.step(&mut store, &grads, 0.1).unwrap();
        assert!(store.iter().all(|p| p.value.data().iter().all(|&v| v == 0.3)));
    }

    #[test]
    fn decay_only_on_weights() {
        for (kind, expect) in [
            (ParamKind::Weight, 0.3 * (1.0 - 0.1 * 0.01)),
            (ParamKind::Bias, 0.3),
            (ParamKind::Norm, 0.3),
        ] {
            let mut store = scalar_store(kind, 0.3);
            let mut opt = AdamW::new(&store, &TrainConfig::default());
            let grads: Vec<Vec<f64>> = store.iter().map(|p| vec![0.0; p.value.numel()]).collect();
            opt.step(&mut store, &grads, 0.1).unwrap();
            assert!(store.iter().all(|p| p.value.data().iter().all(|&v| v == expect)), "{kind:?}");
            assert_eq!(opt.last_decayed().is_empty(), kind != ParamKind::Weight);
        }
    }

    #[test]
    fn nan_gradient_aborts_untouched() {
        let mut store = scalar_store(ParamKind::Weight, 0.3);
        let mut opt = AdamW::new(&store, &TrainConfig::default());
        let mut grads: Vec<Vec<f64>> = store.iter().map(|p| vec![1.0; p.value.numel()]).collect();
        let last = grads.len() - 1;
        grads[last][0] = f64::NAN;
        let err = opt.step(&mut store, &grads, 0.1).unwrap_err().to_string();
        assert!(err.contains("gradient of"), "{err}");
        assert_eq!(opt.steps_taken(), 0);
        assert!(store.iter().all(|p| p.value.data().iter().all(|&v| v == 0.3)));
    }

    #[test]
    fn config_validation_names_key() {
        let cfg = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().unwrap_err().to_string().contains("batch_size"));
        TrainConfig::default().validate().unwrap();
    }
}
