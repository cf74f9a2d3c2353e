use crate::element::Element;
use crate::error::{invalid_shape, mismatch, Result};
use crate::tape::{Adjoints, Op, Tape, Var};
use crate::tensor::{check_axis, split_axis, Tensor};

/// Whether normalization layers use batch statistics or running estimates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchNormConfig {
    pub momentum: f64,
    pub eps: f64,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        Self {
            momentum: 0.1,
            eps: 1e-5,
        }
    }
}

/// Running mean/variance buffers of a batch-norm layer, one entry per feature.
pub struct RunningStats<'a, E> {
    pub mean: &'a mut [E],
    pub var: &'a mut [E],
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

impl<E: Element> Tape<E> {
    /// Batch normalization with one statistic per index of `axis`, reduced
    /// over every other axis.
    ///
    /// In [`NormMode::Train`] batch statistics (population variance) are used
    /// and the running buffers are updated with `momentum`; in
    /// [`NormMode::Eval`] the running buffers are used and left unchanged.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        x: Var,
        scale: Var,
        shift: Var,
        axis: usize,
        running: RunningStats<'_, E>,
        mode: NormMode,
        cfg: BatchNormConfig,
    ) -> Result<Var> {
        let t = self.value(x);
        check_axis(t.shape(), axis)?;
        let (outer, c, inner) = split_axis(t.shape(), axis);
        for p in [scale, shift] {
            if self.shape(p) != [c] {
                return Err(mismatch("batch_norm", t.shape(), self.shape(p)));
            }
        }
        if running.mean.len() != c || running.var.len() != c {
            return Err(mismatch("batch_norm", t.shape(), &[running.mean.len()]));
        }
        let count = outer * inner;
        if count == 0 {
            return Err(invalid_shape("batch_norm", t.shape(), "no elements to normalize over"));
        }
        let data = t.data();
        let eps = E::of(cfg.eps);
        let (mean, var) = match mode {
            NormMode::Train => {
                let mut mean = vec![E::zero(); c];
                let mut var = vec![E::zero(); c];
                for o in 0..outer {
                    for (ch, m) in mean.iter_mut().enumerate() {
                        let base = (o * c + ch) * inner;
                        *m += data[base..base + inner].iter().copied().sum::<E>();
                    }
                }
                let inv_n = E::one() / E::of(count as f64);
                mean.iter_mut().for_each(|m| *m *= inv_n);
                for o in 0..outer {
                    for ch in 0..c {
                        let base = (o * c + ch) * inner;
                        let mu = mean[ch];
                        var[ch] += data[base..base + inner].iter().map(|&v| (v - mu) * (v - mu)).sum::<E>();
                    }
                }
                var.iter_mut().for_each(|v| *v *= inv_n);
                let m = E::of(cfg.momentum);
                let unbias = if count > 1 {
                    E::of(count as f64 / (count - 1) as f64)
                } else {
                    E::one()
                };
                for ch in 0..c {
                    running.mean[ch] = (E::one() - m) * running.mean[ch] + m * mean[ch];
                    running.var[ch] = (E::one() - m) * running.var[ch] + m * var[ch] * unbias;
                }
                (mean, var)
            }
            NormMode::Eval => (running.mean.to_vec(), running.var.to_vec()),
        };
        let inv_std: Vec<E> = var.iter().map(|&v| E::one() / (v + eps).sqrt()).collect();
        let (gamma, beta) = (self.data(scale), self.data(shift));
        let mut xhat = vec![E::zero(); data.len()];
        let mut out = vec![E::zero(); data.len()];
        for o in 0..outer {
            for ch in 0..c {
                let base = (o * c + ch) * inner;
                for i in base..base + inner {
                    let h = (data[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = h;
                    out[i] = gamma[ch] * h + beta[ch];
                }
            }
        }
        let shape = t.shape().to_vec();
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::BatchNorm {
                x: x.0,
                scale: scale.0,
                shift: shift.0,
                axis,
                train: mode == NormMode::Train,
                xhat,
                inv_std,
            },
        ))
    }

    /// Layer normalization over the last axis with learned scale and shift.
    pub fn layer_norm(&mut self, x: Var, scale: Var, shift: Var) -> Result<Var> {
        let t = self.value(x);
        let d = *t.shape().last().ok_or_else(|| invalid_shape("layer_norm", t.shape(), "scalar input"))?;
        for p in [scale, shift] {
            if self.shape(p) != [d] {
                return Err(mismatch("layer_norm", t.shape(), self.shape(p)));
            }
        }
        if d == 0 {
            return Err(invalid_shape("layer_norm", t.shape(), "empty feature axis"));
        }
        let (gamma, beta) = (self.data(scale), self.data(shift));
        let data = t.data();
        let rows = data.len() / d;
        let eps = E::of(LAYER_NORM_EPS);
        let inv_d = E::one() / E::of(d as f64);
        let mut xhat = vec![E::zero(); data.len()];
        let mut out = vec![E::zero(); data.len()];
        let mut inv_std = vec![E::zero(); rows];
        for r in 0..rows {
            let row = &data[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<E>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<E>() * inv_d;
            let is = E::one() / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat[r * d + j] = h;
                out[r * d + j] = gamma[j] * h + beta[j];
            }
        }
        let shape = t.shape().to_vec();
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::LayerNorm {
                x: x.0,
                scale: scale.0,
                shift: shift.0,
                xhat,
                inv_std,
            },
        ))
    }
}

pub(crate) fn backward<E: Element>(op: &Op<E>, out: &Tensor<E>, g: &[E], adj: &mut Adjoints<'_, E>) {
    match op {
        Op::BatchNorm {
            x,
            scale,
            shift,
            axis,
            train,
            xhat,
            inv_std,
        } => {
            let (outer, c, inner) = split_axis(out.shape(), *axis);
            let gamma = adj.value(*scale).data();
            let mut sum_g = vec![E::zero(); c];
            let mut sum_gx = vec![E::zero(); c];
            for o in 0..outer {
                for ch in 0..c {
                    let base = (o * c + ch) * inner;
                    for i in base..base + inner {
                        sum_g[ch] += g[i];
                        sum_gx[ch] += g[i] * xhat[i];
                    }
                }
            }
            if let Some(gs) = adj.slot(*scale) {
                gs.iter_mut().zip(&sum_gx).for_each(|(d, &v)| *d += v);
            }
            if let Some(gb) = adj.slot(*shift) {
                gb.iter_mut().zip(&sum_g).for_each(|(d, &v)| *d += v);
            }
            if let Some(gx) = adj.slot(*x) {
                let inv_n = E::one() / E::of((outer * inner) as f64);
                for o in 0..outer {
                    for ch in 0..c {
                        let base = (o * c + ch) * inner;
                        let k = gamma[ch] * inv_std[ch];
                        for i in base..base + inner {
                            gx[i] += if *train {
                                k * (g[i] - inv_n * sum_g[ch] - xhat[i] * inv_n * sum_gx[ch])
                            } else {
                                k * g[i]
                            };
                        }
                    }
                }
            }
        }
        Op::LayerNorm {
            x,
            scale,
            shift,
            xhat,
            inv_std,
        } => {
            let d = *out.shape().last().expect("rank >= 1");
            let rows = g.len() / d;
            let gamma = adj.value(*scale).data();
            if let Some(gs) = adj.slot(*scale) {
                for r in 0..rows {
                    for j in 0..d {
                        gs[j] += g[r * d + j] * xhat[r * d + j];
                    }
                }
            }
            if let Some(gb) = adj.slot(*shift) {
                for r in 0..rows {
                    for j in 0..d {
                        gb[j] += g[r * d + j];
                    }
                }
            }
            if let Some(gx) = adj.slot(*x) {
                let inv_d = E::one() / E::of(d as f64);
                for r in 0..rows {
                    let (mut s1, mut s2) = (E::zero(), E::zero());
                    for j in 0..d {
                        let dh = g[r * d + j] * gamma[j];
                        s1 += dh;
                        s2 += dh * xhat[r * d + j];
                    }
                    for j in 0..d {
                        let i = r * d + j;
                        let dh = g[i] * gamma[j];
                        gx[i] += inv_std[r] * (dh - inv_d * s1 - xhat[i] * inv_d * s2);
                    }
                }
            }
        }
        _ => unreachable!("not a norm"),
    }
}
