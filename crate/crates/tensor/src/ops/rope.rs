use crate::element::Element;
use crate::error::{invalid_shape, Result};
use crate::tape::{Adjoints, Op, Tape, Var};
use crate::tensor::Tensor;

pub const ROPE_BASE: f64 = 10_000.0;

/// Cosine and sine tables, `[len, dim / 2]` each.
fn tables<E: Element>(len: usize, dim: usize, base: f64) -> (Vec<E>, Vec<E>) {
    let half = dim / 2;
    let mut cos = Vec::with_capacity(len * half);
    let mut sin = Vec::with_capacity(len * half);
    for pos in 0..len {
        for i in 0..half {
            let theta = pos as f64 * base.powf(-2.0 * i as f64 / dim as f64);
            cos.push(E::of(theta.cos()));
            sin.push(E::of(theta.sin()));
        }
    }
    (cos, sin)
}

/// Rotates each pair `(x[2i], x[2i+1])` by `sign * angle(pos, i)`.
fn rotate<E: Element>(src: &[E], dst: &mut [E], len: usize, dim: usize, base: f64, sign: E, accumulate: bool) {
    let (cos, sin) = tables::<E>(len, dim, base);
    let half = dim / 2;
    for (row_idx, (s, d)) in src.chunks_exact(dim).zip(dst.chunks_exact_mut(dim)).enumerate() {
        let pos = row_idx % len;
        for i in 0..half {
            let (c, sn) = (cos[pos * half + i], sign * sin[pos * half + i]);
            let (a, b) = (s[2 * i], s[2 * i + 1]);
            let (ra, rb) = (a * c - b * sn, a * sn + b * c);
            if accumulate {
                d[2 * i] += ra;
                d[2 * i + 1] += rb;
            } else {
                d[2 * i] = ra;
                d[2 * i + 1] = rb;
            }
        }
    }
}

impl<E: Element> Tape<E> {
    /// Rotary position embedding on `[..., L, D]`: position is the index
    /// along the second-to-last axis, features rotate in adjacent pairs.
    pub fn rope(&mut self, x: Var) -> Result<Var> {
        self.rope_with_base(x, ROPE_BASE)
    }

    pub fn rope_with_base(&mut self, x: Var, base: f64) -> Result<Var> {
        let t = self.value(x);
        let shape = t.shape();
        if shape.len() < 2 || shape[shape.len() - 1] % 2 != 0 {
            return Err(invalid_shape("rope", shape, "expected [..., L, D] with even D"));
        }
        let (len, dim) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        let mut out = vec![E::zero(); t.numel()];
        rotate(t.data(), &mut out, len, dim, base, E::one(), false);
        let shape = shape.to_vec();
        Ok(self.push(Tensor::from_parts(shape, out), Op::Rope { x: x.0, base }))
    }
}

pub(crate) fn backward<E: Element>(op: &Op<E>, out: &Tensor<E>, g: &[E], adj: &mut Adjoints<'_, E>) {
    let Op::Rope { x, base } = *op else {
        unreachable!("not a rope")
    };
    let shape = out.shape();
    let (len, dim) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    if let Some(gx) = adj.slot(x) {
        rotate(g, gx, len, dim, base, -E::one(), true);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn position_zero_unchanged() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_fn([1, 4], |i| i as f64 + 1.0));
        let y = tape.rope(x).unwrap();
        assert_eq!(tape.data(y), tape.data(x));
    }

    #[test]
    fn preserves_pair_norms() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_fn([5, 6], |i| (i as f64 * 0.37).sin()));
        let y = tape.rope(x).unwrap();
        for (a, b) in tape.data(x).chunks(2).zip(tape.data(y).chunks(2)) {
            let na = a[0] * a[0] + a[1] * a[1];
            let nb = b[0] * b[0] + b[1] * b[1];
            assert!((na - nb).abs() < 1e-12);
        }
    }

    #[test]
    fn dot_products_depend_on_offset_only() {
        let mut tape = Tape::<f64>::new();
        let len = 12;
        // same content vector at every position
        let q = tape.constant(Tensor::from_fn([len, 8], |i| ((i % 8) as f64 * 0.9).cos()));
        let k = tape.constant(Tensor::from_fn([len, 8], |i| ((i % 8) as f64 * 0.4).sin()));
        let (rq, rk) = (tape.rope(q).unwrap(), tape.rope(k).unwrap());
        let scores = tape.matmul_t(rq, rk, false, true).unwrap();
        let s = tape.value(scores);
        for m in 0..len - 3 {
            for n in 0..len - 3 {
                assert!((s.at(&[m, n]) - s.at(&[m + 3, n + 3])).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn odd_dim_rejected() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros([3, 5]));
        assert!(tape.rope(x).is_err());
    }
}
