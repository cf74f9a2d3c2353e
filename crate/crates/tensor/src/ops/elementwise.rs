use crate::element::Element;
use crate::error::{mismatch, Result};
use crate::tape::{Adjoints, Op, Tape, Unary, Var};
use crate::tensor::{broadcast_shapes, broadcast_strides, Tensor};

/// Calls `f(out_index, a_index, b_index)` for every element of the broadcast
/// output.
pub(crate) fn broadcast_for_each(
    out_shape: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let rank = out_shape.len();
    if rank == 0 {
        f(0, 0, 0);
        return;
    }
    let inner = out_shape[rank - 1];
    let (ia, ib) = (sa[rank - 1], sb[rank - 1]);
    let outer: usize = out_shape[..rank - 1].iter().product();
    let mut idx = vec![0usize; rank - 1];
    let (mut oa, mut ob) = (0usize, 0usize);
    for o in 0..outer {
        let base = o * inner;
        for j in 0..inner {
            f(base + j, oa + j * ia, ob + j * ib);
        }
        for d in (0..rank - 1).rev() {
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < out_shape[d] {
                break;
            }
            oa -= sa[d] * out_shape[d];
            ob -= sb[d] * out_shape[d];
            idx[d] = 0;
        }
    }
}

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
}

impl<E: Element> Tape<E> {
    /// Elementwise `a + b` with broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Add)
    }

    /// Elementwise `a - b` with broadcasting.
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Sub)
    }

    /// Elementwise `a * b` with broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Mul)
    }

    fn binary(&mut self, a: Var, b: Var, kind: Binary) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let name = match kind {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
        };
        let out_shape =
            broadcast_shapes(ta.shape(), tb.shape()).ok_or_else(|| mismatch(name, ta.shape(), tb.shape()))?;
        let (da, db) = (ta.data(), tb.data());
        let apply = |x: E, y: E| match kind {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
        };
        let data: Vec<E> = if ta.shape() == tb.shape() {
            da.iter().zip(db).map(|(&x, &y)| apply(x, y)).collect()
        } else if ta.shape() == out_shape.as_slice() && tb.shape() == &out_shape[out_shape.len() - tb.rank()..] {
            // trailing broadcast, e.g. bias over rows
            let nb = db.len();
            da.iter().enumerate().map(|(i, &x)| apply(x, db[i % nb])).collect()
        } else {
            let sa = broadcast_strides(ta.shape(), &out_shape);
            let sb = broadcast_strides(tb.shape(), &out_shape);
            let mut out = vec![E::zero(); out_shape.iter().product()];
            broadcast_for_each(&out_shape, &sa, &sb, |o, i, j| out[o] = apply(da[i], db[j]));
            out
        };
        let op = match kind {
            Binary::Add => Op::Add { a: a.0, b: b.0 },
            Binary::Sub => Op::Sub { a: a.0, b: b.0 },
            Binary::Mul => Op::Mul { a: a.0, b: b.0 },
        };
        Ok(self.push(Tensor::from_parts(out_shape, data), op))
    }

    /// `c * x`.
    pub fn scale(&mut self, x: Var, c: E) -> Var {
        let data = self.data(x).iter().map(|&v| v * c).collect();
        let shape = self.shape(x).to_vec();
        self.push(Tensor::from_parts(shape, data), Op::Scale { x: x.0, c })
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -E::one())
    }

    /// `x + c`.
    pub fn add_scalar(&mut self, x: Var, c: E) -> Var {
        let data = self.data(x).iter().map(|&v| v + c).collect();
        let shape = self.shape(x).to_vec();
        self.push(Tensor::from_parts(shape, data), Op::Shift { x: x.0 })
    }

    /// Exact GeLU, `x * Phi(x)` with the Gaussian CDF computed via `erf`.
    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Gelu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Sigmoid)
    }

    /// `ln(sigmoid(x))`, stable for large `|x|`.
    pub fn log_sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Unary::LogSigmoid)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Exp)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Tanh)
    }

    fn unary(&mut self, x: Var, f: Unary) -> Var {
        let data = self.data(x).iter().map(|&v| unary_forward(f, v)).collect();
        let shape = self.shape(x).to_vec();
        self.push(Tensor::from_parts(shape, data), Op::Unary { x: x.0, f })
    }

    /// Replaces elements where `keep` is false by `value`; those positions
    /// pass no gradient.
    pub fn masked_fill(&mut self, x: Var, keep: &[bool], value: E) -> Result<Var> {
        let t = self.value(x);
        if keep.len() != t.numel() {
            return Err(mismatch("masked_fill", t.shape(), &[keep.len()]));
        }
        let data = t
            .data()
            .iter()
            .zip(keep)
            .map(|(&v, &k)| if k { v } else { value })
            .collect();
        let shape = t.shape().to_vec();
        Ok(self.push(
            Tensor::from_parts(shape, data),
            Op::MaskedFill {
                x: x.0,
                keep: keep.to_vec(),
            },
        ))
    }
}

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[inline]
pub(crate) fn sigmoid<E: Element>(x: E) -> E {
    if x >= E::zero() {
        E::one() / (E::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (E::one() + e)
    }
}

#[inline]
pub(crate) fn log_sigmoid<E: Element>(x: E) -> E {
    x.min(E::zero()) - (-x.abs()).exp().ln_1p()
}

#[inline]
fn unary_forward<E: Element>(f: Unary, x: E) -> E {
    match f {
        Unary::Gelu => E::of(0.5) * x * (E::one() + (x / E::of(SQRT_2)).erf()),
        Unary::Sigmoid => sigmoid(x),
        Unary::LogSigmoid => log_sigmoid(x),
        Unary::Exp => x.exp(),
        Unary::Tanh => x.tanh(),
    }
}

#[inline]
fn unary_derivative<E: Element>(f: Unary, x: E, y: E) -> E {
    match f {
        Unary::Gelu => {
            let cdf = E::of(0.5) * (E::one() + (x / E::of(SQRT_2)).erf());
            let pdf = E::of(INV_SQRT_2PI) * (E::of(-0.5) * x * x).exp();
            cdf + x * pdf
        }
        Unary::Sigmoid => y * (E::one() - y),
        Unary::LogSigmoid => sigmoid(-x),
        Unary::Exp => y,
        Unary::Tanh => E::one() - y * y,
    }
}

pub(crate) fn backward<E: Element>(op: &Op<E>, out: &Tensor<E>, g: &[E], adj: &mut Adjoints<'_, E>) {
    match *op {
        Op::Add { a, b } => {
            reduce_into(adj, a, out.shape(), g, |v| v);
            reduce_into(adj, b, out.shape(), g, |v| v);
        }
        Op::Sub { a, b } => {
            reduce_into(adj, a, out.shape(), g, |v| v);
            reduce_into(adj, b, out.shape(), g, |v| -v);
        }
        Op::Mul { a, b } => {
            let (ta, tb) = (adj.value(a), adj.value(b));
            mul_grad(adj, a, ta, tb, out.shape(), g);
            mul_grad(adj, b, tb, ta, out.shape(), g);
        }
        Op::Scale { x, c } => {
            if let Some(gx) = adj.slot(x) {
                gx.iter_mut().zip(g).for_each(|(d, &v)| *d += c * v);
            }
        }
        Op::Shift { x } => {
            if let Some(gx) = adj.slot(x) {
                gx.iter_mut().zip(g).for_each(|(d, &v)| *d += v);
            }
        }
        Op::Unary { x, f } => {
            let input = adj.value(x).data();
            if let Some(gx) = adj.slot(x) {
                for (((d, &gv), &xv), &yv) in gx.iter_mut().zip(g).zip(input).zip(out.data()) {
                    *d += gv * unary_derivative(f, xv, yv);
                }
            }
        }
        Op::MaskedFill { x, ref keep } => {
            if let Some(gx) = adj.slot(x) {
                for ((d, &gv), &k) in gx.iter_mut().zip(g).zip(keep) {
                    if k {
                        *d += gv;
                    }
                }
            }
        }
        _ => unreachable!("not an elementwise op"),
    }
}

/// Accumulates `map(g)` into input `i`, summing over broadcast axes.
fn reduce_into<E: Element>(adj: &mut Adjoints<'_, E>, i: usize, out_shape: &[usize], g: &[E], map: impl Fn(E) -> E) {
    let in_shape = adj.value(i).shape().to_vec();
    let Some(gi) = adj.slot(i) else { return };
    if in_shape == out_shape {
        gi.iter_mut().zip(g).for_each(|(d, &v)| *d += map(v));
        return;
    }
    let si = broadcast_strides(&in_shape, out_shape);
    broadcast_for_each(out_shape, &si, &si, |o, j, _| gi[j] += map(g[o]));
}

fn mul_grad<E: Element>(
    adj: &mut Adjoints<'_, E>,
    i: usize,
    this: &Tensor<E>,
    other: &Tensor<E>,
    out_shape: &[usize],
    g: &[E],
) {
    let Some(gi) = adj.slot(i) else { return };
    if this.shape() == out_shape && other.shape() == out_shape {
        for ((d, &gv), &ov) in gi.iter_mut().zip(g).zip(other.data()) {
            *d += gv * ov;
        }
        return;
    }
    let st = broadcast_strides(this.shape(), out_shape);
    let so = broadcast_strides(other.shape(), out_shape);
    let od = other.data();
    broadcast_for_each(out_shape, &st, &so, |o, j, k| gi[j] += g[o] * od[k]);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_sigmoid_fixed_points() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::scalar(0.0));
        let g = tape.gelu(x);
        let s = tape.sigmoid(x);
        assert_eq!(tape.value(g).item(), 0.0);
        assert_eq!(tape.value(s).item(), 0.5);
    }

    #[test]
    fn log_sigmoid_is_stable() {
        assert!((log_sigmoid(-1000.0f64) + 1000.0).abs() < 1e-12);
        assert!(log_sigmoid(1000.0f64).abs() < 1e-12);
        assert!((log_sigmoid(0.0f64) + std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn bias_broadcast_and_reduction() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new([2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap().with_requires_grad(true));
        let b = tape.leaf(Tensor::new([3], vec![10., 20., 30.]).unwrap().with_requires_grad(true));
        let y = tape.add(x, b).unwrap();
        assert_eq!(tape.data(y), &[11., 22., 33., 14., 25., 36.]);
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(b).unwrap(), &[2., 2., 2.]);
    }

    #[test]
    fn general_broadcast_mul() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::new([2, 1], vec![1., 2.]).unwrap().with_requires_grad(true));
        let b = tape.leaf(Tensor::new([1, 3], vec![1., 10., 100.]).unwrap().with_requires_grad(true));
        let y = tape.mul(a, b).unwrap();
        assert_eq!(tape.shape(y), &[2, 3]);
        assert_eq!(tape.data(y), &[1., 10., 100., 2., 20., 200.]);
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(a).unwrap(), &[111., 111.]);
        assert_eq!(tape.grad(b).unwrap(), &[3., 3., 3.]);
    }

    #[test]
    fn incompatible_shapes_error() {
        let mut tape = Tape::<f32>::new();
        let a = tape.constant(Tensor::zeros([2]));
        let b = tape.constant(Tensor::zeros([3]));
        assert!(tape.add(a, b).is_err());
    }
}
