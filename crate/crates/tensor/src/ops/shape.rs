use crate::element::Element;
use crate::error::{invalid_shape, mismatch, Result};
use crate::tape::{Adjoints, Op, Tape, Var};
use crate::tensor::{check_axis, contiguous_strides, numel, split_axis, Tensor};

impl<E: Element> Tape<E> {
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x);
        if numel(shape) != t.numel() {
            return Err(invalid_shape("reshape", t.shape(), format!("cannot reshape to {shape:?}")));
        }
        let data = t.data().to_vec();
        Ok(self.push(Tensor::from_parts(shape.to_vec(), data), Op::Reshape { x: x.0 }))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let rank = t.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(invalid_shape("permute", t.shape(), format!("bad permutation {perm:?}")));
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| t.shape()[p]).collect();
        let data = permute_data(t.data(), t.shape(), perm);
        Ok(self.push(
            Tensor::from_parts(out_shape, data),
            Op::Permute {
                x: x.0,
                perm: perm.to_vec(),
            },
        ))
    }

    /// Swaps two axes.
    pub fn transpose(&mut self, x: Var, a: usize, b: usize) -> Result<Var> {
        let rank = self.value(x).rank();
        check_axis(self.shape(x), a.max(b))?;
        let mut perm: Vec<usize> = (0..rank).collect();
        perm.swap(a, b);
        self.permute(x, &perm)
    }

    /// Joins tensors along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = self.value(*xs.first().ok_or_else(|| invalid_shape("concat", &[], "no inputs"))?);
        check_axis(first.shape(), axis)?;
        let mut out_shape = first.shape().to_vec();
        out_shape[axis] = 0;
        for &v in xs {
            let s = self.shape(v);
            let compatible = s.len() == out_shape.len()
                && s.iter().zip(&out_shape).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(mismatch("concat", first.shape(), s));
            }
            out_shape[axis] += s[axis];
        }
        let (outer, total, inner) = split_axis(&out_shape, axis);
        let mut data = vec![E::zero(); outer * total * inner];
        let mut offset = 0;
        for &v in xs {
            let t = self.value(v);
            let len = t.shape()[axis];
            for o in 0..outer {
                let src = &t.data()[o * len * inner..(o + 1) * len * inner];
                let dst = (o * total + offset) * inner;
                data[dst..dst + len * inner].copy_from_slice(src);
            }
            offset += len;
        }
        Ok(self.push(
            Tensor::from_parts(out_shape, data),
            Op::Concat {
                xs: xs.iter().map(|v| v.0).collect(),
                axis,
            },
        ))
    }

    /// `len` consecutive entries along `axis` starting at `start`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        check_axis(t.shape(), axis)?;
        if start + len > t.shape()[axis] {
            return Err(invalid_shape(
                "slice",
                t.shape(),
                format!("range {start}..{} exceeds axis {axis}", start + len),
            ));
        }
        let (outer, n, inner) = split_axis(t.shape(), axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            data.extend_from_slice(&t.data()[base..base + len * inner]);
        }
        let mut shape = t.shape().to_vec();
        shape[axis] = len;
        Ok(self.push(Tensor::from_parts(shape, data), Op::Slice { x: x.0, axis, start }))
    }
}

pub(crate) fn permute_data<E: Copy + Default>(data: &[E], shape: &[usize], perm: &[usize]) -> Vec<E> {
    let rank = shape.len();
    let in_strides = contiguous_strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let total = data.len();
    let mut out = Vec::with_capacity(total);
    if rank == 0 {
        out.extend_from_slice(data);
        return out;
    }
    let inner = out_shape[rank - 1];
    let inner_stride = src_strides[rank - 1];
    let mut idx = vec![0usize; rank - 1];
    let mut off = 0usize;
    let outer = if inner == 0 { 0 } else { total / inner };
    for _ in 0..outer {
        if inner_stride == 1 {
            out.extend_from_slice(&data[off..off + inner]);
        } else {
            out.extend((0..inner).map(|j| data[off + j * inner_stride]));
        }
        for d in (0..rank - 1).rev() {
            idx[d] += 1;
            off += src_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            off -= src_strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    out
}

pub(crate) fn backward<E: Element>(op: &Op<E>, out: &Tensor<E>, g: &[E], adj: &mut Adjoints<'_, E>) {
    match op {
        Op::Reshape { x } => {
            if let Some(gx) = adj.slot(*x) {
                gx.iter_mut().zip(g).for_each(|(d, &v)| *d += v);
            }
        }
        Op::Permute { x, perm } => {
            let mut inverse = vec![0; perm.len()];
            for (i, &p) in perm.iter().enumerate() {
                inverse[p] = i;
            }
            let back = permute_data(g, out.shape(), &inverse);
            if let Some(gx) = adj.slot(*x) {
                gx.iter_mut().zip(&back).for_each(|(d, &v)| *d += v);
            }
        }
        Op::Concat { xs, axis } => {
            let (outer, total, inner) = split_axis(out.shape(), *axis);
            let mut offset = 0;
            for &i in xs {
                let len = adj.value(i).shape()[*axis];
                if let Some(gx) = adj.slot(i) {
                    for o in 0..outer {
                        let src = (o * total + offset) * inner;
                        let dst = &mut gx[o * len * inner..(o + 1) * len * inner];
                        dst.iter_mut().zip(&g[src..src + len * inner]).for_each(|(d, &v)| *d += v);
                    }
                }
                offset += len;
            }
        }
        Op::Slice { x, axis, start } => {
            let (outer, n, inner) = split_axis(adj.value(*x).shape(), *axis);
            let len = out.shape()[*axis];
            if let Some(gx) = adj.slot(*x) {
                for o in 0..outer {
                    let base = (o * n + start) * inner;
                    let src = &g[o * len * inner..(o + 1) * len * inner];
                    gx[base..base + len * inner].iter_mut().zip(src).for_each(|(d, &v)| *d += v);
                }
            }
        }
        _ => unreachable!("not a shape op"),
    }
}
