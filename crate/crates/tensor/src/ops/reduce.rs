use crate::element::Element;
use crate::error::Result;
use crate::tape::{Adjoints, Op, Tape, Var};
use crate::tensor::{check_axis, split_axis, Tensor};

impl<E: Element> Tape<E> {
    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum { x: x.0 })
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel();
        let s = self.sum(x);
        self.scale(s, E::one() / E::of(n as f64))
    }

    /// Sum over `axis`, which is removed from the shape.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        check_axis(t.shape(), axis)?;
        let (outer, n, inner) = split_axis(t.shape(), axis);
        let mut data = vec![E::zero(); outer * inner];
        for o in 0..outer {
            for j in 0..n {
                let row = &t.data()[(o * n + j) * inner..(o * n + j + 1) * inner];
                data[o * inner..(o + 1) * inner]
                    .iter_mut()
                    .zip(row)
                    .for_each(|(d, &v)| *d += v);
            }
        }
        let mut shape = t.shape().to_vec();
        shape.remove(axis);
        Ok(self.push(Tensor::from_parts(shape, data), Op::SumAxis { x: x.0, axis }))
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        check_axis(self.shape(x), axis)?;
        let n = self.shape(x)[axis];
        let s = self.sum_axis(x, axis)?;
        Ok(self.scale(s, E::one() / E::of(n as f64)))
    }

    /// Maximum over `axis`; the gradient goes to the first maximal entry.
    pub fn max_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        check_axis(t.shape(), axis)?;
        let (outer, n, inner) = split_axis(t.shape(), axis);
        let d = t.data();
        let mut data = Vec::with_capacity(outer * inner);
        let mut argmax = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let mut best = o * n * inner + i;
                for j in 1..n {
                    let idx = (o * n + j) * inner + i;
                    if d[idx] > d[best] {
                        best = idx;
                    }
                }
                data.push(d[best]);
                argmax.push(best);
            }
        }
        let mut shape = t.shape().to_vec();
        shape.remove(axis);
        Ok(self.push(
            Tensor::from_parts(shape, data),
            Op::MaxAxis { x: x.0, argmax },
        ))
    }

    /// Softmax normalized along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        check_axis(t.shape(), axis)?;
        let (outer, n, inner) = split_axis(t.shape(), axis);
        let mut data = t.data().to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * n + j) * inner + i;
                let max = (0..n).map(|j| data[at(j)]).fold(E::neg_infinity(), E::max);
                let mut total = E::zero();
                for j in 0..n {
                    let e = (data[at(j)] - max).exp();
                    data[at(j)] = e;
                    total += e;
                }
                for j in 0..n {
                    data[at(j)] /= total;
                }
            }
        }
        let shape = t.shape().to_vec();
        Ok(self.push(Tensor::from_parts(shape, data), Op::Softmax { x: x.0, axis }))
    }
}

pub(crate) fn backward<E: Element>(op: &Op<E>, out: &Tensor<E>, g: &[E], adj: &mut Adjoints<'_, E>) {
    match op {
        Op::Sum { x } => {
            if let Some(gx) = adj.slot(*x) {
                let v = g[0];
                gx.iter_mut().for_each(|d| *d += v);
            }
        }
        Op::SumAxis { x, axis } => {
            let (outer, n, inner) = split_axis(adj.value(*x).shape(), *axis);
            if let Some(gx) = adj.slot(*x) {
                for o in 0..outer {
                    let src = &g[o * inner..(o + 1) * inner];
                    for j in 0..n {
                        let base = (o * n + j) * inner;
                        gx[base..base + inner].iter_mut().zip(src).for_each(|(d, &v)| *d += v);
                    }
                }
            }
        }
        Op::MaxAxis { x, argmax, .. } => {
            if let Some(gx) = adj.slot(*x) {
                for (&src, &v) in argmax.iter().zip(g) {
                    gx[src] += v;
                }
            }
        }
        Op::Softmax { x, axis } => {
            let (outer, n, inner) = split_axis(out.shape(), *axis);
            let y = out.data();
            if let Some(gx) = adj.slot(*x) {
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| (o * n + j) * inner + i;
                        let dot: E = (0..n).map(|j| g[at(j)] * y[at(j)]).sum();
                        for j in 0..n {
                            gx[at(j)] += y[at(j)] * (g[at(j)] - dot);
                        }
                    }
                }
            }
        }
        _ => unreachable!("not a reduction"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_symmetric_input() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros([2]));
        let y = tape.softmax(x, 0).unwrap();
        assert_eq!(tape.data(y), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_invalid_axis() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros([2, 2]));
        assert!(tape.softmax(x, 2).is_err());
    }

    #[test]
    fn axis_reductions() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::new([2, 3], vec![1., 5., 3., 4., 2., 6.]).unwrap());
        let s = tape.sum_axis(x, 0).unwrap();
        assert_eq!(tape.data(s), &[5., 7., 9.]);
        let m = tape.mean_axis(x, 1).unwrap();
        assert_eq!(tape.data(m), &[3., 4.]);
        let mx = tape.max_axis(x, 1).unwrap();
        assert_eq!(tape.data(mx), &[5., 6.]);
    }

    #[test]
    fn max_ties_route_to_first() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new([3], vec![2., 2., 1.]).unwrap().with_requires_grad(true));
        let m = tape.max_axis(x, 0).unwrap();
        tape.backward(m).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1., 0., 0.]);
    }
}
