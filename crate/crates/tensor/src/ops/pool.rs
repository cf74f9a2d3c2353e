use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::tape::{Adjoints, Op, Tape, Var};
use crate::tensor::{check_axis, split_axis, Tensor};

impl<E: Element> Tape<E> {
    /// Sliding maximum along `axis` with an odd window `k`, stride 1.
    ///
    /// The window is centered and clipped at the sequence edges, so the
    /// output has the input's shape. Gradients route to the first maximal
    /// position of each window.
    pub fn max_pool1d(&mut self, x: Var, axis: usize, k: usize) -> Result<Var> {
        if k % 2 == 0 {
            return Err(TensorError::Config(format!("max_pool1d window must be odd, got {k}")));
        }
        let t = self.value(x);
        check_axis(t.shape(), axis)?;
        let (outer, n, inner) = split_axis(t.shape(), axis);
        let (data, argmax) = pool(t.data(), outer, n, inner, k / 2);
        let shape = t.shape().to_vec();
        Ok(self.push(Tensor::from_parts(shape, data), Op::MaxPool1d { x: x.0, argmax }))
    }
}

/// Centered running maximum; returns values and flat source indices.
pub(crate) fn pool<E: Element>(d: &[E], outer: usize, n: usize, inner: usize, half: usize) -> (Vec<E>, Vec<u32>) {
    let mut data = vec![E::zero(); d.len()];
    let mut argmax = vec![0u32; d.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * n + j) * inner + i;
            for j in 0..n {
                let lo = j.saturating_sub(half);
                let hi = (j + half).min(n - 1);
                let mut best = at(lo);
                for s in lo + 1..=hi {
                    if d[at(s)] > d[best] {
                        best = at(s);
                    }
                }
                data[at(j)] = d[best];
                argmax[at(j)] = best as u32;
            }
        }
    }
    (data, argmax)
}

pub(crate) fn backward<E: Element>(op: &Op<E>, g: &[E], adj: &mut Adjoints<'_, E>) {
    let Op::MaxPool1d { x, argmax } = op else {
        unreachable!("not a pool")
    };
    if let Some(gx) = adj.slot(*x) {
        for (&src, &v) in argmax.iter().zip(g) {
            gx[src as usize] += v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(values: &[f64], k: usize) -> Vec<f64> {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new([values.len()], values.to_vec()).unwrap());
        let y = tape.max_pool1d(x, 0, k).unwrap();
        tape.data(y).to_vec()
    }

    #[test]
    fn window_seven_spreads_peak() {
        assert_eq!(run(&[0., 0., 0., 1., 0., 0., 0.], 7), vec![1.0; 7]);
    }

    #[test]
    fn window_one_is_identity() {
        let v = [0.3, -1.0, 2.0, 0.5];
        assert_eq!(run(&v, 1), v.to_vec());
    }

    #[test]
    fn window_thirteen_covers_six_each_side() {
        let mut v = vec![0.0; 13];
        v[6] = 1.0;
        assert_eq!(run(&v, 13), vec![1.0; 13]);
        let mut w = vec![0.0; 14];
        w[6] = 1.0;
        assert_eq!(run(&w, 13)[13], 0.0);
    }

    #[test]
    fn even_window_rejected() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros([4]));
        assert!(matches!(tape.max_pool1d(x, 0, 4), Err(TensorError::Config(_))));
    }

    #[test]
    fn ties_route_to_first_in_scan_order() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new([3], vec![1., 1., 0.]).unwrap().with_requires_grad(true));
        let y = tape.max_pool1d(x, 0, 3).unwrap();
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        // windows [0,1], [0,2], [1,2] pick indices 0, 0, 1
        assert_eq!(tape.grad(x).unwrap(), &[2., 1., 0.]);
    }

    #[test]
    fn pools_along_inner_axis() {
        let mut tape = Tape::<f64>::new();
        // [T=3, 2]: column 0 peaks at t=0, column 1 at t=2
        let x = tape.constant(Tensor::new([3, 2], vec![5., 0., 0., 0., 0., 7.]).unwrap());
        let y = tape.max_pool1d(x, 0, 3).unwrap();
        assert_eq!(tape.data(y), &[5., 0., 5., 7., 0., 7.]);
    }
}
