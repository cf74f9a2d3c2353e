use crate::element::Element;
use crate::error::{invalid_shape, mismatch, Result};
use crate::ops::elementwise::broadcast_for_each;
use crate::tape::{Adjoints, Op, Tape, Var};
use crate::tensor::{broadcast_shapes, broadcast_strides, Tensor};

/// Row/column strides of a stored `rows x cols` matrix, optionally read transposed.
fn operand(rows: usize, cols: usize, transposed: bool) -> (usize, usize, isize, isize) {
    if transposed {
        (cols, rows, 1, cols as isize)
    } else {
        (rows, cols, cols as isize, 1)
    }
}

struct Plan {
    m: usize,
    k: usize,
    n: usize,
    a_rs: isize,
    a_cs: isize,
    b_rs: isize,
    b_cs: isize,
    batch: Vec<usize>,
    a_batch_strides: Vec<usize>,
    b_batch_strides: Vec<usize>,
}

fn plan(a: &[usize], b: &[usize], ta: bool, tb: bool) -> Result<Plan> {
    if a.len() < 2 || b.len() < 2 {
        return Err(invalid_shape("matmul", if a.len() < 2 { a } else { b }, "rank must be at least 2"));
    }
    let (ar, ac) = (a[a.len() - 2], a[a.len() - 1]);
    let (br, bc) = (b[b.len() - 2], b[b.len() - 1]);
    let (m, k, a_rs, a_cs) = operand(ar, ac, ta);
    let (k2, n, b_rs, b_cs) = operand(br, bc, tb);
    if k != k2 {
        return Err(mismatch("matmul", a, b));
    }
    let (ba, bb) = (&a[..a.len() - 2], &b[..b.len() - 2]);
    let batch = broadcast_shapes(ba, bb).ok_or_else(|| mismatch("matmul", a, b))?;
    Ok(Plan {
        m,
        k,
        n,
        a_rs,
        a_cs,
        b_rs,
        b_cs,
        a_batch_strides: broadcast_strides(ba, &batch),
        b_batch_strides: broadcast_strides(bb, &batch),
        batch,
    })
}

impl<E: Element> Tape<E> {
    /// Batched matrix product over the last two axes; leading axes broadcast.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, false)
    }

    /// Like [`Tape::matmul`] with either operand's last two axes transposed.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (xa, xb) = (self.value(a), self.value(b));
        let p = plan(xa.shape(), xb.shape(), ta, tb)?;
        let (sa, sb) = (p.m * p.k, p.k * p.n);
        let sc = p.m * p.n;
        let count: usize = p.batch.iter().product();
        let mut out = vec![E::zero(); count * sc];
        let (da, db) = (xa.data(), xb.data());
        broadcast_for_each(&p.batch, &p.a_batch_strides, &p.b_batch_strides, |o, i, j| unsafe {
            E::gemm(
                p.m,
                p.k,
                p.n,
                E::one(),
                da.as_ptr().add(i * sa),
                p.a_rs,
                p.a_cs,
                db.as_ptr().add(j * sb),
                p.b_rs,
                p.b_cs,
                E::zero(),
                out.as_mut_ptr().add(o * sc),
                p.n as isize,
                1,
            )
        });
        let mut shape = p.batch.clone();
        shape.extend([p.m, p.n]);
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::MatMul {
                a: a.0,
                b: b.0,
                ta,
                tb,
            },
        ))
    }
}

pub(crate) fn backward<E: Element>(op: &Op<E>, g: &[E], adj: &mut Adjoints<'_, E>) {
    let Op::MatMul { a, b, ta, tb } = *op else {
        unreachable!("not a matmul")
    };
    let (xa, xb) = (adj.value(a), adj.value(b));
    let p = plan(xa.shape(), xb.shape(), ta, tb).expect("validated in forward");
    let (sa, sb, sc) = (p.m * p.k, p.k * p.n, p.m * p.n);
    let (da, db) = (xa.data(), xb.data());
    let gp = g.as_ptr();
    if let Some(ga) = adj.slot(a) {
        let gap = ga.as_mut_ptr();
        // dA = dC * B^T
        broadcast_for_each(&p.batch, &p.a_batch_strides, &p.b_batch_strides, |o, i, j| unsafe {
            E::gemm(
                p.m,
                p.n,
                p.k,
                E::one(),
                gp.add(o * sc),
                p.n as isize,
                1,
                db.as_ptr().add(j * sb),
                p.b_cs,
                p.b_rs,
                E::one(),
                gap.add(i * sa),
                p.a_rs,
                p.a_cs,
            )
        });
    }
    if let Some(gb) = adj.slot(b) {
        let gbp = gb.as_mut_ptr();
        // dB = A^T * dC
        broadcast_for_each(&p.batch, &p.a_batch_strides, &p.b_batch_strides, |o, i, j| unsafe {
            E::gemm(
                p.k,
                p.m,
                p.n,
                E::one(),
                da.as_ptr().add(i * sa),
                p.a_cs,
                p.a_rs,
                gp.add(o * sc),
                p.n as isize,
                1,
                E::one(),
                gbp.add(j * sb),
                p.b_rs,
                p.b_cs,
            )
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn identity_product() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[2, 2], &[1., 0., 0., 1.]));
        let b = tape.constant(t(&[2, 1], &[3., 4.]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.data(c), &[3., 4.]);
    }

    #[test]
    fn hand_product() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[2, 2], &[1., 2., 3., 4.]));
        let b = tape.constant(t(&[2, 1], &[5., 6.]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.shape(c), &[2, 1]);
        assert_eq!(tape.data(c), &[17., 39.]);
    }

    #[test]
    fn transposed_operands() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[2, 2], &[1., 2., 3., 4.]));
        let b = tape.constant(t(&[1, 2], &[5., 6.]));
        let c = tape.matmul_t(a, b, false, true).unwrap();
        assert_eq!(tape.data(c), &[17., 39.]);
        let d = tape.matmul_t(a, a, true, false).unwrap();
        assert_eq!(tape.data(d), &[10., 14., 14., 20.]);
    }

    #[test]
    fn shape_mismatch_names_both() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros([2, 3]));
        let b = tape.constant(Tensor::zeros([2, 3]));
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3] vs [2, 3]"), "{err}");
    }

    #[test]
    fn broadcast_batch() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::from_fn([3, 2, 2], |i| i as f64).with_requires_grad(true));
        let w = tape.leaf(t(&[2, 1], &[1., 1.]).with_requires_grad(true));
        let c = tape.matmul(a, w).unwrap();
        assert_eq!(tape.shape(c), &[3, 2, 1]);
        assert_eq!(tape.data(c), &[1., 5., 9., 13., 17., 21.]);
        let s = tape.sum(c);
        tape.backward(s).unwrap();
        // d sum / dW = column sums of all stacked A
        assert_eq!(tape.grad(w).unwrap(), &[30., 36.]);
    }

    #[test]
    fn grad_of_sum_is_ones_times_bt() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(&[2, 2], &[1., 2., 3., 4.]).with_requires_grad(true));
        let b = tape.leaf(t(&[2, 3], &[1., 2., 3., 4., 5., 6.]).with_requires_grad(true));
        let c = tape.matmul(a, b).unwrap();
        let s = tape.sum(c);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(a).unwrap(), &[6., 15., 6., 15.]);
        assert_eq!(tape.grad(b).unwrap(), &[4., 4., 4., 6., 6., 6.]);
    }
}
