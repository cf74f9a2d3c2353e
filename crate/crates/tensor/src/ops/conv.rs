use crate::element::Element;
use crate::error::{invalid_shape, mismatch, Result, TensorError};
use crate::tape::{Adjoints, Op, Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
struct Geometry {
    batch: usize,
    t: usize,
    f: usize,
    cin: usize,
    kt: usize,
    kf: usize,
    cout: usize,
    st: usize,
    sf: usize,
    pt: usize,
    pf: usize,
    t_out: usize,
    f_out: usize,
}

impl Geometry {
    fn cols(&self) -> usize {
        self.kt * self.kf * self.cin
    }

    fn rows(&self) -> usize {
        self.batch * self.t_out * self.f_out
    }

    /// Visits `(row, col, input_index)` for every in-bounds im2col entry.
    fn for_each(&self, mut f: impl FnMut(usize, usize, usize)) {
        let cols = self.cols();
        for b in 0..self.batch {
            for to in 0..self.t_out {
                for fo in 0..self.f_out {
                    let row = (b * self.t_out + to) * self.f_out + fo;
                    for dt in 0..self.kt {
                        let ti = (to * self.st + dt) as isize - self.pt as isize;
                        if ti < 0 || ti as usize >= self.t {
                            continue;
                        }
                        for df in 0..self.kf {
                            let fi = (fo * self.sf + df) as isize - self.pf as isize;
                            if fi < 0 || fi as usize >= self.f {
                                continue;
                            }
                            let src = ((b * self.t + ti as usize) * self.f + fi as usize) * self.cin;
                            let col = (dt * self.kf + df) * self.cin;
                            for c in 0..self.cin {
                                f(row * cols, col + c, src + c);
                            }
                        }
                    }
                }
            }
        }
    }

    fn im2col<E: Element>(&self, x: &[E]) -> Vec<E> {
        let mut cols = vec![E::zero(); self.rows() * self.cols()];
        self.for_each(|row, col, src| cols[row + col] = x[src]);
        cols
    }
}

fn geometry(x: &[usize], w: &[usize], stride: (usize, usize), padding: (usize, usize)) -> Result<Geometry> {
    let (batch, t, f, cin) = match *x {
        [t, f, c] => (1, t, f, c),
        [b, t, f, c] => (b, t, f, c),
        _ => return Err(invalid_shape("conv2d", x, "expected [T, F, C] or [B, T, F, C]")),
    };
    let [kt, kf, wcin, cout] = *w else {
        return Err(invalid_shape("conv2d", w, "kernel must be [kt, kf, C_in, C_out]"));
    };
    if wcin != cin {
        return Err(mismatch("conv2d", x, w));
    }
    if stride.0 == 0 || stride.1 == 0 {
        return Err(TensorError::Config(format!("conv2d strides must be >= 1, got {stride:?}")));
    }
    let (pt, pf) = padding;
    if t + 2 * pt < kt || f + 2 * pf < kf || kt == 0 || kf == 0 {
        return Err(invalid_shape("conv2d", x, format!("kernel {kt}x{kf} does not fit padded input")));
    }
    Ok(Geometry {
        batch,
        t,
        f,
        cin,
        kt,
        kf,
        cout,
        st: stride.0,
        sf: stride.1,
        pt,
        pf,
        t_out: (t + 2 * pt - kt) / stride.0 + 1,
        f_out: (f + 2 * pf - kf) / stride.1 + 1,
    })
}

impl<E: Element> Tape<E> {
    /// 2-d cross-correlation over (time, frequency) with channels last.
    ///
    /// `x` is `[T, F, C_in]` or `[B, T, F, C_in]`, `w` is
    /// `[kt, kf, C_in, C_out]`. Output size per axis is
    /// `(len + 2 * pad - kernel) / stride + 1`, rounded down.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: (usize, usize), padding: (usize, usize)) -> Result<Var> {
        let (xt, wt) = (self.value(x), self.value(w));
        let geo = geometry(xt.shape(), wt.shape(), stride, padding)?;
        let cols = geo.im2col(xt.data());
        let mut out = vec![E::zero(); geo.rows() * geo.cout];
        unsafe {
            E::gemm(
                geo.rows(),
                geo.cols(),
                geo.cout,
                E::one(),
                cols.as_ptr(),
                geo.cols() as isize,
                1,
                wt.data().as_ptr(),
                geo.cout as isize,
                1,
                E::zero(),
                out.as_mut_ptr(),
                geo.cout as isize,
                1,
            );
        }
        let shape = if xt.rank() == 3 {
            vec![geo.t_out, geo.f_out, geo.cout]
        } else {
            vec![geo.batch, geo.t_out, geo.f_out, geo.cout]
        };
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::Conv2d {
                x: x.0,
                w: w.0,
                stride,
                padding,
            },
        ))
    }
}

pub(crate) fn backward<E: Element>(op: &Op<E>, g: &[E], adj: &mut Adjoints<'_, E>) {
    let Op::Conv2d { x, w, stride, padding } = *op else {
        unreachable!("not a conv")
    };
    let (xt, wt) = (adj.value(x), adj.value(w));
    let geo = geometry(xt.shape(), wt.shape(), stride, padding).expect("validated in forward");
    let (rows, ncols) = (geo.rows(), geo.cols());
    if let Some(gw) = adj.slot(w) {
        let cols = geo.im2col(xt.data());
        unsafe {
            E::gemm(
                ncols,
                rows,
                geo.cout,
                E::one(),
                cols.as_ptr(),
                1,
                ncols as isize,
                g.as_ptr(),
                geo.cout as isize,
                1,
                E::one(),
                gw.as_mut_ptr(),
                geo.cout as isize,
                1,
            );
        }
    }
    if let Some(gx) = adj.slot(x) {
        let mut dcols = vec![E::zero(); rows * ncols];
        unsafe {
            E::gemm(
                rows,
                geo.cout,
                ncols,
                E::one(),
                g.as_ptr(),
                geo.cout as isize,
                1,
                wt.data().as_ptr(),
                1,
                geo.cout as isize,
                E::zero(),
                dcols.as_mut_ptr(),
                ncols as isize,
                1,
            );
        }
        geo.for_each(|row, col, src| gx[src] += dcols[row + col]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_kernel_is_identity() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_fn([3, 4, 1], |i| i as f64));
        let w = tape.constant(Tensor::ones([1, 1, 1, 1]));
        let y = tape.conv2d(x, w, (1, 1), (0, 0)).unwrap();
        assert_eq!(tape.shape(y), &[3, 4, 1]);
        assert_eq!(tape.data(y), tape.data(x));
    }

    #[test]
    fn strided_pair_sum() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::new([4, 1, 1], vec![1., 2., 3., 4.]).unwrap());
        let w = tape.constant(Tensor::ones([2, 1, 1, 1]));
        let y = tape.conv2d(x, w, (2, 1), (0, 0)).unwrap();
        assert_eq!(tape.shape(y), &[2, 1, 1]);
        assert_eq!(tape.data(y), &[3., 7.]);
    }

    #[test]
    fn output_geometry() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros([2, 10, 128, 1]));
        let w = tape.constant(Tensor::zeros([3, 4, 1, 32]));
        let y = tape.conv2d(x, w, (1, 4), (1, 0)).unwrap();
        assert_eq!(tape.shape(y), &[2, 10, 32, 32]);
        let x = tape.constant(Tensor::zeros([10, 32, 8]));
        let w = tape.constant(Tensor::zeros([3, 3, 8, 16]));
        let y = tape.conv2d(x, w, (1, 2), (1, 1)).unwrap();
        assert_eq!(tape.shape(y), &[10, 16, 16]);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros([2, 2, 1]));
        let w = tape.constant(Tensor::zeros([3, 3, 1, 1]));
        assert!(tape.conv2d(x, w, (1, 1), (0, 0)).is_err());
        assert!(tape.conv2d(x, w, (0, 1), (1, 1)).is_err());
        let w2 = tape.constant(Tensor::zeros([1, 1, 2, 1]));
        assert!(tape.conv2d(x, w2, (1, 1), (0, 0)).is_err());
    }
}
