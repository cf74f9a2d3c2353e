use crate::element::Element;
use crate::error::{invalid_shape, mismatch, Result};
use crate::tape::{Adjoints, Op, Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy)]
struct Dims {
    batch: usize,
    lq: usize,
    lk: usize,
    d: usize,
    dv: usize,
}

fn dims(q: &[usize], k: &[usize], v: &[usize]) -> Result<Dims> {
    let r = q.len();
    if r < 2 || k.len() != r || v.len() != r {
        return Err(mismatch("attention", q, k));
    }
    if q[..r - 2] != k[..r - 2] || k[..r - 2] != v[..r - 2] || q[r - 1] != k[r - 1] || k[r - 2] != v[r - 2] {
        return Err(mismatch("attention", q, if q[r - 1] != k[r - 1] || q[..r - 2] != k[..r - 2] { k } else { v }));
    }
    if k[r - 2] == 0 {
        return Err(invalid_shape("attention", k, "no keys to attend to"));
    }
    Ok(Dims {
        batch: q[..r - 2].iter().product(),
        lq: q[r - 2],
        lk: k[r - 2],
        d: q[r - 1],
        dv: v[r - 1],
    })
}

/// `c = alpha * a * b (+ beta * c)` on contiguous row-major blocks with
/// optional transposes.
#[allow(clippy::too_many_arguments)]
fn gemm<E: Element>(m: usize, k: usize, n: usize, alpha: E, a: &[E], ta: bool, b: &[E], tb: bool, beta: E, c: &mut [E]) {
    let (ars, acs) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (brs, bcs) = if tb { (1, k as isize) } else { (n as isize, 1) };
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    unsafe { E::gemm(m, k, n, alpha, a.as_ptr(), ars, acs, b.as_ptr(), brs, bcs, beta, c.as_mut_ptr(), n as isize, 1) }
}

/// Row softmax of `scale * q kᵀ` for one batch entry, written into `p`.
fn probabilities<E: Element>(q: &[E], k: &[E], dm: Dims, scale: E, p: &mut [E]) {
    gemm(dm.lq, dm.d, dm.lk, scale, q, false, k, true, E::zero(), p);
    for row in p.chunks_exact_mut(dm.lk) {
        let max = row.iter().copied().fold(E::neg_infinity(), E::max);
        let mut total = E::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        let inv = E::one() / total;
        row.iter_mut().for_each(|v| *v *= inv);
    }
}

impl<E: Element> Tape<E> {
    /// Dense scaled dot-product attention `softmax(scale · q kᵀ) v` over the
    /// last two axes of `q: [..., Lq, d]`, `k: [..., Lk, d]`,
    /// `v: [..., Lk, dv]`.
    ///
    /// Only the output is stored; probabilities are recomputed in the
    /// backward sweep one batch entry at a time.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, scale: E) -> Result<Var> {
        let (tq, tk, tv) = (self.value(q), self.value(k), self.value(v));
        let dm = dims(tq.shape(), tk.shape(), tv.shape())?;
        let mut out = vec![E::zero(); dm.batch * dm.lq * dm.dv];
        let mut p = vec![E::zero(); dm.lq * dm.lk];
        for b in 0..dm.batch {
            let qb = &tq.data()[b * dm.lq * dm.d..];
            let kb = &tk.data()[b * dm.lk * dm.d..];
            let vb = &tv.data()[b * dm.lk * dm.dv..];
            probabilities(qb, kb, dm, scale, &mut p);
            gemm(dm.lq, dm.lk, dm.dv, E::one(), &p, false, vb, false, E::zero(), &mut out[b * dm.lq * dm.dv..]);
        }
        let mut shape = tq.shape().to_vec();
        *shape.last_mut().expect("rank >= 2") = dm.dv;
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::Attention {
                q: q.0,
                k: k.0,
                v: v.0,
                scale,
            },
        ))
    }
}

pub(crate) fn backward<E: Element>(op: &Op<E>, g: &[E], adj: &mut Adjoints<'_, E>) {
    let Op::Attention { q, k, v, scale } = *op else {
        unreachable!("not attention")
    };
    let (tq, tk, tv) = (adj.value(q), adj.value(k), adj.value(v));
    let dm = dims(tq.shape(), tk.shape(), tv.shape()).expect("validated in forward");
    let mut dq = adj.slot(q).is_some().then(|| vec![E::zero(); tq.numel()]);
    let mut dk = adj.slot(k).is_some().then(|| vec![E::zero(); tk.numel()]);
    let mut dv = adj.slot(v).is_some().then(|| vec![E::zero(); tv.numel()]);
    let mut p = vec![E::zero(); dm.lq * dm.lk];
    let mut dp = vec![E::zero(); dm.lq * dm.lk];
    for b in 0..dm.batch {
        let (qo, ko, vo, go) = (b * dm.lq * dm.d, b * dm.lk * dm.d, b * dm.lk * dm.dv, b * dm.lq * dm.dv);
        let (qb, kb, vb, gb) = (&tq.data()[qo..], &tk.data()[ko..], &tv.data()[vo..], &g[go..]);
        probabilities(qb, kb, dm, scale, &mut p);
        if let Some(dv) = dv.as_mut() {
            gemm(dm.lk, dm.lq, dm.dv, E::one(), &p, true, gb, false, E::one(), &mut dv[vo..]);
        }
        if dq.is_none() && dk.is_none() {
            continue;
        }
        gemm(dm.lq, dm.dv, dm.lk, E::one(), gb, false, vb, true, E::zero(), &mut dp);
        for (prow, drow) in p.chunks_exact(dm.lk).zip(dp.chunks_exact_mut(dm.lk)) {
            let dot: E = prow.iter().zip(drow.iter()).map(|(&a, &b)| a * b).sum();
            drow.iter_mut().zip(prow).for_each(|(d, &pv)| *d = pv * (*d - dot));
        }
        if let Some(dq) = dq.as_mut() {
            gemm(dm.lq, dm.lk, dm.d, scale, &dp, false, kb, false, E::one(), &mut dq[qo..]);
        }
        if let Some(dk) = dk.as_mut() {
            gemm(dm.lk, dm.lq, dm.d, scale, &dp, true, qb, false, E::one(), &mut dk[ko..]);
        }
    }
    for (i, buf) in [(q, dq), (k, dk), (v, dv)] {
        if let (Some(buf), Some(slot)) = (buf, adj.slot(i)) {
            slot.iter_mut().zip(&buf).for_each(|(s, &d)| *s += d);
        }
    }
}
