use crate::element::Element;
use crate::error::{invalid_shape, Result, TensorError};

/// Row-major dense tensor.
///
/// `grad` is populated by [`Tape::backward`](crate::Tape::backward) for leaves
/// that require gradients, and always has the same number of elements as
/// `data`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<E: Element> {
    shape: Vec<usize>,
    data: Vec<E>,
    requires_grad: bool,
    grad: Option<Vec<E>>,
}

impl<E: Element> Tensor<E> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<E>) -> Result<Self> {
        let shape = shape.into();
        if numel(&shape) != data.len() {
            return Err(TensorError::DataLength {
                len: data.len(),
                shape,
            });
        }
        Ok(Self {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<E>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Self {
            shape,
            data,
            requires_grad: false,
            grad: None,
        }
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: E) -> Self {
        let shape = shape.into();
        let data = vec![value; numel(&shape)];
        Self::from_parts(shape, data)
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, E::zero())
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, E::one())
    }

    pub fn scalar(value: E) -> Self {
        Self::from_parts(Vec::new(), vec![value])
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> E) -> Self {
        let shape = shape.into();
        let data = (0..numel(&shape)).map(&mut f).collect();
        Self::from_parts(shape, data)
    }

    /// Builds a tensor from `f64` values, converting to the element type.
    pub fn from_f64(shape: impl Into<Vec<usize>>, values: &[f64]) -> Result<Self> {
        Self::new(shape, values.iter().map(|&v| E::of(v)).collect())
    }

    pub fn with_requires_grad(mut self, requires_grad: bool) -> Self {
        self.requires_grad = requires_grad;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [E] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<E> {
        self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, requires_grad: bool) {
        self.requires_grad = requires_grad;
    }

    pub fn grad(&self) -> Option<&[E]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut [E]> {
        self.grad.as_deref_mut()
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Adds `delta` into the gradient buffer, allocating it on first use.
    pub fn accumulate_grad(&mut self, delta: &[E]) {
        assert_eq!(delta.len(), self.data.len(), "gradient length mismatch");
        match &mut self.grad {
            Some(g) => g.iter_mut().zip(delta).for_each(|(g, &d)| *g += d),
            None => self.grad = Some(delta.to_vec()),
        }
    }

    pub(crate) fn grad_buffer(&mut self) -> &mut Vec<E> {
        let n = self.data.len();
        self.grad.get_or_insert_with(|| vec![E::zero(); n])
    }

    /// Returns the same values under a new shape with equal element count.
    pub fn reshaped(mut self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        if numel(&shape) != self.data.len() {
            return Err(invalid_shape(
                "reshape",
                &self.shape,
                format!("cannot view as {shape:?}"),
            ));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Element at a multi-index.
    pub fn at(&self, index: &[usize]) -> E {
        assert_eq!(index.len(), self.shape.len(), "index rank");
        let mut off = 0;
        for (&i, &d) in index.iter().zip(&self.shape) {
            assert!(i < d, "index {index:?} out of bounds for {:?}", self.shape);
            off = off * d + i;
        }
        self.data[off]
    }

    pub fn item(&self) -> E {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn cast<F: Element>(&self) -> Tensor<F> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| F::of(v.as_f64())).collect(),
            requires_grad: self.requires_grad,
            grad: self
                .grad
                .as_ref()
                .map(|g| g.iter().map(|v| F::of(v.as_f64())).collect()),
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Splits `shape` around `axis` into `(outer, len, inner)` element counts.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn check_axis(shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(TensorError::InvalidAxis {
            axis,
            rank: shape.len(),
        });
    }
    Ok(())
}

pub(crate) fn contiguous_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; shape.len()];
    let mut acc = 1;
    for (s, &d) in strides.iter_mut().zip(shape).rev() {
        *s = acc;
        acc *= d;
    }
    strides
}

/// NumPy-style broadcast of two shapes.
pub fn broadcast_shapes(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `shape` when read as the broadcast `out` shape (0 on broadcast axes).
pub(crate) fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let own = contiguous_strides(shape);
    let offset = out.len() - shape.len();
    (0..out.len())
        .map(|i| {
            if i < offset || shape[i - offset] == 1 {
                0
            } else {
                own[i - offset]
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_checks_length() {
        assert!(Tensor::<f32>::new([2, 3], vec![0.0; 5]).is_err());
        let t = Tensor::<f32>::new([2, 3], vec![0.0; 6]).unwrap();
        assert_eq!(t.numel(), 6);
        assert!(t.grad().is_none());
    }

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shapes(&[4, 1, 3], &[5, 1]), Some(vec![4, 5, 3]));
        assert_eq!(broadcast_shapes(&[3], &[2, 3]), Some(vec![2, 3]));
        assert_eq!(broadcast_shapes(&[2], &[3]), None);
        assert_eq!(broadcast_strides(&[5, 1], &[4, 5, 3]), vec![0, 1, 0]);
    }

    #[test]
    fn accumulate_grad_adds() {
        let mut t = Tensor::<f64>::zeros([2]);
        t.accumulate_grad(&[1.0, 2.0]);
        t.accumulate_grad(&[1.0, 2.0]);
        assert_eq!(t.grad().unwrap(), &[2.0, 4.0]);
    }
}
