use crate::element::Element;
use crate::error::{invalid, Result};
use crate::tensor::{BackwardOp, Tensor};

struct SumAll {
    scale: f64,
}

impl<T: Element> BackwardOp<T> for SumAll {
    fn name(&self) -> &'static str {
        "sum_all"
    }

    fn backward(&self, inputs: &[Tensor<T>], _output: &[T], grad: &[T]) -> Vec<Option<Vec<T>>> {
        let g = grad[0] * T::of(self.scale);
        vec![Some(vec![g; inputs[0].numel()])]
    }
}

/// Sum along one axis, keeping it with size 1.
struct SumAxis {
    outer: usize,
    len: usize,
    inner: usize,
}

impl<T: Element> BackwardOp<T> for SumAxis {
    fn name(&self) -> &'static str {
        "sum_axis"
    }

    fn backward(&self, _inputs: &[Tensor<T>], _output: &[T], grad: &[T]) -> Vec<Option<Vec<T>>> {
        let mut g = Vec::with_capacity(self.outer * self.len * self.inner);
        for o in 0..self.outer {
            let row = &grad[o * self.inner..(o + 1) * self.inner];
            for _ in 0..self.len {
                g.extend_from_slice(row);
            }
        }
        vec![Some(g)]
    }
}

impl<T: Element> Tensor<T> {
    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum_all(&self) -> Tensor<T> {
        let s: T = self.data().iter().copied().sum();
        Tensor::from_op(vec![s], vec![], vec![self.clone()], SumAll { scale: 1.0 })
    }

    /// Mean of all elements, as a rank-0 tensor.
    pub fn mean_all(&self) -> Tensor<T> {
        let n = self.numel().max(1);
        let s: T = self.data().iter().copied().sum();
        Tensor::from_op(
            vec![s / T::of(n as f64)],
            vec![],
            vec![self.clone()],
            SumAll { scale: 1.0 / n as f64 },
        )
    }

    /// Sum over `axis`; the axis is kept with size 1.
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor<T>> {
        if axis >= self.rank() {
            return invalid("sum_axis", format!("axis {axis} out of range for {:?}", self.shape()));
        }
        let shape = self.shape();
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let x = self.data();
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            let dst = &mut out[o * inner..(o + 1) * inner];
            for l in 0..len {
                let src = &x[(o * len + l) * inner..(o * len + l + 1) * inner];
                dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
            }
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = 1;
        Ok(Tensor::from_op(out, out_shape, vec![self.clone()], SumAxis { outer, len, inner }))
    }
}
