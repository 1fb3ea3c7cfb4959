use crate::element::{gemm, Element, MatRef};
use crate::error::{Error, Result};
use crate::tensor::{BackwardOp, Tensor};

struct Matmul {
    m: usize,
    k: usize,
    n: usize,
}

impl<T: Element> BackwardOp<T> for Matmul {
    fn name(&self) -> &'static str {
        "matmul"
    }

    fn backward(&self, inputs: &[Tensor<T>], _output: &[T], grad: &[T]) -> Vec<Option<Vec<T>>> {
        let (a, b) = (&inputs[0], &inputs[1]);
        let (m, k, n) = (self.m, self.k, self.n);
        let ga = a.requires_grad().then(|| {
            let mut g = vec![T::zero(); m * k];
            gemm(MatRef::new(grad, m, n), MatRef::t(b.data(), k, n), T::zero(), &mut g);
            g
        });
        let gb = b.requires_grad().then(|| {
            let mut g = vec![T::zero(); k * n];
            gemm(MatRef::t(a.data(), m, k), MatRef::new(grad, m, n), T::zero(), &mut g);
            g
        });
        vec![ga, gb]
    }
}

impl<T: Element> Tensor<T> {
    /// Matrix product of rank-2 tensors `[m, k] x [k, n]`.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        if self.rank() != 2 || other.rank() != 2 || self.dim(1) != other.dim(0) {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.shape().to_vec(),
                rhs: other.shape().to_vec(),
            });
        }
        let (m, k, n) = (self.dim(0), self.dim(1), other.dim(1));
        let mut out = vec![T::zero(); m * n];
        gemm(
            MatRef::new(self.data(), m, k),
            MatRef::new(other.data(), k, n),
            T::zero(),
            &mut out,
        );
        Ok(Tensor::from_op(
            out,
            vec![m, n],
            vec![self.clone(), other.clone()],
            Matmul { m, k, n },
        ))
    }
}
