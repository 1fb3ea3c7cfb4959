use crate::element::Element;
use crate::error::{invalid, Error, Result};
use crate::tensor::{BackwardOp, Tensor};

struct Reshape;

impl<T: Element> BackwardOp<T> for Reshape {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn backward(&self, _inputs: &[Tensor<T>], _output: &[T], grad: &[T]) -> Vec<Option<Vec<T>>> {
        vec![Some(grad.to_vec())]
    }
}

struct Concat {
    axis_lens: Vec<usize>,
    outer: usize,
    inner: usize,
}

impl<T: Element> BackwardOp<T> for Concat {
    fn name(&self) -> &'static str {
        "concat"
    }

    fn backward(&self, inputs: &[Tensor<T>], _output: &[T], grad: &[T]) -> Vec<Option<Vec<T>>> {
        let total: usize = self.axis_lens.iter().sum();
        let mut start = 0;
        let mut grads = Vec::with_capacity(inputs.len());
        for (input, &len) in inputs.iter().zip(&self.axis_lens) {
            if input.requires_grad() {
                let chunk = len * self.inner;
                let mut g = Vec::with_capacity(self.outer * chunk);
                for o in 0..self.outer {
                    let base = (o * total + start) * self.inner;
                    g.extend_from_slice(&grad[base..base + chunk]);
                }
                grads.push(Some(g));
            } else {
                grads.push(None);
            }
            start += len;
        }
        grads
    }
}

struct Select {
    indices: Vec<usize>,
    row: usize,
}

impl<T: Element> BackwardOp<T> for Select {
    fn name(&self) -> &'static str {
        "select"
    }

    fn backward(&self, inputs: &[Tensor<T>], _output: &[T], grad: &[T]) -> Vec<Option<Vec<T>>> {
        let mut g = vec![T::zero(); inputs[0].numel()];
        for (k, &i) in self.indices.iter().enumerate() {
            let dst = &mut g[i * self.row..(i + 1) * self.row];
            let src = &grad[k * self.row..(k + 1) * self.row];
            dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
        }
        vec![Some(g)]
    }
}

struct Transpose {
    rows: usize,
    cols: usize,
}

fn transpose_buf<T: Copy>(x: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(rows * cols);
    for c in 0..cols {
        for r in 0..rows {
            out.push(x[r * cols + c]);
        }
    }
    out
}

impl<T: Element> BackwardOp<T> for Transpose {
    fn name(&self) -> &'static str {
        "transpose"
    }

    fn backward(&self, _inputs: &[Tensor<T>], _output: &[T], grad: &[T]) -> Vec<Option<Vec<T>>> {
        // grad has the transposed shape (cols x rows).
        vec![Some(transpose_buf(grad, self.cols, self.rows))]
    }
}

impl<T: Element> Tensor<T> {
    /// Same storage viewed with a new shape of equal element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        let numel: usize = shape.iter().product();
        if numel != self.numel() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        Ok(Tensor::from_op_shared(self.shared_data(), shape.to_vec(), vec![self.clone()], Reshape))
    }

    /// Concatenation along `axis`; all other axes must agree.
    pub fn concat(tensors: &[Tensor<T>], axis: usize) -> Result<Tensor<T>> {
        let Some(first) = tensors.first() else {
            return invalid("concat", "no tensors");
        };
        if axis >= first.rank() {
            return invalid("concat", format!("axis {axis} out of range for {:?}", first.shape()));
        }
        for t in tensors {
            let same_rank = t.rank() == first.rank();
            let agree = same_rank
                && t.shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !agree {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: first.shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
        }
        let shape = first.shape();
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let axis_lens: Vec<usize> = tensors.iter().map(|t| t.dim(axis)).collect();
        let total: usize = axis_lens.iter().sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (t, &len) in tensors.iter().zip(&axis_lens) {
                let chunk = len * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = total;
        Ok(Tensor::from_op(
            data,
            out_shape,
            tensors.to_vec(),
            Concat {
                axis_lens,
                outer,
                inner,
            },
        ))
    }

    /// Rows `indices` along axis 0, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Tensor<T>> {
        if self.rank() == 0 {
            return invalid("select", "rank-0 tensor");
        }
        let rows = self.dim(0);
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return invalid("select", format!("index {bad} out of range for {rows} rows"));
        }
        let row = self.numel() / rows.max(1);
        let mut data = Vec::with_capacity(indices.len() * row);
        for &i in indices {
            data.extend_from_slice(&self.data()[i * row..(i + 1) * row]);
        }
        let mut shape = self.shape().to_vec();
        shape[0] = indices.len();
        Ok(Tensor::from_op(
            data,
            shape,
            vec![self.clone()],
            Select {
                indices: indices.to_vec(),
                row,
            },
        ))
    }

    /// Transpose of a rank-2 tensor.
    pub fn t(&self) -> Result<Tensor<T>> {
        if self.rank() != 2 {
            return invalid("transpose", format!("expected rank 2, got {:?}", self.shape()));
        }
        let (rows, cols) = (self.dim(0), self.dim(1));
        Ok(Tensor::from_op(
            transpose_buf(self.data(), rows, cols),
            vec![cols, rows],
            vec![self.clone()],
            Transpose { rows, cols },
        ))
    }
}
