use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use crate::element::Element;
use crate::error::{Error, Result};

static NEXT_ID: AtomicUsize = AtomicUsize::new(1);

fn next_id() -> usize {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// Backward rule of a recorded operation.
///
/// Returns one entry per input: the gradient of the loss with respect to
/// that input, or `None` when the input does not require a gradient.
pub(crate) trait BackwardOp<T: Element>: Send + Sync {
    fn name(&self) -> &'static str;
    fn backward(&self, inputs: &[Tensor<T>], output: &[T], grad: &[T]) -> Vec<Option<Vec<T>>>;
}

struct Recorded<T: Element> {
    inputs: Vec<Tensor<T>>,
    op: Box<dyn BackwardOp<T>>,
}

struct Node<T: Element> {
    id: usize,
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
    requires_grad: bool,
    recorded: Option<Recorded<T>>,
}

/// Immutable n-dimensional array with an optional autodiff record.
pub struct Tensor<T: Element>(Arc<Node<T>>);

impl<T: Element> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor(Arc::clone(&self.0))
    }
}

impl<T: Element> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = self.0.recorded.as_ref().map(|r| r.op.name());
        f.debug_struct("Tensor")
            .field("id", &self.0.id)
            .field("shape", &self.0.shape)
            .field("dtype", &T::DTYPE)
            .field("requires_grad", &self.0.requires_grad)
            .field("op", &op)
            .finish()
    }
}

impl<T: Element> Tensor<T> {
    fn build(data: Arc<Vec<T>>, shape: Vec<usize>, requires_grad: bool, recorded: Option<Recorded<T>>) -> Self {
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        Tensor(Arc::new(Node {
            id: next_id(),
            shape,
            data,
            requires_grad,
            recorded,
        }))
    }

    /// Constant tensor. Fails when `data.len()` does not match `shape`.
    pub fn new(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::ShapeMismatch {
                op: "new",
                lhs: vec![data.len()],
                rhs: shape.to_vec(),
            });
        }
        Ok(Self::build(Arc::new(data), shape.to_vec(), false, None))
    }

    /// Trainable leaf: gradients with respect to it are reported by `backward`.
    pub fn param(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        Ok(Self::new(data, shape)?.requires_grad_leaf())
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let numel = shape.iter().product();
        Self::build(Arc::new(vec![value; numel]), shape.to_vec(), false, None)
    }

    pub fn scalar(value: T) -> Self {
        Self::build(Arc::new(vec![value]), vec![], false, None)
    }

    /// New leaf sharing this tensor's storage that does require a gradient.
    pub fn requires_grad_leaf(&self) -> Self {
        Self::build(Arc::clone(&self.0.data), self.0.shape.clone(), true, None)
    }

    /// Same values, cut from the graph: no gradient flows through the result.
    pub fn detach(&self) -> Self {
        Self::build(Arc::clone(&self.0.data), self.0.shape.clone(), false, None)
    }

    /// Result of an op: records the backward rule only if some input needs it.
    pub(crate) fn from_op(
        data: Vec<T>,
        shape: Vec<usize>,
        inputs: Vec<Tensor<T>>,
        op: impl BackwardOp<T> + 'static,
    ) -> Self {
        let requires_grad = inputs.iter().any(|t| t.requires_grad());
        let recorded = requires_grad.then(|| Recorded {
            inputs,
            op: Box::new(op),
        });
        Self::build(Arc::new(data), shape, requires_grad, recorded)
    }

    /// Like `from_op` but reusing an existing buffer (views such as reshape).
    pub(crate) fn from_op_shared(
        data: Arc<Vec<T>>,
        shape: Vec<usize>,
        inputs: Vec<Tensor<T>>,
        op: impl BackwardOp<T> + 'static,
    ) -> Self {
        let requires_grad = inputs.iter().any(|t| t.requires_grad());
        let recorded = requires_grad.then(|| Recorded {
            inputs,
            op: Box::new(op),
        });
        Self::build(data, shape, requires_grad, recorded)
    }

    pub(crate) fn shared_data(&self) -> Arc<Vec<T>> {
        Arc::clone(&self.0.data)
    }

    pub fn id(&self) -> usize {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.0.shape[axis]
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.0.data.to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.recorded.is_none()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.numel() != 1 {
            return Err(Error::Invalid {
                op: "item",
                msg: format!("expected one element, got shape {:?}", self.shape()),
            });
        }
        Ok(self.0.data[0])
    }

    /// Gradients of this scalar with respect to every leaf that requires one.
    pub fn backward(&self) -> Result<Gradients<T>> {
        if self.numel() != 1 {
            return Err(Error::NonScalarBackward(self.shape().to_vec()));
        }
        let mut out = Gradients { grads: HashMap::new() };
        if !self.requires_grad() {
            return Ok(out);
        }

        let order = self.topo_order();
        let mut pending: HashMap<usize, Vec<T>> = HashMap::new();
        pending.insert(self.id(), vec![T::one()]);

        for node in order.iter().rev() {
            let Some(grad) = pending.remove(&node.id()) else {
                continue;
            };
            let Some(rec) = node.0.recorded.as_ref() else {
                out.grads.insert(node.id(), grad);
                continue;
            };
            let input_grads = rec.op.backward(&rec.inputs, node.data(), &grad);
            debug_assert_eq!(input_grads.len(), rec.inputs.len(), "{}", rec.op.name());
            for (input, g) in rec.inputs.iter().zip(input_grads) {
                let Some(g) = g else { continue };
                if !input.requires_grad() {
                    continue;
                }
                debug_assert_eq!(g.len(), input.numel(), "{} gradient size", rec.op.name());
                match pending.get_mut(&input.id()) {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
                    None => {
                        pending.insert(input.id(), g);
                    }
                }
            }
        }
        Ok(out)
    }

    /// Post-order over nodes that require a gradient (inputs before users).
    fn topo_order(&self) -> Vec<Tensor<T>> {
        let mut order = Vec::new();
        let mut visited = HashSet::new();
        let mut stack: Vec<(Tensor<T>, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.id()) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(rec) = t.0.recorded.as_ref() {
                for input in rec.inputs.iter().rev() {
                    if input.requires_grad() && !visited.contains(&input.id()) {
                        stack.push((input.clone(), false));
                    }
                }
            }
        }
        order
    }
}

/// Leaf gradients produced by [`Tensor::backward`].
#[derive(Debug, Default)]
pub struct Gradients<T: Element> {
    grads: HashMap<usize, Vec<T>>,
}

impl<T: Element> Gradients<T> {
    /// Gradient of the loss with respect to `leaf`, if it was reached.
    pub fn get(&self, leaf: &Tensor<T>) -> Option<&[T]> {
        self.grads.get(&leaf.id()).map(Vec::as_slice)
    }

    /// Gradient with respect to `leaf`, zeros when unreached.
    pub fn get_or_zeros(&self, leaf: &Tensor<T>) -> Vec<T> {
        self.get(leaf)
            .map(<[T]>::to_vec)
            .unwrap_or_else(|| vec![T::zero(); leaf.numel()])
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}
