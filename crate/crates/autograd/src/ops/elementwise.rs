use crate::element::Element;
use crate::error::{Error, Result};
use crate::tensor::{BackwardOp, Tensor};

#[derive(Clone, Copy, Debug)]
enum Unary<T> {
    Neg,
    Abs,
    Square,
    Sqrt,
    Relu,
    LeakyRelu(T),
    Sigmoid,
    SmoothL1,
    Scale(T),
    AddScalar(T),
}

impl<T: Element> Unary<T> {
    #[inline]
    fn apply(self, x: T) -> T {
        match self {
            Unary::Neg => -x,
            Unary::Abs => x.abs(),
            Unary::Square => x * x,
            Unary::Sqrt => x.sqrt(),
            Unary::Relu => {
                if x > T::zero() {
                    x
                } else {
                    T::zero()
                }
            }
            Unary::LeakyRelu(slope) => {
                if x > T::zero() {
                    x
                } else {
                    slope * x
                }
            }
            Unary::Sigmoid => T::one() / (T::one() + (-x).exp()),
            Unary::SmoothL1 => {
                let a = x.abs();
                // |x| == 1 goes to the quadratic branch; both give 0.5 there.
                if a <= T::one() {
                    T::of(0.5) * x * x
                } else {
                    a - T::of(0.5)
                }
            }
            Unary::Scale(c) => c * x,
            Unary::AddScalar(c) => x + c,
        }
    }

    /// d(out)/d(x) given the input and the already computed output.
    #[inline]
    fn derivative(self, x: T, y: T) -> T {
        match self {
            Unary::Neg => -T::one(),
            Unary::Abs => sign(x),
            Unary::Square => T::of(2.0) * x,
            Unary::Sqrt => {
                if y > T::zero() {
                    T::of(0.5) / y
                } else {
                    T::zero()
                }
            }
            Unary::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Unary::LeakyRelu(slope) => {
                if x > T::zero() {
                    T::one()
                } else {
                    slope
                }
            }
            Unary::Sigmoid => y * (T::one() - y),
            Unary::SmoothL1 => {
                if x.abs() <= T::one() {
                    x
                } else {
                    sign(x)
                }
            }
            Unary::Scale(c) => c,
            Unary::AddScalar(_) => T::one(),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Unary::Neg => "neg",
            Unary::Abs => "abs",
            Unary::Square => "square",
            Unary::Sqrt => "sqrt",
            Unary::Relu => "relu",
            Unary::LeakyRelu(_) => "leaky_relu",
            Unary::Sigmoid => "sigmoid",
            Unary::SmoothL1 => "smooth_l1",
            Unary::Scale(_) => "scale",
            Unary::AddScalar(_) => "add_scalar",
        }
    }
}

/// Sign with `sign(0) = 0`, the subgradient used for |x| at the kink.
#[inline]
fn sign<T: Element>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

struct UnaryOp<T>(Unary<T>);

impl<T: Element> BackwardOp<T> for UnaryOp<T> {
    fn name(&self) -> &'static str {
        self.0.name()
    }

    fn backward(&self, inputs: &[Tensor<T>], output: &[T], grad: &[T]) -> Vec<Option<Vec<T>>> {
        let x = inputs[0].data();
        let zip = |d: &dyn Fn(T, T) -> T| -> Vec<T> {
            x.iter().zip(output).zip(grad).map(|((&x, &y), &g)| g * d(x, y)).collect()
        };
        let g = match self.0 {
            Unary::LeakyRelu(slope) => x
                .iter()
                .zip(grad)
                .map(|(&x, &g)| if x > T::zero() { g } else { g * slope })
                .collect(),
            Unary::Scale(c) => grad.iter().map(|&g| g * c).collect(),
            Unary::AddScalar(_) => grad.to_vec(),
            kind => zip(&|x, y| kind.derivative(x, y)),
        };
        vec![Some(g)]
    }
}

impl<T: Element> Tensor<T> {
    fn unary(&self, kind: Unary<T>) -> Tensor<T> {
        let x = self.data();
        let data = match kind {
            Unary::LeakyRelu(slope) => x.iter().map(|&v| if v > T::zero() { v } else { slope * v }).collect(),
            Unary::Scale(c) => x.iter().map(|&v| c * v).collect(),
            Unary::AddScalar(c) => x.iter().map(|&v| v + c).collect(),
            _ => x.iter().map(|&v| kind.apply(v)).collect(),
        };
        Tensor::from_op(data, self.shape().to_vec(), vec![self.clone()], UnaryOp(kind))
    }

    pub fn neg(&self) -> Tensor<T> {
        self.unary(Unary::Neg)
    }

    /// Elementwise |x|; the gradient at 0 is taken as 0.
    pub fn abs(&self) -> Tensor<T> {
        self.unary(Unary::Abs)
    }

    pub fn square(&self) -> Tensor<T> {
        self.unary(Unary::Square)
    }

    /// Elementwise square root; the gradient at 0 is taken as 0.
    pub fn sqrt(&self) -> Tensor<T> {
        self.unary(Unary::Sqrt)
    }

    pub fn relu(&self) -> Tensor<T> {
        self.unary(Unary::Relu)
    }

    pub fn leaky_relu(&self, slope: T) -> Tensor<T> {
        self.unary(Unary::LeakyRelu(slope))
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        self.unary(Unary::Sigmoid)
    }

    /// Elementwise Huber-style smooth L1 with unit threshold:
    /// `0.5 x^2` for `|x| <= 1`, `|x| - 0.5` otherwise.
    pub fn smooth_l1(&self) -> Tensor<T> {
        self.unary(Unary::SmoothL1)
    }

    pub fn scale(&self, c: T) -> Tensor<T> {
        self.unary(Unary::Scale(c))
    }

    pub fn add_scalar(&self, c: T) -> Tensor<T> {
        self.unary(Unary::AddScalar(c))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

impl Binary {
    fn name(self) -> &'static str {
        match self {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
            Binary::Div => "div",
        }
    }

    #[inline]
    fn apply<T: Element>(self, a: T, b: T) -> T {
        match self {
            Binary::Add => a + b,
            Binary::Sub => a - b,
            Binary::Mul => a * b,
            Binary::Div => a / b,
        }
    }

    /// Partial derivatives (d/da, d/db).
    #[inline]
    fn partials<T: Element>(self, a: T, b: T) -> (T, T) {
        match self {
            Binary::Add => (T::one(), T::one()),
            Binary::Sub => (T::one(), -T::one()),
            Binary::Mul => (b, a),
            Binary::Div => (T::one() / b, -a / (b * b)),
        }
    }
}

/// Offsets into both operands for every output element of a broadcast.
struct Broadcast {
    out_shape: Vec<usize>,
    same: bool,
    a_off: Vec<usize>,
    b_off: Vec<usize>,
}

impl Broadcast {
    fn new(op: &'static str, a: &[usize], b: &[usize]) -> Result<Self> {
        let mismatch = || Error::ShapeMismatch {
            op,
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        };
        if a.len() != b.len() {
            return Err(mismatch());
        }
        if a == b {
            return Ok(Self {
                out_shape: a.to_vec(),
                same: true,
                a_off: Vec::new(),
                b_off: Vec::new(),
            });
        }
        let mut out_shape = Vec::with_capacity(a.len());
        for (&da, &db) in a.iter().zip(b) {
            if da != db && da != 1 && db != 1 {
                return Err(mismatch());
            }
            out_shape.push(da.max(db));
        }
        let strides = |shape: &[usize]| {
            let mut s = vec![0usize; shape.len()];
            let mut acc = 1;
            for i in (0..shape.len()).rev() {
                s[i] = if shape[i] == 1 { 0 } else { acc };
                acc *= shape[i];
            }
            s
        };
        let (sa, sb) = (strides(a), strides(b));
        let numel: usize = out_shape.iter().product();
        let mut a_off = Vec::with_capacity(numel);
        let mut b_off = Vec::with_capacity(numel);
        let nd = out_shape.len();
        let inner = out_shape[nd - 1];
        let (ia, ib) = (sa[nd - 1], sb[nd - 1]);
        let mut idx = vec![0usize; nd - 1];
        let (mut base_a, mut base_b) = (0usize, 0usize);
        for _ in 0..numel / inner.max(1) {
            for j in 0..inner {
                a_off.push(base_a + j * ia);
                b_off.push(base_b + j * ib);
            }
            for d in (0..nd - 1).rev() {
                idx[d] += 1;
                base_a += sa[d];
                base_b += sb[d];
                if idx[d] < out_shape[d] {
                    break;
                }
                base_a -= sa[d] * out_shape[d];
                base_b -= sb[d] * out_shape[d];
                idx[d] = 0;
            }
        }
        Ok(Self {
            out_shape,
            same: false,
            a_off,
            b_off,
        })
    }
}

struct BinaryOp {
    kind: Binary,
    bc: Broadcast,
}

impl<T: Element> BackwardOp<T> for BinaryOp {
    fn name(&self) -> &'static str {
        self.kind.name()
    }

    fn backward(&self, inputs: &[Tensor<T>], _output: &[T], grad: &[T]) -> Vec<Option<Vec<T>>> {
        let (a, b) = (&inputs[0], &inputs[1]);
        let (ad, bd) = (a.data(), b.data());
        let mut ga = a.requires_grad().then(|| vec![T::zero(); a.numel()]);
        let mut gb = b.requires_grad().then(|| vec![T::zero(); b.numel()]);
        if self.bc.same {
            for i in 0..grad.len() {
                let (pa, pb) = self.kind.partials(ad[i], bd[i]);
                if let Some(ga) = ga.as_mut() {
                    ga[i] = grad[i] * pa;
                }
                if let Some(gb) = gb.as_mut() {
                    gb[i] = grad[i] * pb;
                }
            }
        } else {
            for (i, &g) in grad.iter().enumerate() {
                let (ia, ib) = (self.bc.a_off[i], self.bc.b_off[i]);
                let (pa, pb) = self.kind.partials(ad[ia], bd[ib]);
                if let Some(ga) = ga.as_mut() {
                    ga[ia] += g * pa;
                }
                if let Some(gb) = gb.as_mut() {
                    gb[ib] += g * pb;
                }
            }
        }
        vec![ga, gb]
    }
}

impl<T: Element> Tensor<T> {
    fn binary(&self, other: &Tensor<T>, kind: Binary) -> Result<Tensor<T>> {
        let bc = Broadcast::new(kind.name(), self.shape(), other.shape())?;
        let (a, b) = (self.data(), other.data());
        let data: Vec<T> = if bc.same {
            a.iter().zip(b).map(|(&x, &y)| kind.apply(x, y)).collect()
        } else {
            bc.a_off
                .iter()
                .zip(&bc.b_off)
                .map(|(&i, &j)| kind.apply(a[i], b[j]))
                .collect()
        };
        let shape = bc.out_shape.clone();
        Ok(Tensor::from_op(
            data,
            shape,
            vec![self.clone(), other.clone()],
            BinaryOp { kind, bc },
        ))
    }

    /// Elementwise sum. Operands must have equal rank; size-1 axes broadcast.
    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, Binary::Add)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, Binary::Sub)
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, Binary::Mul)
    }

    pub fn div(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, Binary::Div)
    }
}
