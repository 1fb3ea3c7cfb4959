use crate::element::{gemm, Element, MatRef};
use crate::error::{invalid, Error, Result};
use crate::tensor::{BackwardOp, Tensor};

#[derive(Clone, Copy)]
struct ConvGeom {
    batch: usize,
    c_in: usize,
    c_out: usize,
    h: usize,
    w: usize,
    k: usize,
}

impl ConvGeom {
    fn hw(&self) -> usize {
        self.h * self.w
    }
}

impl ConvGeom {
    fn pad(&self) -> usize {
        self.k / 2
    }

    /// Row length of the zero-padded image buffer.
    fn padded_width(&self) -> usize {
        self.w + 2 * self.pad()
    }

    /// Per-channel length of the padded buffer, with `k - 1` slack so every
    /// shifted view stays in bounds.
    fn padded_len(&self) -> usize {
        (self.h + 2 * self.pad()) * self.padded_width() + self.k - 1
    }

    /// Output positions per channel on the padded grid: `h` rows of
    /// `padded_width`, the last `2 * pad` columns of each row unused.
    fn grid_len(&self) -> usize {
        self.h * self.padded_width()
    }

    /// Offset of tap `(ky, kx)` into the padded buffer.
    fn tap_offset(&self, tap: usize) -> usize {
        (tap / self.k) * self.padded_width() + tap % self.k
    }
}

/// Copies a `[c, h, w]` image into the interior of a zeroed padded buffer.
fn pad_into<T: Element>(g: ConvGeom, c: usize, x: &[T], xp: &mut [T]) {
    let (hw, wp, r, p) = (g.hw(), g.padded_width(), g.padded_len(), g.pad());
    for ci in 0..c {
        for y in 0..g.h {
            let dst = ci * r + (y + p) * wp + p;
            xp[dst..dst + g.w].copy_from_slice(&x[ci * hw + y * g.w..ci * hw + (y + 1) * g.w]);
        }
    }
}

/// Accumulates `alpha * a * b + beta * c` for strided views; see [`Element::gemm_raw`].
#[allow(clippy::too_many_arguments)]
fn gemm_view<T: Element>(
    (m, k, n): (usize, usize, usize),
    a: (&[T], usize, isize, isize),
    b: (&[T], usize, isize, isize),
    beta: T,
    c: (&mut [T], usize, isize, isize),
) {
    let last = |rows: usize, cols: usize, off: usize, rs: isize, cs: isize| {
        off + (rows.max(1) - 1) * rs as usize + (cols.max(1) - 1) * cs as usize
    };
    assert!(last(m, k, a.1, a.2, a.3) < a.0.len());
    assert!(last(k, n, b.1, b.2, b.3) < b.0.len());
    assert!(last(m, n, c.1, c.2, c.3) < c.0.len());
    // SAFETY: the asserts above keep every addressed element in bounds.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.0.as_ptr().add(a.1),
            a.2,
            a.3,
            b.0.as_ptr().add(b.1),
            b.2,
            b.3,
            beta,
            c.0.as_mut_ptr().add(c.1),
            c.2,
            c.3,
        );
    }
}

struct Conv2d {
    geom: ConvGeom,
}

impl<T: Element> BackwardOp<T> for Conv2d {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn backward(&self, inputs: &[Tensor<T>], _output: &[T], grad: &[T]) -> Vec<Option<Vec<T>>> {
        let g = self.geom;
        let (x, wt) = (&inputs[0], &inputs[1]);
        let hw = g.hw();
        let taps = g.k * g.k;
        let img_in = g.c_in * hw;
        let img_out = g.c_out * hw;
        let mut gx = x.requires_grad().then(|| vec![T::zero(); x.numel()]);
        let mut gw = wt.requires_grad().then(|| vec![T::zero(); wt.numel()]);
        let gb = inputs.get(2).filter(|b| b.requires_grad()).map(|_| {
            let mut gb = vec![T::zero(); g.c_out];
            for b in 0..g.batch {
                for (co, acc) in gb.iter_mut().enumerate() {
                    let base = b * img_out + co * hw;
                    *acc += grad[base..base + hw].iter().copied().sum::<T>();
                }
            }
            gb
        });

        if g.k == 1 {
            for b in 0..g.batch {
                let dy = &grad[b * img_out..(b + 1) * img_out];
                if let Some(gw) = gw.as_mut() {
                    let xb = &x.data()[b * img_in..(b + 1) * img_in];
                    gemm(MatRef::new(dy, g.c_out, hw), MatRef::t(xb, g.c_in, hw), T::one(), gw);
                }
                if let Some(gx) = gx.as_mut() {
                    let gxb = &mut gx[b * img_in..(b + 1) * img_in];
                    gemm(MatRef::t(wt.data(), g.c_out, g.c_in), MatRef::new(dy, g.c_out, hw), T::zero(), gxb);
                }
            }
            let mut out = vec![gx, gw];
            if inputs.len() == 3 {
                out.push(gb);
            }
            return out;
        }

        let (wp, r, l, p) = (g.padded_width(), g.padded_len(), g.grid_len(), g.pad());
        let wrs = (g.c_in * taps) as isize;
        let mut xp = vec![T::zero(); if gw.is_some() { g.c_in * r } else { 0 }];
        let mut dxp = vec![T::zero(); if gx.is_some() { g.c_in * r } else { 0 }];
        let mut dgrid = vec![T::zero(); g.c_out * l];
        for b in 0..g.batch {
            let dy = &grad[b * img_out..(b + 1) * img_out];
            for co in 0..g.c_out {
                for y in 0..g.h {
                    let dst = co * l + y * wp;
                    dgrid[dst..dst + g.w].copy_from_slice(&dy[co * hw + y * g.w..co * hw + (y + 1) * g.w]);
                }
            }
            if let Some(gw) = gw.as_mut() {
                pad_into(g, g.c_in, &x.data()[b * img_in..(b + 1) * img_in], &mut xp);
                for tap in 0..taps {
                    gemm_view(
                        (g.c_out, l, g.c_in),
                        (&dgrid, 0, l as isize, 1),
                        (&xp, g.tap_offset(tap), 1, r as isize),
                        T::one(),
                        (gw, tap, wrs, taps as isize),
                    );
                }
            }
            if let Some(gx) = gx.as_mut() {
                dxp.fill(T::zero());
                for tap in 0..taps {
                    gemm_view(
                        (g.c_in, g.c_out, l),
                        (wt.data(), tap, taps as isize, wrs),
                        (&dgrid, 0, l as isize, 1),
                        T::one(),
                        (&mut dxp, g.tap_offset(tap), r as isize, 1),
                    );
                }
                let gxb = &mut gx[b * img_in..(b + 1) * img_in];
                for ci in 0..g.c_in {
                    for y in 0..g.h {
                        let src = ci * r + (y + p) * wp + p;
                        gxb[ci * hw + y * g.w..ci * hw + (y + 1) * g.w].copy_from_slice(&dxp[src..src + g.w]);
                    }
                }
            }
        }
        let mut out = vec![gx, gw];
        if inputs.len() == 3 {
            out.push(gb);
        }
        out
    }
}

struct MaxPool2 {
    argmax: Vec<usize>,
}

impl<T: Element> BackwardOp<T> for MaxPool2 {
    fn name(&self) -> &'static str {
        "max_pool2d"
    }

    fn backward(&self, inputs: &[Tensor<T>], _output: &[T], grad: &[T]) -> Vec<Option<Vec<T>>> {
        let mut g = vec![T::zero(); inputs[0].numel()];
        for (&src, &gr) in self.argmax.iter().zip(grad) {
            g[src] += gr;
        }
        vec![Some(g)]
    }
}

impl<T: Element> Tensor<T> {
    /// 2-D convolution, stride 1, zero padding `k / 2` ("same" output size).
    ///
    /// `self` is `[batch, c_in, h, w]`, `weight` is `[c_out, c_in, k, k]`
    /// with odd `k`, `bias` is `[c_out]`.
    pub fn conv2d(&self, weight: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        let (xs, ws) = (self.shape(), weight.shape());
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] || ws[2] != ws[3] || ws[2] % 2 == 0 {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: xs.to_vec(),
                rhs: ws.to_vec(),
            });
        }
        if let Some(b) = bias {
            if b.shape() != [ws[0]] {
                return Err(Error::ShapeMismatch {
                    op: "conv2d bias",
                    lhs: ws.to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
        }
        let g = ConvGeom {
            batch: xs[0],
            c_in: xs[1],
            c_out: ws[0],
            h: xs[2],
            w: xs[3],
            k: ws[2],
        };
        let hw = g.hw();
        let taps = g.k * g.k;
        let mut out = vec![T::zero(); g.batch * g.c_out * hw];
        let (wp, r, l) = (g.padded_width(), g.padded_len(), g.grid_len());
        let mut xp = vec![T::zero(); if g.k == 1 { 0 } else { g.c_in * r }];
        let mut grid = vec![T::zero(); if g.k == 1 { 0 } else { g.c_out * l }];
        for b in 0..g.batch {
            let xb = &self.data()[b * g.c_in * hw..(b + 1) * g.c_in * hw];
            let ob = &mut out[b * g.c_out * hw..(b + 1) * g.c_out * hw];
            if g.k == 1 {
                gemm(MatRef::new(weight.data(), g.c_out, g.c_in), MatRef::new(xb, g.c_in, hw), T::zero(), ob);
            } else {
                pad_into(g, g.c_in, xb, &mut xp);
                for tap in 0..taps {
                    gemm_view(
                        (g.c_out, g.c_in, l),
                        (weight.data(), tap, (g.c_in * taps) as isize, taps as isize),
                        (&xp, g.tap_offset(tap), r as isize, 1),
                        if tap == 0 { T::zero() } else { T::one() },
                        (&mut grid, 0, l as isize, 1),
                    );
                }
                for co in 0..g.c_out {
                    for y in 0..g.h {
                        let src = co * l + y * wp;
                        ob[co * hw + y * g.w..co * hw + (y + 1) * g.w].copy_from_slice(&grid[src..src + g.w]);
                    }
                }
            }
            if let Some(bias) = bias {
                for (co, &bv) in bias.data().iter().enumerate() {
                    ob[co * hw..(co + 1) * hw].iter_mut().for_each(|v| *v += bv);
                }
            }
        }
        let mut inputs = vec![self.clone(), weight.clone()];
        inputs.extend(bias.cloned());
        Ok(Tensor::from_op(
            out,
            vec![g.batch, g.c_out, g.h, g.w],
            inputs,
            Conv2d { geom: g },
        ))
    }

    /// 2x2 max pooling with stride 2 over `[batch, c, h, w]`, even `h` and `w`.
    pub fn max_pool2d(&self) -> Result<Tensor<T>> {
        let s = self.shape();
        if s.len() != 4 || !s[2].is_multiple_of(2) || !s[3].is_multiple_of(2) {
            return invalid("max_pool2d", format!("needs [b, c, even h, even w], got {s:?}"));
        }
        let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
        let (oh, ow) = (h / 2, w / 2);
        let x = self.data();
        let mut out = Vec::with_capacity(planes * oh * ow);
        let mut argmax = Vec::with_capacity(planes * oh * ow);
        for p in 0..planes {
            let base = p * h * w;
            for y in 0..oh {
                for xx in 0..ow {
                    let candidates = [
                        base + 2 * y * w + 2 * xx,
                        base + 2 * y * w + 2 * xx + 1,
                        base + (2 * y + 1) * w + 2 * xx,
                        base + (2 * y + 1) * w + 2 * xx + 1,
                    ];
                    let mut best = candidates[0];
                    for &c in &candidates[1..] {
                        if x[c] > x[best] {
                            best = c;
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best);
                }
            }
        }
        Ok(Tensor::from_op(
            out,
            vec![s[0], s[1], oh, ow],
            vec![self.clone()],
            MaxPool2 { argmax },
        ))
    }
}
