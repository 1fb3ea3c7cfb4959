use crate::element::Element;
use crate::error::{invalid, Result};
use crate::tensor::{BackwardOp, Tensor};

/// Source taps for one output coordinate (half-pixel centers, edge clamped).
#[derive(Clone, Copy)]
struct Taps {
    i0: usize,
    i1: usize,
    w0: f64,
    w1: f64,
}

fn taps(in_len: usize, out_len: usize) -> Vec<Taps> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            let w1 = src - i0 as f64;
            Taps {
                i0,
                i1,
                w0: 1.0 - w1,
                w1,
            }
        })
        .collect()
}

struct Bilinear {
    h: usize,
    w: usize,
    rows: Vec<Taps>,
    cols: Vec<Taps>,
}

impl<T: Element> BackwardOp<T> for Bilinear {
    fn name(&self) -> &'static str {
        "resize_bilinear"
    }

    fn backward(&self, inputs: &[Tensor<T>], _output: &[T], grad: &[T]) -> Vec<Option<Vec<T>>> {
        let (oh, ow) = (self.rows.len(), self.cols.len());
        let planes = inputs[0].numel() / (self.h * self.w);
        let mut g = vec![T::zero(); inputs[0].numel()];
        for p in 0..planes {
            let gp = &mut g[p * self.h * self.w..(p + 1) * self.h * self.w];
            let go = &grad[p * oh * ow..(p + 1) * oh * ow];
            for (y, ty) in self.rows.iter().enumerate() {
                for (x, tx) in self.cols.iter().enumerate() {
                    let v = go[y * ow + x];
                    gp[ty.i0 * self.w + tx.i0] += v * T::of(ty.w0 * tx.w0);
                    gp[ty.i0 * self.w + tx.i1] += v * T::of(ty.w0 * tx.w1);
                    gp[ty.i1 * self.w + tx.i0] += v * T::of(ty.w1 * tx.w0);
                    gp[ty.i1 * self.w + tx.i1] += v * T::of(ty.w1 * tx.w1);
                }
            }
        }
        vec![Some(g)]
    }
}

impl<T: Element> Tensor<T> {
    /// Bilinear resize of the last two axes of a `[.., h, w]` tensor, using
    /// half-pixel centers (no corner alignment). Returns `self` unchanged
    /// when the size already matches.
    pub fn resize_bilinear(&self, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
        let s = self.shape();
        if s.len() < 2 || out_h == 0 || out_w == 0 || s[s.len() - 1] == 0 || s[s.len() - 2] == 0 {
            return invalid("resize_bilinear", format!("cannot resize {s:?} to {out_h}x{out_w}"));
        }
        let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
        if (h, w) == (out_h, out_w) {
            return Ok(self.clone());
        }
        let rows = taps(h, out_h);
        let cols = taps(w, out_w);
        let planes = self.numel() / (h * w);
        let x = self.data();
        let mut out = Vec::with_capacity(planes * out_h * out_w);
        for p in 0..planes {
            let xp = &x[p * h * w..(p + 1) * h * w];
            for ty in &rows {
                for tx in &cols {
                    let v = xp[ty.i0 * w + tx.i0].as_f64() * ty.w0 * tx.w0
                        + xp[ty.i0 * w + tx.i1].as_f64() * ty.w0 * tx.w1
                        + xp[ty.i1 * w + tx.i0].as_f64() * ty.w1 * tx.w0
                        + xp[ty.i1 * w + tx.i1].as_f64() * ty.w1 * tx.w1;
                    out.push(T::of(v));
                }
            }
        }
        let mut shape = s.to_vec();
        let r = shape.len();
        shape[r - 2] = out_h;
        shape[r - 1] = out_w;
        Ok(Tensor::from_op(out, shape, vec![self.clone()], Bilinear { h, w, rows, cols }))
    }
}
