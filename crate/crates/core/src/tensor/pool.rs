use super::tape::{accumulate, Op, Tape, Var};
use super::{Element, Tensor};
use crate::error::{Error, Result};

impl<T: Element> Tape<T> {
    /// Max pooling over `k x k` windows. Ties go to the first element in
    /// row-major window order.
    pub fn maxpool2d(&mut self, input: Var, k: usize, stride: usize) -> Result<Var> {
        let xi = self.index(input)?;
        let x = &self.node(xi).value;
        let s = x.shape();
        if s.len() != 4 {
            return Err(Error::shape(
                "maxpool2d",
                format!("input must be [B, C, H, W], got {s:?}"),
            ));
        }
        if k == 0 || stride == 0 {
            return Err(Error::invalid("maxpool2d window and stride must be positive"));
        }
        let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
        if k > h || k > w {
            return Err(Error::shape(
                "maxpool2d",
                format!("window {k} exceeds spatial extent {h}x{w}"),
            ));
        }
        let (oh, ow) = ((h - k) / stride + 1, (w - k) / stride + 1);
        let mut out = Vec::with_capacity(b * c * oh * ow);
        let mut argmax = Vec::with_capacity(b * c * oh * ow);
        let xd = x.data();
        for plane in 0..b * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + oy * stride * w + ox * stride;
                    for dy in 0..k {
                        let row = base + (oy * stride + dy) * w + ox * stride;
                        for idx in row..row + k {
                            if xd[idx] > xd[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(xd[best]);
                    argmax.push(best);
                }
            }
        }
        let value = Tensor::new(&[b, c, oh, ow], out)?;
        self.push("maxpool2d", value, Op::MaxPool2d { input: xi, argmax }, &[xi])
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        let xi = self.index(input)?;
        let x = &self.node(xi).value;
        let value = x.map(|v| if v > T::zero() { v } else { T::zero() });
        self.push("relu", value, Op::Relu { input: xi }, &[xi])
    }

    /// `[B, C, H, W] -> [B, C]` spatial mean.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let xi = self.index(input)?;
        let x = &self.node(xi).value;
        let s = x.shape();
        if s.len() != 4 {
            return Err(Error::shape(
                "global_avg_pool",
                format!("input must be [B, C, H, W], got {s:?}"),
            ));
        }
        let hw = s[2] * s[3];
        let inv = T::one() / T::from_usize(hw).unwrap();
        let out = x
            .data()
            .chunks_exact(hw)
            .map(|p| super::kernels::sum(p) * inv)
            .collect();
        let value = Tensor::new(&[s[0], s[1]], out)?;
        self.push("global_avg_pool", value, Op::GlobalAvgPool { input: xi }, &[xi])
    }

    pub(super) fn gap_backward(&self, xi: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        if !self.node(xi).requires_grad {
            return;
        }
        let s = self.node(xi).value.shape();
        let hw = s[2] * s[3];
        let inv = T::one() / T::from_usize(hw).unwrap();
        let mut dx = Vec::with_capacity(g.len() * hw);
        for &gv in g {
            dx.extend(std::iter::repeat_n(gv * inv, hw));
        }
        accumulate(grads, xi, dx);
    }
}
