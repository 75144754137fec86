use super::kernels::{col2im, gemm, im2col, sum, ConvGeometry};
use super::tape::{accumulate, Op, Tape, Var};
use super::{Element, Tensor};
use crate::error::{Error, Result};

impl<T: Element> Tape<T> {
    /// 2-D convolution of `[B, C, H, W]` with `[K, C, kh, kw]` filters.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let (xi, wi, bi) = (self.index(input)?, self.index(weight)?, self.index(bias)?);
        let x = &self.node(xi).value;
        let w = &self.node(wi).value;
        let b = &self.node(bi).value;
        let geom = conv_geometry(x.shape(), w.shape(), b.shape(), stride, padding)?;
        let batch = x.shape()[0];
        let kernels = w.shape()[0];
        let (rows, ncols) = (geom.col_rows(), geom.col_cols());
        let in_plane = geom.channels * geom.height * geom.width;

        let mut out = vec![T::zero(); batch * kernels * ncols];
        let mut cols = vec![T::zero(); rows * ncols];
        for n in 0..batch {
            im2col(&x.data()[n * in_plane..(n + 1) * in_plane], &geom, &mut cols);
            let dst = &mut out[n * kernels * ncols..(n + 1) * kernels * ncols];
            for (row, &bk) in dst.chunks_exact_mut(ncols).zip(b.data()) {
                row.iter_mut().for_each(|v| *v = bk);
            }
            gemm((kernels, rows, ncols), w.data(), (rows, 1), &cols, (ncols, 1), T::one(), dst);
        }
        let value = Tensor::new(&[batch, kernels, geom.out_h(), geom.out_w()], out)?;
        self.push(
            "conv2d",
            value,
            Op::Conv2d {
                input: xi,
                weight: wi,
                bias: bi,
                geom,
            },
            &[xi, wi, bi],
        )
    }

    pub(super) fn conv2d_backward(
        &self,
        xi: usize,
        wi: usize,
        bi: usize,
        geom: &ConvGeometry,
        g: &[T],
        grads: &mut [Option<Vec<T>>],
    ) {
        let x = &self.node(xi).value;
        let w = &self.node(wi).value;
        let batch = x.shape()[0];
        let kernels = w.shape()[0];
        let (rows, ncols) = (geom.col_rows(), geom.col_cols());
        let in_plane = geom.channels * geom.height * geom.width;
        let need_x = self.node(xi).requires_grad;
        let need_w = self.node(wi).requires_grad;
        let need_b = self.node(bi).requires_grad;

        if need_b {
            let mut db = vec![T::zero(); kernels];
            for n in 0..batch {
                for (k, dbk) in db.iter_mut().enumerate() {
                    let off = (n * kernels + k) * ncols;
                    *dbk += sum(&g[off..off + ncols]);
                }
            }
            accumulate(grads, bi, db);
        }
        if !(need_w || need_x) {
            return;
        }
        let mut dw = vec![T::zero(); if need_w { w.len() } else { 0 }];
        let mut dx = vec![T::zero(); if need_x { x.len() } else { 0 }];
        let mut cols = vec![T::zero(); rows * ncols];
        let mut dcols = vec![T::zero(); if need_x { rows * ncols } else { 0 }];
        for n in 0..batch {
            let gn = &g[n * kernels * ncols..(n + 1) * kernels * ncols];
            if need_w {
                im2col(&x.data()[n * in_plane..(n + 1) * in_plane], geom, &mut cols);
                gemm((kernels, ncols, rows), gn, (ncols, 1), &cols, (1, ncols), T::one(), &mut dw);
            }
            if need_x {
                gemm((rows, kernels, ncols), w.data(), (1, rows), gn, (ncols, 1), T::zero(), &mut dcols);
                col2im(&dcols, geom, &mut dx[n * in_plane..(n + 1) * in_plane]);
            }
        }
        if need_w {
            accumulate(grads, wi, dw);
        }
        if need_x {
            accumulate(grads, xi, dx);
        }
    }
}

fn conv_geometry(
    x: &[usize],
    w: &[usize],
    b: &[usize],
    stride: usize,
    padding: usize,
) -> Result<ConvGeometry> {
    if x.len() != 4 {
        return Err(Error::shape(
            "conv2d",
            format!("input must be [B, C, H, W], got {x:?}"),
        ));
    }
    if w.len() != 4 {
        return Err(Error::shape(
            "conv2d",
            format!("weight must be [K, C, kh, kw], got {w:?}"),
        ));
    }
    if w[1] != x[1] {
        return Err(Error::shape(
            "conv2d",
            format!(
                "channel dimension: input has C={} but weight expects C={}",
                x[1], w[1]
            ),
        ));
    }
    if b != [w[0]] {
        return Err(Error::shape(
            "conv2d",
            format!("bias must be [{}], got {b:?}", w[0]),
        ));
    }
    if stride == 0 {
        return Err(Error::invalid("conv2d stride must be at least 1"));
    }
    if w[2] > x[2] + 2 * padding {
        return Err(Error::shape(
            "conv2d",
            format!(
                "height dimension: kernel {} exceeds padded extent {}",
                w[2],
                x[2] + 2 * padding
            ),
        ));
    }
    if w[3] > x[3] + 2 * padding {
        return Err(Error::shape(
            "conv2d",
            format!(
                "width dimension: kernel {} exceeds padded extent {}",
                w[3],
                x[3] + 2 * padding
            ),
        ));
    }
    Ok(ConvGeometry {
        channels: x[1],
        height: x[2],
        width: x[3],
        kernel_h: w[2],
        kernel_w: w[3],
        stride,
        padding,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(x: Tensor<f64>, w: Tensor<f64>, b: Tensor<f64>, s: usize, p: usize) -> Result<Tensor<f64>> {
        let mut tape = Tape::new();
        let (x, w, b) = (tape.constant(x), tape.constant(w), tape.constant(b));
        let y = tape.conv2d(x, w, b, s, p)?;
        Ok(tape.value(y).clone())
    }

    #[test]
    fn one_by_one_kernel_scales() {
        let y = run(
            Tensor::full(&[1, 1, 3, 3], 1.0),
            Tensor::full(&[1, 1, 1, 1], 2.0),
            Tensor::zeros(&[1]),
            1,
            0,
        )
        .unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
        assert!(y.data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn full_kernel_sums_window() {
        let y = run(
            Tensor::full(&[1, 1, 3, 3], 1.0),
            Tensor::full(&[1, 1, 3, 3], 1.0),
            Tensor::full(&[1], 0.5),
            1,
            0,
        )
        .unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[9.5]);
    }

    #[test]
    fn output_extent_formula() {
        let y = run(
            Tensor::zeros(&[2, 3, 7, 6]),
            Tensor::zeros(&[4, 3, 3, 2]),
            Tensor::zeros(&[4]),
            2,
            1,
        )
        .unwrap();
        assert_eq!(y.shape(), &[2, 4, (7 + 2 - 3) / 2 + 1, (6 + 2 - 2) / 2 + 1]);
    }

    #[test]
    fn identity_for_unit_kernel() {
        let data: Vec<f64> = (0..20).map(|i| i as f64 * 0.3 - 2.0).collect();
        let x = Tensor::new(&[1, 1, 4, 5], data.clone()).unwrap();
        let y = run(x, Tensor::full(&[1, 1, 1, 1], 1.0), Tensor::zeros(&[1]), 1, 0).unwrap();
        assert_eq!(y.data(), &data[..]);
    }

    #[test]
    fn mismatch_names_dimension() {
        let err = run(
            Tensor::zeros(&[1, 2, 4, 4]),
            Tensor::zeros(&[1, 3, 3, 3]),
            Tensor::zeros(&[1]),
            1,
            0,
        )
        .unwrap_err();
        assert!(err.to_string().contains("channel"), "{err}");

        let err = run(
            Tensor::zeros(&[1, 1, 2, 4]),
            Tensor::zeros(&[1, 1, 3, 3]),
            Tensor::zeros(&[1]),
            1,
            0,
        )
        .unwrap_err();
        assert!(err.to_string().contains("height"), "{err}");
    }
}
