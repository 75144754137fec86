use super::kernels::{axpy, dot};
use super::tape::{accumulate, Op, Tape, Var};
use super::{Element, Tensor};
use crate::error::{Error, Result};

/// Lower clamp on probabilities inside the log of the cross-entropy.
pub const PROB_FLOOR: f64 = 1e-12;

fn matrix_dims(op: &'static str, s: &[usize]) -> Result<(usize, usize)> {
    match s {
        [r, c] => Ok((*r, *c)),
        _ => Err(Error::shape(op, format!("expected a [rows, cols] matrix, got {s:?}"))),
    }
}

impl<T: Element> Tape<T> {
    /// `input · weightᵀ + bias` for `[B, F] x [O, F] -> [B, O]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (xi, wi, bi) = (self.index(input)?, self.index(weight)?, self.index(bias)?);
        let x = &self.node(xi).value;
        let w = &self.node(wi).value;
        let b = &self.node(bi).value;
        let (batch, feat) = matrix_dims("linear", x.shape())?;
        let (outs, wfeat) = matrix_dims("linear", w.shape())?;
        if wfeat != feat {
            return Err(Error::shape(
                "linear",
                format!("inner dimension: input has {feat} features, weight expects {wfeat}"),
            ));
        }
        if b.shape() != [outs] {
            return Err(Error::shape(
                "linear",
                format!("bias must be [{outs}], got {:?}", b.shape()),
            ));
        }
        let mut out = Vec::with_capacity(batch * outs);
        for r in 0..batch {
            let row = &x.data()[r * feat..(r + 1) * feat];
            for o in 0..outs {
                out.push(dot(row, &w.data()[o * feat..(o + 1) * feat]) + b.data()[o]);
            }
        }
        let value = Tensor::new(&[batch, outs], out)?;
        self.push(
            "linear",
            value,
            Op::Linear {
                input: xi,
                weight: wi,
                bias: bi,
            },
            &[xi, wi, bi],
        )
    }

    pub(super) fn linear_backward(
        &self,
        xi: usize,
        wi: usize,
        bi: usize,
        g: &[T],
        grads: &mut [Option<Vec<T>>],
    ) {
        let x = &self.node(xi).value;
        let w = &self.node(wi).value;
        let (batch, feat) = (x.shape()[0], x.shape()[1]);
        let outs = w.shape()[0];
        if self.node(xi).requires_grad {
            let mut dx = vec![T::zero(); batch * feat];
            for r in 0..batch {
                let drow = &mut dx[r * feat..(r + 1) * feat];
                for o in 0..outs {
                    axpy(drow, g[r * outs + o], &w.data()[o * feat..(o + 1) * feat]);
                }
            }
            accumulate(grads, xi, dx);
        }
        if self.node(wi).requires_grad {
            let mut dw = vec![T::zero(); outs * feat];
            for r in 0..batch {
                let row = &x.data()[r * feat..(r + 1) * feat];
                for o in 0..outs {
                    axpy(&mut dw[o * feat..(o + 1) * feat], g[r * outs + o], row);
                }
            }
            accumulate(grads, wi, dw);
        }
        if self.node(bi).requires_grad {
            let mut db = vec![T::zero(); outs];
            for r in 0..batch {
                for o in 0..outs {
                    db[o] += g[r * outs + o];
                }
            }
            accumulate(grads, bi, db);
        }
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax(&mut self, input: Var) -> Result<Var> {
        let xi = self.index(input)?;
        let x = &self.node(xi).value;
        let (_, k) = matrix_dims("softmax", x.shape())?;
        let mut out = Vec::with_capacity(x.len());
        for row in x.data().chunks_exact(k) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let start = out.len();
            let mut total = T::zero();
            for &v in row {
                let e = (v - max).exp();
                total += e;
                out.push(e);
            }
            out[start..].iter_mut().for_each(|e| *e = *e / total);
        }
        let value = Tensor::new(x.shape(), out)?;
        self.push("softmax", value, Op::Softmax { input: xi }, &[xi])
    }

    pub(super) fn softmax_backward(&self, yi: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let Op::Softmax { input: xi } = self.node(yi).op else {
            unreachable!()
        };
        if !self.node(xi).requires_grad {
            return;
        }
        let y = &self.node(yi).value;
        let k = y.shape()[1];
        let mut dx = Vec::with_capacity(y.len());
        for (prow, grow) in y.data().chunks_exact(k).zip(g.chunks_exact(k)) {
            let inner = dot(prow, grow);
            dx.extend(prow.iter().zip(grow).map(|(&p, &gv)| p * (gv - inner)));
        }
        accumulate(grads, xi, dx);
    }

    /// Mean negative log-likelihood of `labels` under row distributions `probs`.
    pub fn cross_entropy(&mut self, probs: Var, labels: &[usize]) -> Result<Var> {
        let pi = self.index(probs)?;
        let p = &self.node(pi).value;
        let (batch, k) = matrix_dims("cross_entropy", p.shape())?;
        if labels.len() != batch {
            return Err(Error::shape(
                "cross_entropy",
                format!("batch dimension: {batch} rows but {} labels", labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::invalid(format!(
                "label {bad} out of range for {k} classes"
            )));
        }
        let floor = T::from_f64_lossy(PROB_FLOOR);
        let mut total = T::zero();
        for (r, &l) in labels.iter().enumerate() {
            total += -p.data()[r * k + l].max(floor).ln();
        }
        let loss = total / T::from_usize(batch).unwrap();
        self.push(
            "cross_entropy",
            Tensor::scalar(loss),
            Op::CrossEntropy {
                probs: pi,
                labels: labels.to_vec(),
            },
            &[pi],
        )
    }

    pub(super) fn cross_entropy_backward(
        &self,
        pi: usize,
        labels: &[usize],
        g: T,
        grads: &mut [Option<Vec<T>>],
    ) {
        if !self.node(pi).requires_grad {
            return;
        }
        let p = &self.node(pi).value;
        let k = p.shape()[1];
        let floor = T::from_f64_lossy(PROB_FLOOR);
        let scale = g / T::from_usize(labels.len()).unwrap();
        let mut dp = vec![T::zero(); p.len()];
        for (r, &l) in labels.iter().enumerate() {
            let pv = p.data()[r * k + l];
            if pv > floor {
                dp[r * k + l] = -scale / pv;
            }
        }
        accumulate(grads, pi, dp);
    }

    /// Concatenates `[B, F_i]` matrices along the feature axis.
    pub fn concat(&mut self, inputs: &[Var]) -> Result<Var> {
        let idx: Vec<usize> = inputs.iter().map(|&v| self.index(v)).collect::<Result<_>>()?;
        let first = idx
            .first()
            .ok_or_else(|| Error::invalid("concat needs at least one input"))?;
        let (batch, _) = matrix_dims("concat", self.node(*first).value.shape())?;
        let mut widths = Vec::with_capacity(idx.len());
        for &i in &idx {
            let (b, f) = matrix_dims("concat", self.node(i).value.shape())?;
            if b != batch {
                return Err(Error::shape(
                    "concat",
                    format!("batch dimension: expected {batch}, got {b}"),
                ));
            }
            widths.push(f);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(batch * total);
        for r in 0..batch {
            for (&i, &f) in idx.iter().zip(&widths) {
                out.extend_from_slice(&self.node(i).value.data()[r * f..(r + 1) * f]);
            }
        }
        let value = Tensor::new(&[batch, total], out)?;
        self.push("concat", value, Op::Concat { inputs: idx.clone() }, &idx)
    }

    pub(super) fn concat_backward(&self, inputs: &[usize], g: &[T], grads: &mut [Option<Vec<T>>]) {
        let widths: Vec<usize> = inputs.iter().map(|&i| self.node(i).value.shape()[1]).collect();
        let total: usize = widths.iter().sum();
        let batch = g.len() / total;
        let mut offset = 0;
        for (&i, &f) in inputs.iter().zip(&widths) {
            if self.node(i).requires_grad {
                let mut d = Vec::with_capacity(batch * f);
                for r in 0..batch {
                    d.extend_from_slice(&g[r * total + offset..r * total + offset + f]);
                }
                accumulate(grads, i, d);
            }
            offset += f;
        }
    }

    /// Elementwise sum of equally shaped values.
    pub fn sum(&mut self, inputs: &[Var]) -> Result<Var> {
        let idx: Vec<usize> = inputs.iter().map(|&v| self.index(v)).collect::<Result<_>>()?;
        let first = *idx
            .first()
            .ok_or_else(|| Error::invalid("sum needs at least one input"))?;
        let shape = self.node(first).value.shape().to_vec();
        let mut out = vec![T::zero(); self.node(first).value.len()];
        for &i in &idx {
            let v = &self.node(i).value;
            if v.shape() != shape.as_slice() {
                return Err(Error::shape(
                    "sum",
                    format!("operand shape {:?} differs from {shape:?}", v.shape()),
                ));
            }
            out.iter_mut().zip(v.data()).for_each(|(o, &x)| *o += x);
        }
        let value = Tensor::new(&shape, out)?;
        self.push("sum", value, Op::Sum { inputs: idx.clone() }, &idx)
    }

    pub fn scale(&mut self, input: Var, factor: T) -> Result<Var> {
        let xi = self.index(input)?;
        let value = self.node(xi).value.map(|v| v * factor);
        self.push("scale", value, Op::Scale { input: xi, factor }, &[xi])
    }

    /// Scalar `Σ weights ⊙ input`; projects any tensor onto a loss.
    pub fn weighted_sum(&mut self, input: Var, weights: &[T]) -> Result<Var> {
        let xi = self.index(input)?;
        let x = &self.node(xi).value;
        if weights.len() != x.len() {
            return Err(Error::shape(
                "weighted_sum",
                format!("{} weights for {} values", weights.len(), x.len()),
            ));
        }
        let s = dot(x.data(), weights);
        self.push(
            "weighted_sum",
            Tensor::scalar(s),
            Op::WeightedSum {
                input: xi,
                weights: weights.to_vec(),
            },
            &[xi],
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn softmax_of(row: &[f64]) -> Vec<f64> {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::new(&[1, row.len()], row.to_vec()).unwrap());
        let y = tape.softmax(x).unwrap();
        tape.value(y).data().to_vec()
    }

    #[test]
    fn linear_identity_and_bias() {
        let mut tape = Tape::<f64>::new();
        let xdata: Vec<f64> = (0..6).map(|i| i as f64 - 2.5).collect();
        let x = tape.constant(Tensor::new(&[2, 3], xdata.clone()).unwrap());
        let mut eye = vec![0.0; 9];
        (0..3).for_each(|i| eye[i * 4] = 1.0);
        let w = tape.constant(Tensor::new(&[3, 3], eye).unwrap());
        let b = tape.constant(Tensor::zeros(&[3]));
        let y = tape.linear(x, w, b).unwrap();
        assert_eq!(tape.value(y).data(), &xdata[..]);

        let w0 = tape.constant(Tensor::zeros(&[2, 3]));
        let b0 = tape.constant(Tensor::new(&[2], vec![0.25, -1.0]).unwrap());
        let y = tape.linear(x, w0, b0).unwrap();
        assert_eq!(tape.value(y).data(), &[0.25, -1.0, 0.25, -1.0]);

        let bad = tape.constant(Tensor::zeros(&[2, 4]));
        assert!(tape.linear(x, bad, b0).is_err());
    }

    #[test]
    fn softmax_values() {
        let u = softmax_of(&[0.0; 6]);
        assert!(u.iter().all(|&p| (p - 1.0 / 6.0).abs() < 1e-15));
        let p = softmax_of(&[1.0, 2.0, 3.0]);
        for (a, b) in p.iter().zip([0.09003, 0.24473, 0.66524]) {
            assert!((a - b).abs() < 1e-5);
        }
        let base = softmax_of(&[0.3, -1.2, 2.0, 0.0]);
        let shifted = softmax_of(&[100.3, 98.8, 102.0, 100.0]);
        for (a, b) in base.iter().zip(&shifted) {
            assert!((a - b).abs() < 1e-6);
        }
        let big = softmax_of(&[1e4, -1e4, 3.0, 1e4]);
        assert!((big.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn cross_entropy_values() {
        let mut tape = Tape::<f64>::new();
        let u = tape.constant(Tensor::full(&[2, 6], 1.0 / 6.0));
        let l = tape.cross_entropy(u, &[0, 5]).unwrap();
        assert!((tape.value(l).data()[0] - 6f64.ln()).abs() < 1e-12);

        let mut onehot = vec![0.0; 6];
        onehot[2] = 1.0;
        let p = tape.constant(Tensor::new(&[1, 6], onehot).unwrap());
        let l = tape.cross_entropy(p, &[2]).unwrap();
        assert!(tape.value(l).data()[0] <= 1e-6);
        // clamped, not infinite
        let l = tape.cross_entropy(p, &[1]).unwrap();
        assert!((tape.value(l).data()[0] - (1e12f64).ln()).abs() < 1e-9);

        assert!(tape.cross_entropy(p, &[6]).is_err());
    }

    #[test]
    fn concat_orders_features() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::new(&[2, 1], vec![1.0, 2.0]).unwrap());
        let b = tape.constant(Tensor::new(&[2, 2], vec![3.0, 4.0, 5.0, 6.0]).unwrap());
        let c = tape.concat(&[a, b]).unwrap();
        assert_eq!(tape.value(c).data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
    }
}
