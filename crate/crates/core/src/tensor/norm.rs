use super::kernels::{dot, sum};
use super::tape::{accumulate, Op, Tape, Var};
use super::{Element, Mode, Tensor};
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Non-learnable per-channel statistics of a batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormStats<T = f32> {
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub eps: T,
    pub momentum: T,
}

impl<T: Element> BatchNormStats<T> {
    pub fn new(channels: usize) -> Self {
        BatchNormStats {
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            eps: T::from_f64_lossy(BN_EPS),
            momentum: T::from_f64_lossy(BN_MOMENTUM),
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    /// `running <- (1 - momentum) * running + momentum * batch`.
    pub fn update(&mut self, m: &BatchMoments<T>) {
        let keep = T::one() - self.momentum;
        for c in 0..self.channels() {
            self.running_mean[c] = keep * self.running_mean[c] + self.momentum * m.mean[c];
            self.running_var[c] = keep * self.running_var[c] + self.momentum * m.var_unbiased[c];
        }
    }
}

/// Per-channel batch statistics observed in a training-mode forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchMoments<T = f32> {
    pub mean: Vec<T>,
    pub var_unbiased: Vec<T>,
}

pub(super) struct BnSaved<T> {
    normalized: Vec<T>,
    inv_std: Vec<T>,
    training: bool,
}

/// Learnable affine parameters plus running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState<T = f32> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub stats: BatchNormStats<T>,
}

impl<T: Element> BatchNormState<T> {
    pub fn new(channels: usize) -> Self {
        BatchNormState {
            gamma: Tensor::full(&[channels], T::one()).into_param(),
            beta: Tensor::zeros(&[channels]).into_param(),
            stats: BatchNormStats::new(channels),
        }
    }

    pub fn channels(&self) -> usize {
        self.stats.channels()
    }

    /// Records the layer on `tape`; in training mode the running
    /// statistics are updated from the batch. Returns the output and the
    /// `(gamma, beta)` leaves.
    pub fn forward(&mut self, tape: &mut Tape<T>, x: Var, mode: Mode) -> Result<(Var, [Var; 2])> {
        let g = tape.param(&self.gamma);
        let b = tape.param(&self.beta);
        let (y, moments) = tape.batchnorm2d(x, g, b, &self.stats, mode)?;
        if let Some(m) = moments {
            self.stats.update(&m);
        }
        Ok((y, [g, b]))
    }

    /// Inference-only path; never touches the running statistics.
    pub fn forward_eval(&self, tape: &mut Tape<T>, x: Var) -> Result<(Var, [Var; 2])> {
        let g = tape.param(&self.gamma);
        let b = tape.param(&self.beta);
        let (y, _) = tape.batchnorm2d(x, g, b, &self.stats, Mode::Eval)?;
        Ok((y, [g, b]))
    }
}

impl<T: Element> Tape<T> {
    /// Per-channel batch normalisation of `[B, C, H, W]`.
    ///
    /// Training mode normalises with the biased batch variance and returns
    /// the batch moments (unbiased variance) for the caller to fold into the
    /// running statistics. Eval mode uses `stats` directly.
    pub fn batchnorm2d(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        stats: &BatchNormStats<T>,
        mode: Mode,
    ) -> Result<(Var, Option<BatchMoments<T>>)> {
        let (xi, gi, bi) = (self.index(input)?, self.index(gamma)?, self.index(beta)?);
        let x = &self.node(xi).value;
        let s = x.shape();
        if s.len() != 4 {
            return Err(Error::shape(
                "batchnorm2d",
                format!("input must be [B, C, H, W], got {s:?}"),
            ));
        }
        let (batch, ch, hw) = (s[0], s[1], s[2] * s[3]);
        let gv = self.node(gi).value.data();
        let bv = self.node(bi).value.data();
        if gv.len() != ch || bv.len() != ch || stats.channels() != ch {
            return Err(Error::shape(
                "batchnorm2d",
                format!(
                    "channel dimension: input has {ch}, gamma {}, beta {}, stats {}",
                    gv.len(),
                    bv.len(),
                    stats.channels()
                ),
            ));
        }
        let count = batch * hw;
        let training = mode == Mode::Train;
        if training && count < 2 {
            return Err(Error::invalid(format!(
                "batchnorm2d needs at least 2 values per channel in training mode, got {count}"
            )));
        }
        let xd = x.data();
        let n = T::from_usize(count).unwrap();
        let mut normalized = vec![T::zero(); xd.len()];
        let mut out = vec![T::zero(); xd.len()];
        let mut inv_std = vec![T::zero(); ch];
        let mut moments = training.then(|| BatchMoments {
            mean: vec![T::zero(); ch],
            var_unbiased: vec![T::zero(); ch],
        });
        for c in 0..ch {
            let planes = (0..batch).map(|b| (b * ch + c) * hw);
            let (mean, istd) = if training {
                let mut total = T::zero();
                for off in planes.clone() {
                    total += sum(&xd[off..off + hw]);
                }
                let mean = total / n;
                let mut sq = T::zero();
                for off in planes.clone() {
                    let mut acc = T::zero();
                    for &v in &xd[off..off + hw] {
                        let d = v - mean;
                        acc += d * d;
                    }
                    sq += acc;
                }
                let var = sq / n;
                if let Some(m) = moments.as_mut() {
                    m.mean[c] = mean;
                    m.var_unbiased[c] = sq / (n - T::one());
                }
                (mean, T::one() / (var + stats.eps).sqrt())
            } else {
                (
                    stats.running_mean[c],
                    T::one() / (stats.running_var[c] + stats.eps).sqrt(),
                )
            };
            inv_std[c] = istd;
            for off in planes {
                for i in off..off + hw {
                    let xh = (xd[i] - mean) * istd;
                    normalized[i] = xh;
                    out[i] = gv[c] * xh + bv[c];
                }
            }
        }
        let value = Tensor::new(s, out)?;
        let var = self.push(
            "batchnorm2d",
            value,
            Op::BatchNorm2d {
                input: xi,
                gamma: gi,
                beta: bi,
                saved: BnSaved {
                    normalized,
                    inv_std,
                    training,
                },
            },
            &[xi, gi, bi],
        )?;
        Ok((var, moments))
    }

    pub(super) fn batchnorm_backward(
        &self,
        xi: usize,
        gi: usize,
        bi: usize,
        saved: &BnSaved<T>,
        g: &[T],
        grads: &mut [Option<Vec<T>>],
    ) {
        let s = self.node(xi).value.shape();
        let (batch, ch, hw) = (s[0], s[1], s[2] * s[3]);
        let gamma = self.node(gi).value.data();
        let n = T::from_usize(batch * hw).unwrap();
        let xh = &saved.normalized;

        let mut dgamma = vec![T::zero(); ch];
        let mut dbeta = vec![T::zero(); ch];
        for c in 0..ch {
            for b in 0..batch {
                let off = (b * ch + c) * hw;
                dbeta[c] += sum(&g[off..off + hw]);
                dgamma[c] += dot(&g[off..off + hw], &xh[off..off + hw]);
            }
        }
        if self.node(xi).requires_grad {
            let mut dx = vec![T::zero(); g.len()];
            for c in 0..ch {
                let scale = gamma[c] * saved.inv_std[c];
                for b in 0..batch {
                    let off = (b * ch + c) * hw;
                    if saved.training {
                        let mg = dbeta[c] / n;
                        let mgx = dgamma[c] / n;
                        for i in off..off + hw {
                            dx[i] = scale * (g[i] - mg - xh[i] * mgx);
                        }
                    } else {
                        for i in off..off + hw {
                            dx[i] = scale * g[i];
                        }
                    }
                }
            }
            accumulate(grads, xi, dx);
        }
        if self.node(gi).requires_grad {
            accumulate(grads, gi, dgamma);
        }
        if self.node(bi).requires_grad {
            accumulate(grads, bi, dbeta);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input() -> Tensor<f64> {
        let data = (0..2 * 3 * 4 * 4)
            .map(|i| ((i * 37) % 17) as f64 * 0.7 - 4.0 + (i % 3) as f64)
            .collect();
        Tensor::new(&[2, 3, 4, 4], data).unwrap()
    }

    #[test]
    fn training_output_is_standardised() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(input());
        let mut bn = BatchNormState::<f64>::new(3);
        let (y, _) = bn.forward(&mut tape, x, Mode::Train).unwrap();
        let y = tape.value(y).data();
        for c in 0..3 {
            let vals: Vec<f64> = (0..2)
                .flat_map(|b| y[(b * 3 + c) * 16..(b * 3 + c + 1) * 16].to_vec())
                .collect();
            let mean = vals.iter().sum::<f64>() / 32.0;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 32.0;
            assert!(mean.abs() < 1e-4);
            // eps keeps the variance marginally below one
            assert!((var - 1.0).abs() < 1e-4, "{var}");
        }
        // momentum 0.1 from {0, 1}
        assert!(bn.stats.running_mean.iter().any(|&m| m != 0.0));
    }

    #[test]
    fn inference_uses_running_stats() {
        let mut tape = Tape::<f64>::new();
        let xin = input();
        let x = tape.constant(xin.clone());
        let bn = BatchNormState::<f64>::new(3);
        let (y, _) = bn.forward_eval(&mut tape, x).unwrap();
        let k = 1.0 / (1.0 + BN_EPS).sqrt();
        for (a, b) in tape.value(y).data().iter().zip(xin.data()) {
            assert!((a - b * k).abs() < 1e-12);
        }
    }

    #[test]
    fn running_update_rule() {
        let mut stats = BatchNormStats::<f64>::new(1);
        stats.update(&BatchMoments {
            mean: vec![2.0],
            var_unbiased: vec![3.0],
        });
        assert!((stats.running_mean[0] - 0.2).abs() < 1e-15);
        assert!((stats.running_var[0] - (0.9 + 0.3)).abs() < 1e-15);
    }

    #[test]
    fn training_needs_two_values() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[1, 2, 1, 1]));
        let mut bn = BatchNormState::<f64>::new(2);
        assert!(bn.forward(&mut tape, x, Mode::Train).is_err());
        assert!(bn.forward(&mut tape, x, Mode::Eval).is_ok());
    }
}
