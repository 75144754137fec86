use std::sync::atomic::{AtomicU64, Ordering};

use super::kernels::ConvGeometry;
use super::norm::BnSaved;
use super::{ensure_finite, Element, Tensor};
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

pub(super) enum Op<T> {
    Leaf,
    Conv2d {
        input: usize,
        weight: usize,
        bias: usize,
        geom: ConvGeometry,
    },
    MaxPool2d {
        input: usize,
        argmax: Vec<usize>,
    },
    Relu {
        input: usize,
    },
    BatchNorm2d {
        input: usize,
        gamma: usize,
        beta: usize,
        saved: BnSaved<T>,
    },
    GlobalAvgPool {
        input: usize,
    },
    Concat {
        inputs: Vec<usize>,
    },
    Linear {
        input: usize,
        weight: usize,
        bias: usize,
    },
    Softmax {
        input: usize,
    },
    Sum {
        inputs: Vec<usize>,
    },
    Scale {
        input: usize,
        factor: T,
    },
    CrossEntropy {
        probs: usize,
        labels: Vec<usize>,
    },
    WeightedSum {
        input: usize,
        weights: Vec<T>,
    },
}

pub(super) struct Node<T> {
    pub value: Tensor<T>,
    pub op: Op<T>,
    pub requires_grad: bool,
}

/// Records forward operations so gradients can be replayed in reverse.
///
/// A tape is built fresh for every training step and dropped afterwards.
pub struct Tape<T = f32> {
    id: u64,
    pub(super) nodes: Vec<Node<T>>,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    /// Records a leaf. Gradients are tracked if `t.requires_grad()`.
    pub fn leaf(&mut self, mut t: Tensor<T>) -> Var {
        let requires_grad = t.requires_grad();
        t.set_grad(None);
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad,
        });
        self.var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, mut t: Tensor<T>) -> Var {
        t.set_requires_grad(false);
        self.leaf(t)
    }

    pub fn variable(&mut self, mut t: Tensor<T>) -> Var {
        t.set_requires_grad(true);
        self.leaf(t)
    }

    /// Records a copy of a parameter tensor as a gradient-tracking leaf.
    pub fn param(&mut self, t: &Tensor<T>) -> Var {
        let copy = Tensor::new(t.shape(), t.data().to_vec()).expect("valid tensor");
        self.variable(copy)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        let i = self.index(v).expect("var belongs to this tape");
        &self.nodes[i].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn var(&self, index: usize) -> Var {
        Var {
            tape: self.id,
            index,
        }
    }

    pub(super) fn index(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::Graph("variable was recorded on a different tape".into()));
        }
        Ok(v.index)
    }

    pub(super) fn node(&self, i: usize) -> &Node<T> {
        &self.nodes[i]
    }

    pub(super) fn push(
        &mut self,
        op_name: &'static str,
        value: Tensor<T>,
        op: Op<T>,
        parents: &[usize],
    ) -> Result<Var> {
        ensure_finite(value.data(), op_name)?;
        let requires_grad = parents.iter().any(|&p| self.nodes[p].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(self.var(self.nodes.len() - 1))
    }

    /// Reverse pass from a scalar loss.
    ///
    /// Returns the gradient of every tracked node; the tape itself is left
    /// untouched so the pass can be repeated.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let root = self.index(loss)?;
        let node = &self.nodes[root];
        if node.value.len() != 1 {
            return Err(Error::Graph(format!(
                "backward needs a scalar loss, got shape {:?}",
                node.value.shape()
            )));
        }
        if matches!(node.op, Op::Leaf) || !node.requires_grad {
            return Err(Error::Graph(
                "loss has no recorded history with tracked inputs".into(),
            ));
        }

        let mut grads: Vec<Option<Vec<T>>> = (0..=root).map(|_| None).collect();
        grads[root] = Some(vec![T::one()]);
        for i in (0..=root).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            ensure_finite(&g, "backward")?;
            self.backprop_node(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients {
            tape: self.id,
            grads,
        })
    }

    fn backprop_node(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            } => self.conv2d_backward(*input, *weight, *bias, geom, g, grads),
            Op::MaxPool2d { input, argmax } => {
                if self.nodes[*input].requires_grad {
                    let mut dx = vec![T::zero(); self.nodes[*input].value.len()];
                    for (&src, &gv) in argmax.iter().zip(g) {
                        dx[src] += gv;
                    }
                    accumulate(grads, *input, dx);
                }
            }
            Op::Relu { input } => {
                if self.nodes[*input].requires_grad {
                    let x = self.nodes[*input].value.data();
                    let dx = x
                        .iter()
                        .zip(g)
                        .map(|(&xv, &gv)| if xv > T::zero() { gv } else { T::zero() })
                        .collect();
                    accumulate(grads, *input, dx);
                }
            }
            Op::BatchNorm2d {
                input,
                gamma,
                beta,
                saved,
            } => self.batchnorm_backward(*input, *gamma, *beta, saved, g, grads),
            Op::GlobalAvgPool { input } => self.gap_backward(*input, g, grads),
            Op::Concat { inputs } => self.concat_backward(inputs, g, grads),
            Op::Linear {
                input,
                weight,
                bias,
            } => self.linear_backward(*input, *weight, *bias, g, grads),
            Op::Softmax { .. } => self.softmax_backward(i, g, grads),
            Op::Sum { inputs } => {
                for &p in inputs {
                    if self.nodes[p].requires_grad {
                        accumulate(grads, p, g.to_vec());
                    }
                }
            }
            Op::Scale { input, factor } => {
                if self.nodes[*input].requires_grad {
                    accumulate(grads, *input, g.iter().map(|&v| v * *factor).collect());
                }
            }
            Op::CrossEntropy { probs, labels } => {
                self.cross_entropy_backward(*probs, labels, g[0], grads)
            }
            Op::WeightedSum { input, weights } => {
                if self.nodes[*input].requires_grad {
                    accumulate(grads, *input, weights.iter().map(|&w| w * g[0]).collect());
                }
            }
        }
        Ok(())
    }
}

pub(super) fn accumulate<T: Element>(grads: &mut [Option<Vec<T>>], idx: usize, contrib: Vec<T>) {
    match &mut grads[idx] {
        Some(existing) => existing
            .iter_mut()
            .zip(&contrib)
            .for_each(|(e, &c)| *e += c),
        slot @ None => *slot = Some(contrib),
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients<T = f32> {
    tape: u64,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Element> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.index).and_then(|g| g.as_deref())
    }

    /// Adds the gradient of `v` into `target.grad`.
    ///
    /// A tracked variable that the loss does not depend on contributes zeros.
    pub fn accumulate_into(&self, v: Var, target: &mut Tensor<T>) -> Result<()> {
        if v.tape != self.tape {
            return Err(Error::Graph("gradients come from a different tape".into()));
        }
        match self.get(v) {
            Some(g) => target.accumulate_grad(g),
            None => target.accumulate_grad(&vec![T::zero(); target.len()]),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_rejects_leaf_and_foreign_vars() {
        let mut tape = Tape::<f64>::new();
        let x = tape.variable(Tensor::scalar(2.0));
        assert!(matches!(tape.backward(x), Err(Error::Graph(_))));

        let mut other = Tape::<f64>::new();
        let y = other.variable(Tensor::scalar(1.0));
        let z = other.scale(y, 3.0).unwrap();
        assert!(tape.backward(z).is_err());
        assert!(other.backward(z).is_ok());
    }

    #[test]
    fn backward_rejects_untracked_history() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::scalar(2.0));
        let y = tape.scale(x, 2.0).unwrap();
        assert!(tape.backward(y).is_err());
    }

    #[test]
    fn repeated_backward_accumulates_twice() {
        let mut tape = Tape::<f64>::new();
        let mut w = Tensor::new(&[3], vec![1.0, -2.0, 0.5]).unwrap().into_param();
        let wv = tape.param(&w);
        let r = tape.relu(wv).unwrap();
        let loss = tape.weighted_sum(r, &[3.0, 1.0, 2.0]).unwrap();
        let g = tape.backward(loss).unwrap();
        g.accumulate_into(wv, &mut w).unwrap();
        let once = w.grad().unwrap().to_vec();
        let g2 = tape.backward(loss).unwrap();
        g2.accumulate_into(wv, &mut w).unwrap();
        let twice = w.grad().unwrap();
        for (a, b) in once.iter().zip(twice) {
            assert_eq!(2.0 * a, *b);
        }
        assert_eq!(once, vec![3.0, 0.0, 2.0]);
    }
}
