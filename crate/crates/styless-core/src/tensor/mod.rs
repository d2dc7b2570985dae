//! Dense f64 tensors with define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] records every primitive executed during a forward pass and
//! replays them in reverse to populate input gradients. Attacks rebuild the
//! graph every iteration (the injected normalization parameters change per
//! stylized model), so tapes are cheap, short-lived, and single-threaded;
//! parallelism happens across images, never inside a tape.

mod backward;
mod ops;

pub use ops::conv_output_extent;

use thiserror::Error;

/// Errors raised by tensor construction and primitive execution.
#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: unsupported shape {shape:?} ({reason})")]
    BadShape {
        op: &'static str,
        shape: Vec<usize>,
        reason: String,
    },
    #[error("{op}: invalid argument: {reason}")]
    BadArgument { op: &'static str, reason: String },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("tensor data length {len} does not match shape {shape:?}")]
    LengthMismatch { len: usize, shape: Vec<usize> },
    #[error("tensor data contains a non-finite value")]
    NonFiniteInput,
    #[error("backward: loss must be a scalar, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("backward already ran on this tape; record a fresh forward pass")]
    BackwardTwice,
    #[error("unknown tensor id {0:?}")]
    UnknownId(TensorId),
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Handle to a tensor stored on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

/// A dense row-major f64 tensor.
#[derive(Debug, Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    /// Build a tensor, validating the shape/data agreement and finiteness.
    pub fn new(data: Vec<f64>, shape: Vec<usize>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(TensorError::LengthMismatch {
                len: data.len(),
                shape,
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(TensorError::NonFiniteInput);
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(v: f64) -> Result<Self> {
        Tensor::new(vec![v], vec![])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1 && self.shape.len() <= 1 || self.shape.is_empty()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, flag: bool) {
        self.requires_grad = flag;
    }

    /// Gradient buffer populated by [`Tape::backward`], if any.
    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// Single value of a scalar tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }
}

/// One recorded primitive. Cached values are whatever the backward rule needs.
#[derive(Debug)]
pub(crate) enum Op {
    Add {
        a: TensorId,
        b: TensorId,
        out: TensorId,
    },
    Mul {
        a: TensorId,
        b: TensorId,
        out: TensorId,
    },
    Scale {
        a: TensorId,
        factor: f64,
        out: TensorId,
    },
    Matmul {
        a: TensorId,
        b: TensorId,
        out: TensorId,
    },
    Conv2d {
        input: TensorId,
        kernel: TensorId,
        out: TensorId,
        stride: usize,
        padding: usize,
    },
    Relu {
        input: TensorId,
        out: TensorId,
    },
    MaxPool2d {
        input: TensorId,
        out: TensorId,
        /// Flat input index of the winning cell per output cell.
        argmax: Vec<usize>,
    },
    AvgPool2d {
        input: TensorId,
        out: TensorId,
        kernel: usize,
        stride: usize,
    },
    Flatten {
        input: TensorId,
        out: TensorId,
    },
    ChannelMean {
        input: TensorId,
        out: TensorId,
    },
    ChannelVar {
        input: TensorId,
        out: TensorId,
    },
    AffinePerChannel {
        input: TensorId,
        scale: TensorId,
        shift: TensorId,
        out: TensorId,
    },
    InstanceNorm {
        input: TensorId,
        out: TensorId,
        /// Rescale parameter per channel (the injected sigma).
        sigma: Vec<f64>,
        /// Cached per-(sample, channel) spatial mean of the input.
        mean: Vec<f64>,
        /// Cached per-(sample, channel) 1/sqrt(var + eps).
        inv_std: Vec<f64>,
    },
    SoftmaxCrossEntropy {
        logits: TensorId,
        out: TensorId,
        labels: Vec<usize>,
        /// Cached softmax probabilities, row-major (batch, classes).
        probs: Vec<f64>,
    },
    Sum {
        input: TensorId,
        out: TensorId,
    },
    ResizeNearest {
        input: TensorId,
        out: TensorId,
    },
    PadZero {
        input: TensorId,
        out: TensorId,
        top: usize,
        left: usize,
    },
}

/// Define-by-run recording of one forward pass.
///
/// Create a fresh tape per forward/backward cycle; [`Tape::backward`] may run
/// once per tape.
pub struct Tape {
    nodes: Vec<Tensor>,
    /// Whether gradient flow reaches this node (requires_grad or derived from one).
    needs_grad: Vec<bool>,
    ops: Vec<Op>,
    backward_ran: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            needs_grad: Vec::new(),
            ops: Vec::new(),
            backward_ran: false,
        }
    }

    /// Register a leaf tensor.
    pub fn leaf(&mut self, tensor: Tensor) -> TensorId {
        let id = TensorId(self.nodes.len());
        self.needs_grad.push(tensor.requires_grad);
        self.nodes.push(tensor);
        id
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, data: Vec<f64>, shape: Vec<usize>) -> Result<TensorId> {
        Ok(self.leaf(Tensor::new(data, shape)?))
    }

    /// Leaf that accumulates a gradient during backward.
    pub fn variable(&mut self, data: Vec<f64>, shape: Vec<usize>) -> Result<TensorId> {
        let mut t = Tensor::new(data, shape)?;
        t.requires_grad = true;
        Ok(self.leaf(t))
    }

    pub fn value(&self, id: TensorId) -> &Tensor {
        &self.nodes[id.0]
    }

    pub fn get(&self, id: TensorId) -> Result<&Tensor> {
        self.nodes.get(id.0).ok_or(TensorError::UnknownId(id))
    }

    /// Gradient of `id` after [`Tape::backward`]; `None` if backward has not
    /// run or the node does not participate in gradient flow.
    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.nodes[id.0].grad()
    }

    pub(crate) fn node_needs_grad(&self, id: TensorId) -> bool {
        self.needs_grad[id.0]
    }

    /// Store a freshly computed op output, checking finiteness.
    pub(crate) fn push_result(
        &mut self,
        op: &'static str,
        data: Vec<f64>,
        shape: Vec<usize>,
        needs_grad: bool,
    ) -> Result<TensorId> {
        if !data.iter().all(|v| v.is_finite()) {
            return Err(TensorError::NonFinite { op });
        }
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        let id = TensorId(self.nodes.len());
        self.needs_grad.push(needs_grad);
        self.nodes.push(Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        });
        Ok(id)
    }

    pub(crate) fn record(&mut self, op: Op) {
        self.ops.push(op);
    }

    /// Reverse sweep: populates `grad` on every leaf with `requires_grad`.
    ///
    /// `loss` must be a scalar. Each tape supports exactly one backward pass.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.backward_ran {
            return Err(TensorError::BackwardTwice);
        }
        let loss_t = self.get(loss)?;
        if loss_t.len() != 1 {
            return Err(TensorError::NonScalarLoss {
                shape: loss_t.shape.clone(),
            });
        }
        self.backward_ran = true;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        let ops = std::mem::take(&mut self.ops);
        for op in ops.iter().rev() {
            self.backward_op(op, &mut grads);
        }
        self.ops = ops;

        for (idx, node) in self.nodes.iter_mut().enumerate() {
            if node.requires_grad {
                node.grad = Some(match grads[idx].take() {
                    Some(g) => g,
                    None => vec![0.0; node.data.len()],
                });
            }
        }
        Ok(())
    }
}

pub(crate) fn accumulate(slot: &mut Option<Vec<f64>>, contribution: &[f64]) {
    match slot {
        Some(acc) => {
            for (a, c) in acc.iter_mut().zip(contribution) {
                *a += c;
            }
        }
        None => *slot = Some(contribution.to_vec()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_rejects_length_mismatch() {
        let err = Tensor::new(vec![1.0, 2.0], vec![3]).unwrap_err();
        assert!(matches!(err, TensorError::LengthMismatch { .. }));
    }

    #[test]
    fn tensor_rejects_non_finite() {
        let err = Tensor::new(vec![f64::NAN], vec![1]).unwrap_err();
        assert!(matches!(err, TensorError::NonFiniteInput));
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut tape = Tape::new();
        let x = tape.variable(vec![1.0, -2.0, 3.0], vec![3]).unwrap();
        let loss = tape.sum(x).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_of_sum_of_squares() {
        // loss = sum(x^2) at x = [1, 2] -> grad [2, 4]
        let mut tape = Tape::new();
        let x = tape.variable(vec![1.0, 2.0], vec![2]).unwrap();
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_twice_errors() {
        let mut tape = Tape::new();
        let x = tape.variable(vec![1.0], vec![1]).unwrap();
        let loss = tape.sum(x).unwrap();
        tape.backward(loss).unwrap();
        let err = tape.backward(loss).unwrap_err();
        assert!(matches!(err, TensorError::BackwardTwice));
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::new();
        let x = tape.variable(vec![1.0, 2.0], vec![2]).unwrap();
        let err = tape.backward(x).unwrap_err();
        assert!(matches!(err, TensorError::NonScalarLoss { .. }));
    }

    #[test]
    fn unreached_leaf_gets_zero_grad() {
        let mut tape = Tape::new();
        let x = tape.variable(vec![1.0], vec![1]).unwrap();
        let y = tape.variable(vec![5.0], vec![1]).unwrap();
        let loss = tape.sum(x).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(y).unwrap(), &[0.0]);
    }
}
