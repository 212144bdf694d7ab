//! Dense f64 tensors with tape-based reverse-mode differentiation.
//!
//! A [`Tape`] records every operation of one forward pass; [`Tape::backward`]
//! sweeps it once and accumulates gradients for all parameter leaves. Tensors
//! are plain row-major `Vec<f64>` buffers: cheap to reason about, fast enough
//! on a single core when the inner loops stay contiguous.
//!
//! Canonical window layouts: 2D `(w, C)` = time x channels, 3D `(w, F, C)` =
//! time x features x channels. Batched ops put the batch axis first.

mod activation;
mod backward;
mod conv;
mod init;
mod ops;
#[cfg(test)]
mod tests;

pub use activation::ActivationKind;
pub use conv::{conv_output_len, ConvSpec, FusionKind, Padding};
pub use init::{derive_seed, glorot_init, rng_from_seed};
pub use ops::{
    apply_activation, concat_channels, conv1d_early, conv1d_hybrid, conv1d_late, dense,
    fold_to_2d, maxpool1d, promote_to_3d, BatchNormState,
};

use thiserror::Error;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;
pub const LEAKY_RELU_SLOPE: f64 = 0.01;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch: {details}")]
    ShapeMismatch { op: &'static str, details: String },
    #[error(
        "convolution geometry infeasible: input length {input_len}, kernel {kernel}, \
         stride {stride}, dilation {dilation}, valid padding"
    )]
    Geometry {
        input_len: usize,
        kernel: usize,
        stride: usize,
        dilation: usize,
    },
    #[error("same padding requires stride 1, got {stride}")]
    SamePaddingStride { stride: usize },
    #[error("max pool width {width} exceeds time length {len}")]
    PoolTooWide { width: usize, len: usize },
    #[error("dropout rate {rate} outside [0, 0.99]")]
    DropoutRate { rate: f64 },
    #[error("batch norm inference requested before any training update")]
    BatchNormUninitialized,
    #[error("backward requires a scalar loss, got {numel} elements")]
    NonScalarLoss { numel: usize },
    #[error("{op}: empty input")]
    Empty { op: &'static str },
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Handle to a recorded tensor on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    pub(crate) id: usize,
}

/// Resolved convolution geometry: padding is already turned into `pad_left`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub pad_left: usize,
    pub out_len: usize,
}

pub(crate) enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Activation(Var, ActivationKind),
    /// y = x @ w + b with x (B, d_in), w (d_in, d_out), b (d_out).
    Dense { x: Var, w: Var, b: Var },
    /// Early-fusion / conventional 1D conv: x (N, L, C), w (k, C, f), b (f).
    ConvFlat { x: Var, w: Var, b: Var, geom: ConvGeom },
    /// Per-feature conv: x (N, L, F, C), late w (F, k, C, f) b (F, f),
    /// hybrid (shared=true) w (k, C, f) b (f).
    ConvPerFeature {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
        shared: bool,
    },
    /// Pool over axis 1 of (N, L, R); argmax stores the in-window offset.
    MaxPool {
        x: Var,
        width: usize,
        argmax: Vec<u32>,
    },
    /// Train-mode batch norm; xhat and per-channel inv_std saved for backward.
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    /// Infer-mode batch norm against frozen running statistics.
    BatchNormInfer {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Dropout { x: Var, mask: Vec<f64> },
    /// Concatenate along the last axis; all leading dims equal.
    ConcatLast(Var, Var),
    SliceLast { x: Var, start: usize, len: usize },
    Reshape(Var),
    /// L tensors (B, R) stacked into (B, L, R).
    StackAxis1(Vec<Var>),
    /// (B, L, R) -> (B, R) at step `t`.
    TimeSlice { x: Var, t: usize },
    SumAll(Var),
    MeanAll(Var),
}

pub(crate) struct Node {
    pub value: Vec<f64>,
    pub shape: Vec<usize>,
    pub op: Op,
    pub needs_grad: bool,
}

/// Gradient buffers produced by one backward sweep.
pub struct Grads {
    pub(crate) by_node: Vec<Option<Vec<f64>>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.by_node.get(v.id).and_then(|g| g.as_deref())
    }

    /// Gradient of a parameter leaf; all-zero if the loss never touched it.
    pub fn get_or_zero(&self, v: Var, numel: usize) -> Vec<f64> {
        match self.get(v) {
            Some(g) => g.to_vec(),
            None => vec![0.0; numel],
        }
    }
}

/// Records one forward computation; reset per training step.
#[derive(Default)]
pub struct Tape {
    pub(crate) nodes: Vec<Node>,
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.id].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.id].shape
    }

    pub fn numel(&self, v: Var) -> usize {
        numel(&self.nodes[v.id].shape)
    }

    /// Scalar value of a rank-0/numel-1 tensor.
    pub fn scalar(&self, v: Var) -> f64 {
        debug_assert_eq!(self.numel(v), 1);
        self.nodes[v.id].value[0]
    }

    pub(crate) fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.id].needs_grad
    }

    pub(crate) fn push(&mut self, value: Vec<f64>, shape: Vec<usize>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(value.len(), numel(&shape));
        self.nodes.push(Node {
            value,
            shape,
            op,
            needs_grad,
        });
        Var {
            id: self.nodes.len() - 1,
        }
    }

    /// Constant input: no gradient is tracked through it.
    pub fn leaf(&mut self, value: Vec<f64>, shape: Vec<usize>) -> Var {
        self.push(value, shape, Op::Leaf, false)
    }

    /// Trainable parameter leaf.
    pub fn param(&mut self, value: Vec<f64>, shape: Vec<usize>) -> Var {
        self.push(value, shape, Op::Leaf, true)
    }

    pub fn scalar_leaf(&mut self, value: f64) -> Var {
        self.leaf(vec![value], vec![])
    }
}
