//! ECLSTM cells and layers, plus the flatten-input FCLSTM baseline.
//!
//! An ECLSTM replaces the dense gate transformations of an LSTM with stacked
//! 1D convolutions over the window, so hidden state and memory stay 2D/3D
//! window tensors and the parameter count is independent of the window size:
//!
//!   i = sigma(cell_i([x, h]))      f = sigma(cell_f([x, h]))
//!   o = sigma(cell_o([x, h]))      c' = f.c + i.tanh(cell_c([x, h]))
//!   h' = o.tanh(c')
//!
//! Each `cell_*` is a chain of convolutions (the cell depth); the four gate
//! paths share the structural configuration but never the weights. The
//! configured per-depth activations apply to inner links of the chain only;
//! the outermost nonlinearity always belongs to the gate.

use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::params::{BoundParams, ParamId, ParamStore};
use crate::tensor::{
    glorot_init, ActivationKind, ConvSpec, FusionKind, Padding, Tape, TensorError, Var,
};

#[derive(Debug, Error)]
pub enum CellError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("cell stack must have depth >= 1")]
    EmptyStack,
    #[error("cell convolutions must use same padding with stride 1 and dilation 1")]
    BadCellConv,
    #[error("irreconcilable state layout: {details}")]
    Irreconcilable { details: String },
    #[error("empty input sequence")]
    EmptySequence,
}

pub type Result<T> = std::result::Result<T, CellError>;

/// Semantic shape of one window tensor, without the batch axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowLayout {
    /// (w, C): time x channels.
    Flat { w: usize, c: usize },
    /// (w, F, C): time x features x channels.
    Feat { w: usize, f: usize, c: usize },
}

impl WindowLayout {
    /// Natural layout of raw windows: m = 1 collapses the sample axis.
    pub fn natural(w: usize, sensors: usize, samples_per_cycle: usize) -> Self {
        if samples_per_cycle == 1 {
            WindowLayout::Flat { w, c: sensors }
        } else {
            WindowLayout::Feat {
                w,
                f: sensors,
                c: samples_per_cycle,
            }
        }
    }

    pub fn time(&self) -> usize {
        match *self {
            WindowLayout::Flat { w, .. } | WindowLayout::Feat { w, .. } => w,
        }
    }

    pub fn channels(&self) -> usize {
        match *self {
            WindowLayout::Flat { c, .. } | WindowLayout::Feat { c, .. } => c,
        }
    }

    pub fn numel(&self) -> usize {
        match *self {
            WindowLayout::Flat { w, c } => w * c,
            WindowLayout::Feat { w, f, c } => w * f * c,
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        match *self {
            WindowLayout::Flat { w, c } => vec![w, c],
            WindowLayout::Feat { w, f, c } => vec![w, f, c],
        }
    }

    pub fn batched(&self, batch: usize) -> Vec<usize> {
        let mut s = vec![batch];
        s.extend(self.dims());
        s
    }

    /// Layout after reconciliation toward a fusion kind: early folds features
    /// into channels, late/hybrid treat flat channels as features.
    pub fn reconciled(&self, fusion: FusionKind) -> Self {
        match (fusion, *self) {
            (FusionKind::Early, WindowLayout::Feat { w, f, c }) => {
                WindowLayout::Flat { w, c: f * c }
            }
            (FusionKind::Early, flat) => flat,
            (FusionKind::Late | FusionKind::Hybrid, WindowLayout::Flat { w, c }) => {
                WindowLayout::Feat { w, f: c, c: 1 }
            }
            (FusionKind::Late | FusionKind::Hybrid, feat) => feat,
        }
    }
}

/// Reshape a batched tensor to match a reconciled layout (pure metadata).
fn reconcile_batched(tape: &mut Tape, x: Var, from: WindowLayout, fusion: FusionKind) -> Result<Var> {
    let to = from.reconciled(fusion);
    if to == from {
        return Ok(x);
    }
    let b = tape.shape(x)[0];
    Ok(tape.reshape(x, to.batched(b))?)
}

fn check_cell_conv(spec: &ConvSpec) -> Result<()> {
    if spec.padding != Padding::Same || spec.stride != 1 || spec.dilation != 1 {
        return Err(CellError::BadCellConv);
    }
    if spec.kernel_width < 1 || spec.filters < 1 {
        return Err(CellError::BadCellConv);
    }
    Ok(())
}

const GATE_NAMES: [&str; 4] = ["i", "f", "o", "g"];
const FORGET_GATE: usize = 1;

/// One ECLSTM layer: four structurally identical conv stacks plus the
/// recurrent update. Weights live in the [`ParamStore`].
#[derive(Debug)]
pub struct EclstmLayer {
    specs: Vec<ConvSpec>,
    input_layout: WindowLayout,
    state_layout: WindowLayout,
    /// Input layout of each depth (after reconciliation), for weight shapes.
    depth_inputs: Vec<WindowLayout>,
    /// gates[gate][depth] = (weights, bias).
    gates: [Vec<(ParamId, ParamId)>; 4],
}

impl EclstmLayer {
    /// Build the layer for windows of `input_layout`, inferring the state
    /// shape by threading layouts through the stack.
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        input_layout: WindowLayout,
        specs: Vec<ConvSpec>,
    ) -> Result<Self> {
        if specs.is_empty() {
            return Err(CellError::EmptyStack);
        }
        for s in &specs {
            check_cell_conv(s)?;
        }

        // Pass 1: state layout, ignoring channel counts (they do not affect
        // downstream shapes).
        let x0 = input_layout.reconciled(specs[0].fusion);
        let mut lay = x0;
        for spec in &specs {
            let rec = lay.reconciled(spec.fusion);
            lay = match spec.fusion {
                FusionKind::Early => WindowLayout::Flat {
                    w: rec.time(),
                    c: spec.filters,
                },
                FusionKind::Late | FusionKind::Hybrid => match rec {
                    WindowLayout::Feat { w, f, .. } => WindowLayout::Feat {
                        w,
                        f,
                        c: spec.filters,
                    },
                    WindowLayout::Flat { .. } => unreachable!("reconciled to feat"),
                },
            };
        }
        let state_layout = lay;

        // The recurrent concat [x, h] must agree on the feature axis.
        let h0 = state_layout.reconciled(specs[0].fusion);
        let concat0 = match (x0, h0) {
            (WindowLayout::Flat { w, c: cx }, WindowLayout::Flat { c: ch, .. }) => {
                WindowLayout::Flat { w, c: cx + ch }
            }
            (
                WindowLayout::Feat { w, f: fx, c: cx },
                WindowLayout::Feat { f: fh, c: ch, .. },
            ) => {
                if fx != fh {
                    return Err(CellError::Irreconcilable {
                        details: format!(
                            "input has {fx} features but the recurrent state reconciles to {fh}"
                        ),
                    });
                }
                WindowLayout::Feat { w, f: fx, c: cx + ch }
            }
            _ => unreachable!("both reconciled to the same fusion kind"),
        };

        // Pass 2: per-depth input layouts with real channel counts.
        let mut depth_inputs = Vec::with_capacity(specs.len());
        let mut cur = concat0;
        for spec in &specs {
            let rec = cur.reconciled(spec.fusion);
            depth_inputs.push(rec);
            cur = match spec.fusion {
                FusionKind::Early => WindowLayout::Flat {
                    w: rec.time(),
                    c: spec.filters,
                },
                FusionKind::Late | FusionKind::Hybrid => match rec {
                    WindowLayout::Feat { w, f, .. } => WindowLayout::Feat {
                        w,
                        f,
                        c: spec.filters,
                    },
                    WindowLayout::Flat { .. } => unreachable!(),
                },
            };
        }
        debug_assert_eq!(cur, state_layout);

        let gates = std::array::from_fn(|gi| {
            specs
                .iter()
                .zip(&depth_inputs)
                .enumerate()
                .map(|(di, (spec, inp))| {
                    let (wshape, bshape) = gate_conv_shapes(spec, inp);
                    let w = store.register(
                        format!("{name}.{}.d{di}.w", GATE_NAMES[gi]),
                        wshape.clone(),
                        glorot_init(&wshape, rng),
                    );
                    let mut bias = vec![0.0; bshape.iter().product()];
                    // Forget-gate bias starts at 1 so early training keeps memory.
                    if gi == FORGET_GATE && di == specs.len() - 1 {
                        bias.fill(1.0);
                    }
                    let b = store.register(
                        format!("{name}.{}.d{di}.b", GATE_NAMES[gi]),
                        bshape,
                        bias,
                    );
                    (w, b)
                })
                .collect::<Vec<_>>()
        });

        Ok(EclstmLayer {
            specs,
            input_layout,
            state_layout,
            depth_inputs,
            gates,
        })
    }

    pub fn input_layout(&self) -> WindowLayout {
        self.input_layout
    }

    /// (weights, bias) per depth for one gate path (0=i, 1=f, 2=o, 3=candidate).
    pub fn gate_params(&self, gate: usize) -> &[(ParamId, ParamId)] {
        &self.gates[gate]
    }

    pub fn specs(&self) -> &[ConvSpec] {
        &self.specs
    }

    /// Shape of h and c (zero-initialized), inferred from the stack.
    pub fn state_layout(&self) -> WindowLayout {
        self.state_layout
    }

    /// Trainable weights, counting every gate path; independent of the
    /// window size for fixed specs.
    pub fn param_count(&self) -> usize {
        self.specs
            .iter()
            .zip(&self.depth_inputs)
            .map(|(spec, inp)| {
                let (w, b) = gate_conv_shapes(spec, inp);
                w.iter().product::<usize>() + b.iter().product::<usize>()
            })
            .sum::<usize>()
            * 4
    }

    /// Zero h/c for a batch.
    pub fn init_state(&self, tape: &mut Tape, batch: usize) -> (Var, Var) {
        let shape = self.state_layout.batched(batch);
        let n: usize = shape.iter().product();
        let h = tape.leaf(vec![0.0; n], shape.clone());
        let c = tape.leaf(vec![0.0; n], shape);
        (h, c)
    }

    /// Depth-stacked gate convolutions on an already-concatenated input.
    /// Inner depths apply their configured activation; the outermost
    /// nonlinearity is left to the caller (the gate).
    pub fn stack_forward(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        z: Var,
        z_layout: WindowLayout,
        gate: usize,
    ) -> Result<Var> {
        let mut cur = z;
        let mut lay = z_layout;
        let depth = self.specs.len();
        for (di, spec) in self.specs.iter().enumerate() {
            cur = reconcile_batched(tape, cur, lay, spec.fusion)?;
            lay = lay.reconciled(spec.fusion);
            let (w, b) = self.gates[gate][di];
            let (wv, bv) = (bound.var(w), bound.var(b));
            cur = match spec.fusion {
                FusionKind::Early => tape.conv_flat(cur, wv, bv, spec)?,
                FusionKind::Late => tape.conv_feat(cur, wv, bv, spec, false)?,
                FusionKind::Hybrid => tape.conv_feat(cur, wv, bv, spec, true)?,
            };
            lay = match spec.fusion {
                FusionKind::Early => WindowLayout::Flat {
                    w: lay.time(),
                    c: spec.filters,
                },
                _ => match lay {
                    WindowLayout::Feat { w, f, .. } => WindowLayout::Feat {
                        w,
                        f,
                        c: spec.filters,
                    },
                    WindowLayout::Flat { .. } => unreachable!(),
                },
            };
            if di + 1 < depth {
                cur = tape.activation(spec.activation, cur);
            }
        }
        Ok(cur)
    }

    /// One recurrent update on batched window tensors.
    pub fn step(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        x: Var,
        state: (Var, Var),
    ) -> Result<(Var, Var)> {
        let (h, c) = state;
        let fusion0 = self.specs[0].fusion;
        let xr = reconcile_batched(tape, x, self.input_layout, fusion0)?;
        let hr = reconcile_batched(tape, h, self.state_layout, fusion0)?;
        let z = tape.concat_last(xr, hr)?;
        let z_layout = match (
            self.input_layout.reconciled(fusion0),
            self.state_layout.reconciled(fusion0),
        ) {
            (WindowLayout::Flat { w, c: cx }, WindowLayout::Flat { c: ch, .. }) => {
                WindowLayout::Flat { w, c: cx + ch }
            }
            (WindowLayout::Feat { w, f, c: cx }, WindowLayout::Feat { c: ch, .. }) => {
                WindowLayout::Feat { w, f, c: cx + ch }
            }
            _ => unreachable!(),
        };

        let ui = self.stack_forward(tape, bound, z, z_layout, 0)?;
        let uf = self.stack_forward(tape, bound, z, z_layout, 1)?;
        let uo = self.stack_forward(tape, bound, z, z_layout, 2)?;
        let ug = self.stack_forward(tape, bound, z, z_layout, 3)?;

        let i = tape.activation(ActivationKind::Sigmoid, ui);
        let f = tape.activation(ActivationKind::Sigmoid, uf);
        let o = tape.activation(ActivationKind::Sigmoid, uo);
        let g = tape.activation(ActivationKind::Tanh, ug);

        let fc = tape.mul(f, c)?;
        let ig = tape.mul(i, g)?;
        let c_new = tape.add(fc, ig)?;
        let ct = tape.activation(ActivationKind::Tanh, c_new);
        let h_new = tape.mul(o, ct)?;
        Ok((h_new, c_new))
    }

    /// Unroll over a sequence of batched window tensors from a zero state;
    /// returns every hidden state.
    pub fn forward_sequence(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        xs: &[Var],
    ) -> Result<Vec<Var>> {
        let first = xs.first().ok_or(CellError::EmptySequence)?;
        let batch = tape.shape(*first)[0];
        let mut state = self.init_state(tape, batch);
        let mut hs = Vec::with_capacity(xs.len());
        for &x in xs {
            state = self.step(tape, bound, x, state)?;
            hs.push(state.0);
        }
        Ok(hs)
    }
}

fn gate_conv_shapes(spec: &ConvSpec, input: &WindowLayout) -> (Vec<usize>, Vec<usize>) {
    let k = spec.kernel_width;
    let f = spec.filters;
    match (spec.fusion, input) {
        (FusionKind::Early, WindowLayout::Flat { c, .. }) => (vec![k, *c, f], vec![f]),
        (FusionKind::Late, WindowLayout::Feat { f: nf, c, .. }) => {
            (vec![*nf, k, *c, f], vec![*nf, f])
        }
        (FusionKind::Hybrid, WindowLayout::Feat { c, .. }) => (vec![k, *c, f], vec![f]),
        _ => unreachable!("layout reconciled before shape computation"),
    }
}

/// Conventional LSTM over flattened windows: the ablation baseline. The four
/// gate transforms are one fused dense map; parameters grow linearly with
/// the window size through the flattened input dimension.
#[derive(Debug)]
pub struct FclstmLayer {
    input_dim: usize,
    hidden: usize,
    w: ParamId,
    b: ParamId,
}

impl FclstmLayer {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        input_dim: usize,
        hidden: usize,
    ) -> Self {
        let wshape = vec![input_dim + hidden, 4 * hidden];
        let w = store.register(
            format!("{name}.w"),
            wshape.clone(),
            glorot_init(&wshape, rng),
        );
        let mut bias = vec![0.0; 4 * hidden];
        bias[hidden..2 * hidden].fill(1.0); // forget-gate block
        let b = store.register(format!("{name}.b"), vec![4 * hidden], bias);
        FclstmLayer {
            input_dim,
            hidden,
            w,
            b,
        }
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Fused gate weights (d_in + hidden, 4*hidden) and bias (4*hidden),
    /// gate blocks ordered i, f, o, candidate.
    pub fn weight_params(&self) -> (ParamId, ParamId) {
        (self.w, self.b)
    }

    pub fn param_count(&self) -> usize {
        4 * (self.input_dim + self.hidden) * self.hidden + 4 * self.hidden
    }

    pub fn init_state(&self, tape: &mut Tape, batch: usize) -> (Var, Var) {
        let h = tape.leaf(vec![0.0; batch * self.hidden], vec![batch, self.hidden]);
        let c = tape.leaf(vec![0.0; batch * self.hidden], vec![batch, self.hidden]);
        (h, c)
    }

    /// One update on a flattened (B, input_dim) step input.
    pub fn step(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        x: Var,
        state: (Var, Var),
    ) -> Result<(Var, Var)> {
        let (h, c) = state;
        let z = tape.concat_last(x, h)?;
        let u = tape.dense(z, bound.var(self.w), bound.var(self.b))?;
        let n = self.hidden;
        let ui = tape.slice_last(u, 0, n)?;
        let uf = tape.slice_last(u, n, n)?;
        let uo = tape.slice_last(u, 2 * n, n)?;
        let ug = tape.slice_last(u, 3 * n, n)?;

        let i = tape.activation(ActivationKind::Sigmoid, ui);
        let f = tape.activation(ActivationKind::Sigmoid, uf);
        let o = tape.activation(ActivationKind::Sigmoid, uo);
        let g = tape.activation(ActivationKind::Tanh, ug);

        let fc = tape.mul(f, c)?;
        let ig = tape.mul(i, g)?;
        let c_new = tape.add(fc, ig)?;
        let ct = tape.activation(ActivationKind::Tanh, c_new);
        let h_new = tape.mul(o, ct)?;
        Ok((h_new, c_new))
    }

    pub fn forward_sequence(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        xs: &[Var],
    ) -> Result<Vec<Var>> {
        let first = xs.first().ok_or(CellError::EmptySequence)?;
        let batch = tape.shape(*first)[0];
        let mut state = self.init_state(tape, batch);
        let mut hs = Vec::with_capacity(xs.len());
        for &x in xs {
            state = self.step(tape, bound, x, state)?;
            hs.push(state.0);
        }
        Ok(hs)
    }
}
