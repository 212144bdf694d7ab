//! Forward op constructors. Each validates shapes, computes the result
//! eagerly, and records the node for the backward sweep.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::conv::{conv_feat_forward, conv_flat_forward};
use super::{
    numel, ActivationKind, ConvSpec, FusionKind, Op, Result, Tape, TensorError, Var, BN_EPS,
    BN_MOMENTUM,
};

/// Persistent batch-norm statistics, owned by the model between steps.
#[derive(Debug, Clone)]
pub struct BatchNormState {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub initialized: bool,
}

impl BatchNormState {
    pub fn new(channels: usize) -> Self {
        BatchNormState {
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            initialized: false,
        }
    }
}

fn mismatch(op: &'static str, details: String) -> TensorError {
    TensorError::ShapeMismatch { op, details }
}

impl Tape {
    fn binary_elementwise(&mut self, op: &'static str, a: Var, b: Var) -> Result<(Vec<usize>, bool)> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok((
            self.shape(a).to_vec(),
            self.needs_grad(a) || self.needs_grad(b),
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, ng) = self.binary_elementwise("add", a, b)?;
        let value = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x + y)
            .collect();
        Ok(self.push(value, shape, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, ng) = self.binary_elementwise("sub", a, b)?;
        let value = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x - y)
            .collect();
        Ok(self.push(value, shape, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, ng) = self.binary_elementwise("mul", a, b)?;
        let value = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x * y)
            .collect();
        Ok(self.push(value, shape, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let shape = self.shape(a).to_vec();
        let ng = self.needs_grad(a);
        let value = self.value(a).iter().map(|x| x * factor).collect();
        self.push(value, shape, Op::Scale(a, factor), ng)
    }

    pub fn activation(&mut self, kind: ActivationKind, x: Var) -> Var {
        let shape = self.shape(x).to_vec();
        let ng = self.needs_grad(x);
        let value = self.value(x).iter().map(|&v| kind.apply(v)).collect();
        self.push(value, shape, Op::Activation(x, kind), ng)
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let ng = self.needs_grad(x);
        let s: f64 = self.value(x).iter().sum();
        self.push(vec![s], vec![], Op::SumAll(x), ng)
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let n = self.numel(x);
        if n == 0 {
            return Err(TensorError::Empty { op: "mean_all" });
        }
        let ng = self.needs_grad(x);
        let s: f64 = self.value(x).iter().sum();
        Ok(self.push(vec![s / n as f64], vec![], Op::MeanAll(x), ng))
    }

    /// Mean squared error between equally-shaped tensors, as a scalar node.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let d = self.sub(pred, target)?;
        let sq = self.mul(d, d)?;
        self.mean_all(sq)
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        if numel(&shape) != self.numel(x) {
            return Err(mismatch(
                "reshape",
                format!("{:?} -> {:?}", self.shape(x), shape),
            ));
        }
        let ng = self.needs_grad(x);
        let value = self.value(x).to_vec();
        Ok(self.push(value, shape, Op::Reshape(x), ng))
    }

    /// (B, rest...) -> (B, prod(rest)).
    pub fn flatten_batch(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x);
        if shape.is_empty() {
            return Err(mismatch("flatten_batch", "rank 0".into()));
        }
        let b = shape[0];
        let rest = numel(&shape[1..]);
        self.reshape(x, vec![b, rest])
    }

    /// y = x @ w + b, x (B, d_in), w (d_in, d_out), b (d_out).
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 2 || ws.len() != 2 || bs.len() != 1 || xs[1] != ws[0] || ws[1] != bs[0] {
            return Err(mismatch(
                "dense",
                format!("x {xs:?}, w {ws:?}, b {bs:?}"),
            ));
        }
        let (batch, d_in, d_out) = (xs[0], xs[1], ws[1]);
        let ng = self.needs_grad(x) || self.needs_grad(w) || self.needs_grad(b);
        let xv = self.value(x);
        let wv = self.value(w);
        let bv = self.value(b);
        let mut y = vec![0.0; batch * d_out];
        for bi in 0..batch {
            let yrow = &mut y[bi * d_out..(bi + 1) * d_out];
            yrow.copy_from_slice(bv);
            let xrow = &xv[bi * d_in..(bi + 1) * d_in];
            for (i, &xs_v) in xrow.iter().enumerate() {
                let wrow = &wv[i * d_out..(i + 1) * d_out];
                for (yv, &wv_) in yrow.iter_mut().zip(wrow) {
                    *yv += xs_v * wv_;
                }
            }
        }
        Ok(self.push(y, vec![batch, d_out], Op::Dense { x, w, b }, ng))
    }

    /// Early-fusion / conventional conv: x (N, L, C), w (k, C, f), b (f).
    pub fn conv_flat(&mut self, x: Var, w: Var, b: Var, spec: &ConvSpec) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        let f = spec.filters;
        let k = spec.kernel_width;
        if xs.len() != 3 || ws != [k, xs[2], f] || bs != [f] {
            return Err(mismatch(
                "conv_flat",
                format!("x {xs:?}, w {ws:?}, b {bs:?}, k={k}, f={f}"),
            ));
        }
        let (n, l, c) = (xs[0], xs[1], xs[2]);
        let geom = spec.resolve(l)?;
        let ng = self.needs_grad(x) || self.needs_grad(w) || self.needs_grad(b);
        let y = conv_flat_forward(self.value(x), self.value(w), self.value(b), n, l, c, f, &geom);
        Ok(self.push(
            y,
            vec![n, geom.out_len, f],
            Op::ConvFlat { x, w, b, geom },
            ng,
        ))
    }

    /// Per-feature conv: x (N, L, F, C). Late fusion owns one kernel per
    /// feature (w (F, k, C, f), b (F, f)); hybrid shares one (w (k, C, f),
    /// b (f)) across the feature axis.
    pub fn conv_feat(&mut self, x: Var, w: Var, b: Var, spec: &ConvSpec, shared: bool) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        let f = spec.filters;
        let k = spec.kernel_width;
        if xs.len() != 4 {
            return Err(mismatch("conv_feat", format!("x {xs:?}")));
        }
        let (n, l, nf, c) = (xs[0], xs[1], xs[2], xs[3]);
        let ok = if shared {
            ws == [k, c, f] && bs == [f]
        } else {
            ws == [nf, k, c, f] && bs == [nf, f]
        };
        if !ok {
            return Err(mismatch(
                "conv_feat",
                format!("x {xs:?}, w {ws:?}, b {bs:?}, k={k}, f={f}, shared={shared}"),
            ));
        }
        let geom = spec.resolve(l)?;
        let ng = self.needs_grad(x) || self.needs_grad(w) || self.needs_grad(b);
        let y = conv_feat_forward(
            self.value(x),
            self.value(w),
            self.value(b),
            n,
            l,
            nf,
            c,
            f,
            &geom,
            shared,
        );
        Ok(self.push(
            y,
            vec![n, geom.out_len, nf, f],
            Op::ConvPerFeature {
                x,
                w,
                b,
                geom,
                shared,
            },
            ng,
        ))
    }

    /// Non-overlapping max over axis 1 of (N, L, rest...); floor semantics,
    /// ties go to the first maximal element.
    pub fn maxpool_time(&mut self, x: Var, width: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 2 {
            return Err(mismatch("maxpool_time", format!("x {xs:?}")));
        }
        let (n, l) = (xs[0], xs[1]);
        let r = numel(&xs[2..]);
        if width == 0 || width > l {
            return Err(TensorError::PoolTooWide { width, len: l });
        }
        let lo = l / width;
        let ng = self.needs_grad(x);
        let xv = self.value(x);
        let mut y = vec![0.0; n * lo * r];
        let mut argmax = vec![0u32; n * lo * r];
        for bi in 0..n {
            for q in 0..lo {
                for rv in 0..r {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_u = 0u32;
                    for u in 0..width {
                        let v = xv[(bi * l + q * width + u) * r + rv];
                        if v > best {
                            best = v;
                            best_u = u as u32;
                        }
                    }
                    let oi = (bi * lo + q) * r + rv;
                    y[oi] = best;
                    argmax[oi] = best_u;
                }
            }
        }
        let mut shape = xs;
        shape[1] = lo;
        Ok(self.push(y, shape, Op::MaxPool { x, width, argmax }, ng))
    }

    /// Batch normalization over every axis except the last (channels).
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        state: &mut BatchNormState,
        train: bool,
    ) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 2 {
            return Err(mismatch("batch_norm", format!("x {xs:?}")));
        }
        let c = *xs.last().unwrap();
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(mismatch(
                "batch_norm",
                format!("channels {c}, gamma {:?}, beta {:?}", self.shape(gamma), self.shape(beta)),
            ));
        }
        if state.running_mean.len() != c {
            return Err(mismatch(
                "batch_norm",
                format!("state has {} channels, input {c}", state.running_mean.len()),
            ));
        }
        let rows = numel(&xs) / c;
        if rows == 0 {
            return Err(TensorError::Empty { op: "batch_norm" });
        }
        let ng = self.needs_grad(x) || self.needs_grad(gamma) || self.needs_grad(beta);
        let xv = self.value(x);
        let gv = self.value(gamma).to_vec();
        let bv = self.value(beta).to_vec();

        let (mean, inv_std) = if train {
            let mut mean = vec![0.0; c];
            for row in 0..rows {
                let xr = &xv[row * c..(row + 1) * c];
                for (m, &v) in mean.iter_mut().zip(xr) {
                    *m += v;
                }
            }
            for m in mean.iter_mut() {
                *m /= rows as f64;
            }
            let mut var = vec![0.0; c];
            for row in 0..rows {
                let xr = &xv[row * c..(row + 1) * c];
                for (ci, &v) in xr.iter().enumerate() {
                    let d = v - mean[ci];
                    var[ci] += d * d;
                }
            }
            for v in var.iter_mut() {
                *v /= rows as f64;
            }
            for ci in 0..c {
                state.running_mean[ci] =
                    BN_MOMENTUM * state.running_mean[ci] + (1.0 - BN_MOMENTUM) * mean[ci];
                state.running_var[ci] =
                    BN_MOMENTUM * state.running_var[ci] + (1.0 - BN_MOMENTUM) * var[ci];
            }
            state.initialized = true;
            let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + BN_EPS).sqrt()).collect();
            (mean, inv_std)
        } else {
            if !state.initialized {
                return Err(TensorError::BatchNormUninitialized);
            }
            let inv_std: Vec<f64> = state
                .running_var
                .iter()
                .map(|&v| 1.0 / (v + BN_EPS).sqrt())
                .collect();
            (state.running_mean.clone(), inv_std)
        };

        let mut xhat = vec![0.0; rows * c];
        let mut y = vec![0.0; rows * c];
        for row in 0..rows {
            let base = row * c;
            for ci in 0..c {
                let h = (xv[base + ci] - mean[ci]) * inv_std[ci];
                xhat[base + ci] = h;
                y[base + ci] = gv[ci] * h + bv[ci];
            }
        }
        let op = if train {
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            }
        } else {
            Op::BatchNormInfer {
                x,
                gamma,
                beta,
                mean,
                inv_std,
            }
        };
        Ok(self.push(y, xs, op, ng))
    }

    /// Inverted dropout; identity in infer mode or at rate 0.
    pub fn dropout(&mut self, x: Var, rate: f64, train: bool, rng: &mut ChaCha8Rng) -> Result<Var> {
        if !(0.0..=0.99).contains(&rate) {
            return Err(TensorError::DropoutRate { rate });
        }
        if !train || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - rate;
        let inv = 1.0 / keep;
        let mask: Vec<f64> = (0..self.numel(x))
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { inv })
            .collect();
        let shape = self.shape(x).to_vec();
        let ng = self.needs_grad(x);
        let value = self
            .value(x)
            .iter()
            .zip(&mask)
            .map(|(&v, &m)| v * m)
            .collect();
        Ok(self.push(value, shape, Op::Dropout { x, mask }, ng))
    }

    /// Concatenate along the last axis; leading dims must match.
    pub fn concat_last(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != sb.len() || sa.is_empty() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(mismatch("concat_last", format!("{sa:?} vs {sb:?}")));
        }
        let (ca, cb) = (*sa.last().unwrap(), *sb.last().unwrap());
        let rows = numel(&sa) / ca;
        let ng = self.needs_grad(a) || self.needs_grad(b);
        let av = self.value(a);
        let bv = self.value(b);
        let mut y = vec![0.0; rows * (ca + cb)];
        for row in 0..rows {
            let o = row * (ca + cb);
            y[o..o + ca].copy_from_slice(&av[row * ca..(row + 1) * ca]);
            y[o + ca..o + ca + cb].copy_from_slice(&bv[row * cb..(row + 1) * cb]);
        }
        let mut shape = sa;
        *shape.last_mut().unwrap() = ca + cb;
        Ok(self.push(y, shape, Op::ConcatLast(a, b), ng))
    }

    /// Slice `[start, start+len)` of the last axis.
    pub fn slice_last(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let c = *xs.last().ok_or_else(|| mismatch("slice_last", "rank 0".into()))?;
        if start + len > c || len == 0 {
            return Err(mismatch(
                "slice_last",
                format!("[{start}, {start}+{len}) of {c}"),
            ));
        }
        let rows = numel(&xs) / c;
        let ng = self.needs_grad(x);
        let xv = self.value(x);
        let mut y = vec![0.0; rows * len];
        for row in 0..rows {
            y[row * len..(row + 1) * len]
                .copy_from_slice(&xv[row * c + start..row * c + start + len]);
        }
        let mut shape = xs;
        *shape.last_mut().unwrap() = len;
        Ok(self.push(y, shape, Op::SliceLast { x, start, len }, ng))
    }

    /// Stack L tensors of shape (B, rest...) into (B, L, rest...).
    pub fn stack_axis1(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs.first().ok_or(TensorError::Empty { op: "stack_axis1" })?;
        let s0 = self.shape(first).to_vec();
        if s0.is_empty() {
            return Err(mismatch("stack_axis1", "rank 0 inputs".into()));
        }
        for &v in xs {
            if self.shape(v) != s0 {
                return Err(mismatch(
                    "stack_axis1",
                    format!("{:?} vs {:?}", self.shape(v), s0),
                ));
            }
        }
        let b = s0[0];
        let r = numel(&s0[1..]);
        let l = xs.len();
        let ng = xs.iter().any(|&v| self.needs_grad(v));
        let mut y = vec![0.0; b * l * r];
        for (t, &v) in xs.iter().enumerate() {
            let vv = self.value(v);
            for bi in 0..b {
                y[(bi * l + t) * r..(bi * l + t + 1) * r]
                    .copy_from_slice(&vv[bi * r..(bi + 1) * r]);
            }
        }
        let mut shape = vec![b, l];
        shape.extend_from_slice(&s0[1..]);
        Ok(self.push(y, shape, Op::StackAxis1(xs.to_vec()), ng))
    }

    /// Extract step `t`: (B, L, rest...) -> (B, rest...).
    pub fn time_slice(&mut self, x: Var, t: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 2 || t >= xs[1] {
            return Err(mismatch("time_slice", format!("t={t} of {xs:?}")));
        }
        let (b, l) = (xs[0], xs[1]);
        let r = numel(&xs[2..]);
        let ng = self.needs_grad(x);
        let xv = self.value(x);
        let mut y = vec![0.0; b * r];
        for bi in 0..b {
            y[bi * r..(bi + 1) * r].copy_from_slice(&xv[(bi * l + t) * r..(bi * l + t + 1) * r]);
        }
        let mut shape = vec![b];
        shape.extend_from_slice(&xs[2..]);
        Ok(self.push(y, shape, Op::TimeSlice { x, t }, ng))
    }
}

// --- Window-tensor surface (unbatched, canonical layouts) ---------------

/// Elementwise activation on any shape.
pub fn apply_activation(tape: &mut Tape, kind: ActivationKind, x: Var) -> Var {
    tape.activation(kind, x)
}

/// Early-fusion conv on a window tensor (w, C); a 3D window (w, F, C) is
/// first folded to (w, F*C). Returns (w', f).
pub fn conv1d_early(tape: &mut Tape, x: Var, w: Var, b: Var, spec: &ConvSpec) -> Result<Var> {
    debug_assert_eq!(spec.fusion, FusionKind::Early);
    let x2 = fold_to_2d(tape, x)?;
    let s = tape.shape(x2).to_vec();
    let xb = tape.reshape(x2, vec![1, s[0], s[1]])?;
    let y = tape.conv_flat(xb, w, b, spec)?;
    let ys = tape.shape(y).to_vec();
    tape.reshape(y, ys[1..].to_vec())
}

/// Late-fusion conv on a window tensor (w, F, C); a 2D window (w, C) is
/// promoted to (w, C, 1). Returns (w', F, f).
pub fn conv1d_late(tape: &mut Tape, x: Var, w: Var, b: Var, spec: &ConvSpec) -> Result<Var> {
    debug_assert_eq!(spec.fusion, FusionKind::Late);
    per_feature_unbatched(tape, x, w, b, spec, false)
}

/// Hybrid-fusion conv: late-fusion computation with one shared kernel.
pub fn conv1d_hybrid(tape: &mut Tape, x: Var, w: Var, b: Var, spec: &ConvSpec) -> Result<Var> {
    debug_assert_eq!(spec.fusion, FusionKind::Hybrid);
    per_feature_unbatched(tape, x, w, b, spec, true)
}

fn per_feature_unbatched(
    tape: &mut Tape,
    x: Var,
    w: Var,
    b: Var,
    spec: &ConvSpec,
    shared: bool,
) -> Result<Var> {
    let x3 = promote_to_3d(tape, x)?;
    let s = tape.shape(x3).to_vec();
    let xb = tape.reshape(x3, vec![1, s[0], s[1], s[2]])?;
    let y = tape.conv_feat(xb, w, b, spec, shared)?;
    let ys = tape.shape(y).to_vec();
    tape.reshape(y, ys[1..].to_vec())
}

/// (w, F, C) -> (w, F*C); 2D windows pass through.
pub fn fold_to_2d(tape: &mut Tape, x: Var) -> Result<Var> {
    match tape.shape(x) {
        [_, _] => Ok(x),
        &[w, f, c] => tape.reshape(x, vec![w, f * c]),
        other => Err(TensorError::ShapeMismatch {
            op: "fold_to_2d",
            details: format!("{other:?}"),
        }),
    }
}

/// (w, C) -> (w, C, 1) treating channels as features; 3D windows pass through.
pub fn promote_to_3d(tape: &mut Tape, x: Var) -> Result<Var> {
    match tape.shape(x) {
        &[w, c] => tape.reshape(x, vec![w, c, 1]),
        [_, _, _] => Ok(x),
        other => Err(TensorError::ShapeMismatch {
            op: "promote_to_3d",
            details: format!("{other:?}"),
        }),
    }
}

/// Channel concatenation of window tensors. Equal-rank operands concatenate
/// directly; when ranks differ the 3D operand is folded to 2D first.
pub fn concat_channels(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let (ra, rb) = (tape.shape(a).len(), tape.shape(b).len());
    let (a, b) = if ra == rb {
        (a, b)
    } else {
        (fold_to_2d(tape, a)?, fold_to_2d(tape, b)?)
    };
    tape.concat_last(a, b)
}

/// Max pooling over the time axis of an unbatched window tensor of rank 1-3.
pub fn maxpool1d(tape: &mut Tape, x: Var, width: usize) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let batched = match shape.as_slice() {
        &[w] => tape.reshape(x, vec![1, w, 1])?,
        &[w, c] => tape.reshape(x, vec![1, w, c])?,
        &[w, f, c] => tape.reshape(x, vec![1, w, f * c])?,
        other => {
            return Err(TensorError::ShapeMismatch {
                op: "maxpool1d",
                details: format!("{other:?}"),
            })
        }
    };
    let y = tape.maxpool_time(batched, width)?;
    let wo = tape.shape(y)[1];
    let mut out_shape = shape;
    out_shape[0] = wo;
    tape.reshape(y, out_shape)
}

/// Affine map plus activation on a flat (B, d_in) input.
pub fn dense(tape: &mut Tape, x: Var, w: Var, b: Var, activation: ActivationKind) -> Result<Var> {
    let y = tape.dense(x, w, b)?;
    Ok(tape.activation(activation, y))
}
