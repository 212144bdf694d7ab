//! Reverse-mode sweep over a recorded tape.

use super::conv::{conv_feat_backward, conv_flat_backward};
use super::{numel, Grads, Op, Result, Tape, TensorError, Var};

fn buf<'a>(grads: &'a mut [Option<Vec<f64>>], id: usize, n: usize) -> &'a mut [f64] {
    grads[id].get_or_insert_with(|| vec![0.0; n])
}

impl Tape {
    /// Fill gradients for every parameter leaf reachable from `loss`.
    /// Accumulation is additive; the sweep is deterministic.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        if self.numel(loss) != 1 {
            return Err(TensorError::NonScalarLoss {
                numel: self.numel(loss),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(vec![1.0]);

        for id in (0..=loss.id).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad {
                grads[id] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };

            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Add(a, b) => {
                    self.acc_scaled(&mut grads, *a, &g, 1.0);
                    self.acc_scaled(&mut grads, *b, &g, 1.0);
                }
                Op::Sub(a, b) => {
                    self.acc_scaled(&mut grads, *a, &g, 1.0);
                    self.acc_scaled(&mut grads, *b, &g, -1.0);
                }
                Op::Mul(a, b) => {
                    if self.needs_grad(*a) {
                        let bv = self.value(*b);
                        let da = buf(&mut grads, a.id, bv.len());
                        for ((d, &gv), &v) in da.iter_mut().zip(&g).zip(bv) {
                            *d += gv * v;
                        }
                    }
                    if self.needs_grad(*b) {
                        let av = self.value(*a);
                        let db = buf(&mut grads, b.id, av.len());
                        for ((d, &gv), &v) in db.iter_mut().zip(&g).zip(av) {
                            *d += gv * v;
                        }
                    }
                }
                Op::Scale(a, c) => self.acc_scaled(&mut grads, *a, &g, *c),
                Op::Activation(x, kind) => {
                    if self.needs_grad(*x) {
                        let y = &node.value;
                        let dx = buf(&mut grads, x.id, y.len());
                        for ((d, &gv), &yv) in dx.iter_mut().zip(&g).zip(y) {
                            *d += gv * kind.derivative_from_output(yv);
                        }
                    }
                }
                Op::Dense { x, w, b } => {
                    let xs = self.shape(*x);
                    let (batch, d_in) = (xs[0], xs[1]);
                    let d_out = self.shape(*w)[1];
                    if self.needs_grad(*b) {
                        let db = buf(&mut grads, b.id, d_out);
                        for bi in 0..batch {
                            let grow = &g[bi * d_out..(bi + 1) * d_out];
                            for (d, &gv) in db.iter_mut().zip(grow) {
                                *d += gv;
                            }
                        }
                    }
                    if self.needs_grad(*w) {
                        let xv = self.value(*x);
                        let dw = buf(&mut grads, w.id, d_in * d_out);
                        for bi in 0..batch {
                            let grow = &g[bi * d_out..(bi + 1) * d_out];
                            let xrow = &xv[bi * d_in..(bi + 1) * d_in];
                            for (i, &xvv) in xrow.iter().enumerate() {
                                let dwrow = &mut dw[i * d_out..(i + 1) * d_out];
                                for (d, &gv) in dwrow.iter_mut().zip(grow) {
                                    *d += xvv * gv;
                                }
                            }
                        }
                    }
                    if self.needs_grad(*x) {
                        let wv = self.value(*w);
                        let dx = buf(&mut grads, x.id, batch * d_in);
                        for bi in 0..batch {
                            let grow = &g[bi * d_out..(bi + 1) * d_out];
                            let dxrow = &mut dx[bi * d_in..(bi + 1) * d_in];
                            for (i, d) in dxrow.iter_mut().enumerate() {
                                let wrow = &wv[i * d_out..(i + 1) * d_out];
                                let mut acc = 0.0;
                                for (&wvv, &gv) in wrow.iter().zip(grow) {
                                    acc += wvv * gv;
                                }
                                *d += acc;
                            }
                        }
                    }
                }
                Op::ConvFlat { x, w, b, geom } => {
                    let xs = self.shape(*x);
                    let (n, l, c) = (xs[0], xs[1], xs[2]);
                    let f = self.shape(*w)[2];
                    let (gx, gw, gb) = (self.needs_grad(*x), self.needs_grad(*w), self.needs_grad(*b));
                    let mut dx = if gx { Some(vec![0.0; n * l * c]) } else { None };
                    let mut dw = if gw { Some(vec![0.0; geom.kernel * c * f]) } else { None };
                    let mut db = if gb { Some(vec![0.0; f]) } else { None };
                    conv_flat_backward(
                        &g,
                        self.value(*x),
                        self.value(*w),
                        n,
                        l,
                        c,
                        f,
                        geom,
                        dx.as_deref_mut(),
                        dw.as_deref_mut(),
                        db.as_deref_mut(),
                    );
                    self.merge(&mut grads, *x, dx);
                    self.merge(&mut grads, *w, dw);
                    self.merge(&mut grads, *b, db);
                }
                Op::ConvPerFeature {
                    x,
                    w,
                    b,
                    geom,
                    shared,
                } => {
                    let xs = self.shape(*x);
                    let (n, l, nf, c) = (xs[0], xs[1], xs[2], xs[3]);
                    let f = *self.shape(*w).last().unwrap();
                    let (gx, gw, gb) = (self.needs_grad(*x), self.needs_grad(*w), self.needs_grad(*b));
                    let mut dx = if gx { Some(vec![0.0; n * l * nf * c]) } else { None };
                    let mut dw = if gw { Some(vec![0.0; self.numel(*w)]) } else { None };
                    let mut db = if gb { Some(vec![0.0; self.numel(*b)]) } else { None };
                    conv_feat_backward(
                        &g,
                        self.value(*x),
                        self.value(*w),
                        n,
                        l,
                        nf,
                        c,
                        f,
                        geom,
                        *shared,
                        dx.as_deref_mut(),
                        dw.as_deref_mut(),
                        db.as_deref_mut(),
                    );
                    self.merge(&mut grads, *x, dx);
                    self.merge(&mut grads, *w, dw);
                    self.merge(&mut grads, *b, db);
                }
                Op::MaxPool { x, width, argmax } => {
                    if self.needs_grad(*x) {
                        let xs = self.shape(*x);
                        let (n, l) = (xs[0], xs[1]);
                        let r = numel(&xs[2..]);
                        let lo = l / width;
                        let dx = buf(&mut grads, x.id, n * l * r);
                        for bi in 0..n {
                            for q in 0..lo {
                                for rv in 0..r {
                                    let oi = (bi * lo + q) * r + rv;
                                    let u = argmax[oi] as usize;
                                    dx[(bi * l + q * width + u) * r + rv] += g[oi];
                                }
                            }
                        }
                    }
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let c = inv_std.len();
                    let rows = xhat.len() / c;
                    if self.needs_grad(*beta) {
                        let db = buf(&mut grads, beta.id, c);
                        for row in 0..rows {
                            for (d, &gg) in db.iter_mut().zip(&g[row * c..(row + 1) * c]) {
                                *d += gg;
                            }
                        }
                    }
                    if self.needs_grad(*gamma) {
                        let dg = buf(&mut grads, gamma.id, c);
                        for row in 0..rows {
                            let base = row * c;
                            for ci in 0..c {
                                dg[ci] += g[base + ci] * xhat[base + ci];
                            }
                        }
                    }
                    if self.needs_grad(*x) {
                        // dxhat = g * gamma; dx = inv_std * (dxhat - mean(dxhat)
                        //         - xhat * mean(dxhat .* xhat))
                        let gv = self.value(*gamma);
                        let mut s1 = vec![0.0; c];
                        let mut s2 = vec![0.0; c];
                        for row in 0..rows {
                            let base = row * c;
                            for ci in 0..c {
                                let dh = g[base + ci] * gv[ci];
                                s1[ci] += dh;
                                s2[ci] += dh * xhat[base + ci];
                            }
                        }
                        let inv_n = 1.0 / rows as f64;
                        let gv = gv.to_vec();
                        let dx = buf(&mut grads, x.id, rows * c);
                        for row in 0..rows {
                            let base = row * c;
                            for ci in 0..c {
                                let dh = g[base + ci] * gv[ci];
                                dx[base + ci] += inv_std[ci]
                                    * (dh - s1[ci] * inv_n - xhat[base + ci] * s2[ci] * inv_n);
                            }
                        }
                    }
                }
                Op::BatchNormInfer {
                    x,
                    gamma,
                    beta,
                    mean,
                    inv_std,
                } => {
                    let c = inv_std.len();
                    let rows = self.numel(*x) / c;
                    if self.needs_grad(*beta) {
                        let db = buf(&mut grads, beta.id, c);
                        for row in 0..rows {
                            for (d, &gg) in db.iter_mut().zip(&g[row * c..(row + 1) * c]) {
                                *d += gg;
                            }
                        }
                    }
                    if self.needs_grad(*gamma) {
                        let xv = self.value(*x).to_vec();
                        let dg = buf(&mut grads, gamma.id, c);
                        for row in 0..rows {
                            let base = row * c;
                            for ci in 0..c {
                                let xhat = (xv[base + ci] - mean[ci]) * inv_std[ci];
                                dg[ci] += g[base + ci] * xhat;
                            }
                        }
                    }
                    if self.needs_grad(*x) {
                        let gv = self.value(*gamma).to_vec();
                        let dx = buf(&mut grads, x.id, rows * c);
                        for row in 0..rows {
                            let base = row * c;
                            for ci in 0..c {
                                dx[base + ci] += g[base + ci] * gv[ci] * inv_std[ci];
                            }
                        }
                    }
                }
                Op::Dropout { x, mask } => {
                    if self.needs_grad(*x) {
                        let dx = buf(&mut grads, x.id, mask.len());
                        for ((d, &gv), &m) in dx.iter_mut().zip(&g).zip(mask) {
                            *d += gv * m;
                        }
                    }
                }
                Op::ConcatLast(a, b) => {
                    let ca = *self.shape(*a).last().unwrap();
                    let cb = *self.shape(*b).last().unwrap();
                    let rows = self.numel(*a) / ca;
                    if self.needs_grad(*a) {
                        let da = buf(&mut grads, a.id, rows * ca);
                        for row in 0..rows {
                            let go = row * (ca + cb);
                            for (d, &gv) in
                                da[row * ca..(row + 1) * ca].iter_mut().zip(&g[go..go + ca])
                            {
                                *d += gv;
                            }
                        }
                    }
                    if self.needs_grad(*b) {
                        let db = buf(&mut grads, b.id, rows * cb);
                        for row in 0..rows {
                            let go = row * (ca + cb) + ca;
                            for (d, &gv) in
                                db[row * cb..(row + 1) * cb].iter_mut().zip(&g[go..go + cb])
                            {
                                *d += gv;
                            }
                        }
                    }
                }
                Op::SliceLast { x, start, len } => {
                    if self.needs_grad(*x) {
                        let c = *self.shape(*x).last().unwrap();
                        let rows = self.numel(*x) / c;
                        let dx = buf(&mut grads, x.id, rows * c);
                        for row in 0..rows {
                            let dst = &mut dx[row * c + start..row * c + start + len];
                            for (d, &gv) in dst.iter_mut().zip(&g[row * len..(row + 1) * len]) {
                                *d += gv;
                            }
                        }
                    }
                }
                Op::Reshape(x) => self.acc_scaled(&mut grads, *x, &g, 1.0),
                Op::StackAxis1(xs) => {
                    let s0 = self.shape(xs[0]);
                    let b = s0[0];
                    let r = numel(&s0[1..]);
                    let l = xs.len();
                    for (t, &v) in xs.iter().enumerate() {
                        if !self.needs_grad(v) {
                            continue;
                        }
                        let dv = buf(&mut grads, v.id, b * r);
                        for bi in 0..b {
                            let src = &g[(bi * l + t) * r..(bi * l + t + 1) * r];
                            for (d, &gv) in dv[bi * r..(bi + 1) * r].iter_mut().zip(src) {
                                *d += gv;
                            }
                        }
                    }
                }
                Op::TimeSlice { x, t } => {
                    if self.needs_grad(*x) {
                        let xs = self.shape(*x);
                        let (b, l) = (xs[0], xs[1]);
                        let r = numel(&xs[2..]);
                        let dx = buf(&mut grads, x.id, b * l * r);
                        for bi in 0..b {
                            let dst = &mut dx[(bi * l + t) * r..(bi * l + t + 1) * r];
                            for (d, &gv) in dst.iter_mut().zip(&g[bi * r..(bi + 1) * r]) {
                                *d += gv;
                            }
                        }
                    }
                }
                Op::SumAll(x) => {
                    if self.needs_grad(*x) {
                        let n = self.numel(*x);
                        let dx = buf(&mut grads, x.id, n);
                        for d in dx.iter_mut() {
                            *d += g[0];
                        }
                    }
                }
                Op::MeanAll(x) => {
                    if self.needs_grad(*x) {
                        let n = self.numel(*x);
                        let gv = g[0] / n as f64;
                        let dx = buf(&mut grads, x.id, n);
                        for d in dx.iter_mut() {
                            *d += gv;
                        }
                    }
                }
            }
        }
        Ok(Grads { by_node: grads })
    }

    fn acc_scaled(&self, grads: &mut [Option<Vec<f64>>], v: Var, g: &[f64], scale: f64) {
        if !self.needs_grad(v) {
            return;
        }
        let dv = buf(grads, v.id, self.numel(v));
        for (d, &gv) in dv.iter_mut().zip(g) {
            *d += scale * gv;
        }
    }

    fn merge(&self, grads: &mut [Option<Vec<f64>>], v: Var, contribution: Option<Vec<f64>>) {
        let Some(contribution) = contribution else {
            return;
        };
        match &mut grads[v.id] {
            Some(existing) => {
                for (d, c) in existing.iter_mut().zip(contribution) {
                    *d += c;
                }
            }
            slot => *slot = Some(contribution),
        }
    }
}
