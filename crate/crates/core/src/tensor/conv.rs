//! 1D convolution geometry and the three fusion kernels.
//!
//! Early fusion is a conventional 1D convolution: one kernel spanning all
//! channels, sliding along time. Late fusion gives every feature row its own
//! kernel. Hybrid fusion slides one shared kernel along both time and the
//! feature axis, so its parameter count is independent of the feature count.

use serde::{Deserialize, Serialize};

use super::{ConvGeom, Result, TensorError};
use crate::tensor::ActivationKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionKind {
    Early,
    Late,
    Hybrid,
}

impl FusionKind {
    pub fn name(self) -> &'static str {
        match self {
            FusionKind::Early => "early",
            FusionKind::Late => "late",
            FusionKind::Hybrid => "hybrid",
        }
    }
}

impl std::str::FromStr for FusionKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "early" => Ok(FusionKind::Early),
            "late" => Ok(FusionKind::Late),
            "hybrid" => Ok(FusionKind::Hybrid),
            other => Err(format!("unknown fusion kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    Valid,
    Same,
}

/// Geometry and variant of one 1D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub fusion: FusionKind,
    pub kernel_width: usize,
    pub stride: usize,
    pub dilation: usize,
    pub filters: usize,
    pub padding: Padding,
    pub activation: ActivationKind,
}

impl ConvSpec {
    /// Stride-1, dilation-1 same-padding conv as used inside ECLSTM cells.
    pub fn cell(fusion: FusionKind, kernel_width: usize, filters: usize, activation: ActivationKind) -> Self {
        ConvSpec {
            fusion,
            kernel_width,
            stride: 1,
            dilation: 1,
            filters,
            padding: Padding::Same,
            activation,
        }
    }

    pub(crate) fn resolve(&self, input_len: usize) -> Result<ConvGeom> {
        let k = self.kernel_width;
        let (s, d) = (self.stride, self.dilation);
        debug_assert!(k >= 1 && s >= 1 && d >= 1);
        match self.padding {
            Padding::Valid => {
                let out_len = conv_output_len(input_len, k, s, d).ok_or(TensorError::Geometry {
                    input_len,
                    kernel: k,
                    stride: s,
                    dilation: d,
                })?;
                Ok(ConvGeom {
                    kernel: k,
                    stride: s,
                    dilation: d,
                    pad_left: 0,
                    out_len,
                })
            }
            Padding::Same => {
                if s != 1 {
                    return Err(TensorError::SamePaddingStride { stride: s });
                }
                // Total padding d*(k-1), split left-light as in TF "same".
                let total = d * (k - 1);
                Ok(ConvGeom {
                    kernel: k,
                    stride: 1,
                    dilation: d,
                    pad_left: total / 2,
                    out_len: input_len,
                })
            }
        }
    }
}

/// Valid-padding output length: floor((L - d*(k-1) - 1)/s) + 1, or None when
/// the dilated kernel does not fit.
pub fn conv_output_len(input_len: usize, kernel: usize, stride: usize, dilation: usize) -> Option<usize> {
    let span = dilation * (kernel - 1) + 1;
    if span > input_len {
        return None;
    }
    Some((input_len - span) / stride + 1)
}

/// x (N, L, C) * w (k, C, f) + b (f) -> y (N, out_len, f)
pub(crate) fn conv_flat_forward(
    x: &[f64],
    w: &[f64],
    b: &[f64],
    n: usize,
    l: usize,
    c: usize,
    f: usize,
    g: &ConvGeom,
) -> Vec<f64> {
    let lo = g.out_len;
    let mut y = vec![0.0; n * lo * f];
    for bi in 0..n {
        let xb = &x[bi * l * c..(bi + 1) * l * c];
        let yb = &mut y[bi * lo * f..(bi + 1) * lo * f];
        for p in 0..lo {
            let yo = &mut yb[p * f..(p + 1) * f];
            yo.copy_from_slice(b);
            for j in 0..g.kernel {
                let ip = (g.stride * p + g.dilation * j) as isize - g.pad_left as isize;
                if ip < 0 || ip as usize >= l {
                    continue;
                }
                let xrow = &xb[ip as usize * c..(ip as usize + 1) * c];
                let wj = &w[j * c * f..(j + 1) * c * f];
                for (ci, &xv) in xrow.iter().enumerate() {
                    let wrow = &wj[ci * f..(ci + 1) * f];
                    for (yv, &wv) in yo.iter_mut().zip(wrow) {
                        *yv += xv * wv;
                    }
                }
            }
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_flat_backward(
    dy: &[f64],
    x: &[f64],
    w: &[f64],
    n: usize,
    l: usize,
    c: usize,
    f: usize,
    g: &ConvGeom,
    dx: Option<&mut [f64]>,
    dw: Option<&mut [f64]>,
    db: Option<&mut [f64]>,
) {
    let lo = g.out_len;
    if let Some(db) = db {
        for bi in 0..n {
            for p in 0..lo {
                let dyo = &dy[(bi * lo + p) * f..(bi * lo + p + 1) * f];
                for (dbv, &gv) in db.iter_mut().zip(dyo) {
                    *dbv += gv;
                }
            }
        }
    }
    let mut dx = dx;
    let mut dw = dw;
    for bi in 0..n {
        for p in 0..lo {
            let dyo = &dy[(bi * lo + p) * f..(bi * lo + p + 1) * f];
            for j in 0..g.kernel {
                let ip = (g.stride * p + g.dilation * j) as isize - g.pad_left as isize;
                if ip < 0 || ip as usize >= l {
                    continue;
                }
                let xoff = (bi * l + ip as usize) * c;
                if let Some(dw) = dw.as_deref_mut() {
                    let xrow = &x[xoff..xoff + c];
                    let dwj = &mut dw[j * c * f..(j + 1) * c * f];
                    for (ci, &xv) in xrow.iter().enumerate() {
                        let dwrow = &mut dwj[ci * f..(ci + 1) * f];
                        for (dwv, &gv) in dwrow.iter_mut().zip(dyo) {
                            *dwv += xv * gv;
                        }
                    }
                }
                if let Some(dx) = dx.as_deref_mut() {
                    let wj = &w[j * c * f..(j + 1) * c * f];
                    let dxrow = &mut dx[xoff..xoff + c];
                    for (ci, dxv) in dxrow.iter_mut().enumerate() {
                        let wrow = &wj[ci * f..(ci + 1) * f];
                        let mut acc = 0.0;
                        for (&wv, &gv) in wrow.iter().zip(dyo) {
                            acc += wv * gv;
                        }
                        *dxv += acc;
                    }
                }
            }
        }
    }
}

/// x (N, L, F, C) convolved per feature row along time.
/// late: w (F, k, C, f), b (F, f); hybrid (shared): w (k, C, f), b (f).
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_feat_forward(
    x: &[f64],
    w: &[f64],
    b: &[f64],
    n: usize,
    l: usize,
    nf: usize,
    c: usize,
    f: usize,
    g: &ConvGeom,
    shared: bool,
) -> Vec<f64> {
    let lo = g.out_len;
    let mut y = vec![0.0; n * lo * nf * f];
    for bi in 0..n {
        for p in 0..lo {
            let ybase = ((bi * lo) + p) * nf * f;
            for q in 0..nf {
                let yo = &mut y[ybase + q * f..ybase + (q + 1) * f];
                let brow = if shared { b } else { &b[q * f..(q + 1) * f] };
                yo.copy_from_slice(brow);
            }
            for j in 0..g.kernel {
                let ip = (g.stride * p + g.dilation * j) as isize - g.pad_left as isize;
                if ip < 0 || ip as usize >= l {
                    continue;
                }
                let xbase = ((bi * l) + ip as usize) * nf * c;
                for q in 0..nf {
                    let xrow = &x[xbase + q * c..xbase + (q + 1) * c];
                    let wq = if shared {
                        &w[j * c * f..(j + 1) * c * f]
                    } else {
                        &w[((q * g.kernel) + j) * c * f..((q * g.kernel) + j + 1) * c * f]
                    };
                    let yo = &mut y[ybase + q * f..ybase + (q + 1) * f];
                    for (ci, &xv) in xrow.iter().enumerate() {
                        let wrow = &wq[ci * f..(ci + 1) * f];
                        for (yv, &wv) in yo.iter_mut().zip(wrow) {
                            *yv += xv * wv;
                        }
                    }
                }
            }
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_feat_backward(
    dy: &[f64],
    x: &[f64],
    w: &[f64],
    n: usize,
    l: usize,
    nf: usize,
    c: usize,
    f: usize,
    g: &ConvGeom,
    shared: bool,
    dx: Option<&mut [f64]>,
    dw: Option<&mut [f64]>,
    db: Option<&mut [f64]>,
) {
    let lo = g.out_len;
    if let Some(db) = db {
        for bi in 0..n {
            for p in 0..lo {
                let ybase = ((bi * lo) + p) * nf * f;
                for q in 0..nf {
                    let dyo = &dy[ybase + q * f..ybase + (q + 1) * f];
                    let dbrow = if shared {
                        &mut db[..f]
                    } else {
                        &mut db[q * f..(q + 1) * f]
                    };
                    for (dbv, &gv) in dbrow.iter_mut().zip(dyo) {
                        *dbv += gv;
                    }
                }
            }
        }
    }
    let mut dx = dx;
    let mut dw = dw;
    for bi in 0..n {
        for p in 0..lo {
            let ybase = ((bi * lo) + p) * nf * f;
            for j in 0..g.kernel {
                let ip = (g.stride * p + g.dilation * j) as isize - g.pad_left as isize;
                if ip < 0 || ip as usize >= l {
                    continue;
                }
                let xbase = ((bi * l) + ip as usize) * nf * c;
                for q in 0..nf {
                    let dyo = &dy[ybase + q * f..ybase + (q + 1) * f];
                    let woff = if shared {
                        j * c * f
                    } else {
                        ((q * g.kernel) + j) * c * f
                    };
                    if let Some(dw) = dw.as_deref_mut() {
                        let xrow = &x[xbase + q * c..xbase + (q + 1) * c];
                        for (ci, &xv) in xrow.iter().enumerate() {
                            let dwrow = &mut dw[woff + ci * f..woff + (ci + 1) * f];
                            for (dwv, &gv) in dwrow.iter_mut().zip(dyo) {
                                *dwv += xv * gv;
                            }
                        }
                    }
                    if let Some(dx) = dx.as_deref_mut() {
                        let dxrow = &mut dx[xbase + q * c..xbase + (q + 1) * c];
                        for (ci, dxv) in dxrow.iter_mut().enumerate() {
                            let wrow = &w[woff + ci * f..woff + (ci + 1) * f];
                            let mut acc = 0.0;
                            for (&wv, &gv) in wrow.iter().zip(dyo) {
                                acc += wv * gv;
                            }
                            *dxv += acc;
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valid_length_formula() {
        // 12 samples, kernel 3, dilation 2, stride 2 -> 4 samples.
        assert_eq!(conv_output_len(12, 3, 2, 2), Some(4));
        assert_eq!(conv_output_len(5, 2, 1, 1), Some(4));
        assert_eq!(conv_output_len(3, 5, 1, 1), None);
        assert_eq!(conv_output_len(4, 2, 1, 4), None);
    }

    #[test]
    fn same_padding_rejects_stride() {
        let spec = ConvSpec {
            fusion: FusionKind::Early,
            kernel_width: 3,
            stride: 2,
            dilation: 1,
            filters: 1,
            padding: Padding::Same,
            activation: ActivationKind::Linear,
        };
        assert!(matches!(
            spec.resolve(8),
            Err(TensorError::SamePaddingStride { stride: 2 })
        ));
    }

    #[test]
    fn same_padding_preserves_length() {
        for k in 1..=5 {
            for d in 1..=3 {
                let spec = ConvSpec::cell(FusionKind::Early, k, 1, ActivationKind::Linear);
                let spec = ConvSpec { dilation: d, ..spec };
                let g = spec.resolve(9).unwrap();
                assert_eq!(g.out_len, 9, "k={k} d={d}");
            }
        }
    }
}
