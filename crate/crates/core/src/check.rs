//! Central-finite-difference gradient verification.
//!
//! The checker is deliberately independent of the tape: it only needs a
//! scalar-valued closure over a flat parameter vector, so it can falsify the
//! backward sweep rather than mirror it.

/// Default perturbation for central differences.
pub const FD_STEP: f64 = 1e-5;

/// Default relative-error tolerance for double-precision gradient checks.
pub const GRAD_TOL: f64 = 1e-4;

/// Central finite differences: df/dx_i = (f(x + h e_i) - f(x - h e_i)) / 2h.
pub fn finite_difference_gradient<F>(mut f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut buf = x.to_vec();
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = buf[i];
        buf[i] = orig + h;
        let plus = f(&buf);
        buf[i] = orig - h;
        let minus = f(&buf);
        buf[i] = orig;
        grad[i] = (plus - minus) / (2.0 * h);
    }
    grad
}

/// |a - b| / max(|a|, |b|, 1).
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

#[derive(Debug)]
pub struct GradMismatch {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

/// Compare an analytic gradient against central finite differences of `f`.
/// Returns the worst relative error, or the first offending entry.
pub fn check_gradient<F>(
    f: F,
    x: &[f64],
    analytic: &[f64],
    h: f64,
    tol: f64,
) -> Result<f64, GradMismatch>
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(x.len(), analytic.len());
    let numeric = finite_difference_gradient(f, x, h);
    let mut worst = 0.0f64;
    for (i, (&a, &n)) in analytic.iter().zip(&numeric).enumerate() {
        let e = relative_error(a, n);
        if e > tol {
            return Err(GradMismatch {
                index: i,
                analytic: a,
                numeric: n,
                rel_err: e,
            });
        }
        worst = worst.max(e);
    }
    Ok(worst)
}

use crate::tensor::{Tape, Var};

/// Gradient-check a tape computation against finite differences.
///
/// `build` must construct the same graph on every call (re-seed any RNG it
/// uses): it receives one gradient-tracked leaf per entry of `leaves` and
/// returns a scalar loss. The analytic gradients of all leaves are compared
/// jointly against central differences over the concatenated flat vector.
pub fn tape_gradient_check<B>(
    mut build: B,
    leaves: &[(Vec<usize>, Vec<f64>)],
    h: f64,
    tol: f64,
) -> Result<f64, GradMismatch>
where
    B: FnMut(&mut Tape, &[Var]) -> Var,
{
    let flat: Vec<f64> = leaves.iter().flat_map(|(_, v)| v.iter().copied()).collect();

    let run = |build: &mut B, flat: &[f64]| -> (Tape, Vec<Var>, Var) {
        let mut tape = Tape::new();
        let mut vars = Vec::with_capacity(leaves.len());
        let mut off = 0;
        for (shape, v) in leaves {
            let n = v.len();
            vars.push(tape.param(flat[off..off + n].to_vec(), shape.clone()));
            off += n;
        }
        let loss = build(&mut tape, &vars);
        (tape, vars, loss)
    };

    let (tape, vars, loss) = run(&mut build, &flat);
    let grads = tape.backward(loss).expect("scalar loss");
    let mut analytic = Vec::with_capacity(flat.len());
    for &v in &vars {
        analytic.extend_from_slice(&grads.get_or_zero(v, tape.numel(v)));
    }

    check_gradient(
        |x| {
            let (tape, _, loss) = run(&mut build, x);
            tape.scalar(loss)
        },
        &flat,
        &analytic,
        h,
        tol,
    )
}

use crate::params::{BoundParams, ParamStore};

/// Gradient-check a model whose weights live in a [`ParamStore`].
///
/// `build` records the loss for the given store binding; it runs once for
/// the analytic gradients and 2N more times for central differences over
/// the store's flattened weights.
pub fn store_gradient_check<B>(
    store: &ParamStore,
    mut build: B,
    h: f64,
    tol: f64,
) -> Result<f64, GradMismatch>
where
    B: FnMut(&mut Tape, &BoundParams) -> Var,
{
    let flat = store.flat();
    let analytic = {
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let loss = build(&mut tape, &bound);
        let grads = tape.backward(loss).expect("scalar loss");
        let mut out = Vec::with_capacity(flat.len());
        for g in bound.gradients(&tape, &grads) {
            out.extend(g);
        }
        out
    };
    check_gradient(
        |theta| {
            let mut s = store.clone();
            s.set_flat(theta);
            let mut tape = Tape::new();
            let bound = s.bind(&mut tape);
            let loss = build(&mut tape, &bound);
            tape.scalar(loss)
        },
        &flat,
        &analytic,
        h,
        tol,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fd_matches_quadratic() {
        // f(x) = sum(x^2): grad = 2x.
        let x = [1.0, -2.0, 0.5];
        let g = finite_difference_gradient(|v| v.iter().map(|&a| a * a).sum(), &x, FD_STEP);
        for (gi, xi) in g.iter().zip(&x) {
            assert!(relative_error(*gi, 2.0 * xi) < 1e-9);
        }
    }
}
