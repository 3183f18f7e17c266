//! Composite layers built from tape ops.

use crate::{Real, Result, Tape, TensorError, Var};

/// `x . w (+ b)`
pub fn linear<T: Real>(tape: &mut Tape<'_, T>, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
    let y = tape.matmul(x, w)?;
    match b {
        Some(b) => tape.add_row(y, b),
        None => Ok(y),
    }
}

/// Weights of a gated feed-forward block.
#[derive(Clone, Copy, Debug)]
pub struct SwiGluWeights {
    pub w_gate: Var,
    pub b_gate: Var,
    pub w_val: Var,
    pub b_val: Var,
    pub w_out: Var,
}

/// `(sigmoid(x W1 + b1) * silu(x W2 + b2)) W3`
///
/// The sigmoid gate and the SiLU branch are multiplied element-wise in the
/// hidden width, then projected back to the model width.
pub fn swiglu<T: Real>(tape: &mut Tape<'_, T>, x: Var, w: &SwiGluWeights) -> Result<Var> {
    let (_, d) = tape.dims(x)?;
    let (gi, hidden) = tape.dims(w.w_gate)?;
    let (vi, vh) = tape.dims(w.w_val)?;
    let (oi, od) = tape.dims(w.w_out)?;
    if gi != d || vi != d || vh != hidden || oi != hidden || od != d {
        return Err(TensorError::ShapeMismatch {
            op: "swiglu",
            lhs: vec![d, hidden],
            rhs: vec![vi, vh, oi, od],
        });
    }
    let g = linear(tape, x, w.w_gate, Some(w.b_gate))?;
    let g = tape.sigmoid(g)?;
    let v = linear(tape, x, w.w_val, Some(w.b_val))?;
    let v = tape.silu(v)?;
    let h = tape.mul(g, v)?;
    tape.matmul(h, w.w_out)
}
