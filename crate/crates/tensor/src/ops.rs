//! Value-level versions of the attention primitives, for callers that do not
//! need gradients. They share kernels with the tape ops.

use crate::kernels;
use crate::{Real, Result, Tensor, TensorError};

/// Which axis of a matrix a reduction runs along.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

/// Softmax along `axis` (`Cols` normalizes each row). `-inf` maps to 0.
pub fn softmax<T: Real>(x: &Tensor<T>, axis: Axis) -> Result<Tensor<T>> {
    match axis {
        Axis::Cols => {
            let (r, c) = x.dims2()?;
            let mut out = x.data().to_vec();
            for i in 0..r {
                if !kernels::softmax_row(&mut out[i * c..(i + 1) * c]) {
                    return Err(TensorError::EmptySupport { row: i });
                }
            }
            Tensor::matrix(r, c, out)
        }
        Axis::Rows => softmax(&x.transpose()?, Axis::Cols)?.transpose(),
    }
}

pub(crate) fn topk_mask_row<T: Real>(row: &mut [T], k: usize) {
    if k >= row.len() {
        return;
    }
    let keep = kernels::topk_indices(row, k);
    let mut flags = vec![false; row.len()];
    for j in keep {
        flags[j] = true;
    }
    for (v, f) in row.iter_mut().zip(flags) {
        if !f {
            *v = T::neg_infinity();
        }
    }
}

/// Keeps the `min(k, cols)` largest entries per row (lowest index wins ties)
/// and replaces the rest with `-inf`.
pub fn topk_mask<T: Real>(scores: &Tensor<T>, k: usize) -> Result<Tensor<T>> {
    if k == 0 {
        return Err(TensorError::Invalid("top-k needs k >= 1".into()));
    }
    let (r, c) = scores.dims2()?;
    let mut out = scores.data().to_vec();
    if c > 0 {
        for row in out.chunks_exact_mut(c) {
            topk_mask_row(row, k);
        }
    }
    Tensor::matrix(r, c, out)
}

pub fn rmsnorm<T: Real>(x: &Tensor<T>, gain: &[T]) -> Result<Tensor<T>> {
    let (r, c) = x.dims2()?;
    if gain.len() != c {
        return Err(TensorError::ShapeMismatch {
            op: "rmsnorm",
            lhs: vec![r, c],
            rhs: vec![gain.len()],
        });
    }
    let eps = T::cast(crate::tape::RMS_EPS);
    let mut out = x.data().to_vec();
    if c > 0 {
        for row in out.chunks_exact_mut(c) {
            let inv = T::one() / (kernels::dot(row, row) / T::cast(c as f64) + eps).sqrt();
            for (v, g) in row.iter_mut().zip(gain) {
                *v = *v * inv * *g;
            }
        }
    }
    Tensor::matrix(r, c, out)
}

pub fn sparsemax<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (r, c) = x.dims2()?;
    let mut out = x.data().to_vec();
    if c > 0 {
        out.chunks_exact_mut(c).for_each(kernels::sparsemax_row);
    }
    Tensor::matrix(r, c, out)
}

pub fn entmax15<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (r, c) = x.dims2()?;
    let mut out = x.data().to_vec();
    if c > 0 {
        out.chunks_exact_mut(c).for_each(kernels::entmax15_row);
    }
    Tensor::matrix(r, c, out)
}
