//! Row-major dense kernels. All `*_acc` variants add into `out`.

use crate::Real;

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (x, y) in ra.iter().zip(rb) {
        s += *x * *y;
    }
    s
}

#[inline]
pub fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * *xi;
    }
}

/// out[m x n] += alpha * a[m x k] . b[k x n]
pub fn matmul_acc<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize, alpha: T) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            axpy(alpha * av, &b[p * n..(p + 1) * n], orow);
        }
    }
}

/// out[m x n] += alpha * a[m x k] . b[n x k]^T
pub fn matmul_bt_acc<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize, alpha: T) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            out[i * n + j] += alpha * dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
}

/// out[m x n] += alpha * a[k x m]^T . b[k x n]
pub fn matmul_at_acc<T: Real>(a: &[T], b: &[T], out: &mut [T], k: usize, m: usize, n: usize, alpha: T) {
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            axpy(alpha * av, brow, &mut out[i * n..(i + 1) * n]);
        }
    }
}

pub fn matmul<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    matmul_acc(a, b, &mut out, m, k, n, T::one());
    out
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// In-place row softmax. `-inf` entries become exactly zero. Returns `false`
/// if the row has no finite entry.
pub fn softmax_row<T: Real>(row: &mut [T]) -> bool {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    if !max.is_finite() {
        return false;
    }
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = if *v == T::neg_infinity() { T::zero() } else { (*v - max).exp() };
        sum += *v;
    }
    let inv = T::one() / sum;
    for v in row.iter_mut() {
        *v *= inv;
    }
    true
}

/// In-place row log-softmax; `-inf` stays `-inf`.
pub fn log_softmax_row<T: Real>(row: &mut [T]) -> bool {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    if !max.is_finite() {
        return false;
    }
    let sum: T = row
        .iter()
        .filter(|v| **v != T::neg_infinity())
        .map(|v| (*v - max).exp())
        .sum();
    let lse = max + sum.ln();
    for v in row.iter_mut() {
        *v -= lse;
    }
    true
}

/// Column indices of the `k` largest entries, ties broken by lower index.
pub fn topk_indices<T: Real>(row: &[T], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    if k >= row.len() {
        return idx;
    }
    idx.sort_by(|&a, &b| {
        row[b]
            .partial_cmp(&row[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx.truncate(k);
    idx
}

/// Sparsemax projection of one row onto the simplex.
pub fn sparsemax_row<T: Real>(row: &mut [T]) {
    let mut sorted: Vec<T> = row.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let mut cum = T::zero();
    let mut support = 0;
    let mut cum_at_support = T::zero();
    for (i, &z) in sorted.iter().enumerate() {
        cum += z;
        let k = T::cast((i + 1) as f64);
        if T::one() + k * z > cum {
            support = i + 1;
            cum_at_support = cum;
        }
    }
    let tau = (cum_at_support - T::one()) / T::cast(support as f64);
    for v in row.iter_mut() {
        *v = (*v - tau).max(T::zero());
    }
}

/// 1.5-entmax of one row (exact sort-based threshold).
pub fn entmax15_row<T: Real>(row: &mut [T]) {
    let half = T::cast(0.5);
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    for v in row.iter_mut() {
        *v = (*v - max) * half;
    }
    let mut sorted: Vec<T> = row.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let mut cum = T::zero();
    let mut cum_sq = T::zero();
    let mut tau_star = T::zero();
    for (i, &z) in sorted.iter().enumerate() {
        cum += z;
        cum_sq += z * z;
        let k = T::cast((i + 1) as f64);
        let mean = cum / k;
        let mean_sq = cum_sq / k;
        let ss = k * (mean_sq - mean * mean);
        let delta = ((T::one() - ss) / k).max(T::zero());
        let tau = mean - delta.sqrt();
        if tau <= z {
            tau_star = tau;
        }
    }
    for v in row.iter_mut() {
        let p = (*v - tau_star).max(T::zero());
        *v = p * p;
    }
}
