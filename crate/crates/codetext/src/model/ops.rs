//! Primitive tensor ops with matching backward passes.

use ndarray::{Array1, Array2};

use super::Scalar;

const RMS_EPS: f64 = 1e-6;

/// Scale-only RMS normalization per row: y = gain * x / rms(x).
/// Returns the output and the per-row inverse rms needed by backward.
pub fn rms_norm<T: Scalar>(x: &Array2<T>, gain: &Array1<T>) -> (Array2<T>, Array1<T>) {
    let n = T::from_f64(x.ncols() as f64);
    let eps = T::from_f64(RMS_EPS);
    let inv_rms: Array1<T> = x
        .rows()
        .into_iter()
        .map(|row| {
            let mean_sq = row.iter().map(|&v| v * v).sum::<T>() / n;
            T::one() / (mean_sq + eps).sqrt()
        })
        .collect();
    let mut y = x.clone();
    for (mut row, &ir) in y.rows_mut().into_iter().zip(inv_rms.iter()) {
        for (v, &g) in row.iter_mut().zip(gain.iter()) {
            *v = *v * ir * g;
        }
    }
    (y, inv_rms)
}

/// Backward of [`rms_norm`]: returns dx and accumulates dgain.
pub fn rms_norm_bwd<T: Scalar>(
    dy: &Array2<T>,
    x: &Array2<T>,
    gain: &Array1<T>,
    inv_rms: &Array1<T>,
    dgain: &mut Array1<T>,
) -> Array2<T> {
    let n = T::from_f64(x.ncols() as f64);
    let mut dx = Array2::zeros(x.raw_dim());
    for r in 0..x.nrows() {
        let ir = inv_rms[r];
        // dgain += dy * x * inv_rms
        for c in 0..x.ncols() {
            dgain[c] = dgain[c] + dy[[r, c]] * x[[r, c]] * ir;
        }
        // u = dy * gain; dx = ir*u - x * ir^3/n * (u . x)
        let mut dot = T::zero();
        for c in 0..x.ncols() {
            dot = dot + dy[[r, c]] * gain[c] * x[[r, c]];
        }
        let coef = ir * ir * ir / n * dot;
        for c in 0..x.ncols() {
            dx[[r, c]] = ir * dy[[r, c]] * gain[c] - coef * x[[r, c]];
        }
    }
    dx
}

/// Row-wise softmax (numerically stabilized).
pub fn softmax_rows<T: Scalar>(x: &Array2<T>) -> Array2<T> {
    let mut y = x.clone();
    for mut row in y.rows_mut() {
        let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    y
}

/// Backward of softmax given its output y: dx = y * (dy - sum(y * dy)).
pub fn softmax_rows_bwd<T: Scalar>(y: &Array2<T>, dy: &Array2<T>) -> Array2<T> {
    let mut dx = Array2::zeros(y.raw_dim());
    for r in 0..y.nrows() {
        let mut dot = T::zero();
        for c in 0..y.ncols() {
            dot = dot + y[[r, c]] * dy[[r, c]];
        }
        for c in 0..y.ncols() {
            dx[[r, c]] = y[[r, c]] * (dy[[r, c]] - dot);
        }
    }
    dx
}

pub fn relu<T: Scalar>(x: &Array2<T>) -> Array2<T> {
    x.mapv(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn relu_bwd<T: Scalar>(x: &Array2<T>, dy: &Array2<T>) -> Array2<T> {
    let mut dx = dy.clone();
    dx.zip_mut_with(x, |d, &v| {
        if v <= T::zero() {
            *d = T::zero();
        }
    });
    dx
}

/// Relative-position bucket, T5 convention. `query` and `key` are
/// absolute positions; bidirectional attention folds sign into the
/// upper bucket half, causal attention buckets only the past.
pub fn rel_bucket(
    query: usize,
    key: usize,
    bidirectional: bool,
    num_buckets: usize,
    max_distance: usize,
) -> usize {
    let relative = key as i64 - query as i64;
    let mut bucket = 0usize;
    let mut buckets = num_buckets;
    let n = if bidirectional {
        buckets /= 2;
        if relative > 0 {
            bucket += buckets;
        }
        relative.unsigned_abs() as usize
    } else {
        (-relative).max(0) as usize
    };
    let max_exact = buckets / 2;
    let val = if n < max_exact {
        n
    } else {
        let log_ratio = ((n as f64 / max_exact as f64).ln()
            / (max_distance as f64 / max_exact as f64).ln())
            * (buckets - max_exact) as f64;
        (max_exact + log_ratio as usize).min(buckets - 1)
    };
    bucket + val
}

/// Bucket matrix for a (query_len, key_len) attention shape.
pub fn bucket_matrix(
    query_len: usize,
    key_len: usize,
    bidirectional: bool,
    num_buckets: usize,
    max_distance: usize,
) -> Array2<usize> {
    Array2::from_shape_fn((query_len, key_len), |(q, k)| {
        rel_bucket(q, k, bidirectional, num_buckets, max_distance)
    })
}
