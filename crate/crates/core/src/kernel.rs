//! Dense kernels shared by every forward schedule.
//!
//! All matrices are row-major slices. Activation buffers are node-major:
//! the row of a node holds its value for every sample of the batch, so one
//! row is one contiguous `width`-long vector and the products below reduce
//! to `axpy` sweeps over the batch dimension.
//!
//! With the `parallel` feature the matrix product splits its output rows
//! across a rayon pool once the product is large enough and more than one
//! kernel thread is allowed. The thread cap comes from `DAGFORGE_THREADS`
//! (default 1), read once per process.

use std::sync::OnceLock;

use crate::scalar::Scalar;

pub const THREADS_ENV: &str = "DAGFORGE_THREADS";

/// Products below this many multiply-adds always run on the calling thread.
pub const PARALLEL_MIN_WORK: usize = 1 << 15;

/// Kernel thread cap from `DAGFORGE_THREADS`; 1 when unset or invalid.
pub fn kernel_threads() -> usize {
    static THREADS: OnceLock<usize> = OnceLock::new();
    *THREADS.get_or_init(|| {
        std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()).filter(|&t| t >= 1).unwrap_or(1)
    })
}

#[cfg(feature = "parallel")]
fn kernel_pool() -> Option<&'static rayon::ThreadPool> {
    static POOL: OnceLock<Option<rayon::ThreadPool>> = OnceLock::new();
    POOL.get_or_init(|| {
        let threads = kernel_threads();
        if threads < 2 {
            return None;
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .thread_name(|i| format!("dagforge-kernel-{i}"))
            .build()
            .ok()
    })
    .as_ref()
}

#[inline]
fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * xi;
    }
}

#[inline]
fn dot<T: Scalar>(x: &[T], y: &[T]) -> T {
    x.iter().zip(y).fold(T::zero(), |acc, (&a, &b)| acc + a * b)
}

/// Copy rows `rows[i]` of `src` into row `i` of `dst`.
pub fn gather_rows<T: Scalar>(src: &[T], width: usize, rows: &[usize], dst: &mut [T]) {
    debug_assert!(dst.len() >= rows.len() * width);
    for (out, &r) in dst.chunks_exact_mut(width).zip(rows) {
        out.copy_from_slice(&src[r * width..(r + 1) * width]);
    }
}

/// `out = mask ⊙ raw`, element-wise.
pub fn mask_product<T: Scalar>(mask: &[T], raw: &[T], out: &mut [T]) {
    debug_assert_eq!(mask.len(), raw.len());
    for ((o, &m), &w) in out.iter_mut().zip(mask).zip(raw) {
        *o = m * w;
    }
}

/// Fill each `width`-long row of `out` with the matching bias entry.
pub fn broadcast_rows<T: Scalar>(bias: &[T], width: usize, out: &mut [T]) {
    for (row, &b) in out.chunks_exact_mut(width).zip(bias) {
        row.fill(b);
    }
}

/// `out += a · x` with `a: rows × inner`, `x: inner × width`,
/// `out: rows × width`. Dispatches to the parallel kernel when allowed.
pub fn matmul_acc<T: Scalar>(a: &[T], rows: usize, inner: usize, x: &[T], width: usize, out: &mut [T]) {
    #[cfg(feature = "parallel")]
    if rows > 1 && rows * inner * width >= PARALLEL_MIN_WORK {
        if let Some(pool) = kernel_pool() {
            return matmul_acc_parallel(pool, a, rows, inner, x, width, out);
        }
    }
    matmul_acc_sequential(a, rows, inner, x, width, out)
}

pub fn matmul_acc_sequential<T: Scalar>(a: &[T], rows: usize, inner: usize, x: &[T], width: usize, out: &mut [T]) {
    debug_assert!(a.len() >= rows * inner && x.len() >= inner * width && out.len() >= rows * width);
    for (a_row, out_row) in a.chunks_exact(inner).zip(out.chunks_exact_mut(width)).take(rows) {
        for (&alpha, x_row) in a_row.iter().zip(x.chunks_exact(width)) {
            axpy(alpha, x_row, out_row);
        }
    }
}

/// Row-parallel `out += a · x` on the given pool.
#[cfg(feature = "parallel")]
pub fn matmul_acc_parallel<T: Scalar>(
    pool: &rayon::ThreadPool,
    a: &[T],
    rows: usize,
    inner: usize,
    x: &[T],
    width: usize,
    out: &mut [T],
) {
    use rayon::prelude::*;
    pool.install(|| {
        out[..rows * width].par_chunks_mut(width).zip(a[..rows * inner].par_chunks(inner)).for_each(
            |(out_row, a_row)| {
                for (&alpha, x_row) in a_row.iter().zip(x.chunks_exact(width)) {
                    axpy(alpha, x_row, out_row);
                }
            },
        );
    })
}

/// `out += aᵀ · d` with `a: rows × inner`, `d: rows × width`,
/// `out: inner × width`.
pub fn matmul_tn_acc<T: Scalar>(a: &[T], rows: usize, inner: usize, d: &[T], width: usize, out: &mut [T]) {
    for (a_row, d_row) in a.chunks_exact(inner).zip(d.chunks_exact(width)).take(rows) {
        for (&alpha, out_row) in a_row.iter().zip(out.chunks_exact_mut(width)) {
            axpy(alpha, d_row, out_row);
        }
    }
}

/// `out[r, c] = Σ_b d[r, b] · x[c, b]` for every `(r, c)` with
/// `mask[r, c] != 0`; masked entries are set to `+0`.
pub fn masked_outer<T: Scalar>(mask: &[T], d: &[T], rows: usize, x: &[T], inner: usize, width: usize, out: &mut [T]) {
    for r in 0..rows {
        let d_row = &d[r * width..(r + 1) * width];
        for c in 0..inner {
            out[r * inner + c] =
                if mask[r * inner + c] != T::zero() { dot(d_row, &x[c * width..(c + 1) * width]) } else { T::zero() };
        }
    }
}

/// Apply `f` in place across a slice.
pub fn map_in_place<T: Scalar>(values: &mut [T], f: impl Fn(T) -> T) {
    for v in values {
        *v = f(*v);
    }
}

/// Row sums of a `rows × width` matrix.
pub fn row_sums<T: Scalar>(m: &[T], width: usize) -> Vec<T> {
    m.chunks_exact(width).map(|row| row.iter().copied().sum()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], rows: usize, inner: usize, x: &[f64], width: usize) -> Vec<f64> {
        let mut out = vec![0.0; rows * width];
        for r in 0..rows {
            for b in 0..width {
                for c in 0..inner {
                    out[r * width + b] += a[r * inner + c] * x[c * width + b];
                }
            }
        }
        out
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let (rows, inner, width) = (3, 4, 5);
        let a: Vec<f64> = (0..rows * inner).map(|i| i as f64 * 0.5 - 2.0).collect();
        let x: Vec<f64> = (0..inner * width).map(|i| (i as f64).sin()).collect();
        let mut out = vec![0.0; rows * width];
        matmul_acc(&a, rows, inner, &x, width, &mut out);
        for (o, e) in out.iter().zip(naive(&a, rows, inner, &x, width)) {
            assert!((o - e).abs() < 1e-12);
        }
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn parallel_kernel_matches_sequential() {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let (rows, inner, width) = (17, 33, 32);
        let a: Vec<f32> = (0..rows * inner).map(|i| ((i * 7) % 13) as f32 - 6.0).collect();
        let x: Vec<f32> = (0..inner * width).map(|i| ((i * 5) % 11) as f32 * 0.25).collect();
        let mut seq = vec![1.0f32; rows * width];
        let mut par = seq.clone();
        matmul_acc_sequential(&a, rows, inner, &x, width, &mut seq);
        matmul_acc_parallel(&pool, &a, rows, inner, &x, width, &mut par);
        assert_eq!(seq, par);
    }

    #[test]
    fn transpose_product_and_outer() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2 × 3
        let d = [1.0, -1.0, 0.5, 2.0]; // 2 × 2
        let mut out = vec![0.0; 6];
        matmul_tn_acc(&a, 2, 3, &d, 2, &mut out);
        assert_eq!(out, vec![3.0, 7.0, 4.5, 8.0, 6.0, 9.0]);

        let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 3 × 2
        let mask = [1.0, 0.0, 1.0, 0.0, 1.0, 1.0];
        let mut g = vec![f64::NAN; 6];
        masked_outer(&mask, &d, 2, &x, 3, 2, &mut g);
        assert_eq!(g, vec![-1.0, 0.0, -1.0, 0.0, 9.5, 14.5]);
        assert_eq!(g[1].to_bits(), 0);
    }

    #[test]
    fn gather_and_broadcast() {
        let src = [0.0, 1.0, 10.0, 11.0, 20.0, 21.0];
        let mut dst = [0.0; 4];
        gather_rows(&src, 2, &[2, 0], &mut dst);
        assert_eq!(dst, [20.0, 21.0, 0.0, 1.0]);
        let mut out = [0.0; 4];
        broadcast_rows(&[3.0, 4.0], 2, &mut out);
        assert_eq!(out, [3.0, 3.0, 4.0, 4.0]);
        assert_eq!(row_sums(&out, 2), vec![6.0, 8.0]);
    }
}
