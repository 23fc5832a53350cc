//! Row-major matrix multiply kernels.
//!
//! Everything heavy (dense layers, convolutions via im2col) lands on these two
//! primitives. The inner loops are written so LLVM vectorizes them for the
//! host target; rows of `b` stream through registers while a small tile of
//! `c` rows accumulates.

use crate::real::Real;

/// c[m,n] += a[m,k] * b[k,n]
pub fn gemm_nn<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || k == 0 || n == 0 {
        return;
    }

    let mut blocks = c.chunks_exact_mut(4 * n);
    let mut i0 = 0;
    for block in &mut blocks {
        let (c0, rest) = block.split_at_mut(n);
        let (c1, rest) = rest.split_at_mut(n);
        let (c2, c3) = rest.split_at_mut(n);
        let a0 = &a[i0 * k..(i0 + 1) * k];
        let a1 = &a[(i0 + 1) * k..(i0 + 2) * k];
        let a2 = &a[(i0 + 2) * k..(i0 + 3) * k];
        let a3 = &a[(i0 + 3) * k..(i0 + 4) * k];
        for kk in 0..k {
            let b_row = &b[kk * n..kk * n + n];
            let (v0, v1, v2, v3) = (a0[kk], a1[kk], a2[kk], a3[kk]);
            for j in 0..n {
                let bv = b_row[j];
                c0[j] += v0 * bv;
                c1[j] += v1 * bv;
                c2[j] += v2 * bv;
                c3[j] += v3 * bv;
            }
        }
        i0 += 4;
    }
    for (i, crow) in blocks.into_remainder().chunks_exact_mut(n).enumerate() {
        let arow = &a[(i0 + i) * k..(i0 + i + 1) * k];
        for kk in 0..k {
            let b_row = &b[kk * n..kk * n + n];
            let v = arow[kk];
            for j in 0..n {
                crow[j] += v * b_row[j];
            }
        }
    }
}

/// c[k,n] += a^T * b, with a[m,k] and b[m,n].
pub fn gemm_tn<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(c.len(), k * n);
    let m4 = m - m % 4;
    for i in (0..m4).step_by(4) {
        let a0 = &a[i * k..(i + 1) * k];
        let a1 = &a[(i + 1) * k..(i + 2) * k];
        let a2 = &a[(i + 2) * k..(i + 3) * k];
        let a3 = &a[(i + 3) * k..(i + 4) * k];
        let b0 = &b[i * n..(i + 1) * n];
        let b1 = &b[(i + 1) * n..(i + 2) * n];
        let b2 = &b[(i + 2) * n..(i + 3) * n];
        let b3 = &b[(i + 3) * n..(i + 4) * n];
        for (kk, crow) in c.chunks_exact_mut(n).enumerate() {
            let (v0, v1, v2, v3) = (a0[kk], a1[kk], a2[kk], a3[kk]);
            if v0 == T::ZERO && v1 == T::ZERO && v2 == T::ZERO && v3 == T::ZERO {
                continue; // relu/dropout gradients are sparse
            }
            for j in 0..n {
                crow[j] += v0 * b0[j] + v1 * b1[j] + v2 * b2[j] + v3 * b3[j];
            }
        }
    }
    for i in m4..m {
        let arow = &a[i * k..i * k + k];
        let b_row = &b[i * n..i * n + n];
        for (kk, crow) in c.chunks_exact_mut(n).enumerate() {
            let v = arow[kk];
            if v == T::ZERO {
                continue;
            }
            for j in 0..n {
                crow[j] += v * b_row[j];
            }
        }
    }
}

/// dst[n,m] = src[m,n]^T
pub fn transpose<T: Real>(m: usize, n: usize, src: &[T], dst: &mut [T]) {
    debug_assert_eq!(src.len(), m * n);
    debug_assert_eq!(dst.len(), m * n);
    for i in 0..m {
        for j in 0..n {
            dst[j * m + i] = src[i * n + j];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gemm_naive(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                for j in 0..n {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn gemm_nn_matches_naive() {
        let (m, k, n) = (7, 5, 9);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let mut c = vec![0.0; m * n];
        gemm_nn(m, k, n, &a, &b, &mut c);
        let want = gemm_naive(m, k, n, &a, &b);
        for (x, y) in c.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn gemm_tn_matches_naive_on_transpose() {
        let (m, k, n) = (6, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.29).sin()).collect();
        let b: Vec<f64> = (0..m * n).map(|i| (i as f64 * 0.17).cos()).collect();
        let mut at = vec![0.0; m * k];
        transpose(m, k, &a, &mut at);
        let want = gemm_naive(k, m, n, &at, &b);
        let mut c = vec![0.0; k * n];
        gemm_tn(m, k, n, &a, &b, &mut c);
        for (x, y) in c.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn gemm_accumulates_into_c() {
        let mut c = vec![1.0f64; 4];
        gemm_nn(2, 1, 2, &[1.0, 1.0], &[2.0, 3.0], &mut c);
        assert_eq!(c, vec![3.0, 4.0, 3.0, 4.0]);
    }
}
