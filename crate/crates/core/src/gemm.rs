//! Blocked matrix multiply for the convolution and dense layers.
//!
//! `C += A * B` with row-major operands. The driver K-chunks so streamed
//! panels stay cache-resident, and dispatches to register-tiled microkernels
//! whose column width divides N (ragged column tails are poison for the
//! vectorizer, and every shape this crate produces is a multiple of 8 or
//! tiny). Per-element accumulation order is sequential in K, so results are
//! independent of blocking and thread count.

use crate::real::Real;
use rayon::prelude::*;

const KC: usize = 1024;

macro_rules! microkernel {
    ($name:ident, $mr:expr, $nr:expr) => {
        /// One MRxNR tile of C, accumulating A[i.., kc..kc+klen] * B.
        fn $name<R: Real>(
            a: &[R],
            b: &[R],
            c: &mut [R],
            lda: usize,
            ldb: usize,
            ldc: usize,
            i: usize,
            j: usize,
            kc: usize,
            klen: usize,
        ) {
            const MR: usize = $mr;
            const NR: usize = $nr;
            let mut acc = [[R::ZERO; NR]; MR];
            for p in kc..kc + klen {
                let brow = &b[p * ldb + j..p * ldb + j + NR];
                let mut bv = [R::ZERO; NR];
                bv.copy_from_slice(brow);
                for r in 0..MR {
                    // SAFETY: caller guarantees i+MR <= m and kc+klen <= k.
                    let av = unsafe { *a.get_unchecked((i + r) * lda + p) };
                    for q in 0..NR {
                        acc[r][q] = av.mul_add(bv[q], acc[r][q]);
                    }
                }
            }
            for r in 0..MR {
                let crow = &mut c[(i + r) * ldc + j..(i + r) * ldc + j + NR];
                for q in 0..NR {
                    crow[q] += acc[r][q];
                }
            }
        }
    };
}

microkernel!(mk_4x32, 4, 32);
microkernel!(mk_4x24, 4, 24);
microkernel!(mk_4x16, 4, 16);
microkernel!(mk_8x32, 8, 32);
microkernel!(mk_8x16, 8, 16);

type Micro<R> =
    fn(&[R], &[R], &mut [R], usize, usize, usize, usize, usize, usize, usize);

fn pick_kernel<R: Real>(m: usize, k: usize, n: usize) -> Option<(Micro<R>, usize, usize)> {
    let tall_k = k >= 1024;
    if n % 32 == 0 {
        if tall_k && m % 8 == 0 {
            Some((mk_8x32::<R>, 8, 32))
        } else {
            Some((mk_4x32::<R>, 4, 32))
        }
    } else if n % 24 == 0 {
        Some((mk_4x24::<R>, 4, 24))
    } else if n % 16 == 0 {
        if tall_k && m % 8 == 0 {
            Some((mk_8x16::<R>, 8, 16))
        } else {
            Some((mk_4x16::<R>, 4, 16))
        }
    } else {
        None
    }
}

/// Scalar fallback rows/columns: i-k-j loop, still K-sequential per element.
fn gemm_scalar<R: Real>(
    a: &[R],
    b: &[R],
    c: &mut [R],
    lda: usize,
    ldb: usize,
    ldc: usize,
    rows: std::ops::Range<usize>,
    cols: std::ops::Range<usize>,
    k: usize,
) {
    for i in rows {
        for p in 0..k {
            let av = a[i * lda + p];
            let brow = &b[p * ldb..p * ldb + ldb];
            let crow = &mut c[i * ldc..i * ldc + ldc];
            for j in cols.clone() {
                crow[j] = av.mul_add(brow[j], crow[j]);
            }
        }
    }
}

fn gemm_rows<R: Real>(a: &[R], b: &[R], c: &mut [R], rows: usize, k: usize, n: usize) {
    match pick_kernel::<R>(rows, k, n) {
        Some((micro, mr, nr)) => {
            let m_main = rows - rows % mr;
            let mut kc = 0;
            while kc < k {
                let klen = KC.min(k - kc);
                let mut i = 0;
                while i < m_main {
                    let mut j = 0;
                    while j < n {
                        micro(a, b, c, k, n, n, i, j, kc, klen);
                        j += nr;
                    }
                    i += mr;
                }
                kc += klen;
            }
            if m_main < rows {
                gemm_scalar(a, b, c, k, n, n, m_main..rows, 0..n, k);
            }
        }
        None => gemm_scalar(a, b, c, k, n, n, 0..rows, 0..n, k),
    }
}

/// C += A*B. A is m x k, B is k x n, C is m x n, all row-major.
pub fn gemm<R: Real>(a: &[R], b: &[R], c: &mut [R], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    gemm_rows(a, b, c, m, k, n);
}

/// Row-parallel `gemm`. Threads own disjoint row bands, so the result is
/// bit-identical to the sequential version.
pub fn gemm_par<R: Real>(a: &[R], b: &[R], c: &mut [R], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let threads = rayon::current_num_threads().max(1);
    if threads == 1 || m < 64 {
        return gemm_rows(a, b, c, m, k, n);
    }
    let band = (m.div_ceil(threads)).div_ceil(8) * 8;
    c.par_chunks_mut(band * n)
        .enumerate()
        .for_each(|(t, c_band)| {
            let row0 = t * band;
            let rows = c_band.len() / n;
            let a_band = &a[row0 * k..(row0 + rows) * k];
            gemm_rows(a_band, b, c_band, rows, k, n);
        });
}

/// dst = src^T. src is rows x cols row-major; dst must hold cols*rows.
pub fn transpose<R: Real>(src: &[R], rows: usize, cols: usize, dst: &mut [R]) {
    debug_assert_eq!(src.len(), rows * cols);
    debug_assert_eq!(dst.len(), rows * cols);
    const TILE: usize = 32;
    for r0 in (0..rows).step_by(TILE) {
        for c0 in (0..cols).step_by(TILE) {
            for r in r0..(r0 + TILE).min(rows) {
                for c in c0..(c0 + TILE).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a[i * k + p] * b[p * n + j];
                }
                c[i * n + j] = s;
            }
        }
        c
    }

    fn random_mat(rng: &mut SplitMix64, len: usize) -> Vec<f64> {
        (0..len).map(|_| rng.next_f64() * 2.0 - 1.0).collect()
    }

    #[test]
    fn matches_naive_across_shapes() {
        let mut rng = SplitMix64::new(321);
        // Covers every kernel branch plus scalar tails.
        let shapes = [
            (4, 9, 32),
            (1024, 288, 72),
            (32, 2048, 256),
            (17, 13, 7),
            (5, 1, 3),
            (64, 72, 288),
            (9, 40, 24),
            (8, 1030, 16),
            (3, 3, 2),
        ];
        for &(m, k, n) in &shapes {
            let a = random_mat(&mut rng, m * k);
            let b = random_mat(&mut rng, k * n);
            let want = naive(&a, &b, m, k, n);
            let mut c = vec![0.0; m * n];
            gemm(&a, &b, &mut c, m, k, n);
            for (x, y) in c.iter().zip(&want) {
                assert!(
                    (x - y).abs() <= 1e-10 * (1.0 + y.abs()),
                    "shape {m}x{k}x{n}: {x} vs {y}"
                );
            }
        }
    }

    #[test]
    fn accumulates_into_existing_c() {
        let a = [1.0, 2.0];
        let b = [3.0, 4.0];
        let mut c = [10.0];
        gemm(&a, &b, &mut c, 1, 2, 1);
        assert_eq!(c[0], 21.0);
    }

    #[test]
    fn parallel_matches_sequential_bitwise() {
        let mut rng = SplitMix64::new(77);
        let (m, k, n) = (256, 96, 72);
        let a = random_mat(&mut rng, m * k);
        let b = random_mat(&mut rng, k * n);
        let mut c_seq = vec![0.0; m * n];
        let mut c_par = vec![0.0; m * n];
        gemm(&a, &b, &mut c_seq, m, k, n);
        gemm_par(&a, &b, &mut c_par, m, k, n);
        assert_eq!(c_seq, c_par);
    }

    #[test]
    fn f32_path_tracks_f64() {
        let mut rng = SplitMix64::new(9);
        let (m, k, n) = (48, 60, 24);
        let a = random_mat(&mut rng, m * k);
        let b = random_mat(&mut rng, k * n);
        let mut c64 = vec![0.0f64; m * n];
        gemm(&a, &b, &mut c64, m, k, n);
        let a32: Vec<f32> = a.iter().map(|&x| x as f32).collect();
        let b32: Vec<f32> = b.iter().map(|&x| x as f32).collect();
        let mut c32 = vec![0.0f32; m * n];
        gemm(&a32, &b32, &mut c32, m, k, n);
        for (x, y) in c32.iter().zip(&c64) {
            assert!((*x as f64 - y).abs() < 1e-3 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn transpose_roundtrip() {
        let mut rng = SplitMix64::new(4);
        let (r, c) = (37, 53);
        let src = random_mat(&mut rng, r * c);
        let mut t = vec![0.0; r * c];
        transpose(&src, r, c, &mut t);
        let mut back = vec![0.0; r * c];
        transpose(&t, c, r, &mut back);
        assert_eq!(src, back);
        assert_eq!(t[3 * r + 5], src[5 * c + 3]);
    }
}
