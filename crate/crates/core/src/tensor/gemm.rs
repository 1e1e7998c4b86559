//! Matrix products over row-major slices.
//!
//! Each output row is produced by one sequential loop with a fixed
//! accumulation order, so splitting rows across threads never changes a bit
//! of the result.

use rayon::prelude::*;

use super::Tensor;
use crate::error::{Error, Result};

/// Below this many multiply-adds the product runs on the calling thread.
const PARALLEL_THRESHOLD: usize = 1 << 15;

fn as_matrix(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    t.expect_rank(2, what)?;
    Ok((t.shape()[0], t.shape()[1]))
}

/// `C = A·B` for `A: M×K`, `B: K×P`.
pub fn gemm(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = as_matrix(a, "gemm lhs")?;
    let (k2, p) = as_matrix(b, "gemm rhs")?;
    if k != k2 {
        return Err(Error::shape(format!("gemm inner extents differ: {m}x{k} · {k2}x{p}")));
    }
    let mut c = vec![0.0; m * p];
    matmul_into(a.data(), b.data(), &mut c, m, k, p);
    Tensor::from_vec(&[m, p], c)
}

/// `C = A·Bᵀ` for `A: M×K`, `B: P×K`.
pub fn gemm_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = as_matrix(a, "gemm_nt lhs")?;
    let (p, k2) = as_matrix(b, "gemm_nt rhs")?;
    if k != k2 {
        return Err(Error::shape(format!("gemm_nt inner extents differ: {m}x{k} · ({p}x{k2})ᵀ")));
    }
    let mut c = vec![0.0; m * p];
    matmul_nt_into(a.data(), b.data(), &mut c, m, k, p);
    Tensor::from_vec(&[m, p], c)
}

/// `C = Aᵀ·B` for `A: K×M`, `B: K×P`.
pub fn gemm_tn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (k, m) = as_matrix(a, "gemm_tn lhs")?;
    let (k2, p) = as_matrix(b, "gemm_tn rhs")?;
    if k != k2 {
        return Err(Error::shape(format!("gemm_tn inner extents differ: ({k}x{m})ᵀ · {k2}x{p}")));
    }
    let mut c = vec![0.0; m * p];
    matmul_tn_into(a.data(), b.data(), &mut c, m, k, p);
    Tensor::from_vec(&[m, p], c)
}

fn for_each_row(c: &mut [f64], p: usize, work: usize, f: impl Fn(usize, &mut [f64]) + Sync + Send) {
    if work >= PARALLEL_THRESHOLD {
        c.par_chunks_mut(p).enumerate().for_each(|(i, row)| f(i, row));
    } else {
        c.chunks_mut(p).enumerate().for_each(|(i, row)| f(i, row));
    }
}

/// Overwrites `c` (M×P) with `a` (M×K) times `b` (K×P).
pub(crate) fn matmul_into(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, p: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * p);
    debug_assert_eq!(c.len(), m * p);
    if m == 0 || p == 0 {
        return;
    }
    for_each_row(c, p, m * k * p, |i, row| {
        row.fill(0.0);
        let a_row = &a[i * k..][..k];
        for (kk, &aik) in a_row.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let b_row = &b[kk * p..][..p];
            for (cj, &bj) in row.iter_mut().zip(b_row) {
                *cj += aik * bj;
            }
        }
    });
}

/// Overwrites `c` (M×P) with `a` (M×K) times the transpose of `b` (P×K).
pub(crate) fn matmul_nt_into(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, p: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), p * k);
    debug_assert_eq!(c.len(), m * p);
    if m == 0 || p == 0 {
        return;
    }
    for_each_row(c, p, m * k * p, |i, row| {
        let a_row = &a[i * k..][..k];
        for (j, cj) in row.iter_mut().enumerate() {
            let b_row = &b[j * k..][..k];
            *cj = a_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
        }
    });
}

/// Overwrites `c` (M×P) with the transpose of `a` (K×M) times `b` (K×P).
pub(crate) fn matmul_tn_into(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, p: usize) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * p);
    debug_assert_eq!(c.len(), m * p);
    if m == 0 || p == 0 {
        return;
    }
    for_each_row(c, p, m * k * p, |i, row| {
        row.fill(0.0);
        for kk in 0..k {
            let aki = a[kk * m + i];
            if aki == 0.0 {
                continue;
            }
            let b_row = &b[kk * p..][..p];
            for (cj, &bj) in row.iter_mut().zip(b_row) {
                *cj += aki * bj;
            }
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn identity(n: usize) -> Tensor {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.set(&[i, i], 1.0).unwrap();
        }
        t
    }

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Triple loop in textbook order.
    fn naive(a: &Tensor, b: &Tensor) -> Tensor {
        let (m, k, p) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut c = Tensor::zeros(&[m, p]);
        for i in 0..m {
            for j in 0..p {
                let mut s = 0.0;
                for kk in 0..k {
                    s += a.get(&[i, kk]).unwrap() * b.get(&[kk, j]).unwrap();
                }
                c.set(&[i, j], s).unwrap();
            }
        }
        c
    }

    fn transpose(t: &Tensor) -> Tensor {
        let (r, c) = (t.shape()[0], t.shape()[1]);
        let mut out = Tensor::zeros(&[c, r]);
        for i in 0..r {
            for j in 0..c {
                out.set(&[j, i], t.get(&[i, j]).unwrap()).unwrap();
            }
        }
        out
    }

    #[test]
    fn hand_multiplied_product() {
        let a = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::from_vec(&[2, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        assert_eq!(gemm(&a, &b).unwrap().data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn identity_and_annihilator() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(&[4, 5], &mut rng);
        assert_eq!(gemm(&identity(4), &a).unwrap(), a);
        assert_eq!(gemm(&a, &identity(5)).unwrap(), a);
        let zero = Tensor::zeros(&[5, 3]);
        assert!(gemm(&a, &zero).unwrap().data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn mismatched_inner_extent() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        assert!(matches!(gemm(&a, &b), Err(Error::Shape(_))));
        assert!(gemm(&Tensor::zeros(&[6]), &b).is_err());
    }

    #[test]
    fn transposed_variants_agree_with_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random(&[7, 9], &mut rng);
        let b = random(&[9, 4], &mut rng);
        let expect = naive(&a, &b);
        assert!(gemm(&a, &b).unwrap().max_abs_diff(&expect).unwrap() < 1e-12);
        assert!(gemm_nt(&a, &transpose(&b)).unwrap().max_abs_diff(&expect).unwrap() < 1e-12);
        assert!(gemm_tn(&transpose(&a), &b).unwrap().max_abs_diff(&expect).unwrap() < 1e-12);
    }

    #[test]
    fn parallel_rows_are_bitwise_stable() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random(&[64, 80], &mut rng);
        let b = random(&[80, 90], &mut rng);
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let multi = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let c1 = single.install(|| gemm(&a, &b).unwrap());
        let c4 = multi.install(|| gemm(&a, &b).unwrap());
        assert_eq!(c1, c4);
    }
}
