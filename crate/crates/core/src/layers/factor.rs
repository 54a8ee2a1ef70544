//! Low-rank factorization helpers: explicit factor products for inspection,
//! and best rank-k factor pairs computed with a one-sided Jacobi SVD.
//!
//! These are test and initialization utilities — the layers themselves train
//! directly in factorized form and never call into here on the hot path.

use crate::error::Result;
use crate::tensor::{Matrix2D, Scalar};

/// Explicit product of a factor pair. Used only by tests and inspection
/// tooling; the forward passes keep weights factorized.
pub fn materialize_lowrank<S: Scalar>(l: &Matrix2D<S>, r: &Matrix2D<S>) -> Result<Matrix2D<S>> {
    l.matmul(r)
}

/// Thin singular value decomposition `A = U diag(σ) Vᵀ` via one-sided Jacobi
/// rotations, in 64-bit precision.
///
/// Returns `(U, σ, V)` with `U` of shape `m x n`, `σ` of length `n` sorted
/// descending, and `V` of shape `n x n`. When `m < n`, the trailing `n − m`
/// singular values are zero and their `U` columns are zero vectors.
///
/// One-sided Jacobi orthogonalizes the columns of a working copy of `A` by
/// repeatedly rotating column pairs; it is slow on big matrices but
/// essentially exact on the tiny ones used here, which is what the
/// factorization oracles need.
pub fn svd(a: &Matrix2D<f64>) -> (Matrix2D<f64>, Vec<f64>, Matrix2D<f64>) {
    let (m, n) = a.shape();
    let mut b = a.clone();
    let mut v = Matrix2D::zeros(n, n);
    for j in 0..n {
        *v.at_mut(j, j) = 1.0;
    }

    const MAX_SWEEPS: usize = 60;
    const TOL: f64 = 1e-15;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let mut alpha = 0.0;
                let mut beta = 0.0;
                let mut gamma = 0.0;
                for i in 0..m {
                    let bp = b.at(i, p);
                    let bq = b.at(i, q);
                    alpha += bp * bp;
                    beta += bq * bq;
                    gamma += bp * bq;
                }
                if gamma.abs() <= TOL * (alpha * beta).sqrt() || alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let bp = b.at(i, p);
                    let bq = b.at(i, q);
                    *b.at_mut(i, p) = c * bp - s * bq;
                    *b.at_mut(i, q) = s * bp + c * bq;
                }
                for i in 0..n {
                    let vp = v.at(i, p);
                    let vq = v.at(i, q);
                    *v.at_mut(i, p) = c * vp - s * vq;
                    *v.at_mut(i, q) = s * vp + c * vq;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    // Column norms are the singular values; normalized columns form U.
    let mut order: Vec<usize> = (0..n).collect();
    let mut sigma_raw = vec![0.0; n];
    for (j, s) in sigma_raw.iter_mut().enumerate() {
        *s = (0..m).map(|i| b.at(i, j) * b.at(i, j)).sum::<f64>().sqrt();
    }
    order.sort_by(|&x, &y| sigma_raw[y].partial_cmp(&sigma_raw[x]).unwrap());

    let mut u = Matrix2D::zeros(m, n);
    let mut v_sorted = Matrix2D::zeros(n, n);
    let mut sigma = vec![0.0; n];
    for (dst, &src) in order.iter().enumerate() {
        sigma[dst] = sigma_raw[src];
        if sigma_raw[src] > 0.0 {
            for i in 0..m {
                *u.at_mut(i, dst) = b.at(i, src) / sigma_raw[src];
            }
        }
        for i in 0..n {
            *v_sorted.at_mut(i, dst) = v.at(i, src);
        }
    }
    (u, sigma, v_sorted)
}

/// Best rank-`k` factor pair of a full weight matrix: `L = U_k diag(σ_k)`,
/// `R = V_kᵀ`, so `L R` is the optimal rank-`min(k, rank(w))` Frobenius
/// approximation of `w`. The rank is capped at the matrix dimensions
/// internally.
pub fn factor_from_full<S: Scalar>(w: &Matrix2D<S>, k: usize) -> (Matrix2D<S>, Matrix2D<S>) {
    let (m, n) = w.shape();
    let k = k.max(1).min(m).min(n);
    let (u, sigma, v) = svd(&w.cast::<f64>());
    let mut l = Matrix2D::zeros(m, k);
    let mut r = Matrix2D::zeros(k, n);
    for j in 0..k {
        for i in 0..m {
            *l.at_mut(i, j) = u.at(i, j) * sigma[j];
        }
        for i in 0..n {
            *r.at_mut(j, i) = v.at(i, j);
        }
    }
    (l.cast(), r.cast())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, m: usize, n: usize) -> Matrix2D<f64> {
        Matrix2D::new(m, n, (0..m * n).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap()
    }

    fn frobenius_dist(a: &Matrix2D<f64>, b: &Matrix2D<f64>) -> f64 {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    }

    #[test]
    fn materialize_rank_one_outer_product() {
        let l = Matrix2D::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        let r = Matrix2D::from_rows(&[vec![3.0, 4.0]]).unwrap();
        let q = materialize_lowrank(&l, &r).unwrap();
        assert_eq!(q, Matrix2D::from_rows(&[vec![3.0, 4.0], vec![6.0, 8.0]]).unwrap());
    }

    #[test]
    fn svd_reconstructs_exactly_at_full_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for &(m, n) in &[(5, 3), (3, 5), (4, 4), (1, 6), (6, 1)] {
            let a = random_matrix(&mut rng, m, n);
            let (l, r) = factor_from_full(&a, m.min(n));
            let back = materialize_lowrank(&l, &r).unwrap();
            assert!(
                frobenius_dist(&a, &back) < 1e-10,
                "{m}x{n}: {}",
                frobenius_dist(&a, &back)
            );
        }
    }

    #[test]
    fn svd_of_diagonal_keeps_dominant_entry_at_rank_one() {
        let a: Matrix2D<f64> = Matrix2D::from_rows(&[
            vec![3.0, 0.0, 0.0],
            vec![0.0, 2.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ])
        .unwrap();
        let (l, r) = factor_from_full(&a, 1);
        let back = materialize_lowrank(&l, &r).unwrap();
        assert!((back.at(0, 0) - 3.0).abs() < 1e-12);
        for i in 0..3 {
            for j in 0..3 {
                if (i, j) != (0, 0) {
                    assert!(back.at(i, j).abs() < 1e-12, "({i},{j}) = {}", back.at(i, j));
                }
            }
        }
    }

    #[test]
    fn truncation_error_is_non_increasing_in_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let a = random_matrix(&mut rng, 10, 10);
        let mut prev = f64::INFINITY;
        for k in 1..=10 {
            let (l, r) = factor_from_full(&a, k);
            let err = frobenius_dist(&a, &materialize_lowrank(&l, &r).unwrap());
            assert!(
                err <= prev + 1e-12,
                "rank {k}: error {err} grew from {prev}"
            );
            prev = err;
        }
        assert!(prev < 1e-10, "full rank must reconstruct, got {prev}");
    }

    #[test]
    fn svd_beats_random_factor_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let a = random_matrix(&mut rng, 6, 4);
        let k = 2;
        let (l, r) = factor_from_full(&a, k);
        let best = frobenius_dist(&a, &materialize_lowrank(&l, &r).unwrap());
        for _ in 0..100 {
            let lr = random_matrix(&mut rng, 6, k);
            let rr = random_matrix(&mut rng, k, 4);
            let err = frobenius_dist(&a, &materialize_lowrank(&lr, &rr).unwrap());
            assert!(best <= err + 1e-12, "random pair beat the SVD: {err} < {best}");
        }
    }

    #[test]
    fn rank_is_capped_internally() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let a = random_matrix(&mut rng, 3, 5);
        let (l, r) = factor_from_full(&a, 99);
        assert_eq!(l.shape(), (3, 3));
        assert_eq!(r.shape(), (3, 5));
        assert!(frobenius_dist(&a, &materialize_lowrank(&l, &r).unwrap()) < 1e-10);
    }
}
