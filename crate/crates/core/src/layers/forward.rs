//! Layer forward passes.
//!
//! One function covers all four kinds; the low-rank kinds evaluate the
//! factorized pipeline in the cost-optimal association order — `L1 (R1 X)`,
//! `(X̄ L) R`, `(X̃ L2) R2` — and never materialize a factor product.

use crate::error::{Error, Result};
use crate::tensor::{Matrix2D, Scalar};

use super::{LayerCache, LayerKind, LayerParams, LayerSpec};

impl LayerSpec {
    /// Runs the layer on one input slab, returning the output and the
    /// cached intermediates the backward pass needs.
    pub fn forward<S: Scalar>(
        &self,
        params: &LayerParams<S>,
        x: &Matrix2D<S>,
    ) -> Result<(Matrix2D<S>, LayerCache<S>)> {
        if x.shape() != self.input_shape() {
            return Err(Error::ShapeMismatch {
                op: "layer forward",
                lhs_rows: self.d_in,
                lhs_cols: self.t_in,
                rhs_rows: x.rows(),
                rhs_cols: x.cols(),
            });
        }
        if let Some((row, col)) = x.first_non_finite() {
            return Err(Error::NonFinite {
                op: "layer forward",
                row,
                col,
            });
        }

        // Step 1: feature transformation X̄ = W1 X, factorized as L1 (R1 X).
        let (u, xbar) = match params {
            LayerParams::Bl { w1, .. } | LayerParams::Tabl { w1, .. } => (None, w1.matmul(x)?),
            LayerParams::LrBl { l1, r1, .. } | LayerParams::LrTabl { l1, r1, .. } => {
                let u = r1.matmul(x)?;
                let xbar = l1.matmul(&u)?;
                (Some(u), xbar)
            }
        };

        // Steps 2-4: attention scores, mask, and soft mixing.
        let (g, e, a, xtilde) = match params {
            LayerParams::Bl { .. } | LayerParams::LrBl { .. } => {
                (None, None, None, xbar.clone())
            }
            LayerParams::Tabl { w, lambda, .. } => {
                let e = xbar.matmul(w)?;
                let a = e.row_softmax()?;
                let xtilde = mix(&xbar, &a, *lambda);
                (None, Some(e), Some(a), xtilde)
            }
            LayerParams::LrTabl { l, r, lambda, .. } => {
                let g = xbar.matmul(l)?;
                let mut e = g.matmul(r)?;
                if self.enforce_diag {
                    apply_diag_correction(&mut e, &xbar, l, r, self.t_in);
                }
                let a = e.row_softmax()?;
                let xtilde = mix(&xbar, &a, *lambda);
                (Some(g), Some(e), Some(a), xtilde)
            }
        };

        // Step 5: temporal aggregation Y = φ(X̃ W2 + B), factorized as
        // (X̃ L2) R2.
        let (p, mut z) = match params {
            LayerParams::Bl { w2, .. } | LayerParams::Tabl { w2, .. } => {
                (None, xtilde.matmul(w2)?)
            }
            LayerParams::LrBl { l2, r2, .. } | LayerParams::LrTabl { l2, r2, .. } => {
                let p = xtilde.matmul(l2)?;
                let z = p.matmul(r2)?;
                (Some(p), z)
            }
        };
        let bias = match params {
            LayerParams::Bl { b, .. }
            | LayerParams::Tabl { b, .. }
            | LayerParams::LrBl { b, .. }
            | LayerParams::LrTabl { b, .. } => b,
        };
        z.add_assign(bias)?;
        let y = z.apply_elementwise(self.activation);

        let cache = LayerCache {
            x: x.clone(),
            u,
            xbar,
            g,
            e,
            a,
            xtilde,
            p,
            z,
        };
        Ok((y, cache))
    }
}

/// Soft mixing `X̃ = λ (X̄ ⊙ A) + (1 − λ) X̄`.
///
/// At `λ = 0` the mixed slab is returned as a plain copy of `X̄`, so the
/// output is bit-identical to the corresponding bilinear layer (the general
/// expression could flip signed zeros).
fn mix<S: Scalar>(xbar: &Matrix2D<S>, a: &Matrix2D<S>, lambda: S) -> Matrix2D<S> {
    if lambda == S::zero() {
        return xbar.clone();
    }
    let one_minus = S::one() - lambda;
    let mut out = xbar.clone();
    for (o, &mask) in out.data_mut().iter_mut().zip(a.data().iter()) {
        let v = *o;
        *o = lambda * (v * mask) + one_minus * v;
    }
    out
}

/// Adds the diagonal-constraint correction to factorized attention scores:
/// `E[:, j] += X̄[:, j] · (1/T − (LR)_jj)`, which makes the effective mixing
/// matrix have diagonal exactly `1/T` without materializing `LR`.
fn apply_diag_correction<S: Scalar>(
    e: &mut Matrix2D<S>,
    xbar: &Matrix2D<S>,
    l: &Matrix2D<S>,
    r: &Matrix2D<S>,
    t: usize,
) {
    let target = S::from_f64(1.0 / t as f64);
    for j in 0..t {
        let mut diag = S::zero();
        for k in 0..l.cols() {
            diag += l.at(j, k) * r.at(k, j);
        }
        let corr = target - diag;
        for i in 0..e.rows() {
            *e.at_mut(i, j) += xbar.at(i, j) * corr;
        }
    }
}

/// Diagonal entries of the effective factorized mixing matrix, i.e. of
/// `LR` after the optional correction. Used by audits and tests.
pub fn effective_mixing_diagonal<S: Scalar>(
    l: &Matrix2D<S>,
    r: &Matrix2D<S>,
    enforce_diag: bool,
) -> Vec<S> {
    let t = l.rows();
    (0..t)
        .map(|j| {
            if enforce_diag {
                S::from_f64(1.0 / t as f64)
            } else {
                let mut diag = S::zero();
                for k in 0..l.cols() {
                    diag += l.at(j, k) * r.at(k, j);
                }
                diag
            }
        })
        .collect()
}

impl LayerKind {
    /// The bilinear counterpart that a `λ = 0` attention layer must match
    /// bit for bit.
    pub fn bilinear_twin(self) -> LayerKind {
        match self {
            LayerKind::Bl | LayerKind::Tabl => LayerKind::Bl,
            LayerKind::LrBl | LayerKind::LrTabl => LayerKind::LrBl,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Activation;

    /// Hand-evaluated single-feature example: D = D' = 1, T = 2, T' = 1,
    /// W1 = [1], W = [[0.5, 0], [0, 0.5]], λ = 1, W2 = [1, 1]ᵀ, B = 0,
    /// identity activation, X = [1, 3].
    #[test]
    fn attention_layer_hand_example() {
        let spec =
            LayerSpec::new(LayerKind::Tabl, 1, 2, 1, 1, None, Activation::Identity).unwrap();
        let params = LayerParams::Tabl {
            w1: Matrix2D::from_rows(&[vec![1.0]]).unwrap(),
            w: Matrix2D::from_rows(&[vec![0.5, 0.0], vec![0.0, 0.5]]).unwrap(),
            w2: Matrix2D::from_rows(&[vec![1.0], vec![1.0]]).unwrap(),
            b: Matrix2D::zeros(1, 1),
            lambda: 1.0_f64,
        };
        let x = Matrix2D::from_rows(&[vec![1.0, 3.0]]).unwrap();
        let (y, cache) = spec.forward(&params, &x).unwrap();

        let e = cache.e.unwrap();
        assert!((e.at(0, 0) - 0.5).abs() < 1e-15);
        assert!((e.at(0, 1) - 1.5).abs() < 1e-15);

        let a = cache.a.unwrap();
        assert!((a.at(0, 0) - 0.268_941_421_369_995_1).abs() < 1e-12);
        assert!((a.at(0, 1) - 0.731_058_578_630_004_9).abs() < 1e-12);

        assert!((cache.xtilde.at(0, 0) - 0.268_941_421_369_995_1).abs() < 1e-12);
        assert!((cache.xtilde.at(0, 1) - 2.193_175_735_890_014_6).abs() < 1e-12);

        assert!((y.at(0, 0) - 2.462_117_157_260_009_7).abs() < 1e-12);
    }

    #[test]
    fn attention_rows_sum_to_one() {
        use rand::Rng;
        use rand_chacha::rand_core::SeedableRng;
        let spec =
            LayerSpec::new(LayerKind::Tabl, 4, 5, 3, 2, None, Activation::Identity).unwrap();
        let params = LayerParams::<f64>::init(&spec, 11);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let x = Matrix2D::new(4, 5, (0..20).map(|_| rng.gen_range(-2.0..2.0)).collect())
                .unwrap();
            let (_, cache) = spec.forward(&params, &x).unwrap();
            let a = cache.a.unwrap();
            for i in 0..a.rows() {
                let sum: f64 = a.row(i).iter().sum();
                assert!((sum - 1.0).abs() < 1e-12);
                assert!(a.row(i).iter().all(|&v| v > 0.0 && v < 1.0));
            }
        }
    }

    #[test]
    fn forward_rejects_wrong_shape_and_non_finite_input() {
        let spec =
            LayerSpec::new(LayerKind::Bl, 4, 5, 3, 2, None, Activation::Identity).unwrap();
        let params = LayerParams::<f64>::init(&spec, 1);
        assert!(spec.forward(&params, &Matrix2D::zeros(5, 4)).is_err());
        let mut x = Matrix2D::zeros(4, 5);
        *x.at_mut(2, 3) = f64::INFINITY;
        assert!(matches!(
            spec.forward(&params, &x),
            Err(crate::error::Error::NonFinite { row: 2, col: 3, .. })
        ));
    }
}
