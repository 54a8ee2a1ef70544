//! Hand-derived reverse-mode gradients for all four layer kinds.
//!
//! Every formula is the exact adjoint of the corresponding forward step; the
//! softmax is differentiated through its full per-row Jacobian, and the
//! attention mask contributes to the input gradient through both the soft
//! mixing and the score paths. Gradients of the frozen attention diagonal
//! (full attention layers) are zeroed, and in diagonal-enforcing factorized
//! layers the correction term's dependence on `L`, `R`, and `X̄` is
//! differentiated as well.

use crate::error::{Error, Result};
use crate::tensor::{Matrix2D, Scalar};

use super::{LayerCache, LayerParams, LayerSpec};

impl LayerSpec {
    /// Propagates an output gradient through the layer, returning the input
    /// gradient and per-parameter gradients (in a [`LayerParams`] of the same
    /// shapes; `λ`'s gradient rides in the `lambda` field).
    pub fn backward<S: Scalar>(
        &self,
        params: &LayerParams<S>,
        cache: &LayerCache<S>,
        dy: &Matrix2D<S>,
    ) -> Result<(Matrix2D<S>, LayerParams<S>)> {
        if dy.shape() != self.output_shape() {
            return Err(Error::ShapeMismatch {
                op: "layer backward",
                lhs_rows: self.d_out,
                lhs_cols: self.t_out,
                rhs_rows: dy.rows(),
                rhs_cols: dy.cols(),
            });
        }
        if cache.x.shape() != self.input_shape() || cache.z.shape() != self.output_shape() {
            return Err(Error::SpecMismatch(
                "forward cache does not match this layer spec".into(),
            ));
        }

        // Step 5 adjoint: through the activation, then the aggregation.
        let mut dz = dy.clone();
        for (g, &pre) in dz.data_mut().iter_mut().zip(cache.z.data().iter()) {
            *g = *g * self.activation.derivative(pre);
        }
        let db = dz.clone();

        match params {
            LayerParams::Bl { w1, w2, .. } => {
                let dw2 = cache.xtilde.transpose().matmul(&dz)?;
                let dxbar = dz.matmul(&w2.transpose())?; // X̃ = X̄ here
                let dw1 = dxbar.matmul(&cache.x.transpose())?;
                let dx = w1.transpose().matmul(&dxbar)?;
                Ok((
                    dx,
                    LayerParams::Bl {
                        w1: dw1,
                        w2: dw2,
                        b: db,
                    },
                ))
            }
            LayerParams::Tabl {
                w1, w, w2, lambda, ..
            } => {
                let dw2 = cache.xtilde.transpose().matmul(&dz)?;
                let dxtilde = dz.matmul(&w2.transpose())?;

                let a = cache.a.as_ref().expect("attention cache");
                let (dlambda, da, mut dxbar) =
                    mixing_adjoint(&dxtilde, &cache.xbar, a, *lambda);
                let de = softmax_rows_adjoint(&da, a);

                // Score path: E = X̄ W.
                let mut dw = cache.xbar.transpose().matmul(&de)?;
                dxbar.add_assign(&de.matmul(&w.transpose())?)?;
                // The diagonal of W is frozen at 1/T; it is not a trainable
                // degree of freedom, so its gradient entries are zeroed.
                for j in 0..dw.rows() {
                    *dw.at_mut(j, j) = S::zero();
                }

                let dw1 = dxbar.matmul(&cache.x.transpose())?;
                let dx = w1.transpose().matmul(&dxbar)?;
                Ok((
                    dx,
                    LayerParams::Tabl {
                        w1: dw1,
                        w: dw,
                        w2: dw2,
                        b: db,
                        lambda: dlambda,
                    },
                ))
            }
            LayerParams::LrBl { l1, r1, l2, r2, .. } => {
                let p = cache.p.as_ref().expect("low-rank cache");
                let u = cache.u.as_ref().expect("low-rank cache");
                let dr2 = p.transpose().matmul(&dz)?;
                let dp = dz.matmul(&r2.transpose())?;
                let dl2 = cache.xtilde.transpose().matmul(&dp)?;
                let dxbar = dp.matmul(&l2.transpose())?; // X̃ = X̄ here
                let (dl1, dr1, dx) = step1_factor_adjoint(&dxbar, l1, r1, u, &cache.x)?;
                Ok((
                    dx,
                    LayerParams::LrBl {
                        l1: dl1,
                        r1: dr1,
                        l2: dl2,
                        r2: dr2,
                        b: db,
                    },
                ))
            }
            LayerParams::LrTabl {
                l1,
                r1,
                l,
                r,
                l2,
                r2,
                lambda,
                ..
            } => {
                let p = cache.p.as_ref().expect("low-rank cache");
                let u = cache.u.as_ref().expect("low-rank cache");
                let g = cache.g.as_ref().expect("attention cache");
                let a = cache.a.as_ref().expect("attention cache");

                let dr2 = p.transpose().matmul(&dz)?;
                let dp = dz.matmul(&r2.transpose())?;
                let dl2 = cache.xtilde.transpose().matmul(&dp)?;
                let dxtilde = dp.matmul(&l2.transpose())?;

                let (dlambda, da, mut dxbar) =
                    mixing_adjoint(&dxtilde, &cache.xbar, a, *lambda);
                let de = softmax_rows_adjoint(&da, a);

                // Score path: E = (X̄ L) R plus the optional diagonal
                // correction E[:, j] += X̄[:, j] (1/T − (LR)_jj).
                let dg = de.matmul(&r.transpose())?;
                let mut dr = g.transpose().matmul(&de)?;
                let mut dl = cache.xbar.transpose().matmul(&dg)?;
                dxbar.add_assign(&dg.matmul(&l.transpose())?)?;
                if self.enforce_diag {
                    let t = self.t_in;
                    let target = S::from_f64(1.0 / t as f64);
                    for j in 0..t {
                        let mut diag = S::zero();
                        for k in 0..l.cols() {
                            diag += l.at(j, k) * r.at(k, j);
                        }
                        let corr = target - diag;
                        // q_j = Σ_i dE_ij X̄_ij collects how much the scores
                        // in column j move with the correction coefficient.
                        let mut q = S::zero();
                        for i in 0..de.rows() {
                            q += de.at(i, j) * cache.xbar.at(i, j);
                            *dxbar.at_mut(i, j) += de.at(i, j) * corr;
                        }
                        for k in 0..l.cols() {
                            *dl.at_mut(j, k) -= q * r.at(k, j);
                            *dr.at_mut(k, j) -= q * l.at(j, k);
                        }
                    }
                }

                let (dl1, dr1, dx) = step1_factor_adjoint(&dxbar, l1, r1, u, &cache.x)?;
                Ok((
                    dx,
                    LayerParams::LrTabl {
                        l1: dl1,
                        r1: dr1,
                        l: dl,
                        r: dr,
                        l2: dl2,
                        r2: dr2,
                        b: db,
                        lambda: dlambda,
                    },
                ))
            }
        }
    }
}

/// Adjoint of the soft mixing `X̃ = λ (X̄ ⊙ A) + (1 − λ) X̄`: returns
/// `(dλ, dA, dX̄)` where `dX̄` holds only the mixing path's contribution.
fn mixing_adjoint<S: Scalar>(
    dxtilde: &Matrix2D<S>,
    xbar: &Matrix2D<S>,
    a: &Matrix2D<S>,
    lambda: S,
) -> (S, Matrix2D<S>, Matrix2D<S>) {
    let one_minus = S::one() - lambda;
    let mut dlambda = S::zero();
    let mut da = Matrix2D::zeros(a.rows(), a.cols());
    let mut dxbar = Matrix2D::zeros(xbar.rows(), xbar.cols());
    for i in 0..dxtilde.data().len() {
        let dxt = dxtilde.data()[i];
        let xb = xbar.data()[i];
        let mask = a.data()[i];
        dlambda += dxt * (xb * mask - xb);
        da.data_mut()[i] = lambda * dxt * xb;
        dxbar.data_mut()[i] = dxt * (lambda * mask + one_minus);
    }
    (dlambda, da, dxbar)
}

/// Exact per-row softmax Jacobian: `dE_ij = A_ij (dA_ij − Σ_k dA_ik A_ik)`.
fn softmax_rows_adjoint<S: Scalar>(da: &Matrix2D<S>, a: &Matrix2D<S>) -> Matrix2D<S> {
    let mut de = Matrix2D::zeros(a.rows(), a.cols());
    for i in 0..a.rows() {
        let mut dot = S::zero();
        for (&g, &mask) in da.row(i).iter().zip(a.row(i).iter()) {
            dot += g * mask;
        }
        for j in 0..a.cols() {
            *de.at_mut(i, j) = a.at(i, j) * (da.at(i, j) - dot);
        }
    }
    de
}

/// Adjoint of the factorized feature transformation `X̄ = L1 (R1 X)`:
/// returns `(dL1, dR1, dX)` given the cached `U = R1 X`.
fn step1_factor_adjoint<S: Scalar>(
    dxbar: &Matrix2D<S>,
    l1: &Matrix2D<S>,
    r1: &Matrix2D<S>,
    u: &Matrix2D<S>,
    x: &Matrix2D<S>,
) -> Result<(Matrix2D<S>, Matrix2D<S>, Matrix2D<S>)> {
    let dl1 = dxbar.matmul(&u.transpose())?;
    let du = l1.transpose().matmul(dxbar)?;
    let dr1 = du.matmul(&x.transpose())?;
    let dx = r1.transpose().matmul(&du)?;
    Ok((dl1, dr1, dx))
}
