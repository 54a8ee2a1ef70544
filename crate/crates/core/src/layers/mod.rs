//! The four layer kinds and everything owned by a single layer:
//! configuration, trainable parameters, forward and backward passes,
//! parameter counting, FLOP counting, and low-rank factorization helpers.
//!
//! A layer maps a 2-D slab `X` of shape `D x T` (features x time) to a slab
//! `Y` of shape `D' x T'` in up to five steps:
//!
//! 1. feature transformation `X̄ = W1 X`,
//! 2. temporal attention scores `E = X̄ W` (the mixing matrix `W` has its
//!    diagonal fixed to `1/T` so each instant keeps its own weight),
//! 3. attention mask `A = row_softmax(E)`,
//! 4. soft mixing `X̃ = λ (X̄ ⊙ A) + (1 − λ) X̄` with learnable `λ ∈ [0, 1]`,
//! 5. temporal aggregation `Y = φ(X̃ W2 + B)`.
//!
//! Bilinear layers (`Bl`) skip steps 2–4. The low-rank kinds replace each
//! weight matrix by a rank-limited product of two factors (`W1 ≈ L1 R1`,
//! `W2 ≈ L2 R2`, `W ≈ L R`) and evaluate the pipeline in factorized order —
//! never materializing the products — which is where their speed and
//! parameter savings come from.

mod backward;
mod factor;
mod forward;

pub use factor::{factor_from_full, materialize_lowrank, svd};
pub use forward::effective_mixing_diagonal;

use crate::error::{Error, Result};
use crate::tensor::{Activation, Matrix2D, Scalar};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt;
use std::str::FromStr;

/// The four layer kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerKind {
    /// Bilinear: `Y = φ(W1 X W2 + B)`.
    Bl,
    /// Temporal-attention bilinear: bilinear plus attention steps 2–4.
    Tabl,
    /// Bilinear with factorized weights.
    LrBl,
    /// Temporal-attention bilinear with factorized weights.
    LrTabl,
}

impl LayerKind {
    /// Whether the layer carries attention state (`W`/`L,R`, `λ`).
    pub fn has_attention(self) -> bool {
        matches!(self, LayerKind::Tabl | LayerKind::LrTabl)
    }

    /// Whether the layer stores factorized weights.
    pub fn is_lowrank(self) -> bool {
        matches!(self, LayerKind::LrBl | LayerKind::LrTabl)
    }

    /// Stable identifier used in configs and serialized specs.
    pub fn id(self) -> &'static str {
        match self {
            LayerKind::Bl => "bl",
            LayerKind::Tabl => "tabl",
            LayerKind::LrBl => "lrbl",
            LayerKind::LrTabl => "lrtabl",
        }
    }
}

impl FromStr for LayerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bl" => Ok(LayerKind::Bl),
            "tabl" => Ok(LayerKind::Tabl),
            "lrbl" => Ok(LayerKind::LrBl),
            "lrtabl" => Ok(LayerKind::LrTabl),
            other => Err(Error::ConfigInvalid(format!(
                "unknown layer kind `{other}` (expected bl, tabl, lrbl, or lrtabl)"
            ))),
        }
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

/// Caps a requested factorization rank at the matrix's maximal possible
/// rank. Applied independently to every factorized weight; this per-matrix
/// cap is what makes the stored parameter counts match the published totals.
pub fn effective_rank(requested: usize, rows: usize, cols: usize) -> usize {
    requested.min(rows).min(cols)
}

/// Static configuration of one layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    /// Input feature count `D`.
    pub d_in: usize,
    /// Input time length `T`.
    pub t_in: usize,
    /// Output feature count `D'`.
    pub d_out: usize,
    /// Output time length `T'`.
    pub t_out: usize,
    /// Requested factorization rank `K`; present iff the kind is low-rank.
    pub rank: Option<usize>,
    pub activation: Activation,
    /// Keep the effective attention-mixing diagonal at exactly `1/T` under
    /// factorization (LR-TABL only; ignored elsewhere). Defaults to true.
    pub enforce_diag: bool,
}

impl LayerSpec {
    pub fn new(
        kind: LayerKind,
        d_in: usize,
        t_in: usize,
        d_out: usize,
        t_out: usize,
        rank: Option<usize>,
        activation: Activation,
    ) -> Result<Self> {
        if d_in == 0 || t_in == 0 || d_out == 0 || t_out == 0 {
            return Err(Error::ConfigInvalid(format!(
                "layer dimensions must be positive, got {d_in}x{t_in} -> {d_out}x{t_out}"
            )));
        }
        match (kind.is_lowrank(), rank) {
            (true, None) => {
                return Err(Error::ConfigInvalid(format!(
                    "layer kind `{kind}` requires a rank"
                )))
            }
            (true, Some(0)) => {
                return Err(Error::ConfigInvalid("rank must be at least 1".into()))
            }
            (false, Some(_)) => {
                return Err(Error::ConfigInvalid(format!(
                    "layer kind `{kind}` does not take a rank"
                )))
            }
            _ => {}
        }
        Ok(Self {
            kind,
            d_in,
            t_in,
            d_out,
            t_out,
            rank,
            activation,
            enforce_diag: true,
        })
    }

    /// Same spec with the diagonal-enforcement flag overridden.
    pub fn with_enforce_diag(mut self, enforce: bool) -> Self {
        self.enforce_diag = enforce;
        self
    }

    pub fn input_shape(&self) -> (usize, usize) {
        (self.d_in, self.t_in)
    }

    pub fn output_shape(&self) -> (usize, usize) {
        (self.d_out, self.t_out)
    }

    /// Effective rank of the feature transformation `W1 ≈ L1 R1` (a `D' x D`
    /// matrix): `min(K, D', D)`.
    pub fn rank_w1(&self) -> Option<usize> {
        self.rank.map(|k| effective_rank(k, self.d_out, self.d_in))
    }

    /// Effective rank of the temporal aggregation `W2 ≈ L2 R2` (a `T x T'`
    /// matrix): `min(K, T, T')`.
    pub fn rank_w2(&self) -> Option<usize> {
        self.rank.map(|k| effective_rank(k, self.t_in, self.t_out))
    }

    /// Effective rank of the attention mixing `W ≈ L R` (a `T x T` matrix):
    /// `min(K, T)`. Present only for the attention kinds.
    pub fn rank_w(&self) -> Option<usize> {
        if self.kind.has_attention() {
            self.rank.map(|k| effective_rank(k, self.t_in, self.t_in))
        } else {
            None
        }
    }

    /// Exact count of stored trainable scalars.
    ///
    /// Full kinds: `W1` has `D'D`, `W2` has `TT'`, `B` has `D'T'`; attention
    /// adds `W` with all `T²` entries (the frozen diagonal is stored, so it
    /// counts) plus the scalar `λ`. Low-rank kinds replace each matrix by its
    /// factor pair at the effective rank: `(D + D')K₁`, `(T + T')K₂`, and
    /// `2TK_W` for attention, with `B` and `λ` unchanged.
    pub fn param_count(&self) -> usize {
        let bias = self.d_out * self.t_out;
        match self.kind {
            LayerKind::Bl => self.d_out * self.d_in + self.t_in * self.t_out + bias,
            LayerKind::Tabl => {
                self.d_out * self.d_in
                    + self.t_in * self.t_out
                    + self.t_in * self.t_in
                    + bias
                    + 1
            }
            LayerKind::LrBl => {
                (self.d_in + self.d_out) * self.rank_w1().unwrap()
                    + (self.t_in + self.t_out) * self.rank_w2().unwrap()
                    + bias
            }
            LayerKind::LrTabl => {
                (self.d_in + self.d_out) * self.rank_w1().unwrap()
                    + (self.t_in + self.t_out) * self.rank_w2().unwrap()
                    + 2 * self.t_in * self.rank_w().unwrap()
                    + bias
                    + 1
            }
        }
    }

    /// Multiply-accumulate counts for the three costed pipeline steps,
    /// evaluated from dimensions and effective ranks alone. Bias, softmax,
    /// and activation costs are excluded by convention.
    pub fn flop_count(&self) -> FlopCount {
        let (d, t, dp, tp) = (self.d_in, self.t_in, self.d_out, self.t_out);
        match self.kind {
            LayerKind::Bl => FlopCount {
                xbar: (dp * d * t) as u64,
                e: 0,
                y: (dp * tp * t) as u64,
            },
            LayerKind::Tabl => FlopCount {
                xbar: (dp * d * t) as u64,
                e: (dp * t * t) as u64,
                y: (dp * tp * t) as u64,
            },
            LayerKind::LrBl => FlopCount {
                xbar: ((d + dp) * self.rank_w1().unwrap() * t) as u64,
                e: 0,
                y: ((t + tp) * self.rank_w2().unwrap() * dp + dp * tp) as u64,
            },
            LayerKind::LrTabl => FlopCount {
                xbar: ((d + dp) * self.rank_w1().unwrap() * t) as u64,
                e: (2 * dp * self.rank_w().unwrap() * t) as u64,
                y: ((t + tp) * self.rank_w2().unwrap() * dp + dp * tp) as u64,
            },
        }
    }

    /// Compact stable encoding used in network digests and checkpoints.
    pub fn canonical(&self) -> String {
        let rank = match self.rank {
            Some(k) => format!(":k{k}"),
            None => String::new(),
        };
        let diag = if self.kind == LayerKind::LrTabl && !self.enforce_diag {
            ":nodiag"
        } else {
            ""
        };
        format!(
            "{}:{}x{}->{}x{}{}:{}{}",
            self.kind, self.d_in, self.t_in, self.d_out, self.t_out, rank, self.activation, diag
        )
    }

    /// Parses the [`canonical`](Self::canonical) encoding back into a spec.
    pub fn from_canonical(s: &str) -> Result<Self> {
        let bad = || Error::ConfigInvalid(format!("malformed layer encoding `{s}`"));
        let mut parts = s.split(':');
        let kind: LayerKind = parts.next().ok_or_else(bad)?.parse()?;
        let dims = parts.next().ok_or_else(bad)?;
        let (input, output) = dims.split_once("->").ok_or_else(bad)?;
        let parse_shape = |txt: &str| -> Result<(usize, usize)> {
            let (a, b) = txt.split_once('x').ok_or_else(bad)?;
            Ok((
                a.parse().map_err(|_| bad())?,
                b.parse().map_err(|_| bad())?,
            ))
        };
        let (d_in, t_in) = parse_shape(input)?;
        let (d_out, t_out) = parse_shape(output)?;
        let mut rank = None;
        let mut activation = None;
        let mut enforce_diag = true;
        for part in parts {
            if let Some(k) = part.strip_prefix('k') {
                if activation.is_none() && rank.is_none() {
                    if let Ok(k) = k.parse() {
                        rank = Some(k);
                        continue;
                    }
                }
            }
            if part == "nodiag" {
                enforce_diag = false;
                continue;
            }
            activation = Some(part.parse::<Activation>()?);
        }
        let spec = LayerSpec::new(
            kind,
            d_in,
            t_in,
            d_out,
            t_out,
            rank,
            activation.ok_or_else(bad)?,
        )?;
        Ok(spec.with_enforce_diag(enforce_diag))
    }
}

/// Multiply-accumulate counts per pipeline step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlopCount {
    /// Step 1, feature transformation.
    pub xbar: u64,
    /// Steps 2–4, attention (zero for the bilinear kinds).
    pub e: u64,
    /// Step 5, temporal aggregation.
    pub y: u64,
}

impl FlopCount {
    pub fn total(&self) -> u64 {
        self.xbar + self.e + self.y
    }
}

/// Identifies one parameter tensor within a layer; also fixes the layer's
/// tensor iteration order for optimizers and serialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Slot {
    W1,
    W,
    W2,
    L1,
    R1,
    L,
    R,
    L2,
    R2,
    B,
}

impl Slot {
    pub fn id(self) -> &'static str {
        match self {
            Slot::W1 => "w1",
            Slot::W => "w",
            Slot::W2 => "w2",
            Slot::L1 => "l1",
            Slot::R1 => "r1",
            Slot::L => "l",
            Slot::R => "r",
            Slot::L2 => "l2",
            Slot::R2 => "r2",
            Slot::B => "b",
        }
    }
}

/// Trainable state of one layer. The same shape doubles as the gradient
/// container returned by the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams<S: Scalar> {
    Bl {
        w1: Matrix2D<S>,
        w2: Matrix2D<S>,
        b: Matrix2D<S>,
    },
    Tabl {
        w1: Matrix2D<S>,
        /// Attention mixing matrix; its diagonal is fixed to `1/T` and is
        /// rewritten after every optimizer step.
        w: Matrix2D<S>,
        w2: Matrix2D<S>,
        b: Matrix2D<S>,
        lambda: S,
    },
    LrBl {
        l1: Matrix2D<S>,
        r1: Matrix2D<S>,
        l2: Matrix2D<S>,
        r2: Matrix2D<S>,
        b: Matrix2D<S>,
    },
    LrTabl {
        l1: Matrix2D<S>,
        r1: Matrix2D<S>,
        l: Matrix2D<S>,
        r: Matrix2D<S>,
        l2: Matrix2D<S>,
        r2: Matrix2D<S>,
        b: Matrix2D<S>,
        lambda: S,
    },
}

impl<S: Scalar> LayerParams<S> {
    /// Freshly initialized parameters, deterministic given the seed.
    ///
    /// Dense transformation matrices (and their factors) draw uniform from
    /// `[-s, s]` with `s = sqrt(6 / (rows + cols))`; biases start at zero and
    /// `λ` at 0.5. The full attention matrix `W` starts with every entry at
    /// `1/T` (a uniform mix that already satisfies the diagonal constraint);
    /// its factors start as the absolute value of uniform draws scaled by
    /// `sqrt(1 / (T K_W))` so the materialized product has entries of the
    /// same order.
    pub fn init(spec: &LayerSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let glorot = |rng: &mut ChaCha8Rng, rows: usize, cols: usize| {
            let s = (6.0 / (rows + cols) as f64).sqrt();
            uniform_matrix(rng, rows, cols, -s, s, false)
        };
        let (d, t, dp, tp) = (spec.d_in, spec.t_in, spec.d_out, spec.t_out);
        let b = Matrix2D::zeros(dp, tp);
        let half = S::from_f64(0.5);
        match spec.kind {
            LayerKind::Bl => LayerParams::Bl {
                w1: glorot(&mut rng, dp, d),
                w2: glorot(&mut rng, t, tp),
                b,
            },
            LayerKind::Tabl => LayerParams::Tabl {
                w1: glorot(&mut rng, dp, d),
                w: Matrix2D::filled(t, t, S::from_f64(1.0 / t as f64)),
                w2: glorot(&mut rng, t, tp),
                b,
                lambda: half,
            },
            LayerKind::LrBl => {
                let (k1, k2) = (spec.rank_w1().unwrap(), spec.rank_w2().unwrap());
                LayerParams::LrBl {
                    l1: glorot(&mut rng, dp, k1),
                    r1: glorot(&mut rng, k1, d),
                    l2: glorot(&mut rng, t, k2),
                    r2: glorot(&mut rng, k2, tp),
                    b,
                }
            }
            LayerKind::LrTabl => {
                let (k1, k2, kw) = (
                    spec.rank_w1().unwrap(),
                    spec.rank_w2().unwrap(),
                    spec.rank_w().unwrap(),
                );
                let sw = (1.0 / (t * kw) as f64).sqrt();
                LayerParams::LrTabl {
                    l1: glorot(&mut rng, dp, k1),
                    r1: glorot(&mut rng, k1, d),
                    l: uniform_matrix(&mut rng, t, kw, -sw, sw, true),
                    r: uniform_matrix(&mut rng, kw, t, -sw, sw, true),
                    l2: glorot(&mut rng, t, k2),
                    r2: glorot(&mut rng, k2, tp),
                    b,
                    lambda: half,
                }
            }
        }
    }

    /// All-zero parameters of the right shapes; the gradient accumulator.
    pub fn zeros(spec: &LayerSpec) -> Self {
        let (d, t, dp, tp) = (spec.d_in, spec.t_in, spec.d_out, spec.t_out);
        let b = Matrix2D::zeros(dp, tp);
        match spec.kind {
            LayerKind::Bl => LayerParams::Bl {
                w1: Matrix2D::zeros(dp, d),
                w2: Matrix2D::zeros(t, tp),
                b,
            },
            LayerKind::Tabl => LayerParams::Tabl {
                w1: Matrix2D::zeros(dp, d),
                w: Matrix2D::zeros(t, t),
                w2: Matrix2D::zeros(t, tp),
                b,
                lambda: S::zero(),
            },
            LayerKind::LrBl => {
                let (k1, k2) = (spec.rank_w1().unwrap(), spec.rank_w2().unwrap());
                LayerParams::LrBl {
                    l1: Matrix2D::zeros(dp, k1),
                    r1: Matrix2D::zeros(k1, d),
                    l2: Matrix2D::zeros(t, k2),
                    r2: Matrix2D::zeros(k2, tp),
                    b,
                }
            }
            LayerKind::LrTabl => {
                let (k1, k2, kw) = (
                    spec.rank_w1().unwrap(),
                    spec.rank_w2().unwrap(),
                    spec.rank_w().unwrap(),
                );
                LayerParams::LrTabl {
                    l1: Matrix2D::zeros(dp, k1),
                    r1: Matrix2D::zeros(k1, d),
                    l: Matrix2D::zeros(t, kw),
                    r: Matrix2D::zeros(kw, t),
                    l2: Matrix2D::zeros(t, k2),
                    r2: Matrix2D::zeros(k2, tp),
                    b,
                    lambda: S::zero(),
                }
            }
        }
    }

    pub fn kind(&self) -> LayerKind {
        match self {
            LayerParams::Bl { .. } => LayerKind::Bl,
            LayerParams::Tabl { .. } => LayerKind::Tabl,
            LayerParams::LrBl { .. } => LayerKind::LrBl,
            LayerParams::LrTabl { .. } => LayerKind::LrTabl,
        }
    }

    /// Parameter tensors in the layer's fixed iteration order.
    pub fn tensors(&self) -> Vec<(Slot, &Matrix2D<S>)> {
        match self {
            LayerParams::Bl { w1, w2, b } => {
                vec![(Slot::W1, w1), (Slot::W2, w2), (Slot::B, b)]
            }
            LayerParams::Tabl { w1, w, w2, b, .. } => vec![
                (Slot::W1, w1),
                (Slot::W, w),
                (Slot::W2, w2),
                (Slot::B, b),
            ],
            LayerParams::LrBl { l1, r1, l2, r2, b } => vec![
                (Slot::L1, l1),
                (Slot::R1, r1),
                (Slot::L2, l2),
                (Slot::R2, r2),
                (Slot::B, b),
            ],
            LayerParams::LrTabl {
                l1,
                r1,
                l,
                r,
                l2,
                r2,
                b,
                ..
            } => vec![
                (Slot::L1, l1),
                (Slot::R1, r1),
                (Slot::L, l),
                (Slot::R, r),
                (Slot::L2, l2),
                (Slot::R2, r2),
                (Slot::B, b),
            ],
        }
    }

    /// Mutable view of the parameter tensors, same order as
    /// [`tensors`](Self::tensors).
    pub fn tensors_mut(&mut self) -> Vec<(Slot, &mut Matrix2D<S>)> {
        match self {
            LayerParams::Bl { w1, w2, b } => {
                vec![(Slot::W1, w1), (Slot::W2, w2), (Slot::B, b)]
            }
            LayerParams::Tabl { w1, w, w2, b, .. } => vec![
                (Slot::W1, w1),
                (Slot::W, w),
                (Slot::W2, w2),
                (Slot::B, b),
            ],
            LayerParams::LrBl { l1, r1, l2, r2, b } => vec![
                (Slot::L1, l1),
                (Slot::R1, r1),
                (Slot::L2, l2),
                (Slot::R2, r2),
                (Slot::B, b),
            ],
            LayerParams::LrTabl {
                l1,
                r1,
                l,
                r,
                l2,
                r2,
                b,
                ..
            } => vec![
                (Slot::L1, l1),
                (Slot::R1, r1),
                (Slot::L, l),
                (Slot::R, r),
                (Slot::L2, l2),
                (Slot::R2, r2),
                (Slot::B, b),
            ],
        }
    }

    /// The soft-mixing coefficient, for the attention kinds.
    pub fn lambda(&self) -> Option<S> {
        match self {
            LayerParams::Tabl { lambda, .. } | LayerParams::LrTabl { lambda, .. } => Some(*lambda),
            _ => None,
        }
    }

    pub fn lambda_mut(&mut self) -> Option<&mut S> {
        match self {
            LayerParams::Tabl { lambda, .. } | LayerParams::LrTabl { lambda, .. } => Some(lambda),
            _ => None,
        }
    }

    /// Total stored scalars, counted from the live tensors (used to
    /// cross-check `LayerSpec::param_count`).
    pub fn stored_scalars(&self) -> usize {
        let tensors: usize = self
            .tensors()
            .iter()
            .map(|(_, m)| m.rows() * m.cols())
            .sum();
        tensors + if self.lambda().is_some() { 1 } else { 0 }
    }

    /// Verifies that every tensor has the shape the spec dictates.
    pub fn validate_shapes(&self, spec: &LayerSpec) -> Result<()> {
        if self.kind() != spec.kind {
            return Err(Error::SpecMismatch(format!(
                "parameters are `{}` but the spec says `{}`",
                self.kind(),
                spec.kind
            )));
        }
        let expected = Self::zeros(spec);
        for ((slot, have), (_, want)) in self.tensors().into_iter().zip(expected.tensors()) {
            if have.shape() != want.shape() {
                return Err(Error::SpecMismatch(format!(
                    "tensor `{}` has shape {}x{}, expected {}x{}",
                    slot.id(),
                    have.rows(),
                    have.cols(),
                    want.rows(),
                    want.cols()
                )));
            }
        }
        Ok(())
    }

    /// Converts every tensor (and `λ`) to another scalar width.
    pub fn cast<T: Scalar>(&self) -> LayerParams<T> {
        match self {
            LayerParams::Bl { w1, w2, b } => LayerParams::Bl {
                w1: w1.cast(),
                w2: w2.cast(),
                b: b.cast(),
            },
            LayerParams::Tabl { w1, w, w2, b, lambda } => LayerParams::Tabl {
                w1: w1.cast(),
                w: w.cast(),
                w2: w2.cast(),
                b: b.cast(),
                lambda: T::from_f64(lambda.as_f64()),
            },
            LayerParams::LrBl { l1, r1, l2, r2, b } => LayerParams::LrBl {
                l1: l1.cast(),
                r1: r1.cast(),
                l2: l2.cast(),
                r2: r2.cast(),
                b: b.cast(),
            },
            LayerParams::LrTabl {
                l1,
                r1,
                l,
                r,
                l2,
                r2,
                b,
                lambda,
            } => LayerParams::LrTabl {
                l1: l1.cast(),
                r1: r1.cast(),
                l: l.cast(),
                r: r.cast(),
                l2: l2.cast(),
                r2: r2.cast(),
                b: b.cast(),
                lambda: T::from_f64(lambda.as_f64()),
            },
        }
    }
}

/// Intermediates of one forward pass, kept for the matching backward pass.
#[derive(Debug, Clone)]
pub struct LayerCache<S: Scalar> {
    /// Layer input `X`.
    pub x: Matrix2D<S>,
    /// `R1 X` (low-rank kinds only).
    pub u: Option<Matrix2D<S>>,
    /// Transformed slab `X̄`.
    pub xbar: Matrix2D<S>,
    /// `X̄ L` (LR-TABL only).
    pub g: Option<Matrix2D<S>>,
    /// Attention scores `E` (attention kinds only).
    pub e: Option<Matrix2D<S>>,
    /// Attention mask `A` (attention kinds only).
    pub a: Option<Matrix2D<S>>,
    /// Mixed slab `X̃` (equal to `X̄` for the bilinear kinds).
    pub xtilde: Matrix2D<S>,
    /// `X̃ L2` (low-rank kinds only).
    pub p: Option<Matrix2D<S>>,
    /// Pre-activation `X̃ W2 + B`.
    pub z: Matrix2D<S>,
}

/// Draws a `rows x cols` matrix with entries uniform in `[lo, hi]`,
/// optionally folded to absolute values. Sampling happens in `f64` so the
/// stream of random draws is identical across scalar widths.
fn uniform_matrix<S: Scalar>(
    rng: &mut ChaCha8Rng,
    rows: usize,
    cols: usize,
    lo: f64,
    hi: f64,
    positive: bool,
) -> Matrix2D<S> {
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        let v: f64 = rng.gen_range(lo..=hi);
        data.push(S::from_f64(if positive { v.abs() } else { v }));
    }
    Matrix2D::new(rows, cols, data).expect("constructed with matching length")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: LayerKind, rank: Option<usize>) -> LayerSpec {
        LayerSpec::new(kind, 40, 10, 3, 1, rank, Activation::Identity).unwrap()
    }

    #[test]
    fn effective_rank_caps_at_both_dimensions() {
        assert_eq!(effective_rank(3, 10, 1), 1);
        assert_eq!(effective_rank(1, 40, 120), 1);
        assert_eq!(effective_rank(21, 10, 10), 10);
        assert_eq!(effective_rank(2, 5, 7), 2);
    }

    #[test]
    fn param_count_single_attention_layer() {
        // 40x10 -> 3x1 attention layer: 120 + 10 + 100 + 3 + 1.
        assert_eq!(spec(LayerKind::Tabl, None).param_count(), 234);
    }

    #[test]
    fn param_count_lowrank_attention_layer() {
        assert_eq!(spec(LayerKind::LrTabl, Some(1)).param_count(), 78);
        assert_eq!(spec(LayerKind::LrTabl, Some(2)).param_count(), 141);
        // K = 3: the temporal factor pair is capped at rank 1 by T' = 1.
        assert_eq!(spec(LayerKind::LrTabl, Some(3)).param_count(), 204);
    }

    #[test]
    fn flop_count_full_attention_layer() {
        let f = spec(LayerKind::Tabl, None).flop_count();
        assert_eq!((f.xbar, f.e, f.y), (1200, 300, 30));
        assert_eq!(f.total(), 1530);
    }

    #[test]
    fn flop_count_lowrank_attention_layer() {
        let f = spec(LayerKind::LrTabl, Some(2)).flop_count();
        assert_eq!(f.xbar, (40 + 3) * 2 * 10);
        assert_eq!(f.e, 2 * 3 * 2 * 10);
        assert_eq!(f.y, (10 + 1) * 1 * 3 + 3);
    }

    #[test]
    fn bilinear_kinds_have_no_attention_cost() {
        assert_eq!(spec(LayerKind::Bl, None).flop_count().e, 0);
        assert_eq!(spec(LayerKind::LrBl, Some(2)).flop_count().e, 0);
    }

    #[test]
    fn init_is_deterministic_and_respects_constraints() {
        let s = spec(LayerKind::Tabl, None);
        let a = LayerParams::<f32>::init(&s, 7);
        let b = LayerParams::<f32>::init(&s, 7);
        assert_eq!(a, b);
        let c = LayerParams::<f32>::init(&s, 8);
        assert_ne!(a, c);
        match &a {
            LayerParams::Tabl { w, b, lambda, .. } => {
                for i in 0..10 {
                    assert_eq!(w.at(i, i), 0.1);
                }
                assert!(b.data().iter().all(|&v| v == 0.0));
                assert_eq!(*lambda, 0.5);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn stored_scalars_match_param_count_for_all_kinds() {
        for (kind, rank) in [
            (LayerKind::Bl, None),
            (LayerKind::Tabl, None),
            (LayerKind::LrBl, Some(2)),
            (LayerKind::LrTabl, Some(2)),
            (LayerKind::LrTabl, Some(7)),
        ] {
            let s = spec(kind, rank);
            let p = LayerParams::<f32>::init(&s, 3);
            assert_eq!(p.stored_scalars(), s.param_count(), "{kind}");
        }
    }

    #[test]
    fn canonical_encoding_round_trips() {
        let cases = [
            spec(LayerKind::Bl, None),
            spec(LayerKind::Tabl, None),
            spec(LayerKind::LrBl, Some(4)),
            spec(LayerKind::LrTabl, Some(4)),
            spec(LayerKind::LrTabl, Some(4)).with_enforce_diag(false),
            LayerSpec::new(LayerKind::Bl, 40, 10, 120, 5, None, Activation::Relu).unwrap(),
        ];
        for s in cases {
            let enc = s.canonical();
            assert_eq!(LayerSpec::from_canonical(&enc).unwrap(), s, "{enc}");
        }
    }

    #[test]
    fn spec_rejects_inconsistent_rank() {
        assert!(LayerSpec::new(LayerKind::Tabl, 4, 5, 3, 2, Some(2), Activation::Identity).is_err());
        assert!(LayerSpec::new(LayerKind::LrTabl, 4, 5, 3, 2, None, Activation::Identity).is_err());
        assert!(LayerSpec::new(LayerKind::LrBl, 4, 5, 3, 2, Some(0), Activation::Identity).is_err());
    }
}
