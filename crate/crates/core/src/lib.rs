//! Bilinear temporal-attention layers for order-book time-series
//! classification, with low-rank factorized variants, exact parameter and
//! FLOP accounting, hand-derived backpropagation, deterministic training,
//! and FI-2010-style data handling.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`]: dense 2-D matrices and the numerically careful kernels
//!   (matmul, row softmax, elementwise ops) everything else is built from.
//! - [`layers`]: the four layer kinds — bilinear (BL), temporal-attention
//!   bilinear (TABL), and their low-rank factorized forms (LR-BL, LR-TABL) —
//!   including forward/backward passes, parameter/FLOP counts, and SVD-based
//!   factorization helpers.
//! - [`model`]: the three published network structures (A, B, C), the softmax
//!   classification head, the class-weighted entropy loss, and evaluation
//!   metrics.
//! - [`data`]: order-book data ingestion, normalization, windowing,
//!   day-based train/test splitting, and a synthetic generator for tests.
//! - [`training`]: mini-batch Adam/SGD with constraint projection, early
//!   stopping, constraint auditing, and checksummed checkpoints.

pub mod data;
pub mod error;
pub mod layers;
pub mod model;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{Activation, Matrix2D, Scalar};

/// Default dimensions and hyperparameters shared by the published
/// experimental protocol.
pub mod defaults {
    /// Raw order-book features per event: ten price levels, bid/ask, price
    /// and volume.
    pub const FEATURES: usize = 40;
    /// Events per input window ("the ten most recent instances").
    pub const WINDOW: usize = 10;
    /// Output classes: up, stationary, down.
    pub const CLASSES: usize = 3;
    /// Class-weight numerator in the weighted entropy loss.
    pub const LOSS_EPSILON: f64 = 1e6;
}
