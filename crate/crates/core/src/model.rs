//! Networks assembled from layers, the softmax classification head, the
//! class-weighted entropy loss, and confusion-matrix metrics.
//!
//! Three published structures are provided, all consuming a `40 x 10` input
//! slab and emitting 3 class scores (up / stationary / down):
//!
//! - **A**: one attention layer `40x10 -> 3x1`.
//! - **B**: bilinear `40x10 -> 120x5` (relu), attention `-> 3x1`.
//! - **C**: bilinear `40x10 -> 60x10` (relu), bilinear `-> 120x5` (relu),
//!   attention `-> 3x1`.
//!
//! Each structure exists in a full variant and a low-rank variant that
//! factorizes every weight matrix at a shared requested rank `K` (capped
//! per-matrix by the effective-rank rule).

use crate::defaults::CLASSES;
use crate::error::{Error, Result};
use crate::layers::{LayerCache, LayerKind, LayerParams, LayerSpec};
use crate::tensor::{Activation, Matrix2D, Scalar};
use sha2::{Digest, Sha256};
use std::fmt;
use std::str::FromStr;

/// The published network structures, plus an escape hatch for tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StructureId {
    A,
    B,
    C,
    Custom,
}

impl StructureId {
    pub fn id(self) -> &'static str {
        match self {
            StructureId::A => "A",
            StructureId::B => "B",
            StructureId::C => "C",
            StructureId::Custom => "custom",
        }
    }
}

impl FromStr for StructureId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(StructureId::A),
            "B" | "b" => Ok(StructureId::B),
            "C" | "c" => Ok(StructureId::C),
            "custom" => Ok(StructureId::Custom),
            other => Err(Error::ConfigInvalid(format!(
                "unknown structure `{other}` (expected A, B, or C)"
            ))),
        }
    }
}

impl fmt::Display for StructureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

/// Full or low-rank parameterization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Full,
    LowRank,
}

impl Variant {
    pub fn id(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::LowRank => "lowrank",
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Variant::Full),
            "lowrank" => Ok(Variant::LowRank),
            other => Err(Error::ConfigInvalid(format!(
                "unknown variant `{other}` (expected full or lowrank)"
            ))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

/// Static description of a whole network: an ordered stack of layer specs
/// whose shapes chain, ending in a `CLASSES x 1` output fed to a softmax
/// head.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    pub layers: Vec<LayerSpec>,
    pub structure: StructureId,
    pub variant: Variant,
    pub rank: Option<usize>,
}

impl NetworkSpec {
    /// Spec for one of the published structures.
    pub fn structure(id: StructureId, variant: Variant, rank: Option<usize>) -> Result<Self> {
        match (variant, rank) {
            (Variant::LowRank, None) => {
                return Err(Error::ConfigInvalid(
                    "the lowrank variant requires a rank".into(),
                ))
            }
            (Variant::Full, Some(_)) => {
                return Err(Error::ConfigInvalid(
                    "a rank was given but the variant is full (use --variant lowrank)".into(),
                ))
            }
            _ => {}
        }
        let (bl, tabl) = match variant {
            Variant::Full => (LayerKind::Bl, LayerKind::Tabl),
            Variant::LowRank => (LayerKind::LrBl, LayerKind::LrTabl),
        };
        let layer = |kind: LayerKind, d_in, t_in, d_out, t_out, act| {
            LayerSpec::new(
                kind,
                d_in,
                t_in,
                d_out,
                t_out,
                if kind.is_lowrank() { rank } else { None },
                act,
            )
        };
        let layers = match id {
            StructureId::A => vec![layer(tabl, 40, 10, 3, 1, Activation::Identity)?],
            StructureId::B => vec![
                layer(bl, 40, 10, 120, 5, Activation::Relu)?,
                layer(tabl, 120, 5, 3, 1, Activation::Identity)?,
            ],
            StructureId::C => vec![
                layer(bl, 40, 10, 60, 10, Activation::Relu)?,
                layer(bl, 60, 10, 120, 5, Activation::Relu)?,
                layer(tabl, 120, 5, 3, 1, Activation::Identity)?,
            ],
            StructureId::Custom => {
                return Err(Error::ConfigInvalid(
                    "custom structures are built with NetworkSpec::custom".into(),
                ))
            }
        };
        let spec = NetworkSpec {
            layers,
            structure: id,
            variant,
            rank,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Spec from an explicit layer stack (tests and experiments).
    pub fn custom(layers: Vec<LayerSpec>) -> Result<Self> {
        let variant = if layers.iter().any(|l| l.kind.is_lowrank()) {
            Variant::LowRank
        } else {
            Variant::Full
        };
        let rank = layers.iter().find_map(|l| l.rank);
        let spec = NetworkSpec {
            layers,
            structure: StructureId::Custom,
            variant,
            rank,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Checks shape chaining and the classification-head contract.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::ConfigInvalid("network has no layers".into()));
        }
        for (i, pair) in self.layers.windows(2).enumerate() {
            if pair[0].output_shape() != pair[1].input_shape() {
                return Err(Error::ConfigInvalid(format!(
                    "layer {} outputs {}x{} but layer {} expects {}x{}",
                    i + 1,
                    pair[0].d_out,
                    pair[0].t_out,
                    i + 2,
                    pair[1].d_in,
                    pair[1].t_in
                )));
            }
        }
        let last = self.layers.last().unwrap();
        if last.output_shape() != (CLASSES, 1) {
            return Err(Error::ConfigInvalid(format!(
                "final layer must output {CLASSES}x1 class scores, got {}x{}",
                last.d_out, last.t_out
            )));
        }
        Ok(())
    }

    pub fn input_shape(&self) -> (usize, usize) {
        self.layers[0].input_shape()
    }

    /// Total stored trainable scalars across all layers.
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.param_count()).sum()
    }

    /// Stable text encoding of the whole spec; basis for the digest and the
    /// checkpoint header.
    pub fn canonical(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("structure={}\n", self.structure.id()));
        out.push_str(&format!("variant={}\n", self.variant.id()));
        if let Some(k) = self.rank {
            out.push_str(&format!("rank={k}\n"));
        }
        for layer in &self.layers {
            out.push_str(&format!("layer={}\n", layer.canonical()));
        }
        out
    }

    /// Parses the [`canonical`](Self::canonical) encoding.
    pub fn from_canonical(text: &str) -> Result<Self> {
        let mut structure = None;
        let mut variant = None;
        let mut rank = None;
        let mut layers = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::ConfigInvalid(format!("malformed spec line `{line}`"))
            })?;
            match key {
                "structure" => structure = Some(value.parse::<StructureId>()?),
                "variant" => variant = Some(value.parse::<Variant>()?),
                "rank" => {
                    rank = Some(value.parse::<usize>().map_err(|_| {
                        Error::ConfigInvalid(format!("bad rank `{value}`"))
                    })?)
                }
                "layer" => layers.push(LayerSpec::from_canonical(value)?),
                other => {
                    return Err(Error::ConfigInvalid(format!(
                        "unknown spec key `{other}`"
                    )))
                }
            }
        }
        let spec = NetworkSpec {
            layers,
            structure: structure
                .ok_or_else(|| Error::ConfigInvalid("spec missing structure".into()))?,
            variant: variant
                .ok_or_else(|| Error::ConfigInvalid("spec missing variant".into()))?,
            rank,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// SHA-256 of the canonical encoding, hex-encoded. Two specs are
    /// compatible exactly when their digests match.
    pub fn digest(&self) -> String {
        let hash = Sha256::digest(self.canonical().as_bytes());
        let mut hex = String::with_capacity(64);
        for byte in hash {
            hex.push_str(&format!("{byte:02x}"));
        }
        hex
    }
}

/// Everything one forward pass produces, kept around for backpropagation.
pub struct NetworkOutput<S: Scalar> {
    /// Class probabilities after the softmax head (length [`CLASSES`]).
    pub probs: Vec<S>,
    /// Pre-softmax class scores (length [`CLASSES`]).
    pub logits: Vec<S>,
    /// Per-layer forward caches, in layer order.
    pub caches: Vec<LayerCache<S>>,
}

/// A spec plus live parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<S: Scalar> {
    pub spec: NetworkSpec,
    pub params: Vec<LayerParams<S>>,
}

impl<S: Scalar> Network<S> {
    /// Builds one of the published structures with freshly initialized
    /// parameters. Each layer's initializer is seeded independently by
    /// spreading the base seed with a fixed odd constant.
    pub fn build(
        structure: StructureId,
        variant: Variant,
        rank: Option<usize>,
        seed: u64,
    ) -> Result<Self> {
        let spec = NetworkSpec::structure(structure, variant, rank)?;
        Ok(Self::init(spec, seed))
    }

    /// Initializes parameters for an already-validated spec.
    pub fn init(spec: NetworkSpec, seed: u64) -> Self {
        let params = spec
            .layers
            .iter()
            .enumerate()
            .map(|(i, layer)| {
                let layer_seed = seed.wrapping_add((i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                LayerParams::init(layer, layer_seed)
            })
            .collect();
        Network { spec, params }
    }

    /// Wraps existing parameters, checking them against the spec.
    pub fn from_parts(spec: NetworkSpec, params: Vec<LayerParams<S>>) -> Result<Self> {
        spec.validate()?;
        if params.len() != spec.layers.len() {
            return Err(Error::SpecMismatch(format!(
                "{} parameter sets for {} layers",
                params.len(),
                spec.layers.len()
            )));
        }
        for (layer, p) in spec.layers.iter().zip(&params) {
            p.validate_shapes(layer)?;
        }
        Ok(Network { spec, params })
    }

    pub fn param_count(&self) -> usize {
        self.spec.param_count()
    }

    /// Runs the full stack plus softmax head on one input slab.
    pub fn forward(&self, x: &Matrix2D<S>) -> Result<NetworkOutput<S>> {
        let mut caches = Vec::with_capacity(self.spec.layers.len());
        let mut current = x.clone();
        for (layer, params) in self.spec.layers.iter().zip(&self.params) {
            let (y, cache) = layer.forward(params, &current)?;
            caches.push(cache);
            current = y;
        }
        let logits: Vec<S> = (0..CLASSES).map(|c| current.at(c, 0)).collect();
        let probs = softmax(&logits);
        Ok(NetworkOutput {
            probs,
            logits,
            caches,
        })
    }

    /// Predicted class for one input (argmax of the class probabilities).
    pub fn classify(&self, x: &Matrix2D<S>) -> Result<usize> {
        Ok(predict_class(&self.forward(x)?.probs))
    }

    /// Backpropagates a gradient w.r.t. the logits through every layer.
    /// Returns per-layer parameter gradients and the input gradient.
    pub fn backward(
        &self,
        caches: &[LayerCache<S>],
        dlogits: &[S],
    ) -> Result<(Vec<LayerParams<S>>, Matrix2D<S>)> {
        if dlogits.len() != CLASSES || caches.len() != self.spec.layers.len() {
            return Err(Error::SpecMismatch(
                "backward inputs do not match this network".into(),
            ));
        }
        let mut dy = Matrix2D::new(CLASSES, 1, dlogits.to_vec())?;
        let mut grads = vec![None; self.spec.layers.len()];
        for (i, (layer, params)) in self.spec.layers.iter().zip(&self.params).enumerate().rev() {
            let (dx, g) = layer.backward(params, &caches[i], &dy)?;
            grads[i] = Some(g);
            dy = dx;
        }
        Ok((grads.into_iter().map(Option::unwrap).collect(), dy))
    }

    /// Lists every violated parameter constraint (empty when healthy).
    /// Checked invariants: `λ ∈ [0, 1]` for all attention layers, and a full
    /// attention layer's mixing diagonal exactly `1/T`.
    pub fn audit_constraints(&self) -> Vec<String> {
        let mut violations = Vec::new();
        for (i, (layer, params)) in self.spec.layers.iter().zip(&self.params).enumerate() {
            if let Some(lambda) = params.lambda() {
                if !(lambda >= S::zero() && lambda <= S::one()) {
                    violations.push(format!("layer {}: lambda = {} outside [0, 1]", i + 1, lambda));
                }
            }
            if let LayerParams::Tabl { w, .. } = params {
                let target = S::from_f64(1.0 / layer.t_in as f64);
                for j in 0..layer.t_in {
                    if w.at(j, j) != target {
                        violations.push(format!(
                            "layer {}: mixing diagonal [{j}] = {} != {}",
                            i + 1,
                            w.at(j, j),
                            target
                        ));
                    }
                }
            }
        }
        violations
    }

    /// Converts the whole network to another scalar width.
    pub fn cast<T: Scalar>(&self) -> Network<T> {
        Network {
            spec: self.spec.clone(),
            params: self.params.iter().map(|p| p.cast()).collect(),
        }
    }
}

/// Numerically stable softmax over the class scores.
pub fn softmax<S: Scalar>(logits: &[S]) -> Vec<S> {
    let max = logits.iter().copied().fold(S::neg_infinity(), S::max);
    let exps: Vec<S> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum = exps.iter().fold(S::zero(), |acc, &v| acc + v);
    exps.into_iter().map(|v| v / sum).collect()
}

/// Adjoint of the softmax head: `dz_i = p_i (dp_i − Σ_j dp_j p_j)`.
pub fn softmax_backward<S: Scalar>(probs: &[S], dprobs: &[S]) -> Vec<S> {
    let dot = probs
        .iter()
        .zip(dprobs)
        .fold(S::zero(), |acc, (&p, &dp)| acc + p * dp);
    probs
        .iter()
        .zip(dprobs)
        .map(|(&p, &dp)| p * (dp - dot))
        .collect()
}

/// Argmax with ties broken toward the lowest class index.
pub fn predict_class<S: Scalar>(probs: &[S]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate().skip(1) {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

/// Floor applied to probabilities before taking logs, preventing `-inf` on
/// confident wrong predictions.
pub const PROB_FLOOR: f64 = 1e-12;

/// Class-weighted cross-entropy over a batch, averaged over samples:
/// each sample of true class `c` contributes `−(ε / N_c) ln(y_c)` with the
/// probability clipped to `[1e-12, 1]`.
///
/// Returns the batch loss and the gradient w.r.t. each sample's probability
/// vector (to be chained through [`softmax_backward`]).
pub fn weighted_entropy_loss<S: Scalar>(
    probs_batch: &[Vec<S>],
    true_classes: &[usize],
    class_counts: &[u64; CLASSES],
    epsilon: f64,
) -> Result<(f64, Vec<Vec<S>>)> {
    if probs_batch.is_empty() || probs_batch.len() != true_classes.len() {
        return Err(Error::DataInvalid(format!(
            "loss needs a non-empty batch with matching labels ({} probs, {} labels)",
            probs_batch.len(),
            true_classes.len()
        )));
    }
    if class_counts.iter().any(|&n| n == 0) {
        return Err(Error::DataInvalid(
            "every class needs at least one training sample for loss weighting".into(),
        ));
    }
    let weights: Vec<f64> = class_counts.iter().map(|&n| epsilon / n as f64).collect();
    let batch = probs_batch.len() as f64;
    let mut loss = 0.0;
    let mut dprobs = Vec::with_capacity(probs_batch.len());
    for (probs, &class) in probs_batch.iter().zip(true_classes) {
        if class >= CLASSES {
            return Err(Error::DataInvalid(format!(
                "class index {class} out of range (0..{CLASSES})"
            )));
        }
        let p = probs[class].as_f64();
        let clipped = p.clamp(PROB_FLOOR, 1.0);
        loss += -weights[class] * clipped.ln();
        let mut grad = vec![S::zero(); CLASSES];
        // Derivative through the clip: zero once the probability has hit
        // the floor.
        if p >= PROB_FLOOR {
            grad[class] = S::from_f64(-weights[class] / (batch * clipped));
        }
        dprobs.push(grad);
    }
    Ok((loss / batch, dprobs))
}

/// Per-class precision/recall/F1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Confusion-matrix-derived classification metrics. Class axes are ordered
/// up = 0, stationary = 1, down = 2; confusion rows are true classes,
/// columns are predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub confusion: [[u64; CLASSES]; CLASSES],
    pub accuracy: f64,
    pub per_class: [ClassScores; CLASSES],
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

/// Builds metrics from aligned prediction/truth sequences. A class absent
/// from both predictions and truths contributes zero precision, recall, and
/// F1 (and drags the macro averages down accordingly).
pub fn compute_metrics(predictions: &[usize], truths: &[usize]) -> Result<Metrics> {
    if predictions.is_empty() || predictions.len() != truths.len() {
        return Err(Error::DataInvalid(format!(
            "metrics need non-empty aligned sequences ({} predictions, {} truths)",
            predictions.len(),
            truths.len()
        )));
    }
    let mut confusion = [[0u64; CLASSES]; CLASSES];
    for (&pred, &truth) in predictions.iter().zip(truths) {
        if pred >= CLASSES || truth >= CLASSES {
            return Err(Error::DataInvalid(format!(
                "label out of range: prediction {pred}, truth {truth}"
            )));
        }
        confusion[truth][pred] += 1;
    }
    let total: u64 = confusion.iter().flatten().sum();
    let correct: u64 = (0..CLASSES).map(|c| confusion[c][c]).sum();
    let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let mut per_class = [ClassScores {
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
    }; CLASSES];
    for (c, scores) in per_class.iter_mut().enumerate() {
        let tp = confusion[c][c];
        let predicted: u64 = (0..CLASSES).map(|r| confusion[r][c]).sum();
        let actual: u64 = confusion[c].iter().sum();
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, actual);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        *scores = ClassScores {
            precision,
            recall,
            f1,
        };
    }
    let mean = |f: fn(&ClassScores) -> f64| -> f64 {
        per_class.iter().map(f).sum::<f64>() / CLASSES as f64
    };
    Ok(Metrics {
        confusion,
        accuracy: ratio(correct, total),
        per_class,
        macro_precision: mean(|s| s.precision),
        macro_recall: mean(|s| s.recall),
        macro_f1: mean(|s| s.f1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn published_structure_parameter_totals() {
        let count = |id, variant, rank| {
            NetworkSpec::structure(id, variant, rank)
                .unwrap()
                .param_count()
        };
        assert_eq!(count(StructureId::A, Variant::Full, None), 234);
        assert_eq!(count(StructureId::B, Variant::Full, None), 5844);
        assert_eq!(count(StructureId::C, Variant::Full, None), 11344);
        assert_eq!(count(StructureId::A, Variant::LowRank, Some(1)), 78);
        assert_eq!(count(StructureId::B, Variant::LowRank, Some(1)), 918);
        assert_eq!(count(StructureId::C, Variant::LowRank, Some(21)), 7784);
    }

    #[test]
    fn structure_rejects_inconsistent_variant_rank() {
        assert!(NetworkSpec::structure(StructureId::A, Variant::LowRank, None).is_err());
        assert!(NetworkSpec::structure(StructureId::A, Variant::Full, Some(2)).is_err());
    }

    #[test]
    fn forward_probabilities_sum_to_one() {
        let net = Network::<f64>::build(StructureId::B, Variant::Full, None, 5).unwrap();
        let x = Matrix2D::filled(40, 10, 0.25);
        let out = net.forward(&x).unwrap();
        let sum: f64 = out.probs.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        let again = net.forward(&x).unwrap();
        assert_eq!(out.probs, again.probs, "forward must be deterministic");
    }

    #[test]
    fn zeroed_final_layer_gives_uniform_probabilities() {
        let mut net = Network::<f64>::build(StructureId::A, Variant::Full, None, 5).unwrap();
        if let LayerParams::Tabl { w1, w2, b, .. } = &mut net.params[0] {
            for v in w1.data_mut() {
                *v = 0.0;
            }
            for v in w2.data_mut() {
                *v = 0.0;
            }
            for v in b.data_mut() {
                *v = 0.0;
            }
        }
        let out = net.forward(&Matrix2D::filled(40, 10, 1.0)).unwrap();
        for &p in &out.probs {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn predict_class_argmax_and_tie_break() {
        assert_eq!(predict_class(&[0.2, 0.5, 0.3]), 1);
        assert_eq!(predict_class(&[0.4, 0.4, 0.2]), 0);
        assert_eq!(predict_class(&[0.0, 0.0, 1.0]), 2);
    }

    #[test]
    fn loss_hand_values() {
        // Perfect prediction: zero loss.
        let (loss, _) =
            weighted_entropy_loss(&[vec![1.0_f64, 0.0, 0.0]], &[0], &[1, 1, 1], 1e6).unwrap();
        assert_eq!(loss, 0.0);

        // Uniform prediction, unit counts: epsilon * ln 3.
        let third = 1.0 / 3.0_f64;
        let (loss, dprobs) =
            weighted_entropy_loss(&[vec![third, third, third]], &[0], &[1, 1, 1], 1e6).unwrap();
        assert!((loss - 1e6 * 3.0_f64.ln()).abs() < 1e-3);
        assert!((dprobs[0][0] + 1e6 / third).abs() < 1e-3);
        assert_eq!(dprobs[0][1], 0.0);

        // Doubling every class count halves the loss.
        let (half, _) =
            weighted_entropy_loss(&[vec![third, third, third]], &[0], &[2, 2, 2], 1e6).unwrap();
        assert!((half - loss / 2.0).abs() < 1e-6);
    }

    #[test]
    fn loss_rejects_empty_batch_and_bad_class() {
        assert!(weighted_entropy_loss::<f64>(&[], &[], &[1, 1, 1], 1e6).is_err());
        assert!(
            weighted_entropy_loss(&[vec![1.0_f64, 0.0, 0.0]], &[3], &[1, 1, 1], 1e6).is_err()
        );
        assert!(
            weighted_entropy_loss(&[vec![1.0_f64, 0.0, 0.0]], &[0], &[1, 0, 1], 1e6).is_err()
        );
    }

    #[test]
    fn metrics_hand_confusion() {
        let m = compute_metrics(&[0, 1, 1, 2], &[0, 0, 1, 2]).unwrap();
        assert_eq!(m.accuracy, 0.75);
        assert!((m.per_class[0].precision - 1.0).abs() < 1e-12);
        assert!((m.per_class[0].recall - 0.5).abs() < 1e-12);
        assert!((m.per_class[0].f1 - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.per_class[1].precision - 0.5).abs() < 1e-12);
        assert!((m.per_class[1].recall - 1.0).abs() < 1e-12);
        assert!((m.per_class[2].f1 - 1.0).abs() < 1e-12);
        assert!((m.macro_f1 - 7.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn metrics_perfect_prediction() {
        let labels = [0, 1, 2, 1, 0];
        let m = compute_metrics(&labels, &labels).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.macro_f1, 1.0);
    }

    #[test]
    fn spec_canonical_round_trip_and_digest_stability() {
        let spec = NetworkSpec::structure(StructureId::C, Variant::LowRank, Some(4)).unwrap();
        let parsed = NetworkSpec::from_canonical(&spec.canonical()).unwrap();
        assert_eq!(parsed, spec);
        assert_eq!(parsed.digest(), spec.digest());
        let other = NetworkSpec::structure(StructureId::C, Variant::LowRank, Some(5)).unwrap();
        assert_ne!(other.digest(), spec.digest());
    }

    #[test]
    fn softmax_backward_matches_direct_jacobian() {
        let logits = [0.3_f64, -0.7, 1.1];
        let probs = softmax(&logits);
        let dprobs = [0.25_f64, -1.5, 0.5];
        let dz = softmax_backward(&probs, &dprobs);
        // Jacobian of softmax: J_ij = p_i (δ_ij − p_j); dz = Jᵀ dprobs.
        for i in 0..3 {
            let mut want = 0.0;
            for j in 0..3 {
                let jac = probs[j] * (if i == j { 1.0 } else { 0.0 } - probs[i]);
                want += jac * dprobs[j];
            }
            assert!((dz[i] - want).abs() < 1e-14);
        }
    }
}
