//! Mini-batch training: SGD and Adam, the epoch loop with validation-based
//! early stopping, post-step constraint projection and auditing, evaluation,
//! and deterministic checkpointing.
//!
//! Determinism contract: given the same (seed, config, data), training
//! produces bit-identical parameters, history, and artifacts. All run
//! randomness (shuffling) flows from one counter-based generator whose
//! position is saved in checkpoints, so a resumed run continues the exact
//! stream an uninterrupted run would have used. Checkpoints store tensors in
//! single precision — the width training uses by default.

use crate::data::Sample;
use crate::defaults::CLASSES;
use crate::error::{Error, Result};
use crate::layers::LayerParams;
use crate::model::{
    compute_metrics, predict_class, softmax_backward, weighted_entropy_loss, Metrics, Network,
    NetworkSpec,
};
use crate::tensor::Scalar;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

/// Parameter-update rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    Sgd,
    Adam,
}

impl Optimizer {
    pub fn id(self) -> &'static str {
        match self {
            Optimizer::Sgd => "sgd",
            Optimizer::Adam => "adam",
        }
    }
}

impl FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Optimizer::Sgd),
            "adam" => Ok(Optimizer::Adam),
            other => Err(Error::ConfigInvalid(format!(
                "unknown optimizer `{other}` (expected sgd or adam)"
            ))),
        }
    }
}

impl fmt::Display for Optimizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

/// Everything that controls a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: u32,
    /// Stop after this many epochs without a validation macro-F1 improvement.
    pub patience: u32,
    pub shuffle: bool,
    pub seed: u64,
    /// Numerator of the per-class loss weights `epsilon / N_c`.
    pub loss_epsilon: f64,
    /// Tail fraction of the training samples held out for validation.
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: Optimizer::Adam,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            batch_size: 256,
            max_epochs: 200,
            patience: 20,
            shuffle: true,
            seed: 42,
            loss_epsilon: crate::defaults::LOSS_EPSILON,
            val_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| -> Result<()> {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::ConfigInvalid(format!("{name} must be positive, got {v}")));
            }
            Ok(())
        };
        positive("learning_rate", self.learning_rate)?;
        positive("adam_epsilon", self.adam_epsilon)?;
        positive("loss_epsilon", self.loss_epsilon)?;
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::ConfigInvalid(format!("{name} must be in [0, 1), got {v}")));
            }
        }
        if self.batch_size < 1 {
            return Err(Error::ConfigInvalid("batch_size must be >= 1".into()));
        }
        if self.max_epochs < 1 {
            return Err(Error::ConfigInvalid("max_epochs must be >= 1".into()));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::ConfigInvalid(format!(
                "val_fraction must be in (0, 1), got {}",
                self.val_fraction
            )));
        }
        Ok(())
    }
}

/// First and second moment accumulators plus the Adam step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState<S: Scalar> {
    pub t: u64,
    pub m: Vec<LayerParams<S>>,
    pub v: Vec<LayerParams<S>>,
}

impl<S: Scalar> OptState<S> {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        let zeros: Vec<LayerParams<S>> =
            spec.layers.iter().map(LayerParams::zeros).collect();
        OptState {
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One epoch's history row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: u32,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub val_precision: f64,
    pub val_recall: f64,
    pub val_f1: f64,
}

/// Renders history rows as a CSV document (header included, LF endings).
pub fn history_to_csv(records: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,val_acc,val_p,val_r,val_f1\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.epoch, r.train_loss, r.val_accuracy, r.val_precision, r.val_recall, r.val_f1
        ));
    }
    out
}

/// Post-step constraint health over a whole run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    /// Optimizer steps taken.
    pub steps: u64,
    /// Constraint violations observed by the post-step audit (empty on a
    /// healthy run).
    pub violations: Vec<String>,
    /// Whether early stopping ended the run before `max_epochs`.
    pub stopped_early: bool,
}

/// The complete mutable state of a training run; everything needed to
/// continue it lives here (and round-trips through checkpoints).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState<S: Scalar> {
    /// Network with the *current* (latest-step) parameters.
    pub network: Network<S>,
    pub opt: OptState<S>,
    /// Completed epochs.
    pub epoch: u32,
    pub seed: u64,
    pub rng: ChaCha8Rng,
    pub history: Vec<EpochRecord>,
    /// Parameters of the best validation epoch so far.
    pub best: Option<Vec<LayerParams<S>>>,
    pub best_f1: f64,
    pub best_epoch: u32,
    /// Epochs since the last validation improvement.
    pub stall: u32,
}

impl<S: Scalar> TrainState<S> {
    pub fn new(network: Network<S>, seed: u64) -> Self {
        let opt = OptState::zeros(&network.spec);
        TrainState {
            network,
            opt,
            epoch: 0,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            history: Vec::new(),
            best: None,
            best_f1: f64::NEG_INFINITY,
            best_epoch: 0,
            stall: 0,
        }
    }

    /// Network carrying the best-validation parameters (falls back to the
    /// current ones when no epoch has completed).
    pub fn best_network(&self) -> Network<S> {
        match &self.best {
            Some(params) => Network {
                spec: self.network.spec.clone(),
                params: params.clone(),
            },
            None => self.network.clone(),
        }
    }
}

/// Splits samples into an optimization slice and a validation tail.
pub fn val_split(samples: &[Sample], fraction: f64) -> Result<(&[Sample], &[Sample])> {
    if samples.len() < 2 {
        return Err(Error::DataInvalid(format!(
            "training needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    let val_count = ((samples.len() as f64 * fraction) as usize).clamp(1, samples.len() - 1);
    Ok(samples.split_at(samples.len() - val_count))
}

/// Classifies every sample and scores the predictions.
pub fn evaluate<S: Scalar>(network: &Network<S>, samples: &[Sample]) -> Result<Metrics> {
    if samples.is_empty() {
        return Err(Error::DataInvalid("cannot evaluate on zero samples".into()));
    }
    let mut predictions = Vec::with_capacity(samples.len());
    let mut truths = Vec::with_capacity(samples.len());
    for sample in samples {
        let out = network.forward(&sample.x.cast::<S>())?;
        predictions.push(predict_class(&out.probs));
        truths.push(sample.label as usize);
    }
    compute_metrics(&predictions, &truths)
}

/// Adds `addend`'s tensors and mixing coefficients into `acc` elementwise.
fn accumulate<S: Scalar>(acc: &mut [LayerParams<S>], addend: &[LayerParams<S>]) -> Result<()> {
    for (a, b) in acc.iter_mut().zip(addend) {
        for ((_, ta), (_, tb)) in a.tensors_mut().into_iter().zip(b.tensors()) {
            ta.add_assign(tb)?;
        }
        if let (Some(la), Some(lb)) = (a.lambda_mut(), b.lambda()) {
            *la += lb;
        }
    }
    Ok(())
}

/// Applies one optimizer step in place, then projects constrained
/// parameters back onto their feasible set (`λ` into `[0, 1]`; a full
/// attention layer's mixing diagonal back to exactly `1/T`).
///
/// Update arithmetic runs in 64-bit regardless of the stored width. The
/// caller is responsible for rejecting non-finite gradients first.
pub fn optimizer_step<S: Scalar>(
    network: &mut Network<S>,
    grads: &[LayerParams<S>],
    opt: &mut OptState<S>,
    config: &TrainConfig,
) {
    opt.t += 1;
    // Bias correction folded into the step size.
    let lr_t = match config.optimizer {
        Optimizer::Sgd => config.learning_rate,
        Optimizer::Adam => {
            config.learning_rate * (1.0 - config.beta2.powi(opt.t as i32)).sqrt()
                / (1.0 - config.beta1.powi(opt.t as i32))
        }
    };
    let (b1, b2, eps) = (config.beta1, config.beta2, config.adam_epsilon);
    let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| match config.optimizer {
        Optimizer::Sgd => *p -= lr_t * g,
        Optimizer::Adam => {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr_t * *m / (v.sqrt() + eps);
        }
    };
    for (i, params) in network.params.iter_mut().enumerate() {
        for ((((_, tensor), (_, g)), (_, m)), (_, v)) in params
            .tensors_mut()
            .into_iter()
            .zip(grads[i].tensors())
            .zip(opt.m[i].tensors_mut())
            .zip(opt.v[i].tensors_mut())
        {
            for ((pv, gv), (mv, vv)) in tensor
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
            {
                let (mut pf, mut mf, mut vf) = (pv.as_f64(), mv.as_f64(), vv.as_f64());
                update(&mut pf, gv.as_f64(), &mut mf, &mut vf);
                *pv = S::from_f64(pf);
                *mv = S::from_f64(mf);
                *vv = S::from_f64(vf);
            }
        }
        if let Some(lambda) = params.lambda_mut() {
            let g = grads[i].lambda().unwrap_or_else(S::zero).as_f64();
            let (mut pf, mut mf, mut vf) = (
                lambda.as_f64(),
                opt.m[i].lambda().unwrap_or_else(S::zero).as_f64(),
                opt.v[i].lambda().unwrap_or_else(S::zero).as_f64(),
            );
            update(&mut pf, g, &mut mf, &mut vf);
            *lambda = S::from_f64(pf);
            if let Some(m) = opt.m[i].lambda_mut() {
                *m = S::from_f64(mf);
            }
            if let Some(v) = opt.v[i].lambda_mut() {
                *v = S::from_f64(vf);
            }
        }
    }
    project_constraints(network);
}

/// Projects every constrained parameter onto its feasible set.
pub fn project_constraints<S: Scalar>(network: &mut Network<S>) {
    for (layer, params) in network.spec.layers.iter().zip(network.params.iter_mut()) {
        if let Some(lambda) = params.lambda_mut() {
            if *lambda < S::zero() {
                *lambda = S::zero();
            } else if *lambda > S::one() {
                *lambda = S::one();
            }
        }
        if let LayerParams::Tabl { w, .. } = params {
            let fixed = S::from_f64(1.0 / layer.t_in as f64);
            for j in 0..layer.t_in {
                *w.at_mut(j, j) = fixed;
            }
        }
    }
}

/// Runs (or continues) training until `max_epochs` or early stopping.
///
/// `class_counts` must be the counts over the full training split — they
/// parameterize the loss weights and are deliberately not recomputed from
/// the optimization slice after the validation tail is carved off.
pub fn train<S: Scalar>(
    state: &mut TrainState<S>,
    samples: &[Sample],
    class_counts: &[u64; CLASSES],
    config: &TrainConfig,
) -> Result<TrainReport> {
    config.validate()?;
    let (optimize, validate) = val_split(samples, config.val_fraction)?;
    let expected = state.network.spec.input_shape();
    if let Some(bad) = optimize.iter().chain(validate).find(|s| s.x.shape() != expected) {
        return Err(Error::SpecMismatch(format!(
            "network expects {}x{} inputs but a sample is {}x{}",
            expected.0,
            expected.1,
            bad.x.shape().0,
            bad.x.shape().1
        )));
    }
    let mut report = TrainReport::default();
    let mut indices: Vec<usize> = (0..optimize.len()).collect();
    while state.epoch < config.max_epochs {
        if state.stall >= config.patience {
            report.stopped_early = true;
            break;
        }
        let epoch = state.epoch + 1;
        if config.shuffle {
            // Reset to identity first so each epoch's order is a pure
            // function of the generator position — a resumed run then
            // shuffles exactly as the uninterrupted run would have.
            for (k, v) in indices.iter_mut().enumerate() {
                *v = k;
            }
            indices.shuffle(&mut state.rng);
        }
        let mut loss_sum = 0.0;
        for (batch_no, batch) in indices.chunks(config.batch_size).enumerate() {
            let mut probs_batch = Vec::with_capacity(batch.len());
            let mut classes = Vec::with_capacity(batch.len());
            let mut outputs = Vec::with_capacity(batch.len());
            for &idx in batch {
                let sample = &optimize[idx];
                let out = state.network.forward(&sample.x.cast::<S>())?;
                probs_batch.push(out.probs.clone());
                classes.push(sample.label as usize);
                outputs.push(out);
            }
            let (loss, dprobs) =
                weighted_entropy_loss(&probs_batch, &classes, class_counts, config.loss_epsilon)?;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: batch_no,
                    msg: format!("batch loss is {loss}"),
                });
            }
            loss_sum += loss * batch.len() as f64;
            let mut grads: Vec<LayerParams<S>> = state
                .network
                .spec
                .layers
                .iter()
                .map(LayerParams::zeros)
                .collect();
            for (out, dp) in outputs.iter().zip(&dprobs) {
                let dlogits = softmax_backward(&out.probs, dp);
                let (g, _) = state.network.backward(&out.caches, &dlogits)?;
                accumulate(&mut grads, &g)?;
            }
            check_finite(&grads).map_err(|msg| Error::Divergence {
                epoch,
                batch: batch_no,
                msg,
            })?;
            optimizer_step(&mut state.network, &grads, &mut state.opt, config);
            check_finite(&state.network.params).map_err(|msg| Error::Divergence {
                epoch,
                batch: batch_no,
                msg: format!("parameters after update: {msg}"),
            })?;
            report.steps += 1;
            report
                .violations
                .extend(state.network.audit_constraints());
        }
        let metrics = evaluate(&state.network, validate)?;
        state.epoch = epoch;
        state.history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / optimize.len() as f64,
            val_accuracy: metrics.accuracy,
            val_precision: metrics.macro_precision,
            val_recall: metrics.macro_recall,
            val_f1: metrics.macro_f1,
        });
        if metrics.macro_f1 > state.best_f1 {
            state.best_f1 = metrics.macro_f1;
            state.best_epoch = epoch;
            state.best = Some(state.network.params.clone());
            state.stall = 0;
        } else {
            state.stall += 1;
        }
        log::info!(
            "epoch {epoch}: train_loss {:.6e}, val_f1 {:.4}",
            state.history.last().unwrap().train_loss,
            metrics.macro_f1
        );
    }
    Ok(report)
}

/// Returns a message naming the first non-finite entry, if any.
fn check_finite<S: Scalar>(params: &[LayerParams<S>]) -> std::result::Result<(), String> {
    for (i, p) in params.iter().enumerate() {
        for (slot, tensor) in p.tensors() {
            if let Some((r, c)) = tensor.first_non_finite() {
                return Err(format!(
                    "non-finite value in layer {} slot {} at ({r}, {c})",
                    i + 1,
                    slot.id()
                ));
            }
        }
        if let Some(lambda) = p.lambda() {
            if !lambda.as_f64().is_finite() {
                return Err(format!("non-finite mixing coefficient in layer {}", i + 1));
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Checkpointing
// ---------------------------------------------------------------------------

const CHECKPOINT_MAGIC: &str = "lrtabl-checkpoint";
const CHECKPOINT_VERSION: &str = "v1";

/// Serializes the complete training state. The file is a short text header
/// (magic + version, spec digest, payload length + SHA-256) followed by a
/// little-endian binary payload; it is written atomically via a temporary
/// file in the same directory. Tensors are stored in single precision.
pub fn save_checkpoint<S: Scalar>(state: &TrainState<S>, path: &Path) -> Result<()> {
    let payload = encode_payload(state);
    let digest = hex_sha256(&payload);
    let mut file = Vec::with_capacity(payload.len() + 256);
    file.extend_from_slice(
        format!(
            "{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}\nspec {}\npayload {} sha256 {digest}\n\n",
            state.network.spec.digest(),
            payload.len()
        )
        .as_bytes(),
    );
    file.extend_from_slice(&payload);
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let tmp = match dir {
        Some(dir) => dir.join(format!(
            ".{}.tmp.{}",
            path.file_name().and_then(|n| n.to_str()).unwrap_or("checkpoint"),
            std::process::id()
        )),
        None => std::path::PathBuf::from(format!(".checkpoint.tmp.{}", std::process::id())),
    };
    std::fs::write(&tmp, &file)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Loads a checkpoint saved by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<TrainState<f32>> {
    if !path.exists() {
        return Err(Error::DataNotFound(path.to_path_buf()));
    }
    let bytes = std::fs::read(path)?;
    let corrupt = |msg: &str| Error::CheckpointCorrupt(msg.to_string());

    // Header: three text lines and a blank separator.
    let mut offset = 0;
    let mut lines = Vec::with_capacity(3);
    for _ in 0..3 {
        let end = bytes[offset..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| corrupt("truncated header"))?;
        lines.push(
            std::str::from_utf8(&bytes[offset..offset + end])
                .map_err(|_| corrupt("header is not UTF-8"))?,
        );
        offset += end + 1;
    }
    if bytes.get(offset) != Some(&b'\n') {
        return Err(corrupt("missing header separator"));
    }
    offset += 1;

    let mut magic = lines[0].split_whitespace();
    if magic.next() != Some(CHECKPOINT_MAGIC) {
        return Err(corrupt("not a checkpoint file"));
    }
    let version = magic.next().unwrap_or("");
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion {
            found: version.to_string(),
            expected: CHECKPOINT_VERSION.to_string(),
        });
    }
    let spec_digest = lines[1]
        .strip_prefix("spec ")
        .ok_or_else(|| corrupt("missing spec line"))?;
    let payload_line = lines[2]
        .strip_prefix("payload ")
        .ok_or_else(|| corrupt("missing payload line"))?;
    let (len_str, sha_part) = payload_line
        .split_once(" sha256 ")
        .ok_or_else(|| corrupt("malformed payload line"))?;
    let declared_len: usize = len_str.parse().map_err(|_| corrupt("bad payload length"))?;

    let payload = &bytes[offset..];
    if payload.len() != declared_len {
        return Err(corrupt("payload length does not match header"));
    }
    if hex_sha256(payload) != sha_part {
        return Err(corrupt("payload checksum mismatch"));
    }
    let state = decode_payload(payload)?;
    if state.network.spec.digest() != spec_digest {
        return Err(corrupt("spec digest does not match payload"));
    }
    Ok(state)
}

fn hex_sha256(bytes: &[u8]) -> String {
    let hash = Sha256::digest(bytes);
    let mut hex = String::with_capacity(64);
    for b in hash {
        hex.push_str(&format!("{b:02x}"));
    }
    hex
}

fn encode_payload<S: Scalar>(state: &TrainState<S>) -> Vec<u8> {
    let mut w = Vec::new();
    let canonical = state.network.spec.canonical();
    put_u32(&mut w, canonical.len() as u32);
    w.extend_from_slice(canonical.as_bytes());
    put_u32(&mut w, state.epoch);
    put_u64(&mut w, state.opt.t);
    put_u64(&mut w, state.seed);
    w.extend_from_slice(&state.rng.get_word_pos().to_le_bytes());
    put_u32(&mut w, state.history.len() as u32);
    for r in &state.history {
        put_u32(&mut w, r.epoch);
        for v in [
            r.train_loss,
            r.val_accuracy,
            r.val_precision,
            r.val_recall,
            r.val_f1,
        ] {
            w.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.extend_from_slice(&state.best_f1.to_le_bytes());
    put_u32(&mut w, state.best_epoch);
    put_u32(&mut w, state.stall);
    encode_params(&mut w, &state.network.params);
    encode_params(&mut w, &state.opt.m);
    encode_params(&mut w, &state.opt.v);
    match &state.best {
        Some(best) => {
            w.push(1);
            encode_params(&mut w, best);
        }
        None => w.push(0),
    }
    w
}

fn put_u32(w: &mut Vec<u8>, v: u32) {
    w.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(w: &mut Vec<u8>, v: u64) {
    w.extend_from_slice(&v.to_le_bytes());
}

fn encode_params<S: Scalar>(w: &mut Vec<u8>, params: &[LayerParams<S>]) {
    for p in params {
        for (_, tensor) in p.tensors() {
            put_u32(w, tensor.rows() as u32);
            put_u32(w, tensor.cols() as u32);
            for v in tensor.data() {
                w.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
            }
        }
        if let Some(lambda) = p.lambda() {
            w.extend_from_slice(&(lambda.as_f64() as f32).to_le_bytes());
        }
    }
}

struct PayloadReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> PayloadReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::CheckpointCorrupt("payload ends early".into()));
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn decode_params(r: &mut PayloadReader<'_>, spec: &NetworkSpec) -> Result<Vec<LayerParams<f32>>> {
    let mut out = Vec::with_capacity(spec.layers.len());
    for layer in &spec.layers {
        let mut params = LayerParams::<f32>::zeros(layer);
        for (slot, tensor) in params.tensors_mut() {
            let (rows, cols) = (r.u32()? as usize, r.u32()? as usize);
            if (rows, cols) != tensor.shape() {
                return Err(Error::CheckpointCorrupt(format!(
                    "slot {} has shape {rows}x{cols}, spec expects {}x{}",
                    slot.id(),
                    tensor.shape().0,
                    tensor.shape().1
                )));
            }
            for v in tensor.data_mut() {
                *v = r.f32()?;
            }
        }
        if let Some(lambda) = params.lambda_mut() {
            *lambda = r.f32()?;
        }
        out.push(params);
    }
    Ok(out)
}

fn decode_payload(payload: &[u8]) -> Result<TrainState<f32>> {
    let mut r = PayloadReader {
        buf: payload,
        pos: 0,
    };
    let canonical_len = r.u32()? as usize;
    let canonical = std::str::from_utf8(r.take(canonical_len)?)
        .map_err(|_| Error::CheckpointCorrupt("spec text is not UTF-8".into()))?;
    let spec = NetworkSpec::from_canonical(canonical)?;
    let epoch = r.u32()?;
    let opt_t = r.u64()?;
    let seed = r.u64()?;
    let word_pos = r.u128()?;
    let n_history = r.u32()? as usize;
    let mut history = Vec::with_capacity(n_history);
    for _ in 0..n_history {
        history.push(EpochRecord {
            epoch: r.u32()?,
            train_loss: r.f64()?,
            val_accuracy: r.f64()?,
            val_precision: r.f64()?,
            val_recall: r.f64()?,
            val_f1: r.f64()?,
        });
    }
    let best_f1 = r.f64()?;
    let best_epoch = r.u32()?;
    let stall = r.u32()?;
    let params = decode_params(&mut r, &spec)?;
    let m = decode_params(&mut r, &spec)?;
    let v = decode_params(&mut r, &spec)?;
    let best = match r.u8()? {
        0 => None,
        1 => Some(decode_params(&mut r, &spec)?),
        other => {
            return Err(Error::CheckpointCorrupt(format!(
                "bad best-parameters marker {other}"
            )))
        }
    };
    if r.pos != payload.len() {
        return Err(Error::CheckpointCorrupt(format!(
            "{} trailing bytes",
            payload.len() - r.pos
        )));
    }
    let network = Network::from_parts(spec, params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_word_pos(word_pos);
    Ok(TrainState {
        opt: OptState { t: opt_t, m, v },
        epoch,
        seed,
        rng,
        history,
        best,
        best_f1,
        best_epoch,
        stall,
        network,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_datasets, synthetic_lob, LayoutConfig};
    use crate::model::{StructureId, Variant};

    fn tiny_dataset() -> crate::data::Dataset {
        let layout = LayoutConfig {
            train_days: [1, 2],
            test_days: [3, 3],
            ..LayoutConfig::default()
        };
        let days = synthetic_lob(3, 120, 3.0, 7).unwrap();
        build_datasets(&days, &layout).unwrap()
    }

    fn tiny_config(epochs: u32) -> TrainConfig {
        TrainConfig {
            max_epochs: epochs,
            batch_size: 32,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn config_defaults_and_validation() {
        let config = TrainConfig::default();
        assert_eq!(config.optimizer, Optimizer::Adam);
        assert_eq!(config.learning_rate, 1e-3);
        assert_eq!(config.batch_size, 256);
        assert_eq!(config.max_epochs, 200);
        assert_eq!(config.patience, 20);
        config.validate().unwrap();
        assert!(TrainConfig {
            learning_rate: 0.0,
            ..config.clone()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            beta2: 1.0,
            ..config.clone()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            val_fraction: 1.0,
            ..config
        }
        .validate()
        .is_err());
    }

    #[test]
    fn val_split_takes_tail() {
        let dataset = tiny_dataset();
        let (opt, val) = val_split(&dataset.train, 0.1).unwrap();
        assert_eq!(opt.len() + val.len(), dataset.train.len());
        assert_eq!(val.len(), dataset.train.len() / 10);
        assert_eq!(&dataset.train[opt.len()..], val);
    }

    #[test]
    fn training_is_deterministic() {
        let dataset = tiny_dataset();
        let config = tiny_config(3);
        let run = || {
            let net = Network::<f32>::build(StructureId::A, Variant::Full, None, 11).unwrap();
            let mut state = TrainState::new(net, config.seed);
            train(&mut state, &dataset.train, &dataset.class_counts, &config).unwrap();
            state
        };
        let a = run();
        let b = run();
        assert_eq!(a.network.params, b.network.params);
        assert_eq!(a.history, b.history);
        assert_eq!(history_to_csv(&a.history), history_to_csv(&b.history));
        assert_eq!(a.history.len(), 3);
    }

    #[test]
    fn audit_stays_clean_and_constraints_hold() {
        let dataset = tiny_dataset();
        let config = tiny_config(4);
        let net = Network::<f32>::build(StructureId::A, Variant::Full, None, 3).unwrap();
        let mut state = TrainState::new(net, config.seed);
        let report = train(&mut state, &dataset.train, &dataset.class_counts, &config).unwrap();
        assert!(report.steps > 0);
        assert!(report.violations.is_empty(), "{:?}", report.violations);
        assert!(state.network.audit_constraints().is_empty());
    }

    #[test]
    fn sgd_reduces_training_loss() {
        let dataset = tiny_dataset();
        // Full-batch descent: with a small enough step, each epoch is one
        // plain gradient step and the loss must fall monotonically at first.
        let config = TrainConfig {
            optimizer: Optimizer::Sgd,
            learning_rate: 1e-8,
            max_epochs: 6,
            batch_size: 4096,
            ..TrainConfig::default()
        };
        let net = Network::<f32>::build(StructureId::A, Variant::Full, None, 5).unwrap();
        let mut state = TrainState::new(net, config.seed);
        train(&mut state, &dataset.train, &dataset.class_counts, &config).unwrap();
        let first = state.history.first().unwrap().train_loss;
        let last = state.history.last().unwrap().train_loss;
        assert!(
            last < first,
            "loss should decrease: first {first}, last {last}"
        );
    }

    #[test]
    fn early_stopping_respects_patience() {
        let dataset = tiny_dataset();
        // Zero learning rate: validation F1 never improves after epoch 1.
        let config = TrainConfig {
            learning_rate: 1e-30,
            patience: 2,
            max_epochs: 50,
            ..tiny_config(50)
        };
        let net = Network::<f32>::build(StructureId::A, Variant::Full, None, 5).unwrap();
        let mut state = TrainState::new(net, config.seed);
        let report = train(&mut state, &dataset.train, &dataset.class_counts, &config).unwrap();
        assert!(report.stopped_early);
        assert_eq!(state.epoch, 3, "1 best epoch + 2 stalled epochs");
    }

    #[test]
    fn history_csv_format() {
        let rows = vec![EpochRecord {
            epoch: 1,
            train_loss: 0.5,
            val_accuracy: 0.25,
            val_precision: 0.125,
            val_recall: 1.0,
            val_f1: 0.75,
        }];
        assert_eq!(
            history_to_csv(&rows),
            "epoch,train_loss,val_acc,val_p,val_r,val_f1\n1,0.5,0.25,0.125,1,0.75\n"
        );
    }

    #[test]
    fn checkpoint_round_trips_exactly() {
        let dataset = tiny_dataset();
        let config = tiny_config(2);
        let net = Network::<f32>::build(StructureId::A, Variant::Full, None, 9).unwrap();
        let mut state = TrainState::new(net, config.seed);
        train(&mut state, &dataset.train, &dataset.class_counts, &config).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.ckpt");
        save_checkpoint(&state, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded, state);
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let dataset = tiny_dataset();
        let full_config = tiny_config(6);
        let make_net = || Network::<f32>::build(StructureId::A, Variant::Full, None, 13).unwrap();

        let mut straight = TrainState::new(make_net(), full_config.seed);
        train(
            &mut straight,
            &dataset.train,
            &dataset.class_counts,
            &full_config,
        )
        .unwrap();

        let mut halted = TrainState::new(make_net(), full_config.seed);
        train(
            &mut halted,
            &dataset.train,
            &dataset.class_counts,
            &tiny_config(3),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("halfway.ckpt");
        save_checkpoint(&halted, &path).unwrap();

        let mut resumed = load_checkpoint(&path).unwrap();
        train(
            &mut resumed,
            &dataset.train,
            &dataset.class_counts,
            &full_config,
        )
        .unwrap();

        assert_eq!(resumed.network.params, straight.network.params);
        assert_eq!(resumed.history, straight.history);
        assert_eq!(resumed.opt, straight.opt);
        assert_eq!(resumed.rng, straight.rng);
    }

    #[test]
    fn checkpoint_rejects_corruption_and_bad_version() {
        let net = Network::<f32>::build(StructureId::A, Variant::Full, None, 1).unwrap();
        let state = TrainState::new(net, 1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        save_checkpoint(&state, &path).unwrap();

        // Flip one payload byte.
        let mut bytes = std::fs::read(&path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0xFF;
        let bad = dir.path().join("bad.ckpt");
        std::fs::write(&bad, &bytes).unwrap();
        let err = load_checkpoint(&bad).unwrap_err();
        assert_eq!(err.category(), "checkpoint_corrupt");

        // Rewrite the version token.
        let text = std::fs::read(&path).unwrap();
        let mut swapped = text.clone();
        let needle = b"checkpoint v1";
        let pos = swapped
            .windows(needle.len())
            .position(|w| w == needle)
            .unwrap();
        swapped[pos + needle.len() - 1] = b'9';
        std::fs::write(&bad, &swapped).unwrap();
        let err = load_checkpoint(&bad).unwrap_err();
        assert_eq!(err.category(), "checkpoint_version");
        assert_eq!(err.exit_code(), 3);

        assert_eq!(
            load_checkpoint(&dir.path().join("missing.ckpt"))
                .unwrap_err()
                .category(),
            "data_not_found"
        );
    }

    #[test]
    fn divergent_gradients_abort_with_exit_code_4() {
        let dataset = tiny_dataset();
        let config = TrainConfig {
            learning_rate: f64::MAX,
            max_epochs: 3,
            ..TrainConfig::default()
        };
        let net = Network::<f32>::build(StructureId::A, Variant::Full, None, 5).unwrap();
        let mut state = TrainState::new(net, config.seed);
        let err = train(&mut state, &dataset.train, &dataset.class_counts, &config).unwrap_err();
        assert_eq!(err.category(), "divergence");
        assert_eq!(err.exit_code(), 4);
    }
}
