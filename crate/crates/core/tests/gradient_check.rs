//! Gradient verification against 64-bit central finite differences.
//!
//! Layer-level: for every layer kind at (D=4, T=5, D'=3, T'=2, K=2), every
//! trainable scalar's analytic gradient — and the input gradient — must
//! match the finite-difference estimate to a relative error below 1e-5.
//! Network-level: the same check through softmax and the weighted loss for
//! structure A (full and rank-2), at 1e-4.

use lrtabl_core::layers::{LayerKind, LayerParams, LayerSpec, Slot};
use lrtabl_core::model::{
    softmax_backward, weighted_entropy_loss, Network, StructureId, Variant,
};
use lrtabl_core::tensor::{Activation, Matrix2D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
const LAYER_TOL: f64 = 1e-5;
const NETWORK_TOL: f64 = 1e-4;

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix2D<f64> {
    let mut m = Matrix2D::zeros(rows, cols);
    for v in m.data_mut() {
        *v = rng.gen_range(-1.0..=1.0);
    }
    m
}

fn test_spec(kind: LayerKind, enforce_diag: bool) -> LayerSpec {
    let rank = if kind.is_lowrank() { Some(2) } else { None };
    LayerSpec::new(kind, 4, 5, 3, 2, rank, Activation::Relu)
        .unwrap()
        .with_enforce_diag(enforce_diag)
}

/// Probe loss: a fixed random linear functional of the output, so the exact
/// output adjoint is the probe matrix itself.
fn probe_loss(y: &Matrix2D<f64>, probe: &Matrix2D<f64>) -> f64 {
    y.data()
        .iter()
        .zip(probe.data())
        .map(|(a, b)| a * b)
        .sum()
}

/// Runs the layer-level check for one spec; returns the worst relative
/// error observed across all parameters and inputs.
fn check_layer(spec: &LayerSpec, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = LayerParams::<f64>::init(spec, seed);
    let x = random_matrix(&mut rng, spec.d_in, spec.t_in);
    let probe = random_matrix(&mut rng, spec.d_out, spec.t_out);

    let (y, cache) = spec.forward(&params, &x).unwrap();
    // Keep every pre-activation comfortably away from the relu kink so the
    // central difference stays valid.
    let min_pre = cache
        .z
        .data()
        .iter()
        .fold(f64::INFINITY, |acc, &v| acc.min(v.abs()));
    assert!(
        min_pre > 1e-3,
        "seed {seed} puts a pre-activation at {min_pre:.2e}; pick another seed"
    );
    let _ = y;
    let (dx, grads) = spec.backward(&params, &cache, &probe).unwrap();

    let mut worst: f64 = 0.0;
    let tensor_count = params.tensors().len();
    for t in 0..tensor_count {
        let (slot, _) = params.tensors()[t];
        let (rows, cols) = params.tensors()[t].1.shape();
        for e in 0..rows * cols {
            // A full attention layer's mixing diagonal is constrained, not
            // trained: the analytic gradient is defined as zero there, so
            // perturbation is meaningless.
            if slot == Slot::W && e / cols == e % cols {
                continue;
            }
            let numeric = {
                let mut measure = |delta: f64| -> f64 {
                    let original = params.tensors()[t].1.data()[e];
                    params.tensors_mut()[t].1.data_mut()[e] = original + delta;
                    let (y, _) = spec.forward(&params, &x).unwrap();
                    params.tensors_mut()[t].1.data_mut()[e] = original;
                    probe_loss(&y, &probe)
                };
                (measure(STEP) - measure(-STEP)) / (2.0 * STEP)
            };
            let analytic = grads.tensors()[t].1.data()[e];
            worst = worst.max(rel_err(analytic, numeric));
        }
    }
    if params.lambda().is_some() {
        let numeric = {
            let mut measure = |delta: f64| -> f64 {
                let original = *params.lambda_mut().unwrap();
                *params.lambda_mut().unwrap() = original + delta;
                let (y, _) = spec.forward(&params, &x).unwrap();
                *params.lambda_mut().unwrap() = original;
                probe_loss(&y, &probe)
            };
            (measure(STEP) - measure(-STEP)) / (2.0 * STEP)
        };
        worst = worst.max(rel_err(grads.lambda().unwrap(), numeric));
    }

    // Input gradient.
    let mut x = x;
    for e in 0..spec.d_in * spec.t_in {
        let numeric = {
            let mut measure = |delta: f64| -> f64 {
                let original = x.data()[e];
                x.data_mut()[e] = original + delta;
                let (y, _) = spec.forward(&params, &x).unwrap();
                x.data_mut()[e] = original;
                probe_loss(&y, &probe)
            };
            (measure(STEP) - measure(-STEP)) / (2.0 * STEP)
        };
        worst = worst.max(rel_err(dx.data()[e], numeric));
    }
    worst
}

#[test]
fn bilinear_layer_gradients_match_finite_differences() {
    let worst = check_layer(&test_spec(LayerKind::Bl, true), 101);
    assert!(worst < LAYER_TOL, "worst relative error {worst:.3e}");
}

#[test]
fn attention_layer_gradients_match_finite_differences() {
    let worst = check_layer(&test_spec(LayerKind::Tabl, true), 102);
    assert!(worst < LAYER_TOL, "worst relative error {worst:.3e}");
}

#[test]
fn lowrank_bilinear_gradients_match_finite_differences() {
    let worst = check_layer(&test_spec(LayerKind::LrBl, true), 103);
    assert!(worst < LAYER_TOL, "worst relative error {worst:.3e}");
}

#[test]
fn lowrank_attention_gradients_match_finite_differences() {
    let worst = check_layer(&test_spec(LayerKind::LrTabl, true), 104);
    assert!(worst < LAYER_TOL, "worst relative error {worst:.3e}");
}

#[test]
fn lowrank_attention_without_diag_correction_also_matches() {
    let worst = check_layer(&test_spec(LayerKind::LrTabl, false), 105);
    assert!(worst < LAYER_TOL, "worst relative error {worst:.3e}");
}

/// Batch loss of a network on fixed samples, for finite differences.
fn batch_loss(net: &Network<f64>, xs: &[Matrix2D<f64>], labels: &[usize]) -> f64 {
    let probs: Vec<Vec<f64>> = xs
        .iter()
        .map(|x| net.forward(x).unwrap().probs)
        .collect();
    weighted_entropy_loss(&probs, labels, &[3, 4, 5], 1e6)
        .unwrap()
        .0
}

/// Analytic batch-loss gradients for every layer.
fn batch_grads(
    net: &Network<f64>,
    xs: &[Matrix2D<f64>],
    labels: &[usize],
) -> Vec<LayerParams<f64>> {
    let outputs: Vec<_> = xs.iter().map(|x| net.forward(x).unwrap()).collect();
    let probs: Vec<Vec<f64>> = outputs.iter().map(|o| o.probs.clone()).collect();
    let (_, dprobs) = weighted_entropy_loss(&probs, labels, &[3, 4, 5], 1e6).unwrap();
    let mut total: Vec<LayerParams<f64>> =
        net.spec.layers.iter().map(LayerParams::zeros).collect();
    for (out, dp) in outputs.iter().zip(&dprobs) {
        let dlogits = softmax_backward(&out.probs, dp);
        let (grads, _) = net.backward(&out.caches, &dlogits).unwrap();
        for (acc, g) in total.iter_mut().zip(&grads) {
            for ((_, ta), (_, tg)) in acc.tensors_mut().into_iter().zip(g.tensors()) {
                ta.add_assign(tg).unwrap();
            }
            if let (Some(la), Some(lg)) = (acc.lambda_mut(), g.lambda()) {
                *la += lg;
            }
        }
    }
    total
}

fn check_network(structure: StructureId, variant: Variant, rank: Option<usize>, seed: u64) -> f64 {
    let mut net = Network::<f64>::build(structure, variant, rank, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    let (d, t) = net.spec.input_shape();
    let xs: Vec<Matrix2D<f64>> = (0..3).map(|_| random_matrix(&mut rng, d, t)).collect();
    let labels = vec![0usize, 1, 2];
    let grads = batch_grads(&net, &xs, &labels);

    let mut worst: f64 = 0.0;
    for i in 0..net.spec.layers.len() {
        let tensor_count = net.params[i].tensors().len();
        for ti in 0..tensor_count {
            let (slot, tensor) = &net.params[i].tensors()[ti];
            let (slot, cols) = (*slot, tensor.cols());
            let len = tensor.rows() * cols;
            for e in 0..len {
                if slot == Slot::W && e / cols == e % cols {
                    continue;
                }
                let numeric = {
                    let mut measure = |delta: f64| -> f64 {
                        let original = net.params[i].tensors()[ti].1.data()[e];
                        net.params[i].tensors_mut()[ti].1.data_mut()[e] = original + delta;
                        let loss = batch_loss(&net, &xs, &labels);
                        net.params[i].tensors_mut()[ti].1.data_mut()[e] = original;
                        loss
                    };
                    (measure(STEP) - measure(-STEP)) / (2.0 * STEP)
                };
                let analytic = grads[i].tensors()[ti].1.data()[e];
                worst = worst.max(rel_err(analytic, numeric));
            }
        }
        if net.params[i].lambda().is_some() {
            let numeric = {
                let mut measure = |delta: f64| -> f64 {
                    let original = *net.params[i].lambda_mut().unwrap();
                    *net.params[i].lambda_mut().unwrap() = original + delta;
                    let loss = batch_loss(&net, &xs, &labels);
                    *net.params[i].lambda_mut().unwrap() = original;
                    loss
                };
                (measure(STEP) - measure(-STEP)) / (2.0 * STEP)
            };
            worst = worst.max(rel_err(grads[i].lambda().unwrap(), numeric));
        }
    }
    worst
}

#[test]
fn full_network_gradients_match_through_the_loss() {
    let worst = check_network(StructureId::A, Variant::Full, None, 210);
    assert!(worst < NETWORK_TOL, "worst relative error {worst:.3e}");
}

#[test]
fn lowrank_network_gradients_match_through_the_loss() {
    let worst = check_network(StructureId::A, Variant::LowRank, Some(2), 211);
    assert!(worst < NETWORK_TOL, "worst relative error {worst:.3e}");
}
