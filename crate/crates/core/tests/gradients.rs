//! Analytic gradients against central finite differences.

mod common;

use common::checks::{network_gradient_error, sample_indices, FLOOR};
use common::oracles::rel_err;
use onset_tte::dist::Family;
use onset_tte::predictor::{ModelConfig, Variant};
use onset_tte::tensor::{ActivationKind, LayerSpec, Mode, ParamStore, Sequential, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-4;
const TOL: f64 = 1e-3;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Checks `sum(y * r)` for a stack of layers against its analytic gradients
/// with respect to the input and every trainable parameter.
fn check_layers(specs: &[LayerSpec], input_shape: &[usize], mode: Mode, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::<f64>::new();
    let seq = Sequential::build(specs, "l", &mut store, &mut rng).unwrap();
    // non-trivial running statistics for inference-mode batchnorm
    for p in store.iter_mut() {
        if p.name.ends_with("running_mean") {
            p.value
                .data_mut()
                .iter_mut()
                .for_each(|v| *v = rng.gen_range(-0.5..0.5));
        } else if p.name.ends_with("running_var") {
            p.value.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(0.5..2.0));
        } else if p.name.ends_with("bias") || p.name.ends_with("shift") {
            p.value
                .data_mut()
                .iter_mut()
                .for_each(|v| *v = rng.gen_range(-0.3..0.3));
        }
    }
    let x = random(input_shape, &mut rng);
    let mask_seed = rng.gen::<u64>();
    let eval = |store: &ParamStore<f64>, x: &Tensor<f64>| -> (Tensor<f64>, ParamStore<f64>, Tape<f64>) {
        let mut s = store.clone();
        let mut tape = Tape::new();
        let mut r = ChaCha8Rng::seed_from_u64(mask_seed);
        let y = seq.forward(&mut s, x.clone(), mode, &mut r, &mut tape).unwrap();
        (y, s, tape)
    };
    let (y, mut s, mut tape) = eval(&store, &x);
    let weights = random(y.shape(), &mut rng);
    let objective = |y: &Tensor<f64>| y.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum::<f64>();
    s.zero_grads();
    let dx = seq.backward(&mut s, &mut tape, weights.clone()).unwrap();

    let name = format!("{specs:?}");
    for i in sample_indices(x.len(), 200, &mut rng) {
        let mut xp = x.clone();
        xp.data_mut()[i] += STEP;
        let mut xm = x.clone();
        xm.data_mut()[i] -= STEP;
        let fd = (objective(&eval(&store, &xp).0) - objective(&eval(&store, &xm).0)) / (2.0 * STEP);
        let e = rel_err(dx.data()[i], fd, FLOOR);
        assert!(e < TOL, "{name}: input {i}: analytic {} fd {fd} rel {e}", dx.data()[i]);
    }
    let names: Vec<String> = store.iter().filter(|p| p.trainable).map(|p| p.name.clone()).collect();
    for pname in names {
        let id = store.id(&pname).unwrap();
        let analytic = s.get(id).grad.clone();
        for i in sample_indices(analytic.len(), 100, &mut rng) {
            let mut plus = store.clone();
            plus.value_mut(id).data_mut()[i] += STEP;
            let mut minus = store.clone();
            minus.value_mut(id).data_mut()[i] -= STEP;
            let fd = (objective(&eval(&plus, &x).0) - objective(&eval(&minus, &x).0)) / (2.0 * STEP);
            let e = rel_err(analytic.data()[i], fd, FLOOR);
            assert!(
                e < TOL,
                "{name}: {pname}[{i}]: analytic {} fd {fd} rel {e}",
                analytic.data()[i]
            );
        }
    }
}

#[test]
fn conv2d() {
    check_layers(
        &[LayerSpec::Conv2d {
            kh: 3,
            kw: 2,
            in_channels: 3,
            out_channels: 4,
        }],
        &[2, 6, 5, 3],
        Mode::Infer,
        1,
    );
}

#[test]
fn maxpool() {
    check_layers(&[LayerSpec::MaxPool { ph: 1, pw: 3 }], &[2, 3, 8, 2], Mode::Infer, 2);
    check_layers(&[LayerSpec::MaxPool { ph: 2, pw: 2 }], &[2, 5, 5, 2], Mode::Infer, 3);
}

#[test]
fn dense() {
    check_layers(&[LayerSpec::Dense { inputs: 7, units: 5 }], &[3, 7], Mode::Infer, 4);
}

#[test]
fn batchnorm_inference_mode() {
    check_layers(&[LayerSpec::BatchNorm { features: 6 }], &[4, 3, 6], Mode::Infer, 5);
}

#[test]
fn batchnorm_batch_statistics() {
    check_layers(&[LayerSpec::BatchNorm { features: 5 }], &[6, 5], Mode::Train, 6);
    check_layers(&[LayerSpec::BatchNorm { features: 4 }], &[3, 2, 4], Mode::Train, 7);
}

#[test]
fn activations() {
    for (i, a) in [
        ActivationKind::Relu,
        ActivationKind::Tanh,
        ActivationKind::Sigmoid,
        ActivationKind::Softplus,
        ActivationKind::ScaledSigmoid { gamma: 5.0 },
    ]
    .into_iter()
    .enumerate()
    {
        check_layers(&[LayerSpec::Activation(a)], &[3, 8], Mode::Infer, 10 + i as u64);
    }
}

#[test]
fn dropout_with_fixed_mask() {
    check_layers(&[LayerSpec::Dropout { rate: 0.5 }], &[4, 9], Mode::Train, 20);
}

#[test]
fn flatten_then_dense() {
    check_layers(
        &[
            LayerSpec::Flatten,
            LayerSpec::Dense { inputs: 12, units: 3 },
            LayerSpec::Activation(ActivationKind::Tanh),
        ],
        &[2, 2, 3, 2],
        Mode::Infer,
        21,
    );
}

#[test]
fn proposed_network_end_to_end() {
    for family in [Family::LogLogistic, Family::Pareto] {
        let cfg = ModelConfig {
            family,
            dropout: 0.0,
            ..ModelConfig::default()
        };
        let e = network_gradient_error(&cfg, 12, 31);
        assert!(e < TOL, "{family}: worst relative error {e}");
    }
}

#[test]
fn baseline_network_end_to_end() {
    let cfg = ModelConfig {
        variant: Variant::Baseline,
        dropout: 0.0,
        ..ModelConfig::default()
    };
    let e = network_gradient_error(&cfg, 12, 32);
    assert!(e < TOL, "worst relative error {e}");
}
