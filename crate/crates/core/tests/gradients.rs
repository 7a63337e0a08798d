//! Gradient checks over randomized layer stacks and the reduced-scale
//! autoencoder, all in f64 against central finite differences.

use caedet_core::gradcheck::grad_check;
use caedet_core::kernels::{ActivationKind, ConvGeometry};
use caedet_core::layers::{Layer, LayerSpec};
use caedet_core::model::{Autoencoder, ModelConfig};
use caedet_core::optimize::{bce_grad, bce_loss};
use caedet_core::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Weighted-sum loss head: smooth in the output, exact gradient.
fn sum_head(weights: Tensor<f64>) -> impl Fn(&Tensor<f64>) -> (f64, Tensor<f64>) {
    move |out| {
        let loss = out
            .data()
            .iter()
            .zip(weights.data())
            .map(|(&o, &w)| o * w)
            .sum();
        (loss, weights.clone())
    }
}

/// Builds a random stack of depth <= 6 whose shapes chain from `start`.
/// Sigmoid is used for in-stack activations; the ReLU kink is exercised by
/// dedicated tests with inputs bounded away from zero.
fn random_stack(seed: u64) -> (Vec<Layer<f64>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shape: Vec<usize> = vec![
        2 * rng.gen_range(2..5),
        2 * rng.gen_range(2..5),
        rng.gen_range(1..3),
    ];
    let start = shape.clone();
    let depth = rng.gen_range(2..=6);
    let mut specs = Vec::new();
    for _ in 0..depth {
        let spec = if shape.len() == 3 {
            match rng.gen_range(0..4) {
                0 => LayerSpec::Conv2d(
                    ConvGeometry::new(3, 3, rng.gen_range(1..=2), shape[2], rng.gen_range(1..4))
                        .unwrap(),
                ),
                1 => LayerSpec::ConvTranspose2d(
                    ConvGeometry::new(3, 3, rng.gen_range(1..=2), shape[2], rng.gen_range(1..4))
                        .unwrap(),
                ),
                2 => LayerSpec::Activation(ActivationKind::Sigmoid),
                _ => LayerSpec::Flatten,
            }
        } else {
            match rng.gen_range(0..3) {
                0 => LayerSpec::Dense {
                    input_dim: shape[0],
                    output_dim: rng.gen_range(2..7),
                },
                1 => LayerSpec::Activation(ActivationKind::Sigmoid),
                _ => LayerSpec::Reshape {
                    height: 1,
                    width: 1,
                    channels: shape[0],
                },
            }
        };
        shape = spec.output_shape(&shape).unwrap();
        specs.push(spec);
        // keep spatial growth bounded
        if shape.len() == 3 && (shape[0] > 24 || shape[1] > 24) {
            specs.push(LayerSpec::Flatten);
            shape = vec![shape.iter().product()];
        }
    }
    let layers = specs
        .into_iter()
        .enumerate()
        .map(|(i, s)| Layer::new(s, format!("l{i}"), seed.wrapping_mul(31).wrapping_add(i as u64)))
        .collect();
    (layers, start)
}

#[test]
fn randomized_stacks_pass_gradient_check() {
    for seed in 0..20u64 {
        let (mut stack, start) = random_stack(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let input = rand_tensor(&[1, start[0], start[1], start[2]], &mut rng);
        let out_shape = {
            let mut s = vec![1];
            s.extend(
                caedet_core::layers::shape_chain(
                    &stack.iter().map(|l| l.spec().clone()).collect::<Vec<_>>(),
                    &start,
                )
                .unwrap()
                .last()
                .unwrap()
                .clone(),
            );
            s
        };
        let weights = rand_tensor(&out_shape, &mut rng);
        let err = grad_check(&mut stack, &input, &sum_head(weights), 1e-5).unwrap();
        assert!(err < 1e-5, "seed {seed}: max relative error {err:.3e}");
    }
}

#[test]
fn relu_stack_away_from_kink_passes_gradient_check() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + seed);
        let mut stack = vec![
            Layer::new(
                LayerSpec::Dense { input_dim: 6, output_dim: 5 },
                "d",
                seed,
            ),
            Layer::new(LayerSpec::Activation(ActivationKind::Relu), "r", seed),
        ];
        let input = rand_tensor(&[2, 6], &mut rng);
        // reject draws whose preactivations sit near the kink
        let pre = caedet_core::layers::infer_stack(&stack[..1], &input).unwrap();
        if pre.data().iter().any(|x| x.abs() < 1e-3) {
            continue;
        }
        let weights = rand_tensor(&[2, 5], &mut rng);
        let err = grad_check(&mut stack, &input, &sum_head(weights), 1e-5).unwrap();
        assert!(err < 1e-5, "seed {seed}: max relative error {err:.3e}");
    }
}

/// Zero-initialized biases make conv outputs over all-zero ReLU windows sit
/// exactly on the next kink; random biases restore a generic position.
fn randomize_biases(stack: &mut [Layer<f64>], rng: &mut ChaCha8Rng) {
    for layer in stack {
        for p in layer.params_mut() {
            if p.name.ends_with("bias") {
                p.value = Tensor::from_fn(p.value.shape(), |_| rng.gen_range(-0.1..0.1));
            }
        }
    }
}

#[test]
fn scale_8_autoencoder_passes_gradient_check() {
    let mut checked = 0;
    for seed in 0..40u64 {
        let config = ModelConfig {
            input_height: 16,
            input_width: 16,
            scale_factor: 8,
            seed,
            ..ModelConfig::default()
        };
        let mut stack = Autoencoder::<f64>::new(config).unwrap().into_layers();
        let mut rng = ChaCha8Rng::seed_from_u64(3000 + seed);
        randomize_biases(&mut stack, &mut rng);
        let input = Tensor::from_fn(&[1, 16, 16, 1], |_| rng.gen_range(0.05..0.95));
        // finite differences are meaningless across a ReLU kink
        if caedet_core::gradcheck::min_relu_margin(&stack, &input).unwrap() < 2e-4 {
            continue;
        }
        let target = input.clone();
        let head = move |out: &Tensor<f64>| {
            (
                bce_loss(&target, out).unwrap(),
                bce_grad(&target, out).unwrap(),
            )
        };
        let err = grad_check(&mut stack, &input, &head, 1e-5).unwrap();
        assert!(err < 1e-5, "seed {seed}: max relative error {err:.3e}");
        checked += 1;
        if checked == 3 {
            return;
        }
    }
    panic!("no margin-safe draws found in 40 seeds");
}
