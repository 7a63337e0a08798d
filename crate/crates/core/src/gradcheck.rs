//! Finite-difference gradient checking for layer stacks. Runs entirely in
//! `f64`; the loss head supplies both the scalar loss and its gradient with
//! respect to the stack output.

use crate::error::Result;
use crate::layers::{backward_stack, forward_stack, infer_stack, zero_grads_stack, Layer};
use crate::tensor::Tensor;

/// Loss head: maps the stack output to `(loss, d loss / d output)`.
pub type LossHead<'a> = &'a dyn Fn(&Tensor<f64>) -> (f64, Tensor<f64>);

/// Relative error with a floor on the denominator so that near-zero gradient
/// pairs do not blow up the ratio.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

/// Smallest |preactivation| feeding any ReLU in the stack (infinity when the
/// stack has none). Finite differences are invalid when this margin is within
/// a few eps of zero, so FD-based checks reject such draws.
pub fn min_relu_margin(layers: &[Layer<f64>], input: &Tensor<f64>) -> Result<f64> {
    use crate::kernels::ActivationKind;
    use crate::layers::LayerSpec;
    let mut x = input.clone();
    let mut margin = f64::INFINITY;
    for layer in layers {
        if matches!(layer.spec(), LayerSpec::Activation(ActivationKind::Relu)) {
            for &v in x.data() {
                margin = margin.min(v.abs());
            }
        }
        x = layer.infer(&x)?;
    }
    Ok(margin)
}

/// Compares analytic gradients of every parameter element and every input
/// element against central finite differences with step `eps`, returning the
/// worst relative error observed.
pub fn grad_check(
    layers: &mut [Layer<f64>],
    input: &Tensor<f64>,
    loss: LossHead<'_>,
    eps: f64,
) -> Result<f64> {
    // Analytic pass.
    zero_grads_stack(layers);
    let out = forward_stack(layers, input)?;
    let (_, grad_out) = loss(&out);
    let grad_input = backward_stack(layers, &grad_out)?;
    let analytic_params: Vec<Vec<Tensor<f64>>> = layers
        .iter()
        .map(|l| l.params().iter().map(|p| p.grad.clone()).collect())
        .collect();

    let eval = |layers: &[Layer<f64>]| -> Result<f64> {
        let out = infer_stack(layers, input)?;
        Ok(loss(&out).0)
    };

    let mut worst = 0.0f64;

    // Parameter elements.
    for li in 0..layers.len() {
        for pi in 0..layers[li].params().len() {
            for k in 0..layers[li].params()[pi].value.len() {
                let orig = layers[li].params()[pi].value.data()[k];
                layers[li].params_mut()[pi].value.data_mut()[k] = orig + eps;
                let up = eval(layers)?;
                layers[li].params_mut()[pi].value.data_mut()[k] = orig - eps;
                let down = eval(layers)?;
                layers[li].params_mut()[pi].value.data_mut()[k] = orig;
                let numeric = (up - down) / (2.0 * eps);
                worst = worst.max(relative_error(analytic_params[li][pi].data()[k], numeric));
            }
        }
    }

    // Input elements.
    let mut probe = input.clone();
    for k in 0..input.len() {
        let orig = input.data()[k];
        probe.data_mut()[k] = orig + eps;
        let up = loss(&infer_stack(layers, &probe)?).0;
        probe.data_mut()[k] = orig - eps;
        let down = loss(&infer_stack(layers, &probe)?).0;
        probe.data_mut()[k] = orig;
        let numeric = (up - down) / (2.0 * eps);
        worst = worst.max(relative_error(grad_input.data()[k], numeric));
    }

    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{ActivationKind, ConvGeometry};
    use crate::layers::LayerSpec;
    use crate::optimize::{bce_grad, bce_loss};
    use crate::testutil::rand_tensor;

    fn bce_head(target: Tensor<f64>) -> impl Fn(&Tensor<f64>) -> (f64, Tensor<f64>) {
        move |out| {
            (
                bce_loss(&target, out).unwrap(),
                bce_grad(&target, out).unwrap(),
            )
        }
    }

    #[test]
    fn single_dense_with_bce_head() {
        let mut rng = crate::testutil::rng(40);
        let mut stack = vec![
            Layer::new(LayerSpec::Dense { input_dim: 5, output_dim: 3 }, "d", 1),
            Layer::new(LayerSpec::Activation(ActivationKind::Sigmoid), "s", 2),
        ];
        let input = rand_tensor(&[2, 5], &mut rng);
        let target = Tensor::from_fn(&[2, 3], |_| {
            use rand::Rng;
            rng.gen_range(0.1..0.9)
        });
        let err = grad_check(&mut stack, &input, &bce_head(target), 1e-5).unwrap();
        assert!(err < 1e-6, "max relative error {err:.3e}");
    }

    #[test]
    fn parameterless_stack_checks_input_gradient_only() {
        let mut stack = vec![Layer::new(LayerSpec::Flatten, "f", 0)];
        let mut rng = crate::testutil::rng(41);
        let input = rand_tensor(&[1, 2, 2, 2], &mut rng);
        let target = Tensor::from_fn(&[1, 8], |_| {
            use rand::Rng;
            rng.gen_range(0.1..0.9)
        });
        // sigmoid squashes into the BCE domain
        stack.push(Layer::new(
            LayerSpec::Activation(ActivationKind::Sigmoid),
            "s",
            0,
        ));
        let err = grad_check(&mut stack, &input, &bce_head(target), 1e-5).unwrap();
        assert!(err < 1e-6, "max relative error {err:.3e}");
        assert!(stack.iter().all(|l| l.params().is_empty()));
    }

    #[test]
    fn reduced_encoder_passes_gradient_check() {
        // Table I chain at 1/8 width on a 16x16 frame.
        let specs = vec![
            LayerSpec::Conv2d(ConvGeometry::new(3, 3, 2, 1, 2).unwrap()),
            LayerSpec::Activation(ActivationKind::Relu),
            LayerSpec::Conv2d(ConvGeometry::new(3, 3, 2, 2, 4).unwrap()),
            LayerSpec::Activation(ActivationKind::Relu),
            LayerSpec::Conv2d(ConvGeometry::new(3, 3, 2, 4, 8).unwrap()),
            LayerSpec::Activation(ActivationKind::Relu),
            LayerSpec::Conv2d(ConvGeometry::new(3, 3, 2, 8, 16).unwrap()),
            LayerSpec::Activation(ActivationKind::Relu),
            LayerSpec::Flatten,
            LayerSpec::Dense { input_dim: 16, output_dim: 32 },
            LayerSpec::Activation(ActivationKind::Sigmoid),
        ];
        let mut stack: Vec<Layer<f64>> = specs
            .into_iter()
            .enumerate()
            .map(|(i, s)| Layer::new(s, format!("l{i}"), 100 + i as u64))
            .collect();
        let mut rng = crate::testutil::rng(42);
        let input = rand_tensor(&[1, 16, 16, 1], &mut rng);
        let target = Tensor::from_fn(&[1, 32], |_| {
            use rand::Rng;
            rng.gen_range(0.1..0.9)
        });
        let err = grad_check(&mut stack, &input, &bce_head(target), 1e-5).unwrap();
        assert!(err < 1e-5, "max relative error {err:.3e}");
    }
}
