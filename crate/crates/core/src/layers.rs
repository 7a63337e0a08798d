//! Stateful layer objects: a declarative spec per layer, parameter
//! initialization, and forward/backward dispatch onto the raw kernels with a
//! single-use forward cache.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kernels::{
    activation_forward, activation_vjp, conv2d_forward, conv2d_vjp, conv_transpose2d_forward,
    conv_transpose2d_vjp, dense_forward, dense_vjp, ActivationKind, ConvGeometry,
};
use crate::tensor::{cast, Scalar, Tensor};

/// Declarative description of one layer; fully determines the output shape
/// given an input shape.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LayerSpec {
    Conv2d(ConvGeometry),
    ConvTranspose2d(ConvGeometry),
    Dense { input_dim: usize, output_dim: usize },
    Activation(ActivationKind),
    Flatten,
    Reshape { height: usize, width: usize, channels: usize },
}

impl LayerSpec {
    /// Per-sample output shape (no batch axis) for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            LayerSpec::Conv2d(g) => {
                let [h, w, c]: [usize; 3] = input
                    .try_into()
                    .map_err(|_| Error::dimension("conv input rank", 3, input.len()))?;
                if c != g.in_channels {
                    return Err(Error::dimension("conv input channels", g.in_channels, c));
                }
                Ok(vec![g.out_size(h), g.out_size(w), g.out_channels])
            }
            LayerSpec::ConvTranspose2d(g) => {
                let [h, w, c]: [usize; 3] = input
                    .try_into()
                    .map_err(|_| Error::dimension("conv_transpose input rank", 3, input.len()))?;
                if c != g.in_channels {
                    return Err(Error::dimension(
                        "conv_transpose input channels",
                        g.in_channels,
                        c,
                    ));
                }
                Ok(vec![h * g.stride, w * g.stride, g.out_channels])
            }
            LayerSpec::Dense { input_dim, output_dim } => {
                if input != [*input_dim] {
                    return Err(Error::dimension(
                        "dense input",
                        format!("[{input_dim}]"),
                        format!("{input:?}"),
                    ));
                }
                Ok(vec![*output_dim])
            }
            LayerSpec::Activation(_) => Ok(input.to_vec()),
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Reshape { height, width, channels } => {
                let volume = height * width * channels;
                if input != [volume] {
                    return Err(Error::dimension(
                        "reshape input",
                        format!("[{volume}]"),
                        format!("{input:?}"),
                    ));
                }
                Ok(vec![*height, *width, *channels])
            }
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(
            self,
            LayerSpec::Conv2d(_) | LayerSpec::ConvTranspose2d(_) | LayerSpec::Dense { .. }
        )
    }

    /// Shapes of this layer's parameter tensors, named, in storage order.
    fn param_shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        match self {
            LayerSpec::Conv2d(g) => vec![
                ("kernel", vec![g.kernel_h, g.kernel_w, g.in_channels, g.out_channels]),
                ("bias", vec![g.out_channels]),
            ],
            LayerSpec::ConvTranspose2d(g) => vec![
                ("kernel", vec![g.kernel_h, g.kernel_w, g.out_channels, g.in_channels]),
                ("bias", vec![g.out_channels]),
            ],
            LayerSpec::Dense { input_dim, output_dim } => vec![
                ("weights", vec![*input_dim, *output_dim]),
                ("bias", vec![*output_dim]),
            ],
            _ => vec![],
        }
    }

    /// Glorot-uniform weights and zero biases, deterministic for a given seed.
    pub fn init_params<T: Scalar>(&self, name_prefix: &str, seed: u64) -> Vec<Param<T>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.param_shapes()
            .into_iter()
            .map(|(local, shape)| {
                let value = if local == "bias" {
                    Tensor::zeros(&shape)
                } else {
                    let limit = glorot_limit(&shape);
                    Tensor::from_fn(&shape, |_| {
                        cast::<T>((rng.gen::<f64>() * 2.0 - 1.0) * limit)
                    })
                };
                let grad = Tensor::zeros(&shape);
                Param {
                    name: format!("{name_prefix}.{local}"),
                    value,
                    grad,
                }
            })
            .collect()
    }
}

/// Glorot-uniform sampling limit `sqrt(6 / (fan_in + fan_out))` for a weight
/// tensor shape whose last two axes are (in, out) and whose leading axes form
/// the receptive field.
pub fn glorot_limit(shape: &[usize]) -> f64 {
    let receptive: usize = shape[..shape.len() - 2].iter().product();
    let fan_in = receptive * shape[shape.len() - 2];
    let fan_out = receptive * shape[shape.len() - 1];
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// A named learnable tensor and its accumulated gradient.
#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

/// A layer instance: spec, parameters and the single-use forward cache.
///
/// A forward/backward pair must run on one thread; distinct instances are
/// independent. Gradients accumulate across backward calls until
/// [`Layer::zero_grads`].
#[derive(Clone, Debug)]
pub struct Layer<T> {
    spec: LayerSpec,
    name: String,
    params: Vec<Param<T>>,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Layer<T> {
    pub fn new(spec: LayerSpec, name: impl Into<String>, seed: u64) -> Self {
        let name = name.into();
        let params = spec.init_params(&name, seed);
        Layer {
            spec,
            name,
            params,
            cache: None,
        }
    }

    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    /// Forward pass for inference: no cache is written, `self` stays shared.
    pub fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        self.apply(input)
    }

    /// Forward pass for training: remembers the input for [`Layer::backward`].
    pub fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let out = self.apply(input)?;
        self.cache = Some(input.clone());
        Ok(out)
    }

    fn apply(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        match &self.spec {
            LayerSpec::Conv2d(g) => {
                conv2d_forward(input, &self.params[0].value, &self.params[1].value, g)
            }
            LayerSpec::ConvTranspose2d(g) => {
                conv_transpose2d_forward(input, &self.params[0].value, &self.params[1].value, g)
            }
            LayerSpec::Dense { .. } => {
                dense_forward(input, &self.params[0].value, &self.params[1].value)
            }
            LayerSpec::Activation(kind) => activation_forward(input, *kind),
            LayerSpec::Flatten => {
                let batch = input.shape()[0];
                let rest: usize = input.shape()[1..].iter().product();
                input.reshaped(&[batch, rest])
            }
            LayerSpec::Reshape { height, width, channels } => {
                let batch = input.shape()[0];
                input.reshaped(&[batch, *height, *width, *channels])
            }
        }
    }

    /// Backward pass: consumes the cached forward input, accumulates
    /// parameter gradients and returns the input gradient.
    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let input = self.cache.take().ok_or_else(|| {
            Error::State(format!("backward on layer '{}' without forward", self.name))
        })?;
        match &self.spec {
            LayerSpec::Conv2d(g) => {
                let (gi, gk, gb) = conv2d_vjp(&input, &self.params[0].value, g, grad_out)?;
                accumulate(&mut self.params[0].grad, &gk);
                accumulate(&mut self.params[1].grad, &gb);
                Ok(gi)
            }
            LayerSpec::ConvTranspose2d(g) => {
                let (gi, gk, gb) =
                    conv_transpose2d_vjp(&input, &self.params[0].value, g, grad_out)?;
                accumulate(&mut self.params[0].grad, &gk);
                accumulate(&mut self.params[1].grad, &gb);
                Ok(gi)
            }
            LayerSpec::Dense { .. } => {
                let (gi, gw, gb) = dense_vjp(&input, &self.params[0].value, grad_out)?;
                accumulate(&mut self.params[0].grad, &gw);
                accumulate(&mut self.params[1].grad, &gb);
                Ok(gi)
            }
            LayerSpec::Activation(kind) => activation_vjp(&input, *kind, grad_out),
            LayerSpec::Flatten | LayerSpec::Reshape { .. } => grad_out.reshaped(input.shape()),
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad = Tensor::zeros(p.value.shape());
        }
    }
}

fn accumulate<T: Scalar>(into: &mut Tensor<T>, delta: &Tensor<T>) {
    debug_assert_eq!(into.shape(), delta.shape());
    for (a, &d) in into.data_mut().iter_mut().zip(delta.data()) {
        *a += d;
    }
}

/// Training-mode forward through a sequential stack.
pub fn forward_stack<T: Scalar>(layers: &mut [Layer<T>], input: &Tensor<T>) -> Result<Tensor<T>> {
    let mut x = input.clone();
    for layer in layers {
        x = layer.forward(&x)?;
    }
    Ok(x)
}

/// Inference forward through a sequential stack (no caches touched).
pub fn infer_stack<T: Scalar>(layers: &[Layer<T>], input: &Tensor<T>) -> Result<Tensor<T>> {
    let mut x = input.clone();
    for layer in layers {
        x = layer.infer(&x)?;
    }
    Ok(x)
}

/// Backward through a sequential stack, consuming each layer's cache.
pub fn backward_stack<T: Scalar>(layers: &mut [Layer<T>], grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let mut g = grad_out.clone();
    for layer in layers.iter_mut().rev() {
        g = layer.backward(&g)?;
    }
    Ok(g)
}

pub fn zero_grads_stack<T: Scalar>(layers: &mut [Layer<T>]) {
    for layer in layers {
        layer.zero_grads();
    }
}

/// Per-sample shape after each spec, starting from `input` (input included
/// as the first entry).
pub fn shape_chain(specs: &[LayerSpec], input: &[usize]) -> Result<Vec<Vec<usize>>> {
    let mut chain = vec![input.to_vec()];
    for spec in specs {
        let next = spec.output_shape(chain.last().unwrap())?;
        chain.push(next);
    }
    Ok(chain)
}
