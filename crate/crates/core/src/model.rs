//! Encoder/decoder builders and the composed autoencoder.
//!
//! The default configuration materializes the 256x256x1 architecture: four
//! stride-2 convolutions widening 16 -> 32 -> 64 -> 128 into a flattened
//! 32768-vector and a sigmoid bottleneck of 32 units, mirrored by the
//! decoder through four transposed convolutions back to 256x256x1 with a
//! sigmoid output. `scale_factor` divides every channel width so reduced
//! variants train on a CPU in seconds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{ActivationKind, ConvGeometry};
use crate::layers::{
    backward_stack, forward_stack, infer_stack, shape_chain, zero_grads_stack, Layer, LayerSpec,
};
use crate::tensor::{Scalar, Tensor};

/// Channel widths of the four encoder convolutions at scale 1.
const BASE_CHANNELS: [usize; 4] = [16, 32, 64, 128];

/// Structural and reproducibility configuration of an autoencoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_height: usize,
    pub input_width: usize,
    pub bottleneck_dim: usize,
    pub scale_factor: usize,
    pub kernel_size: usize,
    pub seed: u64,
    pub epochs_completed: u32,
    /// Full run configuration of the training command that produced a
    /// checkpoint (free-form; not interpreted by the library).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<serde_json::Value>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_height: 256,
            input_width: 256,
            bottleneck_dim: 32,
            scale_factor: 1,
            kernel_size: 3,
            seed: 42,
            epochs_completed: 0,
            run: None,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_height % 16 != 0 || self.input_width % 16 != 0 {
            return Err(Error::Config(format!(
                "input {}x{} must be divisible by 16 (four stride-2 stages)",
                self.input_height, self.input_width
            )));
        }
        if self.scale_factor == 0 || BASE_CHANNELS.iter().any(|c| c % self.scale_factor != 0) {
            return Err(Error::Config(format!(
                "scale_factor {} must divide all channel widths {:?}",
                self.scale_factor, BASE_CHANNELS
            )));
        }
        if self.bottleneck_dim == 0 {
            return Err(Error::Config("bottleneck_dim must be >= 1".into()));
        }
        if self.kernel_size == 0 {
            return Err(Error::Config("kernel_size must be >= 1".into()));
        }
        Ok(())
    }

    pub fn channels(&self) -> [usize; 4] {
        BASE_CHANNELS.map(|c| c / self.scale_factor)
    }

    /// Spatial size (height, width) after the four stride-2 stages.
    pub fn bottleneck_spatial(&self) -> (usize, usize) {
        (self.input_height / 16, self.input_width / 16)
    }

    /// Width of the flattened tensor feeding the bottleneck dense layer.
    pub fn flatten_dim(&self) -> usize {
        let (h, w) = self.bottleneck_spatial();
        h * w * self.channels()[3]
    }

    /// True when two configurations describe the same network structure
    /// (training metadata is ignored).
    pub fn same_structure(&self, other: &ModelConfig) -> bool {
        self.input_height == other.input_height
            && self.input_width == other.input_width
            && self.bottleneck_dim == other.bottleneck_dim
            && self.scale_factor == other.scale_factor
            && self.kernel_size == other.kernel_size
    }
}

/// Layer specs of the frame encoder: four stride-2 convolutions with ReLU,
/// then Flatten and a sigmoid Dense bottleneck.
pub fn encoder_specs(config: &ModelConfig) -> Result<Vec<LayerSpec>> {
    config.validate()?;
    let k = config.kernel_size;
    let ch = config.channels();
    let mut specs = Vec::new();
    let mut cin = 1;
    for &cout in &ch {
        specs.push(LayerSpec::Conv2d(ConvGeometry::new(k, k, 2, cin, cout)?));
        specs.push(LayerSpec::Activation(ActivationKind::Relu));
        cin = cout;
    }
    specs.push(LayerSpec::Flatten);
    specs.push(LayerSpec::Dense {
        input_dim: config.flatten_dim(),
        output_dim: config.bottleneck_dim,
    });
    specs.push(LayerSpec::Activation(ActivationKind::Sigmoid));
    Ok(specs)
}

/// Layer specs of the frame decoder: Dense + ReLU back to the flattened
/// width, Reshape, then four stride-2 transposed convolutions narrowing to a
/// single sigmoid channel.
pub fn decoder_specs(config: &ModelConfig) -> Result<Vec<LayerSpec>> {
    config.validate()?;
    let k = config.kernel_size;
    let ch = config.channels();
    let (bh, bw) = config.bottleneck_spatial();
    let mut specs = vec![
        LayerSpec::Dense {
            input_dim: config.bottleneck_dim,
            output_dim: config.flatten_dim(),
        },
        LayerSpec::Activation(ActivationKind::Relu),
        LayerSpec::Reshape {
            height: bh,
            width: bw,
            channels: ch[3],
        },
    ];
    let mut cin = ch[3];
    for (i, &cout) in [ch[2], ch[1], ch[0], 1].iter().enumerate() {
        specs.push(LayerSpec::ConvTranspose2d(ConvGeometry::new(
            k, k, 2, cin, cout,
        )?));
        let last = i == 3;
        specs.push(LayerSpec::Activation(if last {
            ActivationKind::Sigmoid
        } else {
            ActivationKind::Relu
        }));
        cin = cout;
    }
    Ok(specs)
}

/// The composed encoder/decoder network.
#[derive(Clone, Debug)]
pub struct Autoencoder<T> {
    config: ModelConfig,
    encoder: Vec<Layer<T>>,
    decoder: Vec<Layer<T>>,
}

impl<T: Scalar> Autoencoder<T> {
    /// Builds and initializes the model; parameters are deterministic in
    /// `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        let enc = encoder_specs(&config)?;
        let dec = decoder_specs(&config)?;
        let build = |specs: Vec<LayerSpec>, prefix: &str, salt: u64| -> Vec<Layer<T>> {
            specs
                .into_iter()
                .enumerate()
                .map(|(i, spec)| {
                    let seed = config
                        .seed
                        .wrapping_add(salt)
                        .wrapping_add((i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                    Layer::new(spec, format!("{prefix}{i}"), seed)
                })
                .collect()
        };
        Ok(Autoencoder {
            encoder: build(enc, "enc", 0x0123_4567),
            decoder: build(dec, "dec", 0x89AB_CDEF),
            config,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn set_epochs_completed(&mut self, epochs: u32) {
        self.config.epochs_completed = epochs;
    }

    pub fn encoder(&self) -> &[Layer<T>] {
        &self.encoder
    }

    pub fn decoder(&self) -> &[Layer<T>] {
        &self.decoder
    }

    fn expect_batch(&self, batch: &Tensor<T>) -> Result<()> {
        let want = [
            self.config.input_height,
            self.config.input_width,
            1usize,
        ];
        if batch.rank() != 4 || batch.shape()[1..] != want {
            return Err(Error::dimension(
                "model input",
                format!("[N, {}, {}, 1]", want[0], want[1]),
                format!("{:?}", batch.shape()),
            ));
        }
        Ok(())
    }

    /// Bottleneck codes for a `[N, H, W, 1]` batch; values lie in (0, 1).
    pub fn encode(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        self.expect_batch(batch)?;
        infer_stack(&self.encoder, batch)
    }

    /// Reconstructions from bottleneck codes.
    pub fn decode(&self, codes: &Tensor<T>) -> Result<Tensor<T>> {
        infer_stack(&self.decoder, codes)
    }

    /// Full reconstruction pass (inference; no caches are written).
    pub fn forward(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        self.decode(&self.encode(batch)?)
    }

    /// Forward pass that caches every layer input for [`Autoencoder::backward`].
    pub fn forward_training(&mut self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        self.expect_batch(batch)?;
        let code = forward_stack(&mut self.encoder, batch)?;
        forward_stack(&mut self.decoder, &code)
    }

    /// Backpropagates a reconstruction gradient, accumulating parameter
    /// gradients; returns the gradient with respect to the input batch.
    pub fn backward(&mut self, grad_recon: &Tensor<T>) -> Result<Tensor<T>> {
        let grad_code = backward_stack(&mut self.decoder, grad_recon)?;
        backward_stack(&mut self.encoder, &grad_code)
    }

    pub fn zero_grads(&mut self) {
        zero_grads_stack(&mut self.encoder);
        zero_grads_stack(&mut self.decoder);
    }

    /// All parameters in build order (encoder first).
    pub fn params(&self) -> Vec<&crate::layers::Param<T>> {
        self.encoder
            .iter()
            .chain(&self.decoder)
            .flat_map(|l| l.params().iter())
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut crate::layers::Param<T>> {
        self.encoder
            .iter_mut()
            .chain(&mut self.decoder)
            .flat_map(|l| l.params_mut().iter_mut())
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    /// Consumes the model into one sequential stack, encoder then decoder.
    pub fn into_layers(self) -> Vec<Layer<T>> {
        let mut layers = self.encoder;
        layers.extend(self.decoder);
        layers
    }

    /// Per-sample shape after every layer, encoder then decoder, starting at
    /// the input shape.
    pub fn shape_chain(&self) -> Result<Vec<Vec<usize>>> {
        let enc: Vec<LayerSpec> = self.encoder.iter().map(|l| l.spec().clone()).collect();
        let dec: Vec<LayerSpec> = self.decoder.iter().map(|l| l.spec().clone()).collect();
        let input = vec![self.config.input_height, self.config.input_width, 1];
        let mut chain = shape_chain(&enc, &input)?;
        let tail = shape_chain(&dec, chain.last().unwrap())?;
        chain.extend(tail.into_iter().skip(1));
        Ok(chain)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::Rng;

    #[test]
    fn default_encoder_matches_table_chain() {
        let config = ModelConfig::default();
        let specs = encoder_specs(&config).unwrap();
        let chain = shape_chain(&specs, &[256, 256, 1]).unwrap();
        let want: Vec<Vec<usize>> = vec![
            vec![256, 256, 1],
            vec![128, 128, 16],
            vec![128, 128, 16],
            vec![64, 64, 32],
            vec![64, 64, 32],
            vec![32, 32, 64],
            vec![32, 32, 64],
            vec![16, 16, 128],
            vec![16, 16, 128],
            vec![32768],
            vec![32],
            vec![32],
        ];
        assert_eq!(chain, want);
        // bottleneck is sigmoid-activated
        assert_eq!(
            specs.last(),
            Some(&LayerSpec::Activation(ActivationKind::Sigmoid))
        );
    }

    #[test]
    fn default_decoder_matches_table_chain() {
        let config = ModelConfig::default();
        let specs = decoder_specs(&config).unwrap();
        let chain = shape_chain(&specs, &[32]).unwrap();
        let want: Vec<Vec<usize>> = vec![
            vec![32],
            vec![32768],
            vec![32768],
            vec![16, 16, 128],
            vec![32, 32, 64],
            vec![32, 32, 64],
            vec![64, 64, 32],
            vec![64, 64, 32],
            vec![128, 128, 16],
            vec![128, 128, 16],
            vec![256, 256, 1],
            vec![256, 256, 1],
        ];
        assert_eq!(chain, want);
        assert_eq!(
            specs.last(),
            Some(&LayerSpec::Activation(ActivationKind::Sigmoid))
        );
    }

    #[test]
    fn scale_8_on_64x64_frames() {
        let config = ModelConfig {
            input_height: 64,
            input_width: 64,
            scale_factor: 8,
            ..ModelConfig::default()
        };
        assert_eq!(config.channels(), [2, 4, 8, 16]);
        assert_eq!(config.flatten_dim(), 4 * 4 * 16);
        let specs = encoder_specs(&config).unwrap();
        let chain = shape_chain(&specs, &[64, 64, 1]).unwrap();
        assert_eq!(chain[chain.len() - 3], vec![256]);
        assert_eq!(chain.last().unwrap(), &vec![32]);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad_size = ModelConfig {
            input_height: 100,
            ..ModelConfig::default()
        };
        assert!(matches!(bad_size.validate(), Err(Error::Config(_))));
        let bad_scale = ModelConfig {
            scale_factor: 3,
            ..ModelConfig::default()
        };
        assert!(matches!(bad_scale.validate(), Err(Error::Config(_))));
    }

    fn small_config() -> ModelConfig {
        ModelConfig {
            input_height: 16,
            input_width: 16,
            scale_factor: 8,
            seed: 9,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn roundtrip_shape_law() {
        let model = Autoencoder::<f32>::new(small_config()).unwrap();
        let mut rng = crate::testutil::rng(50);
        let x = Tensor::from_fn(&[3, 16, 16, 1], |_| rng.gen_range(0.0f64..1.0) as f32);
        let y = model.forward(&x).unwrap();
        assert_eq!(y.shape(), x.shape());
        assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
        let code = model.encode(&x).unwrap();
        assert_eq!(code.shape(), &[3, 32]);
        assert!(code.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn forward_on_zeros_is_finite_and_bounded() {
        let model = Autoencoder::<f32>::new(small_config()).unwrap();
        let x = Tensor::zeros(&[1, 16, 16, 1]);
        let y = model.forward(&x).unwrap();
        y.check_finite("reconstruction").unwrap();
        assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn wrong_input_shape_is_a_dimension_error() {
        let model = Autoencoder::<f32>::new(small_config()).unwrap();
        let x = Tensor::zeros(&[1, 8, 8, 1]);
        assert!(matches!(model.forward(&x), Err(Error::Dimension { .. })));
    }

    /// Per-row parameter arithmetic, written directly from the architecture
    /// tables and independent of the layer machinery.
    fn table_param_count(config: &ModelConfig) -> usize {
        let k = config.kernel_size * config.kernel_size;
        let ch = config.channels();
        let flat = config.flatten_dim();
        let b = config.bottleneck_dim;
        let conv = |cin: usize, cout: usize| k * cin * cout + cout;
        let dense = |din: usize, dout: usize| din * dout + dout;
        // encoder rows
        let enc = conv(1, ch[0]) + conv(ch[0], ch[1]) + conv(ch[1], ch[2]) + conv(ch[2], ch[3])
            + dense(flat, b);
        // decoder rows
        let dec = dense(b, flat)
            + conv(ch[3], ch[2])
            + conv(ch[2], ch[1])
            + conv(ch[1], ch[0])
            + conv(ch[0], 1);
        enc + dec
    }

    #[test]
    fn param_count_matches_table_arithmetic() {
        for config in [ModelConfig::default(), small_config()] {
            let model = Autoencoder::<f32>::new(config.clone()).unwrap();
            assert_eq!(model.param_count(), table_param_count(&config));
        }
        // the Table I dense row alone
        let dense_params = 32768 * 32 + 32;
        assert_eq!(dense_params, 1_048_608);
    }

    #[test]
    fn same_seed_builds_identical_models() {
        let a = Autoencoder::<f32>::new(small_config()).unwrap();
        let b = Autoencoder::<f32>::new(small_config()).unwrap();
        for (pa, pb) in a.params().iter().zip(b.params()) {
            assert_eq!(pa.name, pb.name);
            assert_eq!(pa.value, pb.value);
        }
        let c = Autoencoder::<f32>::new(ModelConfig {
            seed: 10,
            ..small_config()
        })
        .unwrap();
        assert!(a
            .params()
            .iter()
            .zip(c.params())
            .any(|(x, y)| x.value != y.value));
    }

    #[test]
    fn full_scale_forward_shape() {
        let model = Autoencoder::<f32>::new(ModelConfig::default()).unwrap();
        let x = Tensor::zeros(&[4, 256, 256, 1]);
        let y = model.forward(&x).unwrap();
        assert_eq!(y.shape(), &[4, 256, 256, 1]);
    }
}
