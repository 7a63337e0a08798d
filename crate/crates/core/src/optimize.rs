//! Training objective and optimizer: binary cross-entropy with its analytic
//! gradient, the Adam update rule, and the binarized pixel-accuracy metric
//! logged alongside the loss.

use crate::error::{Error, Result};
use crate::tensor::{cast, expect_same_shape, Scalar, Tensor};

/// Predictions are clamped to `[CLAMP, 1 - CLAMP]` inside the loss and its
/// gradient so that log terms stay finite.
pub const PREDICTION_CLAMP: f64 = 1e-7;

/// Mean binary cross-entropy over every element of the batch:
/// `-(1/N) * sum(y*ln(p) + (1-y)*ln(1-p))` with `N` the total element count.
///
/// Targets must lie in `[0, 1]`; predictions are clamped internally. The
/// accumulation runs in `f64` regardless of the tensor scalar type.
pub fn bce_loss<T: Scalar>(target: &Tensor<T>, prediction: &Tensor<T>) -> Result<f64> {
    expect_same_shape("prediction", prediction, target)?;
    target.check_finite("bce target")?;
    prediction.check_finite("bce prediction")?;
    let mut sum = 0.0;
    for (idx, (&y, &p)) in target.data().iter().zip(prediction.data()).enumerate() {
        let y = y.to_f64().unwrap();
        if !(0.0..=1.0).contains(&y) {
            return Err(Error::Domain(format!(
                "bce target {y} at flat index {idx} is outside [0, 1]"
            )));
        }
        let p = p
            .to_f64()
            .unwrap()
            .clamp(PREDICTION_CLAMP, 1.0 - PREDICTION_CLAMP);
        sum += y * p.ln() + (1.0 - y) * (1.0 - p).ln();
    }
    Ok(-sum / target.len() as f64)
}

/// Gradient of [`bce_loss`] with respect to the prediction:
/// `(1/N) * (p - y) / (p * (1 - p))` elementwise, with the same clamping.
pub fn bce_grad<T: Scalar>(target: &Tensor<T>, prediction: &Tensor<T>) -> Result<Tensor<T>> {
    expect_same_shape("prediction", prediction, target)?;
    target.check_finite("bce target")?;
    prediction.check_finite("bce prediction")?;
    let n = target.len() as f64;
    let mut out = Tensor::zeros(target.shape());
    for (idx, ((g, &y), &p)) in out
        .data_mut()
        .iter_mut()
        .zip(target.data())
        .zip(prediction.data())
        .enumerate()
    {
        let y = y.to_f64().unwrap();
        if !(0.0..=1.0).contains(&y) {
            return Err(Error::Domain(format!(
                "bce target {y} at flat index {idx} is outside [0, 1]"
            )));
        }
        let p = p
            .to_f64()
            .unwrap()
            .clamp(PREDICTION_CLAMP, 1.0 - PREDICTION_CLAMP);
        *g = cast((p - y) / (p * (1.0 - p)) / n);
    }
    Ok(out)
}

/// Fraction of elements whose binarizations (threshold 0.5, half rounds up)
/// agree between target and prediction.
pub fn pixel_accuracy<T: Scalar>(target: &Tensor<T>, prediction: &Tensor<T>) -> Result<f64> {
    expect_same_shape("prediction", prediction, target)?;
    let half = cast::<T>(0.5);
    let matches = target
        .data()
        .iter()
        .zip(prediction.data())
        .filter(|(&y, &p)| (y >= half) == (p >= half))
        .count();
    Ok(matches as f64 / target.len() as f64)
}

/// Loss and accuracy over one batch or dataset pass.
#[derive(Clone, Copy, Debug)]
pub struct LossReport {
    /// Mean BCE over all elements.
    pub loss: f64,
    /// Binarized pixel accuracy in [0, 1].
    pub pixel_accuracy: f64,
    /// Number of frames the report covers.
    pub batch_size: usize,
}

/// Adam hyperparameters. Defaults follow the optimizer's published values.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must be in [0, 1), got {b}")));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// One Adam update on a single parameter tensor.
///
/// `t` is the already-incremented step counter (>= 1):
/// `m <- b1*m + (1-b1)*g`, `v <- b2*v + (1-b2)*g^2`, then the bias-corrected
/// `m_hat = m/(1-b1^t)`, `v_hat = v/(1-b2^t)` drive
/// `p <- p - lr * m_hat / (sqrt(v_hat) + eps)`.
pub fn adam_step<T: Scalar>(
    param: &mut Tensor<T>,
    grad: &Tensor<T>,
    m: &mut Tensor<T>,
    v: &mut Tensor<T>,
    t: u64,
    config: &AdamConfig,
) -> Result<()> {
    expect_same_shape("grad", grad, param)?;
    expect_same_shape("m", m, param)?;
    expect_same_shape("v", v, param)?;
    if t == 0 {
        return Err(Error::State("adam_step requires t >= 1".into()));
    }
    grad.check_finite("adam grad")?;
    let b1 = cast::<T>(config.beta1);
    let b2 = cast::<T>(config.beta2);
    let lr = cast::<T>(config.learning_rate);
    let eps = cast::<T>(config.epsilon);
    let one = T::one();
    let t_i32 = t.min(i32::MAX as u64) as i32;
    let bc1 = one - b1.powi(t_i32);
    let bc2 = one - b2.powi(t_i32);

    for ((p, &g), (mv, vv)) in param
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
    {
        *mv = b1 * *mv + (one - b1) * g;
        *vv = b2 * *vv + (one - b2) * g * g;
        let m_hat = *mv / bc1;
        let v_hat = *vv / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Adam state for a list of parameter tensors, updated in a fixed order.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    config: AdamConfig,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    t: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(Adam {
            config,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        })
    }

    /// Rebuilds an optimizer from checkpointed state.
    pub fn from_state(config: AdamConfig, m: Vec<Tensor<T>>, v: Vec<Tensor<T>>, t: u64) -> Result<Self> {
        config.validate()?;
        if m.len() != v.len() {
            return Err(Error::Config(format!(
                "optimizer state mismatch: {} m tensors vs {} v tensors",
                m.len(),
                v.len()
            )));
        }
        Ok(Adam { config, m, v, t })
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn moments(&self) -> (&[Tensor<T>], &[Tensor<T>]) {
        (&self.m, &self.v)
    }

    /// Applies one update to every `(param, grad)` pair, in order. Moment
    /// tensors are created lazily on the first call.
    pub fn step(&mut self, params: &mut [(&mut Tensor<T>, &Tensor<T>)]) -> Result<()> {
        if self.m.is_empty() {
            self.m = params.iter().map(|(p, _)| Tensor::zeros(p.shape())).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() {
            return Err(Error::Config(format!(
                "optimizer tracks {} tensors but was given {}",
                self.m.len(),
                params.len()
            )));
        }
        self.t += 1;
        for (i, (param, grad)) in params.iter_mut().enumerate() {
            adam_step(param, grad, &mut self.m[i], &mut self.v[i], self.t, &self.config)?;
        }
        Ok(())
    }
}
