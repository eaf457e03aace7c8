//! AdamW with decoupled weight decay.

use crate::error::{Error, Result};
use crate::model::TlVitParams;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            learning_rate: 1.5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.05,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(Error::Config(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        for (name, b) in [("adam_beta1", self.beta1), ("adam_beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return Err(Error::Config(format!(
                "adam_eps must be > 0, got {}",
                self.eps
            )));
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return Err(Error::Config(format!(
                "weight_decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// One AdamW update of a flat parameter buffer. `step` is the 1-based count
/// including this update. Decay, when enabled, uses the pre-update value.
#[allow(clippy::too_many_arguments)]
pub fn adamw_update<T: Scalar>(
    theta: &mut [T],
    grad: &[T],
    m: &mut [T],
    v: &mut [T],
    step: u64,
    config: &AdamWConfig,
    decay: bool,
) {
    let b1 = T::from_f64(config.beta1);
    let b2 = T::from_f64(config.beta2);
    let one = T::one();
    let c1 = T::from_f64(1.0 - config.beta1.powf(step as f64));
    let c2 = T::from_f64(1.0 - config.beta2.powf(step as f64));
    let lr = T::from_f64(config.learning_rate);
    let eps = T::from_f64(config.eps);
    let wd = T::from_f64(if decay { config.weight_decay } else { 0.0 });
    for i in 0..theta.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + (one - b1) * g;
        v[i] = b2 * v[i] + (one - b2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        theta[i] -= lr * (m_hat / (v_hat.sqrt() + eps) + wd * theta[i]);
    }
}

/// First and second moments for every parameter, plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamWState<T> {
    pub moments: Option<Moments<T>>,
    pub step: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Moments<T> {
    pub m: TlVitParams<Tensor<T>>,
    pub v: TlVitParams<Tensor<T>>,
}

impl<T: Scalar> Default for AdamWState<T> {
    fn default() -> Self {
        AdamWState {
            moments: None,
            step: 0,
        }
    }
}

impl<T: Scalar> AdamWState<T> {
    /// Zero moments shaped like `params`.
    pub fn for_params(params: &TlVitParams<Tensor<T>>) -> Self {
        let zeros = params.map(|_, _, t| Tensor::zeros(t.shape().to_vec()));
        AdamWState {
            moments: Some(Moments {
                m: zeros.clone(),
                v: zeros,
            }),
            step: 0,
        }
    }
}

/// Applies one optimizer step to every parameter. Weight decay touches only
/// weight matrices; biases, norm parameters and positional embeddings are
/// exempt.
pub fn adamw_step<T: Scalar>(
    params: &mut TlVitParams<Tensor<T>>,
    grads: &TlVitParams<Tensor<T>>,
    state: &mut AdamWState<T>,
    config: &AdamWConfig,
) -> Result<()> {
    let moments = state
        .moments
        .as_mut()
        .ok_or_else(|| Error::Contract("AdamW state is not initialised".into()))?;
    let mut grad_list = Vec::new();
    grads.visit(&mut |_, _, g| grad_list.push(g));
    let mut m_list = Vec::new();
    moments.m.visit_mut(&mut |_, _, t| m_list.push(t));
    let mut v_list = Vec::new();
    moments.v.visit_mut(&mut |_, _, t| v_list.push(t));
    let step = state.step + 1;
    let mut index = 0;
    let mut failure = None;
    params.visit_mut(&mut |name, kind, theta| {
        if failure.is_some() {
            return;
        }
        let (Some(g), Some(m)) = (grad_list.get(index), m_list.get_mut(index)) else {
            failure = Some(Error::Contract(format!("no gradient or moment for {name}")));
            return;
        };
        let v = &mut v_list[index];
        if g.shape() != theta.shape() || m.shape() != theta.shape() || v.shape() != theta.shape() {
            failure = Some(Error::TensorShape {
                name: name.to_string(),
                expected: theta.shape().to_vec(),
                found: g.shape().to_vec(),
            });
            return;
        }
        adamw_update(
            theta.data_mut(),
            g.data(),
            m.data_mut(),
            v.data_mut(),
            step,
            config,
            kind.decays(),
        );
        index += 1;
    });
    if let Some(e) = failure {
        return Err(e);
    }
    state.step = step;
    Ok(())
}
