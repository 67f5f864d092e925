//! SGD and Adam parameter updates.

use std::collections::BTreeMap;

use crate::error::NumError;
use crate::params::ParamSet;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Method {
    /// Adam with β1=0.9, β2=0.999, ε=1e-8.
    pub fn adam_default() -> Self {
        Method::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Optimizer state: method, learning rate, per-parameter Adam moments and a
/// step counter.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub method: Method,
    pub learning_rate: f64,
    step: u64,
    moments: BTreeMap<String, (Tensor, Tensor)>,
}

impl Optimizer {
    pub fn new(method: Method, learning_rate: f64) -> Result<Self, NumError> {
        if learning_rate <= 0.0 {
            return Err(NumError::InvalidArgument {
                op: "optimizer",
                message: format!("learning rate {learning_rate} must be positive"),
            });
        }
        if let Method::Adam { beta1, beta2, .. } = method {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
                return Err(NumError::InvalidArgument {
                    op: "optimizer",
                    message: format!("adam betas ({beta1}, {beta2}) must lie in (0,1)"),
                });
            }
        }
        Ok(Optimizer { method, learning_rate, step: 0, moments: BTreeMap::new() })
    }

    pub fn sgd(learning_rate: f64) -> Result<Self, NumError> {
        Self::new(Method::Sgd, learning_rate)
    }

    pub fn adam(learning_rate: f64) -> Result<Self, NumError> {
        Self::new(Method::adam_default(), learning_rate)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Apply one update to every trainable parameter. A trainable parameter
    /// without an accumulated gradient is an error naming the parameter.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<(), NumError> {
        self.step += 1;
        let lr = self.learning_rate;
        let t = self.step as f64;
        // Collect names first: the moment map borrows self.
        let names: Vec<String> = params
            .iter()
            .filter(|(_, p)| p.trainable)
            .map(|(n, _)| n.clone())
            .collect();
        for name in names {
            let param = params.get_mut(&name).expect("name from iteration");
            let grad = param
                .grad
                .as_ref()
                .ok_or_else(|| NumError::MissingGradient { name: name.clone() })?
                .clone();
            if grad.shape() != param.value.shape() {
                return Err(NumError::ShapeMismatch {
                    op: "optimizer_step",
                    lhs: param.value.shape().to_vec(),
                    rhs: grad.shape().to_vec(),
                });
            }
            match self.method {
                Method::Sgd => {
                    let v = param.value.data_mut();
                    for (p, g) in v.iter_mut().zip(grad.data()) {
                        *p -= lr * g;
                    }
                }
                Method::Adam { beta1, beta2, eps } => {
                    let (m, v) = self.moments.entry(name.clone()).or_insert_with(|| {
                        (Tensor::zeros(grad.shape()), Tensor::zeros(grad.shape()))
                    });
                    let bc1 = 1.0 - beta1.powf(t);
                    let bc2 = 1.0 - beta2.powf(t);
                    let md = m.data_mut();
                    let vd = v.data_mut();
                    let pd = param.value.data_mut();
                    for i in 0..pd.len() {
                        let g = grad.data()[i];
                        md[i] = beta1 * md[i] + (1.0 - beta1) * g;
                        vd[i] = beta2 * vd[i] + (1.0 - beta2) * g * g;
                        let m_hat = md[i] / bc1;
                        let v_hat = vd[i] / bc2;
                        pd[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
