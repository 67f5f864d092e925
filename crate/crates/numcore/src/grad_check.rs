//! Gradient verification against central finite differences.
//!
//! The finite-difference side only ever calls the forward pass, so it stays
//! independent of the backward implementation it is checking.

use std::collections::BTreeMap;

use crate::error::NumError;
use crate::params::ParamSet;
use crate::tape::{NodeId, Tape};

/// Builds a scalar loss node from the current parameter values. The closure
/// must be deterministic (no dropout, fixed inputs).
pub trait LossFn {
    fn loss(&self, params: &ParamSet, tape: &mut Tape) -> Result<NodeId, NumError>;
}

impl<F> LossFn for F
where
    F: Fn(&ParamSet, &mut Tape) -> Result<NodeId, NumError>,
{
    fn loss(&self, params: &ParamSet, tape: &mut Tape) -> Result<NodeId, NumError> {
        self(params, tape)
    }
}

/// Per-parameter maximum relative error of tape gradients vs central finite
/// differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub per_param: BTreeMap<String, f64>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.per_param.values().all(|&e| e < self.tolerance)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.per_param.values().cloned().fold(0.0, f64::max)
    }

    /// Parameters exceeding the tolerance, worst first.
    pub fn failures(&self) -> Vec<(&str, f64)> {
        let mut v: Vec<(&str, f64)> = self
            .per_param
            .iter()
            .filter(|(_, &e)| e >= self.tolerance)
            .map(|(n, &e)| (n.as_str(), e))
            .collect();
        v.sort_by(|a, b| b.1.total_cmp(&a.1));
        v
    }
}

fn eval_loss(f: &impl LossFn, params: &ParamSet) -> Result<f64, NumError> {
    let mut tape = Tape::new_eval();
    let loss = f.loss(params, &mut tape)?;
    tape.value(loss).scalar_value()
}

/// Compare tape gradients of every trainable parameter against central
/// finite differences with step `h`.
pub fn grad_check(
    params: &ParamSet,
    f: &impl LossFn,
    h: f64,
    tolerance: f64,
) -> Result<GradCheckReport, NumError> {
    // Analytic gradients.
    let mut work = params.clone();
    work.zero_grads();
    let mut tape = Tape::new();
    let loss = f.loss(&work, &mut tape)?;
    tape.backward(loss)?;
    tape.accumulate_param_grads(&mut work)?;

    let names: Vec<String> = work
        .iter()
        .filter(|(_, p)| p.trainable)
        .map(|(n, _)| n.clone())
        .collect();

    let mut per_param = BTreeMap::new();
    for name in names {
        let analytic = work
            .get(&name)
            .and_then(|p| p.grad.clone())
            .ok_or_else(|| NumError::MissingGradient { name: name.clone() })?;
        let n = analytic.numel();
        let mut worst = 0.0f64;
        for i in 0..n {
            let mut perturbed = params.clone();
            let original = perturbed.get(&name).unwrap().value.data()[i];
            perturbed.get_mut(&name).unwrap().value.data_mut()[i] = original + h;
            let plus = eval_loss(f, &perturbed)?;
            perturbed.get_mut(&name).unwrap().value.data_mut()[i] = original - h;
            let minus = eval_loss(f, &perturbed)?;
            let fd = (plus - minus) / (2.0 * h);
            let ga = analytic.data()[i];
            let denom = ga.abs().max(fd.abs()).max(1e-6);
            worst = worst.max((ga - fd).abs() / denom);
        }
        per_param.insert(name, worst);
    }
    Ok(GradCheckReport { per_param, tolerance })
}
