//! Final regression layers: FC1 over the document vector with leaky-ReLU and
//! dropout, the historic score concatenated as one extra input, and FC2 down
//! to the scalar prediction. Loss is mean squared error.

use numcore::{DetRng, NodeId, ParamSet, Tape, Tensor};

use crate::error::{FetildaError, Result};

pub const PARAM_PREFIX: &str = "head.";

/// Head hyperparameters. `hidden` is the FC1 output width; FC2 always takes
/// `hidden + 1` inputs (textual features plus the historic score).
#[derive(Debug, Clone, Copy)]
pub struct HeadConfig {
    pub hidden: usize,
    pub dropout: f64,
    pub leaky_slope: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig { hidden: 600, dropout: 0.1, leaky_slope: 0.01 }
    }
}

pub fn init_params(dim: usize, cfg: &HeadConfig, rng: &mut DetRng, params: &mut ParamSet) {
    let std = 0.02;
    params.insert("head.fc1.w", rng.tensor_normal(&[dim, cfg.hidden], std));
    params.insert("head.fc1.b", Tensor::zeros(&[cfg.hidden]));
    params.insert("head.fc2.w", rng.tensor_normal(&[cfg.hidden + 1, 1], std));
    params.insert("head.fc2.b", Tensor::zeros(&[1]));
}

/// ŷ = FC2·(dropout(leaky_relu(FC1·d + b1)) ⊕ y_hist) + b2, as a scalar node.
pub fn head_forward_on_tape(
    tape: &mut Tape,
    params: &ParamSet,
    cfg: &HeadConfig,
    doc_vec: NodeId,
    y_hist: f64,
    train: bool,
    rng: &mut DetRng,
) -> Result<NodeId> {
    let w1 = tape.bind_param(params, "head.fc1.w")?;
    let b1 = tape.bind_param(params, "head.fc1.b")?;
    let u = tape.linear(doc_vec, w1, b1)?;
    let u = tape.leaky_relu(u, cfg.leaky_slope);
    let u = tape.dropout(u, cfg.dropout, train, rng)?;
    let hist = tape.leaf(Tensor::vector(&[y_hist]));
    let joined = tape.concat(&[u, hist], 0)?;
    let w2 = tape.bind_param(params, "head.fc2.w")?;
    let b2 = tape.bind_param(params, "head.fc2.b")?;
    let out = tape.linear(joined, w2, b2)?;
    tape.reshape(out, &[]).map_err(Into::into)
}

/// Deterministic evaluation-mode forward.
pub fn head_forward(
    params: &ParamSet,
    cfg: &HeadConfig,
    doc_vec: &Tensor,
    y_hist: f64,
) -> Result<f64> {
    let mut tape = Tape::new_eval();
    let doc = tape.leaf(doc_vec.clone());
    // Dropout is identity in eval mode; the RNG is never drawn from.
    let mut rng = DetRng::new(0, 0);
    let pred = head_forward_on_tape(&mut tape, params, cfg, doc, y_hist, false, &mut rng)?;
    Ok(tape.value(pred).scalar_value()?)
}

/// Mean squared error over paired slices.
pub fn mse(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.is_empty() || predictions.len() != targets.len() {
        return Err(FetildaError::Train(format!(
            "mse needs equal non-empty lengths, got {} vs {}",
            predictions.len(),
            targets.len()
        )));
    }
    let n = predictions.len() as f64;
    Ok(predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n)
}
