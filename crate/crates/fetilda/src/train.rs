//! MSE training with the multi-rate protocol: train once per learning rate,
//! track validation MSE per epoch, keep the best (epoch, parameters) per
//! rate, and return the global best across rates (ties favor the lower
//! rate). A rate whose loss turns non-finite is aborted and logged; the
//! remaining rates continue.

use std::fmt::Write as _;
use std::time::Instant;

use numcore::{DetRng, Optimizer, ParamSet, Tape, Tensor};

use crate::baselines::{self, FittedRegressor, RegressorKind, RegressorSpec};
use crate::error::{FetildaError, Result};
use crate::head;
use crate::model::{self, streams, DocExample, PipelineConfig};

/// Training protocol configuration.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub learning_rates: Vec<f64>,
    pub max_epochs: usize,
    pub batch_size: usize,
    /// Stop a rate after this many epochs without validation improvement.
    pub patience: usize,
    pub seed: u64,
}

impl TrainConfig {
    /// Eight rates spanning 0.0006–0.0013 inclusive.
    pub fn default_learning_rates() -> Vec<f64> {
        (0..8).map(|i| 6e-4 + i as f64 * 1e-4).collect()
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rates: Self::default_learning_rates(),
            max_epochs: 50,
            batch_size: 4,
            patience: 10,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TrainLogRow {
    pub rate: f64,
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    pub wall_ms: u128,
}

#[derive(Debug, Clone)]
pub struct DivergenceEvent {
    pub rate: f64,
    pub epoch: usize,
}

#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub rows: Vec<TrainLogRow>,
    pub events: Vec<DivergenceEvent>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("rate,epoch,train_mse,val_mse,wall_ms\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.rate, r.epoch, r.train_mse, r.val_mse, r.wall_ms
            );
        }
        out
    }

    pub fn rows_for_rate(&self, rate: f64) -> impl Iterator<Item = &TrainLogRow> {
        self.rows.iter().filter(move |r| r.rate == rate)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ParamSet,
    pub best_rate: f64,
    pub best_epoch: usize,
    pub best_val_mse: f64,
    pub log: TrainLog,
}

/// Run the full protocol over `train`/`val`. `include_encoder` is false when
/// chunk vectors are precomputed (frozen-LM mode).
pub fn train(
    cfg: &PipelineConfig,
    tcfg: &TrainConfig,
    train_docs: &[DocExample],
    val_docs: &[DocExample],
    include_encoder: bool,
) -> Result<TrainOutcome> {
    if train_docs.is_empty() || val_docs.is_empty() {
        return Err(FetildaError::Train(format!(
            "training needs non-empty splits, got {} train / {} val",
            train_docs.len(),
            val_docs.len()
        )));
    }
    if tcfg.learning_rates.is_empty() || tcfg.learning_rates.iter().any(|&r| r <= 0.0) {
        return Err(FetildaError::Train("learning rates must be positive".into()));
    }
    if tcfg.max_epochs == 0 || tcfg.batch_size == 0 {
        return Err(FetildaError::Train("max_epochs and batch_size must be >= 1".into()));
    }

    let mut log = TrainLog::default();
    // (val_mse, rate, epoch, params); min by (val, rate) for deterministic ties.
    let mut best: Option<(f64, f64, usize, ParamSet)> = None;

    for (rate_idx, &rate) in tcfg.learning_rates.iter().enumerate() {
        let started = Instant::now();
        let mut params = model::init_params(cfg, tcfg.seed, include_encoder)?;
        let mut optimizer = Optimizer::adam(rate).map_err(FetildaError::Num)?;
        let mut shuffle_rng = DetRng::new(tcfg.seed, streams::SHUFFLE_BASE + rate_idx as u64);
        let mut dropout_rng = DetRng::new(tcfg.seed, streams::DROPOUT_BASE + rate_idx as u64);

        let mut rate_best: Option<(f64, usize, ParamSet)> = None;
        let mut since_best = 0usize;
        'epochs: for epoch in 0..tcfg.max_epochs {
            let mut order: Vec<usize> = (0..train_docs.len()).collect();
            shuffle_rng.shuffle(&mut order);

            let mut sq_errors = Vec::with_capacity(train_docs.len());
            for batch in order.chunks(tcfg.batch_size) {
                params.zero_grads();
                let inv = 1.0 / batch.len() as f64;
                for &doc_idx in batch {
                    let doc = &train_docs[doc_idx];
                    let mut tape = Tape::new();
                    let pred =
                        model::forward_doc_on_tape(&mut tape, &params, cfg, doc, true, &mut dropout_rng)?;
                    let target = tape.leaf(Tensor::scalar(doc.y));
                    let err = tape.sub(pred, target).map_err(FetildaError::Num)?;
                    let sq = tape.mul(err, err).map_err(FetildaError::Num)?;
                    sq_errors.push(tape.value(sq).scalar_value().map_err(FetildaError::Num)?);
                    // Scale inside the graph so accumulated grads are the batch mean.
                    let scaled = tape.scale(sq, inv);
                    tape.backward(scaled).map_err(FetildaError::Num)?;
                    tape.accumulate_param_grads(&mut params).map_err(FetildaError::Num)?;
                }
                if sq_errors.iter().any(|e| !e.is_finite()) {
                    log.events.push(DivergenceEvent { rate, epoch });
                    break 'epochs;
                }
                optimizer.step(&mut params).map_err(FetildaError::Num)?;
            }
            let train_mse = sq_errors.iter().sum::<f64>() / sq_errors.len() as f64;

            let mut val_preds = Vec::with_capacity(val_docs.len());
            for doc in val_docs {
                val_preds.push(model::predict(&params, cfg, doc)?);
            }
            let val_targets: Vec<f64> = val_docs.iter().map(|d| d.y).collect();
            let val_mse = head::mse(&val_preds, &val_targets)?;
            if !train_mse.is_finite() || !val_mse.is_finite() {
                log.events.push(DivergenceEvent { rate, epoch });
                break 'epochs;
            }
            log.rows.push(TrainLogRow {
                rate,
                epoch,
                train_mse,
                val_mse,
                wall_ms: started.elapsed().as_millis(),
            });

            if rate_best.as_ref().map_or(true, |(b, _, _)| val_mse < *b) {
                rate_best = Some((val_mse, epoch, params.clone()));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best > tcfg.patience {
                    break 'epochs;
                }
            }
        }

        if let Some((val, epoch, p)) = rate_best {
            let better = match &best {
                None => true,
                Some((bv, br, _, _)) => (val, rate) < (*bv, *br),
            };
            if better {
                best = Some((val, rate, epoch, p));
            }
        }
    }

    let (best_val_mse, best_rate, best_epoch, params) = best.ok_or_else(|| {
        FetildaError::Train("every learning rate diverged before producing a model".into())
    })?;
    Ok(TrainOutcome { params, best_rate, best_epoch, best_val_mse, log })
}

// ── Final-layer regressor variants ──────────────────────────────────────────

/// Final prediction route: the trained FC2 head, or a downstream regressor
/// fitted on (document vector ⊕ historic score) features.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FinalMethod {
    Fc2,
    Linear,
    Svr,
    KernelRidge,
}

impl std::fmt::Display for FinalMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            FinalMethod::Fc2 => "fc2",
            FinalMethod::Linear => "linear",
            FinalMethod::Svr => "svr",
            FinalMethod::KernelRidge => "kernel_ridge",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for FinalMethod {
    type Err = FetildaError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fc2" => Ok(FinalMethod::Fc2),
            "linear" => Ok(FinalMethod::Linear),
            "svr" => Ok(FinalMethod::Svr),
            "kernel_ridge" => Ok(FinalMethod::KernelRidge),
            other => Err(FetildaError::Train(format!("unknown final method '{other}'"))),
        }
    }
}

/// A chosen final predictor over extracted document vectors.
#[derive(Debug, Clone)]
pub enum FinalPredictor {
    /// Use the trained head directly on (doc vector, y_hist).
    Fc2,
    Fitted(FittedRegressor),
}

/// Document vectors plus historic scores as regressor features.
pub fn final_features(doc_vecs: &[Tensor], y_hist: &[f64]) -> Vec<Vec<f64>> {
    doc_vecs
        .iter()
        .zip(y_hist)
        .map(|(v, &h)| {
            let mut row = v.data().to_vec();
            row.push(h);
            row
        })
        .collect()
}

/// Predict with one named method.
pub fn predict_with_regressor(
    method: &FinalPredictor,
    params: &ParamSet,
    cfg: &PipelineConfig,
    doc_vecs: &[Tensor],
    y_hist: &[f64],
) -> Result<Vec<f64>> {
    match method {
        FinalPredictor::Fc2 => doc_vecs
            .iter()
            .zip(y_hist)
            .map(|(v, &h)| head::head_forward(params, &cfg.head, v, h))
            .collect(),
        FinalPredictor::Fitted(model) => Ok(final_features(doc_vecs, y_hist)
            .iter()
            .map(|row| model.predict(row))
            .collect()),
    }
}

/// Fit the requested methods on training doc-vectors and select the one with
/// the lowest validation MSE (ties keep the listed order).
#[allow(clippy::too_many_arguments)]
pub fn select_final_method(
    methods: &[FinalMethod],
    params: &ParamSet,
    cfg: &PipelineConfig,
    train_vecs: &[Tensor],
    train_hist: &[f64],
    train_y: &[f64],
    val_vecs: &[Tensor],
    val_hist: &[f64],
    val_y: &[f64],
    spec: &RegressorSpec,
) -> Result<(FinalMethod, FinalPredictor, f64)> {
    if methods.is_empty() {
        return Err(FetildaError::Train("no final methods to select from".into()));
    }
    let train_x = final_features(train_vecs, train_hist);
    let mut best: Option<(FinalMethod, FinalPredictor, f64)> = None;
    for &method in methods {
        let predictor = match method {
            FinalMethod::Fc2 => FinalPredictor::Fc2,
            FinalMethod::Linear => FinalPredictor::Fitted(baselines::fit_regressor(
                RegressorKind::Linear,
                &train_x,
                train_y,
                spec,
            )?),
            FinalMethod::Svr => FinalPredictor::Fitted(baselines::fit_regressor(
                RegressorKind::Svr,
                &train_x,
                train_y,
                spec,
            )?),
            FinalMethod::KernelRidge => FinalPredictor::Fitted(baselines::fit_regressor(
                RegressorKind::KernelRidge,
                &train_x,
                train_y,
                spec,
            )?),
        };
        let preds = predict_with_regressor(&predictor, params, cfg, val_vecs, val_hist)?;
        let mse = head::mse(&preds, val_y)?;
        if best.as_ref().map_or(true, |(_, _, b)| mse < *b) {
            best = Some((method, predictor, mse));
        }
    }
    Ok(best.expect("non-empty methods"))
}
