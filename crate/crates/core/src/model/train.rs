use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{batch_loss_and_grad, forward, predict_label, MetricsReport, ModelConfig, ModelParams, Mode, PreparedConversation, Variant};
use crate::error::{DgodeError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Conversations per optimizer step.
    pub batch_size: usize,
    pub epochs: usize,
    pub l2: f64,
    pub dropout: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 5e-3, batch_size: 4, epochs: 60, l2: 1e-5, dropout: 0.5, beta1: 0.9, beta2: 0.999, adam_eps: 1e-8, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(DgodeError::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(DgodeError::Config("batch size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(DgodeError::Config(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        if !(self.l2 >= 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return Err(DgodeError::Config("l2 must be >= 0, betas in [0,1), epsilon > 0".into()));
        }
        Ok(())
    }
}

/// Bias-corrected Adam update of one flat tensor; `step` counts from 1.
pub fn adam_update(param: &mut [f64], grad: &[f64], m: &mut [f64], v: &mut [f64], step: u64, cfg: &TrainConfig) {
    let c1 = 1.0 - cfg.beta1.powf(step as f64);
    let c2 = 1.0 - cfg.beta2.powf(step as f64);
    for (((p, &g), m), v) in param.iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        *p -= cfg.learning_rate * (*m / c1) / ((*v / c2).sqrt() + cfg.adam_eps);
    }
}

/// Moment buffers shaped like the parameters.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub step: u64,
    m: ModelParams,
    v: ModelParams,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        Self { step: 0, m: params.zeros_like(), v: params.zeros_like() }
    }
}

/// One Adam step over every tensor, then hop gates are clamped to `≥ 0`.
pub fn adam_step(params: &mut ModelParams, grads: &ModelParams, state: &mut AdamState, cfg: &TrainConfig) {
    state.step += 1;
    let step = state.step;
    let g: Vec<&[f64]> = grads.tensors().into_iter().map(|(_, _, t)| t.as_slice()).collect();
    let ms = state.m.tensors_mut();
    let vs = state.v.tensors_mut();
    for ((((_, _, p), g), (_, _, m)), (_, _, v)) in params.tensors_mut().into_iter().zip(g).zip(ms).zip(vs) {
        adam_update(p.as_mut_slice(), g, m.as_mut_slice(), v.as_mut_slice(), step, cfg);
    }
    params.project_gates();
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_weighted_f1: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters with the best validation W-F1 (earliest on ties).
    pub best: ModelParams,
    pub final_params: ModelParams,
    pub best_epoch: usize,
    pub log: Vec<EpochRecord>,
    /// Wall-clock seconds per epoch; kept apart from the log so the log is
    /// reproducible byte for byte.
    pub epoch_seconds: Vec<f64>,
}

/// `(true label, predicted label)` for every utterance, in order.
pub fn predict_dataset(data: &[PreparedConversation], params: &ModelParams) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut labels = Vec::new();
    let mut preds = Vec::new();
    for conv in data {
        let probs = forward(conv, params, Mode::Eval)?;
        for i in 0..probs.rows() {
            preds.push(predict_label(probs.row(i))?);
        }
        labels.extend_from_slice(&conv.labels);
    }
    Ok((labels, preds))
}

pub fn evaluate(data: &[PreparedConversation], params: &ModelParams, classes: &[String]) -> Result<MetricsReport> {
    if data.iter().all(|c| c.is_empty()) {
        return Err(DgodeError::EmptyInput("evaluation split is empty".into()));
    }
    let (labels, preds) = predict_dataset(data, params)?;
    MetricsReport::from_predictions(classes.to_vec(), &labels, &preds)
}

pub fn train(
    train_set: &[PreparedConversation],
    val_set: &[PreparedConversation],
    classes: &[String],
    params: ModelParams,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(DgodeError::EmptyInput("training needs nonempty train and validation splits".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = params;
    let mut adam = AdamState::new(&params);
    let mut best = params.clone();
    let mut best_score = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut epoch_seconds = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut weight_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&PreparedConversation> = chunk.iter().map(|&i| &train_set[i]).collect();
            let utterances = batch.iter().map(|c| c.len()).sum::<usize>() as f64;
            let (loss, grads) = batch_loss_and_grad(&batch, &params, cfg.l2, Some((cfg.dropout, &mut rng)))?;
            adam_step(&mut params, &grads, &mut adam, cfg);
            if !params.is_finite() {
                return Err(DgodeError::Config(format!("parameters diverged in epoch {epoch}")));
            }
            loss_sum += loss * utterances;
            weight_sum += utterances;
        }
        let val = evaluate(val_set, &params, classes)?.weighted_f1;
        if val > best_score {
            best_score = val;
            best = params.clone();
            best_epoch = epoch;
        }
        log.push(EpochRecord { epoch, train_loss: loss_sum / weight_sum, val_weighted_f1: val });
        epoch_seconds.push(started.elapsed().as_secs_f64());
    }
    Ok(TrainOutcome { best, final_params: params, best_epoch, log, epoch_seconds })
}

/// One point of a depth-sweep curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub method: String,
    pub depth: usize,
    pub weighted_f1: f64,
    pub accuracy: f64,
}

/// Config of the DGODE model at evolution time `depth`.
pub fn dgode_at_depth(template: &ModelConfig, depth: usize) -> ModelConfig {
    let mut cfg = template.clone();
    cfg.variant = Variant::Dgode;
    cfg.ode.t_end = depth as f64;
    cfg
}

/// Config of the `depth`-layer plain graph convolution baseline.
pub fn vanilla_at_depth(template: &ModelConfig, depth: usize) -> ModelConfig {
    let mut cfg = template.clone();
    cfg.variant = Variant::VanillaGcn { layers: depth };
    cfg.use_ode = false;
    cfg.use_mixhop = false;
    cfg
}

/// Trains and tests DGODE (evolution time `k`) and the `k`-layer baseline
/// for every depth `k`; both models start from the same seed.
pub fn depth_sweep(
    splits: [&[PreparedConversation]; 3],
    classes: &[String],
    template: &ModelConfig,
    cfg: &TrainConfig,
    depths: &[usize],
    init_seed: u64,
) -> Result<Vec<SweepRecord>> {
    let [train_set, val_set, test_set] = splits;
    let mut out = Vec::with_capacity(2 * depths.len());
    for &depth in depths {
        if depth == 0 {
            return Err(DgodeError::Config("sweep depths must be >= 1".into()));
        }
        for (method, config) in [("dgode", dgode_at_depth(template, depth)), ("vanilla_gcn", vanilla_at_depth(template, depth))] {
            let params = ModelParams::init(config, init_seed)?;
            let outcome = train(train_set, val_set, classes, params, cfg)?;
            let report = evaluate(test_set, &outcome.best, classes)?;
            out.push(SweepRecord { method: method.into(), depth, weighted_f1: report.weighted_f1, accuracy: report.accuracy });
        }
    }
    Ok(out)
}
