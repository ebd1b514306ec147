//! AdamW training of the base classifier and its per-language adapters.
//!
//! Parameters are kept in f64 while training and rounded to f32 when a
//! model is built. Layout of a parameter vector: `3 × dim` weights
//! (row-major) followed by the 3 biases.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abstractive::DEFAULT_LOW_RESOURCE_LANGS;
use crate::corpus::Label;
use crate::sentiment::{argmax, Adapter, LabeledFeatures, Scorer, SentimentError, SentimentModel, DEFAULT_DIM};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("shape mismatch: {expected} parameters, {got} gradients")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("non-finite gradient at parameter {0}")]
    NonFiniteGradient(usize),
    #[error(transparent)]
    Model(#[from] SentimentError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub eta: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub dropout_high: f64,
    pub dropout_low: f64,
    pub low_resource_langs: BTreeSet<String>,
    pub seed: u64,
    pub dim: u32,
    /// Train a per-language adapter for every language in the training set.
    pub adapters: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            eta: 2e-5,
            epochs: 10,
            batch_size: 32,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            dropout_high: 0.1,
            dropout_low: 0.05,
            low_resource_langs: DEFAULT_LOW_RESOURCE_LANGS.iter().map(|s| s.to_string()).collect(),
            seed: 0,
            dim: DEFAULT_DIM,
            adapters: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad("eta must be positive");
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be at least 1");
        }
        for p in [self.dropout_high, self.dropout_low] {
            if !(0.0..1.0).contains(&p) {
                return bad("dropout must be in [0, 1)");
            }
        }
        for b in [self.beta1, self.beta2] {
            if !(b > 0.0 && b < 1.0) {
                return bad("betas must be in (0, 1)");
            }
        }
        if !(self.eps > 0.0) || !(self.weight_decay >= 0.0) {
            return bad("eps must be positive and weight_decay non-negative");
        }
        if !self.dim.is_power_of_two() {
            return Err(SentimentError::InvalidDim(self.dim).into());
        }
        Ok(())
    }

    pub fn dropout_for(&self, lang: &str) -> f64 {
        if self.low_resource_langs.contains(lang) {
            self.dropout_low
        } else {
            self.dropout_high
        }
    }
}

/// `eta · (1 + cos(π t / T)) / 2`.
pub fn cosine_lr(t: usize, total: usize, eta: f64) -> f64 {
    let total = total.max(1);
    let t = t.min(total);
    eta * 0.5 * (1.0 + (std::f64::consts::PI * t as f64 / total as f64).cos())
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl OptimizerState {
    pub fn new(n: usize) -> Self {
        OptimizerState { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }
}

/// One decoupled-weight-decay Adam step.
pub fn adamw_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut OptimizerState,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<(), TrainError> {
    if grads.len() != params.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(TrainError::ShapeMismatch { expected: params.len(), got: grads.len() });
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(TrainError::NonFiniteGradient(i));
    }
    state.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= lr * (m_hat / (v_hat.sqrt() + cfg.eps) + cfg.weight_decay * params[i]);
    }
    Ok(())
}

/// Dense float input for the loss: `(feature index, value)` pairs.
pub type DenseInput = [(u32, f64)];

fn linear(params: &[f64], dim: usize, x: &DenseInput) -> [f64; 3] {
    let mut z = [params[3 * dim], params[3 * dim + 1], params[3 * dim + 2]];
    for &(j, v) in x {
        for (c, zc) in z.iter_mut().enumerate() {
            *zc += params[c * dim + j as usize] * v;
        }
    }
    z
}

fn log_softmax(z: [f64; 3]) -> [f64; 3] {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    z.map(|v| v - lse)
}

/// Cross-entropy of `softmax(offset + scale · (W x + b))` at label `y`.
pub fn example_loss(params: &[f64], dim: usize, x: &DenseInput, y: usize, offset: [f64; 3], scale: f64) -> f64 {
    let z = linear(params, dim, x);
    -log_softmax([0, 1, 2].map(|c| offset[c] + scale * z[c]))[y]
}

/// Adds `weight · ∂loss/∂params` into `grad` and returns the loss.
pub fn accumulate_grad(
    params: &[f64],
    dim: usize,
    x: &DenseInput,
    y: usize,
    offset: [f64; 3],
    scale: f64,
    weight: f64,
    grad: &mut [f64],
) -> f64 {
    let z = linear(params, dim, x);
    let ls = log_softmax([0, 1, 2].map(|c| offset[c] + scale * z[c]));
    for c in 0..3 {
        let d = (ls[c].exp() - f64::from(u8::from(c == y))) * scale * weight;
        for &(j, v) in x {
            grad[c * dim + j as usize] += d * v;
        }
        grad[3 * dim + c] += d;
    }
    -ls[y]
}

fn dense(x: &crate::sentiment::FeatureVector) -> Vec<(u32, f64)> {
    x.entries.iter().map(|&(j, v)| (j, v as f64)).collect()
}

fn dropped(x: &[(u32, f64)], p: f64, rng: &mut ChaCha8Rng) -> Vec<(u32, f64)> {
    if p == 0.0 {
        return x.to_vec();
    }
    let keep = 1.0 / (1.0 - p);
    x.iter().filter(|_| !rng.random_bool(p)).map(|&(j, v)| (j, v * keep)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean loss over the epoch's mini-batches, with dropout.
    pub batch_loss: f64,
    /// Loss over the whole training set after the epoch, without dropout.
    pub train_loss: f64,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    pub initial_loss: f64,
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub n_train: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub base: PhaseReport,
    pub adapters: BTreeMap<String, PhaseReport>,
    pub warnings: Vec<String>,
}

/// One stage of training: which examples, what the frozen part contributes,
/// and how the trainable logits are scaled.
struct Phase<'a> {
    examples: Vec<&'a LabeledFeatures>,
    inputs: Vec<Vec<(u32, f64)>>,
    offsets: Vec<[f64; 3]>,
    scales: Vec<f64>,
}

impl<'a> Phase<'a> {
    fn new(examples: Vec<&'a LabeledFeatures>, offset: impl Fn(&LabeledFeatures) -> [f64; 3], scale: impl Fn(&LabeledFeatures) -> f64) -> Self {
        let inputs = examples.iter().map(|e| dense(&e.features)).collect();
        let offsets = examples.iter().map(|e| offset(e)).collect();
        let scales = examples.iter().map(|e| scale(e)).collect();
        Phase { examples, inputs, offsets, scales }
    }

    fn loss(&self, params: &[f64], dim: usize) -> f64 {
        let total: f64 = (0..self.examples.len())
            .map(|i| example_loss(params, dim, &self.inputs[i], self.examples[i].label.index(), self.offsets[i], self.scales[i]))
            .sum();
        total / self.examples.len().max(1) as f64
    }
}

/// Mini-batch AdamW with a cosine schedule; keeps the parameters from the
/// epoch with the best `select` score (earlier epoch on ties).
fn run_phase(
    phase: &Phase,
    dim: usize,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    select: &dyn Fn(&[f64]) -> Option<f64>,
) -> Result<(Vec<f64>, PhaseReport), TrainError> {
    let n_params = 3 * dim + 3;
    let mut params = vec![0.0; n_params];
    let mut state = OptimizerState::new(n_params);
    let mut grad = vec![0.0; n_params];
    let n = phase.examples.len();
    let batches = n.div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * batches;
    let mut order: Vec<usize> = (0..n).collect();
    let initial_loss = phase.loss(&params, dim);
    let mut best: Option<(f64, usize, Vec<f64>)> = None;
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut step = 0;

    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let w = 1.0 / batch.len() as f64;
            for &i in batch {
                let ex = phase.examples[i];
                let x = dropped(&phase.inputs[i], cfg.dropout_for(&ex.lang), rng);
                loss_sum += accumulate_grad(&params, dim, &x, ex.label.index(), phase.offsets[i], phase.scales[i], w, &mut grad) * w;
            }
            adamw_step(&mut params, &grad, &mut state, cosine_lr(step, total_steps, cfg.eta), cfg)?;
            step += 1;
        }
        let train_loss = phase.loss(&params, dim);
        let val_accuracy = select(&params);
        let score = val_accuracy.unwrap_or(-train_loss);
        if best.as_ref().is_none_or(|(s, _, _)| score > *s) {
            best = Some((score, epoch, params.clone()));
        }
        epochs.push(EpochStats { epoch, batch_loss: loss_sum / batches as f64, train_loss, val_accuracy });
    }
    let (_, best_epoch, params) = best.expect("at least one epoch");
    Ok((params, PhaseReport { initial_loss, epochs, best_epoch, n_train: n }))
}

fn to_model(params: &[f64], dim: u32) -> Result<SentimentModel, TrainError> {
    let d = dim as usize;
    let mut m = SentimentModel::zeros(dim)?;
    m.weights = params[..3 * d].iter().map(|&w| w as f32).collect();
    m.bias = [0, 1, 2].map(|c| params[3 * d + c] as f32);
    Ok(m)
}

fn to_adapter(params: &[f64], dim: usize) -> Adapter {
    let entries = (0..dim)
        .filter_map(|j| {
            let w = [0, 1, 2].map(|c| params[c * dim + j] as f32);
            (w != [0.0; 3]).then_some((j as u32, w))
        })
        .collect();
    Adapter { entries, bias: [0, 1, 2].map(|c| params[3 * dim + c] as f32) }
}

fn proportion(ex: &LabeledFeatures, lang: &str) -> f64 {
    if ex.mix.is_empty() {
        f64::from(u8::from(ex.lang == lang))
    } else {
        ex.mix.iter().find(|(l, _)| l == lang).map_or(0.0, |(_, p)| *p)
    }
}

fn accuracy_of(model: &dyn Scorer, examples: &[&LabeledFeatures]) -> Result<f64, TrainError> {
    let mut correct = 0usize;
    for ex in examples {
        let z = model.logits(&ex.features, &mix_or_lang(ex))?;
        correct += usize::from(argmax(&z) == ex.label.index());
    }
    Ok(correct as f64 / examples.len() as f64)
}

fn mix_or_lang(ex: &LabeledFeatures) -> crate::sentiment::LangMix {
    if ex.mix.is_empty() {
        vec![(ex.lang.clone(), 1.0)]
    } else {
        ex.mix.clone()
    }
}

/// Trains the base model, then one adapter per training language with the
/// base frozen. Temperatures are left at 1; see
/// [`crate::sentiment::calibrate`].
pub fn train_classifier(
    train: &[LabeledFeatures],
    val: &[LabeledFeatures],
    cfg: &TrainConfig,
) -> Result<(SentimentModel, TrainReport), TrainError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    for ex in train.iter().chain(val) {
        if ex.features.dim != cfg.dim {
            return Err(SentimentError::DimMismatch { expected: cfg.dim, got: ex.features.dim }.into());
        }
    }
    let mut warnings = Vec::new();
    let labels: BTreeSet<Label> = train.iter().map(|e| e.label).collect();
    if labels.len() == 1 {
        warnings.push(format!("training set has a single class ({})", labels.first().unwrap()));
    }

    let dim = cfg.dim as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let val_refs: Vec<&LabeledFeatures> = val.iter().collect();

    let base_phase = Phase::new(train.iter().collect(), |_| [0.0; 3], |_| 1.0);
    let select_base = |p: &[f64]| -> Option<f64> {
        if val_refs.is_empty() {
            return None;
        }
        let m = to_model(p, cfg.dim).ok()?;
        accuracy_of(&m, &val_refs).ok()
    };
    let (params, base_report) = run_phase(&base_phase, dim, cfg, &mut rng, &select_base)?;
    let mut model = to_model(&params, cfg.dim)?;

    let mut adapter_reports = BTreeMap::new();
    if cfg.adapters {
        let langs: BTreeSet<&str> = train.iter().map(|e| e.lang.as_str()).collect();
        for lang in langs {
            let subset: Vec<&LabeledFeatures> = train.iter().filter(|e| e.lang == lang).collect();
            let base = &model;
            let phase = Phase::new(
                subset,
                |e| base.logits(&e.features, &mix_or_lang(e)).expect("dims checked"),
                |e| proportion(e, lang),
            );
            let val_lang: Vec<&LabeledFeatures> = val.iter().filter(|e| e.lang == lang).collect();
            let select = |p: &[f64]| -> Option<f64> {
                if val_lang.is_empty() {
                    return None;
                }
                let mut m = base.clone();
                m.adapters.insert(lang.to_string(), to_adapter(p, dim));
                accuracy_of(&m, &val_lang).ok()
            };
            let (p, report) = run_phase(&phase, dim, cfg, &mut rng, &select)?;
            let adapter = to_adapter(&p, dim);
            model.adapters.insert(lang.to_string(), adapter);
            adapter_reports.insert(lang.to_string(), report);
        }
    }
    Ok((model, TrainReport { base: base_report, adapters: adapter_reports, warnings }))
}
