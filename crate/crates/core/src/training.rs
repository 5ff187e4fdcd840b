//! Circle loss, backpropagation and an AdamW training loop.

use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Record;
use crate::encoder::TinyEncoder;
use crate::engine::{extract_corpus, ExtractionConfig, ModelScorer, TrainingInstance};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, Task};
use crate::schema::Schema;
use crate::scoring::{score_backward, score_with_trace, ScoreMatrix, ScoringParams};
use crate::tokenizer::Tokenize;

/// Trainable encoder, scoring head and decision threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub encoder: TinyEncoder,
    pub scoring: ScoringParams,
    pub delta: f64,
}

impl Model {
    pub fn new(vocab_size: usize, dim: usize, layers: usize, max_positions: usize, seed: u64) -> Self {
        Self {
            encoder: TinyEncoder::new(vocab_size, dim, layers, max_positions, seed),
            scoring: ScoringParams::new(dim, dim, seed ^ 0x5c0f_e11e),
            delta: 0.0,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self { encoder: self.encoder.zeros_like(), scoring: self.scoring.zeros_like(), delta: self.delta }
    }

    pub fn scorer(&self) -> ModelScorer<'_, TinyEncoder> {
        ModelScorer { encoder: &self.encoder, params: &self.scoring, delta: self.delta }
    }

    /// Encoder tensors first, then scoring tensors.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = self.encoder.tensors();
        out.extend(self.scoring.tensors());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.encoder.tensors_mut();
        out.extend(self.scoring.tensors_mut());
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn add_assign(&mut self, other: &Model) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= s);
        }
    }

    fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }
}

/// `log(1 + sum exp(s))` without overflow.
fn log1p_sum_exp(s: &[f64]) -> f64 {
    let m = s.iter().copied().fold(0.0, f64::max);
    m + ((-m).exp() + s.iter().map(|x| (x - m).exp()).sum::<f64>()).ln()
}

/// Loss and `dL/dZ` of one score matrix; also the positive and negative cell counts.
pub fn circle_loss_grad(z: &Array2<f64>, gold: &Array2<bool>, valid: &Array2<bool>) -> (f64, Array2<f64>, usize, usize) {
    let mut neg = Vec::new();
    let mut pos = Vec::new();
    for ((idx, &v), &g) in z.indexed_iter().zip(gold.iter()) {
        if valid[idx] {
            if g {
                pos.push((idx, -v));
            } else {
                neg.push((idx, v));
            }
        }
    }
    let neg_s: Vec<f64> = neg.iter().map(|p| p.1).collect();
    let pos_s: Vec<f64> = pos.iter().map(|p| p.1).collect();
    let (ln, lp) = (log1p_sum_exp(&neg_s), log1p_sum_exp(&pos_s));
    let mut dz = Array2::zeros(z.raw_dim());
    for &(idx, s) in &neg {
        dz[idx] = (s - ln).exp();
    }
    for &(idx, s) in &pos {
        dz[idx] = -(s - lp).exp();
    }
    (ln + lp, dz, pos.len(), neg.len())
}

/// `log(1 + sum_neg e^Z) + log(1 + sum_pos e^-Z)` over valid cells.
pub fn circle_loss(z: &ScoreMatrix, gold: &Array2<bool>, valid: &Array2<bool>) -> f64 {
    circle_loss_grad(&z.values, gold, valid).0
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub per_instance: Vec<f64>,
    pub positive_cell_count: usize,
    pub negative_cell_count: usize,
}

impl LossReport {
    fn absorb(&mut self, other: LossReport) {
        self.total += other.total;
        self.per_instance.extend(other.per_instance);
        self.positive_cell_count += other.positive_cell_count;
        self.negative_cell_count += other.negative_cell_count;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainTarget {
    #[default]
    All,
    ScoringOnly,
}

fn accumulate(model: &Model, inst: &TrainingInstance, target: TrainTarget, grads: &mut Model) -> Result<LossReport> {
    let q = &inst.query;
    let trace = model.encoder.forward(q)?;
    let h = trace.output();
    let (z, st) = score_with_trace(h, &q.position_ids, &inst.valid_mask, &model.scoring);
    let (loss, dz, pos, neg) = circle_loss_grad(&z.values, &inst.gold_bits.bits, &inst.valid_mask);
    if !loss.is_finite() {
        return Err(Error::Numeric {
            instance: inst.id,
            reason: format!("loss is {loss} (document {}, depth {})", inst.doc_index + 1, inst.depth),
        });
    }
    let dh = score_backward(h, &q.position_ids, &dz, &st, &model.scoring, &mut grads.scoring);
    if target == TrainTarget::All {
        model.encoder.backward(q, &trace, dh, &mut grads.encoder);
    }
    Ok(LossReport { total: loss, per_instance: vec![loss], positive_cell_count: pos, negative_cell_count: neg })
}

/// Summed loss and summed gradients over `batch`. With more than one worker
/// the batch is split into contiguous chunks reduced in order.
pub fn loss_gradient(
    model: &Model,
    batch: &[&TrainingInstance],
    target: TrainTarget,
    workers: usize,
) -> Result<(LossReport, Model)> {
    let run = |chunk: &[&TrainingInstance]| -> Result<(LossReport, Model)> {
        let mut grads = model.zeros_like();
        let mut report = LossReport::default();
        for inst in chunk {
            report.absorb(accumulate(model, inst, target, &mut grads)?);
        }
        Ok((report, grads))
    };
    if workers <= 1 || batch.len() < 2 {
        return run(batch);
    }
    let chunk = batch.len().div_ceil(workers);
    let parts: Vec<Result<(LossReport, Model)>> = batch.par_chunks(chunk).map(run).collect();
    let mut report = LossReport::default();
    let mut grads = model.zeros_like();
    for part in parts {
        let (r, g) = part?;
        report.absorb(r);
        grads.add_assign(&g);
    }
    Ok((report, grads))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub warmup_fraction: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub target: TrainTarget,
    /// Stop once the evaluation F1 reaches this value.
    pub stop_at_f1: Option<f64>,
    pub workers: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-3,
            weight_decay: 0.01,
            clip_norm: 2.0,
            warmup_fraction: 0.1,
            epochs: 100,
            batch_size: 8,
            seed: 0,
            target: TrainTarget::All,
            stop_at_f1: None,
            workers: 1,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Data(format!("optimizer config: {what}")));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and nonnegative");
        }
        if self.weight_decay < 0.0 || self.clip_norm <= 0.0 {
            return bad("weight_decay must be nonnegative and clip_norm positive");
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return bad("warmup_fraction must lie in [0, 1]");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        Ok(())
    }
}

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Moment estimates of the decoupled-weight-decay Adam update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(model: &Model) -> Self {
        let zeros: Vec<Vec<f64>> = model.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self { step: 0, m: zeros.clone(), v: zeros }
    }

    /// One update of the tensors from index `first` on.
    pub fn update(&mut self, model: &mut Model, grads: &Model, lr: f64, weight_decay: f64, first: usize) {
        self.step += 1;
        let t = self.step as i32;
        let (c1, c2) = (1.0 - BETA1.powi(t), 1.0 - BETA2.powi(t));
        let params = model.tensors_mut();
        for (i, (p, g)) in params.into_iter().zip(grads.tensors()).enumerate().skip(first) {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.len() {
                m[j] = BETA1 * m[j] + (1.0 - BETA1) * g[j];
                v[j] = BETA2 * v[j] + (1.0 - BETA2) * g[j] * g[j];
                let step = (m[j] / c1) / ((v[j] / c2).sqrt() + EPSILON);
                p[j] -= lr * (step + weight_decay * p[j]);
            }
        }
    }
}

fn clip(grads: &mut Model, max_norm: f64) -> f64 {
    let norm = grads.tensors().iter().flat_map(|t| t.iter()).map(|x| x * x).sum::<f64>().sqrt();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

/// Linear warmup over the first `warmup` steps, constant afterwards. `step` is 1-based.
pub fn learning_rate_at(base: f64, step: u64, warmup: u64) -> f64 {
    if warmup == 0 || step >= warmup {
        base
    } else {
        base * step as f64 / warmup as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_f1: Option<f64>,
    pub wall_ms: u64,
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub epoch: usize,
    pub optimizer: AdamW,
    pub log: Vec<EpochLog>,
}

impl TrainState {
    pub fn fresh(model: &Model) -> Self {
        Self { epoch: 0, optimizer: AdamW::new(model), log: Vec::new() }
    }
}

/// Documents used to measure training-set F1 after each epoch.
pub struct EvalSet<'a> {
    pub docs: &'a [Record],
    pub schema: &'a Schema,
    pub tokenizer: &'a dyn Tokenize,
    pub extraction: ExtractionConfig,
    pub task: Task,
}

impl EvalSet<'_> {
    pub fn f1(&self, model: &Model, workers: usize) -> Result<f64> {
        let texts: Vec<&str> = self.docs.iter().map(|d| d.text.as_str()).collect();
        let scorer = model.scorer();
        let results = extract_corpus(&texts, self.schema, self.tokenizer, &scorer, &self.extraction, workers)?;
        let pred: Vec<Vec<_>> = results.into_iter().map(|r| r.tuples.into_iter().collect()).collect();
        let gold: Vec<&[_]> = self.docs.iter().map(|d| d.tuples.as_slice()).collect();
        Ok(evaluate(self.task, &pred, &gold)?.f1)
    }
}

pub struct TrainOutcome {
    pub model: Model,
    pub state: TrainState,
    /// Set when training stopped on a non-finite loss or parameter; `model`
    /// and `state` then hold the last finished epoch.
    pub diverged: Option<Error>,
}

fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Trains until `cfg.epochs` epochs are complete, starting after `state.epoch`.
pub fn train(
    model: Model,
    instances: &[TrainingInstance],
    eval: Option<&EvalSet<'_>>,
    cfg: &OptimizerConfig,
    state: TrainState,
) -> Result<TrainOutcome> {
    train_observed(model, instances, eval, cfg, state, &mut |_| {})
}

/// [`train`], calling `on_epoch` with each finished epoch's log record.
pub fn train_observed(
    mut model: Model,
    instances: &[TrainingInstance],
    eval: Option<&EvalSet<'_>>,
    cfg: &OptimizerConfig,
    mut state: TrainState,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if instances.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let steps_per_epoch = instances.len().div_ceil(cfg.batch_size);
    let total_steps = (cfg.epochs * steps_per_epoch) as u64;
    let warmup = (cfg.warmup_fraction * total_steps as f64).ceil() as u64;
    let first = match cfg.target {
        TrainTarget::All => 0,
        TrainTarget::ScoringOnly => model.encoder.tensors().len(),
    };

    let mut good = (model.clone(), state.clone());
    while state.epoch < cfg.epochs {
        let epoch = state.epoch + 1;
        let started = Instant::now();
        let order = epoch_order(instances.len(), cfg.seed, epoch);
        let mut loss_sum = 0.0;
        let mut failure = None;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&TrainingInstance> = chunk.iter().map(|&i| &instances[i]).collect();
            let (report, mut grads) = match loss_gradient(&model, &batch, cfg.target, cfg.workers) {
                Ok(r) => r,
                Err(e @ Error::Numeric { .. }) => {
                    failure = Some(e);
                    break;
                }
                Err(e) => return Err(e),
            };
            loss_sum += report.total;
            grads.scale(1.0 / batch.len() as f64);
            clip(&mut grads, cfg.clip_norm);
            let lr = learning_rate_at(cfg.learning_rate, state.optimizer.step + 1, warmup);
            state.optimizer.update(&mut model, &grads, lr, cfg.weight_decay, first);
        }
        if failure.is_none() && !model.is_finite() {
            failure = Some(Error::Numeric { instance: 0, reason: format!("non-finite parameter after epoch {epoch}") });
        }
        if let Some(e) = failure {
            return Ok(TrainOutcome { model: good.0, state: good.1, diverged: Some(e) });
        }
        let train_f1 = eval.map(|e| e.f1(&model, cfg.workers)).transpose()?;
        state.epoch = epoch;
        state.log.push(EpochLog {
            epoch,
            mean_loss: loss_sum / instances.len() as f64,
            train_f1,
            wall_ms: started.elapsed().as_millis() as u64,
        });
        on_epoch(&state.log[state.log.len() - 1]);
        good = (model.clone(), state.clone());
        if let (Some(target), Some(f1)) = (cfg.stop_at_f1, train_f1) {
            if f1 >= target {
                break;
            }
        }
    }
    Ok(TrainOutcome { model, state, diverged: None })
}
