use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DualEncoder, EncoderError, Hyperparams, Vocabulary};
use crate::corpus::{negative_ratio, QaPair};
use crate::numerics::{clip_global_norm, AdamState, DEFAULT_LEARNING_RATE};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Global gradient-norm clip.
    pub clip_norm: f64,
    /// Extra dev evaluations every this many steps; 0 evaluates only at epoch ends.
    pub dev_eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: DEFAULT_LEARNING_RATE,
            epochs: 4,
            batch_size: 256,
            seed: 0,
            clip_norm: 5.0,
            dev_eval_every: 0,
        }
    }
}

impl TrainConfig {
    /// Optimizer settings paired with [`Hyperparams::desk`].
    pub fn desk(seed: u64) -> Self {
        Self {
            learning_rate: 3e-3,
            batch_size: 32,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.epochs == 0 {
            return Err(EncoderError::InvalidConfig(
                "epochs must be at least 1".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(EncoderError::InvalidConfig(
                "learning rate must be positive".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(EncoderError::InvalidConfig(
                "batch size must be positive".into(),
            ));
        }
        if !(self.clip_norm > 0.0) {
            return Err(EncoderError::InvalidConfig(
                "clip norm must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub steps: usize,
    pub train_loss: f64,
    pub dev_accuracy: Option<f64>,
    /// (global step, dev accuracy) from `dev_eval_every`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dev_history: Vec<(usize, f64)>,
}

/// A pair converted to token ids.
#[derive(Clone, Debug)]
pub struct Example {
    pub question: Vec<usize>,
    pub answer: Vec<usize>,
    pub label: f32,
}

pub fn prepare_examples(
    model: &DualEncoder,
    pairs: &[QaPair],
) -> Result<Vec<Example>, EncoderError> {
    pairs
        .iter()
        .map(|p| {
            Ok(Example {
                question: model.token_ids(&p.question)?,
                answer: model.token_ids(&p.answer)?,
                label: f32::from(p.label),
            })
        })
        .collect()
}

/// Mutable training state: the model plus its optimizer.
pub struct Trainer {
    pub model: DualEncoder,
    pub adam: AdamState,
    pub clip_norm: f64,
}

impl Trainer {
    pub fn new(model: DualEncoder, learning_rate: f64, clip_norm: f64) -> Self {
        let adam = AdamState::new(model.params().into_iter().map(|(_, t)| t), learning_rate);
        Self {
            model,
            adam,
            clip_norm,
        }
    }

    /// Forward, backward, clip and one Adam update on `batch`. Returns the
    /// batch loss before the update.
    pub fn step(&mut self, batch: &[&Example]) -> Result<f64, EncoderError> {
        let questions: Vec<&[usize]> = batch.iter().map(|e| e.question.as_slice()).collect();
        let answers: Vec<&[usize]> = batch.iter().map(|e| e.answer.as_slice()).collect();
        let labels: Vec<f32> = batch.iter().map(|e| e.label).collect();
        let (loss, mut grads) = self.model.loss_and_grads(&questions, &answers, &labels)?;
        if !loss.is_finite() {
            return Err(EncoderError::Numerics(
                crate::numerics::NumericsError::NonFinite(format!("loss {loss}")),
            ));
        }
        for g in &grads {
            g.check_finite()?;
        }
        clip_global_norm(&mut grads, self.clip_norm);
        let mut params = self.model.params_mut();
        self.adam.step(&mut params, &grads)?;
        for p in params {
            p.check_finite()?;
        }
        Ok(loss)
    }
}

/// Trains a fresh model on `train`, reporting dev accuracy after each epoch.
/// The vocabulary comes from the training split only.
pub fn train(
    train: &[QaPair],
    dev: &[QaPair],
    hyper: &Hyperparams,
    cfg: &TrainConfig,
) -> Result<(DualEncoder, Vec<EpochMetrics>), EncoderError> {
    train_with_progress(train, dev, hyper, cfg, |_| {})
}

pub fn train_with_progress(
    train: &[QaPair],
    dev: &[QaPair],
    hyper: &Hyperparams,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<(DualEncoder, Vec<EpochMetrics>), EncoderError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(EncoderError::EmptyDataset);
    }
    let ratio = negative_ratio(train);
    if (ratio - 2.0).abs() > 0.1 {
        log::warn!("training negative:positive ratio is {ratio:.3}, expected about 2");
    }
    let vocab = Vocabulary::build(
        train.iter().flat_map(|p| [&p.question, &p.answer]),
        hyper.vocab_size,
    );
    let model = DualEncoder::new(vocab, hyper.clone(), cfg.seed)?;
    let train_ex = prepare_examples(&model, train)?;
    let dev_ex = prepare_examples(&model, dev)?;

    let mut trainer = Trainer::new(model, cfg.learning_rate, cfg.clip_norm);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut order: Vec<usize> = (0..train_ex.len()).collect();
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut global_step = 0;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut history = Vec::new();
        let mut steps = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &train_ex[i]).collect();
            loss_sum += trainer.step(&batch)? * batch.len() as f64;
            steps += 1;
            global_step += 1;
            if cfg.dev_eval_every > 0 && global_step % cfg.dev_eval_every == 0 && !dev_ex.is_empty()
            {
                history.push((global_step, accuracy_of(&trainer.model, &dev_ex)?));
            }
        }
        let dev_accuracy = if dev_ex.is_empty() {
            None
        } else {
            Some(accuracy_of(&trainer.model, &dev_ex)?)
        };
        let m = EpochMetrics {
            epoch,
            steps,
            train_loss: loss_sum / train_ex.len() as f64,
            dev_accuracy,
            dev_history: history,
        };
        log::info!(
            "epoch {epoch}: train loss {:.4}, dev accuracy {}",
            m.train_loss,
            m.dev_accuracy
                .map_or("n/a".to_string(), |a| format!("{a:.4}"))
        );
        on_epoch(&m);
        metrics.push(m);
    }
    Ok((trainer.model, metrics))
}

/// Probabilities for prepared examples, scored in batches.
pub fn predict(model: &DualEncoder, examples: &[Example]) -> Result<Vec<f32>, EncoderError> {
    let mut out = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(256) {
        let q: Vec<&[usize]> = chunk.iter().map(|e| e.question.as_slice()).collect();
        let a: Vec<&[usize]> = chunk.iter().map(|e| e.answer.as_slice()).collect();
        out.extend(model.score_ids(&q, &a)?);
    }
    Ok(out)
}

fn accuracy_of(model: &DualEncoder, examples: &[Example]) -> Result<f64, EncoderError> {
    let probs = predict(model, examples)?;
    let labels: Vec<u8> = examples.iter().map(|e| e.label as u8).collect();
    accuracy_from_probs(&probs, &labels)
}

/// Fraction of pairs where `p >= 0.5` agrees with the label (ties predict 1).
pub fn accuracy_from_probs(probs: &[f32], labels: &[u8]) -> Result<f64, EncoderError> {
    if probs.is_empty() {
        return Err(EncoderError::EmptyDataset);
    }
    let correct = probs
        .iter()
        .zip(labels)
        .filter(|(&p, &y)| u8::from(p >= 0.5) == y)
        .count();
    Ok(correct as f64 / probs.len() as f64)
}

/// Dev-set accuracy at threshold 0.5.
pub fn dev_accuracy(model: &DualEncoder, pairs: &[QaPair]) -> Result<f64, EncoderError> {
    if pairs.is_empty() {
        return Err(EncoderError::EmptyDataset);
    }
    accuracy_of(model, &prepare_examples(model, pairs)?)
}
