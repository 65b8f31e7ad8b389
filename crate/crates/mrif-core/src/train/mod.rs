//! Two-phase optimization.
//!
//! Phase 1 ([`pretrain`]) teaches the extractor next-item prediction: every
//! position with a successor contributes one paired loss term against a
//! freshly sampled negative. Phase 2 ([`train_full`]) trains the whole
//! network through fusion: per user per epoch, the last training item is the
//! positive target, the preceding items are the history, and one negative is
//! resampled from outside the user's sequence.

mod adam;

pub use adam::AdamState;


use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{sample_train_negative, SequenceDataset};
use crate::eval::rank_positive;
use crate::model::{BindMode, ModelError, MrifModel};
use crate::tensor::{Graph, Mode, TensorError, TensorId};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite gradient in parameter {param}; halting")]
    NonFiniteGradient { param: String },

    #[error(transparent)]
    Model(#[from] ModelError),

    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("invalid train config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub pretrain_epochs: usize,
    pub train_epochs: usize,
    /// Adaptive-moment coefficients (first, second).
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Withhold embedding/transformer gradients during phase 2.
    pub freeze_extractor: bool,
    /// Stop phase 2 when validation HR@10 (ranking the last training item
    /// from its prefix against the evaluation negatives) stops improving.
    pub early_stop: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 32,
            pretrain_epochs: 20,
            train_epochs: 20,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 42,
            freeze_extractor: false,
            early_stop: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.lr > 0.0) {
            return Err(TrainError::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub phase: String,
    pub epoch: usize,
    pub loss: f64,
    pub elapsed: f64,
}

/// Paired binary cross-entropy over one positive and one negative logit,
/// in overflow-safe softplus form: softplus(-pos) + softplus(neg).
pub fn bce_pair_loss(
    g: &mut Graph,
    pos: TensorId,
    neg: TensorId,
) -> Result<TensorId, TensorError> {
    let negated = g.negate(pos);
    let pos_term = g.softplus(negated);
    let neg_term = g.softplus(neg);
    g.add(pos_term, neg_term)
}

const PRETRAIN_SALT: u64 = 0x5eed_0001;
const TRAIN_SALT: u64 = 0x5eed_0002;

/// Phase 1: next-item pre-training of embeddings and transformer layers.
/// Zero epochs leave the model untouched.
pub fn pretrain(
    model: &mut MrifModel,
    dataset: &SequenceDataset,
    config: &TrainConfig,
    sink: &mut dyn FnMut(&EpochRecord),
) -> Result<(), TrainError> {
    config.validate()?;
    if config.pretrain_epochs == 0 {
        return Ok(());
    }
    let mut adam = AdamState::new(model);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(PRETRAIN_SALT));
    let vocab = dataset.vocab_size();

    for epoch in 1..=config.pretrain_epochs {
        let start = Instant::now();
        let mut order: Vec<usize> = (0..dataset.users.len()).collect();
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        let mut pair_count = 0usize;
        for batch in order.chunks(config.batch_size) {
            let mut g = Graph::new();
            let bound = model.bind(&mut g, BindMode::Trainable);
            let mut losses = Vec::new();

            for &user_index in batch {
                let user = &dataset.users[user_index];
                if user.train.len() < 2 {
                    continue; // no (position, successor) pair to learn from
                }
                let n = model.config.max_seq_len;
                let start_at = user.train.len().saturating_sub(n);
                let window = &user.train[start_at..];
                let excluded = user.full_item_set();

                let mut positives = vec![0u32; n];
                let mut negatives = vec![0u32; n];
                let mut active = Vec::new();
                for t in 0..window.len().saturating_sub(1) {
                    positives[t] = window[t + 1];
                    negatives[t] = sample_train_negative(&excluded, vocab, &mut rng);
                    active.push(t);
                }

                let (embedded, mask) = model.embed(&mut g, &bound, window)?;
                let h0 =
                    model.extract_interests(&mut g, &bound, embedded, &mask, Mode::Train, &mut rng)?;
                let pos_logits = model.pretrain_logits(&mut g, &bound, h0, &positives)?;
                let neg_logits = model.pretrain_logits(&mut g, &bound, h0, &negatives)?;

                for &t in &active {
                    let pos = g.element(pos_logits, t)?;
                    let neg = g.element(neg_logits, t)?;
                    losses.push(bce_pair_loss(&mut g, pos, neg)?);
                }
                pair_count += active.len();
            }

            if losses.is_empty() {
                continue;
            }
            let batch_loss = g.add_n(&losses)?;
            loss_sum += g.scalar_value(batch_loss);
            g.backward(batch_loss)?;
            let grads = model.collect_grads(&g, &bound);
            adam.apply(
                &mut model.params,
                &grads,
                config.lr,
                config.beta1,
                config.beta2,
                config.adam_eps,
            )?;
        }

        sink(&EpochRecord {
            phase: "pretrain".into(),
            epoch,
            loss: loss_sum / pair_count.max(1) as f64,
            elapsed: start.elapsed().as_secs_f64(),
        });
    }
    Ok(())
}

/// Phase 2: full-model training through fusion and scoring.
pub fn train_full(
    model: &mut MrifModel,
    dataset: &SequenceDataset,
    config: &TrainConfig,
    sink: &mut dyn FnMut(&EpochRecord),
) -> Result<(), TrainError> {
    config.validate()?;
    if config.train_epochs == 0 {
        return Ok(());
    }
    let bind_mode = if config.freeze_extractor {
        BindMode::FrozenExtractor
    } else {
        BindMode::Trainable
    };
    let mut adam = AdamState::new(model);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(TRAIN_SALT));
    let vocab = dataset.vocab_size();
    let mut best_validation = f64::NEG_INFINITY;
    let mut stalled_checks = 0usize;

    for epoch in 1..=config.train_epochs {
        let start = Instant::now();
        let mut order: Vec<usize> = (0..dataset.users.len()).collect();
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        let mut user_count = 0usize;
        for batch in order.chunks(config.batch_size) {
            let mut g = Graph::new();
            let bound = model.bind(&mut g, bind_mode);
            let mut losses = Vec::new();

            for &user_index in batch {
                let user = &dataset.users[user_index];
                if user.train.len() < 2 {
                    continue; // needs a non-empty history plus a target
                }
                let history = &user.train[..user.train.len() - 1];
                let positive = *user.train.last().unwrap();
                let negative = sample_train_negative(&user.full_item_set(), vocab, &mut rng);

                let stack = model.interest_stack(&mut g, &bound, history, Mode::Train, &mut rng)?;
                let fused_pos = model.fuse(&mut g, &bound, &stack, positive)?;
                let pos_logit = model.score(&mut g, &bound, fused_pos, positive)?;
                let fused_neg = model.fuse(&mut g, &bound, &stack, negative)?;
                let neg_logit = model.score(&mut g, &bound, fused_neg, negative)?;
                losses.push(bce_pair_loss(&mut g, pos_logit, neg_logit)?);
                user_count += 1;
            }

            if losses.is_empty() {
                continue;
            }
            let batch_loss = g.add_n(&losses)?;
            loss_sum += g.scalar_value(batch_loss);
            g.backward(batch_loss)?;
            let grads = model.collect_grads(&g, &bound);
            adam.apply(
                &mut model.params,
                &grads,
                config.lr,
                config.beta1,
                config.beta2,
                config.adam_eps,
            )?;
        }

        sink(&EpochRecord {
            phase: "train".into(),
            epoch,
            loss: loss_sum / user_count.max(1) as f64,
            elapsed: start.elapsed().as_secs_f64(),
        });

        if config.early_stop {
            let hr = validation_hr_at_10(model, dataset)?;
            if hr > best_validation {
                best_validation = hr;
                stalled_checks = 0;
            } else {
                stalled_checks += 1;
                if stalled_checks >= 2 {
                    break;
                }
            }
        }
    }
    Ok(())
}

/// HR@10 ranking each user's last training item (the penultimate item of the
/// full sequence) from its prefix, against the evaluation negatives.
fn validation_hr_at_10(
    model: &MrifModel,
    dataset: &SequenceDataset,
) -> Result<f64, TrainError> {
    let mut hits = 0usize;
    let mut total = 0usize;
    for user in &dataset.users {
        if user.train.len() < 2 {
            continue;
        }
        let history = &user.train[..user.train.len() - 1];
        let positive = *user.train.last().unwrap();

        let mut g = Graph::new();
        let bound = model.bind(&mut g, BindMode::Inference);
        let mut rng = ChaCha8Rng::seed_from_u64(0); // eval mode draws nothing
        let stack = model.interest_stack(&mut g, &bound, history, Mode::Eval, &mut rng)?;
        let score_item = |g: &mut Graph, item: u32| -> Result<f64, TrainError> {
            let fused = model.fuse(g, &bound, &stack, item)?;
            let logit = model.score(g, &bound, fused, item)?;
            Ok(g.scalar_value(logit))
        };
        let pos_score = score_item(&mut g, positive)?;
        let mut neg_scores = Vec::with_capacity(user.eval_negatives.len());
        for &neg in &user.eval_negatives {
            neg_scores.push(score_item(&mut g, neg)?);
        }
        let rank = rank_positive(pos_score, &neg_scores)
            .map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
        if rank <= 10 {
            hits += 1;
        }
        total += 1;
    }
    Ok(hits as f64 / total.max(1) as f64)
}
