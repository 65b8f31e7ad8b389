//! Negative-sampled ranking evaluation.
//!
//! Each user's held-out item is scored against that user's fixed sampled
//! negatives; ranks feed HR@k, NDCG@k and MRR, and the score sets feed two
//! AUC flavours: `auc` pools every positive against every negative across
//! users (single-ROC convention), while `gauc` averages per-user AUCs
//! weighted by per-user sample count. Ranks use the pessimistic tie rule —
//! the positive is placed after every equal-scored negative — while AUC
//! counts ties as one half, per the Mann-Whitney definition.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::SequenceDataset;
use crate::model::{BindMode, ModelConfig, ModelError, MrifModel};
use crate::tensor::{Graph, Mode};
use crate::train::TrainConfig;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("non-finite score for user {user}")]
    NonFiniteScore { user: String },

    #[error(transparent)]
    Model(#[from] ModelError),
}

// ── Rank and metric primitives ──────────────────────────────────────────────

/// Rank of the positive among positive + negatives, pessimistic ties:
/// 1 + #{negatives scoring higher} + #{negatives scoring equal}.
pub fn rank_positive(pos_score: f64, neg_scores: &[f64]) -> Result<usize, EvalError> {
    if !pos_score.is_finite() || neg_scores.iter().any(|s| !s.is_finite()) {
        return Err(EvalError::NonFiniteScore {
            user: "<unknown>".into(),
        });
    }
    let higher = neg_scores.iter().filter(|&&s| s > pos_score).count();
    let equal = neg_scores.iter().filter(|&&s| s == pos_score).count();
    Ok(1 + higher + equal)
}

/// AUC of one positive against its negatives: (#below + ties/2) / #negatives.
pub fn per_user_auc(pos_score: f64, neg_scores: &[f64]) -> f64 {
    let below = neg_scores.iter().filter(|&&s| s < pos_score).count() as f64;
    let ties = neg_scores.iter().filter(|&&s| s == pos_score).count() as f64;
    (below + 0.5 * ties) / neg_scores.len() as f64
}

/// Pooled AUC over all positives vs all negatives, computed from midranks
/// (equivalent to counting every (pos, neg) pair with ties worth one half).
pub fn pooled_auc(pos_scores: &[f64], neg_scores: &[f64]) -> f64 {
    let p = pos_scores.len();
    let n = neg_scores.len();
    if p == 0 || n == 0 {
        return 0.5;
    }
    let mut scored: Vec<(f64, bool)> = pos_scores
        .iter()
        .map(|&s| (s, true))
        .chain(neg_scores.iter().map(|&s| (s, false)))
        .collect();
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite scores"));

    let mut rank_sum_pos = 0.0;
    let mut index = 0usize;
    while index < scored.len() {
        let mut end = index;
        while end + 1 < scored.len() && scored[end + 1].0 == scored[index].0 {
            end += 1;
        }
        // ranks are 1-based; tied block shares the midrank
        let midrank = (index + 1 + end + 1) as f64 / 2.0;
        for item in &scored[index..=end] {
            if item.1 {
                rank_sum_pos += midrank;
            }
        }
        index = end + 1;
    }
    (rank_sum_pos - (p * (p + 1)) as f64 / 2.0) / (p as f64 * n as f64)
}

pub fn hr_at_k(ranks: &[usize], k: usize) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64
}

pub fn ndcg_at_k(ranks: &[usize], k: usize) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    let sum: f64 = ranks
        .iter()
        .map(|&r| {
            if r <= k {
                1.0 / ((r + 1) as f64).log2()
            } else {
                0.0
            }
        })
        .sum();
    sum / ranks.len() as f64
}

pub fn mrr(ranks: &[usize]) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / ranks.len() as f64
}

// ── Scorers ─────────────────────────────────────────────────────────────────

/// Anything that can score candidate items against a user history. Scoring
/// must be pure so users can be evaluated in parallel.
pub trait CandidateScorer: Sync {
    fn scores(&self, history: &[u32], candidates: &[u32]) -> Result<Vec<f64>, ModelError>;
}

impl CandidateScorer for MrifModel {
    fn scores(&self, history: &[u32], candidates: &[u32]) -> Result<Vec<f64>, ModelError> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, BindMode::Inference);
        // eval mode never touches the RNG; any seed works
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let stack = self.interest_stack(&mut g, &bound, history, Mode::Eval, &mut rng)?;
        candidates
            .iter()
            .map(|&candidate| {
                let fused = self.fuse(&mut g, &bound, &stack, candidate)?;
                let logit = self.score(&mut g, &bound, fused, candidate)?;
                Ok(g.scalar_value(logit))
            })
            .collect()
    }
}

use rand::SeedableRng;

/// Popularity baseline: a candidate's score is its interaction count in the
/// training sequences. No user-side information at all.
#[derive(Debug, Clone)]
pub struct PopScorer {
    counts: Vec<f64>,
}

impl PopScorer {
    pub fn fit(dataset: &SequenceDataset) -> Self {
        let mut counts = vec![0.0; dataset.vocab_size()];
        for user in &dataset.users {
            for &item in &user.train {
                counts[item as usize] += 1.0;
            }
        }
        Self { counts }
    }
}

impl CandidateScorer for PopScorer {
    fn scores(&self, _history: &[u32], candidates: &[u32]) -> Result<Vec<f64>, ModelError> {
        Ok(candidates
            .iter()
            .map(|&c| self.counts[c as usize])
            .collect())
    }
}

// ── Report ──────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserResult {
    pub user: String,
    pub positive_score: f64,
    pub negative_scores: Vec<f64>,
    pub rank: usize,
    pub auc: f64,
}

/// Identifies a run; embedded in every report for traceability.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub dataset_seed: u64,
    pub run_seed: u64,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub num_users: usize,
    /// Pooled single-ROC AUC over all users' scores jointly.
    pub auc: f64,
    /// Per-user AUC averaged with sample-count weights.
    pub gauc: f64,
    pub hr_at_5: f64,
    pub hr_at_10: f64,
    pub ndcg_at_5: f64,
    pub ndcg_at_10: f64,
    pub mrr: f64,
    pub meta: ReportMeta,
    pub per_user: Vec<UserResult>,
}

impl EvalReport {
    /// Metric names in reporting order, shared by tables and summaries.
    pub const METRICS: [&'static str; 7] =
        ["AUC", "GAUC", "HIT@5", "HIT@10", "NDCG@5", "NDCG@10", "MRR"];

    pub fn metric_values(&self) -> [f64; 7] {
        [
            self.auc,
            self.gauc,
            self.hr_at_5,
            self.hr_at_10,
            self.ndcg_at_5,
            self.ndcg_at_10,
            self.mrr,
        ]
    }

    /// Aligned two-column plain-text table of the aggregate metrics.
    pub fn table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:<10} {:>8}\n", "Metric", "Value"));
        for (name, value) in Self::METRICS.iter().zip(self.metric_values()) {
            out.push_str(&format!("{name:<10} {value:>8.4}\n"));
        }
        out
    }
}

/// Hash of the full run configuration, for report traceability.
pub fn config_hash(model: &ModelConfig, train: &TrainConfig) -> String {
    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_vec(model).expect("config serializes"));
    hasher.update(serde_json::to_vec(train).expect("config serializes"));
    let digest = hasher.finalize();
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Rank every user's held-out item against their evaluation negatives and
/// aggregate. Scoring runs per user in parallel; the reduction order is
/// fixed by user index, so results are deterministic.
pub fn evaluate<S: CandidateScorer>(
    scorer: &S,
    dataset: &SequenceDataset,
    meta: ReportMeta,
) -> Result<EvalReport, EvalError> {
    let per_user: Vec<UserResult> = dataset
        .users
        .par_iter()
        .enumerate()
        .map(|(index, user)| {
            let mut candidates = Vec::with_capacity(1 + user.eval_negatives.len());
            candidates.push(user.heldout);
            candidates.extend_from_slice(&user.eval_negatives);
            let scores = scorer.scores(&user.train, &candidates)?;
            let name = dataset.user_ids[index].clone();
            if scores.iter().any(|s| !s.is_finite()) {
                return Err(EvalError::NonFiniteScore { user: name });
            }
            let positive_score = scores[0];
            let negative_scores = scores[1..].to_vec();
            let rank = rank_positive(positive_score, &negative_scores)?;
            let auc = per_user_auc(positive_score, &negative_scores);
            Ok(UserResult {
                user: name,
                positive_score,
                negative_scores,
                rank,
                auc,
            })
        })
        .collect::<Result<_, EvalError>>()?;

    let ranks: Vec<usize> = per_user.iter().map(|u| u.rank).collect();
    let pos_scores: Vec<f64> = per_user.iter().map(|u| u.positive_score).collect();
    let neg_scores: Vec<f64> = per_user
        .iter()
        .flat_map(|u| u.negative_scores.iter().copied())
        .collect();

    let total_weight: f64 = per_user
        .iter()
        .map(|u| (u.negative_scores.len() + 1) as f64)
        .sum();
    let gauc = per_user
        .iter()
        .map(|u| u.auc * (u.negative_scores.len() + 1) as f64)
        .sum::<f64>()
        / total_weight.max(1.0);

    Ok(EvalReport {
        num_users: per_user.len(),
        auc: pooled_auc(&pos_scores, &neg_scores),
        gauc,
        hr_at_5: hr_at_k(&ranks, 5),
        hr_at_10: hr_at_k(&ranks, 10),
        ndcg_at_5: ndcg_at_k(&ranks, 5),
        ndcg_at_10: ndcg_at_k(&ranks, 10),
        mrr: mrr(&ranks),
        meta,
        per_user,
    })
}
