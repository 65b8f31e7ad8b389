//! The MRIF network.
//!
//! An item sequence is embedded ([`MrifModel::embed`]), passed through a
//! stack of causal transformer layers to extract per-step instantaneous
//! interests ([`MrifModel::extract_interests`]), then re-summarized by
//! sliding-window aggregation layers into progressively coarser temporal
//! resolutions ([`MrifModel::aggregate`]). Target-conditioned attention
//! fuses every resolution level into a single interest vector
//! ([`MrifModel::fuse`]) that scores candidate items by dot product.

mod aggregate;
mod checkpoint;
mod fusion;
mod transformer;

use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Graph, TensorError, TensorId};

/// Aggregator used by the sliding-window layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregatorKind {
    Mean,
    Max,
    Attn,
}

impl FromStr for AggregatorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean" | "avg" => Ok(Self::Mean),
            "max" => Ok(Self::Max),
            "attn" => Ok(Self::Attn),
            other => Err(format!("unknown aggregator `{other}` (expected mean|max|attn)")),
        }
    }
}

impl std::fmt::Display for AggregatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Mean => write!(f, "mean"),
            Self::Max => write!(f, "max"),
            Self::Attn => write!(f, "attn"),
        }
    }
}

/// Architecture hyperparameters.
///
/// `agg_layers == 0` drops every aggregation layer and leaves the
/// transformer-only ablation (fusion then attends over instantaneous
/// interests alone).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Item vocabulary size, including the reserved padding id 0.
    pub vocab_size: usize,
    /// Maximum sequence length n; longer histories keep the most recent n.
    pub max_seq_len: usize,
    /// Embedding width d.
    pub dim: usize,
    /// Attention heads h; must divide `dim`.
    pub heads: usize,
    /// Stacked transformer layers in the interest extractor.
    pub transformer_layers: usize,
    /// Number of aggregation layers L.
    pub agg_layers: usize,
    /// Half-window w per aggregation layer; window width k = 2w+1.
    pub half_window: usize,
    pub aggregator: AggregatorKind,
    /// Dropout keep probability in (0, 1].
    pub dropout_keep: f64,
}

impl ModelConfig {
    /// Defaults: n=50, d=64, h=2, two transformer layers, two aggregation
    /// layers with window 3, attentional aggregator, dropout keep 0.8.
    pub fn with_vocab(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            max_seq_len: 50,
            dim: 64,
            heads: 2,
            transformer_layers: 2,
            agg_layers: 2,
            half_window: 1,
            aggregator: AggregatorKind::Attn,
            dropout_keep: 0.8,
        }
    }

    pub fn window_width(&self) -> usize {
        2 * self.half_window + 1
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |msg: String| Err(ModelError::InvalidConfig(msg));
        if self.vocab_size < 2 {
            return fail(format!("vocab_size must be >= 2, got {}", self.vocab_size));
        }
        if self.dim < 2 {
            return fail(format!("dim must be >= 2, got {}", self.dim));
        }
        if self.heads == 0 || self.dim % self.heads != 0 {
            return fail(format!("heads ({}) must divide dim ({})", self.heads, self.dim));
        }
        if self.transformer_layers == 0 {
            return fail("transformer_layers must be >= 1".into());
        }
        if self.max_seq_len == 0 {
            return fail("max_seq_len must be >= 1".into());
        }
        if self.window_width() > self.max_seq_len {
            return fail(format!(
                "window {} exceeds max_seq_len {}",
                self.window_width(),
                self.max_seq_len
            ));
        }
        if !(self.dropout_keep > 0.0 && self.dropout_keep <= 1.0) {
            return fail(format!("dropout_keep must lie in (0, 1], got {}", self.dropout_keep));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("sequence contains the reserved padding id 0")]
    PaddingInSequence,

    #[error("sequence is entirely padding; nothing to fuse")]
    EmptySequence,

    #[error("target item must be a real item id (>= 1)")]
    PaddingTarget,

    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed checkpoint: {0}")]
    BadCheckpoint(String),

    #[error("checkpoint config mismatch: {0}")]
    ConfigMismatch(String),
}

// ── Parameter store ─────────────────────────────────────────────────────────

/// Handle to one named parameter tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

/// One learnable tensor: raw values live here between forward passes and are
/// bound into a fresh [`Graph`] per pass.
#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    /// Part of the interest extractor (embeddings + transformer); these are
    /// the weights withheld from updates when the extractor is frozen.
    pub extractor: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    fn push(&mut self, name: String, shape: Vec<usize>, values: Vec<f64>, extractor: bool) -> ParamId {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        self.entries.push(ParamEntry {
            name,
            shape,
            values,
            extractor,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamEntry> {
        self.entries.iter()
    }

    pub fn values_mut(&mut self, index: usize) -> &mut Vec<f64> {
        &mut self.entries[index].values
    }

    pub fn entry_at(&self, index: usize) -> &ParamEntry {
        &self.entries[index]
    }
}

// ── Model ───────────────────────────────────────────────────────────────────

/// Names of every weight tensor, resolved to parameter handles.
#[derive(Debug, Clone)]
struct Layout {
    item_embedding: ParamId,
    positional: ParamId,
    layers: Vec<TrmLayout>,
    agg_logits: Vec<ParamId>,
}

#[derive(Debug, Clone)]
struct TrmLayout {
    wq: Vec<ParamId>,
    wk: Vec<ParamId>,
    wv: Vec<ParamId>,
    out_proj: ParamId,
    ffn_w1: ParamId,
    ffn_b1: ParamId,
    ffn_w2: ParamId,
    ffn_b2: ParamId,
    ln1_gain: ParamId,
    ln1_bias: ParamId,
    ln2_gain: ParamId,
    ln2_bias: ParamId,
}

/// All learnable state plus the architecture config.
#[derive(Debug, Clone)]
pub struct MrifModel {
    pub config: ModelConfig,
    pub params: ParamStore,
    layout: Layout,
}

/// How parameters enter a graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BindMode {
    /// All parameters take gradients.
    Trainable,
    /// Embeddings and transformer weights are withheld from gradients;
    /// aggregator parameters still train.
    FrozenExtractor,
    /// Nothing takes gradients (evaluation).
    Inference,
}

/// Parameter tensors bound into one graph, aligned with the store.
pub struct Bound {
    ids: Vec<TensorId>,
}

impl Bound {
    fn id(&self, p: ParamId) -> TensorId {
        self.ids[p.0]
    }
}

/// The interest sequences H^0..H^L for one input sequence, plus its
/// validity mask. Every level has identical shape n×d; rows at padded
/// positions are pinned to zero at every level.
pub struct InterestStack {
    pub levels: Vec<TensorId>,
    pub mask: Vec<bool>,
}

impl MrifModel {
    /// Fresh model with small symmetric initialization: embeddings and
    /// projections uniform in ±0.5/√d, biases zero, layer-norm gain 1,
    /// aggregator attention logits zero (a uniform-window start). The
    /// padding embedding row is pinned to zero and never updated.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.dim;
        let dh = config.head_dim();
        let k = config.window_width();
        let bound = 0.5 / (d as f64).sqrt();
        let mut params = ParamStore::default();

        let uniform = |rng: &mut ChaCha8Rng, len: usize| -> Vec<f64> {
            (0..len).map(|_| rng.gen_range(-bound..bound)).collect()
        };

        let mut item = uniform(&mut rng, config.vocab_size * d);
        item[0..d].fill(0.0); // padding row
        let item_embedding = params.push("embed.item".into(), vec![config.vocab_size, d], item, true);
        let pos = uniform(&mut rng, config.max_seq_len * d);
        let positional = params.push("embed.pos".into(), vec![config.max_seq_len, d], pos, true);

        let mut layers = Vec::with_capacity(config.transformer_layers);
        for l in 0..config.transformer_layers {
            let mut wq = Vec::new();
            let mut wk = Vec::new();
            let mut wv = Vec::new();
            for h in 0..config.heads {
                let v = uniform(&mut rng, d * dh);
                wq.push(params.push(format!("trm{l}.head{h}.wq"), vec![d, dh], v, true));
                let v = uniform(&mut rng, d * dh);
                wk.push(params.push(format!("trm{l}.head{h}.wk"), vec![d, dh], v, true));
                let v = uniform(&mut rng, d * dh);
                wv.push(params.push(format!("trm{l}.head{h}.wv"), vec![d, dh], v, true));
            }
            let v = uniform(&mut rng, d * d);
            let out_proj = params.push(format!("trm{l}.out_proj"), vec![d, d], v, true);
            let v = uniform(&mut rng, d * d);
            let ffn_w1 = params.push(format!("trm{l}.ffn.w1"), vec![d, d], v, true);
            let ffn_b1 = params.push(format!("trm{l}.ffn.b1"), vec![d], vec![0.0; d], true);
            let v = uniform(&mut rng, d * d);
            let ffn_w2 = params.push(format!("trm{l}.ffn.w2"), vec![d, d], v, true);
            let ffn_b2 = params.push(format!("trm{l}.ffn.b2"), vec![d], vec![0.0; d], true);
            let ln1_gain = params.push(format!("trm{l}.ln1.gain"), vec![d], vec![1.0; d], true);
            let ln1_bias = params.push(format!("trm{l}.ln1.bias"), vec![d], vec![0.0; d], true);
            let ln2_gain = params.push(format!("trm{l}.ln2.gain"), vec![d], vec![1.0; d], true);
            let ln2_bias = params.push(format!("trm{l}.ln2.bias"), vec![d], vec![0.0; d], true);
            layers.push(TrmLayout {
                wq,
                wk,
                wv,
                out_proj,
                ffn_w1,
                ffn_b1,
                ffn_w2,
                ffn_b2,
                ln1_gain,
                ln1_bias,
                ln2_gain,
                ln2_bias,
            });
        }

        let mut agg_logits = Vec::new();
        if config.aggregator == AggregatorKind::Attn {
            for l in 0..config.agg_layers {
                agg_logits.push(params.push(format!("agg{l}.logits"), vec![1, k], vec![0.0; k], false));
            }
        }

        Ok(Self {
            config,
            params,
            layout: Layout {
                item_embedding,
                positional,
                layers,
                agg_logits,
            },
        })
    }

    /// Insert every parameter into `g` as a leaf tensor.
    pub fn bind(&self, g: &mut Graph, mode: BindMode) -> Bound {
        let ids = self
            .params
            .iter()
            .map(|p| {
                let requires_grad = match mode {
                    BindMode::Trainable => true,
                    BindMode::FrozenExtractor => !p.extractor,
                    BindMode::Inference => false,
                };
                g.tensor(p.values.clone(), p.shape.clone(), requires_grad)
                    .expect("stored parameter shapes are consistent")
            })
            .collect();
        Bound { ids }
    }

    /// Read gradients for every parameter out of a backpropagated graph.
    /// Entries without gradients (frozen or unused) are `None`.
    pub fn collect_grads(&self, g: &Graph, bound: &Bound) -> Vec<Option<Vec<f64>>> {
        bound
            .ids
            .iter()
            .map(|&id| g.grad(id).map(|s| s.to_vec()))
            .collect()
    }

    fn item_table(&self, bound: &Bound) -> TensorId {
        bound.id(self.layout.item_embedding)
    }

    fn positional(&self, bound: &Bound) -> TensorId {
        bound.id(self.layout.positional)
    }

    fn layer(&self, l: usize) -> &TrmLayout {
        &self.layout.layers[l]
    }

    fn agg_logit(&self, l: usize) -> Option<ParamId> {
        self.layout.agg_logits.get(l).copied()
    }

    /// Full forward to the interest stack: embed, extract instantaneous
    /// interests, then apply every aggregation layer.
    pub fn interest_stack<R: Rng>(
        &self,
        g: &mut Graph,
        bound: &Bound,
        sequence: &[u32],
        mode: crate::tensor::Mode,
        rng: &mut R,
    ) -> Result<InterestStack, ModelError> {
        let (embedded, mask) = self.embed(g, bound, sequence)?;
        let h0 = self.extract_interests(g, bound, embedded, &mask, mode, rng)?;
        let mut levels = vec![h0];
        for l in 0..self.config.agg_layers {
            let next = self.aggregate(g, bound, l, levels[l], &mask)?;
            levels.push(next);
        }
        Ok(InterestStack { levels, mask })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            vocab_size: 10,
            max_seq_len: 6,
            dim: 8,
            heads: 2,
            transformer_layers: 2,
            agg_layers: 2,
            half_window: 1,
            aggregator: AggregatorKind::Attn,
            dropout_keep: 1.0,
        }
    }

    #[test]
    fn config_validation_catches_bad_shapes() {
        let mut c = tiny_config();
        c.heads = 3; // does not divide 8
        assert!(c.validate().is_err());

        let mut c = tiny_config();
        c.half_window = 3; // window 7 > n 6
        assert!(c.validate().is_err());

        let mut c = tiny_config();
        c.dropout_keep = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn init_is_seed_deterministic() {
        let a = MrifModel::new(tiny_config(), 7).unwrap();
        let b = MrifModel::new(tiny_config(), 7).unwrap();
        for (pa, pb) in a.params.iter().zip(b.params.iter()) {
            assert_eq!(pa.name, pb.name);
            assert_eq!(pa.values, pb.values);
        }
        let c = MrifModel::new(tiny_config(), 8).unwrap();
        let differs = a
            .params
            .iter()
            .zip(c.params.iter())
            .any(|(x, y)| x.values != y.values);
        assert!(differs);
    }

    #[test]
    fn padding_embedding_row_is_zero() {
        let m = MrifModel::new(tiny_config(), 1).unwrap();
        let item = m.params.entry(m.layout.item_embedding);
        assert!(item.values[..m.config.dim].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn attn_logits_exist_only_for_attn_kind() {
        let mut c = tiny_config();
        c.aggregator = AggregatorKind::Mean;
        let m = MrifModel::new(c, 1).unwrap();
        assert!(m.layout.agg_logits.is_empty());

        let m = MrifModel::new(tiny_config(), 1).unwrap();
        assert_eq!(m.layout.agg_logits.len(), 2);
    }

    #[test]
    fn aggregator_kind_parses() {
        assert_eq!("mean".parse::<AggregatorKind>().unwrap(), AggregatorKind::Mean);
        assert_eq!("avg".parse::<AggregatorKind>().unwrap(), AggregatorKind::Mean);
        assert_eq!("max".parse::<AggregatorKind>().unwrap(), AggregatorKind::Max);
        assert_eq!("attn".parse::<AggregatorKind>().unwrap(), AggregatorKind::Attn);
        assert!("median".parse::<AggregatorKind>().is_err());
    }
}
