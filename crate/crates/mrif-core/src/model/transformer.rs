//! Embedding and the causal transformer interest extractor.

use rand::Rng;

use crate::tensor::{Graph, Mode, TensorId};

use super::{Bound, ModelError, MrifModel};

impl MrifModel {
    /// Embed an item sequence into an n×d matrix plus validity mask.
    ///
    /// The sequence is right-padded with the reserved id 0; sequences longer
    /// than n keep the most recent n items. Rows at padded positions are
    /// fully zero — the positional embedding is only added at real
    /// positions — so downstream windows treat padding exactly like the
    /// out-of-range boundary.
    pub fn embed(
        &self,
        g: &mut Graph,
        bound: &Bound,
        sequence: &[u32],
    ) -> Result<(TensorId, Vec<bool>), ModelError> {
        let n = self.config.max_seq_len;
        if sequence.contains(&0) {
            return Err(ModelError::PaddingInSequence);
        }
        let start = sequence.len().saturating_sub(n);
        let tail = &sequence[start..];

        let mut indices = vec![0usize; n];
        let mut mask = vec![false; n];
        for (t, &item) in tail.iter().enumerate() {
            indices[t] = item as usize;
            mask[t] = true;
        }

        let items = g.embedding_lookup(self.item_table(bound), &indices)?;
        let with_pos = g.add(items, self.positional(bound))?;
        let embedded = g.mask_rows(with_pos, &mask)?;
        Ok((embedded, mask))
    }

    /// One transformer layer: multi-head scaled dot-product self-attention
    /// with residual, dropout and layer norm, then a two-layer ReLU
    /// feed-forward block with the same treatment. Attention logits to
    /// padded positions are masked out; `causal` additionally hides every
    /// position after the query. Padded output rows are re-zeroed.
    pub fn transformer_layer<R: Rng>(
        &self,
        g: &mut Graph,
        bound: &Bound,
        layer: usize,
        x: TensorId,
        mask: &[bool],
        causal: bool,
        mode: Mode,
        rng: &mut R,
    ) -> Result<TensorId, ModelError> {
        let n = self.config.max_seq_len;
        let keep = self.config.dropout_keep;
        let weights = self.layer(layer);

        let mut attn_mask = vec![false; n * n];
        for i in 0..n {
            for j in 0..n {
                attn_mask[i * n + j] = mask[j] && (!causal || j <= i);
            }
        }

        let scaling = 1.0 / (self.config.head_dim() as f64).sqrt();
        let mut head_outputs = Vec::with_capacity(self.config.heads);
        for h in 0..self.config.heads {
            let q = g.matmul(x, bound.id(weights.wq[h]))?;
            let k = g.matmul(x, bound.id(weights.wk[h]))?;
            let v = g.matmul(x, bound.id(weights.wv[h]))?;
            let kt = g.transpose(k)?;
            let logits = g.matmul(q, kt)?;
            let scaled = g.scale(logits, scaling);
            let attn = g.softmax_rows(scaled, Some(&attn_mask))?;
            head_outputs.push(g.matmul(attn, v)?);
        }
        let multi_head = g.concat_cols(&head_outputs)?;
        let projected = g.matmul(multi_head, bound.id(weights.out_proj))?;

        let dropped = g.dropout(projected, keep, mode, rng)?;
        let residual = g.add(dropped, x)?;
        let sa = g.layer_norm(residual, bound.id(weights.ln1_gain), bound.id(weights.ln1_bias))?;

        let f1 = g.matmul(sa, bound.id(weights.ffn_w1))?;
        let f1 = g.add_bias(f1, bound.id(weights.ffn_b1))?;
        let f1 = g.relu(f1);
        let f2 = g.matmul(f1, bound.id(weights.ffn_w2))?;
        let f2 = g.add_bias(f2, bound.id(weights.ffn_b2))?;

        let dropped = g.dropout(f2, keep, mode, rng)?;
        let residual = g.add(dropped, sa)?;
        let out = g.layer_norm(residual, bound.id(weights.ln2_gain), bound.id(weights.ln2_bias))?;
        Ok(g.mask_rows(out, mask)?)
    }

    /// Instantaneous interests H^0: the stacked causal transformer layers
    /// applied to an embedded sequence.
    pub fn extract_interests<R: Rng>(
        &self,
        g: &mut Graph,
        bound: &Bound,
        embedded: TensorId,
        mask: &[bool],
        mode: Mode,
        rng: &mut R,
    ) -> Result<TensorId, ModelError> {
        let mut x = embedded;
        for layer in 0..self.config.transformer_layers {
            x = self.transformer_layer(g, bound, layer, x, mask, true, mode, rng)?;
        }
        Ok(x)
    }
}
