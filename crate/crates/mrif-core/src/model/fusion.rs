//! Target-conditioned fusion of the interest stack, candidate scoring, and
//! the per-position logits used by next-item pre-training.

use crate::tensor::{Graph, TensorId};

use super::{Bound, InterestStack, ModelError, MrifModel};

impl MrifModel {
    /// Fuse every resolution level into one width-d interest vector for a
    /// given target item: each level is attention-pooled over its valid
    /// positions with weights softmax(H^l · e_target), and the per-level
    /// summaries are summed.
    pub fn fuse(
        &self,
        g: &mut Graph,
        bound: &Bound,
        stack: &InterestStack,
        target: u32,
    ) -> Result<TensorId, ModelError> {
        if target == 0 {
            return Err(ModelError::PaddingTarget);
        }
        if !stack.mask.iter().any(|&m| m) {
            return Err(ModelError::EmptySequence);
        }
        let target_embedding = g.embedding_lookup(self.item_table(bound), &[target as usize])?;
        let target_col = g.transpose(target_embedding)?;

        let mut pooled = Vec::with_capacity(stack.levels.len());
        for &level in &stack.levels {
            let logits = g.matmul(level, target_col)?; // n×1
            let logits_row = g.transpose(logits)?; // 1×n
            let weights = g.softmax_rows(logits_row, Some(&stack.mask))?;
            pooled.push(g.matmul(weights, level)?); // 1×d
        }
        Ok(g.add_n(&pooled)?)
    }

    /// Raw preference logit for one candidate: the dot product of a fused
    /// interest vector with the candidate's embedding. The sigmoid is left
    /// to the loss / evaluation side.
    pub fn score(
        &self,
        g: &mut Graph,
        bound: &Bound,
        fused: TensorId,
        item: u32,
    ) -> Result<TensorId, ModelError> {
        let embedding = g.embedding_lookup(self.item_table(bound), &[item as usize])?;
        Ok(g.rows_dot(fused, embedding)?)
    }

    /// Per-position logits against per-position candidate items: position t
    /// scores `items[t]` as H^0_t · M[items[t]]. Slots holding the padding
    /// id yield logit 0 and are meant to be ignored by the caller.
    pub fn pretrain_logits(
        &self,
        g: &mut Graph,
        bound: &Bound,
        instantaneous: TensorId,
        items: &[u32],
    ) -> Result<TensorId, ModelError> {
        let indices: Vec<usize> = items.iter().map(|&i| i as usize).collect();
        let embeddings = g.embedding_lookup(self.item_table(bound), &indices)?;
        Ok(g.rows_dot(instantaneous, embeddings)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AggregatorKind, BindMode, ModelConfig};
    use crate::tensor::{Graph, Mode};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn config(n: usize, agg_layers: usize) -> ModelConfig {
        ModelConfig {
            vocab_size: 9,
            max_seq_len: n,
            dim: 4,
            heads: 2,
            transformer_layers: 1,
            agg_layers,
            half_window: 0,
            aggregator: AggregatorKind::Mean,
            dropout_keep: 1.0,
        }
    }

    /// Direct evaluation of the fusion rule from raw level values.
    fn fuse_oracle(levels: &[Vec<f64>], mask: &[bool], e: &[f64], d: usize) -> Vec<f64> {
        let mut out = vec![0.0; d];
        for level in levels {
            let n = level.len() / d;
            let logits: Vec<f64> = (0..n)
                .map(|i| (0..d).map(|c| level[i * d + c] * e[c]).sum())
                .collect();
            let max = logits
                .iter()
                .zip(mask)
                .filter(|(_, m)| **m)
                .map(|(l, _)| *l)
                .fold(f64::NEG_INFINITY, f64::max);
            let mut weights = vec![0.0; n];
            let mut z = 0.0;
            for i in 0..n {
                if mask[i] {
                    weights[i] = (logits[i] - max).exp();
                    z += weights[i];
                }
            }
            for i in 0..n {
                if mask[i] {
                    for c in 0..d {
                        out[c] += weights[i] / z * level[i * d + c];
                    }
                }
            }
        }
        out
    }

    #[test]
    fn fuse_single_valid_position_returns_that_row() {
        let m = MrifModel::new(config(3, 0), 2).unwrap();
        let mut g = Graph::new();
        let b = m.bind(&mut g, BindMode::Inference);
        let rows = vec![0.3, -0.2, 0.9, 0.1, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let h0 = g.tensor(rows.clone(), vec![3, 4], false).unwrap();
        let stack = InterestStack {
            levels: vec![h0],
            mask: vec![true, false, false],
        };
        let fused = m.fuse(&mut g, &b, &stack, 5).unwrap();
        assert_eq!(g.values(fused), &rows[..4]);
    }

    #[test]
    fn fuse_identical_rows_sums_levels() {
        let m = MrifModel::new(config(3, 0), 2).unwrap();
        let mut g = Graph::new();
        let b = m.bind(&mut g, BindMode::Inference);
        let v = [0.5, -1.0, 0.25, 2.0];
        let rows: Vec<f64> = v.repeat(3);
        let l0 = g.tensor(rows.clone(), vec![3, 4], false).unwrap();
        let l1 = g.tensor(rows.clone(), vec![3, 4], false).unwrap();
        let l2 = g.tensor(rows, vec![3, 4], false).unwrap();
        let stack = InterestStack {
            levels: vec![l0, l1, l2],
            mask: vec![true; 3],
        };
        let fused = m.fuse(&mut g, &b, &stack, 3).unwrap();
        for (a, e) in g.values(fused).iter().zip(v.iter()) {
            assert!((a - 3.0 * e).abs() < 1e-10);
        }
    }

    #[test]
    fn fuse_matches_direct_evaluation_oracle() {
        let m = MrifModel::new(config(2, 1), 7).unwrap();
        let d = m.config.dim;
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        for _ in 0..20 {
            let l0: Vec<f64> = (0..2 * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let l1: Vec<f64> = (0..2 * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let target = rng.gen_range(1..9u32);

            let mut g = Graph::new();
            let b = m.bind(&mut g, BindMode::Inference);
            let i0 = g.tensor(l0.clone(), vec![2, d], false).unwrap();
            let i1 = g.tensor(l1.clone(), vec![2, d], false).unwrap();
            let stack = InterestStack {
                levels: vec![i0, i1],
                mask: vec![true, true],
            };
            let fused = m.fuse(&mut g, &b, &stack, target).unwrap();

            let e = &m.params.entry_at(0).values
                [target as usize * d..(target as usize + 1) * d];
            let expected = fuse_oracle(&[l0, l1], &[true, true], e, d);
            for (a, x) in g.values(fused).iter().zip(&expected) {
                assert!((a - x).abs() < 1e-10, "{a} vs {x}");
            }
        }
    }

    #[test]
    fn fuse_rejects_empty_mask_and_padding_target() {
        let m = MrifModel::new(config(2, 0), 0).unwrap();
        let mut g = Graph::new();
        let b = m.bind(&mut g, BindMode::Inference);
        let h = g.tensor(vec![0.0; 8], vec![2, 4], false).unwrap();
        let stack = InterestStack {
            levels: vec![h],
            mask: vec![false, false],
        };
        assert!(matches!(
            m.fuse(&mut g, &b, &stack, 1),
            Err(ModelError::EmptySequence)
        ));
        let stack = InterestStack {
            levels: vec![h],
            mask: vec![true, false],
        };
        assert!(matches!(
            m.fuse(&mut g, &b, &stack, 0),
            Err(ModelError::PaddingTarget)
        ));
    }

    #[test]
    fn score_is_a_dot_product() {
        let m = MrifModel::new(config(2, 0), 1).unwrap();
        let d = m.config.dim;
        let mut g = Graph::new();
        let b = m.bind(&mut g, BindMode::Inference);

        // zero interest vector -> logit 0 regardless of the item
        let zero = g.tensor(vec![0.0; d], vec![1, d], false).unwrap();
        let s = m.score(&mut g, &b, zero, 4).unwrap();
        assert_eq!(g.values(s), &[0.0]);

        // random vector -> independently computed dot product
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let hv: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let h = g.tensor(hv.clone(), vec![1, d], false).unwrap();
        let s = m.score(&mut g, &b, h, 6).unwrap();
        let e = &m.params.entry_at(0).values[6 * d..7 * d];
        let expected: f64 = hv.iter().zip(e).map(|(a, b)| a * b).sum();
        assert!((g.scalar_value(s) - expected).abs() < 1e-12);
    }

    #[test]
    fn pretrain_logits_follow_definition() {
        let m = MrifModel::new(config(3, 0), 5).unwrap();
        let d = m.config.dim;
        let mut g = Graph::new();
        let b = m.bind(&mut g, BindMode::Inference);
        let (e, mask) = m.embed(&mut g, &b, &[2, 7]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let h0 = m
            .extract_interests(&mut g, &b, e, &mask, Mode::Eval, &mut rng)
            .unwrap();
        // position 0 predicts the item actually observed at position 1
        let logits = m.pretrain_logits(&mut g, &b, h0, &[7, 0, 0]).unwrap();
        let h_row = &g.values(h0)[..d];
        let emb = &m.params.entry_at(0).values[7 * d..8 * d];
        let expected: f64 = h_row.iter().zip(emb).map(|(a, b)| a * b).sum();
        assert!((g.values(logits)[0] - expected).abs() < 1e-12);
        // padding slots contribute zero logits
        assert_eq!(&g.values(logits)[1..], &[0.0, 0.0]);
    }
}
