//! Sliding-window interest aggregation.
//!
//! Each aggregation layer slides a width-k window (k = 2w+1) one step at a
//! time over the previous interest sequence and pools every window into one
//! vector, producing the next, coarser, resolution level. Positions outside
//! the sequence contribute zero vectors; padded positions hold zero rows by
//! construction, so the boundary rule and padding behave identically.

use crate::tensor::{Graph, TensorId};

use super::{AggregatorKind, Bound, ModelError, MrifModel};

impl MrifModel {
    /// Apply aggregation layer `level` to an n×d interest sequence.
    ///
    /// Mean pools to the window average; max selects the window member with
    /// the largest Euclidean norm (ties to the earliest slot); attn takes a
    /// softmax-weighted combination using that layer's learned per-slot
    /// logits. Output rows at padded positions are zeroed.
    pub fn aggregate(
        &self,
        g: &mut Graph,
        bound: &Bound,
        level: usize,
        interests: TensorId,
        mask: &[bool],
    ) -> Result<TensorId, ModelError> {
        let w = self.config.half_window;
        let pooled = match self.config.aggregator {
            AggregatorKind::Mean => g.window_mean(interests, w)?,
            AggregatorKind::Max => g.window_max_norm(interests, w)?,
            AggregatorKind::Attn => {
                let logits = bound.id(
                    self.agg_logit(level)
                        .expect("attn aggregator always allocates per-layer logits"),
                );
                let weights = g.softmax_rows(logits, None)?;
                g.window_weighted(interests, weights, w)?
            }
        };
        Ok(g.mask_rows(pooled, mask)?)
    }
}
