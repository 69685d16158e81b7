use serde::{Deserialize, Serialize};

use super::{LayerKind, ModelSpec};

/// Number of time-replicated uses of each parameter per output frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShareCounts {
    counts: Vec<u64>,
}

impl ShareCounts {
    pub fn new(counts: Vec<u64>) -> Self {
        assert!(counts.iter().all(|&c| c >= 1), "share counts must be >= 1");
        Self { counts }
    }

    pub fn ones(len: usize) -> Self {
        Self {
            counts: vec![1; len],
        }
    }

    pub fn as_slice(&self) -> &[u64] {
        &self.counts
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn any_shared(&self) -> bool {
        self.counts.iter().any(|&c| c > 1)
    }
}

/// How many copies of layer `l`'s output a consumer layer reads per frame.
fn fan_in(kind: LayerKind, splice: usize, unfold: usize) -> u64 {
    match kind {
        LayerKind::FullyConnected => 1,
        LayerKind::TdnnSplice => splice as u64,
        LayerKind::Recurrent | LayerKind::Lstm => unfold as u64,
    }
}

/// Share counts of every parameter: a layer's own replication (the unfold
/// length for recurrent kinds) times the number of copies of it that the
/// layers above consume when their splicing and unfolding are expanded into
/// a feed-forward graph.
pub fn share_counts(model: &ModelSpec) -> ShareCounts {
    let n = model.layers.len();
    let mut downstream = vec![1u64; n];
    for l in (0..n.saturating_sub(1)).rev() {
        let above = &model.layers[l + 1];
        downstream[l] =
            downstream[l + 1] * fan_in(above.kind, above.splice_offsets.len(), above.unfold_steps);
    }
    let mut counts = Vec::with_capacity(model.num_params());
    for ((layer, lay), down) in model.layers.iter().zip(model.layouts()).zip(downstream) {
        let own = if layer.is_recurrent() {
            layer.unfold_steps as u64
        } else {
            1
        };
        counts.extend(std::iter::repeat_n(own * down, lay.len()));
    }
    ShareCounts { counts }
}
