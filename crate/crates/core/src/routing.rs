//! Next-node selection for the traveling model.
//!
//! The dynamic policy keeps a ledger of how many samples of each label the
//! model has been trained on and, at every hand-off, picks the node whose
//! expected contribution over the next visit leaves that ledger closest to
//! uniform (smallest population variance). Static policies cycle through a
//! fixed permutation; the random policy picks a uniformly random neighbor.

use rand::Rng;

use crate::datasets::LabelHistogram;
use crate::error::{Error, Result};
use crate::partition::DatasetShard;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoutingConfig {
    pub batch_size: usize,
    /// Minibatch updates per visit.
    pub interval: usize,
}

impl RoutingConfig {
    pub fn new(batch_size: usize, interval: usize) -> Result<Self> {
        if batch_size == 0 || interval == 0 {
            return Err(Error::arg(
                "batch size and transmission interval must be >= 1",
            ));
        }
        Ok(Self {
            batch_size,
            interval,
        })
    }

    fn samples_per_visit(&self) -> f64 {
        (self.batch_size * self.interval) as f64
    }
}

/// Population variance of the histogram entries.
pub fn dispersion(h: &LabelHistogram) -> Result<f64> {
    if h.is_empty() {
        return Err(Error::arg("dispersion of an empty histogram"));
    }
    let n = h.len() as f64;
    let mean = h.total() / n;
    Ok(h.counts().iter().map(|c| (c - mean).powi(2)).sum::<f64>() / n)
}

/// Label counts a visit to `shard` is expected to consume:
/// `(batch_size * interval / N) * L`.
pub fn expected_usage(shard: &DatasetShard, cfg: &RoutingConfig) -> Result<LabelHistogram> {
    if shard.total == 0 {
        return Err(Error::arg(format!(
            "node {} holds no samples",
            shard.node_id
        )));
    }
    Ok(shard
        .hist
        .scaled(cfg.samples_per_visit() / shard.total as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoutingState {
    /// Cumulative per-label count of samples the model has trained on.
    pub cumulative: LabelHistogram,
    /// Completed visits.
    pub round: usize,
    pub holder: usize,
}

impl RoutingState {
    pub fn new(num_classes: usize, holder: usize) -> Self {
        Self {
            cumulative: LabelHistogram::zeros(num_classes),
            round: 0,
            holder,
        }
    }

    /// Add the realized label counts of one trained batch.
    pub fn update_ledger(&mut self, batch_counts: &LabelHistogram) -> Result<()> {
        self.cumulative = self.cumulative.checked_add(batch_counts)?;
        Ok(())
    }

    /// Close the current visit and hand the model to `next`.
    pub fn complete_visit(&mut self, next: usize) {
        self.round += 1;
        self.holder = next;
    }
}

/// Scores closer than this (relative) count as ties. Mathematically equal
/// scores can differ in the last bits when the same counts are summed in a
/// different label order.
pub const TIE_TOLERANCE: f64 = 1e-9;

/// Argmin over nonempty shards of the ledger variance after adding that
/// shard's expected usage. The current holder is a candidate; ties go to
/// the lowest node index.
pub fn select_next_dynamic(
    state: &RoutingState,
    shards: &[DatasetShard],
    cfg: &RoutingConfig,
) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (j, shard) in shards.iter().enumerate() {
        if shard.total == 0 {
            continue;
        }
        let projected = state.cumulative.checked_add(&expected_usage(shard, cfg)?)?;
        let score = dispersion(&projected)?;
        if best.is_none_or(|(_, s)| score < s - TIE_TOLERANCE * s.abs().max(1.0)) {
            best = Some((j, score));
        }
    }
    best.map(|(j, _)| j)
        .ok_or_else(|| Error::state("every shard is empty; no node can receive the model"))
}

/// A fixed cyclic visiting order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StaticRoute {
    order: Vec<usize>,
    position: usize,
}

impl StaticRoute {
    /// `order` must be a permutation of `0..order.len()`.
    pub fn new(order: Vec<usize>) -> Result<Self> {
        validate_permutation(&order, order.len())?;
        Ok(Self { order, position: 0 })
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn position(&self) -> usize {
        self.position
    }

    pub fn current(&self) -> usize {
        self.order[self.position]
    }

    /// Move the cursor onto `node`.
    pub fn start_at(&mut self, node: usize) -> Result<()> {
        self.position = self
            .order
            .iter()
            .position(|&n| n == node)
            .ok_or_else(|| Error::arg(format!("node {node} is not on the route")))?;
        Ok(())
    }

    pub fn with_position(mut self, position: usize) -> Result<Self> {
        if position >= self.order.len() {
            return Err(Error::arg("route position out of range"));
        }
        self.position = position;
        Ok(self)
    }

    /// Node after the cursor, wrapping around; advances the cursor.
    pub fn next_static(&mut self) -> usize {
        self.position = (self.position + 1) % self.order.len();
        self.order[self.position]
    }
}

pub fn validate_permutation(order: &[usize], nodes: usize) -> Result<()> {
    if order.len() != nodes {
        return Err(Error::arg(format!(
            "not a permutation: route has {} entries for {nodes} nodes",
            order.len()
        )));
    }
    let mut seen = vec![false; nodes];
    for &n in order {
        if n >= nodes || std::mem::replace(&mut seen[n], true) {
            return Err(Error::arg(format!(
                "not a permutation of 0..{nodes}: {order:?}"
            )));
        }
    }
    Ok(())
}

/// Uniform draw over every node except `holder` (full mesh).
pub fn next_random<R: Rng + ?Sized>(nodes: usize, holder: usize, rng: &mut R) -> Result<usize> {
    if nodes < 2 {
        return Err(Error::arg("random routing needs at least 2 nodes"));
    }
    if holder >= nodes {
        return Err(Error::arg(format!(
            "holder {holder} out of range for {nodes} nodes"
        )));
    }
    let pick = rng.random_range(0..nodes - 1);
    Ok(if pick >= holder { pick + 1 } else { pick })
}

/// A routing policy bound to its per-trial state.
#[derive(Debug, Clone)]
pub enum Router {
    Dynamic,
    Static(StaticRoute),
    Random,
}

impl Router {
    pub fn next<R: Rng + ?Sized>(
        &mut self,
        state: &RoutingState,
        shards: &[DatasetShard],
        cfg: &RoutingConfig,
        rng: &mut R,
    ) -> Result<usize> {
        match self {
            Router::Dynamic => select_next_dynamic(state, shards, cfg),
            Router::Static(route) => Ok(route.next_static()),
            Router::Random => next_random(shards.len(), state.holder, rng),
        }
    }
}
