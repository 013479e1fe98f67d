//! Non-IID partitioning of a dataset across nodes.
//!
//! Three schemes are provided:
//!
//! - contiguous label groups, one group per node, no label overlap;
//! - a random label subset per node (sizes uniform in `[k_min, k_max]`),
//!   resampled until every label is held somewhere, with every sample of a
//!   held label copied to the node;
//! - a two-class split whose per-node counts follow an exponential profile,
//!   either computed from a rate or given as an explicit count table.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::{histogram, LabelHistogram, LabeledDataset, LabeledSample, SampleSet};
use crate::error::{Error, Result};

/// Rejection-sampling cap for label coverage in [`split_random_k_labels`].
pub const MAX_COVERAGE_ATTEMPTS: usize = 10_000;

/// One node's local data.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetShard {
    pub node_id: usize,
    pub samples: Vec<LabeledSample>,
    pub hist: LabelHistogram,
    pub total: usize,
}

impl DatasetShard {
    pub fn new(node_id: usize, samples: Vec<LabeledSample>, num_classes: usize) -> Self {
        let mut shard = DatasetShard {
            node_id,
            total: samples.len(),
            samples,
            hist: LabelHistogram::zeros(num_classes),
        };
        shard.hist = histogram(&shard);
        shard
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Labels with at least one sample on this node.
    pub fn labels(&self) -> Vec<usize> {
        (0..self.hist.len())
            .filter(|&c| self.hist[c] > 0.0)
            .collect()
    }
}

impl SampleSet for DatasetShard {
    fn samples(&self) -> &[LabeledSample] {
        &self.samples
    }

    fn num_classes(&self) -> usize {
        self.hist.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ExponentialMode {
    /// Class-0 share at node `v` proportional to `exp(-rate * v)`, class-1
    /// share proportional to `1 - exp(-rate * (v + 1))`.
    Analytic { rate: f64 },
    /// Explicit `[class0, class1]` counts per node.
    Table { counts: Vec<[usize; 2]> },
}

#[derive(Debug, Clone, PartialEq)]
pub enum PartitionScheme {
    Contiguous,
    RandomK { k_min: usize, k_max: usize },
    Exponential(ExponentialMode),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionPlan {
    pub scheme: PartitionScheme,
    pub nodes: usize,
}

impl PartitionPlan {
    pub fn apply<R: Rng + ?Sized>(
        &self,
        ds: &LabeledDataset,
        rng: &mut R,
    ) -> Result<Vec<DatasetShard>> {
        if self.nodes < 2 {
            return Err(Error::arg("a partition plan needs at least 2 nodes"));
        }
        match &self.scheme {
            PartitionScheme::Contiguous => split_contiguous_labels(ds, self.nodes),
            PartitionScheme::RandomK { k_min, k_max } => {
                split_random_k_labels(ds, self.nodes, *k_min, *k_max, rng)
            }
            PartitionScheme::Exponential(mode) => split_exponential_binary(ds, self.nodes, mode),
        }
    }
}

fn shards_from_label_sets(ds: &LabeledDataset, label_sets: &[Vec<usize>]) -> Vec<DatasetShard> {
    label_sets
        .iter()
        .enumerate()
        .map(|(node, labels)| {
            let mut member = vec![false; ds.num_classes];
            for &c in labels {
                member[c] = true;
            }
            let samples = ds
                .samples
                .iter()
                .filter(|s| member[s.label])
                .cloned()
                .collect();
            DatasetShard::new(node, samples, ds.num_classes)
        })
        .collect()
}

/// Label groups for a contiguous split. Group sizes differ by at most one,
/// with the larger groups at the end (10 labels over 3 nodes: 3, 3, 4).
pub fn contiguous_label_groups(num_classes: usize, nodes: usize) -> Result<Vec<Vec<usize>>> {
    if nodes == 0 {
        return Err(Error::arg("need at least one node"));
    }
    if nodes > num_classes {
        return Err(Error::arg(format!(
            "cannot split {num_classes} labels over {nodes} nodes without overlap"
        )));
    }
    let base = num_classes / nodes;
    let extra = num_classes % nodes;
    let mut next = 0;
    Ok((0..nodes)
        .map(|v| {
            let size = base + usize::from(v >= nodes - extra);
            let group = (next..next + size).collect();
            next += size;
            group
        })
        .collect())
}

pub fn split_contiguous_labels(ds: &LabeledDataset, nodes: usize) -> Result<Vec<DatasetShard>> {
    let groups = contiguous_label_groups(ds.num_classes, nodes)?;
    Ok(shards_from_label_sets(ds, &groups))
}

/// Draw per-node label sets until every label is covered.
pub fn random_k_label_sets<R: Rng + ?Sized>(
    num_classes: usize,
    nodes: usize,
    k_min: usize,
    k_max: usize,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>> {
    if nodes == 0 {
        return Err(Error::arg("need at least one node"));
    }
    if k_min < 1 || k_min > k_max || k_max > num_classes {
        return Err(Error::arg(format!(
            "need 1 <= k_min <= k_max <= {num_classes}, got k_min={k_min} k_max={k_max}"
        )));
    }
    if nodes * k_max < num_classes {
        return Err(Error::arg(format!(
            "{nodes} nodes with at most {k_max} labels each cannot cover {num_classes} labels"
        )));
    }
    for _ in 0..MAX_COVERAGE_ATTEMPTS {
        let sets: Vec<Vec<usize>> = (0..nodes)
            .map(|_| {
                let k = rng.random_range(k_min..=k_max);
                let mut set = index::sample(rng, num_classes, k).into_vec();
                set.sort_unstable();
                set
            })
            .collect();
        let mut covered = vec![false; num_classes];
        for &c in sets.iter().flatten() {
            covered[c] = true;
        }
        if covered.iter().all(|&c| c) {
            return Ok(sets);
        }
    }
    Err(Error::arg(format!(
        "no covering label assignment found in {MAX_COVERAGE_ATTEMPTS} attempts"
    )))
}

/// Random label sets per node; a label held by several nodes has all its
/// samples copied to each of them.
pub fn split_random_k_labels<R: Rng + ?Sized>(
    ds: &LabeledDataset,
    nodes: usize,
    k_min: usize,
    k_max: usize,
    rng: &mut R,
) -> Result<Vec<DatasetShard>> {
    let sets = random_k_label_sets(ds.num_classes, nodes, k_min, k_max, rng)?;
    Ok(shards_from_label_sets(ds, &sets))
}

/// Per-node `[class0, class1]` counts for the analytic exponential profile.
pub fn exponential_counts(totals: [usize; 2], nodes: usize, rate: f64) -> Result<Vec<[usize; 2]>> {
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(Error::arg("exponential rate must be positive and finite"));
    }
    if nodes == 0 {
        return Err(Error::arg("need at least one node"));
    }
    let weights: [Vec<f64>; 2] = [
        (0..nodes).map(|v| (-rate * v as f64).exp()).collect(),
        (0..nodes)
            .map(|v| 1.0 - (-rate * (v + 1) as f64).exp())
            .collect(),
    ];
    let mut counts = vec![[0usize; 2]; nodes];
    for class in 0..2 {
        let norm: f64 = weights[class].iter().sum();
        let mut assigned = 0;
        for v in 0..nodes - 1 {
            let n = (totals[class] as f64 * weights[class][v] / norm).floor() as usize;
            counts[v][class] = n;
            assigned += n;
        }
        counts[nodes - 1][class] = totals[class] - assigned;
    }
    Ok(counts)
}

pub fn split_exponential_binary(
    ds: &LabeledDataset,
    nodes: usize,
    mode: &ExponentialMode,
) -> Result<Vec<DatasetShard>> {
    if ds.num_classes != 2 {
        return Err(Error::arg(format!(
            "exponential split needs exactly 2 classes, got {}",
            ds.num_classes
        )));
    }
    let hist = ds.histogram();
    let totals = [hist[0] as usize, hist[1] as usize];
    let counts = match mode {
        ExponentialMode::Analytic { rate } => exponential_counts(totals, nodes, *rate)?,
        ExponentialMode::Table { counts } => {
            if counts.len() != nodes {
                return Err(Error::arg(format!(
                    "count table has {} rows for {nodes} nodes",
                    counts.len()
                )));
            }
            for class in 0..2 {
                let want: usize = counts.iter().map(|row| row[class]).sum();
                if want > totals[class] {
                    return Err(Error::arg(format!(
                        "count table asks for {want} samples of class {class}, only {} available",
                        totals[class]
                    )));
                }
            }
            counts.clone()
        }
    };

    let mut by_node: Vec<Vec<LabeledSample>> = vec![Vec::new(); nodes];
    let mut filled = vec![[0usize; 2]; nodes];
    let mut cursor = [0usize; 2];
    for s in &ds.samples {
        let class = s.label;
        let v = &mut cursor[class];
        while *v < nodes && filled[*v][class] >= counts[*v][class] {
            *v += 1;
        }
        if *v < nodes {
            filled[*v][class] += 1;
            by_node[*v].push(s.clone());
        }
    }
    Ok(by_node
        .into_iter()
        .enumerate()
        .map(|(v, samples)| DatasetShard::new(v, samples, 2))
        .collect())
}
