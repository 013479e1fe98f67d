//! Experiment configuration files.
//!
//! Configs are TOML: a top-level `policies` list followed by `[dataset]`,
//! `[partition]`, `[learner]` and `[run]` sections. Unknown keys are
//! rejected, and every error names the offending key path.
//!
//! ```toml
//! policies = ["dynamic", "random", "static:0,1,2,3,4", "static:all", "gossip"]
//!
//! [dataset]
//! kind = "synthetic"
//! num_classes = 10
//! dims = 8
//! per_class = 200
//! test_per_class = 50
//! separation = 4.0
//! seed = 1
//!
//! [partition]
//! scheme = "random_k"
//! nodes = 5
//! k_min = 2
//! k_max = 5
//! seed = 0
//!
//! [learner]
//! layer_sizes = [8, 32, 10]
//! eta = 0.05
//! batch_size = 16
//!
//! [run]
//! interval = 1
//! max_iters = 20000
//! target_accuracy = 0.95
//! trials = 5
//! ```

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::partition::{ExponentialMode, PartitionPlan, PartitionScheme};
use crate::routing::validate_permutation;
use crate::simulator::PolicyKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub policies: Vec<PolicySpec>,
    pub dataset: DatasetSection,
    pub partition: PartitionSection,
    pub learner: LearnerSection,
    pub run: RunSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSection {
    Synthetic {
        num_classes: usize,
        dims: usize,
        per_class: usize,
        /// Defaults to `per_class`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_per_class: Option<usize>,
        separation: f64,
        #[serde(default)]
        seed: u64,
    },
    Csv {
        train: PathBuf,
        test: PathBuf,
        #[serde(default)]
        header: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case", deny_unknown_fields)]
pub enum PartitionSection {
    Contiguous {
        nodes: usize,
    },
    RandomK {
        nodes: usize,
        k_min: usize,
        k_max: usize,
        #[serde(default)]
        seed: u64,
    },
    Exponential {
        nodes: usize,
        rate: f64,
    },
    /// Two-class split with explicit `[class0, class1]` counts per node.
    Table {
        nodes: usize,
        counts: Vec<[usize; 2]>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerSection {
    pub layer_sizes: Vec<usize>,
    pub eta: f64,
    pub batch_size: usize,
}

fn one() -> usize {
    1
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub interval: usize,
    pub max_iters: usize,
    #[serde(default = "one")]
    pub eval_every: usize,
    pub target_accuracy: f64,
    #[serde(default = "one")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "is_false")]
    pub count_exchanges_once: bool,
}

/// One entry of `policies`: `dynamic`, `random`, `gossip`,
/// `static:<permutation>` or `static:all` (every route starting at node 0).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PolicySpec {
    Dynamic,
    Random,
    Gossip,
    Static(Vec<usize>),
    StaticAll,
}

impl TryFrom<String> for PolicySpec {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Self, String> {
        match s.trim() {
            "dynamic" => Ok(PolicySpec::Dynamic),
            "random" => Ok(PolicySpec::Random),
            "gossip" => Ok(PolicySpec::Gossip),
            "static:all" => Ok(PolicySpec::StaticAll),
            other => {
                let route = other.strip_prefix("static:").ok_or_else(|| {
                    format!("unknown policy `{other}` (expected dynamic, random, gossip, static:<route> or static:all)")
                })?;
                parse_route(route).map(PolicySpec::Static)
            }
        }
    }
}

impl From<PolicySpec> for String {
    fn from(p: PolicySpec) -> String {
        p.to_string()
    }
}

impl fmt::Display for PolicySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicySpec::Dynamic => f.write_str("dynamic"),
            PolicySpec::Random => f.write_str("random"),
            PolicySpec::Gossip => f.write_str("gossip"),
            PolicySpec::StaticAll => f.write_str("static:all"),
            PolicySpec::Static(order) => {
                let parts: Vec<String> = order.iter().map(|n| n.to_string()).collect();
                write!(f, "static:{}", parts.join(","))
            }
        }
    }
}

/// Parse a comma-separated node list such as `0,2,1,3,4`.
pub fn parse_route(s: &str) -> std::result::Result<Vec<usize>, String> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| format!("bad node index `{}` in route `{s}`", t.trim()))
        })
        .collect()
}

impl PartitionSection {
    pub fn nodes(&self) -> usize {
        match self {
            PartitionSection::Contiguous { nodes }
            | PartitionSection::RandomK { nodes, .. }
            | PartitionSection::Exponential { nodes, .. }
            | PartitionSection::Table { nodes, .. } => *nodes,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            PartitionSection::RandomK { seed, .. } => *seed,
            _ => 0,
        }
    }

    pub fn plan(&self) -> PartitionPlan {
        let scheme = match self {
            PartitionSection::Contiguous { .. } => PartitionScheme::Contiguous,
            PartitionSection::RandomK { k_min, k_max, .. } => PartitionScheme::RandomK {
                k_min: *k_min,
                k_max: *k_max,
            },
            PartitionSection::Exponential { rate, .. } => {
                PartitionScheme::Exponential(ExponentialMode::Analytic { rate: *rate })
            }
            PartitionSection::Table { counts, .. } => {
                PartitionScheme::Exponential(ExponentialMode::Table {
                    counts: counts.clone(),
                })
            }
        };
        PartitionPlan {
            scheme,
            nodes: self.nodes(),
        }
    }

    /// Checks that need the class count.
    pub fn validate_for_classes(&self, num_classes: usize) -> Result<()> {
        let nodes = self.nodes();
        match self {
            PartitionSection::Contiguous { .. } if nodes > num_classes => Err(Error::config(
                "partition.nodes",
                format!("contiguous split of {num_classes} labels cannot use {nodes} nodes"),
            )),
            PartitionSection::RandomK { k_min, k_max, .. } => {
                if *k_min < 1 || k_min > k_max {
                    return Err(Error::config("partition.k_min", "need 1 <= k_min <= k_max"));
                }
                if *k_max > num_classes {
                    return Err(Error::config(
                        "partition.k_max",
                        format!("k_max exceeds the {num_classes} classes"),
                    ));
                }
                if nodes * k_max < num_classes {
                    return Err(Error::config(
                        "partition.k_max",
                        format!(
                            "{nodes} nodes x {k_max} labels cannot cover {num_classes} classes"
                        ),
                    ));
                }
                Ok(())
            }
            PartitionSection::Exponential { .. } | PartitionSection::Table { .. }
                if num_classes != 2 =>
            {
                Err(Error::config(
                    "partition.scheme",
                    format!("exponential splits need 2 classes, dataset has {num_classes}"),
                ))
            }
            _ => Ok(()),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text)
            .map_err(|e| Error::config("<document>", e.to_string()))?;
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            Error::config(path, inner.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn num_classes(&self) -> Option<usize> {
        match self.dataset {
            DatasetSection::Synthetic { num_classes, .. } => Some(num_classes),
            DatasetSection::Csv { .. } => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let DatasetSection::Synthetic {
            num_classes,
            dims,
            per_class,
            test_per_class,
            separation,
            ..
        } = &self.dataset
        {
            if *num_classes < 2 {
                return Err(Error::config(
                    "dataset.num_classes",
                    "need at least 2 classes",
                ));
            }
            if *dims < 1 {
                return Err(Error::config("dataset.dims", "must be >= 1"));
            }
            if *per_class < 1 {
                return Err(Error::config("dataset.per_class", "must be >= 1"));
            }
            if *test_per_class == Some(0) {
                return Err(Error::config("dataset.test_per_class", "must be >= 1"));
            }
            if !(*separation > 0.0 && separation.is_finite()) {
                return Err(Error::config("dataset.separation", "must be positive"));
            }
        }

        let nodes = self.partition.nodes();
        if nodes < 2 {
            return Err(Error::config("partition.nodes", "need at least 2 nodes"));
        }
        match &self.partition {
            PartitionSection::Exponential { rate, .. } if !(*rate > 0.0 && rate.is_finite()) => {
                return Err(Error::config("partition.rate", "must be positive"));
            }
            PartitionSection::Table { counts, .. } if counts.len() != nodes => {
                return Err(Error::config(
                    "partition.counts",
                    format!("{} rows for {nodes} nodes", counts.len()),
                ));
            }
            _ => {}
        }

        let sizes = &self.learner.layer_sizes;
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::config(
                "learner.layer_sizes",
                "need at least two positive layer sizes",
            ));
        }
        if !(self.learner.eta > 0.0 && self.learner.eta.is_finite()) {
            return Err(Error::config("learner.eta", "must be positive"));
        }
        if self.learner.batch_size < 1 {
            return Err(Error::config("learner.batch_size", "must be >= 1"));
        }
        if let DatasetSection::Synthetic {
            num_classes, dims, ..
        } = &self.dataset
        {
            self.check_shapes(*dims, *num_classes)?;
        }

        let run = &self.run;
        for (name, v) in [
            ("run.interval", run.interval),
            ("run.max_iters", run.max_iters),
            ("run.eval_every", run.eval_every),
            ("run.trials", run.trials),
        ] {
            if v < 1 {
                return Err(Error::config(name, "must be >= 1"));
            }
        }
        if !(run.target_accuracy > 0.0 && run.target_accuracy <= 1.0) {
            return Err(Error::config("run.target_accuracy", "must be in (0, 1]"));
        }

        if self.policies.is_empty() {
            return Err(Error::config("policies", "at least one policy is required"));
        }
        for (i, p) in self.policies.iter().enumerate() {
            match p {
                PolicySpec::Static(order) => validate_permutation(order, nodes).map_err(|_| {
                    Error::config(
                        format!("policies[{i}]"),
                        format!("`{p}` is not a permutation of 0..{nodes}"),
                    )
                })?,
                PolicySpec::StaticAll if nodes > MAX_ENUMERATED_NODES => {
                    return Err(Error::config(
                        format!("policies[{i}]"),
                        format!("static:all supports at most {MAX_ENUMERATED_NODES} nodes"),
                    ))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Layer sizes against the data shape; also used once a CSV is loaded.
    pub fn check_shapes(&self, dims: usize, num_classes: usize) -> Result<()> {
        let sizes = &self.learner.layer_sizes;
        if sizes[0] != dims {
            return Err(Error::config(
                "learner.layer_sizes",
                format!("input size {} does not match dataset dims {dims}", sizes[0]),
            ));
        }
        if *sizes.last().unwrap() != num_classes {
            return Err(Error::config(
                "learner.layer_sizes",
                format!(
                    "output size {} does not match {num_classes} classes",
                    sizes.last().unwrap()
                ),
            ));
        }
        self.partition.validate_for_classes(num_classes)
    }

    /// Policies with `static:all` expanded, in config order, duplicates removed.
    pub fn expanded_policies(&self) -> Result<Vec<PolicyKind>> {
        let mut out: Vec<PolicyKind> = Vec::new();
        for p in &self.policies {
            let kinds = match p {
                PolicySpec::Dynamic => vec![PolicyKind::Dynamic],
                PolicySpec::Random => vec![PolicyKind::Random],
                PolicySpec::Gossip => vec![PolicyKind::Gossip],
                PolicySpec::Static(order) => vec![PolicyKind::Static(order.clone())],
                PolicySpec::StaticAll => enumerate_static_routes(self.partition.nodes())?
                    .into_iter()
                    .map(PolicyKind::Static)
                    .collect(),
            };
            for k in kinds {
                if !out.contains(&k) {
                    out.push(k);
                }
            }
        }
        Ok(out)
    }
}

pub const MAX_ENUMERATED_NODES: usize = 8;

/// Every cyclic route that starts at node 0, in lexicographic order.
pub fn enumerate_static_routes(nodes: usize) -> Result<Vec<Vec<usize>>> {
    use itertools::Itertools;
    if !(2..=MAX_ENUMERATED_NODES).contains(&nodes) {
        return Err(Error::arg(format!(
            "route enumeration supports 2..={MAX_ENUMERATED_NODES} nodes, got {nodes}"
        )));
    }
    Ok((1..nodes)
        .permutations(nodes - 1)
        .map(|tail| std::iter::once(0).chain(tail).collect())
        .collect())
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ExperimentConfig::from_toml_str(&text)
}
