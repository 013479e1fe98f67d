//! Trial execution: the traveling-model loop, the gossip baseline, and
//! transmissions-to-target metrics.

use rayon::prelude::*;
use serde::Serialize;

use crate::datasets::{draw_minibatch, LabelHistogram, LabeledDataset};
use crate::error::{Error, Result};
use crate::learner::{
    average_params, evaluate, init_he, loss_and_grad, sgd_step_in_place, ArchSpec, ModelParams,
};
use crate::partition::DatasetShard;
use crate::rng::{node_stream, stream, Stream};
use crate::routing::{Router, RoutingConfig, RoutingState, StaticRoute};
use rand::Rng;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum PolicyKind {
    Dynamic,
    Static(Vec<usize>),
    Random,
    Gossip,
}

impl PolicyKind {
    /// File-name-safe label: `dynamic`, `random`, `gossip`, `static_0-2-1`.
    pub fn name(&self) -> String {
        match self {
            PolicyKind::Dynamic => "dynamic".into(),
            PolicyKind::Random => "random".into(),
            PolicyKind::Gossip => "gossip".into(),
            PolicyKind::Static(order) => {
                let parts: Vec<String> = order.iter().map(|n| n.to_string()).collect();
                format!("static_{}", parts.join("-"))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub arch: ArchSpec,
    pub eta: f64,
    pub batch_size: usize,
    /// Minibatch updates between transmissions.
    pub interval: usize,
    /// Total minibatch updates (gossip: rounds).
    pub max_iters: usize,
    /// Evaluate every this many transmissions.
    pub eval_every: usize,
    pub target_accuracy: Option<f64>,
    pub seed: u64,
    pub policy: PolicyKind,
    /// Gossip only: count each pairwise exchange once instead of as two sends.
    pub count_exchanges_once: bool,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::arg("eta must be positive"));
        }
        if self.batch_size == 0 || self.interval == 0 || self.max_iters == 0 || self.eval_every == 0
        {
            return Err(Error::arg(
                "batch_size, interval, max_iters and eval_every must be >= 1",
            ));
        }
        if let Some(t) = self.target_accuracy {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::arg("target_accuracy must be in (0, 1]"));
            }
        }
        Ok(())
    }

    fn routing(&self) -> RoutingConfig {
        RoutingConfig {
            batch_size: self.batch_size,
            interval: self.interval,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRecord {
    pub iteration: usize,
    pub transmissions: u64,
    /// Node holding the traveling model; `None` for gossip.
    pub holder: Option<usize>,
    pub test_accuracy: f64,
    pub test_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub records: Vec<EvalRecord>,
    pub transmissions_to_target: Option<u64>,
    pub final_params_digest: String,
    pub final_params: ModelParams,
    /// Minibatch updates performed (gossip: rounds).
    pub iterations: usize,
    /// Label ledger of the traveling model; `None` for gossip.
    pub ledger: Option<LabelHistogram>,
}

/// Smallest recorded transmission count whose accuracy reaches `threshold`.
pub fn transmissions_to_accuracy(records: &[EvalRecord], threshold: f64) -> Option<u64> {
    records
        .iter()
        .find(|r| r.test_accuracy >= threshold)
        .map(|r| r.transmissions)
}

fn record(
    params: &ModelParams,
    test: &LabeledDataset,
    iteration: usize,
    transmissions: u64,
    holder: Option<usize>,
) -> Result<EvalRecord> {
    let e = evaluate(params, test)?;
    Ok(EvalRecord {
        iteration,
        transmissions,
        holder,
        test_accuracy: e.accuracy,
        test_loss: e.loss,
    })
}

fn reached(rec: &EvalRecord, target: Option<f64>) -> bool {
    target.is_some_and(|t| rec.test_accuracy >= t)
}

/// Run one trial of the traveling-model scheme.
///
/// A single model is He-initialized from `cfg.seed` and placed on a
/// uniformly drawn nonempty node. Every iteration the holder trains on one
/// local minibatch; every `interval` iterations the model is handed to the
/// node chosen by the policy, which costs one transmission (a hand-off to
/// itself included).
pub fn run_tram_fl(
    shards: &[DatasetShard],
    test: &LabeledDataset,
    cfg: &RunConfig,
) -> Result<TrialResult> {
    cfg.validate()?;
    let nonempty: Vec<usize> = (0..shards.len())
        .filter(|&i| !shards[i].is_empty())
        .collect();
    if nonempty.is_empty() {
        return Err(Error::state("no node holds any training data"));
    }
    let num_classes = cfg.arch.num_classes();

    let mut router = match &cfg.policy {
        PolicyKind::Dynamic => Router::Dynamic,
        PolicyKind::Random => Router::Random,
        PolicyKind::Static(order) => {
            if order.len() != shards.len() {
                return Err(Error::arg(format!(
                    "static route covers {} nodes, network has {}",
                    order.len(),
                    shards.len()
                )));
            }
            Router::Static(StaticRoute::new(order.clone())?)
        }
        PolicyKind::Gossip => {
            return Err(Error::arg("gossip is not a routing policy; use run_gossip"))
        }
    };

    let mut placement = stream(cfg.seed, Stream::Placement);
    let mut batches = stream(cfg.seed, Stream::Minibatch);
    let mut routing_rng = stream(cfg.seed, Stream::Routing);

    let mut params = init_he(&cfg.arch, cfg.seed);
    let start = nonempty[placement.random_range(0..nonempty.len())];
    if let Router::Static(route) = &mut router {
        route.start_at(start)?;
    }
    let mut state = RoutingState::new(num_classes, start);
    let routing = cfg.routing();

    let mut records = Vec::new();
    let mut transmissions: u64 = 0;
    let mut iterations = 0;
    let mut hit = None;

    for k in 1..=cfg.max_iters {
        let shard = &shards[state.holder];
        let batch = draw_minibatch(shard, cfg.batch_size, &mut batches)?;
        let (_, grad) = loss_and_grad(&params, &batch.samples)?;
        sgd_step_in_place(&mut params, &grad, cfg.eta)?;
        state.update_ledger(&batch.counts)?;
        iterations = k;

        if k % cfg.interval == 0 {
            let next = router.next(&state, shards, &routing, &mut routing_rng)?;
            state.complete_visit(next);
            transmissions += 1;
            if transmissions.is_multiple_of(cfg.eval_every as u64) {
                let rec = record(&params, test, k, transmissions, Some(state.holder))?;
                let done = reached(&rec, cfg.target_accuracy);
                records.push(rec);
                if done {
                    hit = Some(transmissions);
                    break;
                }
            }
        }
    }

    if hit.is_none()
        && records
            .last()
            .is_none_or(|r| r.transmissions != transmissions)
    {
        let rec = record(&params, test, iterations, transmissions, Some(state.holder))?;
        if reached(&rec, cfg.target_accuracy) {
            hit = Some(transmissions);
        }
        records.push(rec);
    }

    Ok(TrialResult {
        records,
        transmissions_to_target: hit,
        final_params_digest: params.digest(),
        final_params: params,
        iterations,
        ledger: Some(state.cumulative),
    })
}

/// Synchronous full-mesh gossip SGD.
///
/// Every node starts from the same He-initialized model. Each round every
/// node trains on one local minibatch, then all nodes replace their model
/// by the unweighted average of all models. A round costs `V * (V - 1)`
/// directed transmissions, or half that when exchanges are counted once.
/// Evaluation uses the node-averaged model.
pub fn run_gossip(
    shards: &[DatasetShard],
    test: &LabeledDataset,
    cfg: &RunConfig,
) -> Result<TrialResult> {
    cfg.validate()?;
    let v = shards.len();
    if v < 2 {
        return Err(Error::arg("gossip needs at least 2 nodes"));
    }
    if let Some(s) = shards.iter().find(|s| s.is_empty()) {
        return Err(Error::state(format!(
            "node {} holds no training data",
            s.node_id
        )));
    }
    let per_round = if cfg.count_exchanges_once {
        (v * (v - 1) / 2) as u64
    } else {
        (v * (v - 1)) as u64
    };
    let eval_every = cfg.eval_every as u64;

    let mut rngs: Vec<_> = (0..v)
        .map(|n| node_stream(cfg.seed, Stream::Minibatch, n))
        .collect();
    let mut models: Vec<ModelParams> = vec![init_he(&cfg.arch, cfg.seed); v];
    let weights = vec![1.0; v];

    let mut records = Vec::new();
    let mut transmissions: u64 = 0;
    let mut rounds = 0;
    let mut hit = None;
    let mut consensus = models[0].clone();

    for round in 1..=cfg.max_iters {
        for ((model, shard), rng) in models.iter_mut().zip(shards).zip(rngs.iter_mut()) {
            let batch = draw_minibatch(shard, cfg.batch_size, rng)?;
            let (_, grad) = loss_and_grad(model, &batch.samples)?;
            sgd_step_in_place(model, &grad, cfg.eta)?;
        }
        consensus = average_params(&models, &weights)?;
        for m in models.iter_mut() {
            m.values.copy_from_slice(&consensus.values);
        }
        let before = transmissions;
        transmissions += per_round;
        rounds = round;

        if transmissions / eval_every > before / eval_every {
            let rec = record(&consensus, test, round, transmissions, None)?;
            let done = reached(&rec, cfg.target_accuracy);
            records.push(rec);
            if done {
                hit = Some(transmissions);
                break;
            }
        }
    }

    if hit.is_none()
        && records
            .last()
            .is_none_or(|r| r.transmissions != transmissions)
    {
        let rec = record(&consensus, test, rounds, transmissions, None)?;
        if reached(&rec, cfg.target_accuracy) {
            hit = Some(transmissions);
        }
        records.push(rec);
    }

    Ok(TrialResult {
        records,
        transmissions_to_target: hit,
        final_params_digest: consensus.digest(),
        final_params: consensus,
        iterations: rounds,
        ledger: None,
    })
}

/// Dispatch on the policy: gossip or a traveling-model run.
pub fn run_trial(
    shards: &[DatasetShard],
    test: &LabeledDataset,
    cfg: &RunConfig,
) -> Result<TrialResult> {
    match cfg.policy {
        PolicyKind::Gossip => run_gossip(shards, test, cfg),
        _ => run_tram_fl(shards, test, cfg),
    }
}

/// Transmissions-to-target statistics over repeated trials.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialSummary {
    /// Mean over trials that reached the target.
    pub mean: Option<f64>,
    /// Sample standard deviation over trials that reached the target; 0 for one trial.
    pub std: Option<f64>,
    pub n_trials: usize,
    pub n_reached: usize,
    pub per_trial: Vec<Option<u64>>,
}

impl TrialSummary {
    pub fn from_outcomes(per_trial: Vec<Option<u64>>) -> Self {
        let hits: Vec<f64> = per_trial.iter().flatten().map(|&t| t as f64).collect();
        let n = hits.len();
        let mean = (n > 0).then(|| hits.iter().sum::<f64>() / n as f64);
        let std = mean.map(|m| {
            if n < 2 {
                0.0
            } else {
                (hits.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            }
        });
        TrialSummary {
            mean,
            std,
            n_trials: per_trial.len(),
            n_reached: n,
            per_trial,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrialsOutcome {
    pub results: Vec<TrialResult>,
    pub summary: TrialSummary,
}

/// Run `n_trials` trials with seeds `base.seed, base.seed + 1, ..`. Trials
/// run in parallel; results are returned in seed order.
pub fn run_trials(
    shards: &[DatasetShard],
    test: &LabeledDataset,
    base: &RunConfig,
    n_trials: usize,
) -> Result<TrialsOutcome> {
    if n_trials == 0 {
        return Err(Error::arg("n_trials must be >= 1"));
    }
    if base.target_accuracy.is_none() {
        return Err(Error::arg("run_trials needs a target accuracy"));
    }
    let results = (0..n_trials as u64)
        .into_par_iter()
        .map(|i| {
            let cfg = RunConfig {
                seed: base.seed.wrapping_add(i),
                ..base.clone()
            };
            run_trial(shards, test, &cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    let summary =
        TrialSummary::from_outcomes(results.iter().map(|r| r.transmissions_to_target).collect());
    Ok(TrialsOutcome { results, summary })
}
