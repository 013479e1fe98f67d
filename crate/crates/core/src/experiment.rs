//! Config-driven experiment runner: builds data and shards, runs every
//! policy for the configured number of trials and writes per-policy CSVs
//! plus a JSON summary.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::config::{DatasetSection, ExperimentConfig};
use crate::datasets::{generate_synthetic, load_csv, LabeledDataset};
use crate::error::{Error, Result};
use crate::learner::ArchSpec;
use crate::partition::DatasetShard;
use crate::rng::{stream, Stream};
use crate::simulator::{run_trials, PolicyKind, RunConfig, TrialResult, TrialSummary};

/// Offset between the train and test seeds of a synthetic dataset.
pub const TEST_SEED_OFFSET: u64 = 1_000_003;

pub const RESULTS_HEADER: [&str; 6] = [
    "trial",
    "iteration",
    "transmissions",
    "holder",
    "test_loss",
    "test_accuracy",
];

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Force header skipping on CSV datasets.
    pub csv_header: bool,
    /// Write the final model of the first policy's first trial here.
    pub dump_model: Option<PathBuf>,
    pub count_exchanges_once: bool,
    pub quiet: bool,
}

#[derive(Debug, Clone)]
pub struct PolicyReport {
    pub policy: PolicyKind,
    pub summary: TrialSummary,
    pub results: Vec<TrialResult>,
}

/// Train and test data for a config.
pub fn build_datasets(
    cfg: &ExperimentConfig,
    opts: &RunOptions,
) -> Result<(LabeledDataset, LabeledDataset)> {
    let (train, test) = match &cfg.dataset {
        DatasetSection::Synthetic {
            num_classes,
            dims,
            per_class,
            test_per_class,
            separation,
            seed,
        } => (
            generate_synthetic(*num_classes, *dims, *per_class, *separation, *seed)?,
            generate_synthetic(
                *num_classes,
                *dims,
                test_per_class.unwrap_or(*per_class),
                *separation,
                seed.wrapping_add(TEST_SEED_OFFSET),
            )?,
        ),
        DatasetSection::Csv {
            train,
            test,
            header,
        } => {
            let header = *header || opts.csv_header;
            (load_csv(train, header)?, load_csv(test, header)?)
        }
    };
    if test.dims != train.dims {
        return Err(Error::config(
            "dataset.test",
            format!(
                "test set has {} features, train set {}",
                test.dims, train.dims
            ),
        ));
    }
    let classes = train.num_classes.max(test.num_classes);
    let train = LabeledDataset {
        num_classes: classes,
        ..train
    };
    let test = LabeledDataset {
        num_classes: classes,
        ..test
    };
    cfg.check_shapes(train.dims, classes)?;
    Ok((train, test))
}

pub fn build_shards(cfg: &ExperimentConfig, train: &LabeledDataset) -> Result<Vec<DatasetShard>> {
    let mut rng = stream(cfg.partition.seed(), Stream::Partition);
    cfg.partition.plan().apply(train, &mut rng)
}

pub fn run_config(
    cfg: &ExperimentConfig,
    policy: PolicyKind,
    opts: &RunOptions,
) -> Result<RunConfig> {
    Ok(RunConfig {
        arch: ArchSpec::new(cfg.learner.layer_sizes.clone())?,
        eta: cfg.learner.eta,
        batch_size: cfg.learner.batch_size,
        interval: cfg.run.interval,
        max_iters: cfg.run.max_iters,
        eval_every: cfg.run.eval_every,
        target_accuracy: Some(cfg.run.target_accuracy),
        seed: cfg.run.seed,
        policy,
        count_exchanges_once: cfg.run.count_exchanges_once || opts.count_exchanges_once,
    })
}

/// Run every policy of `cfg` without touching the filesystem.
pub fn execute(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Vec<PolicyReport>> {
    let (train, test) = build_datasets(cfg, opts)?;
    let shards = build_shards(cfg, &train)?;
    cfg.expanded_policies()?
        .into_iter()
        .map(|policy| {
            let base = run_config(cfg, policy.clone(), opts)?;
            let outcome = run_trials(&shards, &test, &base, cfg.run.trials)?;
            Ok(PolicyReport {
                policy,
                summary: outcome.summary,
                results: outcome.results,
            })
        })
        .collect()
}

/// Per-evaluation rows for one policy.
pub fn results_csv(results: &[TrialResult]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::state(format!("csv encoding failed: {e}"));
    w.write_record(RESULTS_HEADER).map_err(csv_err)?;
    for (trial, r) in results.iter().enumerate() {
        for rec in &r.records {
            w.write_record([
                trial.to_string(),
                rec.iteration.to_string(),
                rec.transmissions.to_string(),
                rec.holder.map(|h| h.to_string()).unwrap_or_default(),
                rec.test_loss.to_string(),
                rec.test_accuracy.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.into_inner()
        .map_err(|e| Error::state(format!("csv encoding failed: {e}")))
}

pub fn summary_json(reports: &[PolicyReport]) -> String {
    let map: BTreeMap<String, &TrialSummary> = reports
        .iter()
        .map(|r| (r.policy.name(), &r.summary))
        .collect();
    let mut s = serde_json::to_string_pretty(&map).expect("summary serializes");
    s.push('\n');
    s
}

/// Text table ordered by mean transmissions-to-target (unreached last).
pub fn comparison_table(reports: &[PolicyReport]) -> String {
    let mut rows: Vec<&PolicyReport> = reports.iter().collect();
    rows.sort_by(|a, b| match (a.summary.mean, b.summary.mean) {
        (Some(x), Some(y)) => x.total_cmp(&y),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    });
    let width = rows
        .iter()
        .map(|r| r.policy.name().len())
        .max()
        .unwrap_or(6)
        .max(6);
    let mut out = format!(
        "{:<width$}  {:>12}  {:>10}  {:>8}\n",
        "policy", "mean", "std", "reached"
    );
    for r in rows {
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.1}")).unwrap_or_else(|| "-".into());
        out.push_str(&format!(
            "{:<width$}  {:>12}  {:>10}  {:>5}/{:<2}\n",
            r.policy.name(),
            fmt(r.summary.mean),
            fmt(r.summary.std),
            r.summary.n_reached,
            r.summary.n_trials
        ));
    }
    out
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Run the experiment and write `results_<policy>.csv` and `summary.json`
/// into `out_dir`.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    out_dir: impl AsRef<Path>,
    opts: &RunOptions,
) -> Result<Vec<PolicyReport>> {
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let reports = execute(cfg, opts)?;

    for r in &reports {
        let path = out_dir.join(format!("results_{}.csv", r.policy.name()));
        write_file(&path, &results_csv(&r.results)?)?;
    }
    write_file(
        &out_dir.join("summary.json"),
        summary_json(&reports).as_bytes(),
    )?;
    if let Some(path) = &opts.dump_model {
        if let Some(first) = reports.first().and_then(|r| r.results.first()) {
            first.final_params.write_checkpoint(path)?;
        }
    }
    if !opts.quiet {
        print!("{}", comparison_table(&reports));
    }
    Ok(reports)
}
