#![allow(dead_code)]

use tramfl::datasets::{draw_minibatch, generate_synthetic, LabeledDataset, LabeledSample};
use tramfl::learner::{evaluate, init_he, loss_and_grad, sgd_step_in_place, ArchSpec};
use tramfl::partition::DatasetShard;
use tramfl::rng::seeded;

/// Shard whose histogram is exactly `per_class`.
pub fn shard_from_counts(node: usize, per_class: &[usize]) -> DatasetShard {
    let samples = per_class
        .iter()
        .enumerate()
        .flat_map(|(label, &n)| {
            (0..n).map(move |i| LabeledSample {
                features: vec![i as f64],
                label,
            })
        })
        .collect();
    DatasetShard::new(node, samples, per_class.len())
}

/// The desk-scale 10-class task shared by the routing comparisons.
pub struct Task {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub arch: ArchSpec,
}

pub const ETA: f64 = 0.05;
pub const BATCH: usize = 16;

pub fn ten_class_task() -> Task {
    Task {
        train: generate_synthetic(10, 8, 200, 4.0, 1).unwrap(),
        test: generate_synthetic(10, 8, 100, 4.0, 2).unwrap(),
        arch: ArchSpec::new(vec![8, 32, 10]).unwrap(),
    }
}

/// Test accuracy of plain minibatch SGD on the pooled training set.
pub fn centralized_accuracy(
    train: &LabeledDataset,
    test: &LabeledDataset,
    arch: &ArchSpec,
    eta: f64,
    batch: usize,
    steps: usize,
    seed: u64,
) -> f64 {
    let mut p = init_he(arch, seed);
    let mut rng = seeded(seed.wrapping_add(99));
    for _ in 0..steps {
        let b = draw_minibatch(train, batch, &mut rng).unwrap();
        let (_, g) = loss_and_grad(&p, &b.samples).unwrap();
        sgd_step_in_place(&mut p, &g, eta).unwrap();
    }
    evaluate(&p, test).unwrap().accuracy
}

/// Target accuracy: centralized reference minus two points.
pub fn reference_target(task: &Task) -> f64 {
    centralized_accuracy(&task.train, &task.test, &task.arch, ETA, BATCH, 5000, 0) - 0.02
}
