//! Labeled datasets, label histograms and minibatch sampling.
//!
//! The synthetic generator places one isotropic unit-variance Gaussian per
//! class. Class means depend only on `(num_classes, dims, separation)`, so a
//! train set and a test set drawn with different seeds share the same class
//! layout.

use std::ops::{Add, Index};
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Seed for the class-mean layout when classes outnumber the signed axes.
const LAYOUT_SEED: u64 = 0x7a3f_1c0d_5eed_0001;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub features: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub samples: Vec<LabeledSample>,
    pub num_classes: usize,
    pub dims: usize,
}

/// Per-class sample counts.
///
/// Counts are real-valued so the same type can carry fractional expected
/// usage during routing look-ahead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelHistogram {
    counts: Vec<f64>,
}

impl LabelHistogram {
    pub fn zeros(num_classes: usize) -> Self {
        Self {
            counts: vec![0.0; num_classes],
        }
    }

    pub fn from_counts(counts: Vec<f64>) -> Result<Self> {
        if let Some(c) = counts.iter().find(|c| !(c.is_finite() && **c >= 0.0)) {
            return Err(Error::arg(format!(
                "histogram entries must be finite and non-negative, got {c}"
            )));
        }
        Ok(Self { counts })
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    pub(crate) fn bump(&mut self, label: usize) {
        self.counts[label] += 1.0;
    }

    /// Element-wise sum. Fails on a length mismatch.
    pub fn checked_add(&self, other: &LabelHistogram) -> Result<LabelHistogram> {
        if self.len() != other.len() {
            return Err(Error::arg(format!(
                "histogram length mismatch: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        Ok(LabelHistogram {
            counts: self
                .counts
                .iter()
                .zip(&other.counts)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    pub fn scaled(&self, factor: f64) -> LabelHistogram {
        LabelHistogram {
            counts: self.counts.iter().map(|c| c * factor).collect(),
        }
    }
}

impl Index<usize> for LabelHistogram {
    type Output = f64;

    fn index(&self, c: usize) -> &f64 {
        &self.counts[c]
    }
}

impl Add for &LabelHistogram {
    type Output = LabelHistogram;

    /// Panics on length mismatch; use [`LabelHistogram::checked_add`] otherwise.
    fn add(self, rhs: &LabelHistogram) -> LabelHistogram {
        self.checked_add(rhs).expect("histogram length mismatch")
    }
}

/// Anything holding labeled samples over a fixed label set.
pub trait SampleSet {
    fn samples(&self) -> &[LabeledSample];
    fn num_classes(&self) -> usize;
}

impl SampleSet for LabeledDataset {
    fn samples(&self) -> &[LabeledSample] {
        &self.samples
    }

    fn num_classes(&self) -> usize {
        self.num_classes
    }
}

impl LabeledDataset {
    pub fn new(samples: Vec<LabeledSample>, num_classes: usize, dims: usize) -> Result<Self> {
        for (i, s) in samples.iter().enumerate() {
            if s.label >= num_classes {
                return Err(Error::arg(format!(
                    "sample {i}: label {} out of range for {num_classes} classes",
                    s.label
                )));
            }
            if s.features.len() != dims {
                return Err(Error::arg(format!(
                    "sample {i}: expected {dims} features, got {}",
                    s.features.len()
                )));
            }
            if s.features.iter().any(|x| !x.is_finite()) {
                return Err(Error::arg(format!("sample {i}: non-finite feature")));
            }
        }
        Ok(Self {
            samples,
            num_classes,
            dims,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn histogram(&self) -> LabelHistogram {
        histogram(self)
    }
}

pub fn histogram<S: SampleSet + ?Sized>(set: &S) -> LabelHistogram {
    let mut hist = LabelHistogram::zeros(set.num_classes());
    for s in set.samples() {
        hist.bump(s.label);
    }
    hist
}

/// Class means: `separation` times a signed coordinate axis while
/// `num_classes <= 2 * dims` (+e_0, .., +e_{d-1}, -e_0, ..), otherwise random
/// unit directions drawn from a fixed layout seed.
pub fn class_means(num_classes: usize, dims: usize, separation: f64) -> Vec<Vec<f64>> {
    if num_classes <= 2 * dims {
        return (0..num_classes)
            .map(|c| {
                let mut m = vec![0.0; dims];
                m[c % dims] = if c < dims { separation } else { -separation };
                m
            })
            .collect();
    }
    let mut rng =
        ChaCha8Rng::seed_from_u64(LAYOUT_SEED ^ ((num_classes as u64) << 32) ^ dims as u64);
    (0..num_classes)
        .map(|_| {
            let v: Vec<f64> = (0..dims).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            v.into_iter().map(|x| separation * x / norm).collect()
        })
        .collect()
}

/// Generate `num_classes * per_class` samples, grouped by class in label order.
pub fn generate_synthetic(
    num_classes: usize,
    dims: usize,
    per_class: usize,
    separation: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if num_classes < 2 {
        return Err(Error::arg("num_classes must be >= 2"));
    }
    if dims < 1 {
        return Err(Error::arg("dims must be >= 1"));
    }
    if per_class < 1 {
        return Err(Error::arg("per_class must be >= 1"));
    }
    if !(separation > 0.0 && separation.is_finite()) {
        return Err(Error::arg("separation must be a positive finite number"));
    }

    let means = class_means(num_classes, dims, separation);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(num_classes * per_class);
    for (label, mean) in means.iter().enumerate() {
        for _ in 0..per_class {
            let features = mean
                .iter()
                .map(|m| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    m + z
                })
                .collect();
            samples.push(LabeledSample { features, label });
        }
    }
    Ok(LabeledDataset {
        samples,
        num_classes,
        dims,
    })
}

/// Load `label,f1,...,fd` rows. `num_classes` is one more than the largest label.
pub fn load_csv(path: impl AsRef<Path>, has_header: bool) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => parse_err(0, format!("{other:?}")),
        })?;

    let mut samples = Vec::new();
    let mut dims = None;
    let mut max_label = None;
    let mut record = csv::StringRecord::new();
    loop {
        match reader.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                let message = match e.kind() {
                    csv::ErrorKind::UnequalLengths {
                        expected_len, len, ..
                    } => format!("ragged row: expected {expected_len} fields, found {len}"),
                    _ => e.to_string(),
                };
                return Err(parse_err(line, message));
            }
        }
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let mut fields = record.iter();
        let raw_label = fields.next().unwrap_or("");
        let label: i64 = raw_label
            .parse()
            .map_err(|_| parse_err(line, format!("non-numeric label `{raw_label}`")))?;
        if label < 0 {
            return Err(parse_err(line, format!("negative label {label}")));
        }
        let features = fields
            .map(|f| match f.parse::<f64>() {
                Ok(x) if x.is_finite() => Ok(x),
                Ok(_) => Err(parse_err(line, format!("non-finite feature `{f}`"))),
                Err(_) => Err(parse_err(line, format!("non-numeric feature `{f}`"))),
            })
            .collect::<Result<Vec<f64>>>()?;
        if features.is_empty() {
            return Err(parse_err(line, "row has no feature columns".into()));
        }
        if *dims.get_or_insert(features.len()) != features.len() {
            return Err(parse_err(line, "ragged row".into()));
        }
        let label = label as usize;
        max_label = max_label.max(Some(label));
        samples.push(LabeledSample { features, label });
    }

    match (dims, max_label) {
        (Some(dims), Some(max_label)) => Ok(LabeledDataset {
            samples,
            num_classes: max_label + 1,
            dims,
        }),
        _ => Err(parse_err(0, "file contains no samples".into())),
    }
}

/// Write a dataset in the format read by [`load_csv`].
pub fn write_csv(ds: &LabeledDataset, path: impl AsRef<Path>, header: bool) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    if header {
        out.push_str("label");
        for i in 0..ds.dims {
            out.push_str(&format!(",f{}", i + 1));
        }
        out.push('\n');
    }
    for s in &ds.samples {
        out.push_str(&s.label.to_string());
        for x in &s.features {
            out.push(',');
            out.push_str(&x.to_string());
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// One training minibatch plus its realized label counts.
#[derive(Debug, Clone)]
pub struct Minibatch<'a> {
    pub samples: Vec<&'a LabeledSample>,
    pub counts: LabelHistogram,
}

/// Draw `batch_size` samples uniformly. Sampling is without replacement
/// inside a batch unless the set holds fewer than `batch_size` samples.
pub fn draw_minibatch<'a, S, R>(set: &'a S, batch_size: usize, rng: &mut R) -> Result<Minibatch<'a>>
where
    S: SampleSet + ?Sized,
    R: Rng + ?Sized,
{
    let pool = set.samples();
    if pool.is_empty() {
        return Err(Error::state("cannot draw a minibatch from an empty shard"));
    }
    if batch_size == 0 {
        return Err(Error::arg("batch size must be >= 1"));
    }
    let samples: Vec<&LabeledSample> = if pool.len() >= batch_size {
        index::sample(rng, pool.len(), batch_size)
            .into_iter()
            .map(|i| &pool[i])
            .collect()
    } else {
        (0..batch_size)
            .map(|_| &pool[rng.random_range(0..pool.len())])
            .collect()
    };
    let mut counts = LabelHistogram::zeros(set.num_classes());
    for s in &samples {
        counts.bump(s.label);
    }
    Ok(Minibatch { samples, counts })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds_with_labels(labels: &[usize], num_classes: usize) -> LabeledDataset {
        LabeledDataset::new(
            labels
                .iter()
                .map(|&label| LabeledSample {
                    features: vec![label as f64],
                    label,
                })
                .collect(),
            num_classes,
            1,
        )
        .unwrap()
    }

    #[test]
    fn synthetic_counts_and_determinism() {
        let a = generate_synthetic(2, 2, 5, 3.0, 7).unwrap();
        assert_eq!(a.len(), 10);
        assert_eq!(a.histogram().counts(), &[5.0, 5.0]);
        let b = generate_synthetic(2, 2, 5, 3.0, 7).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(2, 2, 5, 3.0, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn synthetic_rejects_bad_arguments() {
        assert!(generate_synthetic(1, 2, 5, 3.0, 0).is_err());
        assert!(generate_synthetic(2, 0, 5, 3.0, 0).is_err());
        assert!(generate_synthetic(2, 2, 0, 3.0, 0).is_err());
        assert!(generate_synthetic(2, 2, 5, 0.0, 0).is_err());
    }

    #[test]
    fn class_means_are_layout_only() {
        let m = class_means(10, 8, 4.0);
        assert_eq!(m[0][0], 4.0);
        assert_eq!(m[8][0], -4.0);
        assert_eq!(m[9][1], -4.0);
        let wide = class_means(20, 3, 2.0);
        assert_eq!(wide, class_means(20, 3, 2.0));
        for v in &wide {
            let n: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn histogram_counts() {
        let ds = ds_with_labels(&[0, 0, 1, 2], 3);
        assert_eq!(ds.histogram().counts(), &[2.0, 1.0, 1.0]);
        let empty = ds_with_labels(&[], 3);
        assert_eq!(empty.histogram().counts(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn dataset_rejects_out_of_range_label() {
        let s = vec![LabeledSample {
            features: vec![0.0],
            label: 3,
        }];
        assert!(LabeledDataset::new(s, 3, 1).is_err());
    }

    #[test]
    fn csv_reads_simple_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        std::fs::write(&p, "0,1.0,2.0\n1,3.0,4.0").unwrap();
        let ds = load_csv(&p, false).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.dims, 2);
        assert_eq!(ds.num_classes, 2);
        assert_eq!(ds.samples[1].features, vec![3.0, 4.0]);
    }

    #[test]
    fn csv_header_is_skipped_when_flagged() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        std::fs::write(&p, "label,a,b\n2,1.0,2.0\n").unwrap();
        let ds = load_csv(&p, true).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.num_classes, 3);
        assert!(load_csv(&p, false).is_err());
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let cases = [
            ("", 0),
            ("0,1.0\n1,2.0,3.0\n", 2),
            ("0,1.0\n1,abc\n", 2),
            ("0,1.0\n-1,2.0\n", 2),
            ("0,1.0\nx,2.0\n", 2),
        ];
        for (i, (body, line)) in cases.iter().enumerate() {
            let p = dir.path().join(format!("bad{i}.csv"));
            std::fs::write(&p, body).unwrap();
            match load_csv(&p, false) {
                Err(Error::Parse { line: got, .. }) => assert_eq!(got, *line, "case {i}"),
                other => panic!("case {i}: expected parse error, got {other:?}"),
            }
        }
    }

    #[test]
    fn csv_missing_file_is_io_error() {
        assert!(matches!(
            load_csv("/nonexistent/definitely/missing.csv", false),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate_synthetic(3, 4, 6, 2.5, 11).unwrap();
        for header in [false, true] {
            let p = dir.path().join(format!("rt{header}.csv"));
            write_csv(&ds, &p, header).unwrap();
            assert_eq!(load_csv(&p, header).unwrap(), ds);
        }
    }

    #[test]
    fn minibatch_single_label_shard() {
        let ds = ds_with_labels(&[3; 10], 5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = draw_minibatch(&ds, 4, &mut rng).unwrap();
        assert_eq!(b.counts.counts(), &[0.0, 0.0, 0.0, 4.0, 0.0]);
    }

    #[test]
    fn minibatch_of_full_size_is_a_permutation() {
        let ds = LabeledDataset::new(
            (0..10)
                .map(|i| LabeledSample {
                    features: vec![i as f64],
                    label: i % 2,
                })
                .collect(),
            2,
            1,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = draw_minibatch(&ds, 10, &mut rng).unwrap();
        let mut seen: Vec<i64> = b.samples.iter().map(|s| s.features[0] as i64).collect();
        seen.sort();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn minibatch_larger_than_shard_uses_replacement() {
        let ds = ds_with_labels(&[0, 1], 2);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let b = draw_minibatch(&ds, 7, &mut rng).unwrap();
        assert_eq!(b.samples.len(), 7);
        assert_eq!(b.counts.total(), 7.0);
    }

    #[test]
    fn minibatch_from_empty_shard_fails() {
        let ds = ds_with_labels(&[], 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            draw_minibatch(&ds, 1, &mut rng),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn minibatch_label_means_match_expectation() {
        // [50, 50] shard, B = 10: each label count is hypergeometric with
        // mean 5 and variance 10 * 0.25 * 90/99; 10k draws give se ~ 0.015.
        let labels: Vec<usize> = (0..100).map(|i| i / 50).collect();
        let ds = ds_with_labels(&labels, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let draws = 10_000;
        let mut sum = [0.0; 2];
        for _ in 0..draws {
            let b = draw_minibatch(&ds, 10, &mut rng).unwrap();
            assert_eq!(b.counts.total(), 10.0);
            sum[0] += b.counts[0];
            sum[1] += b.counts[1];
        }
        for s in sum {
            let mean = s / draws as f64;
            assert!((mean - 5.0).abs() < 0.15, "mean {mean}");
        }
    }
}
