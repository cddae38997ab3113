//! Synthetic benchmark with planted latent subclasses.
//!
//! Positives come from `K` isotropic Gaussian clusters whose means sit on
//! orthogonal axes, pairwise `separation · noise` apart. Negatives come from
//! a Gaussian displaced to the opposite side of the origin. Every example is
//! a one-token sentence, so the full loader path and probe stack run on it.
//! With more than one layer, the signal lives in `signal_layer` and the
//! other layers carry pure noise.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{
    encode_embeddings, encode_task, EmbeddingBundle, EmbeddingIndex, Span, SpanTarget, Split,
    TaskDataset,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub num_subclasses: usize,
    /// Total positives, spread as evenly as possible over the subclasses.
    pub positives: usize,
    /// Fraction of all examples that are negatives.
    pub negative_fraction: f64,
    pub dim: usize,
    /// Distance between subclass means, in units of `noise`.
    pub separation: f64,
    /// Per-coordinate standard deviation.
    pub noise: f64,
    pub num_layers: usize,
    pub signal_layer: usize,
    pub dev_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
    pub name: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_subclasses: 6,
            positives: 5000,
            negative_fraction: 0.5,
            dim: 16,
            separation: 6.0,
            noise: 1.0,
            num_layers: 1,
            signal_layer: 0,
            dev_fraction: 0.2,
            test_fraction: 0.0,
            seed: 0,
            name: "synth".into(),
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.num_subclasses == 0 {
            return Err(Error::invalid("need at least one subclass"));
        }
        if !(self.separation > 0.0 && self.separation.is_finite()) {
            return Err(Error::invalid(format!(
                "infeasible geometry: separation must be positive, got {}",
                self.separation
            )));
        }
        if !(self.noise > 0.0 && self.noise.is_finite()) {
            return Err(Error::invalid("noise must be positive"));
        }
        if self.num_subclasses > self.dim {
            return Err(Error::invalid(format!(
                "infeasible geometry: {} subclasses need dim ≥ {}",
                self.num_subclasses, self.num_subclasses
            )));
        }
        if self.num_layers == 0 || self.signal_layer >= self.num_layers {
            return Err(Error::invalid("signal_layer must index an existing layer"));
        }
        if !(0.0..1.0).contains(&self.negative_fraction) {
            return Err(Error::invalid("negative_fraction must be in [0, 1)"));
        }
        if self.dev_fraction <= 0.0
            || self.test_fraction < 0.0
            || self.dev_fraction + self.test_fraction >= 1.0
        {
            return Err(Error::invalid(
                "dev/test fractions must leave a non-empty train split",
            ));
        }
        if self.positives < self.num_subclasses {
            return Err(Error::invalid("need at least one positive per subclass"));
        }
        Ok(())
    }

    pub fn num_negatives(&self) -> usize {
        (self.positives as f64 * self.negative_fraction / (1.0 - self.negative_fraction)).round()
            as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub split: Split,
    /// Planted subclass per example, `None` for negatives.
    pub planted: Vec<Option<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub config: SynthConfig,
    pub num_negatives: usize,
    /// Nearest-centroid accuracy on the planted labels of all positives.
    pub oracle_accuracy: f64,
    pub splits: Vec<SplitPlan>,
}

#[derive(Debug, Clone)]
pub struct SynthBenchmark {
    pub embeddings: EmbeddingIndex,
    pub train: TaskDataset,
    pub dev: TaskDataset,
    pub test: TaskDataset,
    pub manifest: SynthManifest,
}

pub fn gold_label(class: usize) -> String {
    format!("c{class}")
}

struct Point {
    class: Option<usize>,
    signal: Vec<f32>,
}

/// Nearest-centroid classification of `points` using their own class means.
fn nearest_centroid_accuracy(points: &[Point], k: usize, dim: usize) -> f64 {
    let mut sums = vec![vec![0.0f64; dim]; k];
    let mut counts = vec![0usize; k];
    for p in points {
        if let Some(c) = p.class {
            counts[c] += 1;
            for (s, &v) in sums[c].iter_mut().zip(&p.signal) {
                *s += f64::from(v);
            }
        }
    }
    for (s, &n) in sums.iter_mut().zip(&counts) {
        s.iter_mut().for_each(|x| *x /= n.max(1) as f64);
    }
    let (mut hit, mut total) = (0usize, 0usize);
    for p in points {
        let Some(c) = p.class else { continue };
        let nearest = (0..k)
            .min_by(|&a, &b| {
                let da: f64 = sums[a]
                    .iter()
                    .zip(&p.signal)
                    .map(|(m, &v)| (m - f64::from(v)).powi(2))
                    .sum();
                let db: f64 = sums[b]
                    .iter()
                    .zip(&p.signal)
                    .map(|(m, &v)| (m - f64::from(v)).powi(2))
                    .sum();
                da.total_cmp(&db)
            })
            .unwrap();
        hit += usize::from(nearest == c);
        total += 1;
    }
    hit as f64 / total as f64
}

pub fn generate(config: &SynthConfig) -> Result<SynthBenchmark> {
    config.validate()?;
    let k = config.num_subclasses;
    let d = config.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let gauss = Normal::new(0.0, config.noise).expect("positive noise");

    // orthogonal means r·e_c are r√2 apart
    let radius = config.separation * config.noise / 2f64.sqrt();
    let mut negative_mean = vec![0.0; d];
    for v in negative_mean.iter_mut().take(k) {
        *v = -radius / (k as f64).sqrt();
    }

    let mut points = Vec::new();
    for i in 0..config.positives {
        let class = i % k;
        let signal = (0..d)
            .map(|j| {
                let mean = if j == class { radius } else { 0.0 };
                (mean + gauss.sample(&mut rng)) as f32
            })
            .collect();
        points.push(Point {
            class: Some(class),
            signal,
        });
    }
    let num_negatives = config.num_negatives();
    for _ in 0..num_negatives {
        let signal = negative_mean
            .iter()
            .map(|&m| (m + gauss.sample(&mut rng)) as f32)
            .collect();
        points.push(Point {
            class: None,
            signal,
        });
    }
    let oracle_accuracy = nearest_centroid_accuracy(&points, k, d);
    points.shuffle(&mut rng);

    // distractor layers share the signal's overall scale
    let distractor = Normal::new(0.0, radius.max(config.noise)).expect("positive scale");
    let mut bundles = Vec::with_capacity(points.len());
    let mut targets = Vec::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        let sentence_id = format!("s{i}");
        let mut values = Vec::with_capacity(config.num_layers * d);
        for layer in 0..config.num_layers {
            if layer == config.signal_layer {
                values.extend_from_slice(&p.signal);
            } else {
                values.extend((0..d).map(|_| distractor.sample(&mut rng) as f32));
            }
        }
        bundles.push(EmbeddingBundle::new(
            &sentence_id,
            config.num_layers,
            1,
            d,
            values,
        )?);
        targets.push(SpanTarget {
            id: Some(format!("ex{i}")),
            sentence_id,
            span1: Span { start: 0, end: 1 },
            span2: None,
            label: p.class.is_some(),
            gold: p.class.map(gold_label),
        });
    }

    let n = points.len();
    let n_dev = ((n as f64) * config.dev_fraction).round() as usize;
    let n_test = ((n as f64) * config.test_fraction).round() as usize;
    let n_train = n - n_dev - n_test;
    let planted: Vec<Option<usize>> = points.iter().map(|p| p.class).collect();
    let ranges = [
        (Split::Train, 0..n_train),
        (Split::Dev, n_train..n_train + n_dev),
        (Split::Test, n_train + n_dev..n),
    ];
    let splits = ranges
        .iter()
        .map(|(split, r)| SplitPlan {
            split: *split,
            planted: planted[r.clone()].to_vec(),
        })
        .collect();
    let mut datasets = ranges
        .iter()
        .map(|(split, r)| TaskDataset::new(&config.name, *split, targets[r.clone()].to_vec()));
    let (train, dev, test) = (
        datasets.next().unwrap(),
        datasets.next().unwrap(),
        datasets.next().unwrap(),
    );

    Ok(SynthBenchmark {
        embeddings: EmbeddingIndex::new(bundles)?,
        train,
        dev,
        test,
        manifest: SynthManifest {
            config: config.clone(),
            num_negatives,
            oracle_accuracy,
            splits,
        },
    })
}

pub const EMBEDDINGS_FILE: &str = "embeddings.bin";
pub const MANIFEST_FILE: &str = "manifest.json";

impl SynthBenchmark {
    pub fn task_file_name(&self, split: Split) -> String {
        format!("{}.{}.jsonl", self.manifest.config.name, split.as_str())
    }

    /// Writes `embeddings.bin`, one task file per split and `manifest.json`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, bytes: &[u8]| {
            let p = dir.join(name);
            std::fs::write(&p, bytes).map_err(|e| Error::io(&p, e))
        };
        write(EMBEDDINGS_FILE, &encode_embeddings(self.embeddings.iter()))?;
        for ds in [&self.train, &self.dev, &self.test] {
            write(
                &self.task_file_name(ds.split),
                encode_task(&ds.examples).as_bytes(),
            )?;
        }
        let manifest = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        write(MANIFEST_FILE, (manifest + "\n").as_bytes())
    }
}
