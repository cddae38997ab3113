//! Minibatch training, restarts, consistency-based selection, the
//! regularizer ablation grid and hidden-size tuning.

mod optim;
pub mod rundir;
mod select;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use optim::{Adam, Optimizer};
pub use select::{pairwise_consistency, select_consistent, Selection};

use crate::config::TrainConfig;
use crate::data::{derive_seed, EmbeddingBundle, EmbeddingIndex, SpanTarget, TaskDataset};
use crate::error::{Error, Result};
use crate::lsl::{LatentPosterior, LossBreakdown, Regularization};
use crate::metrics::{self, BCubed};
use crate::model::{Model, ModelShape};

/// Seed used for parameter initialization of a run.
pub fn init_seed(seed: u64) -> u64 {
    derive_seed(seed, 0)
}

/// Deterministic per-epoch permutations of `0..n`.
#[derive(Debug, Clone)]
pub struct Shuffler {
    order: Vec<usize>,
    rng: ChaCha8Rng,
}

impl Shuffler {
    pub fn new(n: usize, seed: u64) -> Self {
        Self {
            order: (0..n).collect(),
            rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, 1)),
        }
    }

    pub fn next_epoch(&mut self) -> &[usize] {
        self.order.shuffle(&mut self.rng);
        &self.order
    }
}

pub(crate) type Example<'a> = (&'a EmbeddingBundle, &'a SpanTarget);

pub(crate) fn resolve<'a>(
    dataset: &'a TaskDataset,
    embeddings: &'a EmbeddingIndex,
) -> Result<Vec<Example<'a>>> {
    dataset
        .examples
        .iter()
        .map(|t| {
            embeddings
                .get(&t.sentence_id)
                .map(|b| (b, t))
                .ok_or_else(|| {
                    Error::invalid(format!(
                        "task {:?} references unknown sentence {:?}",
                        dataset.name, t.sentence_id
                    ))
                })
        })
        .collect()
}

/// Model shape implied by a dataset, its features, and a config.
pub fn model_shape(
    dataset: &TaskDataset,
    embeddings: &EmbeddingIndex,
    config: &TrainConfig,
) -> Result<ModelShape> {
    let (num_layers, dim) = embeddings.layers_and_dim()?;
    Ok(ModelShape {
        num_layers,
        dim,
        arity: dataset.arity()?,
        hidden: config.hidden_size,
        num_latent: config.num_latent,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
}

/// Outcome of one training run, evaluated on the dev split.
#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifact {
    pub config: TrainConfig,
    pub model: Model,
    /// One posterior per dev example, in dev order.
    pub dev_posteriors: Vec<LatentPosterior>,
    pub dev_accuracy: f64,
    pub epochs: Vec<EpochRecord>,
    /// Training loss of every optimizer step.
    pub step_losses: Vec<f64>,
    /// Epoch whose parameters were kept (1-based).
    pub best_epoch: usize,
}

impl RunArtifact {
    pub fn dev_assignments(&self) -> Vec<usize> {
        self.dev_posteriors.iter().map(|p| p.hard_class).collect()
    }
}

/// Mean loss over consecutive batches, weighted by batch length.
pub fn evaluate_loss(
    model: &Model,
    examples: &[Example<'_>],
    reg: Regularization,
    batch_size: usize,
) -> Result<LossBreakdown> {
    let mut acc = LossBreakdown::default();
    for chunk in examples.chunks(batch_size) {
        let l = model.batch_loss(chunk, reg)?;
        let w = chunk.len() as f64 / examples.len() as f64;
        acc.total += w * l.total;
        acc.lsl += w * l.lsl;
        acc.batch_entropy += w * l.batch_entropy;
        acc.instance_entropy += w * l.instance_entropy;
    }
    Ok(acc)
}

pub fn posteriors(model: &Model, examples: &[Example<'_>]) -> Result<Vec<LatentPosterior>> {
    examples
        .iter()
        .map(|(b, t)| model.posterior(b, t))
        .collect()
}

/// Trains one model on `train`, early-stopping on the dev total loss and
/// keeping the parameters of the best dev epoch.
pub fn train(
    train: &TaskDataset,
    dev: &TaskDataset,
    embeddings: &EmbeddingIndex,
    config: &TrainConfig,
) -> Result<RunArtifact> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if dev.is_empty() {
        return Err(Error::invalid("dev set is empty"));
    }
    let reg = config.regularization()?;
    let shape = model_shape(train, embeddings, config)?;
    if dev.arity()? != shape.arity {
        return Err(Error::invalid("train and dev tasks differ in arity"));
    }
    let train_ex = resolve(train, embeddings)?;
    let dev_ex = resolve(dev, embeddings)?;

    let mut model = Model::init(shape, init_seed(config.seed))?;
    let mut optimizer = Optimizer::new(config.optimizer, config.learning_rate, &model);
    let mut shuffler = Shuffler::new(train_ex.len(), config.seed);

    let mut best = (f64::INFINITY, model.clone(), 0usize);
    let mut epochs = Vec::new();
    let mut step_losses = Vec::new();
    let mut batch: Vec<Example<'_>> = Vec::with_capacity(config.batch_size);
    for epoch in 1..=config.max_epochs {
        let mut epoch_loss = 0.0;
        for chunk in shuffler.next_epoch().chunks(config.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| train_ex[i]));
            let (loss, grad) = model.loss_total(&batch, reg)?;
            if !loss.total.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    step: step_losses.len() + 1,
                    loss: loss.total,
                });
            }
            step_losses.push(loss.total);
            epoch_loss += loss.total * chunk.len() as f64;
            optimizer.step(&mut model, &grad);
        }
        if !model.is_finite() {
            return Err(Error::Divergence {
                epoch,
                step: step_losses.len(),
                loss: f64::NAN,
            });
        }
        let dev_loss = evaluate_loss(&model, &dev_ex, reg, config.batch_size)?.total;
        epochs.push(EpochRecord {
            epoch,
            train_loss: epoch_loss / train_ex.len() as f64,
            dev_loss,
        });
        if dev_loss < best.0 {
            best = (dev_loss, model.clone(), epoch);
        } else if epoch - best.2 >= config.patience {
            break;
        }
    }
    let (_, model, best_epoch) = best;

    let dev_posteriors = posteriors(&model, &dev_ex)?;
    let probs: Vec<f64> = dev_posteriors.iter().map(|p| p.binary_prob).collect();
    let labels: Vec<bool> = dev.examples.iter().map(|t| t.label).collect();
    let dev_accuracy = metrics::binary_accuracy(&probs, &labels)?;
    Ok(RunArtifact {
        config: config.clone(),
        model,
        dev_posteriors,
        dev_accuracy,
        epochs,
        step_losses,
        best_epoch,
    })
}

/// Trains `runs` restarts with seeds `config.seed + k` on a pool of `jobs`
/// threads. Output order follows `k`.
pub fn train_restarts(
    train_set: &TaskDataset,
    dev: &TaskDataset,
    embeddings: &EmbeddingIndex,
    config: &TrainConfig,
    runs: usize,
    jobs: usize,
) -> Result<Vec<RunArtifact>> {
    let configs: Vec<TrainConfig> = (0..runs as u64)
        .map(|k| TrainConfig {
            seed: config.seed.wrapping_add(k),
            ..config.clone()
        })
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::invalid(e.to_string()))?;
    pool.install(|| {
        configs
            .par_iter()
            .map(|c| train(train_set, dev, embeddings, c))
            .collect()
    })
}

/// Indices of dev examples that are gold positives.
pub fn gold_positive_indices(dev: &TaskDataset) -> Vec<usize> {
    dev.examples
        .iter()
        .enumerate()
        .filter(|(_, t)| t.gold_positive().is_some())
        .map(|(i, _)| i)
        .collect()
}

/// Clustering and classification scores of a run on gold-positive dev points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunScores {
    pub bcubed: BCubed,
    pub accuracy: f64,
    pub diversity: f64,
    pub uncertainty: f64,
}

pub fn score_posteriors(
    dev: &TaskDataset,
    posteriors: &[LatentPosterior],
    accuracy: f64,
) -> Result<RunScores> {
    if posteriors.len() != dev.len() {
        return Err(Error::invalid("posteriors do not align with the dev set"));
    }
    let idx = gold_positive_indices(dev);
    if idx.is_empty() {
        return Err(Error::invalid("dev set has no gold-positive examples"));
    }
    let gold: Vec<&str> = idx
        .iter()
        .map(|&i| dev.examples[i].gold.as_deref().unwrap())
        .collect();
    let pred: Vec<usize> = idx.iter().map(|&i| posteriors[i].hard_class).collect();
    let dists: Vec<&[f64]> = idx
        .iter()
        .map(|&i| posteriors[i].distribution.as_slice())
        .collect();
    Ok(RunScores {
        bcubed: metrics::b_cubed(&gold, &pred, None)?,
        accuracy,
        diversity: metrics::diversity(&pred)?,
        uncertainty: metrics::uncertainty(&dists)?,
    })
}

pub fn score_run(run: &RunArtifact, dev: &TaskDataset) -> Result<RunScores> {
    score_posteriors(dev, &run.dev_posteriors, run.dev_accuracy)
}

/// Trains restarts and keeps the most consistent one.
pub fn train_and_select(
    train_set: &TaskDataset,
    dev: &TaskDataset,
    embeddings: &EmbeddingIndex,
    config: &TrainConfig,
    runs: usize,
    jobs: usize,
) -> Result<(Vec<RunArtifact>, Selection)> {
    let artifacts = train_restarts(train_set, dev, embeddings, config, runs, jobs)?;
    let idx = gold_positive_indices(dev);
    let assignments: Vec<Vec<usize>> = artifacts
        .iter()
        .map(|a| {
            idx.iter()
                .map(|&i| a.dev_posteriors[i].hard_class)
                .collect()
        })
        .collect();
    let selection = if artifacts.len() == 1 {
        Selection {
            chosen: 0,
            scores: vec![1.0],
        }
    } else {
        select_consistent(&assignments)?
    };
    Ok((artifacts, selection))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub alpha: f64,
    pub beta: f64,
    /// `None` for reference rows that have no classifier.
    pub accuracy: Option<f64>,
    pub bcubed: BCubed,
    pub diversity: f64,
    pub uncertainty: f64,
}

/// Regularizer ablation: `{none, +be, +ie, +be+ie}` plus the gold and
/// single-cluster reference rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, name: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.name == name)
    }
}

pub const ABLATION_CELLS: [(&str, bool, bool); 4] = [
    ("LSL", false, false),
    ("+be", true, false),
    ("+ie", false, true),
    ("+be+ie", true, true),
];

pub fn ablation_grid(
    train_set: &TaskDataset,
    dev: &TaskDataset,
    embeddings: &EmbeddingIndex,
    base: &TrainConfig,
    runs: usize,
    jobs: usize,
) -> Result<AblationTable> {
    let idx = gold_positive_indices(dev);
    if idx.is_empty() {
        return Err(Error::invalid("dev set has no gold-positive examples"));
    }
    let gold: Vec<&str> = idx
        .iter()
        .map(|&i| dev.examples[i].gold.as_deref().unwrap())
        .collect();

    let mut rows = vec![AblationRow {
        name: "Gold".into(),
        alpha: f64::NAN,
        beta: f64::NAN,
        accuracy: None,
        bcubed: BCubed::new(1.0, 1.0),
        diversity: metrics::diversity(&gold)?,
        uncertainty: 1.0,
    }];
    for (name, be, ie) in ABLATION_CELLS {
        let config = TrainConfig {
            alpha: if be { base.alpha } else { 0.0 },
            beta: if ie { base.beta } else { 0.0 },
            ..base.clone()
        };
        let (artifacts, selection) =
            train_and_select(train_set, dev, embeddings, &config, runs, jobs)?;
        let s = score_run(&artifacts[selection.chosen], dev)?;
        rows.push(AblationRow {
            name: name.into(),
            alpha: config.alpha,
            beta: config.beta,
            accuracy: Some(s.accuracy),
            bcubed: s.bcubed,
            diversity: s.diversity,
            uncertainty: s.uncertainty,
        });
    }
    let single = vec![0usize; gold.len()];
    rows.push(AblationRow {
        name: "Single".into(),
        alpha: f64::NAN,
        beta: f64::NAN,
        accuracy: None,
        bcubed: metrics::b_cubed(&gold, &single, None)?,
        diversity: 1.0,
        uncertainty: 1.0,
    });
    Ok(AblationTable { rows })
}

/// Smallest size whose accuracy reaches `threshold` × the best accuracy.
pub fn choose_hidden_size(results: &[(usize, f64)], threshold: f64) -> Result<usize> {
    if results.is_empty() {
        return Err(Error::invalid("no hidden sizes to choose from"));
    }
    if results.windows(2).any(|w| w[0].0 >= w[1].0) {
        return Err(Error::invalid("hidden sizes must be strictly ascending"));
    }
    let best = results
        .iter()
        .map(|&(_, a)| a)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(results
        .iter()
        .find(|&&(_, a)| a >= threshold * best)
        .expect("the best size always passes")
        .0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenSizeChoice {
    pub chosen: usize,
    pub accuracies: Vec<(usize, f64)>,
    pub threshold: f64,
}

pub const DEFAULT_CAPACITY_THRESHOLD: f64 = 0.97;

/// Scores every size with `accuracy`, in parallel on `jobs` threads, and
/// applies [`choose_hidden_size`].
pub fn tune_hidden_size_with<F>(
    sizes: &[usize],
    threshold: f64,
    jobs: usize,
    accuracy: F,
) -> Result<HiddenSizeChoice>
where
    F: Fn(usize) -> Result<f64> + Sync,
{
    if sizes.is_empty() {
        return Err(Error::invalid("no hidden sizes to try"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::invalid(e.to_string()))?;
    let accuracies: Vec<(usize, f64)> = pool.install(|| {
        sizes
            .par_iter()
            .map(|&h| accuracy(h).map(|a| (h, a)))
            .collect::<Result<_>>()
    })?;
    let chosen = choose_hidden_size(&accuracies, threshold)?;
    Ok(HiddenSizeChoice {
        chosen,
        accuracies,
        threshold,
    })
}

/// Trains a plain binary probe (`N = 1`, no regularizers) per size and
/// picks by dev accuracy.
pub fn tune_hidden_size(
    train_set: &TaskDataset,
    dev: &TaskDataset,
    embeddings: &EmbeddingIndex,
    base: &TrainConfig,
    sizes: &[usize],
    threshold: f64,
    jobs: usize,
) -> Result<HiddenSizeChoice> {
    tune_hidden_size_with(sizes, threshold, jobs, |h| {
        let config = TrainConfig {
            hidden_size: h,
            num_latent: 1,
            alpha: 0.0,
            beta: 0.0,
            ..base.clone()
        };
        train(train_set, dev, embeddings, &config).map(|r| r.dev_accuracy)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hidden_size_rule() {
        assert_eq!(
            choose_hidden_size(&[(8, 0.9), (16, 0.9), (32, 0.9)], 0.97).unwrap(),
            8
        );
        // 0.95 ≥ 0.97 · 0.96 = 0.9312
        assert_eq!(
            choose_hidden_size(&[(8, 0.80), (16, 0.95), (32, 0.96)], 0.97).unwrap(),
            16
        );
        assert_eq!(choose_hidden_size(&[(4, 0.5)], 0.97).unwrap(), 4);
        assert!(choose_hidden_size(&[], 0.97).is_err());
        assert!(choose_hidden_size(&[(8, 0.5), (8, 0.6)], 0.97).is_err());
    }

    #[test]
    fn shuffler_is_seeded_permutation() {
        let mut a = Shuffler::new(10, 3);
        let mut b = Shuffler::new(10, 3);
        let first = a.next_epoch().to_vec();
        assert_eq!(first, b.next_epoch());
        let mut sorted = first.clone();
        sorted.sort();
        assert_eq!(sorted, (0..10).collect::<Vec<_>>());
        assert_ne!(first, a.next_epoch());
    }
}
