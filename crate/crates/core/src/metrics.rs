//! Clustering evaluation against gold labels: B³, label-pair nPMI,
//! diversity, uncertainty, and binary accuracy.
//!
//! Callers restrict inputs to gold-positive points before scoring.

use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::entropy;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BCubed {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl BCubed {
    pub fn new(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f1,
        }
    }
}

fn intern<T: Eq + Hash>(items: &[T]) -> (Vec<usize>, usize) {
    let mut ids: HashMap<&T, usize> = HashMap::new();
    let coded = items
        .iter()
        .map(|x| {
            let next = ids.len();
            *ids.entry(x).or_insert(next)
        })
        .collect();
    (coded, ids.len())
}

/// Point-averaged B³ precision, recall and their harmonic mean.
///
/// With `restrict_to`, the average runs only over points whose gold label
/// equals it; cluster and class sizes still count every point.
pub fn b_cubed<G, C>(gold: &[G], pred: &[C], restrict_to: Option<&G>) -> Result<BCubed>
where
    G: Eq + Hash,
    C: Eq + Hash,
{
    if gold.len() != pred.len() {
        return Err(Error::invalid(format!(
            "gold has {} points, prediction {}",
            gold.len(),
            pred.len()
        )));
    }
    if gold.is_empty() {
        return Err(Error::invalid("B³ of an empty clustering"));
    }
    let (g, ng) = intern(gold);
    let (c, nc) = intern(pred);
    let mut joint = vec![0usize; ng * nc];
    let mut gold_size = vec![0usize; ng];
    let mut cluster_size = vec![0usize; nc];
    for (&gi, &ci) in g.iter().zip(&c) {
        joint[gi * nc + ci] += 1;
        gold_size[gi] += 1;
        cluster_size[ci] += 1;
    }
    let (mut p_sum, mut r_sum, mut count) = (0.0, 0.0, 0usize);
    for (i, (&gi, &ci)) in g.iter().zip(&c).enumerate() {
        if restrict_to.is_some_and(|label| &gold[i] != label) {
            continue;
        }
        let shared = joint[gi * nc + ci] as f64;
        p_sum += shared / cluster_size[ci] as f64;
        r_sum += shared / gold_size[gi] as f64;
        count += 1;
    }
    if count == 0 {
        return Err(Error::invalid("no points carry the requested gold label"));
    }
    Ok(BCubed::new(p_sum / count as f64, r_sum / count as f64))
}

/// Gold label × predicted cluster co-occurrence counts.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Contingency {
    counts: BTreeMap<String, BTreeMap<usize, u64>>,
}

impl Contingency {
    pub fn from_assignments<S: AsRef<str>>(gold: &[S], pred: &[usize]) -> Result<Self> {
        if gold.len() != pred.len() {
            return Err(Error::invalid("gold and prediction lengths differ"));
        }
        let mut c = Self::default();
        for (g, &p) in gold.iter().zip(pred) {
            c.add(g.as_ref(), p, 1);
        }
        Ok(c)
    }

    pub fn add(&mut self, label: &str, cluster: usize, count: u64) {
        *self
            .counts
            .entry(label.to_owned())
            .or_default()
            .entry(cluster)
            .or_default() += count;
    }

    /// Registers a label with no points so it shows up as undefined.
    pub fn add_label(&mut self, label: &str) {
        self.counts.entry(label.to_owned()).or_default();
    }

    /// Sums counts cell by cell.
    pub fn merge(&mut self, other: &Contingency) {
        for (label, row) in &other.counts {
            self.add_label(label);
            for (&cluster, &n) in row {
                self.add(label, cluster, n);
            }
        }
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.counts.keys().map(String::as_str)
    }

    pub fn clusters(&self) -> Vec<usize> {
        let mut c: Vec<usize> = self
            .counts
            .values()
            .flat_map(|row| row.iter().filter(|(_, &n)| n > 0).map(|(&k, _)| k))
            .collect();
        c.sort_unstable();
        c.dedup();
        c
    }

    pub fn count(&self, label: &str, cluster: usize) -> u64 {
        self.counts
            .get(label)
            .and_then(|row| row.get(&cluster))
            .copied()
            .unwrap_or(0)
    }

    pub fn label_total(&self, label: &str) -> u64 {
        self.counts.get(label).map_or(0, |row| row.values().sum())
    }

    pub fn cluster_total(&self, cluster: usize) -> u64 {
        self.counts
            .values()
            .filter_map(|row| row.get(&cluster))
            .sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.values().flat_map(|row| row.values()).sum()
    }

    /// Keeps only the listed labels (in their sorted order).
    pub fn restrict(&self, labels: &[String]) -> Contingency {
        let mut out = Contingency::default();
        for label in labels {
            out.add_label(label);
            if let Some(row) = self.counts.get(label) {
                for (&c, &n) in row {
                    out.add(label, c, n);
                }
            }
        }
        out
    }
}

/// Symmetric label × label nPMI; `None` marks labels with no points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NpmiMatrix {
    pub labels: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
}

impl NpmiMatrix {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.labels.iter().position(|l| l == a)?;
        let j = self.labels.iter().position(|l| l == b)?;
        self.values[i][j]
    }
}

fn npmi(joint: f64, pa: f64, pb: f64) -> f64 {
    if joint <= 0.0 {
        return -1.0;
    }
    let denom = -joint.ln();
    if denom <= 0.0 {
        // both events certain: independent
        return 0.0;
    }
    ((joint / (pa * pb)).ln() / denom).clamp(-1.0, 1.0)
}

/// Pairwise nPMI of gold labels co-occurring in predicted clusters.
///
/// A cluster `c` is drawn with probability `n_c / n`. Label `x` occurs in
/// it with probability `n_xc / max_l n_lc`, its share relative to the
/// cluster's dominant label, and labels occur independently given the
/// cluster. Then `p(x) = Σ_c p(c) π_x(c)` and `p(x, y) = Σ_c p(c) π_x(c)
/// π_y(c)`. Labels that never share a cluster score −1, labels that always
/// occur together at equal strength score 1, and labels whose distribution
/// is the same in every cluster score 0.
pub fn npmi_matrix(contingency: &Contingency) -> NpmiMatrix {
    let labels: Vec<String> = contingency.labels().map(str::to_owned).collect();
    let clusters = contingency.clusters();
    let total = contingency.total() as f64;

    // presence[l][k] = π_l(c_k)
    let mut presence = vec![vec![0.0; clusters.len()]; labels.len()];
    let mut weight = vec![0.0; clusters.len()];
    for (k, &c) in clusters.iter().enumerate() {
        let top = labels
            .iter()
            .map(|l| contingency.count(l, c))
            .max()
            .unwrap_or(0);
        weight[k] = contingency.cluster_total(c) as f64 / total;
        for (i, l) in labels.iter().enumerate() {
            presence[i][k] = contingency.count(l, c) as f64 / top as f64;
        }
    }
    let marginal: Vec<f64> = presence
        .iter()
        .map(|row| row.iter().zip(&weight).map(|(p, w)| p * w).sum())
        .collect();

    let n = labels.len();
    let mut values = vec![vec![None; n]; n];
    for i in 0..n {
        if contingency.label_total(&labels[i]) == 0 {
            continue;
        }
        for j in i..n {
            if contingency.label_total(&labels[j]) == 0 {
                continue;
            }
            let joint: f64 = (0..clusters.len())
                .map(|k| weight[k] * presence[i][k] * presence[j][k])
                .sum();
            let v = npmi(joint, marginal[i], marginal[j]);
            values[i][j] = Some(v);
            values[j][i] = Some(v);
        }
    }
    NpmiMatrix { labels, values }
}

fn empirical<T: Eq + Hash>(items: &[T]) -> Vec<f64> {
    let mut counts: HashMap<&T, usize> = HashMap::new();
    for x in items {
        *counts.entry(x).or_default() += 1;
    }
    let n = items.len() as f64;
    let mut p: Vec<f64> = counts.values().map(|&c| c as f64 / n).collect();
    // fixed summation order
    p.sort_by(f64::total_cmp);
    p
}

/// Exponentiated entropy of the hard-assignment distribution: the
/// effective number of clusters.
pub fn diversity<C: Eq + Hash>(pred: &[C]) -> Result<f64> {
    if pred.is_empty() {
        return Err(Error::invalid("diversity of an empty assignment"));
    }
    Ok(entropy(&empirical(pred)).exp())
}

/// Mean exponentiated per-point entropy of the soft latent distributions.
pub fn uncertainty<D: AsRef<[f64]>>(distributions: &[D]) -> Result<f64> {
    if distributions.is_empty() {
        return Err(Error::invalid("uncertainty of an empty set"));
    }
    let sum: f64 = distributions
        .iter()
        .map(|d| entropy(d.as_ref()).exp())
        .sum();
    Ok(sum / distributions.len() as f64)
}

pub const ACCURACY_THRESHOLD: f64 = 0.5;

/// Fraction of examples where `p ≥ 0.5` agrees with the label.
pub fn binary_accuracy(probs: &[f64], labels: &[bool]) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::invalid("probabilities and labels differ in length"));
    }
    if probs.is_empty() {
        return Err(Error::invalid("accuracy of an empty set"));
    }
    let hits = probs
        .iter()
        .zip(labels)
        .filter(|(&p, &y)| (p >= ACCURACY_THRESHOLD) == y)
        .count();
    Ok(hits as f64 / probs.len() as f64)
}
