//! Negative sampling that turns labeled spans into binary tasks.
//!
//! Negatives are drawn once, without replacement, and capped at the number
//! of available non-positive units.

use std::collections::BTreeSet;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::corpus::AnnotatedSentence;
use super::task::{Span, SpanTarget};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpanStrategy {
    /// Draw from the sentence's `candidate_spans` (e.g. all noun phrases).
    FromCandidates,
    /// Draw from every span of the sentence, up to an optional width.
    RandomSpans { max_width: Option<usize> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairMode {
    RandomUnattached,
    ClosestUnattached,
}

/// Whether the negative count for closest-pair sampling is budgeted per
/// head span (predicate) or for the sentence as a whole.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioScope {
    #[default]
    PerPredicate,
    PerSentence,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sampled {
    pub negatives: Vec<SpanTarget>,
    /// Fewer negatives were available than the ratio asked for.
    pub short: bool,
}

/// `min(⌈ratio · positives⌉, available)`
pub fn negative_budget(ratio: f64, positives: usize, available: usize) -> usize {
    let want = (ratio * positives as f64 - 1e-9).ceil().max(0.0) as usize;
    want.min(available)
}

fn check_ratio(ratio: f64) -> Result<()> {
    if ratio.is_finite() && ratio >= 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "ratio must be finite and ≥ 0, got {ratio}"
        )))
    }
}

/// Mixes a base seed with a per-sentence index (splitmix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn choose<T: Copy + Ord>(pool: Vec<T>, k: usize, seed: u64) -> Vec<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = index::sample(&mut rng, pool.len(), k).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| pool[i]).collect()
}

fn negative(sentence: &AnnotatedSentence, span1: Span, span2: Option<Span>) -> SpanTarget {
    SpanTarget {
        id: None,
        sentence_id: sentence.sentence_id.clone(),
        span1,
        span2,
        label: false,
        gold: None,
    }
}

pub fn sample_negative_spans(
    sentence: &AnnotatedSentence,
    strategy: SpanStrategy,
    ratio: f64,
    rng_seed: u64,
) -> Result<Sampled> {
    check_ratio(ratio)?;
    let positives: BTreeSet<Span> = sentence.positive_units.iter().map(|u| u.span1).collect();
    let pool: BTreeSet<Span> = match strategy {
        SpanStrategy::FromCandidates => sentence
            .candidate_spans
            .as_ref()
            .ok_or_else(|| {
                Error::invalid(format!(
                    "sentence {:?} has no candidate_spans",
                    sentence.sentence_id
                ))
            })?
            .iter()
            .copied()
            .collect(),
        SpanStrategy::RandomSpans { max_width } => {
            let t = sentence.tokens.len();
            let w = max_width.unwrap_or(t).min(t);
            (0..t)
                .flat_map(|s| (s + 1..=(s + w).min(t)).map(move |e| Span { start: s, end: e }))
                .collect()
        }
    };
    let pool: Vec<Span> = pool.difference(&positives).copied().collect();
    let want = negative_budget(ratio, sentence.positive_units.len(), usize::MAX);
    let k = want.min(pool.len());
    let negatives = choose(pool, k, rng_seed)
        .into_iter()
        .map(|s| negative(sentence, s, None))
        .collect();
    Ok(Sampled {
        negatives,
        short: k < want,
    })
}

/// Units that can take part in a pair: the candidate spans when given,
/// otherwise every single token.
fn pair_units(sentence: &AnnotatedSentence) -> Vec<Span> {
    let mut units: BTreeSet<Span> = match &sentence.candidate_spans {
        Some(c) => c.iter().copied().collect(),
        None => (0..sentence.tokens.len())
            .map(|i| Span {
                start: i,
                end: i + 1,
            })
            .collect(),
    };
    // positive arguments are always legal endpoints
    for u in &sentence.positive_units {
        units.insert(u.span1);
        units.extend(u.span2);
    }
    units.into_iter().collect()
}

fn attached(sentence: &AnnotatedSentence) -> Result<BTreeSet<(Span, Span)>> {
    let mut set = BTreeSet::new();
    for u in &sentence.positive_units {
        let Some(s2) = u.span2 else {
            return Err(Error::invalid(format!(
                "sentence {:?}: pair sampling needs span-pair positives",
                sentence.sentence_id
            )));
        };
        set.insert((u.span1, s2));
        set.insert((s2, u.span1));
    }
    Ok(set)
}

/// Sort key: midpoint distance, then the start of the leftmost span of the
/// pair, then the start of the rightmost one, then the ends.
fn closeness_key(head: Span, other: Span) -> (usize, usize, usize, usize, usize) {
    let dist = head.twice_midpoint().abs_diff(other.twice_midpoint());
    let (left, right) = if (head.start, head.end) <= (other.start, other.end) {
        (head, other)
    } else {
        (other, head)
    };
    (dist, left.start, right.start, left.end, right.end)
}

pub fn sample_negative_pairs(
    sentence: &AnnotatedSentence,
    mode: PairMode,
    ratio: f64,
    rng_seed: u64,
    scope: RatioScope,
) -> Result<Sampled> {
    check_ratio(ratio)?;
    let attached = attached(sentence)?;
    let units = pair_units(sentence);
    let free = |a: Span, b: Span| a != b && !attached.contains(&(a, b));

    match mode {
        PairMode::RandomUnattached => {
            let pool: Vec<(Span, Span)> = units
                .iter()
                .flat_map(|&a| units.iter().map(move |&b| (a, b)))
                .filter(|&(a, b)| free(a, b))
                .collect();
            let want = negative_budget(ratio, sentence.positive_units.len(), usize::MAX);
            let k = want.min(pool.len());
            let negatives = choose(pool, k, rng_seed)
                .into_iter()
                .map(|(a, b)| negative(sentence, a, Some(b)))
                .collect();
            Ok(Sampled {
                negatives,
                short: k < want,
            })
        }
        PairMode::ClosestUnattached => {
            // heads in order of first appearance
            let mut heads: Vec<(Span, usize)> = Vec::new();
            for u in &sentence.positive_units {
                match heads.iter_mut().find(|(h, _)| *h == u.span1) {
                    Some((_, n)) => *n += 1,
                    None => heads.push((u.span1, 1)),
                }
            }
            let ranked = |head: Span| {
                let mut c: Vec<Span> = units.iter().copied().filter(|&u| free(head, u)).collect();
                c.sort_by_key(|&u| closeness_key(head, u));
                c
            };
            let mut negatives = Vec::new();
            let mut short = false;
            match scope {
                RatioScope::PerPredicate => {
                    for &(head, n) in &heads {
                        let cands = ranked(head);
                        let want = negative_budget(ratio, n, usize::MAX);
                        short |= cands.len() < want;
                        negatives.extend(
                            cands
                                .into_iter()
                                .take(want)
                                .map(|u| negative(sentence, head, Some(u))),
                        );
                    }
                }
                RatioScope::PerSentence => {
                    let mut all: Vec<(Span, Span)> = heads
                        .iter()
                        .flat_map(|&(h, _)| ranked(h).into_iter().map(move |u| (h, u)))
                        .collect();
                    all.sort_by_key(|&(h, u)| closeness_key(h, u));
                    let want = negative_budget(ratio, sentence.positive_units.len(), usize::MAX);
                    short = all.len() < want;
                    negatives.extend(
                        all.into_iter()
                            .take(want)
                            .map(|(h, u)| negative(sentence, h, Some(u))),
                    );
                }
            }
            Ok(Sampled { negatives, short })
        }
    }
}

/// How `build_task` draws negatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NegativeSampling {
    Spans(SpanStrategy),
    Pairs(PairMode, RatioScope),
}

#[derive(Debug, Clone, Default)]
pub struct BuiltTask {
    pub examples: Vec<SpanTarget>,
    /// Sentences that could not reach the requested ratio.
    pub short_sentences: Vec<String>,
}

/// Emits each sentence's positives followed by its sampled negatives. The
/// per-sentence seed is derived from `seed` and the sentence's position.
pub fn build_task(
    corpus: &[AnnotatedSentence],
    sampling: NegativeSampling,
    ratio: f64,
    seed: u64,
) -> Result<BuiltTask> {
    let mut out = BuiltTask::default();
    for (i, sentence) in corpus.iter().enumerate() {
        let s = derive_seed(seed, i as u64);
        let sampled = match sampling {
            NegativeSampling::Spans(strategy) => {
                sample_negative_spans(sentence, strategy, ratio, s)?
            }
            NegativeSampling::Pairs(mode, scope) => {
                sample_negative_pairs(sentence, mode, ratio, s, scope)?
            }
        };
        out.examples
            .extend(sentence.positive_units.iter().map(|u| SpanTarget {
                id: None,
                sentence_id: sentence.sentence_id.clone(),
                span1: u.span1,
                span2: u.span2,
                label: true,
                gold: Some(u.gold.clone()),
            }));
        if sampled.short {
            out.short_sentences.push(sentence.sentence_id.clone());
        }
        out.examples.extend(sampled.negatives);
    }
    Ok(out)
}
