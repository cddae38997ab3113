//! Run directory layout.
//!
//! ```text
//! <run>/config.toml       training config snapshot
//! <run>/checkpoint.bin    model parameters
//! <run>/assignments.tsv   one row per dev example
//! <run>/loss_curve.csv    epoch,train_loss,dev_loss
//! <run>/step_losses.csv   step,loss
//! <run>/summary.json      dev accuracy, best epoch, clustering scores
//! ```
//!
//! `assignments.tsv` has a header row and the columns `example_id`,
//! `label`, `gold` (empty for none), `hard_class`, `binary_prob`,
//! `distribution` and `latent_logits`; the last two are comma-separated.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{score_run, RunArtifact, RunScores};
use crate::config::TrainConfig;
use crate::data::TaskDataset;
use crate::error::{Error, Result};
use crate::metrics;
use crate::model::Model;

pub const ASSIGNMENTS_FILE: &str = "assignments.tsv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const CONFIG_FILE: &str = "config.toml";
pub const LOSS_CURVE_FILE: &str = "loss_curve.csv";
pub const STEP_LOSS_FILE: &str = "step_losses.csv";
pub const SUMMARY_FILE: &str = "summary.json";

const HEADER: &str =
    "example_id\tlabel\tgold\thard_class\tbinary_prob\tdistribution\tlatent_logits";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub task: String,
    pub seed: u64,
    pub dev_examples: usize,
    pub dev_accuracy: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub scores: Option<RunScores>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentRow {
    pub example_id: String,
    pub label: bool,
    pub gold: Option<String>,
    pub hard_class: usize,
    pub binary_prob: f64,
    pub distribution: Vec<f64>,
    pub latent_logits: Vec<f64>,
}

fn join(v: &[f64]) -> String {
    let mut s = String::new();
    for (i, x) in v.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        write!(s, "{x}").unwrap();
    }
    s
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn write_run(
    dir: impl AsRef<Path>,
    run: &RunArtifact,
    dev: &TaskDataset,
) -> Result<RunSummary> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    if run.dev_posteriors.len() != dev.len() {
        return Err(Error::invalid(
            "run posteriors do not align with the dev set",
        ));
    }

    write_file(&dir.join(CONFIG_FILE), run.config.to_toml_string())?;
    run.model.save(dir.join(CHECKPOINT_FILE))?;

    let mut tsv = String::from(HEADER);
    tsv.push('\n');
    for (i, (t, p)) in dev.examples.iter().zip(&run.dev_posteriors).enumerate() {
        let id = dev.example_id(i);
        let gold = t.gold.as_deref().unwrap_or("");
        if [id.as_str(), gold].iter().any(|s| s.contains(['\t', '\n'])) {
            return Err(Error::invalid(format!(
                "example {id:?}: ids and labels may not contain tabs or newlines"
            )));
        }
        writeln!(
            tsv,
            "{id}\t{}\t{gold}\t{}\t{}\t{}\t{}",
            u8::from(t.label),
            p.hard_class,
            p.binary_prob,
            join(&p.distribution),
            join(&p.latent_logits)
        )
        .unwrap();
    }
    write_file(&dir.join(ASSIGNMENTS_FILE), tsv)?;

    let mut curve = String::from("epoch,train_loss,dev_loss\n");
    for e in &run.epochs {
        writeln!(curve, "{},{},{}", e.epoch, e.train_loss, e.dev_loss).unwrap();
    }
    write_file(&dir.join(LOSS_CURVE_FILE), curve)?;

    let mut steps = String::from("step,loss\n");
    for (i, l) in run.step_losses.iter().enumerate() {
        writeln!(steps, "{},{l}", i + 1).unwrap();
    }
    write_file(&dir.join(STEP_LOSS_FILE), steps)?;

    let summary = RunSummary {
        task: dev.name.clone(),
        seed: run.config.seed,
        dev_examples: dev.len(),
        dev_accuracy: run.dev_accuracy,
        best_epoch: run.best_epoch,
        epochs_run: run.epochs.len(),
        scores: score_run(run, dev).ok(),
    };
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write_file(&dir.join(SUMMARY_FILE), json + "\n")?;
    Ok(summary)
}

fn parse_floats(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split(',')
        .map(|x| x.parse::<f64>().map_err(|e| format!("{x:?}: {e}")))
        .collect()
}

pub fn parse_assignments(text: &str, source: &str) -> Result<Vec<AssignmentRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(HEADER) {
        return Err(Error::Record {
            path: source.into(),
            line: 1,
            message: "unexpected assignments header".into(),
        });
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let err = |message: String| Error::Record {
                path: source.into(),
                line: i + 2,
                message,
            };
            let cols: Vec<&str> = line.split('\t').collect();
            let [id, label, gold, hard, prob, dist, logits] = cols[..] else {
                return Err(err(format!("expected 7 columns, found {}", cols.len())));
            };
            Ok(AssignmentRow {
                example_id: id.to_owned(),
                label: match label {
                    "0" => false,
                    "1" => true,
                    other => return Err(err(format!("bad label {other:?}"))),
                },
                gold: (!gold.is_empty()).then(|| gold.to_owned()),
                hard_class: hard.parse().map_err(|e| err(format!("hard_class: {e}")))?,
                binary_prob: prob.parse().map_err(|e| err(format!("binary_prob: {e}")))?,
                distribution: parse_floats(dist).map_err(err)?,
                latent_logits: parse_floats(logits).map_err(err)?,
            })
        })
        .collect()
}

/// A run read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub config: TrainConfig,
    pub model: Model,
    pub rows: Vec<AssignmentRow>,
}

impl RunRecord {
    /// Rows of gold-positive examples.
    pub fn gold_positive(&self) -> impl Iterator<Item = &AssignmentRow> {
        self.rows.iter().filter(|r| r.label && r.gold.is_some())
    }

    /// Hard classes of the gold-positive rows.
    pub fn gold_positive_assignments(&self) -> Vec<usize> {
        self.gold_positive().map(|r| r.hard_class).collect()
    }

    /// Replaces stored labels with those of `gold`, which must list the same
    /// examples in the same order.
    pub fn apply_gold(&mut self, gold: &TaskDataset) -> Result<()> {
        if gold.len() != self.rows.len() {
            return Err(Error::invalid(format!(
                "gold task has {} examples, run has {}",
                gold.len(),
                self.rows.len()
            )));
        }
        for (i, (row, t)) in self.rows.iter_mut().zip(&gold.examples).enumerate() {
            let id = gold.example_id(i);
            if id != row.example_id {
                return Err(Error::invalid(format!(
                    "gold example {i} is {id:?} but the run has {:?}",
                    row.example_id
                )));
            }
            row.label = t.label;
            row.gold = t.gold.clone();
        }
        Ok(())
    }

    /// Scores recomputed from the stored rows.
    pub fn scores(&self) -> Result<RunScores> {
        let probs: Vec<f64> = self.rows.iter().map(|r| r.binary_prob).collect();
        let labels: Vec<bool> = self.rows.iter().map(|r| r.label).collect();
        let accuracy = metrics::binary_accuracy(&probs, &labels)?;
        let pos: Vec<&AssignmentRow> = self.gold_positive().collect();
        if pos.is_empty() {
            return Err(Error::invalid("run has no gold-positive examples"));
        }
        let gold: Vec<&str> = pos.iter().map(|r| r.gold.as_deref().unwrap()).collect();
        let pred: Vec<usize> = pos.iter().map(|r| r.hard_class).collect();
        let dists: Vec<&[f64]> = pos.iter().map(|r| r.distribution.as_slice()).collect();
        Ok(RunScores {
            bcubed: metrics::b_cubed(&gold, &pred, None)?,
            accuracy,
            diversity: metrics::diversity(&pred)?,
            uncertainty: metrics::uncertainty(&dists)?,
        })
    }
}

pub fn read_run(dir: impl AsRef<Path>) -> Result<RunRecord> {
    let dir = dir.as_ref();
    let read = |name: &str| {
        let p = dir.join(name);
        std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))
    };
    let config = TrainConfig::from_toml_str(&read(CONFIG_FILE)?, true)?;
    let model = Model::load(dir.join(CHECKPOINT_FILE))?;
    let source = dir.join(ASSIGNMENTS_FILE).display().to_string();
    let rows = parse_assignments(&read(ASSIGNMENTS_FILE)?, &source)?;
    Ok(RunRecord {
        config,
        model,
        rows,
    })
}
