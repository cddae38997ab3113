use std::path::{Path, PathBuf};

use lsl_core::config::TrainConfig;
use lsl_core::data::{
    build_task, load_corpus, load_embeddings, load_task, load_task_unchecked, write_task,
    EmbeddingIndex, NegativeSampling, PairMode, RatioScope, SpanStrategy, TaskDataset,
};
use lsl_core::metrics::Contingency;
use lsl_core::reporting::{
    export_projector, labelwise_csv, labelwise_table, npmi_report, summary_table, SummaryRow,
};
use lsl_core::synth::{generate, SynthConfig};
use lsl_core::trainer::rundir::{read_run, write_run, RunRecord};
use lsl_core::trainer::{ablation_grid, select_consistent, train_and_select, tune_hidden_size};
use lsl_core::{Error, Result};
use serde_json::{json, Value};

use crate::{
    AblateArgs, MakeTaskArgs, ReportArgs, Scope, SelectArgs, Strategy, SynthArgs, TrainArgs,
    TrainingInputs, TuneHiddenArgs,
};

pub const SELECTED_MARKER: &str = "SELECTED";
pub const SELECTION_FILE: &str = "selection.json";

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::Io {
            path: parent.to_owned(),
            source: e,
        })?;
    }
    std::fs::write(path, contents).map_err(|e| Error::Io {
        path: path.to_owned(),
        source: e,
    })
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text =
        serde_json::to_string_pretty(value).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    write(path, text + "\n")
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

/// Config file values, then `--set` overrides, then `--seed`.
fn resolve_config(inputs: &TrainingInputs) -> Result<TrainConfig> {
    let mut config = match &inputs.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            TrainConfig::from_toml_str(&text, inputs.strict)?
        }
        None => TrainConfig::default(),
    };
    for kv in &inputs.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {kv:?} is not KEY=VALUE")))?;
        config.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = inputs.seed {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

struct Loaded {
    embeddings: EmbeddingIndex,
    train: TaskDataset,
    dev: TaskDataset,
    config: TrainConfig,
}

fn load_inputs(inputs: &TrainingInputs) -> Result<Loaded> {
    let config = resolve_config(inputs)?;
    let embeddings = load_embeddings(&inputs.embeddings)?;
    let train = load_task(&inputs.train, &embeddings, inputs.strict)?;
    let dev = load_task(&inputs.dev, &embeddings, inputs.strict)?;
    Ok(Loaded {
        embeddings,
        train,
        dev,
        config,
    })
}

pub fn make_task(a: MakeTaskArgs) -> Result<Value> {
    let corpus = load_corpus(&a.corpus, a.strict)?;
    let scope = match a.scope {
        Scope::PerPredicate => RatioScope::PerPredicate,
        Scope::PerSentence => RatioScope::PerSentence,
    };
    let sampling = match a.strategy {
        Strategy::Candidates => NegativeSampling::Spans(SpanStrategy::FromCandidates),
        Strategy::RandomSpans => NegativeSampling::Spans(SpanStrategy::RandomSpans {
            max_width: a.max_width,
        }),
        Strategy::RandomPairs => NegativeSampling::Pairs(PairMode::RandomUnattached, scope),
        Strategy::ClosestPairs => NegativeSampling::Pairs(PairMode::ClosestUnattached, scope),
    };
    let built = build_task(&corpus, sampling, a.ratio, a.seed)?;
    write_task(&a.out, &built.examples)?;
    let positives = built.examples.iter().filter(|t| t.label).count();
    Ok(json!({
        "command": "make-task",
        "out": display(&a.out),
        "sentences": corpus.len(),
        "positives": positives,
        "negatives": built.examples.len() - positives,
        "short_sentences": built.short_sentences,
    }))
}

pub fn tune_hidden(a: TuneHiddenArgs) -> Result<Value> {
    let l = load_inputs(&a.inputs)?;
    let choice = tune_hidden_size(
        &l.train,
        &l.dev,
        &l.embeddings,
        &l.config,
        &a.sizes,
        a.threshold,
        a.inputs.jobs,
    )?;
    if let Some(out) = &a.out {
        write_json(out, &choice)?;
    }
    Ok(json!({
        "command": "tune-hidden",
        "chosen": choice.chosen,
        "threshold": choice.threshold,
        "accuracies": choice.accuracies,
    }))
}

pub fn run_dir_name(k: usize) -> String {
    format!("run-{k}")
}

pub fn train(a: TrainArgs) -> Result<Value> {
    if a.runs == 0 {
        return Err(Error::InvalidArgument("--runs must be at least 1".into()));
    }
    let l = load_inputs(&a.inputs)?;
    let (artifacts, selection) = train_and_select(
        &l.train,
        &l.dev,
        &l.embeddings,
        &l.config,
        a.runs,
        a.inputs.jobs,
    )?;
    let mut runs = Vec::new();
    for (k, run) in artifacts.iter().enumerate() {
        let dir = a.out.join(run_dir_name(k));
        let summary = write_run(&dir, run, &l.dev)?;
        runs.push(json!({
            "dir": display(&dir),
            "seed": summary.seed,
            "dev_accuracy": summary.dev_accuracy,
            "best_epoch": summary.best_epoch,
        }));
    }
    Ok(json!({
        "command": "train",
        "out": display(&a.out),
        "runs": runs,
        "most_consistent": selection.chosen,
    }))
}

pub fn select(a: SelectArgs) -> Result<Value> {
    let records = a
        .runs
        .iter()
        .map(read_run)
        .collect::<Result<Vec<RunRecord>>>()?;
    let assignments: Vec<Vec<usize>> = records
        .iter()
        .map(RunRecord::gold_positive_assignments)
        .collect();
    let selection = select_consistent(&assignments)?;
    for (k, dir) in a.runs.iter().enumerate() {
        let marker = dir.join(SELECTED_MARKER);
        if k == selection.chosen {
            write(&marker, "")?;
        } else if marker.exists() {
            std::fs::remove_file(&marker).map_err(|e| Error::Io {
                path: marker.clone(),
                source: e,
            })?;
        }
    }
    let out_dir = a.out.clone().unwrap_or_else(|| {
        a.runs[0]
            .parent()
            .map_or_else(|| PathBuf::from("."), Path::to_path_buf)
    });
    let chosen = display(&a.runs[selection.chosen]);
    let record = json!({
        "chosen": selection.chosen,
        "chosen_dir": chosen,
        "runs": a.runs.iter().map(|p| display(p)).collect::<Vec<_>>(),
        "scores": selection.scores,
    });
    write_json(&out_dir.join(SELECTION_FILE), &record)?;
    Ok(json!({
        "command": "select",
        "chosen": selection.chosen,
        "chosen_dir": chosen,
        "scores": selection.scores,
    }))
}

fn read_with_gold(dir: &Path, gold: Option<&TaskDataset>) -> Result<RunRecord> {
    let mut record = read_run(dir)?;
    if let Some(g) = gold {
        record.apply_gold(g)?;
    }
    Ok(record)
}

fn contingency(record: &RunRecord) -> Result<Contingency> {
    let rows: Vec<_> = record.gold_positive().collect();
    let gold: Vec<&str> = rows.iter().map(|r| r.gold.as_deref().unwrap()).collect();
    let pred: Vec<usize> = rows.iter().map(|r| r.hard_class).collect();
    Contingency::from_assignments(&gold, &pred)
}

fn dir_name(p: &Path) -> String {
    p.file_name()
        .map_or_else(|| display(p), |n| n.to_string_lossy().into_owned())
}

pub fn report(a: ReportArgs) -> Result<Value> {
    let gold = a
        .gold
        .as_ref()
        .map(|p| load_task_unchecked(p, a.strict))
        .transpose()?;
    let main = read_with_gold(&a.run, gold.as_ref())?;
    let scores = main.scores()?;
    let mut written = vec![];
    let mut out = |name: &str, text: String| -> Result<()> {
        let p = a.out.join(name);
        write(&p, text)?;
        written.push(display(&p));
        Ok(())
    };
    out(
        "metrics.json",
        serde_json::to_string_pretty(&scores).expect("scores serialize") + "\n",
    )?;
    out(
        "metrics.txt",
        format!(
            "accuracy\t{}\nprecision\t{}\nrecall\t{}\nf1\t{}\ndiversity\t{}\nuncertainty\t{}\n",
            scores.accuracy,
            scores.bcubed.precision,
            scores.bcubed.recall,
            scores.bcubed.f1,
            scores.diversity,
            scores.uncertainty
        ),
    )?;

    let positives: Vec<_> = main.gold_positive().collect();
    let gold_labels: Vec<&str> = positives
        .iter()
        .map(|r| r.gold.as_deref().unwrap())
        .collect();
    let pred: Vec<usize> = positives.iter().map(|r| r.hard_class).collect();

    if a.labelwise {
        out(
            "labelwise.csv",
            labelwise_csv(&labelwise_table(&gold_labels, &pred)?),
        )?;
    }
    if a.projector {
        let logits: Vec<Vec<f64>> = positives.iter().map(|r| r.latent_logits.clone()).collect();
        let export = export_projector(&logits, &gold_labels, &pred)?;
        out(lsl_core::reporting::PROJECTOR_VECTORS_FILE, export.vectors)?;
        out(
            lsl_core::reporting::PROJECTOR_METADATA_FILE,
            export.metadata,
        )?;
    }
    let others = a
        .with_runs
        .iter()
        .map(|d| read_with_gold(d, gold.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    if a.npmi {
        let counts = std::iter::once(&main)
            .chain(&others)
            .map(contingency)
            .collect::<Result<Vec<_>>>()?;
        let subset = (!a.labels.is_empty()).then_some(a.labels.as_slice());
        let report = npmi_report(&counts, subset);
        out("npmi_matrix.csv", report.to_csv())?;
        out("npmi_long.csv", report.records_csv())?;
    }
    if a.summary {
        let task = task_name(&a.run);
        let rows = std::iter::once((&a.run, &main))
            .chain(a.with_runs.iter().zip(&others))
            .map(|(dir, rec)| {
                let s = rec.scores()?;
                Ok(SummaryRow {
                    encoder: a.encoder.clone().unwrap_or_else(|| dir_name(dir)),
                    task: task.clone(),
                    accuracy: Some(s.accuracy),
                    bcubed: s.bcubed,
                    diversity: s.diversity,
                    uncertainty: s.uncertainty,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let table = summary_table(rows);
        out("summary.csv", table.to_csv())?;
        out("summary.txt", table.to_text())?;
    }
    Ok(json!({
        "command": "report",
        "run": display(&a.run),
        "scores": scores,
        "files": written,
    }))
}

/// Task name from the run's `summary.json`, else the directory name.
fn task_name(dir: &Path) -> String {
    std::fs::read_to_string(dir.join(lsl_core::trainer::rundir::SUMMARY_FILE))
        .ok()
        .and_then(|t| serde_json::from_str::<Value>(&t).ok())
        .and_then(|v| v.get("task").and_then(Value::as_str).map(str::to_owned))
        .unwrap_or_else(|| dir_name(dir))
}

pub fn ablate(a: AblateArgs) -> Result<Value> {
    let l = load_inputs(&a.inputs)?;
    let table = ablation_grid(
        &l.train,
        &l.dev,
        &l.embeddings,
        &l.config,
        a.runs,
        a.inputs.jobs,
    )?;
    let mut csv =
        String::from("name,alpha,beta,accuracy,precision,recall,f1,diversity,uncertainty\n");
    let num = |x: f64| {
        if x.is_nan() {
            String::new()
        } else {
            x.to_string()
        }
    };
    for r in &table.rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.name,
            num(r.alpha),
            num(r.beta),
            r.accuracy.map_or(String::new(), |x| x.to_string()),
            r.bcubed.precision,
            r.bcubed.recall,
            r.bcubed.f1,
            r.diversity,
            r.uncertainty
        ));
    }
    write(&a.out.join("ablation.csv"), csv)?;
    let rows: Vec<Value> = table
        .rows
        .iter()
        .map(|r| {
            json!({
                "name": r.name,
                "accuracy": r.accuracy,
                "f1": r.bcubed.f1,
                "diversity": r.diversity,
                "uncertainty": r.uncertainty,
            })
        })
        .collect();
    write_json(&a.out.join("ablation.json"), &rows)?;
    Ok(json!({
        "command": "ablate",
        "out": display(&a.out),
        "rows": rows,
    }))
}

pub fn synth(a: SynthArgs) -> Result<Value> {
    let config = SynthConfig {
        num_subclasses: a.num_subclasses,
        positives: a.positives,
        negative_fraction: a.negative_fraction,
        dim: a.dim,
        separation: a.separation,
        noise: a.noise,
        num_layers: a.num_layers,
        signal_layer: a.signal_layer,
        dev_fraction: a.dev_fraction,
        test_fraction: a.test_fraction,
        seed: a.seed,
        name: a.name,
    };
    let bench = generate(&config)?;
    bench.write(&a.out)?;
    Ok(json!({
        "command": "synth",
        "out": display(&a.out),
        "train": bench.train.len(),
        "dev": bench.dev.len(),
        "test": bench.test.len(),
        "oracle_accuracy": bench.manifest.oracle_accuracy,
    }))
}
