//! Acceptance suite: prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use lsl_core::config::TrainConfig;
use lsl_core::data::EmbeddingIndex;
use lsl_core::gradcheck::{max_relative_error, random_draw};
use lsl_core::lsl::{self, LatentPosterior, LslHead};
use lsl_core::math::Matrix;
use lsl_core::metrics::{b_cubed, npmi_matrix, Contingency};
use lsl_core::model::Model;
use lsl_core::probe;
use lsl_core::synth::{generate, SynthConfig};
use lsl_core::trainer::{
    ablation_grid, init_seed, model_shape, score_run, train, train_and_select,
    tune_hidden_size_with, Optimizer, Shuffler,
};
use lsl_core::Regularization;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn brute_force_b_cubed(gold: &[usize], pred: &[usize], only: Option<usize>) -> (f64, f64, f64) {
    let n = gold.len();
    let (mut p, mut r, mut count) = (0.0, 0.0, 0usize);
    for i in 0..n {
        if only.is_some_and(|g| gold[i] != g) {
            continue;
        }
        let both = (0..n)
            .filter(|&j| pred[j] == pred[i] && gold[j] == gold[i])
            .count() as f64;
        p += both / (0..n).filter(|&j| pred[j] == pred[i]).count() as f64;
        r += both / (0..n).filter(|&j| gold[j] == gold[i]).count() as f64;
        count += 1;
    }
    let (p, r) = (p / count as f64, r / count as f64);
    (p, r, 2.0 * p * r / (p + r))
}

fn metric_oracle() -> Outcome {
    let ex =
        b_cubed(&["A", "A", "B", "B", "B"], &[1, 1, 1, 2, 2], None).map_err(|e| e.to_string())?;
    let target = 11.0 / 15.0;
    if [ex.precision, ex.recall, ex.f1]
        .iter()
        .any(|v| (v - target).abs() > 1e-12)
    {
        return Err(format!("worked example gave {ex:?}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=8);
        let gold: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let only = rng.random_bool(0.3).then(|| gold[rng.random_range(0..n)]);
        let got = b_cubed(&gold, &pred, only.as_ref()).map_err(|e| e.to_string())?;
        let (p, r, f) = brute_force_b_cubed(&gold, &pred, only);
        worst = worst
            .max((got.precision - p).abs())
            .max((got.recall - r).abs())
            .max((got.f1 - f).abs());
    }
    check(
        worst <= 1e-12,
        format!("1000 instances, worst deviation {worst:.1e}; F1(example) = 11/15"),
    )
}

fn npmi_of(gold: &[&str], pred: &[usize], a: &str, b: &str) -> Result<f64, String> {
    let c = Contingency::from_assignments(gold, pred).map_err(|e| e.to_string())?;
    npmi_matrix(&c)
        .get(a, b)
        .ok_or_else(|| format!("nPMI({a}, {b}) undefined"))
}

fn npmi_limits() -> Outcome {
    let disjoint = npmi_of(&["x", "x", "y", "y"], &[0, 0, 1, 1], "x", "y")?;
    let together = npmi_of(
        &["x", "x", "y", "y", "z", "z"],
        &[0, 0, 0, 0, 1, 1],
        "x",
        "y",
    )?;
    let independent = npmi_of(
        &["x", "y", "y", "x", "x", "y", "y", "y", "y"],
        &[0, 0, 0, 1, 1, 1, 1, 1, 1],
        "x",
        "y",
    )?;
    check(
        disjoint == -1.0 && (together - 1.0).abs() < 1e-12 && independent.abs() < 1e-9,
        format!("disjoint {disjoint}, together {together}, independent {independent:.1e}"),
    )
}

fn entropy_bounds() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut worst_identity: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=64);
        let batch = rng.random_range(1..=32);
        let scale = rng.random_range(0.01..20.0);
        let posteriors: Vec<LatentPosterior> = (0..batch)
            .map(|_| {
                LatentPosterior::from_logits(
                    (0..n).map(|_| rng.random_range(-scale..scale)).collect(),
                )
            })
            .collect();
        let be = lsl::loss_batch_entropy(&posteriors).map_err(|e| e.to_string())?;
        let ie = lsl::loss_instance_entropy(&posteriors).map_err(|e| e.to_string())?;
        let mi = lsl::mutual_information(&posteriors).map_err(|e| e.to_string())?;
        let log_n = (n as f64).ln();
        for (name, v) in [("L_be", be), ("L_ie", ie)] {
            if !(0.0..=log_n + 1e-12).contains(&v) {
                return Err(format!("{name} = {v} outside [0, {log_n}] (N = {n})"));
            }
        }
        worst_identity = worst_identity.max((be + ie + mi - log_n).abs());
    }
    check(
        worst_identity <= 1e-9,
        format!("1000 batches, worst |L_be + L_ie + I − log N| = {worst_identity:.1e}"),
    )
}

fn gradient_check() -> Outcome {
    let reg = Regularization::new(1.5, 1.5).map_err(|e| e.to_string())?;
    let worst = (0..60)
        .map(|s| max_relative_error(&random_draw(1000 + s), reg))
        .fold(0.0, f64::max);
    check(
        worst < 1e-4,
        format!("60 draws, worst relative error {worst:.1e}"),
    )
}

/// Plain logistic regression on the probe features, sharing initialization,
/// shuffling and optimizer with the LSL trainer. Returns per-step losses.
fn reference_logistic(
    train_set: &lsl_core::data::TaskDataset,
    embeddings: &EmbeddingIndex,
    config: &TrainConfig,
) -> Vec<f64> {
    let shape = model_shape(train_set, embeddings, config).unwrap();
    let mut model = Model::init(shape, init_seed(config.seed)).unwrap();
    let mut optimizer = Optimizer::new(config.optimizer, config.learning_rate, &model);
    let mut shuffler = Shuffler::new(train_set.len(), config.seed);
    let softplus = |s: f64| {
        if s > 0.0 {
            s + (-s).exp().ln_1p()
        } else {
            s.exp().ln_1p()
        }
    };
    let mut losses = Vec::new();
    for _ in 0..config.max_epochs {
        let order = shuffler.next_epoch().to_vec();
        for chunk in order.chunks(config.batch_size) {
            let b = chunk.len() as f64;
            let mut grad = model.zeros_like();
            let mut loss = 0.0;
            for &i in chunk {
                let t = &train_set.examples[i];
                let bundle = embeddings.get(&t.sentence_id).unwrap();
                let trace = probe::featurize_traced(bundle, t, &model.probe).unwrap();
                let w = model.head.weight.row(0);
                let s: f64 = w.iter().zip(&trace.features).map(|(a, x)| a * x).sum();
                let y = f64::from(u8::from(t.label));
                loss += if t.label { softplus(-s) } else { softplus(s) };
                let ds = (1.0 / (1.0 + (-s).exp()) - y) / b;
                for (g, x) in grad.head.weight.row_mut(0).iter_mut().zip(&trace.features) {
                    *g += ds * x;
                }
                let dx: Vec<f64> = w.iter().map(|a| ds * a).collect();
                probe::backward(&trace, bundle, &model.probe, &dx, &mut grad.probe);
            }
            losses.push(loss / b);
            optimizer.step(&mut model, &grad);
        }
    }
    losses
}

fn logistic_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let h = rng.random_range(1..=16);
        let scale = rng.random_range(0.1..10.0);
        let w: Vec<f64> = (0..h).map(|_| rng.random_range(-scale..scale)).collect();
        let x: Vec<f64> = (0..h).map(|_| rng.random_range(-2.0..2.0)).collect();
        let head = LslHead::new(Matrix::from_vec(1, h, w.clone())).map_err(|e| e.to_string())?;
        let s: f64 = w.iter().zip(&x).map(|(a, b)| a * b).sum();
        let expected = 1.0 / (1.0 + (-s).exp());
        worst = worst.max((lsl::forward(&x, &head).binary_prob - expected).abs());
    }
    if worst > 1e-12 {
        return Err(format!(
            "head probability deviates from σ(w·x) by {worst:.1e}"
        ));
    }

    let bench = generate(&SynthConfig {
        positives: 400,
        seed: 5,
        ..SynthConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let config = TrainConfig {
        num_latent: 1,
        alpha: 0.0,
        beta: 0.0,
        hidden_size: 8,
        batch_size: 32,
        max_epochs: 4,
        patience: 100,
        seed: 9,
        ..TrainConfig::default()
    };
    let run =
        train(&bench.train, &bench.dev, &bench.embeddings, &config).map_err(|e| e.to_string())?;
    let reference = reference_logistic(&bench.train, &bench.embeddings, &config);
    if reference.len() != run.step_losses.len() {
        return Err(format!(
            "{} reference steps vs {} trainer steps",
            reference.len(),
            run.step_losses.len()
        ));
    }
    let step_worst = reference
        .iter()
        .zip(&run.step_losses)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    check(
        step_worst <= 1e-10,
        format!(
            "1000 inputs within {worst:.1e}; {} training steps, worst loss difference {step_worst:.1e}",
            reference.len()
        ),
    )
}

fn recovery_config() -> TrainConfig {
    TrainConfig {
        batch_size: 256,
        ..TrainConfig::default()
    }
}

fn jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn synthetic_recovery() -> Outcome {
    let bench = generate(&SynthConfig::default()).map_err(|e| e.to_string())?;
    let config = recovery_config();
    let (runs, selection) = train_and_select(
        &bench.train,
        &bench.dev,
        &bench.embeddings,
        &config,
        5,
        jobs(),
    )
    .map_err(|e| e.to_string())?;
    let s = score_run(&runs[selection.chosen], &bench.dev).map_err(|e| e.to_string())?;
    let main_ok = s.accuracy >= 0.95
        && s.bcubed.f1 >= 0.70
        && (4.0..=10.0).contains(&s.diversity)
        && s.uncertainty <= 1.3;
    let detail = format!(
        "chosen run {}: acc {:.3}, F1 {:.3}, div {:.2}, unc {:.3}",
        selection.chosen, s.accuracy, s.bcubed.f1, s.diversity, s.uncertainty
    );
    if !main_ok {
        return Err(detail);
    }

    let table = ablation_grid(
        &bench.train,
        &bench.dev,
        &bench.embeddings,
        &config,
        5,
        jobs(),
    )
    .map_err(|e| e.to_string())?;
    let row = |n: &str| {
        table
            .row(n)
            .ok_or_else(|| format!("missing ablation row {n}"))
    };
    let (none, be, ie, both) = (row("LSL")?, row("+be")?, row("+ie")?, row("+be+ie")?);
    check(
        ie.diversity <= 1.5 && be.uncertainty >= 5.0 && both.diversity > none.diversity,
        format!(
            "{detail}; ablation: +ie div {:.2}, +be unc {:.2}, +be+ie div {:.2} > none div {:.2}",
            ie.diversity, be.uncertainty, both.diversity, none.diversity
        ),
    )
}

fn single_cluster_baseline() -> Outcome {
    let config = SynthConfig::default();
    let bench = generate(&config).map_err(|e| e.to_string())?;
    let gold: Vec<&str> = bench
        .dev
        .examples
        .iter()
        .filter_map(|t| t.gold_positive())
        .collect();
    let b = b_cubed(&gold, &vec![0usize; gold.len()], None).map_err(|e| e.to_string())?;
    let k = config.num_subclasses as f64;
    check(
        b.recall == 1.0 && (b.precision - 1.0 / k).abs() <= 0.02,
        format!(
            "{} points: R = {}, P = {:.4} (1/K = {:.4})",
            gold.len(),
            b.recall,
            b.precision,
            1.0 / k
        ),
    )
}

fn hidden_size_rule() -> Outcome {
    let accuracy: BTreeMap<usize, f64> = [(16, 0.80), (32, 0.95), (64, 0.96)].into();
    let choice = tune_hidden_size_with(&[16, 32, 64], 0.97, 1, |h| Ok(accuracy[&h]))
        .map_err(|e| e.to_string())?;
    check(
        choice.chosen == 32,
        format!("accuracies (0.80, 0.95, 0.96) → size {}", choice.chosen),
    )
}

fn run_lsl(dir: &Path, args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_lsl"))
        .args(args)
        .current_dir(dir)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "lsl {args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(out.stdout)
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.insert(
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    std::fs::read(&p).unwrap(),
                );
            }
        }
    }
    files
}

const CORPUS: &str = concat!(
    r#"{"sentence_id":"a","tokens":["w","x","y","z"],"positive_units":[{"span1":[0,1],"span2":[1,3],"gold":"A0"}],"candidate_spans":[[0,1],[1,3],[3,4],[2,3]]}"#,
    "\n",
    r#"{"sentence_id":"b","tokens":["u","v","w"],"positive_units":[{"span1":[2,3],"span2":[0,1],"gold":"A1"}]}"#,
    "\n"
);

fn pipeline(dir: &Path) -> Result<Vec<Vec<u8>>, String> {
    std::fs::write(dir.join("corpus.jsonl"), CORPUS).map_err(|e| e.to_string())?;
    let data = [
        "--train",
        "b/synth.train.jsonl",
        "--dev",
        "b/synth.dev.jsonl",
        "--embeddings",
        "b/embeddings.bin",
    ];
    let quick = [
        "--seed",
        "13",
        "--set",
        "max_epochs=3",
        "--set",
        "batch_size=32",
    ];
    let with = |cmd: &str, extra: &[&str]| -> Vec<String> {
        std::iter::once(cmd)
            .chain(data)
            .chain(quick)
            .chain(extra.iter().copied())
            .map(str::to_owned)
            .collect()
    };
    let commands: Vec<Vec<String>> = vec![
        ["synth", "--out", "b", "--positives", "180", "--seed", "13"]
            .map(str::to_owned)
            .to_vec(),
        [
            "make-task",
            "--corpus",
            "corpus.jsonl",
            "--out",
            "pairs.jsonl",
            "--strategy",
            "closest-pairs",
            "--seed",
            "13",
        ]
        .map(str::to_owned)
        .to_vec(),
        with("tune-hidden", &["--sizes", "4,8", "--out", "hidden.json"]),
        with("train", &["--runs", "3", "--out", "runs"]),
        ["select", "runs/run-0", "runs/run-1", "runs/run-2"]
            .map(str::to_owned)
            .to_vec(),
        [
            "report",
            "--run",
            "runs/run-0",
            "--with",
            "runs/run-1",
            "--with",
            "runs/run-2",
            "--out",
            "rep",
            "--npmi",
            "--labelwise",
            "--projector",
            "--summary",
        ]
        .map(str::to_owned)
        .to_vec(),
        with("ablate", &["--runs", "2", "--out", "abl"]),
    ];
    commands
        .iter()
        .map(|c| run_lsl(dir, &c.iter().map(String::as_str).collect::<Vec<_>>()))
        .collect()
}

fn cli_determinism() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out_a = pipeline(a.path())?;
    let out_b = pipeline(b.path())?;
    if out_a != out_b {
        return Err("stdout differs between invocations".into());
    }
    let (sa, sb) = (snapshot(a.path()), snapshot(b.path()));
    if sa.keys().ne(sb.keys()) {
        return Err("output file sets differ".into());
    }
    if let Some((p, _)) = sa.iter().find(|(p, v)| sb[*p] != **v) {
        return Err(format!("{} differs", p.display()));
    }
    Ok(format!(
        "7 commands, {} output files byte-identical",
        sa.len()
    ))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("metric oracle equivalence", metric_oracle),
        ("nPMI limit cases", npmi_limits),
        ("entropy-loss bounds and MI identity", entropy_bounds),
        ("gradient check", gradient_check),
        ("N=1 logistic-regression equivalence", logistic_equivalence),
        (
            "synthetic recovery and ablation pattern",
            synthetic_recovery,
        ),
        ("single-cluster baseline", single_cluster_baseline),
        ("hidden-size rule", hidden_size_rule),
        ("CLI determinism", cli_determinism),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name} ({secs:.1}s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name} ({secs:.1}s): {detail}");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
