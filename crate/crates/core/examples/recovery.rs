//! Trains restarts on the default synthetic benchmark and prints the
//! ablation table.
//!
//! Usage: `cargo run --release -p lsl-core --example recovery -- [lr] [epochs] [hidden] [batch] [synth_seed]`

use lsl_core::config::TrainConfig;
use lsl_core::synth::{generate, SynthConfig};
use lsl_core::trainer::ablation_grid;

fn main() -> lsl_core::Result<()> {
    let mut args = std::env::args().skip(1);
    let lr: f64 = args.next().map_or(1e-3, |s| s.parse().unwrap());
    let epochs: usize = args.next().map_or(50, |s| s.parse().unwrap());
    let hidden: usize = args.next().map_or(64, |s| s.parse().unwrap());
    let batch: usize = args.next().map_or(256, |s| s.parse().unwrap());
    let synth_seed: u64 = args.next().map_or(0, |s| s.parse().unwrap());
    let bench = generate(&SynthConfig {
        seed: synth_seed,
        ..SynthConfig::default()
    })?;
    println!("oracle accuracy {:.4}", bench.manifest.oracle_accuracy);
    let config = TrainConfig {
        learning_rate: lr,
        max_epochs: epochs,
        hidden_size: hidden,
        batch_size: batch,
        ..TrainConfig::default()
    };
    let t = std::time::Instant::now();
    let table = ablation_grid(&bench.train, &bench.dev, &bench.embeddings, &config, 5, 8)?;
    for r in &table.rows {
        println!(
            "{:8} acc {:>6} P {:.3} R {:.3} F1 {:.3} div {:.2} unc {:.3}",
            r.name,
            r.accuracy.map_or("-".into(), |a| format!("{a:.3}")),
            r.bcubed.precision,
            r.bcubed.recall,
            r.bcubed.f1,
            r.diversity,
            r.uncertainty
        );
    }
    println!("elapsed {:?}", t.elapsed());
    Ok(())
}
