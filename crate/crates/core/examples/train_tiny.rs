//! Overfits a small model on 64 synthetic problems and prints per-epoch losses.
//!
//! cargo run --release --example train_tiny -- [epochs] [d]

use std::time::Instant;

use disk::config::{ModelConfig, TrainConfig};
use disk::synth::{generate_synthetic_corpus, SynthConfig};
use disk::trainer::Trainer;

fn main() -> disk::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs = args.next().map_or(40, |s| s.parse().expect("epochs"));
    let d = args.next().map_or(32, |s| s.parse().expect("d"));
    let corpus = generate_synthetic_corpus(&SynthConfig { n_examples: 64, n_templates: 16, seed: 11 })?;
    let cfg = TrainConfig {
        model: ModelConfig::tiny(d),
        batch_size: 8,
        epochs,
        lr: 3e-3,
        dropout: 0.0,
        pool_size: 32,
        seed: 1,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let mut trainer = Trainer::new(cfg, &corpus, &[])?;
    println!("{}", disk::trainer::EpochMetrics::CSV_HEADER);
    trainer.run(None, |m| println!("{}", m.csv_row()))?;
    let ppl = trainer.trained()?.teacher_forced_perplexity(&corpus)?;
    println!("teacher-forced perplexity {ppl:.3} after {:.1?}", start.elapsed());
    Ok(())
}
