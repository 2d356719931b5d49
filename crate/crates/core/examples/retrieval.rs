//! Trains on a synthetic corpus and measures how often the matcher's top
//! retrieved instance shares the test problem's template.
//!
//! cargo run --release --example retrieval -- [n_examples] [d] [epochs]

use std::time::Instant;

use disk::config::{ModelConfig, TrainConfig};
use disk::pipeline::template_agreement;
use disk::synth::{generate_synthetic_corpus, SynthConfig};
use disk::trainer::{split_corpus, Trainer};

fn main() -> disk::Result<()> {
    let mut args = std::env::args().skip(1);
    let n = args.next().map_or(2000, |s| s.parse().expect("n_examples"));
    let d = args.next().map_or(128, |s| s.parse().expect("d"));
    let epochs = args.next().map_or(10, |s| s.parse().expect("epochs"));
    let corpus = generate_synthetic_corpus(&SynthConfig { n_examples: n, n_templates: 16, seed: 5 })?;
    let split = split_corpus(&corpus, 5)?;
    let cfg = TrainConfig {
        model: ModelConfig { k: 8, ..ModelConfig::tiny(d) },
        epochs,
        lr: 1e-3,
        pool_size: 64,
        seed: 5,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let mut trainer = Trainer::new(cfg, &split.train, &split.dev)?;
    trainer.run(None, |m| println!("{}  [{:.0?}]", m.csv_row(), start.elapsed()))?;
    let (acc, base) = template_agreement(&trainer.trained()?, &split.test)?;
    println!("template agreement {acc:.3}, random baseline {base:.3}, ratio {:.2}", acc / base);
    Ok(())
}
