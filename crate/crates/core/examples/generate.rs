//! Trains a small model, round-trips it through a checkpoint, and prints the
//! K domain-conditioned candidates for a few equations.
//!
//! cargo run --release --example generate -- [epochs]

use disk::config::{ModelConfig, TrainConfig};
use disk::corpus::join_equation;
use disk::generator::Decoding;
use disk::synth::{generate_synthetic_corpus, SynthConfig};
use disk::trainer::{Checkpoint, TrainedModel, Trainer};

fn main() -> disk::Result<()> {
    let epochs = std::env::args().nth(1).map_or(20, |s| s.parse().expect("epochs"));
    let corpus = generate_synthetic_corpus(&SynthConfig { n_examples: 96, n_templates: 8, seed: 2 })?;
    let cfg = TrainConfig {
        model: ModelConfig { k: 4, ..ModelConfig::tiny(32) },
        batch_size: 8,
        epochs,
        lr: 3e-3,
        dropout: 0.0,
        pool_size: 32,
        seed: 2,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(cfg, &corpus[8..], &corpus[..8])?;
    trainer.run(None, |m| eprintln!("{}", m.csv_row()))?;
    let dir = std::env::temp_dir().join("disk-generate-example.json");
    trainer.checkpoint().save(&dir)?;
    let model = TrainedModel::from_checkpoint(&Checkpoint::load(&dir)?)?;
    for inst in &corpus[..3] {
        let res = model.generate(inst, Decoding::Beam(3))?;
        println!("equation: {}", join_equation(&inst.equation));
        println!("reference: {}", inst.text.join(" "));
        for (i, c) in res.candidates.iter().enumerate() {
            let mark = if i == res.selected { '*' } else { ' ' };
            println!(" {mark} k={} score={:.3} {}", c.k, c.score, model.detokenize(&c.hyp.tokens).join(" "));
        }
    }
    Ok(())
}
