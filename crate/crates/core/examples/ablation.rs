//! Trains the full model and the four ablations on one synthetic split and
//! prints the comparison table.
//!
//! cargo run --release --example ablation -- [n_examples] [epochs] [seed]

use disk::config::{ModelConfig, TrainConfig};
use disk::generator::Decoding;
use disk::pipeline::{ablation_sweep, ablation_tsv};
use disk::synth::{generate_synthetic_corpus, SynthConfig};
use disk::trainer::split_corpus;

fn main() -> disk::Result<()> {
    let mut args = std::env::args().skip(1);
    let n = args.next().map_or(600, |s| s.parse().expect("n_examples"));
    let epochs = args.next().map_or(25, |s| s.parse().expect("epochs"));
    let seed = args.next().map_or(1, |s| s.parse().expect("seed"));
    let corpus = generate_synthetic_corpus(&SynthConfig { n_examples: n, n_templates: 16, seed })?;
    let split = split_corpus(&corpus, seed)?;
    let cfg = TrainConfig {
        model: ModelConfig { max_decode: 24, k: 8, ..ModelConfig::tiny(64) },
        batch_size: 16,
        epochs,
        lr: 3e-3,
        pool_size: 32,
        seed,
        ..TrainConfig::default()
    };
    let start = std::time::Instant::now();
    let rows = ablation_sweep(&cfg, &split, split.test.len(), Decoding::Greedy, |label, m| {
        eprintln!("{label:>10} {}  [{:.0?}]", m.csv_row(), start.elapsed())
    })?;
    print!("{}", ablation_tsv(&rows));
    Ok(())
}
