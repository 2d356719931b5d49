//! Trains a small model and tabulates which latent domain each template's
//! problems are summarized into.
//!
//! cargo run --release --example domain_summarizer -- [epochs]

use std::collections::BTreeMap;

use disk::autograd::Graph;
use disk::config::{ModelConfig, TrainConfig};
use disk::matcher::argmax;
use disk::synth::{generate_synthetic_corpus, template_of, SynthConfig};
use disk::trainer::Trainer;

fn main() -> disk::Result<()> {
    let epochs = std::env::args().nth(1).map_or(15, |s| s.parse().expect("epochs"));
    let corpus = generate_synthetic_corpus(&SynthConfig { n_examples: 160, n_templates: 8, seed: 4 })?;
    let k = 4;
    let cfg = TrainConfig {
        model: ModelConfig { k, ..ModelConfig::tiny(32) },
        batch_size: 8,
        epochs,
        lr: 3e-3,
        pool_size: 32,
        seed: 4,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(cfg, &corpus, &[])?;
    trainer.run(None, |m| eprintln!("{}", m.csv_row()))?;
    let model = trainer.trained()?;
    let mut counts: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for inst in &corpus {
        let ex = model.encode(inst);
        let mut g = Graph::new(&model.store);
        let dom = model.model.summarizer.forward(&mut g, model.model.tokens, &ex.text, 0.0)?;
        let top = argmax(&g.value(dom.beta).data);
        counts.entry(template_of(&inst.id).unwrap_or("?")).or_insert_with(|| vec![0; k])[top] += 1;
    }
    println!("{:>20}  {}", "template", (0..k).map(|i| format!("d{i:<3}")).collect::<Vec<_>>().join(" "));
    for (t, c) in counts {
        println!("{t:>20}  {}", c.iter().map(|n| format!("{n:<4}")).collect::<Vec<_>>().join(" "));
    }
    Ok(())
}
