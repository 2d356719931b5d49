//! Writes a small synthetic corpus and prints one instance per template.
//!
//! cargo run --example synth_corpus -- [out.jsonl] [n_examples]

use std::collections::BTreeMap;

use disk::corpus::{join_equation, save_corpus};
use disk::synth::{generate_synthetic_corpus, template_of, SynthConfig};

fn main() -> disk::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| "synth.jsonl".into());
    let n = args.next().map_or(200, |s| s.parse().expect("n_examples"));
    let corpus = generate_synthetic_corpus(&SynthConfig { n_examples: n, n_templates: 16, seed: 0 })?;
    save_corpus(&corpus, out.as_ref())?;
    let mut seen = BTreeMap::new();
    for inst in &corpus {
        seen.entry(template_of(&inst.id).unwrap_or("?")).or_insert(inst);
    }
    for (t, inst) in seen {
        println!("{t:>12}  {}  |  {}", join_equation(&inst.equation), inst.text.join(" "));
    }
    println!("wrote {} instances to {out}", corpus.len());
    Ok(())
}
