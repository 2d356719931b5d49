//! Prints the subtree partition, quantity cells and graph for one synthetic problem.
//!
//! cargo run --example qcg_extraction -- [f]

use disk::qcg::{subtree_partition, QuantityCellGraph};
use disk::synth::{generate_synthetic_corpus, SynthConfig};

fn main() -> disk::Result<()> {
    let f = std::env::args().nth(1).map_or(5, |s| s.parse().expect("f"));
    let inst = generate_synthetic_corpus(&SynthConfig { n_examples: 1, n_templates: 16, seed: 3 })?.remove(0);
    println!("text: {}", inst.text.join(" "));
    println!("tree: {}", inst.constituency);
    for block in subtree_partition(&inst.tree()?, f) {
        let words: Vec<&str> = block.iter().map(|&i| inst.text[i].as_str()).collect();
        println!("block {:?}: {}", block, words.join(" "));
    }
    let g = QuantityCellGraph::from_instance(&inst, f)?;
    for k in 0..g.m {
        let q = &inst.text[g.nodes[k].text_index];
        let cell: Vec<&str> = g.cell(k).iter().map(|&i| inst.text[i].as_str()).collect();
        println!("quantity {q}: {}", cell.join(", "));
    }
    println!("{}", serde_json::to_string_pretty(&g.to_json()).expect("json"));
    Ok(())
}
