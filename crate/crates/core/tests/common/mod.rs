//! Independent reference implementations used as test oracles.
#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::{BTreeMap, BTreeSet};

use disk::corpus::{tokenize_equation, MwpInstance};
use disk::syntax::{DepEdge, Tree};
use disk::tensor::Matrix;
use rand::Rng;

pub mod invariants;

/// All-pairs undirected hop distances over the dependency edges (Floyd–Warshall).
pub fn floyd_hops(inst: &MwpInstance) -> Vec<Vec<usize>> {
    let l = inst.text.len();
    let inf = usize::MAX / 4;
    let mut d = vec![vec![inf; l]; l];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = 0;
    }
    for e in &inst.dep_edges {
        if e.0 >= 0 {
            let (h, t) = (e.0 as usize, e.1);
            d[h][t] = 1;
            d[t][h] = 1;
        }
    }
    for k in 0..l {
        for i in 0..l {
            for j in 0..l {
                if d[i][k] + d[k][j] < d[i][j] {
                    d[i][j] = d[i][k] + d[k][j];
                }
            }
        }
    }
    d
}

/// Every element of the tree with its leaf span and its parent's span size.
fn spans(t: &Tree, start: usize, parent: Option<usize>, out: &mut Vec<(usize, usize, Option<usize>)>) -> usize {
    let mut n = 0;
    match t {
        Tree::Word(_) => n = 1,
        Tree::Node { children, .. } => {
            for c in children {
                n += count_leaves(c);
            }
            let mut s = start;
            for c in children {
                s += spans(c, s, Some(n), out);
            }
        }
    }
    out.push((start, n, parent));
    n
}

fn count_leaves(t: &Tree) -> usize {
    match t {
        Tree::Word(_) => 1,
        Tree::Node { children, .. } => children.iter().map(count_leaves).sum(),
    }
}

/// Scans every subtree and keeps those with at most `f` leaves whose parent has more.
pub fn naive_partition(t: &Tree, f: usize) -> Vec<BTreeSet<usize>> {
    let mut all = Vec::new();
    spans(t, 0, None, &mut all);
    let mut blocks: Vec<(usize, usize)> = all
        .into_iter()
        .filter(|&(_, n, p)| n <= f && p.is_none_or(|p| p > f))
        .map(|(s, n, _)| (s, n))
        .collect();
    blocks.sort();
    blocks.into_iter().map(|(s, n)| (s..s + n).collect()).collect()
}

pub fn noun_or_verb(tag: &str) -> bool {
    matches!(tag, "N" | "V") || tag.starts_with("NN") || tag.starts_with("VB")
}

pub fn numeric(tok: &str) -> bool {
    let digits = |s: &str| !s.is_empty() && s.chars().all(|c| c.is_ascii_digit());
    if let Some((a, b)) = tok.split_once('/') {
        return digits(a) && digits(b);
    }
    match tok.split_once('.') {
        Some((a, b)) => digits(a) && digits(b),
        None => digits(tok),
    }
}

/// Quantity text index → attribute text indices.
pub fn oracle_cells(inst: &MwpInstance, f: usize) -> BTreeMap<usize, BTreeSet<usize>> {
    let hops = floyd_hops(inst);
    let blocks = naive_partition(&Tree::parse(&inst.constituency).unwrap(), f);
    let same_block = |a: usize, b: usize| blocks.iter().any(|s| s.contains(&a) && s.contains(&b));
    let mut out = BTreeMap::new();
    for q in 0..inst.text.len() {
        if !numeric(&inst.text[q]) {
            continue;
        }
        let attrs = (0..inst.text.len())
            .filter(|&i| i != q && noun_or_verb(&inst.pos[i]) && (hops[q][i] <= 2 || same_block(q, i)))
            .collect();
        out.insert(q, attrs);
    }
    out
}

const TAGS: [&str; 6] = ["N", "V", "NUM", "DET", "ADJ", "P"];

fn random_subtree(rng: &mut impl Rng, depth: usize, words: &mut Vec<(String, String)>) -> String {
    if depth == 0 || rng.random_bool(0.35) {
        let tag = TAGS[rng.random_range(0..TAGS.len())];
        let w = if tag == "NUM" { rng.random_range(1..100).to_string() } else { format!("w{}", words.len()) };
        words.push((tag.to_string(), w.clone()));
        return format!("({tag} {w})");
    }
    let n = rng.random_range(1..=4);
    let kids: Vec<String> = (0..n).map(|_| random_subtree(rng, depth - 1, words)).collect();
    format!("(X {})", kids.join(" "))
}

/// Random bracketing, tags, and a random dependency tree over the same tokens.
pub fn random_instance(rng: &mut impl Rng, id: usize) -> MwpInstance {
    let mut words = Vec::new();
    let body = random_subtree(rng, 4, &mut words);
    let constituency = format!("(ROOT {body})");
    let l = words.len();
    let mut order: Vec<usize> = (0..l).collect();
    for i in (1..l).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let mut dep_edges = vec![DepEdge(-1, order[0], "root".into())];
    for k in 1..l {
        let head = order[rng.random_range(0..k)];
        dep_edges.push(DepEdge(head as i64, order[k], "dep".into()));
    }
    dep_edges.sort_by_key(|e| e.1);
    MwpInstance {
        id: format!("rand{id}"),
        equation: tokenize_equation("x = 1").unwrap(),
        text: words.iter().map(|(_, w)| w.clone()).collect(),
        pos: words.iter().map(|(t, _)| t.clone()).collect(),
        dep_edges,
        constituency,
    }
}

/// Longest common subsequence by enumerating every subsequence of the shorter side.
pub fn brute_lcs(a: &[String], b: &[String]) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    assert!(short.len() <= 16, "brute force limited to short inputs");
    let is_subseq = |sub: &[&String]| {
        let mut it = long.iter();
        sub.iter().all(|s| it.any(|x| x == *s))
    };
    let mut best = 0;
    for mask in 0u32..(1 << short.len()) {
        let n = mask.count_ones() as usize;
        if n <= best {
            continue;
        }
        let sub: Vec<&String> = (0..short.len()).filter(|i| mask >> i & 1 == 1).map(|i| &short[i]).collect();
        if is_subseq(&sub) {
            best = n;
        }
    }
    best
}

/// `ReLU(Â S W_l)` layer by layer with explicit loops.
pub fn dense_gcn(a: &Matrix, s0: &Matrix, ws: &[Matrix]) -> Matrix {
    let n = a.rows;
    let mut ah = vec![vec![0.0; n]; n];
    let deg: Vec<f64> = (0..n).map(|i| 1.0 + (0..n).map(|j| a.get(i, j)).sum::<f64>()).collect();
    for i in 0..n {
        for j in 0..n {
            let aij = a.get(i, j) + if i == j { 1.0 } else { 0.0 };
            ah[i][j] = aij / (deg[i].sqrt() * deg[j].sqrt());
        }
    }
    let mut s = s0.clone();
    for w in ws {
        let mut sw = Matrix::zeros(n, w.cols);
        for i in 0..n {
            for c in 0..w.cols {
                sw.set(i, c, (0..s.cols).map(|k| s.get(i, k) * w.get(k, c)).sum());
            }
        }
        let mut out = Matrix::zeros(n, w.cols);
        for i in 0..n {
            for c in 0..w.cols {
                out.set(i, c, (0..n).map(|j| ah[i][j] * sw.get(j, c)).sum::<f64>().max(0.0));
            }
        }
        s = out;
    }
    s
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn affine(x: &[f64], w: &Matrix, b: Option<&Matrix>) -> Vec<f64> {
    (0..w.cols).map(|c| (0..x.len()).map(|k| x[k] * w.get(k, c)).sum::<f64>() + b.map_or(0.0, |b| b.get(0, c))).collect()
}

/// Weights of one GRU step as plain matrices.
pub struct GruWeights {
    pub wz: Matrix,
    pub bz: Matrix,
    pub uz: Matrix,
    pub wr: Matrix,
    pub br: Matrix,
    pub ur: Matrix,
    pub wn: Matrix,
    pub bn: Matrix,
    pub un: Matrix,
    pub bhn: Matrix,
}

/// One GRU step for a single row.
pub fn gru_row(w: &GruWeights, x: &[f64], h: &[f64]) -> Vec<f64> {
    let z: Vec<f64> = affine(x, &w.wz, Some(&w.bz)).iter().zip(affine(h, &w.uz, None)).map(|(a, b)| sig(a + b)).collect();
    let r: Vec<f64> = affine(x, &w.wr, Some(&w.br)).iter().zip(affine(h, &w.ur, None)).map(|(a, b)| sig(a + b)).collect();
    let hn = affine(h, &w.un, Some(&w.bhn));
    let xn = affine(x, &w.wn, Some(&w.bn));
    (0..h.len())
        .map(|i| {
            let n = (xn[i] + r[i] * hn[i]).tanh();
            (1.0 - z[i]) * n + z[i] * h[i]
        })
        .collect()
}

/// `mean_{j,k} a_j · b_k` by the double loop.
pub fn brute_mean_dot(a: &Matrix, b: &Matrix) -> f64 {
    let mut s = 0.0;
    for j in 0..a.rows {
        for k in 0..b.rows {
            s += (0..a.cols).map(|c| a.get(j, c) * b.get(k, c)).sum::<f64>();
        }
    }
    s / (a.rows * b.rows) as f64
}

pub fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

/// Cells from the library graph in the oracle's shape.
pub fn library_cells(inst: &MwpInstance, f: usize) -> BTreeMap<usize, BTreeSet<usize>> {
    let g = disk::qcg::QuantityCellGraph::from_instance(inst, f).unwrap();
    (0..g.m).map(|k| (g.nodes[k].text_index, g.cell(k))).collect()
}

/// Agreement of partition and cell extraction with the oracles on `n`
/// parses: half synthetic-corpus parses, half random bracketings.
pub fn qcg_agreement(n: usize, seed: u64) -> (usize, usize) {
    use disk::synth::{generate_synthetic_corpus, SynthConfig};
    use rand::SeedableRng;
    let synth = generate_synthetic_corpus(&SynthConfig { n_examples: n.div_ceil(2), n_templates: 16, seed }).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut insts = synth;
    insts.extend((0..n / 2).map(|i| random_instance(&mut rng, i)));
    let mut agree = 0;
    for inst in &insts {
        let tree = Tree::parse(&inst.constituency).unwrap();
        let ok = (1..=6).all(|f| disk::qcg::subtree_partition(&tree, f) == naive_partition(&tree, f))
            && [3, 5].iter().all(|&f| library_cells(inst, f) == oracle_cells(inst, f));
        agree += usize::from(ok);
    }
    (agree, insts.len())
}

/// A small untrained trainer over a synthetic corpus, pool encodings fresh.
pub fn tiny_trainer(n: usize, d: usize, ablation: disk::config::Ablation, seed: u64) -> (disk::trainer::Trainer, Vec<MwpInstance>) {
    use disk::config::{ModelConfig, TrainConfig};
    use disk::synth::{generate_synthetic_corpus, SynthConfig};
    let corpus = generate_synthetic_corpus(&SynthConfig { n_examples: n, n_templates: 16, seed }).unwrap();
    let cfg = TrainConfig {
        model: ModelConfig { max_decode: 12, ..ModelConfig::tiny(d) },
        ablation,
        batch_size: 8,
        epochs: 2,
        lr: 3e-3,
        pool_size: 12,
        seed,
        ..TrainConfig::default()
    };
    let mut t = disk::trainer::Trainer::new(cfg, &corpus, &corpus[..4]).unwrap();
    t.pool.refresh(&t.store, &t.model.matcher, t.model.tokens);
    (t, corpus)
}
