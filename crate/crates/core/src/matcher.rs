//! Equation encoding and domain-conditioned retrieval over a candidate pool.

use std::collections::HashSet;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{AttnMask, Graph, Var};
use crate::config::ModelConfig;
use crate::corpus::{MwpInstance, TokenKind};
use crate::error::{DiskError, Result};
use crate::layers::{add_positions, Init, Mlp, TransformerEncoder};
use crate::params::ParamId;
use crate::qcg::QuantityCellGraph;
use crate::summarizer::global_attention;
use crate::tensor::Matrix;
use crate::vocab::Vocabulary;

/// Shared equation encoder: token + kind embeddings, positions, transformer.
#[derive(Clone, Debug, PartialEq)]
pub struct EquationEncoder {
    pub encoder: TransformerEncoder,
    pub kinds: ParamId,
}

impl EquationEncoder {
    pub fn new(init: &mut Init, cfg: &ModelConfig) -> Self {
        Self {
            encoder: TransformerEncoder::new(init, "encoder_e", cfg.d, cfg.layers, cfg.heads, cfg.ffn),
            kinds: init.embedding("encoder_e.kinds", TokenKind::ALL.len(), cfg.d),
        }
    }

    pub fn forward(&self, g: &mut Graph, tokens: ParamId, ids: &[usize], kinds: &[TokenKind], dropout: f64) -> Result<Var> {
        if ids.is_empty() {
            return Err(DiskError::EmptyInput);
        }
        let (t, k) = (g.param(tokens), g.param(self.kinds));
        let te = g.gather_rows(t, ids);
        let kind_ids: Vec<usize> = kinds.iter().map(|k| k.index()).collect();
        let ke = g.gather_rows(k, &kind_ids);
        let x = g.add(te, ke);
        let x = add_positions(g, x, 0);
        Ok(self.encoder.forward(g, x, &AttnMask::None, dropout))
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.encoder.params();
        p.push(self.kinds);
        p
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Matcher {
    pub encoder_q: TransformerEncoder,
    pub g1: Mlp,
    pub g2: Mlp,
    /// Global attention weight for pooling candidate encodings.
    pub wp: ParamId,
    /// Bilinear tensor `W^r` flattened to `d × (d'·d)`.
    pub wr: ParamId,
    /// `w^r` as a `1 × d'` row.
    pub wr_vec: ParamId,
    pub d: usize,
}

/// Per-candidate pooled features shared by every example in a batch.
#[derive(Clone, Copy, Debug)]
pub struct PoolFeatures {
    /// Row `i` is the mean of `g2` over candidate `i`'s tokens (`|P| × d`).
    pub m2: Var,
    /// Row `i` is the global-attention summary `h_p^i` (`|P| × d`).
    pub hp: Var,
}

impl Matcher {
    pub fn new(init: &mut Init, cfg: &ModelConfig) -> Self {
        let d = cfg.d;
        Self {
            encoder_q: TransformerEncoder::new(init, "matcher.encoder_q", d, cfg.layers, cfg.heads, cfg.ffn),
            g1: Mlp::new(init, "matcher.g1", d, d, d),
            g2: Mlp::new(init, "matcher.g2", d, d, d),
            wp: init.weight("matcher.W_p", d, d),
            wr: init.weight("matcher.W_r", d, d * d),
            wr_vec: init.weight("matcher.w_r", 1, d),
            d,
        }
    }

    pub fn encode_candidate(&self, g: &mut Graph, tokens: ParamId, ids: &[usize], dropout: f64) -> Var {
        let x = crate::layers::embed_with_positions(g, tokens, ids);
        self.encoder_q.forward(g, x, &AttnMask::None, dropout)
    }

    /// Pool features from candidate encodings already in the graph.
    pub fn pool_features(&self, g: &mut Graph, encodings: &[Var]) -> PoolFeatures {
        let wp = g.param(self.wp);
        let mut m2 = Vec::with_capacity(encodings.len());
        let mut hp = Vec::with_capacity(encodings.len());
        for &u in encodings {
            let gu = self.g2.forward(g, u);
            m2.push(g.mean_rows(gu));
            hp.push(global_attention(g, u, wp));
        }
        PoolFeatures { m2: g.concat_rows(&m2), hp: g.concat_rows(&hp) }
    }

    /// `s_em(i) = mean_{j,k} g1(c_j)·g2(u_k)`, which factorizes into a dot
    /// product of means; returned as `1 × |P|`.
    pub fn token_match_scores(&self, g: &mut Graph, c: Var, pf: &PoolFeatures) -> Var {
        let gc = self.g1.forward(g, c);
        let m1 = g.mean_rows(gc);
        g.matmul_t(m1, pf.m2)
    }

    /// `r_i = h_d W^r h_p^i` as a `d' × |P|` matrix.
    pub fn domain_match_vectors(&self, g: &mut Graph, h_d: Var, hp: Var) -> Var {
        let wr = g.param(self.wr);
        let hw = g.matmul(h_d, wr);
        let r = g.reshape(hw, self.d, self.d);
        g.matmul_t(r, hp)
    }

    /// Matching logits `s_em(i) + w^r · r_i` (`1 × |P|`).
    pub fn logits(&self, g: &mut Graph, c: Var, h_d: Var, pf: &PoolFeatures) -> Var {
        let s_em = self.token_match_scores(g, c, pf);
        let r = self.domain_match_vectors(g, h_d, pf.hp);
        let w = g.param(self.wr_vec);
        let dom = g.matmul(w, r);
        g.add(s_em, dom)
    }

    /// `−log softmax(logits)[gold]` over the columns in `allowed`.
    pub fn matching_loss(g: &mut Graph, logits: Var, allowed: &[usize], gold: usize) -> Result<Var> {
        let pos = allowed
            .iter()
            .position(|&i| i == gold)
            .ok_or_else(|| DiskError::Invariant(format!("gold label {gold} not among allowed candidates")))?;
        let l = g.gather_cols(logits, allowed);
        let lp = g.log_softmax_rows(l);
        let picked = g.pick_sum(lp, &[pos]);
        Ok(g.scale(picked, -1.0))
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.encoder_q.params();
        p.extend(self.g1.params());
        p.extend(self.g2.params());
        p.extend([self.wp, self.wr, self.wr_vec]);
        p
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Candidate-vs-gold similarity used to pick gold retrieval labels.
pub trait SimilarityOracle {
    fn score(&self, candidate: &[String], gold: &[String]) -> f64;
}

/// Greedy exact-match F1: precision is the share of candidate tokens found
/// in the gold text, recall the share of gold tokens found in the candidate.
#[derive(Clone, Copy, Debug, Default)]
pub struct TokenF1;

impl SimilarityOracle for TokenF1 {
    fn score(&self, candidate: &[String], gold: &[String]) -> f64 {
        if candidate.is_empty() || gold.is_empty() {
            return 0.0;
        }
        let cs: HashSet<&String> = candidate.iter().collect();
        let gs: HashSet<&String> = gold.iter().collect();
        let p = candidate.iter().filter(|t| gs.contains(t)).count() as f64 / candidate.len() as f64;
        let r = gold.iter().filter(|t| cs.contains(t)).count() as f64 / gold.len() as f64;
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

/// Best-scoring candidate (lowest index on ties), skipping `exclude`.
pub fn annotate_gold_label<O: SimilarityOracle>(
    pool: &[MwpInstance],
    gold: &[String],
    exclude: Option<usize>,
    oracle: &O,
) -> Result<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, cand) in pool.iter().enumerate() {
        if Some(i) == exclude {
            continue;
        }
        let s = oracle.score(&cand.text, gold);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.ok_or_else(|| DiskError::Config("candidate pool is empty".into()))
}

/// Uniform sample of `size` training instances, in sampled order.
pub fn sample_pool(train: &[MwpInstance], size: usize, seed: u64) -> Result<Vec<MwpInstance>> {
    let size = size.min(train.len());
    if size < 2 {
        return Err(DiskError::Config("candidate pool needs at least 2 instances".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x706f_6f6c);
    Ok(sample(&mut rng, train.len(), size).into_iter().map(|i| train[i].clone()).collect())
}

/// Retrieval candidates with their static annotations and cached encodings.
#[derive(Clone, Debug)]
pub struct CandidatePool {
    pub instances: Vec<MwpInstance>,
    pub token_ids: Vec<Vec<usize>>,
    pub pos_ids: Vec<Vec<usize>>,
    pub graphs: Vec<QuantityCellGraph>,
    /// `Encoder_Q` outputs, refreshed by [`CandidatePool::refresh`].
    pub encodings: Vec<Matrix>,
}

impl CandidatePool {
    pub fn new(instances: Vec<MwpInstance>, vocab: &Vocabulary, pos_vocab: &Vocabulary, f: usize) -> Result<Self> {
        if instances.len() < 2 {
            return Err(DiskError::Config("candidate pool needs at least 2 instances".into()));
        }
        let token_ids = instances.iter().map(|p| vocab.encode(&p.text)).collect();
        let pos_ids = instances.iter().map(|p| pos_vocab.encode(&p.pos)).collect();
        let graphs = instances.iter().map(|p| QuantityCellGraph::from_instance(p, f)).collect::<Result<_>>()?;
        Ok(Self { instances, token_ids, pos_ids, graphs, encodings: Vec::new() })
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.instances.iter().position(|p| p.id == id)
    }

    /// Re-encodes every candidate with the current `Encoder_Q` (no dropout).
    pub fn refresh(&mut self, store: &crate::params::ParamStore, matcher: &Matcher, tokens: ParamId) {
        self.encodings = self
            .token_ids
            .iter()
            .map(|ids| {
                let mut g = Graph::new(store);
                let u = matcher.encode_candidate(&mut g, tokens, ids, 0.0);
                g.value(u).clone()
            })
            .collect();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn token_f1_cases() {
        assert_eq!(TokenF1.score(&toks("a b c"), &toks("a b c")), 1.0);
        assert_eq!(TokenF1.score(&toks("x y"), &toks("a b c")), 0.0);
        // p = 1/2, r = 1/3
        assert!((TokenF1.score(&toks("a z"), &toks("a b c")) - 0.4).abs() < 1e-12);
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.5]), 0);
    }

    #[test]
    fn matching_loss_hand_case() {
        let store = crate::params::ParamStore::new();
        let mut g = Graph::new(&store);
        let logits = g.constant(Matrix::row_vector(vec![0.0, 3f64.ln()]));
        let l = Matcher::matching_loss(&mut g, logits, &[0, 1], 1).unwrap();
        assert!((g.scalar(l) + 0.75f64.ln()).abs() < 1e-12);
        let uniform = g.constant(Matrix::row_vector(vec![2.0; 5]));
        let l = Matcher::matching_loss(&mut g, uniform, &[0, 1, 2, 3, 4], 3).unwrap();
        assert!((g.scalar(l) - 5f64.ln()).abs() < 1e-12);
    }
}
