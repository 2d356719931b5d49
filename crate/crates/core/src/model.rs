//! The assembled model: summarizer, shared equation encoder, matcher,
//! sketch provider and generator over one shared token embedding table.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autograd::{Graph, Var};
use crate::config::{Ablation, ModelConfig};
use crate::corpus::{MwpInstance, TokenKind};
use crate::error::{DiskError, Result};
use crate::generator::{Decoding, Generator, Hypothesis};
use crate::layers::Init;
use crate::matcher::{argmax, CandidatePool, EquationEncoder, Matcher, PoolFeatures};
use crate::params::{Grads, ParamId, ParamStore};
use crate::sketch::{Sketch, SketchProvider};
use crate::summarizer::{DomainState, DomainSummarizer};
use crate::tensor::Matrix;
use crate::vocab::{Vocabulary, EOS};

#[derive(Clone, Debug, PartialEq)]
pub struct Disk {
    pub cfg: ModelConfig,
    pub tokens: ParamId,
    pub summarizer: DomainSummarizer,
    pub equation: EquationEncoder,
    pub matcher: Matcher,
    pub sketch: SketchProvider,
    pub generator: Generator,
    pub vocab_size: usize,
    pub n_pos: usize,
}

/// Vocabulary ids for one instance.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedExample {
    pub id: String,
    pub text: Vec<usize>,
    pub eq: Vec<usize>,
    pub kinds: Vec<TokenKind>,
}

impl EncodedExample {
    pub fn new(inst: &MwpInstance, vocab: &Vocabulary) -> Self {
        Self {
            id: inst.id.clone(),
            text: vocab.encode(&inst.text),
            eq: vocab.encode(&inst.equation_surfaces()),
            kinds: inst.equation.iter().map(|t| t.kind).collect(),
        }
    }

    /// Decoder outputs: the text followed by EOS.
    pub fn outputs(&self) -> Vec<usize> {
        let mut o = self.text.clone();
        o.push(EOS);
        o
    }
}

/// Graph nodes of one training example's loss.
#[derive(Clone, Debug)]
pub struct LossParts {
    pub domain: DomainState,
    pub l_d: Var,
    pub l_m: Option<Var>,
    pub l_g: Var,
    pub total: Var,
    /// Matching logits over the whole pool (`1 × |P|`).
    pub match_logits: Option<Var>,
    pub sketch: Option<Sketch>,
}

/// Pool features as plain values, recomputed whenever parameters change.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolFeatureValues {
    pub m2: Matrix,
    pub hp: Matrix,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Candidate {
    pub k: usize,
    pub retrieved: Option<usize>,
    pub hyp: Hypothesis,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GenerationResult {
    pub candidates: Vec<Candidate>,
    pub selected: usize,
}

impl GenerationResult {
    pub fn best(&self) -> &Candidate {
        &self.candidates[self.selected]
    }
}

impl Disk {
    pub fn new(cfg: &ModelConfig, vocab_size: usize, n_pos: usize, seed: u64) -> Result<(Self, ParamStore)> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init { store: &mut store, rng: &mut rng };
        let tokens = init.embedding("embed.tokens", vocab_size, cfg.d);
        let model = Self {
            cfg: cfg.clone(),
            tokens,
            summarizer: DomainSummarizer::new(&mut init, cfg),
            equation: EquationEncoder::new(&mut init, cfg),
            matcher: Matcher::new(&mut init, cfg),
            sketch: SketchProvider::new(&mut init, cfg, n_pos),
            generator: Generator::new(&mut init, cfg, vocab_size),
            vocab_size,
            n_pos,
        };
        Ok((model, store))
    }

    pub fn encode_equation(&self, g: &mut Graph, eq: &[usize], kinds: &[TokenKind], dropout: f64) -> Result<Var> {
        self.equation.forward(g, self.tokens, eq, kinds, dropout)
    }

    /// Pool features inside `g` from the cached (detached) candidate encodings.
    pub fn pool_features(&self, g: &mut Graph, pool: &CandidatePool) -> Result<PoolFeatures> {
        if pool.encodings.len() != pool.len() {
            return Err(DiskError::Invariant("candidate pool encodings are stale; call refresh".into()));
        }
        let us: Vec<Var> = pool.encodings.iter().map(|u| g.constant(u.clone())).collect();
        Ok(self.matcher.pool_features(g, &us))
    }

    pub fn pool_feature_values(&self, store: &ParamStore, pool: &CandidatePool) -> Result<PoolFeatureValues> {
        let mut g = Graph::new(store);
        let pf = self.pool_features(&mut g, pool)?;
        Ok(PoolFeatureValues { m2: g.value(pf.m2).clone(), hp: g.value(pf.hp).clone() })
    }

    /// Parameter gradients of `Σ M2 ⊙ dM2 + Σ Hp ⊙ dHp`, i.e. the chain rule
    /// through the pool features given their upstream gradients.
    pub fn pool_feature_backward(&self, store: &ParamStore, pool: &CandidatePool, dm2: &Matrix, dhp: &Matrix) -> Result<Grads> {
        let mut g = Graph::new(store);
        let pf = self.pool_features(&mut g, pool)?;
        let a = g.constant(dm2.clone());
        let b = g.constant(dhp.clone());
        let x = g.mul(pf.m2, a);
        let y = g.mul(pf.hp, b);
        let (x, y) = (g.sum_all(x), g.sum_all(y));
        let s = g.add(x, y);
        Ok(g.backward(s).params)
    }

    /// Training loss of one example. `gold` indexes the pool; the example
    /// itself is excluded from its own candidate set.
    #[allow(clippy::too_many_arguments)]
    pub fn example_loss(
        &self,
        g: &mut Graph,
        ex: &EncodedExample,
        pool: &CandidatePool,
        pf: Option<&PoolFeatures>,
        gold: usize,
        ablation: &Ablation,
        dropout: f64,
    ) -> Result<LossParts> {
        let domain = self.summarizer.forward(g, self.tokens, &ex.text, dropout)?;
        let c = self.encode_equation(g, &ex.eq, &ex.kinds, dropout)?;
        let (l_m, match_logits, sketch, mem) = if ablation.cs {
            let pf = pf.ok_or_else(|| DiskError::Invariant("pool features required when retrieval is active".into()))?;
            let logits = self.matcher.logits(g, c, domain.h_d, pf);
            let own = pool.position(&ex.id);
            let allowed: Vec<usize> = (0..pool.len()).filter(|&i| Some(i) != own).collect();
            let l_m = Matcher::matching_loss(g, logits, &allowed, gold)?;
            let u = self.matcher.encode_candidate(g, self.tokens, &pool.token_ids[gold], dropout);
            let sk = self.sketch.forward(g, u, c, domain.h_d, &pool.graphs[gold], &pool.pos_ids[gold], ablation);
            let mem = self.generator.memory(g, sk.c_tilde, Some(sk.u_tilde));
            (Some(l_m), Some(logits), Some(sk), mem)
        } else {
            (None, None, None, self.generator.memory(g, c, None))
        };
        let l_g = self.generator.loss(g, self.tokens, domain.h_d, &ex.outputs(), &mem, dropout)?;
        let mut total = g.add(domain.l_d, l_g);
        if let Some(l_m) = l_m {
            total = g.add(total, l_m);
        }
        Ok(LossParts { domain, l_d: domain.l_d, l_m, l_g, total, match_logits, sketch })
    }

    /// Retrieval for domain row `k`: matching logits and the argmax index.
    fn retrieve(&self, g: &mut Graph, c: Var, h_d: Var, pf: &PoolFeatureValues) -> (Var, usize) {
        let pfv = PoolFeatures { m2: g.constant(pf.m2.clone()), hp: g.constant(pf.hp.clone()) };
        let logits = self.matcher.logits(g, c, h_d, &pfv);
        let best = argmax(&g.value(logits).data);
        (logits, best)
    }

    /// Decoder memory for domain `k` at inference time.
    #[allow(clippy::too_many_arguments)]
    fn inference_memory(
        &self,
        g: &mut Graph,
        eq: &[usize],
        kinds: &[TokenKind],
        k: usize,
        pool: &CandidatePool,
        pf: Option<&PoolFeatureValues>,
        ablation: &Ablation,
    ) -> Result<(Var, crate::generator::DecoderMemory, Option<usize>, Option<Sketch>)> {
        let h_d = self.summarizer.domain_row(g, k);
        let c = self.encode_equation(g, eq, kinds, 0.0)?;
        if !ablation.cs {
            let mem = self.generator.memory(g, c, None);
            return Ok((h_d, mem, None, None));
        }
        let pf = pf.ok_or_else(|| DiskError::Invariant("pool features required when retrieval is active".into()))?;
        let (_, l_hat) = self.retrieve(g, c, h_d, pf);
        let u = g.constant(pool.encodings[l_hat].clone());
        let sk = self.sketch.forward(g, u, c, h_d, &pool.graphs[l_hat], &pool.pos_ids[l_hat], ablation);
        let mem = self.generator.memory(g, sk.c_tilde, Some(sk.u_tilde));
        Ok((h_d, mem, Some(l_hat), Some(sk)))
    }

    /// Decodes one candidate per domain and selects the highest mean log-probability.
    #[allow(clippy::too_many_arguments)]
    pub fn generate(
        &self,
        store: &ParamStore,
        eq: &[usize],
        kinds: &[TokenKind],
        pool: &CandidatePool,
        pf: Option<&PoolFeatureValues>,
        ablation: &Ablation,
        decoding: Decoding,
    ) -> Result<GenerationResult> {
        if !store.all_finite() {
            return Err(DiskError::Numeric("model parameters contain non-finite values".into()));
        }
        let mut candidates = Vec::with_capacity(self.cfg.k);
        for k in 0..self.cfg.k {
            let mut g = Graph::new(store);
            let (h_d, mem, retrieved, _) = self.inference_memory(&mut g, eq, kinds, k, pool, pf, ablation)?;
            let hyp = self.generator.decode(&mut g, self.tokens, h_d, &mem, self.cfg.max_decode, decoding);
            let score = hyp.score();
            if !score.is_finite() {
                return Err(DiskError::Numeric(format!("non-finite candidate score for domain {k}")));
            }
            candidates.push(Candidate { k, retrieved, hyp, score });
        }
        let scores: Vec<f64> = candidates.iter().map(|c| c.score).collect();
        let selected = argmax(&scores);
        Ok(GenerationResult { candidates, selected })
    }

    /// Independent teacher-forced mean log-probability of `outputs` under domain `k`.
    #[allow(clippy::too_many_arguments)]
    pub fn rescore(
        &self,
        store: &ParamStore,
        eq: &[usize],
        kinds: &[TokenKind],
        pool: &CandidatePool,
        pf: Option<&PoolFeatureValues>,
        ablation: &Ablation,
        k: usize,
        outputs: &[usize],
    ) -> Result<f64> {
        let mut g = Graph::new(store);
        let (h_d, mem, _, _) = self.inference_memory(&mut g, eq, kinds, k, pool, pf, ablation)?;
        let lps = self.generator.score_outputs(&mut g, self.tokens, h_d, outputs, &mem)?;
        Ok(lps.iter().sum::<f64>() / lps.len() as f64)
    }

    /// Gate, node-attention and retrieval details for domain `k`.
    #[allow(clippy::too_many_arguments)]
    pub fn diagnostics(
        &self,
        store: &ParamStore,
        eq: &[usize],
        kinds: &[TokenKind],
        pool: &CandidatePool,
        pf: Option<&PoolFeatureValues>,
        ablation: &Ablation,
        k: usize,
    ) -> Result<serde_json::Value> {
        let mut g = Graph::new(store);
        let (_, _, retrieved, sketch) = self.inference_memory(&mut g, eq, kinds, k, pool, pf, ablation)?;
        let Some(l_hat) = retrieved else {
            return Ok(serde_json::json!({"domain": k}));
        };
        let sk = sketch.expect("sketch present with retrieval");
        let gate = sk.q.map(|q| {
            let m = g.value(q);
            (0..m.rows).map(|r| m.row(r).iter().sum::<f64>() / m.cols as f64).collect::<Vec<_>>()
        });
        let attn = sk.attn.map(|a| g.value(a).to_rows());
        Ok(serde_json::json!({
            "domain": k,
            "retrieved_id": pool.instances[l_hat].id,
            "retrieved_text": pool.instances[l_hat].text,
            "gate_mean": gate,
            "node_attention": attn,
            "graph": pool.graphs[l_hat].to_json(),
        }))
    }

    /// Graph convolution weights.
    pub fn gcn_params(&self) -> Vec<ParamId> {
        self.sketch.gcn.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_blocks_cover_store_once() {
        let cfg = ModelConfig::tiny(8);
        let (m, store) = Disk::new(&cfg, 20, 6, 1).unwrap();
        let mut all = vec![m.tokens];
        all.extend(m.summarizer.params());
        all.extend(m.equation.params());
        all.extend(m.matcher.params());
        all.extend(m.sketch.params());
        all.extend(m.generator.params());
        all.sort();
        let n = all.len();
        all.dedup();
        assert_eq!(all.len(), n, "a parameter is listed twice");
        assert_eq!(n, store.len());
    }
}
