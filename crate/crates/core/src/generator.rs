//! Transformer decoder with a sketch-attention sublayer, teacher-forced
//! loss, and incremental greedy/beam decoding.

use serde::{Deserialize, Serialize};

use crate::autograd::{AttnMask, Graph, Var};
use crate::config::ModelConfig;
use crate::error::{DiskError, Result};
use crate::layers::{add_positions, FeedForward, Init, KeyValue, LayerNorm, Linear, MultiHeadAttention};
use crate::params::ParamId;
use crate::vocab::{BOS, EOS, PAD, UNK};

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderLayer {
    pub self_attn: MultiHeadAttention,
    pub ln1: LayerNorm,
    pub sketch_attn: MultiHeadAttention,
    pub ln_sketch: LayerNorm,
    pub cross_attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub ff: FeedForward,
    pub ln3: LayerNorm,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    pub layers: Vec<DecoderLayer>,
    pub out: Linear,
}

/// Precomputed per-layer keys/values of the decoder memories.
#[derive(Clone, Debug)]
pub struct DecoderMemory {
    pub sketch: Option<Vec<KeyValue>>,
    pub cross: Vec<KeyValue>,
}

/// Per-layer self-attention keys/values of the prefix decoded so far.
#[derive(Clone, Debug)]
pub struct DecodeState {
    ks: Vec<Option<Var>>,
    vs: Vec<Option<Var>>,
    len: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decoding {
    Greedy,
    Beam(usize),
}

impl Decoding {
    fn width(self) -> usize {
        match self {
            Decoding::Greedy => 1,
            Decoding::Beam(w) => w.max(1),
        }
    }
}

/// One decoded sequence with its per-token log-probabilities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    /// Generated ids, excluding the final EOS.
    pub tokens: Vec<usize>,
    /// Log-probabilities of every emitted step, EOS included when present.
    pub logps: Vec<f64>,
    pub ended: bool,
}

impl Hypothesis {
    /// Mean per-token log-probability.
    pub fn score(&self) -> f64 {
        if self.logps.is_empty() {
            f64::NEG_INFINITY
        } else {
            self.logps.iter().sum::<f64>() / self.logps.len() as f64
        }
    }

    /// Teacher-forcing targets reproducing this hypothesis.
    pub fn targets(&self) -> Vec<usize> {
        let mut t = self.tokens.clone();
        if self.ended {
            t.push(EOS);
        }
        t
    }
}

impl DecoderLayer {
    fn new(init: &mut Init, name: &str, cfg: &ModelConfig) -> Self {
        let (d, h) = (cfg.d, cfg.heads);
        Self {
            self_attn: MultiHeadAttention::new(init, &format!("{name}.self_attn"), d, h),
            ln1: LayerNorm::new(init, &format!("{name}.ln1"), d),
            sketch_attn: MultiHeadAttention::new(init, &format!("{name}.sketch_attn"), d, h),
            ln_sketch: LayerNorm::new(init, &format!("{name}.ln_sketch"), d),
            cross_attn: MultiHeadAttention::new(init, &format!("{name}.cross_attn"), d, h),
            ln2: LayerNorm::new(init, &format!("{name}.ln2"), d),
            ff: FeedForward::new(init, name, d, cfg.ffn),
            ln3: LayerNorm::new(init, &format!("{name}.ln3"), d),
        }
    }

    /// Everything after self-attention: sketch attention, cross attention, feed-forward.
    fn tail(&self, g: &mut Graph, x: Var, sketch: Option<KeyValue>, cross: KeyValue, dropout: f64) -> Var {
        let mut x = x;
        if let Some(kv) = sketch {
            let s = self.sketch_attn.attend(g, x, kv, &AttnMask::None);
            let s = g.dropout(s, dropout);
            let sum = g.add(x, s);
            x = self.ln_sketch.forward(g, sum);
        }
        let c = self.cross_attn.attend(g, x, cross, &AttnMask::None);
        let c = g.dropout(c, dropout);
        let sum = g.add(x, c);
        let x = self.ln2.forward(g, sum);
        let f = self.ff.forward(g, x);
        let f = g.dropout(f, dropout);
        let sum = g.add(x, f);
        self.ln3.forward(g, sum)
    }

    fn after_self(&self, g: &mut Graph, x: Var, a: Var, dropout: f64) -> Var {
        let a = g.dropout(a, dropout);
        let sum = g.add(x, a);
        self.ln1.forward(g, sum)
    }

    fn params(&self) -> Vec<ParamId> {
        let mut p = self.self_attn.params();
        p.extend(self.sketch_attn.params());
        p.extend(self.cross_attn.params());
        p.extend(self.ff.params());
        for ln in [&self.ln1, &self.ln_sketch, &self.ln2, &self.ln3] {
            p.extend([ln.gamma, ln.beta]);
        }
        p
    }
}

impl Generator {
    pub fn new(init: &mut Init, cfg: &ModelConfig, vocab_size: usize) -> Self {
        Self {
            layers: (0..cfg.layers).map(|l| DecoderLayer::new(init, &format!("generator.layer{l}"), cfg)).collect(),
            out: Linear::new(init, "generator.out", cfg.d, vocab_size, true),
        }
    }

    /// Projects the cross-attention memory and, when present, the sketch.
    pub fn memory(&self, g: &mut Graph, cross: Var, sketch: Option<Var>) -> DecoderMemory {
        DecoderMemory {
            sketch: sketch.map(|s| self.layers.iter().map(|l| l.sketch_attn.project_memory(g, s)).collect()),
            cross: self.layers.iter().map(|l| l.cross_attn.project_memory(g, cross)).collect(),
        }
    }

    /// Teacher-forced logits for inputs `[h_d, y_1..y_T]`, one row per step.
    pub fn forward(
        &self,
        g: &mut Graph,
        tokens: ParamId,
        h_d: Var,
        inputs: &[usize],
        mem: &DecoderMemory,
        dropout: f64,
    ) -> Var {
        let x = if inputs.is_empty() {
            h_d
        } else {
            let t = g.param(tokens);
            let e = g.gather_rows(t, inputs);
            g.concat_rows(&[h_d, e])
        };
        let x = add_positions(g, x, 0);
        let mut x = g.dropout(x, dropout);
        for (i, layer) in self.layers.iter().enumerate() {
            let a = layer.self_attn.forward(g, x, x, &AttnMask::Causal);
            let h = layer.after_self(g, x, a, dropout);
            let sk = mem.sketch.as_ref().map(|s| s[i]);
            x = layer.tail(g, h, sk, mem.cross[i], dropout);
        }
        self.out.forward(g, x)
    }

    /// `−Σ_t log p(o_t)` for outputs `o` (the text followed by EOS), fed
    /// inputs `[h_d, o_1..o_{T-1}]`.
    pub fn loss(
        &self,
        g: &mut Graph,
        tokens: ParamId,
        h_d: Var,
        outputs: &[usize],
        mem: &DecoderMemory,
        dropout: f64,
    ) -> Result<Var> {
        let lp = self.output_log_probs(g, tokens, h_d, outputs, mem, dropout)?;
        let s = g.pick_sum(lp, outputs);
        Ok(g.scale(s, -1.0))
    }

    /// Row-wise log-softmax over the vocabulary for each output step.
    pub fn output_log_probs(
        &self,
        g: &mut Graph,
        tokens: ParamId,
        h_d: Var,
        outputs: &[usize],
        mem: &DecoderMemory,
        dropout: f64,
    ) -> Result<Var> {
        if outputs.is_empty() {
            return Err(DiskError::EmptyInput);
        }
        let logits = self.forward(g, tokens, h_d, &outputs[..outputs.len() - 1], mem, dropout);
        Ok(g.log_softmax_rows(logits))
    }

    /// Per-step log-probabilities of `outputs` under teacher forcing.
    pub fn score_outputs(
        &self,
        g: &mut Graph,
        tokens: ParamId,
        h_d: Var,
        outputs: &[usize],
        mem: &DecoderMemory,
    ) -> Result<Vec<f64>> {
        let lp = self.output_log_probs(g, tokens, h_d, outputs, mem, 0.0)?;
        let v = g.value(lp);
        Ok(outputs.iter().enumerate().map(|(t, &o)| v.get(t, o)).collect())
    }

    pub fn start(&self) -> DecodeState {
        DecodeState { ks: vec![None; self.layers.len()], vs: vec![None; self.layers.len()], len: 0 }
    }

    /// Feeds one input row (`h_d` or a token embedding) and returns the
    /// next-step logits (`1 × V`) and the extended state.
    pub fn step(&self, g: &mut Graph, x: Var, state: &DecodeState, mem: &DecoderMemory) -> (Var, DecodeState) {
        let mut x = add_positions(g, x, state.len);
        let mut next = DecodeState { ks: Vec::new(), vs: Vec::new(), len: state.len + 1 };
        for (i, layer) in self.layers.iter().enumerate() {
            let kv = layer.self_attn.project_memory(g, x);
            let k = match state.ks[i] {
                Some(prev) => g.concat_rows(&[prev, kv.k]),
                None => kv.k,
            };
            let v = match state.vs[i] {
                Some(prev) => g.concat_rows(&[prev, kv.v]),
                None => kv.v,
            };
            next.ks.push(Some(k));
            next.vs.push(Some(v));
            let a = layer.self_attn.attend(g, x, KeyValue { k, v }, &AttnMask::None);
            let h = layer.after_self(g, x, a, 0.0);
            let sk = mem.sketch.as_ref().map(|s| s[i]);
            x = layer.tail(g, h, sk, mem.cross[i], 0.0);
        }
        (self.out.forward(g, x), next)
    }

    /// Greedy or beam decoding from the first input `h_d`, up to `max_len` tokens.
    pub fn decode(
        &self,
        g: &mut Graph,
        tokens: ParamId,
        h_d: Var,
        mem: &DecoderMemory,
        max_len: usize,
        decoding: Decoding,
    ) -> Hypothesis {
        struct Beam {
            hyp: Hypothesis,
            sum: f64,
            state: DecodeState,
            next_input: Var,
        }
        let width = decoding.width();
        let mut live = vec![Beam {
            hyp: Hypothesis { tokens: Vec::new(), logps: Vec::new(), ended: false },
            sum: 0.0,
            state: self.start(),
            next_input: h_d,
        }];
        let mut done: Vec<Hypothesis> = Vec::new();
        let table = g.param(tokens);
        for _ in 0..max_len {
            let mut cands: Vec<(f64, usize, usize, f64)> = Vec::new();
            let mut states = Vec::with_capacity(live.len());
            for (bi, beam) in live.iter().enumerate() {
                let (logits, st) = self.step(g, beam.next_input, &beam.state, mem);
                states.push(st);
                let lp = log_softmax(&g.value(logits).data);
                let mut order: Vec<usize> = (0..lp.len()).filter(|&t| t != PAD && t != BOS && t != UNK).collect();
                order.sort_by(|&a, &b| lp[b].total_cmp(&lp[a]).then(a.cmp(&b)));
                for &t in order.iter().take(width) {
                    cands.push((beam.sum + lp[t], bi, t, lp[t]));
                }
            }
            cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            let mut next = Vec::new();
            for (taken, (sum, bi, t, lp)) in cands.into_iter().enumerate() {
                if taken == width {
                    break;
                }
                let mut hyp = live[bi].hyp.clone();
                hyp.logps.push(lp);
                if t == EOS {
                    hyp.ended = true;
                    done.push(hyp);
                } else {
                    hyp.tokens.push(t);
                    let emb = g.gather_rows(table, &[t]);
                    next.push(Beam { hyp, sum, state: states[bi].clone(), next_input: emb });
                }
            }
            live = next;
            if live.is_empty() || done.len() >= width {
                break;
            }
        }
        done.extend(live.into_iter().map(|b| b.hyp));
        let mut best = 0;
        for (i, h) in done.iter().enumerate() {
            if h.score() > done[best].score() {
                best = i;
            }
        }
        done.swap_remove(best)
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p: Vec<ParamId> = self.layers.iter().flat_map(DecoderLayer::params).collect();
        p.extend(self.out.params());
        p
    }

    pub fn sketch_params(&self) -> Vec<ParamId> {
        self.layers
            .iter()
            .flat_map(|l| {
                let mut p = l.sketch_attn.params();
                p.extend([l.ln_sketch.gamma, l.ln_sketch.beta]);
                p
            })
            .collect()
    }
}

pub fn log_softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    x.iter().map(|v| v - lse).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hypothesis_score_and_targets() {
        let h = Hypothesis { tokens: vec![5, 6], logps: vec![-1.0, -2.0, -3.0], ended: true };
        assert_eq!(h.score(), -2.0);
        assert_eq!(h.targets(), vec![5, 6, EOS]);
    }

    #[test]
    fn log_softmax_normalizes() {
        let lp = log_softmax(&[1.0, 2.0, 3.0]);
        let s: f64 = lp.iter().map(|v| v.exp()).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }
}
