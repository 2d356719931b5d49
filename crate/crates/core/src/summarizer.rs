//! Latent domain summarizer over the gold problem text.

use crate::autograd::{AttnMask, Graph, Var};
use crate::config::ModelConfig;
use crate::error::{DiskError, Result};
use crate::layers::{embed_with_positions, Init, TransformerEncoder};
use crate::params::ParamId;
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq)]
pub struct DomainSummarizer {
    pub encoder: TransformerEncoder,
    /// Global attention weight `W^a` (`d × d`).
    pub wa: ParamId,
    /// `W^D_1` (`K × L_max`) and column bias `b^D_1` (`K × 1`).
    pub wd1: ParamId,
    pub bd1: ParamId,
    /// `W^D_2` (`d × d`) and row bias `b^D_2` (`1 × d`).
    pub wd2: ParamId,
    pub bd2: ParamId,
    /// Attention vector `v` (`d × 1`), `H^d` and `U^d` (`d × d`).
    pub v: ParamId,
    pub hd: ParamId,
    pub ud: ParamId,
    /// Global domain table `E` (`K × d`).
    pub e: ParamId,
    pub l_max: usize,
}

/// Per-example summarizer outputs.
#[derive(Clone, Copy, Debug)]
pub struct DomainState {
    pub h: Var,
    pub h_a: Var,
    pub d_tilde: Var,
    /// `1 × K`
    pub beta: Var,
    /// `1 × d`
    pub h_d: Var,
    pub l_d: Var,
}

impl DomainSummarizer {
    pub fn new(init: &mut Init, cfg: &ModelConfig) -> Self {
        let (d, k) = (cfg.d, cfg.k);
        Self {
            encoder: TransformerEncoder::new(init, "summarizer.encoder", d, cfg.layers, cfg.heads, cfg.ffn),
            wa: init.weight("summarizer.W_a", d, d),
            wd1: init.weight("summarizer.W_D1", k, cfg.l_max),
            bd1: init.zeros("summarizer.b_D1", k, 1),
            wd2: init.weight("summarizer.W_D2", d, d),
            bd2: init.zeros("summarizer.b_D2", 1, d),
            v: init.weight("summarizer.v", d, 1),
            hd: init.weight("summarizer.H_d", d, d),
            ud: init.weight("summarizer.U_d", d, d),
            e: init.embedding("summarizer.E", k, d),
            l_max: cfg.l_max,
        }
    }

    pub fn encode_text(&self, g: &mut Graph, tokens: ParamId, ids: &[usize], dropout: f64) -> Result<Var> {
        if ids.is_empty() {
            return Err(DiskError::EmptyInput);
        }
        let x = embed_with_positions(g, tokens, ids);
        Ok(self.encoder.forward(g, x, &AttnMask::None, dropout))
    }

    pub fn forward(&self, g: &mut Graph, tokens: ParamId, ids: &[usize], dropout: f64) -> Result<DomainState> {
        let h = self.encode_text(g, tokens, ids, dropout)?;
        let wa = g.param(self.wa);
        let h_a = global_attention(g, h, wa);
        let d_tilde = self.extract_domains(g, h);
        let l_d = orthogonality_loss(g, d_tilde);
        let beta = self.domain_distribution(g, h_a, d_tilde);
        let e = g.param(self.e);
        let h_d = g.matmul(beta, e);
        Ok(DomainState { h, h_a, d_tilde, beta, h_d, l_d })
    }

    /// `tanh(W^D_1 (H W^D_2 + b^D_2) + b^D_1)` with `H` zero-padded (or cut) to `L_max` rows.
    pub fn extract_domains(&self, g: &mut Graph, h: Var) -> Var {
        let (l, d) = g.shape(h);
        let h = if l > self.l_max {
            g.slice_rows(h, 0, self.l_max)
        } else if l < self.l_max {
            let pad = g.constant(Matrix::zeros(self.l_max - l, d));
            g.concat_rows(&[h, pad])
        } else {
            h
        };
        let (w1, b1, w2, b2) = (g.param(self.wd1), g.param(self.bd1), g.param(self.wd2), g.param(self.bd2));
        let inner = g.matmul(h, w2);
        let inner = g.add_row(inner, b2);
        let outer = g.matmul(w1, inner);
        let outer = g.add_col(outer, b1);
        g.tanh(outer)
    }

    /// `β_i = softmax_i(vᵀ tanh(H^d h_a + U^d D̃_i))`, returned as `1 × K`.
    pub fn domain_distribution(&self, g: &mut Graph, h_a: Var, d_tilde: Var) -> Var {
        let (hd, ud, v) = (g.param(self.hd), g.param(self.ud), g.param(self.v));
        let a = g.matmul(h_a, hd);
        let b = g.matmul(d_tilde, ud);
        let t = g.add_row(b, a);
        let t = g.tanh(t);
        let logits = g.matmul(t, v);
        let logits = g.transpose(logits);
        g.softmax_rows(logits)
    }

    /// Inference-time domain vector: row `k` of `E`.
    pub fn domain_row(&self, g: &mut Graph, k: usize) -> Var {
        let e = g.param(self.e);
        g.slice_rows(e, k, 1)
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.encoder.params();
        p.extend([self.wa, self.wd1, self.bd1, self.wd2, self.bd2, self.v, self.hd, self.ud, self.e]);
        p
    }
}

/// `h̄ = mean(H)`, `α = softmax(H W h̄ᵀ)`, returns `αᵀ H` (`1 × d`).
pub fn global_attention(g: &mut Graph, h: Var, w: Var) -> Var {
    let alpha = global_attention_weights(g, h, w);
    g.matmul(alpha, h)
}

/// Attention weights `α` as a `1 × L` row.
pub fn global_attention_weights(g: &mut Graph, h: Var, w: Var) -> Var {
    let mean = g.mean_rows(h);
    let hw = g.matmul(h, w);
    let logits = g.matmul_t(mean, hw);
    g.softmax_rows(logits)
}

/// `‖D̃ D̃ᵀ − I‖_F`.
pub fn orthogonality_loss(g: &mut Graph, d_tilde: Var) -> Var {
    let k = g.shape(d_tilde).0;
    let gram = g.matmul_t(d_tilde, d_tilde);
    let eye = g.constant(Matrix::identity(k));
    let diff = g.sub(gram, eye);
    g.frobenius(diff)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamStore;

    #[test]
    fn global_attention_hand_case() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let h = g.constant(Matrix::identity(2));
        let w = g.constant(Matrix::identity(2));
        let alpha = global_attention_weights(&mut g, h, w);
        assert_eq!(g.value(alpha).data, vec![0.5, 0.5]);
        let ha = global_attention(&mut g, h, w);
        assert_eq!(g.value(ha).data, vec![0.5, 0.5]);
    }

    #[test]
    fn identical_rows_give_that_row() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let u = vec![0.3, -1.2, 2.0];
        let h = g.constant(Matrix::from_rows(&[u.clone(), u.clone(), u.clone()]));
        let w = g.constant(Matrix::from_rows(&[vec![1.0, 2.0, 0.0], vec![0.0, 1.0, 0.5], vec![3.0, 0.0, 1.0]]));
        let ha = global_attention(&mut g, h, w);
        for (a, b) in g.value(ha).data.iter().zip(&u) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn orthogonality_hand_cases() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let dup = g.constant(Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]));
        let l = orthogonality_loss(&mut g, dup);
        assert!((g.scalar(l) - 2f64.sqrt()).abs() < 1e-12);
        let ortho = g.constant(Matrix::from_rows(&[vec![0.6, 0.8, 0.0], vec![-0.8, 0.6, 0.0]]));
        let l = orthogonality_loss(&mut g, ortho);
        assert!(g.scalar(l) < 1e-12);
    }
}
