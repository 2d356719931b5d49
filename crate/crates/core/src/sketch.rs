//! Sketch provider: domain gate, graph reasoning over the quantity cell
//! graph, graph-to-text fusion and math token contextualization.

use crate::autograd::{Graph, Var};
use crate::config::{Ablation, ModelConfig};
use crate::layers::{GruCell, Init, Linear};
use crate::params::ParamId;
use crate::qcg::QuantityCellGraph;
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq)]
pub struct SketchProvider {
    /// Gate `W^q` over `[h_d; u_i]` and value transform `W^Q`.
    pub wq_gate: Linear,
    pub wq_value: Linear,
    /// POS embedding table (`n_pos × d_pos`).
    pub pos_embed: ParamId,
    pub gcn: Vec<ParamId>,
    pub gru: GruCell,
    /// `W^U` (`d_g × d`).
    pub wu: ParamId,
    /// `W^G` (`d × d_g`) and the `d_g → d` projection applied to `G S^L`.
    pub wg_attn: ParamId,
    pub w_cbar: ParamId,
    /// Printed gate names: `f` uses `W^g`, `g` uses `W^f`.
    pub w_g: Linear,
    pub w_f: Linear,
    pub w_z: Linear,
}

/// Outputs of the sketch provider for one example.
#[derive(Clone, Debug)]
pub struct Sketch {
    pub u_tilde: Var,
    pub c_tilde: Var,
    /// Domain gate `q` when the gate is active.
    pub q: Option<Var>,
    /// Equation-to-node attention `G` when contextualization ran.
    pub attn: Option<Var>,
    pub f: Option<Var>,
    pub g: Option<Var>,
}

impl SketchProvider {
    pub fn new(init: &mut Init, cfg: &ModelConfig, n_pos: usize) -> Self {
        let (d, dg) = (cfg.d, cfg.d_g());
        Self {
            wq_gate: Linear::new(init, "sketch.W_q", 2 * d, d, false),
            wq_value: Linear::new(init, "sketch.W_Q", d, d, false),
            pos_embed: init.embedding("sketch.pos", n_pos, cfg.d_pos),
            gcn: (0..cfg.gcn_layers).map(|l| init.weight(&format!("sketch.gcn{l}.W"), dg, dg)).collect(),
            gru: GruCell::new(init, "sketch.gru", d, d),
            wu: init.weight("sketch.W_U", dg, d),
            wg_attn: init.weight("sketch.W_G", d, dg),
            w_cbar: init.weight("sketch.W_Cbar", dg, d),
            w_g: Linear::new(init, "sketch.W_g", 2 * d, d, false),
            w_f: Linear::new(init, "sketch.W_f", 2 * d, d, false),
            w_z: Linear::new(init, "sketch.W_Z", 2 * d, d, false),
        }
    }

    /// `u'_i = tanh(W^Q u_i) ⊙ σ(W^q [h_d; u_i])`; returns `(U', q)`.
    pub fn domain_gate(&self, g: &mut Graph, u: Var, h_d: Var) -> (Var, Var) {
        let l = g.shape(u).0;
        let hd = g.gather_rows(h_d, &vec![0; l]);
        let cat = g.concat_cols(&[hd, u]);
        let q = self.wq_gate.forward(g, cat);
        let q = g.sigmoid(q);
        let val = self.wq_value.forward(g, u);
        let val = g.tanh(val);
        (g.mul(val, q), q)
    }

    /// `S^0_j = [U[text_index_j]; pos(tag_j)]`.
    pub fn init_nodes(&self, g: &mut Graph, graph: &QuantityCellGraph, u: Var, pos_ids: &[usize]) -> Var {
        let rows: Vec<usize> = graph.nodes.iter().map(|n| n.text_index).collect();
        let tags: Vec<usize> = rows.iter().map(|&i| pos_ids[i]).collect();
        let ur = g.gather_rows(u, &rows);
        let table = g.param(self.pos_embed);
        let pe = g.gather_rows(table, &tags);
        g.concat_cols(&[ur, pe])
    }

    /// Stacked `ReLU(Â S W_l)` with symmetric-normalized self-looped adjacency.
    pub fn gcn_forward(&self, g: &mut Graph, s0: Var, adjacency: &Matrix) -> Var {
        let a_hat = g.constant(normalized_adjacency(adjacency));
        let mut s = s0;
        for &w in &self.gcn {
            let w = g.param(w);
            let sw = g.matmul(s, w);
            let agg = g.matmul(a_hat, sw);
            s = g.relu(agg);
        }
        s
    }

    /// One GRU step per text position with input `(M S^L W^U)_i` and hidden
    /// state `u'_i`; positions outside the graph keep `u'_i`.
    pub fn graph2text_fuse(&self, g: &mut Graph, u_prime: Var, s_l: Var, alignment: &Matrix) -> Var {
        let participates: Vec<bool> = (0..alignment.rows).map(|i| alignment.row(i).iter().any(|&x| x != 0.0)).collect();
        let m = g.constant(alignment.clone());
        let wu = g.param(self.wu);
        let ms = g.matmul(m, s_l);
        let x = g.matmul(ms, wu);
        let h = self.gru.forward(g, x, u_prime);
        g.where_rows(&participates, h, u_prime)
    }

    /// `G = softmax(C W^G S^Lᵀ)`, `C̄ = ReLU(G S^L W_C̄)`, gated update into `C̃`.
    /// Returns `(C̃, G, f, g)`.
    pub fn contextualize(&self, g: &mut Graph, c: Var, s_l: Var) -> (Var, Var, Var, Var) {
        let wg = g.param(self.wg_attn);
        let cw = g.matmul(c, wg);
        let scores = g.matmul_t(cw, s_l);
        let attn = g.softmax_rows(scores);
        let gs = g.matmul(attn, s_l);
        let wc = g.param(self.w_cbar);
        let cbar = g.matmul(gs, wc);
        let cbar = g.relu(cbar);
        let cc = g.concat_cols(&[c, cbar]);
        let f = self.w_g.forward(g, cc);
        let f = g.sigmoid(f);
        let gate = self.w_f.forward(g, cc);
        let gate = g.sigmoid(gate);
        let fc = g.mul(f, cbar);
        let cz = g.concat_cols(&[c, fc]);
        let z = self.w_z.forward(g, cz);
        let z = g.tanh(z);
        let keep = g.mul(gate, c);
        let one_minus = g.one_minus(gate);
        let upd = g.mul(one_minus, z);
        (g.add(keep, upd), attn, f, gate)
    }

    /// Full provider. `u` is the retrieved instance encoding, `c` the
    /// equation encoding. An empty graph bypasses graph reasoning.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        g: &mut Graph,
        u: Var,
        c: Var,
        h_d: Var,
        graph: &QuantityCellGraph,
        pos_ids: &[usize],
        ablation: &Ablation,
    ) -> Sketch {
        let (u_prime, q) = if ablation.dg {
            let (up, q) = self.domain_gate(g, u, h_d);
            (up, Some(q))
        } else {
            (u, None)
        };
        if !ablation.qcg || graph.is_empty() {
            return Sketch { u_tilde: u_prime, c_tilde: c, q, attn: None, f: None, g: None };
        }
        let s0 = self.init_nodes(g, graph, u, pos_ids);
        let s_l = self.gcn_forward(g, s0, &graph.adjacency);
        let u_tilde = self.graph2text_fuse(g, u_prime, s_l, &graph.alignment);
        if !ablation.mtc {
            return Sketch { u_tilde, c_tilde: c, q, attn: None, f: None, g: None };
        }
        let (c_tilde, attn, f, gate) = self.contextualize(g, c, s_l);
        Sketch { u_tilde, c_tilde, q, attn: Some(attn), f: Some(f), g: Some(gate) }
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.wq_gate.params();
        p.extend(self.wq_value.params());
        p.push(self.pos_embed);
        p.extend(&self.gcn);
        p.extend(self.gru.params());
        p.extend([self.wu, self.wg_attn, self.w_cbar]);
        for l in [&self.w_g, &self.w_f, &self.w_z] {
            p.extend(l.params());
        }
        p
    }
}

/// `D̂^{-1/2} (A + I) D̂^{-1/2}`.
pub fn normalized_adjacency(a: &Matrix) -> Matrix {
    let n = a.rows;
    let mut out = a.clone();
    for i in 0..n {
        out.set(i, i, out.get(i, i) + 1.0);
    }
    let inv: Vec<f64> = (0..n).map(|i| 1.0 / out.row(i).iter().sum::<f64>().sqrt()).collect();
    for i in 0..n {
        for j in 0..n {
            out.set(i, j, out.get(i, j) * inv[i] * inv[j]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalized_adjacency_cases() {
        assert_eq!(normalized_adjacency(&Matrix::zeros(1, 1)).data, vec![1.0]);
        let a = normalized_adjacency(&Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]));
        for v in a.data {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }
}
