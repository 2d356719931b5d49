//! Transformer building blocks over [`Graph`].
//!
//! Layers only hold [`ParamId`] handles; values live in the [`ParamStore`].
//! Every layer is constructed through [`Init`], which registers parameters
//! under a dotted name prefix.

use rand_chacha::ChaCha8Rng;

use crate::autograd::{AttnMask, Graph, Var};
use crate::params::{normal, xavier, ParamId, ParamStore};
use crate::tensor::Matrix;

pub const LN_EPS: f64 = 1e-5;

/// Parameter registration context.
pub struct Init<'a> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut ChaCha8Rng,
}

impl Init<'_> {
    pub fn weight(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        let m = xavier(rows, cols, self.rng);
        self.store.add(name, m)
    }

    pub fn embedding(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        let m = normal(rows, cols, 0.02, self.rng);
        self.store.add(name, m)
    }

    pub fn zeros(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        self.store.add(name, Matrix::zeros(rows, cols))
    }

    pub fn ones(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        self.store.add(name, Matrix::filled(rows, cols, 1.0))
    }
}

/// `y = x W (+ b)` with `W` stored as `in × out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new(init: &mut Init, name: &str, input: usize, output: usize, bias: bool) -> Self {
        let w = init.weight(&format!("{name}.W"), input, output);
        let b = bias.then(|| init.zeros(&format!("{name}.b"), 1, output));
        Self { w, b }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let w = g.param(self.w);
        let y = g.matmul(x, w);
        match self.b {
            Some(b) => {
                let b = g.param(b);
                g.add_row(y, b)
            }
            None => y,
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        std::iter::once(self.w).chain(self.b).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(init: &mut Init, name: &str, d: usize) -> Self {
        Self { gamma: init.ones(&format!("{name}.gamma"), 1, d), beta: init.zeros(&format!("{name}.beta"), 1, d) }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let (ga, be) = (g.param(self.gamma), g.param(self.beta));
        g.layer_norm(x, ga, be, LN_EPS)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

/// Projected keys and values of an attention memory.
#[derive(Clone, Copy, Debug)]
pub struct KeyValue {
    pub k: Var,
    pub v: Var,
}

impl MultiHeadAttention {
    pub fn new(init: &mut Init, name: &str, d: usize, heads: usize) -> Self {
        Self {
            q: Linear::new(init, &format!("{name}.q"), d, d, true),
            k: Linear::new(init, &format!("{name}.k"), d, d, true),
            v: Linear::new(init, &format!("{name}.v"), d, d, true),
            o: Linear::new(init, &format!("{name}.o"), d, d, true),
            heads,
        }
    }

    pub fn project_memory(&self, g: &mut Graph, memory: Var) -> KeyValue {
        KeyValue { k: self.k.forward(g, memory), v: self.v.forward(g, memory) }
    }

    pub fn attend(&self, g: &mut Graph, x: Var, kv: KeyValue, mask: &AttnMask) -> Var {
        self.attend_with_probs(g, x, kv, mask).0
    }

    /// Like [`attend`](Self::attend), also returning the attention node whose
    /// probabilities can be read with [`Graph::attention_probs`].
    pub fn attend_with_probs(&self, g: &mut Graph, x: Var, kv: KeyValue, mask: &AttnMask) -> (Var, Var) {
        let q = self.q.forward(g, x);
        let a = g.attention(q, kv.k, kv.v, self.heads, mask);
        (self.o.forward(g, a), a)
    }

    pub fn forward(&self, g: &mut Graph, x: Var, memory: Var, mask: &AttnMask) -> Var {
        let kv = self.project_memory(g, memory);
        self.attend(g, x, kv, mask)
    }

    pub fn params(&self) -> Vec<ParamId> {
        [&self.q, &self.k, &self.v, &self.o].iter().flat_map(|l| l.params()).collect()
    }
}

/// Position-wise `Linear → ReLU → Linear`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeedForward {
    pub l1: Linear,
    pub l2: Linear,
}

impl FeedForward {
    pub fn new(init: &mut Init, name: &str, d: usize, hidden: usize) -> Self {
        Self {
            l1: Linear::new(init, &format!("{name}.ff1"), d, hidden, true),
            l2: Linear::new(init, &format!("{name}.ff2"), hidden, d, true),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let h = self.l1.forward(g, x);
        let h = g.relu(h);
        self.l2.forward(g, h)
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.l1.params().into_iter().chain(self.l2.params()).collect()
    }
}

/// Post-norm transformer encoder block.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayer {
    pub attn: MultiHeadAttention,
    pub ln1: LayerNorm,
    pub ff: FeedForward,
    pub ln2: LayerNorm,
}

impl EncoderLayer {
    pub fn new(init: &mut Init, name: &str, d: usize, heads: usize, ffn: usize) -> Self {
        Self {
            attn: MultiHeadAttention::new(init, &format!("{name}.attn"), d, heads),
            ln1: LayerNorm::new(init, &format!("{name}.ln1"), d),
            ff: FeedForward::new(init, name, d, ffn),
            ln2: LayerNorm::new(init, &format!("{name}.ln2"), d),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var, mask: &AttnMask, dropout: f64) -> Var {
        let a = self.attn.forward(g, x, x, mask);
        let a = g.dropout(a, dropout);
        let x = g.add(x, a);
        let x = self.ln1.forward(g, x);
        let f = self.ff.forward(g, x);
        let f = g.dropout(f, dropout);
        let x = g.add(x, f);
        self.ln2.forward(g, x)
    }
}

/// Token embedding + sinusoidal positions + a stack of encoder blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformerEncoder {
    pub layers: Vec<EncoderLayer>,
}

impl TransformerEncoder {
    pub fn new(init: &mut Init, name: &str, d: usize, layers: usize, heads: usize, ffn: usize) -> Self {
        Self { layers: (0..layers).map(|l| EncoderLayer::new(init, &format!("{name}.layer{l}"), d, heads, ffn)).collect() }
    }

    /// Encodes already-embedded inputs (`T × d`).
    pub fn forward(&self, g: &mut Graph, x: Var, mask: &AttnMask, dropout: f64) -> Var {
        let mut h = g.dropout(x, dropout);
        for layer in &self.layers {
            h = layer.forward(g, h, mask, dropout);
        }
        h
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.layers
            .iter()
            .flat_map(|l| {
                let mut p = l.attn.params();
                p.extend([l.ln1.gamma, l.ln1.beta, l.ln2.gamma, l.ln2.beta]);
                p.extend(l.ff.params());
                p
            })
            .collect()
    }
}

/// Two-layer perceptron `d → hidden → out` with ReLU in between.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub l1: Linear,
    pub l2: Linear,
}

impl Mlp {
    pub fn new(init: &mut Init, name: &str, input: usize, hidden: usize, output: usize) -> Self {
        Self {
            l1: Linear::new(init, &format!("{name}.l1"), input, hidden, true),
            l2: Linear::new(init, &format!("{name}.l2"), hidden, output, true),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let h = self.l1.forward(g, x);
        let h = g.relu(h);
        self.l2.forward(g, h)
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.l1.params();
        p.extend(self.l2.params());
        p
    }
}

/// Single GRU step, PyTorch gate convention.
///
/// `z = σ(x W_z + h U_z + b_z)`, `r = σ(x W_r + h U_r + b_r)`,
/// `n = tanh(x W_n + b_n + r ⊙ (h U_n + b_hn))`, `h' = (1 - z) ⊙ n + z ⊙ h`.
#[derive(Clone, Debug, PartialEq)]
pub struct GruCell {
    pub wz: Linear,
    pub uz: Linear,
    pub wr: Linear,
    pub ur: Linear,
    pub wn: Linear,
    pub un: Linear,
}

impl GruCell {
    pub fn new(init: &mut Init, name: &str, input: usize, hidden: usize) -> Self {
        Self {
            wz: Linear::new(init, &format!("{name}.W_z"), input, hidden, true),
            uz: Linear::new(init, &format!("{name}.U_z"), hidden, hidden, false),
            wr: Linear::new(init, &format!("{name}.W_r"), input, hidden, true),
            ur: Linear::new(init, &format!("{name}.U_r"), hidden, hidden, false),
            wn: Linear::new(init, &format!("{name}.W_n"), input, hidden, true),
            un: Linear::new(init, &format!("{name}.U_n"), hidden, hidden, true),
        }
    }

    /// Applies one step row-wise: `x` and `h` are `T × input` / `T × hidden`.
    pub fn forward(&self, g: &mut Graph, x: Var, h: Var) -> Var {
        let xz = self.wz.forward(g, x);
        let hz = self.uz.forward(g, h);
        let z = g.add(xz, hz);
        let z = g.sigmoid(z);
        let xr = self.wr.forward(g, x);
        let hr = self.ur.forward(g, h);
        let r = g.add(xr, hr);
        let r = g.sigmoid(r);
        let xn = self.wn.forward(g, x);
        let hn = self.un.forward(g, h);
        let rhn = g.mul(r, hn);
        let n = g.add(xn, rhn);
        let n = g.tanh(n);
        let one_minus_z = g.one_minus(z);
        let a = g.mul(one_minus_z, n);
        let b = g.mul(z, h);
        g.add(a, b)
    }

    pub fn params(&self) -> Vec<ParamId> {
        [&self.wz, &self.uz, &self.wr, &self.ur, &self.wn, &self.un].iter().flat_map(|l| l.params()).collect()
    }
}

/// Sinusoidal position table, `len × d`.
pub fn positional_encoding(len: usize, d: usize) -> Matrix {
    let mut m = Matrix::zeros(len, d);
    for pos in 0..len {
        for i in 0..d {
            let k = (i / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * k / d as f64);
            m.set(pos, i, if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    m
}

/// `rows(table)[ids] · √d + positions`, the standard transformer input.
pub fn embed_with_positions(g: &mut Graph, table: ParamId, ids: &[usize]) -> Var {
    let t = g.param(table);
    let e = g.gather_rows(t, ids);
    add_positions(g, e, 0)
}

/// Scales embedded rows by `√d` and adds positions starting at `offset`.
pub fn add_positions(g: &mut Graph, x: Var, offset: usize) -> Var {
    let (rows, d) = g.shape(x);
    let scaled = g.scale(x, (d as f64).sqrt());
    let pe = positional_encoding(offset + rows, d).slice_rows(offset, rows);
    let pe = g.constant(pe);
    g.add(scaled, pe)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn zero_weight_encoder_reduces_to_layer_norm() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let enc = {
            let mut init = Init { store: &mut store, rng: &mut rng };
            TransformerEncoder::new(&mut init, "enc", 4, 2, 2, 8)
        };
        for id in enc.params() {
            let name = store.name(id).to_string();
            if !name.ends_with("gamma") {
                let m = store.get_mut(id);
                m.data.iter_mut().for_each(|x| *x = 0.0);
            }
        }
        let x = Matrix::from_rows(&[vec![1.0, 2.0, 3.0, 5.0], vec![-1.0, 0.5, 0.0, 2.0]]);
        let mut g = Graph::new(&store);
        let xv = g.constant(x.clone());
        let y = enc.forward(&mut g, xv, &AttnMask::None, 0.0);
        let y = g.value(y);
        for r in 0..2 {
            let row = x.row(r);
            let mean = row.iter().sum::<f64>() / 4.0;
            let sd = (row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0).sqrt();
            for c in 0..4 {
                assert!((y.get(r, c) - (row[c] - mean) / sd).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn positional_encoding_first_row() {
        let pe = positional_encoding(3, 4);
        assert_eq!(pe.row(0), &[0.0, 1.0, 0.0, 1.0]);
        assert!((pe.get(1, 0) - 1f64.sin()).abs() < 1e-15);
    }
}
