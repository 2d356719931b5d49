use serde::{Deserialize, Serialize};

use crate::error::{DiskError, Result};

/// Architecture sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn: usize,
    /// Number of latent domains.
    pub k: usize,
    /// Fixed text length the domain extractor is sized for.
    pub l_max: usize,
    pub d_pos: usize,
    pub gcn_layers: usize,
    /// Subtree size threshold for QCG extraction.
    pub f: usize,
    pub max_decode: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { d: 256, layers: 2, heads: 8, ffn: 512, k: 25, l_max: 48, d_pos: 16, gcn_layers: 2, f: 5, max_decode: 48 }
    }
}

impl ModelConfig {
    /// A small configuration for tests and examples.
    pub fn tiny(d: usize) -> Self {
        Self { d, layers: 1, heads: 2, ffn: 2 * d, k: 4, ..Self::default() }
    }

    pub fn d_g(&self) -> usize {
        self.d + self.d_pos
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(DiskError::Config(m.into()));
        if self.d == 0 || self.heads == 0 || !self.d.is_multiple_of(self.heads) {
            return bad("d must be a positive multiple of heads");
        }
        if self.layers == 0 || self.ffn == 0 || self.k == 0 || self.l_max == 0 || self.f == 0 || self.max_decode == 0 {
            return bad("layers, ffn, k, l_max, f and max_decode must be positive");
        }
        Ok(())
    }
}

/// Which components are active. All `true` is the full model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    /// Domain gate on the retrieved instance.
    pub dg: bool,
    /// Graph reasoning over the quantity cell graph.
    pub qcg: bool,
    /// Math token contextualization of the equation encoding.
    pub mtc: bool,
    /// Sketch attention (and with it retrieval).
    pub cs: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self::FULL
    }
}

impl Ablation {
    pub const FULL: Ablation = Ablation { dg: true, qcg: true, mtc: true, cs: true };

    /// The full model followed by the four single-component ablations.
    pub fn table() -> [(&'static str, Ablation); 5] {
        [
            ("DISK", Self::FULL),
            ("w/o DG", Ablation { dg: false, ..Self::FULL }),
            ("w/o QCG", Ablation { qcg: false, ..Self::FULL }),
            ("w/o MTC", Ablation { mtc: false, ..Self::FULL }),
            ("w/o CS", Ablation { cs: false, ..Self::FULL }),
        ]
    }

    pub fn label(&self) -> String {
        let off: Vec<&str> = [(self.dg, "DG"), (self.qcg, "QCG"), (self.mtc, "MTC"), (self.cs, "CS")]
            .iter()
            .filter(|(on, _)| !on)
            .map(|(_, n)| *n)
            .collect();
        if off.is_empty() {
            "DISK".into()
        } else {
            format!("w/o {}", off.join("+"))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub ablation: Ablation,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub dropout: f64,
    pub clip_norm: f64,
    pub pool_size: usize,
    pub min_freq: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            ablation: Ablation::FULL,
            batch_size: 32,
            epochs: 40,
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            dropout: 0.2,
            clip_norm: 5.0,
            pool_size: 500,
            min_freq: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(DiskError::Config("batch_size and epochs must be positive".into()));
        }
        if self.pool_size < 2 {
            return Err(DiskError::Config("pool_size must be at least 2".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) || self.lr <= 0.0 {
            return Err(DiskError::Config("dropout must be in [0, 1) and lr positive".into()));
        }
        Ok(())
    }
}
