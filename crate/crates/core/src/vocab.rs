use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::MwpInstance;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<unk>", "<s>", "</s>"];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl Vocabulary {
    /// Reserved entries followed by `tokens` in the given order.
    pub fn from_tokens<I: IntoIterator<Item = String>>(tokens: I) -> Self {
        let mut all: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        for t in tokens {
            if !all.contains(&t) {
                all.push(t);
            }
        }
        Self::from(all)
    }

    /// Tokens with count ≥ `min_freq`, ordered by count desc then lexicographically.
    pub fn from_counts(counts: &HashMap<String, usize>, min_freq: usize) -> Self {
        let mut kept: Vec<(&String, usize)> = counts
            .iter()
            .filter(|(t, &c)| c >= min_freq && !RESERVED.contains(&t.as_str()))
            .map(|(t, &c)| (t, c))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        Self::from_tokens(kept.into_iter().map(|(t, _)| t.clone()))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map(String::as_str).unwrap_or(RESERVED[UNK])
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).to_string()).collect()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Shared vocabulary over equation surfaces and text tokens.
pub fn build_vocab(corpus: &[MwpInstance], min_freq: usize) -> Vocabulary {
    let mut counts: HashMap<String, usize> = HashMap::new();
    for inst in corpus {
        for t in inst.equation.iter().map(|t| &t.surface).chain(&inst.text) {
            *counts.entry(t.clone()).or_default() += 1;
        }
    }
    Vocabulary::from_counts(&counts, min_freq)
}

/// POS tag inventory, reserved slots included so ids line up with [`Vocabulary`].
pub fn build_pos_vocab(corpus: &[MwpInstance]) -> Vocabulary {
    let mut counts: HashMap<String, usize> = HashMap::new();
    for inst in corpus {
        for p in &inst.pos {
            *counts.entry(p.clone()).or_default() += 1;
        }
    }
    Vocabulary::from_counts(&counts, 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(pairs: &[(&str, usize)]) -> HashMap<String, usize> {
        pairs.iter().map(|(t, c)| (t.to_string(), *c)).collect()
    }

    #[test]
    fn threshold_and_order() {
        let v = Vocabulary::from_counts(&counts(&[("a", 3), ("b", 1), ("c", 3), ("d", 2)]), 2);
        assert!(v.contains("a") && !v.contains("b"));
        assert_eq!(&v.tokens()[4..], ["a", "c", "d"]);
        assert_eq!(v.id("b"), UNK);
    }

    #[test]
    fn reserved_ids_fixed() {
        let v = Vocabulary::from_counts(&counts(&[("q", 1)]), 1);
        for (i, r) in RESERVED.iter().enumerate() {
            assert_eq!(v.id(r), i);
        }
        assert_eq!(v.len(), 5);
    }

    #[test]
    fn serde_roundtrip() {
        let v = Vocabulary::from_tokens(["x".to_string(), "y".to_string()]);
        let back: Vocabulary = serde_json::from_str(&serde_json::to_string(&v).unwrap()).unwrap();
        assert_eq!(back, v);
    }
}
