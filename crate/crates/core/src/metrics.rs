//! Corpus-level text generation metrics.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;
use std::process::Command;

use serde::{Deserialize, Serialize};

use crate::corpus::is_number;
use crate::error::{DiskError, Result};

pub const BLEU_EPS: f64 = 1e-9;
pub const ROUGE_BETA_SQ: f64 = 1.2;

fn ngrams<S: AsRef<str>>(toks: &[S], n: usize) -> Vec<Vec<&str>> {
    if toks.len() < n || n == 0 {
        return Vec::new();
    }
    toks.windows(n).map(|w| w.iter().map(AsRef::as_ref).collect()).collect()
}

fn counts<'a>(grams: &[Vec<&'a str>]) -> HashMap<Vec<&'a str>, usize> {
    let mut m = HashMap::new();
    for g in grams {
        *m.entry(g.clone()).or_insert(0) += 1;
    }
    m
}

fn check_pairs<S>(hyps: &[Vec<S>], refs: &[Vec<S>]) -> Result<()> {
    if hyps.len() != refs.len() {
        return Err(DiskError::Validation(format!("{} hypotheses for {} references", hyps.len(), refs.len())));
    }
    if hyps.is_empty() {
        return Err(DiskError::EmptyInput);
    }
    Ok(())
}

/// Corpus brevity penalty over summed lengths.
pub fn brevity_penalty<S>(hyps: &[Vec<S>], refs: &[Vec<S>]) -> f64 {
    let c: usize = hyps.iter().map(Vec::len).sum();
    let r: usize = refs.iter().map(Vec::len).sum();
    if c == 0 {
        0.0
    } else if c > r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    }
}

/// Smoothed corpus-level clipped `n`-gram precision.
pub fn ngram_precision<S: AsRef<str>>(hyps: &[Vec<S>], refs: &[Vec<S>], n: usize) -> f64 {
    let (mut matched, mut total) = (0usize, 0usize);
    for (h, r) in hyps.iter().zip(refs) {
        let hg = ngrams(h, n);
        let rc = counts(&ngrams(r, n));
        total += hg.len();
        for (gram, c) in counts(&hg) {
            matched += c.min(rc.get(&gram).copied().unwrap_or(0));
        }
    }
    (matched as f64 + BLEU_EPS) / (total as f64 + BLEU_EPS)
}

/// `BP · p_n` for a single order `n`.
pub fn bleu_n<S: AsRef<str>>(hyps: &[Vec<S>], refs: &[Vec<S>], n: usize) -> Result<f64> {
    check_pairs(hyps, refs)?;
    Ok(brevity_penalty(hyps, refs) * ngram_precision(hyps, refs, n))
}

/// Mean of BLEU-1 and BLEU-2.
pub fn bleu_avg12<S: AsRef<str>>(hyps: &[Vec<S>], refs: &[Vec<S>]) -> Result<f64> {
    Ok((bleu_n(hyps, refs, 1)? + bleu_n(hyps, refs, 2)?) / 2.0)
}

/// Longest common subsequence length, `O(|a|·|b|)` time and `O(|b|)` space.
pub fn lcs_len<S: AsRef<str>>(a: &[S], b: &[S]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x.as_ref() == y.as_ref() { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS F-measure `(1 + β²) P R / (R + β² P)` for one pair.
pub fn rouge_l_pair<S: AsRef<str>>(hyp: &[S], reference: &[S]) -> f64 {
    let l = lcs_len(hyp, reference);
    if l == 0 {
        return 0.0;
    }
    let p = l as f64 / hyp.len() as f64;
    let r = l as f64 / reference.len() as f64;
    (1.0 + ROUGE_BETA_SQ) * p * r / (r + ROUGE_BETA_SQ * p)
}

pub fn rouge_l<S: AsRef<str>>(hyps: &[Vec<S>], refs: &[Vec<S>]) -> Result<f64> {
    check_pairs(hyps, refs)?;
    Ok(hyps.iter().zip(refs).map(|(h, r)| rouge_l_pair(h, r)).sum::<f64>() / hyps.len() as f64)
}

/// Unique over total `n`-grams pooled across all hypotheses.
pub fn distinct_n<S: AsRef<str>>(hyps: &[Vec<S>], n: usize) -> f64 {
    let mut seen = HashSet::new();
    let mut total = 0usize;
    for h in hyps {
        for g in ngrams(h, n) {
            total += 1;
            seen.insert(g);
        }
    }
    if total == 0 {
        0.0
    } else {
        seen.len() as f64 / total as f64
    }
}

/// Mean share of each reference's distinct numbers that appear in its
/// hypothesis; references without numbers are skipped. `None` if none qualify.
pub fn number_recall<S: AsRef<str>>(hyps: &[Vec<S>], refs: &[Vec<S>]) -> Result<Option<f64>> {
    check_pairs(hyps, refs)?;
    let mut scores = Vec::new();
    for (h, r) in hyps.iter().zip(refs) {
        let nums: HashSet<&str> = r.iter().map(AsRef::as_ref).filter(|t| is_number(t)).collect();
        if nums.is_empty() {
            continue;
        }
        let hs: HashSet<&str> = h.iter().map(AsRef::as_ref).collect();
        scores.push(nums.iter().filter(|n| hs.contains(*n)).count() as f64 / nums.len() as f64);
    }
    Ok(if scores.is_empty() { None } else { Some(scores.iter().sum::<f64>() / scores.len() as f64) })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExampleScores {
    pub id: String,
    pub bleu1: f64,
    pub bleu2: f64,
    pub rouge_l: f64,
    pub number_recall: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub bleu: f64,
    pub bleu1: f64,
    pub bleu2: f64,
    pub rouge_l: f64,
    pub dist1: f64,
    pub dist2: f64,
    pub number_recall: Option<f64>,
    /// Scores from external scorer commands, by metric name.
    pub external: BTreeMap<String, f64>,
    pub examples: Vec<ExampleScores>,
    pub config: serde_json::Value,
}

impl EvalReport {
    pub fn compute(ids: &[String], hyps: &[Vec<String>], refs: &[Vec<String>]) -> Result<Self> {
        check_pairs(hyps, refs)?;
        let examples = ids
            .iter()
            .zip(hyps.iter().zip(refs))
            .map(|(id, (h, r))| {
                let (h1, r1) = (std::slice::from_ref(h), std::slice::from_ref(r));
                Ok(ExampleScores {
                    id: id.clone(),
                    bleu1: bleu_n(h1, r1, 1)?,
                    bleu2: bleu_n(h1, r1, 2)?,
                    rouge_l: rouge_l_pair(h, r),
                    number_recall: number_recall(h1, r1)?,
                })
            })
            .collect::<Result<_>>()?;
        let (bleu1, bleu2) = (bleu_n(hyps, refs, 1)?, bleu_n(hyps, refs, 2)?);
        Ok(Self {
            n: hyps.len(),
            bleu: (bleu1 + bleu2) / 2.0,
            bleu1,
            bleu2,
            rouge_l: rouge_l(hyps, refs)?,
            dist1: distinct_n(hyps, 1),
            dist2: distinct_n(hyps, 2),
            number_recall: number_recall(hyps, refs)?,
            external: BTreeMap::new(),
            examples,
            config: serde_json::Value::Null,
        })
    }

    pub const TSV_HEADER: &'static str = "BLEU\tROUGE-L\tDist1\tDist2\tNR";

    /// One TSV row, scores ×100.
    pub fn tsv_row(&self) -> String {
        let nr = self.number_recall.map(|v| format!("{:.2}", 100.0 * v)).unwrap_or_else(|| "-".into());
        format!(
            "{:.2}\t{:.2}\t{:.2}\t{:.2}\t{nr}",
            100.0 * self.bleu,
            100.0 * self.rouge_l,
            100.0 * self.dist1,
            100.0 * self.dist2
        )
    }
}

/// Runs `command hyp_file ref_file` and parses the last stdout line as a score.
pub fn external_metric(name: &str, command: &str, hyp_file: &Path, ref_file: &Path) -> Result<f64> {
    let err = |msg: String| DiskError::ExternalMetric { name: name.into(), msg };
    let mut parts = command.split_whitespace();
    let prog = parts.next().ok_or_else(|| err("empty command".into()))?;
    let out = Command::new(prog).args(parts).arg(hyp_file).arg(ref_file).output().map_err(|e| err(e.to_string()))?;
    if !out.status.success() {
        return Err(err(format!("exited with {}: {}", out.status, String::from_utf8_lossy(&out.stderr).trim())));
    }
    let stdout = String::from_utf8_lossy(&out.stdout);
    let last = stdout.lines().rev().find(|l| !l.trim().is_empty()).ok_or_else(|| err("no output".into()))?;
    last.trim().parse::<f64>().map_err(|e| err(format!("cannot parse {last:?}: {e}")))
}
