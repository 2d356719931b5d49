//! Central finite-difference verification of the analytic gradients of
//! `L_D`, `L_M` and `L_G` on a toy problem.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::autograd::Graph;
use crate::config::{Ablation, ModelConfig};
use crate::corpus::{tokenize_equation, MwpInstance};
use crate::error::Result;
use crate::matcher::{CandidatePool, PoolFeatures};
use crate::model::{Disk, EncodedExample};
use crate::params::{Grads, ParamStore};
use crate::syntax::DepEdge;
use crate::trainer::gold_label;
use crate::vocab::{build_pos_vocab, build_vocab};

pub const TERMS: [&str; 3] = ["L_D", "L_M", "L_G"];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckConfig {
    pub seed: u64,
    pub eps: f64,
    /// Entries whose analytic and numeric gradients are both below this are
    /// reported as skipped (flat regions).
    pub skip_below: f64,
    pub ablation: Ablation,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { seed: 7, eps: 1e-4, skip_below: 1e-7, ablation: Ablation::FULL }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParamCheck {
    pub term: &'static str,
    pub param: String,
    pub block: String,
    pub max_rel_err: f64,
    pub checked: usize,
    pub skipped: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub config: GradCheckConfig,
    pub rows: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.rows.iter().map(|r| r.max_rel_err).fold(0.0, f64::max)
    }

    /// Worst relative error per `(term, block)`.
    pub fn by_block(&self) -> BTreeMap<(String, String), f64> {
        let mut out = BTreeMap::new();
        for r in &self.rows {
            let e = out.entry((r.term.to_string(), r.block.clone())).or_insert(0.0f64);
            *e = e.max(r.max_rel_err);
        }
        out
    }

    pub fn checked(&self) -> usize {
        self.rows.iter().map(|r| r.checked).sum()
    }

    pub fn skipped(&self) -> usize {
        self.rows.iter().map(|r| r.skipped).sum()
    }
}

/// The toy setting: `d = 4`, `K = 2`, `|P| = 3`, `L = 5`, `N = 4`, `|G| = 3`.
#[derive(Clone, Debug)]
pub struct ToyProblem {
    pub model: Disk,
    pub store: ParamStore,
    pub pool: CandidatePool,
    pub example: EncodedExample,
    pub gold: usize,
    pub ablation: Ablation,
}

fn toy_instance(id: &str, subj: &str, verb: &str, num: &str, obj: &str, eq: &str) -> MwpInstance {
    MwpInstance {
        id: id.into(),
        equation: tokenize_equation(eq).expect("toy equation"),
        text: vec![subj.into(), verb.into(), num.into(), obj.into(), ".".into()],
        dep_edges: vec![
            DepEdge(1, 0, "nsubj".into()),
            DepEdge(-1, 1, "root".into()),
            DepEdge(3, 2, "nummod".into()),
            DepEdge(1, 3, "obj".into()),
            DepEdge(1, 4, "punct".into()),
        ],
        constituency: format!("(S (NP (N {subj})) (VP (V {verb}) (NP (NUM {num}) (N {obj}))) (PUNCT .))"),
        pos: ["N", "V", "NUM", "N", "PUNCT"].map(String::from).to_vec(),
    }
}

pub fn toy_config() -> ModelConfig {
    ModelConfig { d: 4, layers: 1, heads: 2, ffn: 8, k: 2, l_max: 8, d_pos: 2, gcn_layers: 2, f: 3, max_decode: 8 }
}

pub fn toy_problem(seed: u64, ablation: Ablation) -> Result<ToyProblem> {
    let target = toy_instance("toy.0", "tom", "bought", "3", "apples", "equ x = 3");
    let pool = vec![
        toy_instance("toy.1", "ann", "sold", "4", "pens", "equ y = 4"),
        toy_instance("toy.2", "bob", "bought", "3", "pies", "equ x = 3"),
        toy_instance("toy.3", "sue", "had", "5", "hats", "equ z = 5"),
    ];
    let mut all = pool.clone();
    all.push(target.clone());
    let vocab = build_vocab(&all, 1);
    let pos_vocab = build_pos_vocab(&all);
    let cfg = toy_config();
    let (model, store) = Disk::new(&cfg, vocab.len(), pos_vocab.len(), seed)?;
    let mut pool = CandidatePool::new(pool, &vocab, &pos_vocab, cfg.f)?;
    pool.refresh(&store, &model.matcher, model.tokens);
    let gold = gold_label(&pool, &target)?;
    Ok(ToyProblem { example: EncodedExample::new(&target, &vocab), model, store, pool, gold, ablation })
}

impl ToyProblem {
    /// `[L_D, L_M, L_G]` at `store`, with the pool encodings held fixed.
    pub fn terms(&self, store: &ParamStore) -> Result<[f64; 3]> {
        let mut g = Graph::new(store);
        let pf = self.model.pool_features(&mut g, &self.pool)?;
        let p = self.model.example_loss(&mut g, &self.example, &self.pool, Some(&pf), self.gold, &self.ablation, 0.0)?;
        Ok([g.scalar(p.l_d), p.l_m.map_or(0.0, |v| g.scalar(v)), g.scalar(p.l_g)])
    }

    /// Analytic gradients per term, routed through pool-feature leaves the
    /// same way the trainer does.
    pub fn analytic(&self) -> Result<[Grads; 3]> {
        let feats = self.model.pool_feature_values(&self.store, &self.pool)?;
        let mut g = Graph::new(&self.store);
        let pf = PoolFeatures { m2: g.input(feats.m2.clone()), hp: g.input(feats.hp.clone()) };
        let p = self.model.example_loss(&mut g, &self.example, &self.pool, Some(&pf), self.gold, &self.ablation, 0.0)?;
        let mut out = Vec::with_capacity(3);
        for term in [Some(p.l_d), p.l_m, Some(p.l_g)] {
            let Some(term) = term else {
                out.push(Grads::new(self.store.len()));
                continue;
            };
            let bw = g.backward(term);
            let mut grads = bw.params.clone();
            if let (Some(dm2), Some(dhp)) = (bw.input_grad(pf.m2), bw.input_grad(pf.hp)) {
                grads.merge(&self.model.pool_feature_backward(&self.store, &self.pool, dm2, dhp)?);
            }
            out.push(grads);
        }
        Ok([out.remove(0), out.remove(0), out.remove(0)])
    }
}

/// Relative error `|a − n| / max(|a|, |n|)`, or `None` when both are below `floor`.
pub fn relative_error(a: f64, n: f64, floor: f64) -> Option<f64> {
    let scale = a.abs().max(n.abs());
    if scale < floor {
        None
    } else {
        Some((a - n).abs() / scale)
    }
}

/// Checks every scalar parameter of the toy model against central differences.
pub fn grad_check(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let toy = toy_problem(cfg.seed, cfg.ablation)?;
    let analytic = toy.analytic()?;
    let mut store = toy.store.clone();
    let mut rows = Vec::new();
    for id in toy.store.ids().collect::<Vec<_>>() {
        let n = toy.store.get(id).data.len();
        let mut stats = [(0.0f64, 0usize, 0usize); 3];
        for i in 0..n {
            let orig = store.get(id).data[i];
            store.get_mut(id).data[i] = orig + cfg.eps;
            let plus = toy.terms(&store)?;
            store.get_mut(id).data[i] = orig - cfg.eps;
            let minus = toy.terms(&store)?;
            store.get_mut(id).data[i] = orig;
            for t in 0..3 {
                let num = (plus[t] - minus[t]) / (2.0 * cfg.eps);
                let ana = analytic[t].get(id).map_or(0.0, |m| m.data[i]);
                match relative_error(ana, num, cfg.skip_below) {
                    Some(e) => {
                        stats[t].0 = stats[t].0.max(e);
                        stats[t].1 += 1;
                    }
                    None => stats[t].2 += 1,
                }
            }
        }
        for (t, (max_rel_err, checked, skipped)) in stats.into_iter().enumerate() {
            rows.push(ParamCheck {
                term: TERMS[t],
                param: toy.store.name(id).to_string(),
                block: toy.store.block_of(id).to_string(),
                max_rel_err,
                checked,
                skipped,
            });
        }
    }
    Ok(GradCheckReport { config: cfg.clone(), rows })
}
