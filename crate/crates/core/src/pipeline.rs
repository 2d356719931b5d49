//! End-to-end helpers shared by the command line and the experiments:
//! generation records, scoring them, and the ablation sweep.

use serde::{Deserialize, Serialize};

use crate::config::{Ablation, TrainConfig};
use crate::corpus::MwpInstance;
use crate::error::{DiskError, Result};
use crate::generator::Decoding;
use crate::metrics::EvalReport;
use crate::trainer::{Split, TrainedModel, Trainer};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub k: usize,
    pub text: String,
    pub score: f64,
}

/// One line of `generate` output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub id: String,
    pub selected: String,
    pub domain: usize,
    pub candidates: Vec<CandidateRecord>,
}

pub fn generate_record(model: &TrainedModel, inst: &MwpInstance, decoding: Decoding) -> Result<GenerationRecord> {
    let res = model.generate(inst, decoding)?;
    let candidates = res
        .candidates
        .iter()
        .map(|c| CandidateRecord { k: c.k, text: model.detokenize(&c.hyp.tokens).join(" "), score: c.score })
        .collect::<Vec<_>>();
    Ok(GenerationRecord {
        id: inst.id.clone(),
        selected: candidates[res.selected].text.clone(),
        domain: res.best().k,
        candidates,
    })
}

/// Scores generated texts against the instances with matching ids.
pub fn score_records(records: &[GenerationRecord], refs: &[MwpInstance]) -> Result<EvalReport> {
    let by_id: std::collections::HashMap<&str, &MwpInstance> = refs.iter().map(|r| (r.id.as_str(), r)).collect();
    let mut ids = Vec::new();
    let mut hyps = Vec::new();
    let mut gold = Vec::new();
    for r in records {
        let inst = by_id.get(r.id.as_str()).ok_or_else(|| DiskError::Validation(format!("no reference for id {}", r.id)))?;
        ids.push(r.id.clone());
        hyps.push(r.selected.split_whitespace().map(String::from).collect());
        gold.push(inst.text.clone());
    }
    EvalReport::compute(&ids, &hyps, &gold)
}

/// Trains one model on `split.train` (dev for checkpoint selection) and
/// evaluates the best-dev parameters on the first `limit` test instances.
pub fn train_and_evaluate(
    cfg: &TrainConfig,
    split: &Split,
    limit: usize,
    decoding: Decoding,
    mut on_epoch: impl FnMut(&crate::trainer::EpochMetrics),
) -> Result<(EvalReport, Vec<GenerationRecord>)> {
    let mut trainer = Trainer::new(cfg.clone(), &split.train, &split.dev)?;
    let mut best: Option<(f64, crate::params::ParamStore)> = None;
    while trainer.epoch < trainer.config.epochs {
        let m = trainer.train_epoch()?;
        let dev = m.dev_l_total.unwrap_or(m.l_total);
        if best.as_ref().is_none_or(|(b, _)| dev < *b) {
            best = Some((dev, trainer.store.clone()));
        }
        on_epoch(&m);
    }
    if let Some((_, store)) = best {
        trainer.store = store;
    }
    let model = trainer.trained()?;
    let test: Vec<&MwpInstance> = split.test.iter().take(limit).collect();
    let records = test.iter().map(|inst| generate_record(&model, inst, decoding)).collect::<Result<Vec<_>>>()?;
    let mut report = score_records(&records, &split.test)?;
    report.config = serde_json::json!({ "ablation": cfg.ablation, "k": cfg.model.k, "label": cfg.ablation.label() });
    Ok((report, records))
}

/// The full model and the four single-component ablations, in table order.
pub fn ablation_sweep(
    base: &TrainConfig,
    split: &Split,
    limit: usize,
    decoding: Decoding,
    mut progress: impl FnMut(&str, &crate::trainer::EpochMetrics),
) -> Result<Vec<(String, EvalReport)>> {
    Ablation::table()
        .into_iter()
        .map(|(label, ablation)| {
            let cfg = TrainConfig { ablation, ..base.clone() };
            let (report, _) = train_and_evaluate(&cfg, split, limit, decoding, |m| progress(label, m))?;
            Ok((label.to_string(), report))
        })
        .collect()
}

pub fn ablation_tsv(rows: &[(String, EvalReport)]) -> String {
    let mut out = format!("Model\t{}\n", EvalReport::TSV_HEADER);
    for (label, r) in rows {
        out.push_str(&format!("{label}\t{}\n", r.tsv_row()));
    }
    out
}

/// Share of `insts` whose top retrieved pool instance comes from the same
/// synthetic template, and the expected share under uniform retrieval.
pub fn template_agreement(model: &TrainedModel, insts: &[MwpInstance]) -> Result<(f64, f64)> {
    use crate::synth::template_of;
    if insts.is_empty() {
        return Err(DiskError::EmptyInput);
    }
    let (mut hit, mut base) = (0.0, 0.0);
    for inst in insts {
        let t = template_of(&inst.id);
        let top = model.retrieve_top1(inst)?.ok_or_else(|| DiskError::Config("retrieval is ablated".into()))?;
        if template_of(&model.pool.instances[top].id) == t {
            hit += 1.0;
        }
        let others: Vec<&MwpInstance> = model.pool.instances.iter().filter(|p| p.id != inst.id).collect();
        base += others.iter().filter(|p| template_of(&p.id) == t).count() as f64 / others.len() as f64;
    }
    let n = insts.len() as f64;
    Ok((hit / n, base / n))
}
