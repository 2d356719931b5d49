//! `disk synth|train|generate|evaluate|ablate|gradcheck`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::TrainConfig;
use crate::corpus::{load_corpus, save_corpus, MwpInstance};
use crate::error::{DiskError, Result};
use crate::generator::Decoding;
use crate::gradcheck::{grad_check, GradCheckConfig};
use crate::metrics::{external_metric, EvalReport};
use crate::pipeline::{ablation_sweep, ablation_tsv, generate_record, GenerationRecord};
use crate::synth::{generate_synthetic_corpus, SynthConfig};
use crate::trainer::{split_corpus, Checkpoint, TrainedModel, Trainer};
use crate::vocab::build_vocab;

#[derive(Debug, Parser, Serialize)]
#[command(name = "disk", version, about = "Math word problem generation from equations")]
pub struct Cli {
    /// Base directory for every relative path.
    #[arg(long, global = true, default_value = ".")]
    pub workdir: PathBuf,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    pub force: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
pub enum Command {
    /// Write a synthetic corpus and print its statistics.
    Synth {
        #[arg(long, default_value = "corpus.jsonl")]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        n_examples: usize,
        #[arg(long, default_value_t = 16)]
        n_templates: usize,
        #[arg(long, env = "DISK_SEED", default_value_t = 0)]
        seed: u64,
    },
    /// Train on the 80% split; writes checkpoints, metrics and the splits.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "run")]
        out: PathBuf,
        /// Continue from `<out>/last.json`.
        #[arg(long)]
        resume: bool,
        #[command(flatten)]
        overrides: TrainOverrides,
    },
    /// Decode every instance of `--input` into JSONL.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "generated.jsonl")]
        out: PathBuf,
        /// Beam width; greedy when absent.
        #[arg(long)]
        beam: Option<usize>,
        #[arg(long)]
        limit: Option<usize>,
        /// Also write gate and node-attention details for the selected domain.
        #[arg(long)]
        dump_diagnostics: Option<PathBuf>,
    },
    /// Score generations (or any corpus file) against reference instances.
    Evaluate {
        #[arg(long)]
        hyps: PathBuf,
        #[arg(long)]
        refs: PathBuf,
        #[arg(long, default_value = "report.json")]
        out: PathBuf,
        /// Extra metric as `NAME=COMMAND`; run as `COMMAND hyp_file ref_file`.
        #[arg(long = "external", value_parser = parse_external)]
        external: Vec<(String, String)>,
    },
    /// Train and evaluate the full model and the four ablations.
    Ablate {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "ablation.tsv")]
        out: PathBuf,
        /// Test instances to decode per configuration.
        #[arg(long, default_value_t = 200)]
        limit: usize,
        #[command(flatten)]
        overrides: TrainOverrides,
    },
    /// Finite-difference gradient check on the toy model.
    Gradcheck {
        #[arg(long, env = "DISK_SEED", default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value = "gradcheck.json")]
        out: PathBuf,
    },
}

fn parse_external(s: &str) -> std::result::Result<(String, String), String> {
    s.split_once('=').map(|(a, b)| (a.to_string(), b.to_string())).ok_or_else(|| "expected NAME=COMMAND".to_string())
}

/// Training options layered over defaults, then `--config`.
#[derive(Debug, Default, Args, Serialize)]
pub struct TrainOverrides {
    /// JSON `TrainConfig`; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, env = "DISK_SEED")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub pool_size: Option<usize>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub ffn: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub f: Option<usize>,
    #[arg(long)]
    pub no_dg: bool,
    #[arg(long)]
    pub no_qcg: bool,
    #[arg(long)]
    pub no_mtc: bool,
    #[arg(long)]
    pub no_cs: bool,
}

impl TrainOverrides {
    pub fn resolve(&self, workdir: &Path) -> Result<TrainConfig> {
        let mut c = match &self.config {
            Some(p) => serde_json::from_str(&fs::read_to_string(workdir.join(p))?)?,
            None => TrainConfig::default(),
        };
        macro_rules! set {
            ($($field:ident => $($target:ident).+),*) => {
                $(if let Some(v) = self.$field { c.$($target).+ = v; })*
            };
        }
        set!(seed => seed, batch_size => batch_size, epochs => epochs, lr => lr, dropout => dropout,
             pool_size => pool_size, d => model.d, layers => model.layers, heads => model.heads,
             ffn => model.ffn, k => model.k, f => model.f);
        c.ablation.dg &= !self.no_dg;
        c.ablation.qcg &= !self.no_qcg;
        c.ablation.mtc &= !self.no_mtc;
        c.ablation.cs &= !self.no_cs;
        c.validate()?;
        Ok(c)
    }
}

/// Fails with `RefuseOverwrite` unless `force` or `path` is absent.
pub fn guard_output(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(DiskError::RefuseOverwrite(path.to_path_buf()));
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

/// `<output>.config.json` holding the invocation and the resolved settings.
pub fn snapshot_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".config.json");
    output.with_file_name(name)
}

fn write_snapshot(output: &Path, cli: &Cli, resolved: serde_json::Value) -> Result<()> {
    let snap = serde_json::json!({ "invocation": cli, "resolved": resolved });
    fs::write(snapshot_path(output), serde_json::to_string_pretty(&snap)?)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorpusStats {
    pub size: usize,
    pub avg_equation_len: f64,
    pub avg_problem_len: f64,
    pub tokens: usize,
}

pub fn corpus_stats(corpus: &[MwpInstance]) -> CorpusStats {
    let n = corpus.len().max(1) as f64;
    CorpusStats {
        size: corpus.len(),
        avg_equation_len: corpus.iter().map(|i| i.equation.len()).sum::<usize>() as f64 / n,
        avg_problem_len: corpus.iter().map(|i| i.text.len()).sum::<usize>() as f64 / n,
        tokens: build_vocab(corpus, 1).len() - crate::vocab::RESERVED.len(),
    }
}

pub fn stats_table(s: &CorpusStats) -> String {
    format!(
        "{:>6} {:>12} {:>12} {:>7}\n{:>6} {:>12.2} {:>12.2} {:>7}\n",
        "size", "avg eq len", "avg text len", "tokens", s.size, s.avg_equation_len, s.avg_problem_len, s.tokens
    )
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.is_file() {
        return Err(DiskError::Usage(format!("checkpoint {} does not exist", path.display())));
    }
    Checkpoint::load(path)
}

/// Reads hypotheses from `generate` output (`selected`) or a corpus file (`text`).
pub fn read_hypotheses(path: &Path) -> Result<Vec<(String, Vec<String>)>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse = |msg: &str| DiskError::Parse { line: i + 1, msg: msg.into() };
        let v: serde_json::Value = serde_json::from_str(&line).map_err(|e| parse(&e.to_string()))?;
        let id = v["id"].as_str().ok_or_else(|| parse("missing id"))?.to_string();
        let toks = if let Some(s) = v["selected"].as_str() {
            s.split_whitespace().map(String::from).collect()
        } else if let Some(a) = v["text"].as_array() {
            a.iter().map(|t| t.as_str().map(String::from).ok_or_else(|| parse("non-string token"))).collect::<Result<_>>()?
        } else {
            return Err(parse("expected a `selected` string or a `text` array"));
        };
        out.push((id, toks));
    }
    Ok(out)
}

pub fn run(cli: &Cli) -> Result<()> {
    let wd = &cli.workdir;
    match &cli.command {
        Command::Synth { out, n_examples, n_templates, seed } => {
            let out = wd.join(out);
            guard_output(&out, cli.force)?;
            let cfg = SynthConfig { n_examples: *n_examples, n_templates: *n_templates, seed: *seed };
            let corpus = generate_synthetic_corpus(&cfg)?;
            save_corpus(&corpus, &out)?;
            write_snapshot(&out, cli, serde_json::to_value(cfg)?)?;
            print!("{}", stats_table(&corpus_stats(&corpus)));
        }
        Command::Train { corpus, out, resume, overrides } => {
            let dir = wd.join(out);
            let corpus = load_corpus(&wd.join(corpus))?;
            let last = dir.join("last.json");
            let mut trainer = if *resume {
                let ck = load_checkpoint(&last)?;
                let split = split_corpus(&corpus, ck.config.seed)?;
                Trainer::resume(ck, &split.train, &split.dev)?
            } else {
                guard_output(&last, cli.force)?;
                let cfg = overrides.resolve(wd)?;
                let split = split_corpus(&corpus, cfg.seed)?;
                for (name, part) in [("train", &split.train), ("dev", &split.dev), ("test", &split.test)] {
                    save_corpus(part, &dir.join(format!("{name}.jsonl")))?;
                }
                Trainer::new(cfg, &split.train, &split.dev)?
            };
            write_snapshot(&dir.join("metrics.csv"), cli, serde_json::to_value(&trainer.config)?)?;
            println!("{}", crate::trainer::EpochMetrics::CSV_HEADER);
            trainer.run(Some(&dir), |m| println!("{}", m.csv_row()))?;
        }
        Command::Generate { checkpoint, input, out, beam, limit, dump_diagnostics } => {
            let ck = load_checkpoint(&wd.join(checkpoint))?;
            let out = wd.join(out);
            guard_output(&out, cli.force)?;
            let diag_path = dump_diagnostics.as_ref().map(|p| wd.join(p));
            if let Some(p) = &diag_path {
                guard_output(p, cli.force)?;
            }
            let model = TrainedModel::from_checkpoint(&ck)?;
            let decoding = match beam {
                Some(0) => return Err(DiskError::Usage("--beam must be positive".into())),
                Some(w) => Decoding::Beam(*w),
                None => Decoding::Greedy,
            };
            let inputs = load_corpus(&wd.join(input))?;
            let inputs = &inputs[..limit.unwrap_or(inputs.len()).min(inputs.len())];
            let mut w = BufWriter::new(fs::File::create(&out)?);
            let mut diags = Vec::new();
            for inst in inputs {
                let rec: GenerationRecord = generate_record(&model, inst, decoding)?;
                writeln!(w, "{}", serde_json::to_string(&rec)?)?;
                if diag_path.is_some() {
                    let mut d = model.diagnostics(inst, rec.domain)?;
                    d["id"] = serde_json::Value::String(inst.id.clone());
                    diags.push(d);
                }
            }
            w.flush()?;
            if let Some(p) = &diag_path {
                fs::write(p, serde_json::to_string_pretty(&diags)?)?;
            }
            write_snapshot(&out, cli, serde_json::json!({ "config": ck.config, "epoch": ck.epoch, "decoding": format!("{decoding:?}") }))?;
            eprintln!("wrote {} records to {}", inputs.len(), out.display());
        }
        Command::Evaluate { hyps, refs, out, external } => {
            let out = wd.join(out);
            guard_output(&out, cli.force)?;
            let hyp_rows = read_hypotheses(&wd.join(hyps))?;
            let refs = load_corpus(&wd.join(refs))?;
            let by_id: BTreeMap<&str, &MwpInstance> = refs.iter().map(|r| (r.id.as_str(), r)).collect();
            let mut ids = Vec::new();
            let mut hs = Vec::new();
            let mut rs = Vec::new();
            for (id, h) in hyp_rows {
                let r = by_id.get(id.as_str()).ok_or_else(|| DiskError::Validation(format!("no reference for id {id}")))?;
                rs.push(r.text.clone());
                hs.push(h);
                ids.push(id);
            }
            let mut report = EvalReport::compute(&ids, &hs, &rs)?;
            if !external.is_empty() {
                let hyp_file = out.with_extension("hyp.txt");
                let ref_file = out.with_extension("ref.txt");
                fs::write(&hyp_file, hs.iter().map(|h| h.join(" ") + "\n").collect::<String>())?;
                fs::write(&ref_file, rs.iter().map(|r| r.join(" ") + "\n").collect::<String>())?;
                for (name, cmd) in external {
                    report.external.insert(name.clone(), external_metric(name, cmd, &hyp_file, &ref_file)?);
                }
            }
            report.config = serde_json::json!({ "hyps": hyps, "refs": refs.len() });
            fs::write(&out, serde_json::to_string_pretty(&report)?)?;
            let tsv = format!("{}\n{}\n", EvalReport::TSV_HEADER, report.tsv_row());
            fs::write(out.with_extension("tsv"), &tsv)?;
            write_snapshot(&out, cli, report.config.clone())?;
            print!("{tsv}");
        }
        Command::Ablate { corpus, out, limit, overrides } => {
            let out = wd.join(out);
            guard_output(&out, cli.force)?;
            let cfg = overrides.resolve(wd)?;
            let corpus = load_corpus(&wd.join(corpus))?;
            let split = split_corpus(&corpus, cfg.seed)?;
            let rows = ablation_sweep(&cfg, &split, *limit, Decoding::Greedy, |label, m| {
                eprintln!("{label} epoch {} L_total {:.4}", m.epoch, m.l_total)
            })?;
            let tsv = ablation_tsv(&rows);
            fs::write(&out, &tsv)?;
            write_snapshot(&out, cli, serde_json::to_value(&cfg)?)?;
            print!("{tsv}");
        }
        Command::Gradcheck { seed, out } => {
            let out = wd.join(out);
            guard_output(&out, cli.force)?;
            let report = grad_check(&GradCheckConfig { seed: *seed, ..GradCheckConfig::default() })?;
            fs::write(&out, serde_json::to_string_pretty(&report)?)?;
            write_snapshot(&out, cli, serde_json::to_value(&report.config)?)?;
            for ((term, block), err) in report.by_block() {
                println!("{term}\t{block}\t{err:.3e}");
            }
            println!("max\t{:.3e}\tskipped {}", report.max_rel_err(), report.skipped());
        }
    }
    Ok(())
}

/// 0 on success, 2 for usage errors, 1 otherwise.
pub fn exit_code(res: &Result<()>) -> i32 {
    match res {
        Ok(()) => 0,
        Err(DiskError::Usage(_)) | Err(DiskError::RefuseOverwrite(_)) | Err(DiskError::Config(_)) => 2,
        Err(_) => 1,
    }
}

/// Parses `args` and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let res = run(&cli);
    if let Err(e) = &res {
        eprintln!("error: {e}");
    }
    exit_code(&res)
}
