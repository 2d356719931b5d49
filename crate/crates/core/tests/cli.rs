use std::path::Path;
use std::process::{Command, Output};

fn disk(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_disk")).arg("--workdir").arg(dir).args(args).env_remove("DISK_SEED").output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8_lossy(&out.stdout).into_owned()
}

const TINY: &[&str] = &["--d", "8", "--layers", "1", "--heads", "2", "--ffn", "16", "--k", "3", "--pool-size", "8", "--epochs", "1"];

#[test]
fn synth_defaults_and_reproducibility() {
    let dir = tempfile::tempdir().unwrap();
    let stats = ok(&disk(dir.path(), &["synth", "--out", "a.jsonl"]));
    let a = std::fs::read(dir.path().join("a.jsonl")).unwrap();
    let lines = a.iter().filter(|&&b| b == b'\n').count();
    assert_eq!(lines, 2000);
    let row: Vec<&str> = stats.lines().nth(1).unwrap().split_whitespace().collect();
    assert_eq!(row[0].parse::<usize>().unwrap(), lines);
    ok(&disk(dir.path(), &["synth", "--out", "b.jsonl"]));
    assert_eq!(a, std::fs::read(dir.path().join("b.jsonl")).unwrap());
    assert!(dir.path().join("a.jsonl.config.json").is_file());

    let again = disk(dir.path(), &["synth", "--out", "a.jsonl"]);
    assert_eq!(again.status.code(), Some(2));
    ok(&disk(dir.path(), &["--force", "synth", "--out", "a.jsonl", "--n-examples", "10"]));
}

#[test]
fn env_seed_overrides_default() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, seed: Option<&str>| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_disk"));
        c.arg("--workdir").arg(dir.path()).args(["synth", "--n-examples", "20", "--out", name]);
        match seed {
            Some(s) => c.env("DISK_SEED", s),
            None => c.env_remove("DISK_SEED"),
        };
        ok(&c.output().unwrap());
        std::fs::read(dir.path().join(name)).unwrap()
    };
    assert_ne!(run("a", None), run("b", Some("9")));
    assert_eq!(run("c", Some("9")), run("d", Some("9")));
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(disk(dir.path(), &["--no-such-flag"]).status.code(), Some(2));
    ok(&disk(dir.path(), &["synth", "--n-examples", "20", "--out", "c.jsonl"]));
    let missing = disk(dir.path(), &["generate", "--checkpoint", "nope.json", "--input", "c.jsonl"]);
    assert_eq!(missing.status.code(), Some(2));
    let bad = disk(dir.path(), &["train", "--corpus", "c.jsonl", "--d", "7", "--heads", "2"]);
    assert_eq!(bad.status.code(), Some(2));
    let runtime = disk(dir.path(), &["evaluate", "--hyps", "missing.jsonl", "--refs", "c.jsonl"]);
    assert_eq!(runtime.status.code(), Some(1));
}

#[test]
fn train_generate_evaluate_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    ok(&disk(dir.path(), &["synth", "--n-examples", "100", "--out", "c.jsonl"]));
    let mut args = vec!["train", "--corpus", "c.jsonl", "--out", "run"];
    args.extend_from_slice(TINY);
    let log = ok(&disk(dir.path(), &args));
    assert!(log.starts_with("epoch,L_D,L_M,L_G,L_total,dev_L_total,matcher_top1_acc"));
    assert!(dir.path().join("run/metrics.csv.config.json").is_file());

    let gen = ["generate", "--checkpoint", "run/best.json", "--input", "run/test.jsonl", "--limit", "10"];
    let mut gen_args = gen.to_vec();
    gen_args.extend(["--dump-diagnostics", "diag.json"]);
    ok(&disk(dir.path(), &gen_args));
    let text = std::fs::read_to_string(dir.path().join("generated.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 10);
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["candidates"].as_array().unwrap().len(), 3);
        assert!(v["selected"].is_string() && v["domain"].is_u64() && v["id"].is_string());
    }
    let diag: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("diag.json")).unwrap()).unwrap();
    assert_eq!(diag.as_array().unwrap().len(), 10);

    ok(&disk(dir.path(), &["evaluate", "--hyps", "generated.jsonl", "--refs", "run/test.jsonl"]));
    let tsv = ok(&disk(dir.path(), &["evaluate", "--hyps", "run/test.jsonl", "--refs", "run/test.jsonl", "--out", "self.json"]));
    let row: Vec<&str> = tsv.lines().nth(1).unwrap().split('\t').collect();
    assert_eq!(row[0], "100.00");
    assert_eq!(row[1], "100.00");
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("self.json")).unwrap()).unwrap();
    assert_eq!(report["bleu"], 1.0);

    let resume = disk(dir.path(), &["train", "--corpus", "c.jsonl", "--out", "run", "--resume"]);
    ok(&resume);
}

#[test]
fn external_metric_slot() {
    let dir = tempfile::tempdir().unwrap();
    ok(&disk(dir.path(), &["synth", "--n-examples", "10", "--out", "c.jsonl"]));
    let script = dir.path().join("lines.sh");
    std::fs::write(&script, "wc -l < \"$1\"\n").unwrap();
    let ext = format!("lines=sh {}", script.display());
    let out = ok(&disk(dir.path(), &["evaluate", "--hyps", "c.jsonl", "--refs", "c.jsonl", "--external", &ext]));
    assert!(out.contains("100.00"));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["external"]["lines"].as_f64(), Some(10.0));
}

#[test]
fn ablate_emits_five_rows_in_table_order() {
    let dir = tempfile::tempdir().unwrap();
    ok(&disk(dir.path(), &["synth", "--n-examples", "60", "--out", "c.jsonl"]));
    let mut args = vec!["ablate", "--corpus", "c.jsonl", "--limit", "3"];
    args.extend_from_slice(TINY);
    ok(&disk(dir.path(), &args));
    let tsv = std::fs::read_to_string(dir.path().join("ablation.tsv")).unwrap();
    let labels: Vec<&str> = tsv.lines().skip(1).map(|l| l.split('\t').next().unwrap()).collect();
    assert_eq!(labels, ["DISK", "w/o DG", "w/o QCG", "w/o MTC", "w/o CS"]);
}

#[test]
fn gradcheck_command_reports_blocks() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&disk(dir.path(), &["gradcheck"]));
    let max: f64 = out.lines().last().unwrap().split('\t').nth(1).unwrap().parse().unwrap();
    assert!(max < 1e-3);
}
