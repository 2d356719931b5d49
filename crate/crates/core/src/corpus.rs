//! Equation/text tokenization, MWP instances and JSONL corpus I/O.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DiskError, Result};
use crate::syntax::{DepEdge, Tree};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum TokenKind {
    Variable,
    Number,
    Operator,
    Separator,
}

impl TokenKind {
    pub const ALL: [TokenKind; 4] = [TokenKind::Variable, TokenKind::Number, TokenKind::Operator, TokenKind::Separator];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EquationToken {
    pub surface: String,
    pub kind: TokenKind,
}

pub const VARIABLES: [&str; 6] = ["x", "y", "z", "w", "u", "v"];
pub const OPERATORS: [&str; 9] = ["+", "-", "*", "/", "=", "(", ")", "^", "%"];

/// True for decimal literals (`3`, `0.25`) and compact fractions (`2/5`).
pub fn is_number(s: &str) -> bool {
    fn decimal(s: &str) -> bool {
        let mut parts = s.splitn(2, '.');
        let int = parts.next().unwrap_or("");
        let frac = parts.next();
        let digits = |p: &str| !p.is_empty() && p.bytes().all(|b| b.is_ascii_digit());
        match frac {
            None => digits(int),
            Some(f) => digits(int) && digits(f),
        }
    }
    match s.split_once('/') {
        Some((a, b)) => decimal(a) && decimal(b),
        None => decimal(s),
    }
}

pub fn classify(surface: &str) -> Result<TokenKind> {
    if surface == "equ" || surface == ":" {
        Ok(TokenKind::Separator)
    } else if is_number(surface) {
        Ok(TokenKind::Number)
    } else if VARIABLES.contains(&surface) {
        Ok(TokenKind::Variable)
    } else if OPERATORS.contains(&surface) {
        Ok(TokenKind::Operator)
    } else {
        Err(DiskError::UnknownKind(surface.to_string()))
    }
}

pub fn tokenize_equation(raw: &str) -> Result<Vec<EquationToken>> {
    let toks: Vec<EquationToken> = raw
        .split_whitespace()
        .map(|t| {
            let surface = t.to_lowercase();
            classify(&surface).map(|kind| EquationToken { surface, kind })
        })
        .collect::<Result<_>>()?;
    if toks.is_empty() {
        return Err(DiskError::EmptyInput);
    }
    Ok(toks)
}

pub fn join_equation(eq: &[EquationToken]) -> String {
    eq.iter().map(|t| t.surface.as_str()).collect::<Vec<_>>().join(" ")
}

pub fn tokenize_text(raw: &str) -> Vec<String> {
    raw.split_whitespace().map(str::to_lowercase).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Record", into = "Record")]
pub struct MwpInstance {
    pub id: String,
    pub equation: Vec<EquationToken>,
    pub text: Vec<String>,
    pub dep_edges: Vec<DepEdge>,
    pub constituency: String,
    pub pos: Vec<String>,
}

#[derive(Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    equation: String,
    text: Vec<String>,
    dep_edges: Vec<DepEdge>,
    constituency: String,
    pos: Vec<String>,
}

impl MwpInstance {
    pub fn len(&self) -> usize {
        self.text.len()
    }

    pub fn is_empty(&self) -> bool {
        self.text.is_empty()
    }

    pub fn equation_surfaces(&self) -> Vec<String> {
        self.equation.iter().map(|t| t.surface.clone()).collect()
    }

    pub fn tree(&self) -> Result<Tree> {
        Tree::parse(&self.constituency)
    }

    /// Checks the structural invariants tying text, parses and tags together.
    pub fn validate(&self) -> Result<()> {
        let l = self.text.len();
        let err = |m: String| Err(DiskError::Validation(format!("instance {}: {m}", self.id)));
        if l == 0 {
            return err("empty text".into());
        }
        if self.pos.len() != l {
            return err(format!("{} POS tags for {l} tokens", self.pos.len()));
        }
        for e in &self.dep_edges {
            if e.head() >= l as i64 || e.head() < -1 || e.dependent() >= l {
                return err(format!("dependency edge ({}, {}) out of range for length {l}", e.head(), e.dependent()));
            }
        }
        let leaves = self.tree()?.leaf_count();
        if leaves != l {
            return err(format!("constituency has {leaves} leaves for {l} tokens"));
        }
        Ok(())
    }

    fn to_record(&self) -> Record {
        Record {
            id: self.id.clone(),
            equation: join_equation(&self.equation),
            text: self.text.clone(),
            dep_edges: self.dep_edges.clone(),
            constituency: self.constituency.clone(),
            pos: self.pos.clone(),
        }
    }

    fn from_record(r: Record) -> Result<Self> {
        let inst = MwpInstance {
            id: r.id,
            equation: tokenize_equation(&r.equation)?,
            text: r.text,
            dep_edges: r.dep_edges,
            constituency: r.constituency,
            pos: r.pos,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_record()).expect("record serializes")
    }

    pub fn from_json(line: &str) -> Result<Self> {
        let rec: Record = serde_json::from_str(line)?;
        Self::from_record(rec)
    }
}

impl TryFrom<Record> for MwpInstance {
    type Error = DiskError;

    fn try_from(r: Record) -> Result<Self> {
        Self::from_record(r)
    }
}

impl From<MwpInstance> for Record {
    fn from(i: MwpInstance) -> Self {
        i.to_record()
    }
}

pub fn save_corpus(instances: &[MwpInstance], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for inst in instances {
        writeln!(w, "{}", inst.to_json())?;
    }
    w.flush()?;
    Ok(())
}

/// Loads JSONL; errors carry the 1-based line number.
pub fn load_corpus(path: &Path) -> Result<Vec<MwpInstance>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record =
            serde_json::from_str(&line).map_err(|e| DiskError::Parse { line: i + 1, msg: e.to_string() })?;
        let inst = MwpInstance::from_record(rec).map_err(|e| match e {
            DiskError::Validation(m) => DiskError::Validation(format!("line {}: {m}", i + 1)),
            DiskError::Parse { msg, .. } => DiskError::Parse { line: i + 1, msg },
            DiskError::UnknownKind(s) => DiskError::Parse { line: i + 1, msg: format!("unknown equation token {s:?}") },
            DiskError::EmptyInput => DiskError::Parse { line: i + 1, msg: "empty equation".into() },
            other => other,
        })?;
        out.push(inst);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use TokenKind::*;

    #[test]
    fn table_case_kinds() {
        let kinds: Vec<_> = tokenize_equation("equ : x + y = 35").unwrap().into_iter().map(|t| t.kind).collect();
        assert_eq!(kinds, vec![Separator, Separator, Variable, Operator, Variable, Operator, Number]);
    }

    #[test]
    fn fraction_equation_counts() {
        let toks = tokenize_equation("equ : 1 / 6 * x + 7 = 2 / 3 * x").unwrap();
        assert_eq!(toks.len(), 15);
        assert_eq!(toks.iter().filter(|t| t.kind == Number).count(), 5);
        assert_eq!(toks.iter().filter(|t| t.kind == Variable).count(), 2);
    }

    #[test]
    fn empty_and_unknown() {
        assert!(matches!(tokenize_equation(""), Err(DiskError::EmptyInput)));
        assert!(matches!(tokenize_equation("   "), Err(DiskError::EmptyInput)));
        match tokenize_equation("equ : x + apples = 3") {
            Err(DiskError::UnknownKind(s)) => assert_eq!(s, "apples"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn number_forms() {
        for s in ["3", "0.25", "12/5", "1.5/2"] {
            assert!(is_number(s), "{s}");
        }
        for s in ["", ".", "1.", ".5", "a/b", "1/", "-3", "1.2.3"] {
            assert!(!is_number(s), "{s}");
        }
    }
}
