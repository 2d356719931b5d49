//! Quantity Cell Graph extraction from dependency and constituency parses.

use std::collections::{BTreeSet, VecDeque};

use serde::Serialize;

use crate::corpus::{is_number, MwpInstance};
use crate::error::{DiskError, Result};
use crate::syntax::Tree;
use crate::tensor::Matrix;

pub const DEFAULT_F: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Role {
    Quantity,
    Attribute,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QcgNode {
    pub text_index: usize,
    pub role: Role,
    /// Index (into the node list) of the owning quantity; self for quantities.
    pub owner: usize,
    pub pos: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuantityCellGraph {
    pub nodes: Vec<QcgNode>,
    pub adjacency: Matrix,
    pub alignment: Matrix,
    pub m: usize,
}

/// Noun/verb test: synthetic `N`/`V` tags or Penn `NN*`/`VB*` tags.
pub fn is_noun_or_verb(tag: &str) -> bool {
    tag == "N" || tag == "V" || tag.starts_with("NN") || tag.starts_with("VB")
}

/// Depth-first split of the leaves into maximal subtrees with at most `f` leaves.
pub fn subtree_partition(tree: &Tree, f: usize) -> Vec<BTreeSet<usize>> {
    assert!(f >= 1, "F must be at least 1");
    fn visit(t: &Tree, f: usize, start: usize, out: &mut Vec<BTreeSet<usize>>) -> usize {
        let n = t.leaf_count();
        if n <= f {
            out.push((start..start + n).collect());
        } else {
            let mut s = start;
            for c in t.children() {
                s = visit(c, f, s, out);
            }
        }
        start + n
    }
    let mut out = Vec::new();
    visit(tree, f, 0, &mut out);
    out
}

pub fn subtree_partition_str(constituency: &str, f: usize) -> Result<Vec<BTreeSet<usize>>> {
    Ok(subtree_partition(&Tree::parse(constituency)?, f))
}

/// Undirected BFS hop distances from `src`; `usize::MAX` when unreachable.
pub fn hop_distances(inst: &MwpInstance, src: usize) -> Vec<usize> {
    let l = inst.len();
    let mut adj = vec![Vec::new(); l];
    for e in &inst.dep_edges {
        if e.head() >= 0 {
            let h = e.head() as usize;
            adj[h].push(e.dependent());
            adj[e.dependent()].push(h);
        }
    }
    let mut dist = vec![usize::MAX; l];
    dist[src] = 0;
    let mut q = VecDeque::from([src]);
    while let Some(u) = q.pop_front() {
        for &v in &adj[u] {
            if dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                q.push_back(v);
            }
        }
    }
    dist
}

/// Quantity nodes (text order) followed by each quantity's attributes (text order).
pub fn extract_quantity_cells(inst: &MwpInstance, f: usize) -> Result<Vec<QcgNode>> {
    let quantities: Vec<usize> = (0..inst.len()).filter(|&i| is_number(&inst.text[i])).collect();
    if quantities.is_empty() {
        return Ok(Vec::new());
    }
    let blocks = subtree_partition_str(&inst.constituency, f)?;
    let mut block_of = vec![0; inst.len()];
    for (b, set) in blocks.iter().enumerate() {
        for &i in set {
            block_of[i] = b;
        }
    }
    let mut nodes: Vec<QcgNode> = quantities
        .iter()
        .enumerate()
        .map(|(k, &i)| QcgNode { text_index: i, role: Role::Quantity, owner: k, pos: inst.pos[i].clone() })
        .collect();
    for (k, &q) in quantities.iter().enumerate() {
        let dist = hop_distances(inst, q);
        for i in 0..inst.len() {
            if i == q || !is_noun_or_verb(&inst.pos[i]) {
                continue;
            }
            if dist[i] <= 2 || block_of[i] == block_of[q] {
                nodes.push(QcgNode { text_index: i, role: Role::Attribute, owner: k, pos: inst.pos[i].clone() });
            }
        }
    }
    Ok(nodes)
}

pub fn build_graph(nodes: Vec<QcgNode>, l: usize) -> Result<QuantityCellGraph> {
    let n = nodes.len();
    let m = nodes.iter().filter(|c| c.role == Role::Quantity).count();
    let mut seen = BTreeSet::new();
    for c in &nodes {
        if !seen.insert((c.text_index, c.owner)) {
            return Err(DiskError::Invariant(format!("duplicate cell ({}, owner {})", c.text_index, c.owner)));
        }
        if c.text_index >= l || c.owner >= m || nodes[c.owner].role != Role::Quantity {
            return Err(DiskError::Invariant(format!("cell at {} has bad index or owner", c.text_index)));
        }
    }
    let mut a = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let (ci, cj) = (&nodes[i], &nodes[j]);
            let both_q = ci.role == Role::Quantity && cj.role == Role::Quantity;
            let owns = (ci.role == Role::Attribute && ci.owner == j) || (cj.role == Role::Attribute && cj.owner == i);
            if both_q || owns {
                a.set(i, j, 1.0);
            }
        }
    }
    let mut mm = Matrix::zeros(l, n);
    for (j, c) in nodes.iter().enumerate() {
        mm.set(c.text_index, j, 1.0);
    }
    Ok(QuantityCellGraph { nodes, adjacency: a, alignment: mm, m })
}

impl QuantityCellGraph {
    pub fn from_instance(inst: &MwpInstance, f: usize) -> Result<Self> {
        build_graph(extract_quantity_cells(inst, f)?, inst.len())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Attribute text indices owned by quantity `k`.
    pub fn cell(&self, k: usize) -> BTreeSet<usize> {
        self.nodes.iter().filter(|c| c.role == Role::Attribute && c.owner == k).map(|c| c.text_index).collect()
    }

    /// Debug dump `{nodes:[{i,role,owner,pos}], A, M}`.
    pub fn to_json(&self) -> serde_json::Value {
        let nodes: Vec<_> = self
            .nodes
            .iter()
            .map(|c| serde_json::json!({"i": c.text_index, "role": c.role, "owner": c.owner, "pos": c.pos}))
            .collect();
        serde_json::json!({"nodes": nodes, "A": self.adjacency.to_rows(), "M": self.alignment.to_rows()})
    }
}
