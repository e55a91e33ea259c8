//! Ancestor-descendant (A) and sibling (S) relations over sequence positions.
//!
//! Distances are signed. For positions `i`, `j` holding nodes `u`, `v`:
//!
//! * `A[i][j] = depth(v) - depth(u)` when one node is a strict ancestor of the
//!   other (positive when `v` lies below `u`);
//! * `S[i][j] = childIndex(v) - childIndex(u)` when `u` and `v` share a parent.
//!
//! Every position relates to itself with distance 0 in both matrices, as do
//! two positions holding the same node. Positions without a node (SBT
//! brackets, PD separators) relate only to themselves. Unrelated pairs are
//! simply absent ("infinite" distance); no sentinel value is stored.

use serde::Serialize;
use thiserror::Error;

use crate::ast::{AstTree, NodeId};
use crate::linearize::LinearSeq;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RelationError {
    #[error("position {position} references node {node}, but the tree has {len} nodes")]
    MapMismatch {
        position: usize,
        node: NodeId,
        len: usize,
    },
}

/// Row-compressed sparse matrix of signed distances; columns sorted per row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseRel {
    rows: Vec<Vec<(usize, i32)>>,
}

impl SparseRel {
    fn from_rows(mut rows: Vec<Vec<(usize, i32)>>) -> Self {
        for row in &mut rows {
            row.sort_unstable_by_key(|&(j, _)| j);
            debug_assert!(row.windows(2).all(|w| w[0].0 < w[1].0), "pair defined twice");
        }
        Self { rows }
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn get(&self, i: usize, j: usize) -> Option<i32> {
        let row = &self.rows[i];
        row.binary_search_by_key(&j, |&(c, _)| c).ok().map(|k| row[k].1)
    }

    pub fn row(&self, i: usize) -> &[(usize, i32)] {
        &self.rows[i]
    }

    /// Number of defined (finite) entries.
    pub fn defined(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, i32)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(i, row)| row.iter().map(move |&(j, d)| (i, j, d)))
    }

    pub fn max_abs(&self) -> u32 {
        self.iter().map(|(_, _, d)| d.unsigned_abs()).max().unwrap_or(0)
    }
}

fn checked_nodes(tree: &AstTree, seq: &LinearSeq) -> Result<Vec<Option<NodeId>>, RelationError> {
    seq.tokens
        .iter()
        .enumerate()
        .map(|(position, t)| match t.node {
            Some(node) if node >= tree.len() => Err(RelationError::MapMismatch {
                position,
                node,
                len: tree.len(),
            }),
            other => Ok(other),
        })
        .collect()
}

fn positions_by_node(tree: &AstTree, nodes: &[Option<NodeId>]) -> Vec<Vec<usize>> {
    let mut by_node = vec![Vec::new(); tree.len()];
    for (i, node) in nodes.iter().enumerate() {
        if let Some(v) = node {
            by_node[*v].push(i);
        }
    }
    by_node
}

/// Diagonal plus zero entries between repeated occurrences of one node.
fn identity_rows(nodes: &[Option<NodeId>], by_node: &[Vec<usize>]) -> Vec<Vec<(usize, i32)>> {
    nodes
        .iter()
        .enumerate()
        .map(|(i, node)| match node {
            Some(v) => by_node[*v].iter().map(|&j| (j, 0)).collect(),
            None => vec![(i, 0)],
        })
        .collect()
}

/// Walks each position's ancestor chain once: O(n * depth * occurrences).
pub fn ancestry_matrix(tree: &AstTree, seq: &LinearSeq) -> Result<SparseRel, RelationError> {
    let nodes = checked_nodes(tree, seq)?;
    let by_node = positions_by_node(tree, &nodes);
    let mut rows = identity_rows(&nodes, &by_node);
    for (i, node) in nodes.iter().enumerate() {
        let Some(v) = *node else { continue };
        for (k, a) in tree.ancestors(v).enumerate() {
            let d = k as i32 + 1;
            for &j in &by_node[a] {
                // j holds the ancestor, i the descendant
                rows[j].push((i, d));
                rows[i].push((j, -d));
            }
        }
    }
    Ok(SparseRel::from_rows(rows))
}

pub fn sibling_matrix(tree: &AstTree, seq: &LinearSeq) -> Result<SparseRel, RelationError> {
    let nodes = checked_nodes(tree, seq)?;
    let by_node = positions_by_node(tree, &nodes);
    let mut rows = identity_rows(&nodes, &by_node);
    for parent in tree.nodes() {
        let kids = &parent.children;
        for (x, &u) in kids.iter().enumerate() {
            for (y, &v) in kids.iter().enumerate() {
                if x == y {
                    continue;
                }
                let d = y as i32 - x as i32;
                for &i in &by_node[u] {
                    for &j in &by_node[v] {
                        rows[i].push((j, d));
                    }
                }
            }
        }
    }
    Ok(SparseRel::from_rows(rows))
}

/// Reference implementation: for every position pair, walk both nodes'
/// root paths and compare. O(n^2 * depth).
pub fn oracle_relations(tree: &AstTree, seq: &LinearSeq) -> Result<(SparseRel, SparseRel), RelationError> {
    let nodes = checked_nodes(tree, seq)?;
    let root_path = |v: NodeId| -> Vec<NodeId> {
        let mut path = vec![v];
        let mut cur = v;
        while let Some(p) = tree.node(cur).parent {
            path.push(p);
            cur = p;
        }
        path
    };
    let paths: Vec<Option<Vec<NodeId>>> = nodes.iter().map(|n| n.map(root_path)).collect();
    let n = nodes.len();
    let mut anc = vec![Vec::new(); n];
    let mut sib = vec![Vec::new(); n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                anc[i].push((j, 0));
                sib[i].push((j, 0));
                continue;
            }
            let (Some(u), Some(v)) = (nodes[i], nodes[j]) else {
                continue;
            };
            if u == v {
                anc[i].push((j, 0));
                sib[i].push((j, 0));
                continue;
            }
            let (pu, pv) = (paths[i].as_ref().unwrap(), paths[j].as_ref().unwrap());
            if let Some(steps) = pv.iter().position(|&x| x == u) {
                anc[i].push((j, steps as i32));
            } else if let Some(steps) = pu.iter().position(|&x| x == v) {
                anc[i].push((j, -(steps as i32)));
            }
            if pu.len() > 1 && pv.len() > 1 && pu[1] == pv[1] {
                let kids = &tree.node(pu[1]).children;
                let iu = kids.iter().position(|&c| c == u).unwrap() as i32;
                let iv = kids.iter().position(|&c| c == v).unwrap() as i32;
                sib[i].push((j, iv - iu));
            }
        }
    }
    Ok((SparseRel::from_rows(anc), SparseRel::from_rows(sib)))
}

/// Neighbourhood radius for one relation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ClipRadius {
    Finite(u32),
    Unbounded,
}

impl ClipRadius {
    fn admits(self, d: i32) -> bool {
        match self {
            ClipRadius::Finite(k) => d.unsigned_abs() <= k,
            ClipRadius::Unbounded => true,
        }
    }

    fn clamp(self, d: i32) -> i32 {
        match self {
            ClipRadius::Finite(k) => d.clamp(-(k as i32), k as i32),
            ClipRadius::Unbounded => d,
        }
    }
}

impl From<u32> for ClipRadius {
    fn from(k: u32) -> Self {
        ClipRadius::Finite(k)
    }
}

/// An attention pair `(row, col)` with its clipped signed distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RelPair {
    pub row: usize,
    pub col: usize,
    pub dist: i32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationSet {
    pub n: usize,
    /// All defined pairs, distances clamped to `[-k, k]`.
    pub anc: SparseRel,
    pub sib: SparseRel,
    pub k_anc: ClipRadius,
    pub k_sib: ClipRadius,
    /// Defined pairs within the radius, row-major.
    pub allowed_anc: Vec<RelPair>,
    pub allowed_sib: Vec<RelPair>,
}

fn clip_one(rel: &SparseRel, k: ClipRadius) -> (SparseRel, Vec<RelPair>) {
    let mut allowed = Vec::new();
    let rows = rel
        .rows
        .iter()
        .enumerate()
        .map(|(i, row)| {
            row.iter()
                .map(|&(j, d)| {
                    if k.admits(d) {
                        allowed.push(RelPair {
                            row: i,
                            col: j,
                            dist: d,
                        });
                    }
                    (j, k.clamp(d))
                })
                .collect()
        })
        .collect();
    (SparseRel { rows }, allowed)
}

pub fn clip(anc: &SparseRel, sib: &SparseRel, k_anc: ClipRadius, k_sib: ClipRadius) -> RelationSet {
    assert_eq!(anc.n(), sib.n(), "relation matrices must cover the same positions");
    let (anc_c, allowed_anc) = clip_one(anc, k_anc);
    let (sib_c, allowed_sib) = clip_one(sib, k_sib);
    RelationSet {
        n: anc.n(),
        anc: anc_c,
        sib: sib_c,
        k_anc,
        k_sib,
        allowed_anc,
        allowed_sib,
    }
}

impl RelationSet {
    pub fn build(
        tree: &AstTree,
        seq: &LinearSeq,
        k_anc: ClipRadius,
        k_sib: ClipRadius,
    ) -> Result<Self, RelationError> {
        let anc = ancestry_matrix(tree, seq)?;
        let sib = sibling_matrix(tree, seq)?;
        Ok(clip(&anc, &sib, k_anc, k_sib))
    }

    /// Size of the union of both allowed sets.
    pub fn allowed_union(&self) -> usize {
        let (a, s) = (&self.allowed_anc, &self.allowed_sib);
        let (mut x, mut y, mut count) = (0, 0, 0);
        while x < a.len() || y < s.len() {
            let ka = a.get(x).map(|p| (p.row, p.col));
            let ks = s.get(y).map(|p| (p.row, p.col));
            match (ka, ks) {
                (Some(p), Some(q)) if p == q => {
                    x += 1;
                    y += 1;
                }
                (Some(p), Some(q)) if p < q => x += 1,
                (Some(_), None) => x += 1,
                _ => y += 1,
            }
            count += 1;
        }
        count
    }

    pub fn is_allowed(&self, i: usize, j: usize) -> bool {
        let find = |pairs: &[RelPair]| pairs.binary_search_by_key(&(i, j), |p| (p.row, p.col)).is_ok();
        find(&self.allowed_anc) || find(&self.allowed_sib)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReductionReport {
    pub n: usize,
    pub allowed_anc: usize,
    pub allowed_sib: usize,
    pub allowed_union: usize,
    #[serde(skip)]
    pub total_pairs: usize,
    /// `1 - allowed_union / n^2`.
    pub reduction: f64,
}

pub fn sparsity_stats(rel: &RelationSet) -> ReductionReport {
    let total_pairs = rel.n * rel.n;
    let allowed_union = rel.allowed_union();
    let reduction = if total_pairs == 0 {
        0.0
    } else {
        1.0 - allowed_union as f64 / total_pairs as f64
    };
    ReductionReport {
        n: rel.n,
        allowed_anc: rel.allowed_anc.len(),
        allowed_sib: rel.allowed_sib.len(),
        allowed_union,
        total_pairs,
        reduction,
    }
}
