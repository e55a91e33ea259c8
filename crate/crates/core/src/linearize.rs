//! Tree linearizations: pre-order (POT), structure-based traversal (SBT) and
//! path decomposition (PD).
//!
//! Every linearization records, per position, the tree node it came from (if
//! any) so that relation matrices can be built over sequence positions.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ast::{AstTree, NodeId};

pub const OPEN: &str = "(";
pub const CLOSE: &str = ")";
pub const SEP: &str = "<sep>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Pot,
    Sbt,
    Pd,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Pot, Method::Sbt, Method::Pd];

    pub fn name(self) -> &'static str {
        match self {
            Method::Pot => "pot",
            Method::Sbt => "sbt",
            Method::Pd => "pd",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "pot" => Ok(Method::Pot),
            "sbt" => Ok(Method::Sbt),
            "pd" => Ok(Method::Pd),
            other => Err(format!("unknown linearization `{other}` (expected pot, sbt or pd)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeqToken {
    pub text: String,
    pub node: Option<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinearSeq {
    pub method: Method,
    pub tokens: Vec<SeqToken>,
}

impl LinearSeq {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(|t| t.text.as_str())
    }

    pub fn node_ids(&self) -> impl Iterator<Item = Option<NodeId>> + '_ {
        self.tokens.iter().map(|t| t.node)
    }

    /// Keeps the first `cap` positions.
    pub fn truncate(&mut self, cap: usize) {
        self.tokens.truncate(cap);
    }
}

/// JSON-lines record emitted by the `linearize` command.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinearRecord {
    pub method: Method,
    pub tokens: Vec<String>,
    pub node_ids: Vec<Option<NodeId>>,
}

impl From<&LinearSeq> for LinearRecord {
    fn from(seq: &LinearSeq) -> Self {
        Self {
            method: seq.method,
            tokens: seq.texts().map(str::to_owned).collect(),
            node_ids: seq.node_ids().collect(),
        }
    }
}

fn node_token(tree: &AstTree, id: NodeId) -> SeqToken {
    SeqToken {
        text: tree.node(id).label(),
        node: Some(id),
    }
}

fn bracket(text: &str) -> SeqToken {
    SeqToken {
        text: text.to_owned(),
        node: None,
    }
}

pub fn pot(tree: &AstTree) -> LinearSeq {
    LinearSeq {
        method: Method::Pot,
        tokens: (0..tree.len()).map(|id| node_token(tree, id)).collect(),
    }
}

/// `SBT(v) = "(" label(v) SBT(c1) .. SBT(ck) ")" label(v)`; length `4N`.
pub fn sbt(tree: &AstTree) -> LinearSeq {
    let mut tokens = Vec::with_capacity(4 * tree.len());
    // (node, children already emitted)
    let mut stack: Vec<(NodeId, bool)> = vec![(tree.root(), false)];
    while let Some((v, done)) = stack.pop() {
        if done {
            tokens.push(bracket(CLOSE));
            tokens.push(node_token(tree, v));
        } else {
            tokens.push(bracket(OPEN));
            tokens.push(node_token(tree, v));
            stack.push((v, true));
            stack.extend(tree.children(v).iter().rev().map(|&c| (c, false)));
        }
    }
    LinearSeq {
        method: Method::Sbt,
        tokens,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PdOptions {
    /// Longest path kept, in nodes (both leaves included).
    pub max_path_len: usize,
    pub max_paths: usize,
}

impl Default for PdOptions {
    fn default() -> Self {
        Self {
            max_path_len: 8,
            max_paths: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LinearizeError {
    #[error("max_path_len must be at least 2, got {0}")]
    PathLenTooShort(usize),
}

/// Nodes on the tree path from leaf `u` up to the lowest common ancestor and
/// down to leaf `v`, in order.
pub fn leaf_path(tree: &AstTree, u: NodeId, v: NodeId) -> Vec<NodeId> {
    let mut up = vec![u];
    let mut down = vec![v];
    let (mut a, mut b) = (u, v);
    while tree.depth(a) > tree.depth(b) {
        a = tree.parent(a).expect("deeper node has a parent");
        up.push(a);
    }
    while tree.depth(b) > tree.depth(a) {
        b = tree.parent(b).expect("deeper node has a parent");
        down.push(b);
    }
    while a != b {
        a = tree.parent(a).expect("distinct nodes below root");
        b = tree.parent(b).expect("distinct nodes below root");
        up.push(a);
        down.push(b);
    }
    // `down` ends with the LCA, already the last element of `up`.
    down.pop();
    up.extend(down.into_iter().rev());
    up
}

/// Path length in nodes, from depths alone (no allocation).
fn path_nodes(tree: &AstTree, u: NodeId, v: NodeId) -> usize {
    let (mut a, mut b) = (u, v);
    while tree.depth(a) > tree.depth(b) {
        a = tree.parent(a).unwrap_or(a);
    }
    while tree.depth(b) > tree.depth(a) {
        b = tree.parent(b).unwrap_or(b);
    }
    while a != b {
        a = tree.parent(a).unwrap_or(a);
        b = tree.parent(b).unwrap_or(b);
    }
    let lca = tree.depth(a);
    tree.depth(u) + tree.depth(v) - 2 * lca + 1
}

/// Samples up to `max_paths` distinct leaf pairs whose path has at most
/// `max_path_len` nodes, uniformly without replacement, and joins their paths
/// with [`SEP`]. Trees with fewer than two leaves (or no eligible pair)
/// linearize to their first leaf.
pub fn pd(tree: &AstTree, opts: PdOptions, seed: u64) -> Result<LinearSeq, LinearizeError> {
    if opts.max_path_len < 2 {
        return Err(LinearizeError::PathLenTooShort(opts.max_path_len));
    }
    let mut tokens = Vec::new();
    if opts.max_paths == 0 {
        return Ok(LinearSeq {
            method: Method::Pd,
            tokens,
        });
    }
    let leaves: Vec<NodeId> = tree.leaves().collect();
    let mut eligible = Vec::new();
    for (a, &u) in leaves.iter().enumerate() {
        for &v in &leaves[a + 1..] {
            if path_nodes(tree, u, v) <= opts.max_path_len {
                eligible.push((u, v));
            }
        }
    }
    if eligible.is_empty() {
        tokens.push(node_token(tree, leaves[0]));
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let amount = opts.max_paths.min(eligible.len());
        for (k, idx) in sample(&mut rng, eligible.len(), amount).into_iter().enumerate() {
            if k > 0 {
                tokens.push(bracket(SEP));
            }
            let (u, v) = eligible[idx];
            tokens.extend(leaf_path(tree, u, v).into_iter().map(|id| node_token(tree, id)));
        }
    }
    Ok(LinearSeq {
        method: Method::Pd,
        tokens,
    })
}

pub fn linearize(
    tree: &AstTree,
    method: Method,
    pd_opts: PdOptions,
    seed: u64,
) -> Result<LinearSeq, LinearizeError> {
    match method {
        Method::Pot => Ok(pot(tree)),
        Method::Sbt => Ok(sbt(tree)),
        Method::Pd => pd(tree, pd_opts, seed),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingRow {
    pub method: Method,
    pub trees: usize,
    pub tokens: usize,
    #[serde(serialize_with = "secs")]
    pub total: Duration,
    #[serde(serialize_with = "secs")]
    pub mean: Duration,
}

fn secs<S: serde::Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(d.as_secs_f64())
}

/// Wall time to linearize every tree in `corpus` with each method, run
/// sequentially on the calling thread.
pub fn timing_report(corpus: &[AstTree], methods: &[Method], pd_opts: PdOptions) -> Vec<TimingRow> {
    methods
        .iter()
        .map(|&method| {
            let mut tokens = 0;
            let start = Instant::now();
            for (k, tree) in corpus.iter().enumerate() {
                let seq = linearize(tree, method, pd_opts, k as u64).expect("options validated");
                tokens += seq.len();
            }
            let total = start.elapsed();
            TimingRow {
                method,
                trees: corpus.len(),
                tokens,
                total,
                mean: total / corpus.len().max(1) as u32,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ast::RawNode;
    use crate::minilang::parse_source;
    use proptest::prelude::*;

    fn root_ab() -> AstTree {
        AstTree::build(vec![
            RawNode::new("root", None, vec![1, 2]),
            RawNode::new("a", None, vec![]),
            RawNode::new("b", None, vec![]),
        ])
        .unwrap()
    }

    fn texts(seq: &LinearSeq) -> Vec<&str> {
        seq.texts().collect()
    }

    #[test]
    fn pot_examples() {
        let single = AstTree::build(vec![RawNode::new("Block", None, vec![])]).unwrap();
        assert_eq!(texts(&pot(&single)), ["Block"]);
        assert_eq!(texts(&pot(&root_ab())), ["root", "a", "b"]);
        let t = parse_source("void f(){}").unwrap();
        assert_eq!(texts(&pot(&t)), ["MethodDeclaration:f", "TypeName:void", "Block"]);
    }

    #[test]
    fn sbt_examples() {
        let single = AstTree::build(vec![RawNode::new("X", None, vec![])]).unwrap();
        let s = sbt(&single);
        assert_eq!(texts(&s), ["(", "X", ")", "X"]);
        assert_eq!(s.node_ids().collect::<Vec<_>>(), [None, Some(0), None, Some(0)]);
        let s = sbt(&root_ab());
        assert_eq!(
            texts(&s),
            ["(", "root", "(", "a", ")", "a", "(", "b", ")", "b", ")", "root"]
        );
        assert_eq!(s.len(), 12);
    }

    #[test]
    fn pd_examples() {
        let opts = PdOptions {
            max_path_len: 8,
            max_paths: 1,
        };
        let s = pd(&root_ab(), opts, 0).unwrap();
        assert_eq!(texts(&s), ["a", "root", "b"]);
        assert_eq!(s.node_ids().collect::<Vec<_>>(), [Some(1), Some(0), Some(2)]);

        let single = AstTree::build(vec![RawNode::new("X", None, vec![])]).unwrap();
        assert_eq!(texts(&pd(&single, PdOptions::default(), 0).unwrap()), ["X"]);

        let t = AstTree::random(5, 30, 3);
        assert_eq!(pd(&t, PdOptions::default(), 5).unwrap(), pd(&t, PdOptions::default(), 5).unwrap());

        assert_eq!(
            pd(&t, PdOptions { max_path_len: 1, max_paths: 3 }, 0),
            Err(LinearizeError::PathLenTooShort(1))
        );
        assert!(pd(&t, PdOptions { max_path_len: 4, max_paths: 0 }, 0).unwrap().is_empty());
    }

    #[test]
    fn pd_path_goes_through_lca() {
        // r(x(a, b), c)
        let t = AstTree::build(vec![
            RawNode::new("r", None, vec![1, 4]),
            RawNode::new("x", None, vec![2, 3]),
            RawNode::new("a", None, vec![]),
            RawNode::new("b", None, vec![]),
            RawNode::new("c", None, vec![]),
        ])
        .unwrap();
        assert_eq!(leaf_path(&t, 2, 4), [2, 1, 0, 4]);
        assert_eq!(leaf_path(&t, 2, 3), [2, 1, 3]);
        assert_eq!(leaf_path(&t, 4, 3), [4, 0, 1, 3]);
        // only the (a, b) pair fits in 3 nodes
        let s = pd(&t, PdOptions { max_path_len: 3, max_paths: 5 }, 1).unwrap();
        assert_eq!(texts(&s), ["a", "x", "b"]);
    }

    #[test]
    fn timing_empty_method_list() {
        let corpus = vec![root_ab()];
        assert!(timing_report(&corpus, &[], PdOptions::default()).is_empty());
        let rows = timing_report(&corpus, &Method::ALL, PdOptions::default());
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].tokens, 3);
        assert_eq!(rows[1].tokens, 12);
    }

    fn sorted_labels(tree: &AstTree) -> Vec<String> {
        let mut v: Vec<String> = tree.nodes().iter().map(|n| n.label()).collect();
        v.sort();
        v
    }

    proptest! {
        #[test]
        fn length_laws(seed in any::<u64>(), n in 1usize..200, b in 1usize..6, paths in 0usize..40, plen in 2usize..12) {
            let t = AstTree::random(seed, n, b);
            let p = pot(&t);
            prop_assert_eq!(p.len(), n);
            for (i, id) in p.node_ids().enumerate() {
                prop_assert_eq!(id, Some(i));
            }
            let mut labels: Vec<String> = p.texts().map(str::to_owned).collect();
            labels.sort();
            prop_assert_eq!(labels, sorted_labels(&t));

            let s = sbt(&t);
            prop_assert_eq!(s.len(), 4 * n);
            let mut counts = vec![0; n];
            for tok in &s.tokens {
                if let Some(id) = tok.node {
                    prop_assert_eq!(&tok.text, &t.node(id).label());
                    counts[id] += 1;
                }
            }
            prop_assert!(counts.iter().all(|&c| c == 2));

            let opts = PdOptions { max_path_len: plen, max_paths: paths };
            let d = pd(&t, opts, seed).unwrap();
            prop_assert!(d.len() <= paths * plen + paths.saturating_sub(1));
            for tok in &d.tokens {
                match tok.node {
                    Some(id) => prop_assert!(id < n),
                    None => prop_assert_eq!(tok.text.as_str(), SEP),
                }
            }
        }
    }
}
