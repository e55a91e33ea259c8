//! Canonical AST data model.
//!
//! Trees are immutable once built. Node ids are assigned in pre-order, so a
//! node's descendants occupy the contiguous id block right after it and the
//! pre-order traversal is the identity permutation.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use thiserror::Error;

pub type NodeId = usize;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AstError {
    #[error("tree must contain at least one node")]
    Empty,
    #[error("node {parent} lists child {child}, but only {len} nodes exist")]
    DanglingChild {
        parent: NodeId,
        child: NodeId,
        len: usize,
    },
    #[error("node {parent} lists child {child} more than once")]
    DuplicateChild { parent: NodeId, child: NodeId },
    #[error("node {child} is listed as a child of both {first} and {second}")]
    MultipleParents {
        child: NodeId,
        first: NodeId,
        second: NodeId,
    },
    #[error("node {0} is its own ancestor")]
    Cycle(NodeId),
    #[error("expected a single root, found {roots:?}")]
    Forest { roots: Vec<NodeId> },
    #[error("node kind must be a non-empty string (node {0})")]
    EmptyKind(NodeId),
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("node id {id} out of range for a tree of {len} nodes")]
    OutOfRange { id: NodeId, len: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AstNode {
    pub id: NodeId,
    pub kind: String,
    pub value: Option<String>,
    pub children: Vec<NodeId>,
    pub parent: Option<NodeId>,
}

impl AstNode {
    /// Surface label used by the linearizations: `kind` or `kind:value`.
    pub fn label(&self) -> String {
        match &self.value {
            Some(v) => format!("{}:{}", self.kind, v),
            None => self.kind.clone(),
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

/// Unvalidated node description; `children` index into the raw list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawNode {
    pub kind: String,
    pub value: Option<String>,
    pub children: Vec<NodeId>,
}

impl RawNode {
    pub fn new(kind: impl Into<String>, value: Option<&str>, children: Vec<NodeId>) -> Self {
        Self {
            kind: kind.into(),
            value: value.map(str::to_owned),
            children,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AstTree {
    nodes: Vec<AstNode>,
    depth: Vec<usize>,
    subtree_size: Vec<usize>,
    child_index: Vec<usize>,
}

impl AstTree {
    /// Validates `raw` and renumbers it to pre-order.
    pub fn build(raw: Vec<RawNode>) -> Result<Self, AstError> {
        let len = raw.len();
        if len == 0 {
            return Err(AstError::Empty);
        }
        let mut parent: Vec<Option<NodeId>> = vec![None; len];
        for (p, node) in raw.iter().enumerate() {
            if node.kind.is_empty() {
                return Err(AstError::EmptyKind(p));
            }
            for (k, &c) in node.children.iter().enumerate() {
                if c >= len {
                    return Err(AstError::DanglingChild {
                        parent: p,
                        child: c,
                        len,
                    });
                }
                if node.children[..k].contains(&c) {
                    return Err(AstError::DuplicateChild { parent: p, child: c });
                }
                if let Some(first) = parent[c] {
                    return Err(AstError::MultipleParents {
                        child: c,
                        first,
                        second: p,
                    });
                }
                parent[c] = Some(p);
            }
        }

        // With at most one parent per node, a cycle shows up as a parent
        // chain that never reaches a root.
        let mut state = vec![0u8; len]; // 0 unvisited, 1 on current chain, 2 done
        for start in 0..len {
            let mut chain = Vec::new();
            let mut cur = Some(start);
            while let Some(v) = cur {
                match state[v] {
                    2 => break,
                    1 => return Err(AstError::Cycle(v)),
                    _ => {
                        state[v] = 1;
                        chain.push(v);
                        cur = parent[v];
                    }
                }
            }
            for v in chain {
                state[v] = 2;
            }
        }

        let roots: Vec<NodeId> = (0..len).filter(|&v| parent[v].is_none()).collect();
        if roots.len() != 1 {
            return Err(AstError::Forest { roots });
        }

        // Iterative pre-order renumbering.
        let mut order = Vec::with_capacity(len);
        let mut stack = vec![roots[0]];
        while let Some(v) = stack.pop() {
            order.push(v);
            stack.extend(raw[v].children.iter().rev().copied());
        }
        debug_assert_eq!(order.len(), len);
        let mut new_id = vec![0; len];
        for (i, &old) in order.iter().enumerate() {
            new_id[old] = i;
        }

        let mut nodes = Vec::with_capacity(len);
        for (i, &old) in order.iter().enumerate() {
            let r = &raw[old];
            nodes.push(AstNode {
                id: i,
                kind: r.kind.clone(),
                value: r.value.clone(),
                children: r.children.iter().map(|&c| new_id[c]).collect(),
                parent: parent[old].map(|p| new_id[p]),
            });
        }
        Ok(Self::from_preorder_nodes(nodes))
    }

    /// Assumes `nodes` is already a consistent pre-order tree.
    fn from_preorder_nodes(nodes: Vec<AstNode>) -> Self {
        let n = nodes.len();
        let mut depth = vec![0; n];
        let mut child_index = vec![0; n];
        for v in 0..n {
            if let Some(p) = nodes[v].parent {
                depth[v] = depth[p] + 1;
            }
            for (k, &c) in nodes[v].children.iter().enumerate() {
                child_index[c] = k;
            }
        }
        let mut subtree_size = vec![1; n];
        for v in (0..n).rev() {
            if let Some(p) = nodes[v].parent {
                subtree_size[p] += subtree_size[v];
            }
        }
        Self {
            nodes,
            depth,
            subtree_size,
            child_index,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root(&self) -> NodeId {
        0
    }

    pub fn nodes(&self) -> &[AstNode] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &AstNode {
        &self.nodes[id]
    }

    pub fn depth(&self, id: NodeId) -> usize {
        self.depth[id]
    }

    pub fn depths(&self) -> &[usize] {
        &self.depth
    }

    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.nodes[id].parent
    }

    pub fn children(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id].children
    }

    /// Position of `id` in its parent's child list (0 for the root).
    pub fn child_index(&self, id: NodeId) -> usize {
        self.child_index[id]
    }

    pub fn subtree_size(&self, id: NodeId) -> usize {
        self.subtree_size[id]
    }

    pub fn height(&self) -> usize {
        self.depth.iter().copied().max().unwrap_or(0)
    }

    pub fn leaves(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().filter(|n| n.is_leaf()).map(|n| n.id)
    }

    fn check_id(&self, id: NodeId) -> Result<(), AstError> {
        if id < self.len() {
            Ok(())
        } else {
            Err(AstError::OutOfRange { id, len: self.len() })
        }
    }

    /// Strict ancestry: true iff `a` lies on the root-to-`b` path and `a != b`.
    pub fn is_ancestor(&self, a: NodeId, b: NodeId) -> Result<bool, AstError> {
        self.check_id(a)?;
        self.check_id(b)?;
        Ok(a < b && b < a + self.subtree_size[a])
    }

    /// Ancestors of `id`, nearest first, excluding `id` itself.
    pub fn ancestors(&self, id: NodeId) -> Ancestors<'_> {
        Ancestors {
            tree: self,
            next: self.nodes[id].parent,
        }
    }

    pub fn to_raw(&self) -> Vec<RawNode> {
        self.nodes
            .iter()
            .map(|n| RawNode {
                kind: n.kind.clone(),
                value: n.value.clone(),
                children: n.children.clone(),
            })
            .collect()
    }

    pub fn from_json(text: &str) -> Result<Self, AstError> {
        let doc: Value = serde_json::from_str(text).map_err(|e| AstError::Schema {
            path: "$".into(),
            message: e.to_string(),
        })?;
        Self::from_json_value(&doc)
    }

    pub fn from_json_value(doc: &Value) -> Result<Self, AstError> {
        let mut raw = Vec::new();
        // (json node, path, slot in raw to fill)
        let mut stack: Vec<(&Value, String, usize)> = vec![(doc, "$".into(), 0)];
        raw.push(RawNode::new("?", None, vec![]));
        while let Some((value, path, slot)) = stack.pop() {
            let obj = value.as_object().ok_or_else(|| schema(&path, "expected an object"))?;
            for key in obj.keys() {
                if !matches!(key.as_str(), "kind" | "value" | "children") {
                    return Err(schema(&path, &format!("unknown field `{key}`")));
                }
            }
            let kind = match obj.get("kind") {
                Some(Value::String(s)) if !s.is_empty() => s.clone(),
                Some(Value::String(_)) => return Err(schema(&format!("{path}.kind"), "empty kind")),
                Some(_) => return Err(schema(&format!("{path}.kind"), "expected a string")),
                None => return Err(schema(&path, "missing field `kind`")),
            };
            let value = match obj.get("value") {
                None | Some(Value::Null) => None,
                Some(Value::String(s)) => Some(s.clone()),
                Some(_) => return Err(schema(&format!("{path}.value"), "expected a string")),
            };
            let children = match obj.get("children") {
                None | Some(Value::Null) => &[][..],
                Some(Value::Array(a)) => a.as_slice(),
                Some(_) => return Err(schema(&format!("{path}.children"), "expected an array")),
            };
            let mut ids = Vec::with_capacity(children.len());
            for (k, child) in children.iter().enumerate() {
                let id = raw.len();
                raw.push(RawNode::new("?", None, vec![]));
                ids.push(id);
                stack.push((child, format!("{path}.children[{k}]"), id));
            }
            raw[slot] = RawNode {
                kind,
                value,
                children: ids,
            };
        }
        Self::build(raw)
    }

    pub fn to_json_value(&self) -> Value {
        // Built bottom-up so deep trees do not recurse.
        let mut built: Vec<Option<Value>> = vec![None; self.len()];
        for v in (0..self.len()).rev() {
            let node = &self.nodes[v];
            let mut obj = serde_json::Map::new();
            obj.insert("kind".into(), Value::String(node.kind.clone()));
            if let Some(val) = &node.value {
                obj.insert("value".into(), Value::String(val.clone()));
            }
            let children = node
                .children
                .iter()
                .map(|&c| built[c].take().expect("child built before parent"))
                .collect();
            obj.insert("children".into(), Value::Array(children));
            built[v] = Some(Value::Object(obj));
        }
        built[0].take().expect("root")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_json_value()).expect("AST values always serialize")
    }

    /// Deterministic random tree with exactly `n` nodes and at most
    /// `max_branch` children per node.
    pub fn random(seed: u64, n: usize, max_branch: usize) -> Self {
        assert!(n >= 1 && max_branch >= 1, "random tree needs n >= 1 and max_branch >= 1");
        const KINDS: [&str; 6] = ["Block", "If", "Call", "BinaryOp", "Identifier", "IntLiteral"];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut raw = vec![RawNode::new("Root", None, vec![])];
        let mut open: Vec<NodeId> = vec![0];
        for id in 1..n {
            // Mix uniform attachment with attachment to recent nodes so both
            // bushy and deep shapes appear.
            let pick = if rng.gen_bool(0.5) {
                rng.gen_range(0..open.len())
            } else {
                open.len() - 1 - rng.gen_range(0..open.len().min(3))
            };
            let parent = open[pick];
            raw[parent].children.push(id);
            if raw[parent].children.len() == max_branch {
                open.remove(pick);
            }
            let kind = KINDS[rng.gen_range(0..KINDS.len())];
            let value = rng.gen_bool(0.3).then(|| format!("v{}", rng.gen_range(0..10)));
            raw.push(RawNode {
                kind: kind.to_owned(),
                value,
                children: vec![],
            });
            open.push(id);
        }
        Self::build(raw).expect("generated trees are valid")
    }
}

fn schema(path: &str, message: &str) -> AstError {
    AstError::Schema {
        path: path.to_owned(),
        message: message.to_owned(),
    }
}

pub struct Ancestors<'a> {
    tree: &'a AstTree,
    next: Option<NodeId>,
}

impl Iterator for Ancestors<'_> {
    type Item = NodeId;

    fn next(&mut self) -> Option<NodeId> {
        let cur = self.next?;
        self.next = self.tree.nodes[cur].parent;
        Some(cur)
    }
}
