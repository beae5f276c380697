//! Tree expansion of the Lindstedt coefficients.
//!
//! A tree is stored as an arena of nodes. Every node has exactly one exiting
//! line, so lines are identified with the node they leave; the line leaving the
//! root node is the root line. Children are ordered (planar trees), which makes
//! the tree sum reproduce the ordered convolution of the recursion term by term.

mod cluster;
mod enumerate;
mod renorm;
mod value;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::spectrum::{LineKind, Mode};

pub use cluster::{detect_clusters, detect_resonances, Cluster, ResonanceView};
pub use enumerate::{enumerate_r_trees, enumerate_trees, Enumerator, DEFAULT_TREE_CAP};
pub use renorm::{
    counterterm, counterterm_shells, counterterm_table, renormalized_sum, sum_trees,
    CountertermOptions,
};
pub use value::{
    admissible_scales, extended_value, localize_split, renormalized_value, tree_value,
    CountertermScale, Evaluator, LineShift,
};

/// Type label of a node with two entering lines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeType {
    A,
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    /// Ordinary end-point with mode `(+-1, 1)` and factor `q`.
    Leaf,
    /// Distinguished end-point of a counterterm tree, factor `1/m^3`.
    Special,
    /// Node with two entering lines and order 1.
    Binary(NodeType),
    /// Counterterm node with one entering line and order `>= 2`.
    Unary { order: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Node {
    pub kind: NodeKind,
    /// Mode of the line leaving this node.
    pub mode: Mode,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
}

impl Node {
    pub fn order(&self) -> usize {
        match self.kind {
            NodeKind::Leaf | NodeKind::Special => 0,
            NodeKind::Binary(_) => 1,
            NodeKind::Unary { order } => order,
        }
    }

    pub fn is_end(&self) -> bool {
        matches!(self.kind, NodeKind::Leaf | NodeKind::Special)
    }
}

/// Rooted planar tree with mode and type labels. Scale labels are kept
/// separately (one per line, indexed by node id).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
    pub root: usize,
    /// The distinguished end node of a counterterm tree.
    pub special: Option<usize>,
}

impl Tree {
    pub fn order(&self) -> usize {
        self.nodes.iter().map(Node::order).sum()
    }

    pub fn root_mode(&self) -> Mode {
        self.nodes[self.root].mode
    }

    pub fn is_r_tree(&self) -> bool {
        self.special.is_some()
    }

    /// Kind of the line leaving node `id`: a b-line if it enters a type-b node.
    pub fn line_kind(&self, id: usize) -> LineKind {
        match self.nodes[id].parent.map(|p| self.nodes[p].kind) {
            Some(NodeKind::Binary(NodeType::B)) => LineKind::B,
            _ => LineKind::A,
        }
    }

    /// Whether the line leaving `id` carries a scale label: every line except
    /// the root line and the special line of a counterterm tree.
    pub fn has_scale(&self, id: usize) -> bool {
        !(self.is_r_tree() && (id == self.root || Some(id) == self.special))
    }

    /// Lines strictly inside the path from the special node to the root of a
    /// counterterm tree (the special line and the root line excluded).
    pub fn special_path(&self) -> Vec<usize> {
        let mut out = Vec::new();
        if let Some(e) = self.special {
            let mut cur = self.nodes[e].parent;
            while let Some(v) = cur {
                if v == self.root {
                    break;
                }
                out.push(v);
                cur = self.nodes[v].parent;
            }
        }
        out
    }

    /// Momentum conservation and leaf-mode checks.
    pub fn check_structure(&self) -> Result<(), String> {
        for (id, node) in self.nodes.iter().enumerate() {
            let sum: i32 = node.children.iter().map(|&c| self.nodes[c].mode.n).sum();
            match node.kind {
                NodeKind::Leaf => {
                    if !node.mode.is_amplitude() || !node.children.is_empty() {
                        return Err(format!("node {id}: malformed end-point"));
                    }
                }
                NodeKind::Special => {
                    if !node.children.is_empty() {
                        return Err(format!("node {id}: special node has children"));
                    }
                }
                NodeKind::Binary(_) => {
                    if node.children.len() != 2 || sum != node.mode.n {
                        return Err(format!("node {id}: momentum not conserved"));
                    }
                }
                NodeKind::Unary { order } => {
                    if node.children.len() != 1
                        || self.nodes[node.children[0]].mode != node.mode
                        || order < 2
                    {
                        return Err(format!("node {id}: malformed counterterm node"));
                    }
                }
            }
            if !node.is_end() && node.mode.is_amplitude() {
                return Err(format!("node {id}: internal line carries an amplitude mode"));
            }
            for &c in &node.children {
                if self.nodes[c].parent != Some(id) {
                    return Err(format!("node {c}: parent link broken"));
                }
            }
        }
        Ok(())
    }

    /// Indented text dump, one node per line: id, kind, order, mode, scale.
    pub fn dump(&self, scales: Option<&[i32]>) -> String {
        let mut out = String::new();
        self.dump_node(self.root, 0, scales, &mut out);
        out
    }

    fn dump_node(&self, id: usize, depth: usize, scales: Option<&[i32]>, out: &mut String) {
        let node = &self.nodes[id];
        let kind = match node.kind {
            NodeKind::Leaf => "end".to_string(),
            NodeKind::Special => "special".to_string(),
            NodeKind::Binary(NodeType::A) => "a".to_string(),
            NodeKind::Binary(NodeType::B) => "b".to_string(),
            NodeKind::Unary { .. } => "counterterm".to_string(),
        };
        let scale = match scales {
            Some(s) if self.has_scale(id) => format!(" h={}", s[id]),
            Some(_) => " h=-".to_string(),
            None => String::new(),
        };
        let _ = writeln!(
            out,
            "{:indent$}{} {} k={} ({},{}){}",
            "",
            id,
            kind,
            node.order(),
            node.mode.n,
            node.mode.m,
            scale,
            indent = 2 * depth
        );
        for &c in &node.children {
            self.dump_node(c, depth + 1, scales, out);
        }
    }
}

/// Builder used by the enumerator and by hand-built trees in tests.
#[derive(Debug, Default, Clone)]
pub struct TreeBuilder {
    nodes: Vec<Node>,
    special: Option<usize>,
}

impl TreeBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn leaf(&mut self, n: i32) -> usize {
        self.push(NodeKind::Leaf, Mode::new(n, 1), Vec::new())
    }

    pub fn special(&mut self, mode: Mode) -> usize {
        let id = self.push(NodeKind::Special, mode, Vec::new());
        self.special = Some(id);
        id
    }

    pub fn binary(&mut self, t: NodeType, m: u32, left: usize, right: usize) -> usize {
        let n = self.nodes[left].mode.n + self.nodes[right].mode.n;
        self.push(NodeKind::Binary(t), Mode::new(n, m), vec![left, right])
    }

    pub fn unary(&mut self, order: usize, child: usize) -> usize {
        let mode = self.nodes[child].mode;
        self.push(NodeKind::Unary { order }, mode, vec![child])
    }

    fn push(&mut self, kind: NodeKind, mode: Mode, children: Vec<usize>) -> usize {
        let id = self.nodes.len();
        for &c in &children {
            self.nodes[c].parent = Some(id);
        }
        self.nodes.push(Node { kind, mode, parent: None, children });
        id
    }

    pub fn finish(self, root: usize) -> Tree {
        Tree { nodes: self.nodes, root, special: self.special }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builder_and_dump() {
        let mut b = TreeBuilder::new();
        let l1 = b.leaf(1);
        let l2 = b.leaf(1);
        let r = b.binary(NodeType::B, 3, l1, l2);
        let t = b.finish(r);
        t.check_structure().unwrap();
        assert_eq!(t.order(), 1);
        assert_eq!(t.root_mode(), Mode::new(2, 3));
        assert_eq!(t.line_kind(l1), LineKind::B);
        assert_eq!(t.line_kind(r), LineKind::A);
        let dump = t.dump(Some(&[-1, -1, -1]));
        assert_eq!(dump, "2 b k=1 (2,3) h=-1\n  0 end k=0 (1,1) h=-1\n  1 end k=0 (1,1) h=-1\n");
    }
}
