use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::kernel::parity_odd;
use crate::params::ModelParams;
use crate::spectrum::{in_lambda, Mode};

use super::{Node, NodeKind, NodeType, Tree};

/// Largest number of trees materialized for a single (order, mode) request.
pub const DEFAULT_TREE_CAP: usize = 4_000_000;

/// Node list in post-order; the last node is the root.
#[derive(Debug, Clone)]
struct Frag {
    nodes: Vec<Node>,
    special: Option<usize>,
}

impl Frag {
    fn single(kind: NodeKind, mode: Mode) -> Self {
        let special = matches!(kind, NodeKind::Special).then_some(0);
        Frag { nodes: vec![Node { kind, mode, parent: None, children: Vec::new() }], special }
    }

    fn join(kind: NodeKind, mode: Mode, parts: &[&Frag]) -> Self {
        let total: usize = parts.iter().map(|p| p.nodes.len()).sum::<usize>() + 1;
        let mut nodes = Vec::with_capacity(total);
        let mut special = None;
        let mut children = Vec::with_capacity(parts.len());
        let root = total - 1;
        for part in parts {
            let off = nodes.len();
            for node in &part.nodes {
                nodes.push(Node {
                    kind: node.kind,
                    mode: node.mode,
                    parent: Some(node.parent.map_or(root, |p| p + off)),
                    children: node.children.iter().map(|c| c + off).collect(),
                });
            }
            if let Some(s) = part.special {
                special = Some(s + off);
            }
            children.push(off + part.nodes.len() - 1);
        }
        nodes.push(Node { kind, mode, parent: None, children });
        Frag { nodes, special }
    }

    fn into_tree(self) -> Tree {
        let root = self.nodes.len() - 1;
        Tree { nodes: self.nodes, root, special: self.special }
    }
}

type Memo<K> = HashMap<K, Arc<Vec<Frag>>>;

/// Memoized generator of labelled planar trees.
///
/// Trees obey the labelling rules of the expansion: end-points carry `(+-1, 1)`,
/// internal lines never do, momentum is conserved at every node, spatial labels
/// satisfy the kernel parity, and counterterm nodes appear only on near-resonant
/// modes with `n != 0`.
pub struct Enumerator<'a> {
    params: &'a ModelParams,
    mmax: u32,
    cap: usize,
    plain: Memo<(usize, Mode)>,
    rooted: Memo<(usize, Mode, Mode)>,
}

impl<'a> Enumerator<'a> {
    pub fn new(params: &'a ModelParams, mmax: u32) -> Self {
        Enumerator { params, mmax, cap: DEFAULT_TREE_CAP, plain: HashMap::new(), rooted: HashMap::new() }
    }

    pub fn with_cap(mut self, cap: usize) -> Self {
        self.cap = cap;
        self
    }

    fn counterterm_allowed(&self, mode: Mode) -> bool {
        mode.n != 0 && !mode.is_amplitude() && in_lambda(mode, self.params)
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len > self.cap {
            Err(Error::CombinatorialBlowup { limit: self.cap })
        } else {
            Ok(())
        }
    }

    /// All trees of order `k` whose root line carries `mode`.
    pub fn trees(&mut self, k: usize, mode: Mode) -> Result<Vec<Tree>> {
        Ok(self.plain(k, mode)?.iter().cloned().map(Frag::into_tree).collect())
    }

    /// All counterterm trees of order `k` for `mode` (special node of the same mode).
    pub fn r_trees(&mut self, k: usize, mode: Mode) -> Result<Vec<Tree>> {
        if mode.is_amplitude() {
            return Err(Error::Precondition(
                "counterterm trees are not defined on the amplitude modes".into(),
            ));
        }
        let frags = self.rooted(k, mode, mode)?;
        Ok(frags
            .iter()
            .filter(|f| {
                // A lone counterterm node on the special line is a single-node cluster.
                let root = f.nodes.last().unwrap();
                !(matches!(root.kind, NodeKind::Unary { .. })
                    && f.nodes[root.children[0]].kind == NodeKind::Special)
            })
            .cloned()
            .map(Frag::into_tree)
            .collect())
    }

    fn plain(&mut self, k: usize, mode: Mode) -> Result<Arc<Vec<Frag>>> {
        if let Some(v) = self.plain.get(&(k, mode)) {
            return Ok(v.clone());
        }
        let mut out = Vec::new();
        if k == 0 {
            if mode.is_amplitude() {
                out.push(Frag::single(NodeKind::Leaf, mode));
            }
        } else if !mode.is_amplitude() && mode.n.unsigned_abs() as usize <= k + 1 && mode.m <= self.mmax {
            for t in [NodeType::A, NodeType::B] {
                for k1 in 0..k {
                    let k2 = k - 1 - k1;
                    let r1 = (k1 + 1) as i32;
                    for n1 in -r1..=r1 {
                        let n2 = mode.n - n1;
                        if n2.unsigned_abs() as usize > k2 + 1 {
                            continue;
                        }
                        for m1 in 1..=self.mmax {
                            let left = self.plain(k1, Mode::new(n1, m1))?;
                            if left.is_empty() {
                                continue;
                            }
                            for m2 in 1..=self.mmax {
                                if !parity_odd(mode.m, m1, m2) {
                                    continue;
                                }
                                let right = self.plain(k2, Mode::new(n2, m2))?;
                                self.check_len(out.len() + left.len() * right.len())?;
                                for l in left.iter() {
                                    for r in right.iter() {
                                        out.push(Frag::join(NodeKind::Binary(t), mode, &[l, r]));
                                    }
                                }
                            }
                        }
                    }
                }
            }
            if self.counterterm_allowed(mode) {
                for r in 2..k {
                    let child = self.plain(k - r, mode)?;
                    self.check_len(out.len() + child.len())?;
                    for c in child.iter() {
                        out.push(Frag::join(NodeKind::Unary { order: r }, mode, &[c]));
                    }
                }
            }
        }
        let out = Arc::new(out);
        self.plain.insert((k, mode), out.clone());
        Ok(out)
    }

    /// Subtrees of order `k` with root line `mode` containing exactly one special node of mode `e`.
    fn rooted(&mut self, k: usize, mode: Mode, e: Mode) -> Result<Arc<Vec<Frag>>> {
        if let Some(v) = self.rooted.get(&(k, mode, e)) {
            return Ok(v.clone());
        }
        let mut out = Vec::new();
        if k == 0 {
            if mode == e {
                out.push(Frag::single(NodeKind::Special, mode));
            }
        } else if !mode.is_amplitude() && (mode.n - e.n).unsigned_abs() as usize <= k && mode.m <= self.mmax {
            for t in [NodeType::A, NodeType::B] {
                for k1 in 0..k {
                    let k2 = k - 1 - k1;
                    // Special node in the first subtree.
                    let r1 = k1 as i32;
                    for n1 in (e.n - r1)..=(e.n + r1) {
                        let n2 = mode.n - n1;
                        if n2.unsigned_abs() as usize > k2 + 1 {
                            continue;
                        }
                        for m1 in 1..=self.mmax {
                            let left = self.rooted(k1, Mode::new(n1, m1), e)?;
                            if left.is_empty() {
                                continue;
                            }
                            for m2 in 1..=self.mmax {
                                if !parity_odd(mode.m, m1, m2) {
                                    continue;
                                }
                                let right = self.plain(k2, Mode::new(n2, m2))?;
                                self.check_len(out.len() + left.len() * right.len())?;
                                for l in left.iter() {
                                    for r in right.iter() {
                                        out.push(Frag::join(NodeKind::Binary(t), mode, &[l, r]));
                                    }
                                }
                            }
                        }
                    }
                    // Special node in the second subtree.
                    let r1 = (k1 + 1) as i32;
                    for n1 in -r1..=r1 {
                        let n2 = mode.n - n1;
                        if (n2 - e.n).unsigned_abs() as usize > k2 {
                            continue;
                        }
                        for m1 in 1..=self.mmax {
                            let left = self.plain(k1, Mode::new(n1, m1))?;
                            if left.is_empty() {
                                continue;
                            }
                            for m2 in 1..=self.mmax {
                                if !parity_odd(mode.m, m1, m2) {
                                    continue;
                                }
                                let right = self.rooted(k2, Mode::new(n2, m2), e)?;
                                self.check_len(out.len() + left.len() * right.len())?;
                                for l in left.iter() {
                                    for r in right.iter() {
                                        out.push(Frag::join(NodeKind::Binary(t), mode, &[l, r]));
                                    }
                                }
                            }
                        }
                    }
                }
            }
            if self.counterterm_allowed(mode) {
                for r in 2..k {
                    let child = self.rooted(k - r, mode, e)?;
                    self.check_len(out.len() + child.len())?;
                    for c in child.iter() {
                        out.push(Frag::join(NodeKind::Unary { order: r }, mode, &[c]));
                    }
                }
            }
        }
        let out = Arc::new(out);
        self.rooted.insert((k, mode, e), out.clone());
        Ok(out)
    }
}

/// Trees of order `k` with root mode `mode` and spatial labels up to `mmax`.
pub fn enumerate_trees(k: usize, mode: Mode, params: &ModelParams, mmax: u32) -> Result<Vec<Tree>> {
    Enumerator::new(params, mmax).trees(k, mode)
}

/// Counterterm trees of order `k` for `mode` with spatial labels up to `mmax`.
pub fn enumerate_r_trees(k: usize, mode: Mode, params: &ModelParams, mmax: u32) -> Result<Vec<Tree>> {
    Enumerator::new(params, mmax).r_trees(k, mode)
}
