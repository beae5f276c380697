use std::collections::BTreeSet;

use serde::Serialize;

use crate::params::ModelParams;
use crate::spectrum::{in_lambda, Mode};

use super::Tree;

/// Maximal connected set of nodes joined by lines of scale `<= scale`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Cluster {
    /// Largest scale among the internal lines (`-1` when there are none).
    pub scale: i32,
    /// Node ids, sorted.
    pub nodes: Vec<usize>,
    /// Internal lines (identified by the node they leave).
    pub lines: Vec<usize>,
    /// Lines entering the cluster from outside.
    pub entering: Vec<usize>,
    /// Node whose line leaves the cluster.
    pub top: usize,
}

/// A cluster with a single entering line carrying the same mode as the exiting line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ResonanceView {
    pub cluster: Cluster,
    pub entering: usize,
    pub exiting: usize,
    pub mode: Mode,
    /// Internal lines on the path from the entering line to the exiting line.
    pub path: Vec<usize>,
    /// Whether the localization is nonzero: the mode is near-resonant with
    /// `n != 0` and no internal line carries the external mode.
    pub localizable: bool,
}

fn line_scale(tree: &Tree, scales: &[i32], id: usize) -> i32 {
    if tree.has_scale(id) {
        scales[id]
    } else {
        -1
    }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// All clusters of a scale labelling, ordered by size, single nodes included.
pub fn detect_clusters(tree: &Tree, scales: &[i32]) -> Vec<Cluster> {
    let n = tree.nodes.len();
    let mut thresholds: BTreeSet<i32> = BTreeSet::new();
    thresholds.insert(-1);
    for id in 0..n {
        if id != tree.root {
            thresholds.insert(line_scale(tree, scales, id));
        }
    }
    let mut seen: BTreeSet<Vec<usize>> = BTreeSet::new();
    let mut out = Vec::new();
    for &h in &thresholds {
        let mut parent: Vec<usize> = (0..n).collect();
        for id in 0..n {
            if let Some(p) = tree.nodes[id].parent {
                if line_scale(tree, scales, id) <= h {
                    let (a, b) = (find(&mut parent, id), find(&mut parent, p));
                    parent[a] = b;
                }
            }
        }
        let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
        for id in 0..n {
            let r = find(&mut parent, id);
            groups.entry(r).or_default().push(id);
        }
        for nodes in groups.into_values() {
            if !seen.insert(nodes.clone()) {
                continue;
            }
            let inside: BTreeSet<usize> = nodes.iter().copied().collect();
            let top = *nodes
                .iter()
                .find(|&&v| tree.nodes[v].parent.is_none_or(|p| !inside.contains(&p)))
                .expect("a connected set of tree nodes has a top node");
            let lines: Vec<usize> = nodes.iter().copied().filter(|&v| v != top).collect();
            let scale = lines.iter().map(|&l| line_scale(tree, scales, l)).max().unwrap_or(-1);
            let entering = nodes
                .iter()
                .flat_map(|&v| tree.nodes[v].children.iter().copied())
                .filter(|c| !inside.contains(c))
                .collect();
            out.push(Cluster { scale, nodes, lines, entering, top });
        }
    }
    out.sort_by_key(|c| (c.nodes.len(), c.top));
    out
}

/// Resonances of a scale labelling, innermost first.
pub fn detect_resonances(tree: &Tree, scales: &[i32], params: &ModelParams) -> Vec<ResonanceView> {
    let mut out = Vec::new();
    for cluster in detect_clusters(tree, scales) {
        if cluster.nodes.len() < 2 || cluster.entering.len() != 1 {
            continue;
        }
        let top = cluster.top;
        if top == tree.root && (tree.is_r_tree() || scales[top] <= cluster.scale) {
            continue;
        }
        let entering = cluster.entering[0];
        let mode = tree.nodes[top].mode;
        if tree.nodes[entering].mode != mode {
            continue;
        }
        let mut path = Vec::new();
        let mut cur = tree.nodes[entering].parent;
        while let Some(v) = cur {
            if v == top {
                break;
            }
            path.push(v);
            cur = tree.nodes[v].parent;
        }
        let localizable = mode.n != 0
            && in_lambda(mode, params)
            && cluster.lines.iter().all(|&l| tree.nodes[l].mode != mode);
        out.push(ResonanceView { cluster, entering, exiting: top, mode, path, localizable });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trees::{NodeType, TreeBuilder};

    /// Tree where the block under `w` is entered by `v2` with the mode leaving `w`.
    fn chain() -> (Tree, [usize; 3]) {
        let mut b = TreeBuilder::new();
        let l1 = b.leaf(1);
        let l2 = b.leaf(1);
        let v2 = b.binary(NodeType::A, 3, l1, l2);
        let l3 = b.leaf(1);
        let l4 = b.leaf(-1);
        let v1 = b.binary(NodeType::A, 1, l3, l4);
        let w = b.binary(NodeType::A, 3, v2, v1);
        let l5 = b.leaf(1);
        let l6 = b.leaf(-1);
        let u = b.binary(NodeType::A, 1, l5, l6);
        let root = b.binary(NodeType::A, 3, w, u);
        (b.finish(root), [v2, w, root])
    }

    #[test]
    fn all_low_scales_give_one_cluster() {
        let (t, _) = chain();
        let scales = vec![-1; t.nodes.len()];
        let clusters = detect_clusters(&t, &scales);
        assert_eq!(clusters.last().unwrap().nodes.len(), t.nodes.len());
        assert!(detect_resonances(&t, &scales, &crate::ModelParams::default()).is_empty());
    }

    #[test]
    fn isolated_block_is_a_resonance() {
        let (t, [v2, w, root]) = chain();
        let mut scales = vec![-1; t.nodes.len()];
        // Lines v2 -> w and w -> root at a high scale isolate the block under w;
        // the low root line keeps the top block from being a resonance too.
        scales[v2] = 5;
        scales[w] = 5;
        scales[root] = -1;
        let res = detect_resonances(&t, &scales, &crate::ModelParams::default());
        assert_eq!(res.len(), 1);
        let r = &res[0];
        assert_eq!(r.entering, v2);
        assert_eq!(r.exiting, w);
        assert_eq!(r.mode, Mode::new(2, 3));
        assert!(r.path.is_empty());
        assert_eq!(r.cluster.scale, -1);
        // A high root line makes the top block resonant as well.
        scales[root] = 6;
        assert_eq!(detect_resonances(&t, &scales, &crate::ModelParams::default()).len(), 2);
    }

    #[test]
    fn single_node_cluster_is_never_a_resonance() {
        let mut b = TreeBuilder::new();
        let l1 = b.leaf(1);
        let l2 = b.leaf(1);
        let v = b.binary(NodeType::A, 3, l1, l2);
        let c = b.unary(2, v);
        let l3 = b.leaf(1);
        let l4 = b.leaf(-1);
        let u = b.binary(NodeType::A, 1, l3, l4);
        let root = b.binary(NodeType::A, 3, c, u);
        let t = b.finish(root);
        let mut scales = vec![-1; t.nodes.len()];
        scales[v] = 4;
        scales[c] = 4;
        let clusters = detect_clusters(&t, &scales);
        assert!(clusters.iter().any(|cl| cl.nodes == vec![c] && cl.entering == vec![v]));
        assert!(detect_resonances(&t, &scales, &crate::ModelParams::default()).is_empty());
    }
}
