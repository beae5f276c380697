//! Scale profiles of labelled trees and the line-counting inequalities.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::spectrum::{in_lambda, Frame};
use crate::trees::{detect_resonances, NodeKind, Tree};

pub use crate::trees::admissible_scales;

/// Line counts per scale `h >= 0` (index `h`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ScaleProfile {
    /// Lines with scale `>= h`.
    pub n: Vec<usize>,
    /// Non-resonant lines with scale `>= h`.
    pub n_star: Vec<usize>,
    /// Number of non-resonant lines.
    pub k: usize,
    /// Number of resonant lines (exiting a resonance or a counterterm node).
    pub resonant: usize,
    /// Resonances whose external scale equals `h`.
    pub s: Vec<usize>,
    /// Counterterm nodes whose exiting line has scale `h`.
    pub m: Vec<usize>,
    /// Lines with scale exactly `h`.
    pub shells: Vec<usize>,
}

impl ScaleProfile {
    pub fn max_scale(&self) -> i32 {
        self.n.len() as i32 - 1
    }

    fn at(v: &[usize], h: i32) -> usize {
        if h < 0 {
            return 0;
        }
        v.get(h as usize).copied().unwrap_or(0)
    }

    pub fn n_at(&self, h: i32) -> usize {
        Self::at(&self.n, h)
    }

    pub fn s_at(&self, h: i32) -> usize {
        Self::at(&self.s, h)
    }

    pub fn m_at(&self, h: i32) -> usize {
        Self::at(&self.m, h)
    }
}

/// Lines entering the counts: every line with a scale label (for a
/// counterterm tree the root line and the special line are excluded).
fn counted_lines(tree: &Tree) -> Vec<usize> {
    (0..tree.nodes.len()).filter(|&id| tree.has_scale(id)).collect()
}

pub fn profile(tree: &Tree, scales: &[i32], frame: &Frame) -> ScaleProfile {
    let lines = counted_lines(tree);
    let resonances = detect_resonances(tree, scales, frame.params);
    let mut resonant_line = vec![false; tree.nodes.len()];
    for r in &resonances {
        resonant_line[r.exiting] = true;
    }
    for (id, node) in tree.nodes.iter().enumerate() {
        if matches!(node.kind, NodeKind::Unary { .. }) {
            resonant_line[id] = true;
        }
    }
    let top = lines.iter().map(|&l| scales[l]).max().unwrap_or(-1).max(-1);
    let len = (top + 1) as usize;
    let mut shells = vec![0usize; len];
    let mut shells_star = vec![0usize; len];
    let mut k = 0;
    let mut resonant = 0;
    for &l in &lines {
        let is_res = resonant_line[l];
        if is_res {
            resonant += 1;
        } else {
            k += 1;
        }
        if scales[l] >= 0 {
            shells[scales[l] as usize] += 1;
            if !is_res {
                shells_star[scales[l] as usize] += 1;
            }
        }
    }
    let suffix = |v: &[usize]| -> Vec<usize> {
        let mut out = vec![0; v.len()];
        let mut acc = 0;
        for i in (0..v.len()).rev() {
            acc += v[i];
            out[i] = acc;
        }
        out
    };
    let mut s = vec![0usize; len];
    for r in &resonances {
        let line_scale = |id: usize| if tree.has_scale(id) { scales[id] } else { -1 };
        let h = line_scale(r.exiting).min(line_scale(r.entering));
        if h >= 0 && (h as usize) < len {
            s[h as usize] += 1;
        }
    }
    let mut m = vec![0usize; len];
    for (id, node) in tree.nodes.iter().enumerate() {
        if matches!(node.kind, NodeKind::Unary { .. }) && tree.has_scale(id) && scales[id] >= 0 {
            m[scales[id] as usize] += 1;
        }
    }
    ScaleProfile { n: suffix(&shells), n_star: suffix(&shells_star), k, resonant, s, m, shells }
}

/// Number of lines with scale `>= h` counted directly from the labels.
pub fn count_lines_at_or_above(tree: &Tree, scales: &[i32], h: i32) -> usize {
    counted_lines(tree).into_iter().filter(|&l| scales[l] >= h).count()
}

/// The Melnikov conditions restricted to the lines of a tree.
///
/// Single lines with `n != 0`, `m >= 2` need `|x| >= gamma |n|^-tau`; pairs of
/// near-resonant lines with `n1 != n2`, `m1 != m2` need the two-frequency
/// divisors above `gamma |n1 - n2|^-tau`. For a counterterm tree, path lines
/// are exempt from the single-line condition and pairs must lie both on or
/// both off the path.
pub fn tree_melnikov(tree: &Tree, frame: &Frame) -> Result<bool> {
    let params = frame.params;
    let (gamma, tau) = (params.gamma, params.tau);
    let path = tree.special_path();
    let lines: Vec<usize> = counted_lines(tree).into_iter().filter(|&l| !tree.nodes[l].is_end()).collect();
    for &l in &lines {
        let mode = tree.nodes[l].mode;
        if mode.n == 0 || mode.m < 2 || path.contains(&l) {
            continue;
        }
        if frame.x(mode)?.abs() < gamma * f64::from(mode.n.abs()).powf(-tau) {
            return Ok(false);
        }
    }
    for (i, &l1) in lines.iter().enumerate() {
        for &l2 in &lines[i + 1..] {
            let (a, b) = (tree.nodes[l1].mode, tree.nodes[l2].mode);
            if a.n == b.n || a.m == b.m || a.n == 0 || b.n == 0 {
                continue;
            }
            if !in_lambda(a, params) || !in_lambda(b, params) {
                continue;
            }
            if tree.is_r_tree() && path.contains(&l1) != path.contains(&l2) {
                continue;
            }
            let (r1, r2) = (frame.radicand(a)?.sqrt(), frame.radicand(b)?.sqrt());
            let base = frame.omega * f64::from(b.n - a.n);
            let bound = gamma * f64::from((b.n - a.n).abs()).powf(-tau);
            for (s1, s2) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                if (base + s1 * r1 + s2 * r2).abs() < bound {
                    return Ok(false);
                }
            }
        }
    }
    Ok(true)
}

fn precondition(tree: &Tree, frame: &Frame) -> Result<()> {
    if tree_melnikov(tree, frame)? {
        Ok(())
    } else {
        Err(Error::Precondition("the evaluation point violates the Melnikov conditions on this tree".into()))
    }
}

/// `N_h <= max(0, 2 K 2^{(2-h)/tau} - 1) + S_h + M_h` for every `h >= 0`.
pub fn bruno_holds(p: &ScaleProfile, tau: f64) -> bool {
    (0..=p.max_scale()).all(|h| {
        let bound = (2.0 * p.k as f64 * 2f64.powf((2.0 - f64::from(h)) / tau) - 1.0).max(0.0);
        p.n_at(h) as f64 <= bound + (p.s_at(h) + p.m_at(h)) as f64
    })
}

/// `N_h <= 2 (K - 1) 2^{(2-h)/tau} + S_h + M_h` for every `h >= 0`.
pub fn bruno_r_holds(p: &ScaleProfile, tau: f64) -> bool {
    (0..=p.max_scale()).all(|h| {
        let bound = 2.0 * (p.k as f64 - 1.0) * 2f64.powf((2.0 - f64::from(h)) / tau);
        p.n_at(h) as f64 <= bound + (p.s_at(h) + p.m_at(h)) as f64
    })
}

/// Line-counting inequality for a tree with scales; the point must satisfy
/// the Melnikov conditions along the tree.
pub fn check_bruno(tree: &Tree, scales: &[i32], frame: &Frame) -> Result<bool> {
    precondition(tree, frame)?;
    Ok(bruno_holds(&profile(tree, scales, frame), frame.params.tau))
}

/// Line-counting inequality for a counterterm tree (path lines labelled by
/// their localized divisors).
pub fn check_bruno_r(tree: &Tree, scales: &[i32], frame: &Frame) -> Result<bool> {
    if !tree.is_r_tree() {
        return Err(Error::Precondition("expected a counterterm tree".into()));
    }
    precondition(tree, frame)?;
    Ok(bruno_r_holds(&profile(tree, scales, frame), frame.params.tau))
}

/// Text report of a violation: the tree dump with its scales and the profile.
pub fn violation_report(tree: &Tree, scales: &[i32], frame: &Frame) -> String {
    let p = profile(tree, scales, frame);
    format!("{}N_h = {:?}, K = {}, S_h = {:?}, M_h = {:?}\n", tree.dump(Some(scales)), p.n, p.k, p.s, p.m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ModelParams;
    use crate::spectrum::{Mode, NuTable};
    use crate::trees::{enumerate_trees, NodeType, TreeBuilder};

    fn order_one() -> Tree {
        let mut b = TreeBuilder::new();
        let l1 = b.leaf(1);
        let l2 = b.leaf(1);
        let r = b.binary(NodeType::A, 3, l1, l2);
        b.finish(r)
    }

    #[test]
    fn large_divisors_give_the_trivial_labelling() {
        let p = ModelParams::default();
        let nu = NuTable::zero();
        let frame = Frame::new(&p, 0.01, &nu);
        let t = order_one();
        let all = admissible_scales(&t, &frame).unwrap();
        assert_eq!(all, vec![vec![-1, -1, -1]]);
        let prof = profile(&t, &all[0], &frame);
        assert!(prof.n.is_empty());
        assert!(check_bruno(&t, &all[0], &frame).unwrap());
    }

    #[test]
    fn isolated_high_scale_line_violates_the_bound() {
        let p = ModelParams::default();
        let nu = NuTable::zero();
        let frame = Frame::new(&p, 0.01, &nu);
        let t = order_one();
        let scales = vec![-1, -1, 20];
        assert!(!check_bruno(&t, &scales, &frame).unwrap());
        assert!(!admissible_scales(&t, &frame).unwrap().contains(&scales));
    }

    #[test]
    fn counts_partition_the_lines() {
        let p = ModelParams::default();
        let nu = NuTable::zero();
        let frame = Frame::new(&p, 0.01, &nu);
        for t in enumerate_trees(2, Mode::new(1, 3), &p, 5).unwrap() {
            for s in admissible_scales(&t, &frame).unwrap() {
                let prof = profile(&t, &s, &frame);
                assert_eq!(prof.k + prof.resonant, t.nodes.len());
            }
        }
    }

    #[test]
    fn hand_tally_on_an_order_four_tree() {
        let mut b = TreeBuilder::new();
        let l1 = b.leaf(1);
        let l2 = b.leaf(1);
        let v1 = b.binary(NodeType::A, 3, l1, l2);
        let l3 = b.leaf(1);
        let l4 = b.leaf(-1);
        let v2 = b.binary(NodeType::B, 1, l3, l4);
        let w = b.binary(NodeType::A, 5, v1, v2);
        let l5 = b.leaf(-1);
        let root = b.binary(NodeType::A, 3, w, l5);
        let t = b.finish(root);
        t.check_structure().unwrap();
        assert_eq!(t.order(), 4);
        let mut scales = vec![-1; t.nodes.len()];
        scales[v1] = 3;
        scales[v2] = 0;
        scales[w] = 2;
        scales[root] = 2;
        let p = ModelParams::default();
        let nu = NuTable::zero();
        let frame = Frame::new(&p, 0.01, &nu);
        let prof = profile(&t, &scales, &frame);
        assert_eq!(prof.n, vec![4, 3, 3, 1]);
        assert_eq!(prof.n_star, prof.n);
        assert_eq!(prof.s, vec![0; 4]);
        assert_eq!(prof.m, vec![0; 4]);
        assert_eq!(prof.k, 9);
        assert_eq!(prof.shells, vec![1, 0, 2, 1]);
        for h in 0..4 {
            assert_eq!(prof.n_at(h), count_lines_at_or_above(&t, &scales, h));
        }
    }
}
