use crate::error::{Error, Result};
use crate::kernel::KernelTable;
use crate::series::CountertermTable;
use crate::spectrum::{chi_h, in_lambda, scales_checked, step_up, Frame, LineKind};

use super::cluster::{detect_resonances, ResonanceView};
use super::{NodeKind, NodeType, Tree};

/// Largest number of resonances expanded by the renormalization operator.
const MAX_RESONANCES: usize = 20;

/// Which counterterm a counterterm node uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CountertermScale {
    /// The summed counterterm `l_{n,m} = l_{n,m,-1}` (plain trees).
    Aggregate,
    /// The scale-restricted `l_{n,m,h}` with `h` the scale of the exiting line.
    Exiting,
}

/// Localized argument of a line: `Omega n` replaced by `Omega n0 + shift`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineShift {
    pub n0: i32,
    pub shift: f64,
}

/// Everything needed to evaluate tree values at one point `(eps, nu)`.
#[derive(Debug, Clone, Copy)]
pub struct Evaluator<'a> {
    pub frame: Frame<'a>,
    pub kernel: &'a KernelTable,
    /// Amplitude carried by each end-point.
    pub q: f64,
    /// Counterterms at unit amplitude; a node of order `r` carries `q^r` times the entry.
    pub counterterms: &'a CountertermTable,
    pub counterterm_scale: CountertermScale,
}

impl<'a> Evaluator<'a> {
    fn line_factor(&self, tree: &Tree, id: usize, h: i32, shift: Option<LineShift>) -> Result<f64> {
        let node = &tree.nodes[id];
        let mode = node.mode;
        let factor = match tree.line_kind(id) {
            LineKind::A => 1.0,
            LineKind::B => f64::from(mode.n),
        };
        if id == tree.root && tree.is_r_tree() {
            return Ok(1.0);
        }
        if !tree.has_scale(id) || mode.is_amplitude() {
            return Ok(factor);
        }
        let x = line_divisor(&self.frame, tree, id, shift)?;
        let c = chi_h(x, h, self.frame.params.gamma);
        if c == 0.0 {
            return Ok(0.0);
        }
        let d = match shift {
            None => self.frame.denominator(mode)?,
            Some(s) => self.frame.denominator_shifted(mode, s.n0, s.shift)?,
        };
        if d == 0.0 {
            return Err(Error::ResonantDivisor { n: mode.n, m: mode.m });
        }
        Ok(factor * c / d)
    }

    fn node_factor(&self, tree: &Tree, id: usize, scales: &[i32]) -> Result<f64> {
        let node = &tree.nodes[id];
        let p = self.frame.params;
        Ok(match node.kind {
            NodeKind::Leaf => self.q,
            NodeKind::Special => 1.0 / f64::from(node.mode.m).powi(3),
            NodeKind::Binary(t) => {
                let (c1, c2) = (node.children[0], node.children[1]);
                let v = self.kernel.get(node.mode.m, tree.nodes[c1].mode.m, tree.nodes[c2].mode.m);
                match t {
                    NodeType::A => p.a * v,
                    NodeType::B => -p.b * self.frame.omega * self.frame.omega * v,
                }
            }
            NodeKind::Unary { order } => {
                let h = match self.counterterm_scale {
                    CountertermScale::Exiting if tree.has_scale(id) => scales[id],
                    _ => -1,
                };
                let l = self.counterterms.get(order, node.mode, h).ok_or(
                    Error::MissingCounterterm { k: order, n: node.mode.n, m: node.mode.m },
                )?;
                f64::from(node.mode.n) * self.q.powi(order as i32) * l
            }
        })
    }

    /// Product of node and line factors with the given line localizations.
    pub fn value_with_shifts(
        &self,
        tree: &Tree,
        scales: &[i32],
        shifts: &[Option<LineShift>],
    ) -> Result<f64> {
        let mut value = 1.0;
        for id in 0..tree.nodes.len() {
            value *= self.node_factor(tree, id, scales)?;
            if value == 0.0 {
                return Ok(0.0);
            }
            value *= self.line_factor(tree, id, scales[id], shifts[id])?;
            if value == 0.0 {
                return Ok(0.0);
            }
        }
        Ok(value)
    }
}

fn line_divisor(frame: &Frame, tree: &Tree, id: usize, shift: Option<LineShift>) -> Result<f64> {
    let mode = tree.nodes[id].mode;
    match shift {
        None => frame.x(mode),
        Some(s) => frame.x_shifted(mode, s.n0, s.shift),
    }
}

/// Localization of the special path of a counterterm tree: each path line is
/// evaluated at `Omega (n - n_e) + omega_bar_e`.
pub(crate) fn outer_shifts(frame: &Frame, tree: &Tree) -> Result<Vec<Option<LineShift>>> {
    let mut shifts = vec![None; tree.nodes.len()];
    if let Some(e) = tree.special {
        let mode = tree.nodes[e].mode;
        let bar = frame.omega_bar(mode)?;
        for id in tree.special_path() {
            shifts[id] = Some(LineShift { n0: tree.nodes[id].mode.n - mode.n, shift: bar });
        }
    }
    Ok(shifts)
}

/// Plain value `Val(theta)` of a labelled tree (no localization).
///
/// For a counterterm tree the root line carries 1 and the special line carries
/// 1 or `n_e`, but the path lines are evaluated at their natural arguments.
pub fn tree_value(tree: &Tree, scales: &[i32], ev: &Evaluator) -> Result<f64> {
    ev.value_with_shifts(tree, scales, &vec![None; tree.nodes.len()])
}

/// `(Val, L Val)` for one resonance: the plain value and the value with the
/// resonance path localized at `Omega n0 + omega_bar`.
pub fn localize_split(
    tree: &Tree,
    scales: &[i32],
    ev: &Evaluator,
    res: &ResonanceView,
) -> Result<(f64, f64)> {
    let val = tree_value(tree, scales, ev)?;
    if !res.localizable {
        return Ok((val, 0.0));
    }
    let bar = ev.frame.omega_bar(res.mode)?;
    let mut shifts = vec![None; tree.nodes.len()];
    for &id in &res.path {
        shifts[id] = Some(LineShift { n0: tree.nodes[id].mode.n - res.mode.n, shift: bar });
    }
    Ok((val, ev.value_with_shifts(tree, scales, &shifts)?))
}

/// Renormalized value: every resonance `T` contributes a factor `1 - L_T`.
///
/// The product is expanded over subsets of resonances; on a line shared by
/// several localized paths the innermost localization applies. For a
/// counterterm tree the whole tree is additionally localized (outermost), so
/// the result is `L Val_R`.
pub fn renormalized_value(tree: &Tree, scales: &[i32], ev: &Evaluator) -> Result<f64> {
    let resonances = detect_resonances(tree, scales, ev.frame.params);
    if resonances.len() > MAX_RESONANCES {
        return Err(Error::CombinatorialBlowup { limit: MAX_RESONANCES });
    }
    let outer = outer_shifts(&ev.frame, tree)?;
    if resonances.is_empty() {
        return ev.value_with_shifts(tree, scales, &outer);
    }
    let bars: Vec<f64> = resonances
        .iter()
        .map(|r| if r.localizable { ev.frame.omega_bar(r.mode) } else { Ok(0.0) })
        .collect::<Result<_>>()?;
    let mut total = 0.0;
    for subset in 0u32..(1 << resonances.len()) {
        let mut shifts = vec![None; tree.nodes.len()];
        let mut sign = 1.0;
        let mut vanishes = false;
        for (i, r) in resonances.iter().enumerate() {
            if subset & (1 << i) == 0 {
                continue;
            }
            if !r.localizable {
                vanishes = true;
                break;
            }
            sign = -sign;
            for &id in &r.path {
                if shifts[id].is_none() {
                    shifts[id] =
                        Some(LineShift { n0: tree.nodes[id].mode.n - r.mode.n, shift: bars[i] });
                }
            }
        }
        if vanishes {
            continue;
        }
        for (s, o) in shifts.iter_mut().zip(&outer) {
            if s.is_none() {
                *s = *o;
            }
        }
        total += sign * ev.value_with_shifts(tree, scales, &shifts)?;
    }
    Ok(total)
}

/// Scale labellings with nonzero cutoffs on every line that obey the rule that
/// lines with equal modes have scales differing by at most one.
///
/// Path lines of a counterterm tree are labelled by their localized divisor.
/// Lines without a propagator carry the placeholder `-1`.
/// Empty when some divisor lies below the smallest admissible scale.
pub fn admissible_scales(tree: &Tree, frame: &Frame) -> Result<Vec<Vec<i32>>> {
    match scale_labellings(tree, frame) {
        Err(Error::ScaleOverflow { .. }) => Ok(Vec::new()),
        other => other,
    }
}

/// As [`admissible_scales`], but a divisor below the smallest scale is an error.
pub(crate) fn scale_labellings(tree: &Tree, frame: &Frame) -> Result<Vec<Vec<i32>>> {
    let params = frame.params;
    let outer = outer_shifts(frame, tree)?;
    let mut options: Vec<Vec<i32>> = Vec::with_capacity(tree.nodes.len());
    for (id, node) in tree.nodes.iter().enumerate() {
        if !tree.has_scale(id) || node.mode.is_amplitude() {
            options.push(vec![-1]);
            continue;
        }
        let x = line_divisor(frame, tree, id, outer[id])?;
        options.push(scales_checked(node.mode, x, params)?);
    }
    let mut out = vec![Vec::with_capacity(tree.nodes.len())];
    for opts in &options {
        if opts.len() == 1 {
            for s in &mut out {
                s.push(opts[0]);
            }
        } else {
            let mut next = Vec::with_capacity(out.len() * opts.len());
            for s in &out {
                for &h in opts {
                    let mut t = s.clone();
                    t.push(h);
                    next.push(t);
                }
            }
            out = next;
        }
    }
    let scaled: Vec<usize> = (0..tree.nodes.len())
        .filter(|&id| tree.has_scale(id) && !tree.nodes[id].mode.is_amplitude())
        .collect();
    out.retain(|s| {
        scaled.iter().enumerate().all(|(i, &a)| {
            scaled[i + 1..].iter().all(|&b| {
                tree.nodes[a].mode != tree.nodes[b].mode || (s[a] - s[b]).abs() <= 1
            })
        })
    });
    Ok(out)
}

/// Smoothly extended value: the renormalized value multiplied by cutoffs that
/// switch it off where a Diophantine condition along the tree degrades.
///
/// Each designated line contributes `step_up(|x| |n|^tau)` and each designated
/// pair of near-resonant lines contributes `step_up(|x^{a1,a2}| |n1 - n2|^tau)`
/// for the four sign choices. For counterterm trees the path lines are not
/// designated individually, and pairs must lie both on or both off the path.
pub fn extended_value(tree: &Tree, scales: &[i32], ev: &Evaluator) -> Result<f64> {
    let params = ev.frame.params;
    let (gamma, tau) = (params.gamma, params.tau);
    let path: Vec<usize> = tree.special_path();
    let on_path = |id: usize| path.contains(&id);
    let lines: Vec<usize> = (0..tree.nodes.len())
        .filter(|&id| tree.has_scale(id) && !tree.nodes[id].is_end())
        .collect();
    let mut cutoff = 1.0;
    for &id in &lines {
        let mode = tree.nodes[id].mode;
        if mode.n == 0 || mode.m < 2 || on_path(id) {
            continue;
        }
        let x = ev.frame.x(mode)?;
        cutoff *= step_up(x.abs() * f64::from(mode.n.abs()).powf(tau), gamma);
        if cutoff == 0.0 {
            return Ok(0.0);
        }
    }
    for (i, &l1) in lines.iter().enumerate() {
        for &l2 in &lines[i + 1..] {
            let (m1, m2) = (tree.nodes[l1].mode, tree.nodes[l2].mode);
            if m1.n == m2.n || m1.m == m2.m || m1.n == 0 || m2.n == 0 {
                continue;
            }
            if !in_lambda(m1, params) || !in_lambda(m2, params) {
                continue;
            }
            if tree.is_r_tree() && on_path(l1) != on_path(l2) {
                continue;
            }
            let r1 = ev.frame.radicand(m1)?.sqrt();
            let r2 = ev.frame.radicand(m2)?.sqrt();
            let base = ev.frame.omega * f64::from(m2.n - m1.n);
            let weight = f64::from((m1.n - m2.n).abs()).powf(tau);
            for (a1, a2) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                let x = base + a1 * r1 + a2 * r2;
                cutoff *= step_up(x.abs() * weight, gamma);
            }
            if cutoff == 0.0 {
                return Ok(0.0);
            }
        }
    }
    Ok(cutoff * renormalized_value(tree, scales, ev)?)
}
