use rayon::prelude::*;

use super::{Direction, GbdtConfig, TreeNode};
use crate::data::FeatureMatrix;

/// Every feature column sorted ascending once, as parallel value/row arrays.
/// NaN entries are left out; they never contribute split candidates.
pub struct SortedColumns {
    values: Vec<Vec<f64>>,
    rows: Vec<Vec<u32>>,
}

impl SortedColumns {
    pub fn new(x: &FeatureMatrix) -> Self {
        let (values, rows) = (0..x.cols)
            .into_par_iter()
            .map(|f| {
                let mut idx: Vec<u32> = (0..x.rows as u32).filter(|&i| !x.get(i as usize, f).is_nan()).collect();
                idx.sort_by(|&a, &b| x.get(a as usize, f).total_cmp(&x.get(b as usize, f)).then(a.cmp(&b)));
                (idx.iter().map(|&i| x.get(i as usize, f)).collect(), idx)
            })
            .unzip();
        SortedColumns { values, rows }
    }

    pub fn features(&self) -> usize {
        self.values.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitCandidate {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

/// Structure score `G²/(H + λ)`.
#[inline]
fn score(g: f64, h: f64, lambda: f64) -> f64 {
    g * g / (h + lambda)
}

/// A threshold `t` with `a < t ≤ b`, at the midpoint when representable.
#[inline]
fn midpoint(a: f64, b: f64) -> f64 {
    let m = a * 0.5 + b * 0.5;
    if m > a && m <= b {
        m
    } else {
        b
    }
}

const NO_NODE: u32 = u32::MAX;

/// Best split of every open node for one feature. `pos[i]` is the open-node
/// slot of sample i (or `NO_NODE`); `totals` are the slots' (G, H).
fn feature_splits(
    values: &[f64],
    rows: &[u32],
    feature: usize,
    g: &[f64],
    h: &[f64],
    pos: &[u32],
    totals: &[(f64, f64)],
    cfg: &GbdtConfig,
) -> Vec<Option<SplitCandidate>> {
    let n = totals.len();
    let mut gl = vec![0.0; n];
    let mut hl = vec![0.0; n];
    let mut last = vec![f64::NAN; n];
    let mut best: Vec<Option<SplitCandidate>> = vec![None; n];
    let lambda = cfg.reg_lambda;
    for (&v, &r) in values.iter().zip(rows) {
        let s = pos[r as usize];
        if s == NO_NODE {
            continue;
        }
        let s = s as usize;
        if !last[s].is_nan() && v > last[s] {
            let (gt, ht) = totals[s];
            let (gr, hr) = (gt - gl[s], ht - hl[s]);
            if hl[s] >= cfg.min_child_weight && hr >= cfg.min_child_weight {
                let gain = 0.5 * (score(gl[s], hl[s], lambda) + score(gr, hr, lambda) - score(gt, ht, lambda))
                    - cfg.reg_gamma;
                if gain > 0.0 && best[s].map_or(true, |b| gain > b.gain) {
                    best[s] = Some(SplitCandidate {
                        feature,
                        threshold: midpoint(last[s], v),
                        gain,
                    });
                }
            }
        }
        gl[s] += g[r as usize];
        hl[s] += h[r as usize];
        last[s] = v;
    }
    best
}

/// Best split per open node over all features; ties keep the lowest feature,
/// then the lowest threshold.
fn level_splits(
    cols: &SortedColumns,
    g: &[f64],
    h: &[f64],
    pos: &[u32],
    totals: &[(f64, f64)],
    cfg: &GbdtConfig,
) -> Vec<Option<SplitCandidate>> {
    let per_feature: Vec<Vec<Option<SplitCandidate>>> = (0..cols.features())
        .into_par_iter()
        .map(|f| feature_splits(&cols.values[f], &cols.rows[f], f, g, h, pos, totals, cfg))
        .collect();
    let mut best: Vec<Option<SplitCandidate>> = vec![None; totals.len()];
    for cands in per_feature {
        for (b, c) in best.iter_mut().zip(cands) {
            if let Some(c) = c {
                if b.map_or(true, |b| c.gain > b.gain) {
                    *b = Some(c);
                }
            }
        }
    }
    best
}

/// Exact-greedy best split of the samples in `members`.
pub fn best_split(
    cols: &SortedColumns,
    g: &[f64],
    h: &[f64],
    members: &[usize],
    cfg: &GbdtConfig,
) -> Option<SplitCandidate> {
    let mut pos = vec![NO_NODE; g.len()];
    let (mut gt, mut ht) = (0.0, 0.0);
    for &i in members {
        pos[i] = 0;
    }
    // Sum in row order so totals are independent of member ordering.
    for (i, &p) in pos.iter().enumerate() {
        if p == 0 {
            gt += g[i];
            ht += h[i];
        }
    }
    level_splits(cols, g, h, &pos, &[(gt, ht)], cfg)[0]
}

struct Building {
    g: f64,
    h: f64,
    split: Option<(SplitCandidate, usize, usize)>,
}

/// Level-wise tree growth to `max_depth`; leaf weight `−η·G/(H + λ)`.
pub fn grow_tree(cols: &SortedColumns, x: &FeatureMatrix, g: &[f64], h: &[f64], cfg: &GbdtConfig) -> TreeNode {
    let n = x.rows;
    let (g0, h0) = (g.iter().sum(), h.iter().sum());
    let mut nodes = vec![Building { g: g0, h: h0, split: None }];
    // node id of each sample, or NO_NODE once its node is a leaf
    let mut node_of: Vec<u32> = vec![0; n];
    let mut open: Vec<usize> = vec![0];
    for _depth in 0..cfg.max_depth {
        if open.is_empty() {
            break;
        }
        let mut slot_of = vec![NO_NODE; nodes.len()];
        for (s, &id) in open.iter().enumerate() {
            slot_of[id] = s as u32;
        }
        let pos: Vec<u32> = node_of
            .iter()
            .map(|&id| if id == NO_NODE { NO_NODE } else { slot_of[id as usize] })
            .collect();
        let totals: Vec<(f64, f64)> = open.iter().map(|&id| (nodes[id].g, nodes[id].h)).collect();
        let splits = level_splits(cols, g, h, &pos, &totals, cfg);

        let mut next = Vec::new();
        for (s, cand) in splits.into_iter().enumerate() {
            let id = open[s];
            if let Some(c) = cand {
                let (l, r) = (nodes.len(), nodes.len() + 1);
                nodes.push(Building { g: 0.0, h: 0.0, split: None });
                nodes.push(Building { g: 0.0, h: 0.0, split: None });
                nodes[id].split = Some((c, l, r));
                next.extend([l, r]);
            }
        }
        for (i, id) in node_of.iter_mut().enumerate() {
            if *id == NO_NODE {
                continue;
            }
            *id = match nodes[*id as usize].split {
                Some((c, l, r)) => {
                    let v = x.get(i, c.feature);
                    let left = if v.is_nan() { true } else { v < c.threshold };
                    if left {
                        l as u32
                    } else {
                        r as u32
                    }
                }
                None => NO_NODE,
            };
        }
        // child sums in row order for determinism
        for (i, &id) in node_of.iter().enumerate() {
            if id != NO_NODE {
                let b = &mut nodes[id as usize];
                b.g += g[i];
                b.h += h[i];
            }
        }
        open = next;
    }
    assemble(&nodes, 0, cfg)
}

fn assemble(nodes: &[Building], id: usize, cfg: &GbdtConfig) -> TreeNode {
    let b = &nodes[id];
    match b.split {
        None => TreeNode::Leaf {
            weight: -cfg.learning_rate * b.g / (b.h + cfg.reg_lambda),
        },
        Some((c, l, r)) => TreeNode::Split {
            feature: c.feature,
            threshold: c.threshold,
            default: Direction::Left,
            left: Box::new(assemble(nodes, l, cfg)),
            right: Box::new(assemble(nodes, r, cfg)),
        },
    }
}
