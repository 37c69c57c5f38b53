//! CART decision trees for binary labels, grown with Gini impurity.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;

/// How many features are examined at each split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitFeatures {
    /// Every feature is searched for the best threshold.
    #[default]
    All,
    /// One feature, drawn uniformly per node among those that can still
    /// separate the node's rows; its best threshold is searched exhaustively.
    OneRandom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TreeConfig {
    /// `None` grows until every leaf is pure.
    pub max_depth: Option<usize>,
    pub split_features: SplitFeatures,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf {
        label: i8,
    },
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeModel {
    nodes: Vec<Node>,
}

impl TreeModel {
    pub fn leaf(label: i8) -> Self {
        TreeModel {
            nodes: vec![Node::Leaf { label }],
        }
    }

    /// Builds a tree from a node array rooted at index 0.
    pub fn from_nodes(nodes: Vec<Node>) -> Self {
        assert!(!nodes.is_empty(), "a tree needs a root");
        TreeModel { nodes }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    #[inline]
    pub fn predict(&self, x: &[f64]) -> i8 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { label } => return label,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    /// Length of the longest root-to-leaf path, in edges.
    pub fn depth(&self) -> usize {
        let mut best = 0;
        let mut stack = vec![(0usize, 0usize)];
        while let Some((at, d)) = stack.pop() {
            match self.nodes[at] {
                Node::Leaf { .. } => best = best.max(d),
                Node::Split { left, right, .. } => {
                    stack.push((left, d + 1));
                    stack.push((right, d + 1));
                }
            }
        }
        best
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }
}

/// Majority label of a node, ties to `+1`.
fn majority(pos: usize, neg: usize) -> i8 {
    if pos >= neg {
        1
    } else {
        -1
    }
}

/// Split quality `(pL^2 + nL^2) / NL + (pR^2 + nR^2) / NR` as an exact
/// fraction. Maximizing it minimizes the size-weighted child Gini impurity.
#[derive(Clone, Copy)]
struct Score {
    num: u128,
    den: u128,
}

impl Score {
    fn new(pl: u64, nl: u64, pr: u64, nr: u64) -> Self {
        let (pl, nl, pr, nr) = (pl as u128, nl as u128, pr as u128, nr as u128);
        let (tl, tr) = (pl + nl, pr + nr);
        Score {
            num: (pl * pl + nl * nl) * tr + (pr * pr + nr * nr) * tl,
            den: tl * tr,
        }
    }

    fn beats(&self, other: &Score) -> bool {
        self.num * other.den > other.num * self.den
    }
}

struct Candidate {
    feature: usize,
    threshold: f64,
    score: Score,
}

/// Best threshold on one feature, or `None` when the node's rows all share
/// one value of it. Thresholds are midpoints between consecutive distinct
/// values; ties go to the lowest threshold.
fn best_threshold(
    data: &Dataset,
    rows: &[u32],
    feature: usize,
    scratch: &mut Vec<(f64, i8)>,
) -> Option<Candidate> {
    scratch.clear();
    scratch.extend(
        rows.iter()
            .map(|&r| (data.value(r as usize, feature), data.label(r as usize))),
    );
    scratch.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
    let total_pos = scratch.iter().filter(|p| p.1 > 0).count() as u64;
    let total_neg = scratch.len() as u64 - total_pos;

    let mut best: Option<Candidate> = None;
    let (mut pl, mut nl) = (0u64, 0u64);
    for k in 0..scratch.len() - 1 {
        if scratch[k].1 > 0 {
            pl += 1;
        } else {
            nl += 1;
        }
        let (lo, hi) = (scratch[k].0, scratch[k + 1].0);
        if lo >= hi {
            continue;
        }
        let score = Score::new(pl, nl, total_pos - pl, total_neg - nl);
        if best.as_ref().is_none_or(|b| score.beats(&b.score)) {
            let mut threshold = lo + (hi - lo) / 2.0;
            if threshold >= hi {
                threshold = lo;
            }
            best = Some(Candidate {
                feature,
                threshold,
                score,
            });
        }
    }
    best
}

/// Grows one tree on the multiset `rows` of `data` (duplicates count with
/// their multiplicity).
///
/// Nodes split greedily on the best Gini reduction until they are pure, reach
/// `max_depth`, or no threshold separates their rows. Exact score ties go to
/// the lowest feature index, then the lowest threshold. Leaves predict the
/// majority label with ties to `+1`.
pub fn train_tree<R: Rng + ?Sized>(
    data: &Dataset,
    rows: &[u32],
    cfg: &TreeConfig,
    rng: &mut R,
) -> TreeModel {
    assert!(!rows.is_empty(), "cannot grow a tree on zero rows");
    let n_features = data.n_features();
    let mut nodes: Vec<Node> = vec![Node::Leaf { label: 1 }];
    let mut stack: Vec<(usize, Vec<u32>, usize)> = vec![(0, rows.to_vec(), 0)];
    let mut scratch = Vec::with_capacity(rows.len());
    let mut order: Vec<usize> = (0..n_features).collect();

    while let Some((at, node_rows, depth)) = stack.pop() {
        let pos = node_rows
            .iter()
            .filter(|&&r| data.label(r as usize) > 0)
            .count();
        let neg = node_rows.len() - pos;
        let label = majority(pos, neg);
        let depth_capped = cfg.max_depth.is_some_and(|d| depth >= d);
        if pos == 0 || neg == 0 || depth_capped {
            nodes[at] = Node::Leaf { label };
            continue;
        }

        let split = match cfg.split_features {
            SplitFeatures::All => {
                let mut best: Option<Candidate> = None;
                for f in 0..n_features {
                    if let Some(c) = best_threshold(data, &node_rows, f, &mut scratch) {
                        if best.as_ref().is_none_or(|b| c.score.beats(&b.score)) {
                            best = Some(c);
                        }
                    }
                }
                best
            }
            SplitFeatures::OneRandom => {
                order.shuffle(rng);
                order
                    .iter()
                    .find_map(|&f| best_threshold(data, &node_rows, f, &mut scratch))
            }
        };

        let Some(Candidate {
            feature, threshold, ..
        }) = split
        else {
            nodes[at] = Node::Leaf { label };
            continue;
        };
        let (left_rows, right_rows): (Vec<u32>, Vec<u32>) = node_rows
            .iter()
            .partition(|&&r| data.value(r as usize, feature) <= threshold);
        let left = nodes.len();
        let right = left + 1;
        nodes.push(Node::Leaf { label: 1 });
        nodes.push(Node::Leaf { label: 1 });
        nodes[at] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        stack.push((right, right_rows, depth + 1));
        stack.push((left, left_rows, depth + 1));
    }
    TreeModel { nodes }
}
