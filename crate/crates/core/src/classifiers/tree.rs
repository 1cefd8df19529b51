//! Greedy CART with Gini impurity, grown best-first up to a split budget.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Classifier;
use crate::error::{Error, Result};
use crate::scalar::{argmax, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeConfig {
    pub max_splits: usize,
}

impl TreeConfig {
    pub const fn fine() -> Self {
        Self { max_splits: 100 }
    }

    pub const fn medium() -> Self {
        Self { max_splits: 20 }
    }

    pub const fn coarse() -> Self {
        Self { max_splits: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node {
    /// Training class counts that reached the leaf.
    Leaf { counts: Vec<usize> },
    /// `x[feature] <= threshold` goes left.
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub n_classes: usize,
    pub input_len: usize,
    pub nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    feature: usize,
    threshold: f64,
    /// Decrease of `n * gini`, summed over children.
    gain: f64,
}

/// `n * gini(counts)` from the count total and the sum of squared counts.
fn weighted_gini(n: f64, sumsq: f64) -> f64 {
    if n == 0.0 {
        0.0
    } else {
        n - sumsq / n
    }
}

fn best_split<S: Scalar>(xs: &[&[S]], ys: &[usize], rows: &[usize], n_classes: usize) -> Option<Candidate> {
    let n = rows.len();
    let mut total = vec![0usize; n_classes];
    for &r in rows {
        total[ys[r]] += 1;
    }
    let parent = weighted_gini(n as f64, total.iter().map(|&c| (c * c) as f64).sum());
    if parent <= 0.0 {
        return None;
    }
    let d = xs[0].len();
    let best = (0..d)
        .into_par_iter()
        .filter_map(|f| {
            let mut order: Vec<(f64, usize)> = rows.iter().map(|&r| (xs[r][f].as_f64(), ys[r])).collect();
            order.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left = vec![0usize; n_classes];
            let mut right = total.clone();
            let mut lsq = 0.0;
            let mut rsq: f64 = total.iter().map(|&c| (c * c) as f64).sum();
            let mut best: Option<Candidate> = None;
            for i in 0..n - 1 {
                let y = order[i].1;
                lsq += (2 * left[y] + 1) as f64;
                left[y] += 1;
                rsq -= (2 * right[y] - 1) as f64;
                right[y] -= 1;
                if order[i].0 == order[i + 1].0 {
                    continue;
                }
                let nl = (i + 1) as f64;
                let gain = parent - weighted_gini(nl, lsq) - weighted_gini(n as f64 - nl, rsq);
                if best.map_or(true, |b| gain > b.gain) {
                    let threshold = 0.5 * (order[i].0 + order[i + 1].0);
                    best = Some(Candidate { feature: f, threshold, gain });
                }
            }
            best
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(None, |acc: Option<Candidate>, c| match acc {
            Some(a) if a.gain >= c.gain => Some(a),
            _ => Some(c),
        });
    best.filter(|c| c.gain > 1e-12)
}

pub fn tree_fit<S: Scalar>(xs: &[&[S]], ys: &[usize], n_classes: usize, config: TreeConfig) -> Result<Tree> {
    if xs.is_empty() {
        return Err(Error::NoTrainingData);
    }
    if xs.len() != ys.len() || xs.iter().any(|x| x.len() != xs[0].len()) {
        return Err(Error::Shape("inconsistent training inputs".into()));
    }
    if config.max_splits == 0 {
        return Err(Error::InvalidArgument("max_splits must be at least 1".into()));
    }
    if let Some(&y) = ys.iter().find(|&&y| y >= n_classes) {
        return Err(Error::InvalidArgument(format!("label {y} out of range")));
    }
    let mut distinct = ys.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::InvalidArgument("a tree needs at least two classes in training".into()));
    }
    let counts = |rows: &[usize]| {
        let mut c = vec![0usize; n_classes];
        rows.iter().for_each(|&r| c[ys[r]] += 1);
        c
    };
    let all: Vec<usize> = (0..xs.len()).collect();
    let mut nodes = vec![Node::Leaf { counts: counts(&all) }];
    // Open leaves: (node index, rows, best split).
    let mut open = vec![(0usize, all.clone(), best_split(xs, ys, &all, n_classes))];
    let mut splits = 0;
    while splits < config.max_splits {
        // Largest gain first; the earliest-created leaf wins ties.
        let Some(pos) = open
            .iter()
            .enumerate()
            .filter_map(|(i, (_, _, c))| c.map(|c| (i, c.gain)))
            .fold(None, |acc: Option<(usize, f64)>, (i, g)| match acc {
                Some((_, bg)) if bg >= g => acc,
                _ => Some((i, g)),
            })
            .map(|(i, _)| i)
        else {
            break;
        };
        let (node, rows, cand) = open.swap_remove(pos);
        let cand = cand.expect("filtered");
        let (l, r): (Vec<usize>, Vec<usize>) =
            rows.iter().partition(|&&i| xs[i][cand.feature].as_f64() <= cand.threshold);
        let (li, ri) = (nodes.len(), nodes.len() + 1);
        nodes.push(Node::Leaf { counts: counts(&l) });
        nodes.push(Node::Leaf { counts: counts(&r) });
        nodes[node] = Node::Split { feature: cand.feature, threshold: cand.threshold, left: li, right: ri };
        let lc = best_split(xs, ys, &l, n_classes);
        let rc = best_split(xs, ys, &r, n_classes);
        open.push((li, l, lc));
        open.push((ri, r, rc));
        open.sort_by_key(|o| o.0);
        splits += 1;
    }
    Ok(Tree { n_classes, input_len: xs[0].len(), nodes })
}

impl Tree {
    pub fn n_splits(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Split { .. })).count()
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.len() - self.n_splits()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    fn leaf<S: Scalar>(&self, x: &[S]) -> Result<&[usize]> {
        if x.len() != self.input_len {
            return Err(Error::Shape(format!("input of length {} for a tree over {}", x.len(), self.input_len)));
        }
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { counts } => return Ok(counts),
                Node::Split { feature, threshold, left, right } => {
                    i = if x[*feature].as_f64() <= *threshold { *left } else { *right };
                }
            }
        }
    }

    /// Majority class of the reached leaf, ties to the smallest label.
    pub fn classify<S: Scalar>(&self, x: &[S]) -> Result<usize> {
        Ok(argmax(&self.leaf(x)?.iter().map(|&c| c as f64).collect::<Vec<_>>()))
    }
}

impl<S: Scalar> Classifier<S> for Tree {
    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn input_len(&self) -> usize {
        self.input_len
    }

    fn predict_proba(&self, x: &[S]) -> Result<Vec<S>> {
        let counts = self.leaf(x)?;
        let n: usize = counts.iter().sum();
        Ok(counts.iter().map(|&c| S::lit(c as f64 / n.max(1) as f64)).collect())
    }
}
