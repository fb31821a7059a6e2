//! CART classification tree with Gini impurity.

use ndarray::{Array1, ArrayView2};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "lowercase")]
pub enum Node {
    Leaf { pd_fraction: f64, n: usize },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    /// `nodes[0]` is the root; rows with `x[feature] <= threshold` go left.
    pub nodes: Vec<Node>,
}

fn gini(pos: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = pos as f64 / n as f64;
    2.0 * p * (1.0 - p)
}

struct Builder<'a> {
    x: ArrayView2<'a, f64>,
    y: &'a [bool],
    max_depth: usize,
    min_leaf: usize,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn leaf(&mut self, rows: &[usize]) -> usize {
        let pos = rows.iter().filter(|&&i| self.y[i]).count();
        self.nodes.push(Node::Leaf {
            pd_fraction: pos as f64 / rows.len() as f64,
            n: rows.len(),
        });
        self.nodes.len() - 1
    }

    /// Best `(feature, threshold)` by weighted Gini decrease; ties keep the
    /// earlier candidate (lower feature, then lower threshold).
    fn best_split(&self, rows: &[usize]) -> Option<(usize, f64)> {
        let n = rows.len();
        let pos = rows.iter().filter(|&&i| self.y[i]).count();
        let parent = gini(pos, n);
        let mut best: Option<(usize, f64)> = None;
        let mut best_gain = 1e-12;
        let mut sorted = rows.to_vec();
        for f in 0..self.x.ncols() {
            sorted.sort_by(|&a, &b| self.x[[a, f]].total_cmp(&self.x[[b, f]]).then(a.cmp(&b)));
            let mut left_pos = 0;
            for s in 0..n - 1 {
                if self.y[sorted[s]] {
                    left_pos += 1;
                }
                let (lo, hi) = (self.x[[sorted[s], f]], self.x[[sorted[s + 1], f]]);
                let nl = s + 1;
                if lo == hi || nl < self.min_leaf || n - nl < self.min_leaf {
                    continue;
                }
                let child = (nl as f64 * gini(left_pos, nl) + (n - nl) as f64 * gini(pos - left_pos, n - nl)) / n as f64;
                let gain = parent - child;
                if gain > best_gain {
                    best_gain = gain;
                    best = Some((f, lo + (hi - lo) / 2.0));
                }
            }
        }
        best
    }

    fn grow(&mut self, rows: &[usize], depth: usize) -> usize {
        let pos = rows.iter().filter(|&&i| self.y[i]).count();
        if depth >= self.max_depth || pos == 0 || pos == rows.len() || rows.len() < 2 * self.min_leaf {
            return self.leaf(rows);
        }
        let Some((feature, threshold)) = self.best_split(rows) else {
            return self.leaf(rows);
        };
        let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| self.x[[i, feature]] <= threshold);
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { pd_fraction: 0.0, n: 0 });
        let left = self.grow(&l, depth + 1);
        let right = self.grow(&r, depth + 1);
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }
}

impl Tree {
    pub fn fit(x: ArrayView2<f64>, y: &[bool], max_depth: usize, min_leaf: usize) -> Self {
        let mut b = Builder {
            x,
            y,
            max_depth,
            min_leaf: min_leaf.max(1),
            nodes: Vec::new(),
        };
        let rows: Vec<usize> = (0..y.len()).collect();
        b.grow(&rows, 0);
        Tree { nodes: b.nodes }
    }

    /// PD fraction of the leaf each row lands in.
    pub fn score(&self, x: ArrayView2<f64>) -> Array1<f64> {
        x.rows()
            .into_iter()
            .map(|r| {
                let mut id = 0;
                loop {
                    match self.nodes[id] {
                        Node::Leaf { pd_fraction, .. } => return pd_fraction,
                        Node::Split {
                            feature,
                            threshold,
                            left,
                            right,
                        } => id = if r[feature] <= threshold { left } else { right },
                    }
                }
            })
            .collect()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], id: usize) -> usize {
            match nodes[id] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}
