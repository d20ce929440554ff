//! Best-first (leaf-wise) growth of one regression tree over binned data.

use super::binning::{BinMapper, BinnedMatrix};
use super::Tree;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, Default)]
struct Bin<T> {
    g: T,
    n: u32,
}

#[derive(Debug, Clone, Copy)]
struct Split<T> {
    gain: T,
    feature: usize,
    bin: usize,
    left_n: usize,
}

struct Leaf<T> {
    node: usize,
    start: usize,
    end: usize,
    depth: usize,
    hist: Vec<Bin<T>>,
    split: Option<Split<T>>,
}

pub(crate) struct GrowParams {
    pub max_depth: usize,
    pub max_leaves: usize,
    pub min_samples_leaf: usize,
}

/// A grown tree whose leaves still refer to row ranges of `order`.
pub(crate) struct Grown<T> {
    pub tree: Tree<T>,
    /// `(node, start, end)` for every leaf.
    pub leaves: Vec<(usize, usize, usize)>,
}

pub(crate) struct Grower<'a, T> {
    binned: &'a BinnedMatrix,
    mapper: &'a BinMapper<T>,
    params: GrowParams,
    scratch_g: Vec<T>,
    scratch_idx: Vec<u32>,
}

impl<'a, T: Real> Grower<'a, T> {
    pub fn new(binned: &'a BinnedMatrix, mapper: &'a BinMapper<T>, params: GrowParams) -> Self {
        Self {
            binned,
            mapper,
            params,
            scratch_g: Vec::new(),
            scratch_idx: Vec::new(),
        }
    }

    /// Grows a tree on the rows in `order`, which is partitioned in place so
    /// that every leaf owns a contiguous range.
    pub fn grow(&mut self, grad: &[T], order: &mut [u32]) -> Grown<T> {
        let mut tree = Tree::leaf_only();
        let n = order.len();
        let root_hist = self.histogram(grad, order);
        let mut leaves = vec![Leaf {
            node: 0,
            start: 0,
            end: n,
            depth: 0,
            split: self.best_split(&root_hist, n, 0),
            hist: root_hist,
        }];

        while leaves.len() < self.params.max_leaves {
            let mut pick: Option<usize> = None;
            for (i, l) in leaves.iter().enumerate() {
                if let Some(s) = l.split {
                    if pick.is_none_or(|p| s.gain > leaves[p].split.unwrap().gain) {
                        pick = Some(i);
                    }
                }
            }
            let Some(pi) = pick else { break };
            let split = leaves[pi].split.unwrap();
            let (start, end, depth, node) = {
                let l = &leaves[pi];
                (l.start, l.end, l.depth, l.node)
            };

            self.partition(&mut order[start..end], split.feature, split.bin);
            let mid = start + split.left_n;

            let parent_hist = std::mem::take(&mut leaves[pi].hist);
            let (left_hist, right_hist) = if split.left_n <= end - mid {
                let small = self.histogram(grad, &order[start..mid]);
                let large = subtract(&parent_hist, &small);
                (small, large)
            } else {
                let small = self.histogram(grad, &order[mid..end]);
                let large = subtract(&parent_hist, &small);
                (large, small)
            };

            let threshold = self.mapper.threshold(split.feature, split.bin);
            let (ln, rn) = tree.split_leaf(node, split.feature, threshold);
            let child_depth = depth + 1;
            let left = Leaf {
                node: ln,
                start,
                end: mid,
                depth: child_depth,
                split: self.best_split(&left_hist, mid - start, child_depth),
                hist: left_hist,
            };
            let right = Leaf {
                node: rn,
                start: mid,
                end,
                depth: child_depth,
                split: self.best_split(&right_hist, end - mid, child_depth),
                hist: right_hist,
            };
            leaves[pi] = left;
            leaves.push(right);
        }

        Grown {
            tree,
            leaves: leaves.iter().map(|l| (l.node, l.start, l.end)).collect(),
        }
    }

    fn histogram(&mut self, grad: &[T], rows: &[u32]) -> Vec<Bin<T>> {
        let mut hist = vec![Bin::default(); self.binned.total_bins()];
        self.scratch_g.clear();
        self.scratch_g.extend(rows.iter().map(|&i| grad[i as usize]));
        for f in 0..self.binned.n_features() {
            let col = self.binned.column(f);
            let h = &mut hist[self.binned.offsets[f]..self.binned.offsets[f + 1]];
            for (&i, &g) in rows.iter().zip(&self.scratch_g) {
                let b = &mut h[col[i as usize] as usize];
                b.g += g;
                b.n += 1;
            }
        }
        hist
    }

    fn best_split(&self, hist: &[Bin<T>], n: usize, depth: usize) -> Option<Split<T>> {
        let min_leaf = self.params.min_samples_leaf.max(1);
        if depth >= self.params.max_depth || n < 2 * min_leaf {
            return None;
        }
        let nf = self.binned.n_features();
        let total_g: T = hist[self.binned.offsets[0]..self.binned.offsets[1]]
            .iter()
            .map(|b| b.g)
            .sum();
        let n_t = T::of_usize(n);
        let parent = total_g * total_g / n_t;
        let mut best: Option<Split<T>> = None;
        for f in 0..nf {
            let h = &hist[self.binned.offsets[f]..self.binned.offsets[f + 1]];
            let mut gl = T::zero();
            let mut nl = 0usize;
            for (k, b) in h.iter().enumerate().take(h.len() - 1) {
                gl += b.g;
                nl += b.n as usize;
                if nl < min_leaf {
                    continue;
                }
                let nr = n - nl;
                if nr < min_leaf {
                    break;
                }
                if b.n == 0 {
                    continue;
                }
                let gr = total_g - gl;
                let gain = gl * gl / T::of_usize(nl) + gr * gr / T::of_usize(nr) - parent;
                if gain > T::zero() && best.is_none_or(|s| gain > s.gain) {
                    best = Some(Split {
                        gain,
                        feature: f,
                        bin: k,
                        left_n: nl,
                    });
                }
            }
        }
        best
    }

    /// Stable partition: rows with bin <= `bin` first.
    fn partition(&mut self, rows: &mut [u32], feature: usize, bin: usize) {
        let col = self.binned.column(feature);
        self.scratch_idx.clear();
        let mut w = 0;
        for r in 0..rows.len() {
            let i = rows[r];
            if col[i as usize] as usize <= bin {
                rows[w] = i;
                w += 1;
            } else {
                self.scratch_idx.push(i);
            }
        }
        rows[w..].copy_from_slice(&self.scratch_idx);
    }
}

fn subtract<T: Real>(parent: &[Bin<T>], child: &[Bin<T>]) -> Vec<Bin<T>> {
    parent
        .iter()
        .zip(child)
        .map(|(p, c)| Bin {
            g: p.g - c.g,
            n: p.n - c.n,
        })
        .collect()
}
