//! Per-feature histogram bins, fixed before boosting starts.

use crate::model::Features;
use crate::scalar::{total_cmp, Real};

/// Upper bin edges per feature. A value `x` falls in bin `k` when
/// `edge[k-1] < x <= edge[k]`; the last bin is unbounded above.
#[derive(Debug, Clone, PartialEq)]
pub struct BinMapper<T> {
    edges: Vec<Vec<T>>,
}

impl<T: Real> BinMapper<T> {
    /// Edges at midpoints between distinct values when a feature has at most
    /// `max_bins` of them, otherwise at evenly spaced order statistics.
    pub fn fit(x: &Features<T>, max_bins: usize) -> Self {
        assert!((2..=256).contains(&max_bins));
        let n = x.n_rows();
        let mut edges = Vec::with_capacity(x.n_features());
        let mut col = Vec::with_capacity(n);
        for f in 0..x.n_features() {
            col.clear();
            col.extend((0..n).map(|i| x.get(i, f)));
            col.sort_unstable_by(total_cmp);
            let mut distinct = col.clone();
            distinct.dedup();
            let mut e: Vec<T> = if distinct.len() <= max_bins {
                distinct
                    .windows(2)
                    .map(|w| w[0] + (w[1] - w[0]) / T::of(2.0))
                    .collect()
            } else {
                (1..max_bins)
                    .map(|j| col[(j * n) / max_bins])
                    .filter(|&c| c < distinct[distinct.len() - 1])
                    .collect()
            };
            e.dedup();
            edges.push(e);
        }
        Self { edges }
    }

    pub fn n_features(&self) -> usize {
        self.edges.len()
    }

    pub fn n_bins(&self, feature: usize) -> usize {
        self.edges[feature].len() + 1
    }

    /// Split threshold when the left child takes bins `0..=bin`.
    pub fn threshold(&self, feature: usize, bin: usize) -> T {
        self.edges[feature][bin]
    }

    #[inline]
    pub fn bin(&self, feature: usize, x: T) -> u8 {
        self.edges[feature].partition_point(|&e| e < x) as u8
    }

    pub fn transform(&self, x: &Features<T>) -> BinnedMatrix {
        let n = x.n_rows();
        let nf = self.n_features();
        let mut bins = vec![0u8; n * nf];
        for f in 0..nf {
            let col = &mut bins[f * n..(f + 1) * n];
            for (i, b) in col.iter_mut().enumerate() {
                *b = self.bin(f, x.get(i, f));
            }
        }
        let mut offsets = Vec::with_capacity(nf + 1);
        let mut acc = 0;
        for f in 0..nf {
            offsets.push(acc);
            acc += self.n_bins(f);
        }
        offsets.push(acc);
        BinnedMatrix {
            n_rows: n,
            bins,
            offsets,
        }
    }
}

/// Column-major bin indices plus histogram offsets per feature.
#[derive(Debug, Clone)]
pub struct BinnedMatrix {
    pub(crate) n_rows: usize,
    pub(crate) bins: Vec<u8>,
    pub(crate) offsets: Vec<usize>,
}

impl BinnedMatrix {
    #[inline]
    pub fn column(&self, f: usize) -> &[u8] {
        &self.bins[f * self.n_rows..(f + 1) * self.n_rows]
    }

    pub fn n_features(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn total_bins(&self) -> usize {
        *self.offsets.last().unwrap()
    }
}
