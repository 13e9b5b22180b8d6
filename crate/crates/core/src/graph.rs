//! KNN similarity graph under angular similarity.
//!
//! Rows are scaled to unit length, so Euclidean distance between rows is a
//! monotone function of the angle between the original vectors. Each node
//! links to its `K` nearest other nodes with self-tuning Gaussian weights
//!
//! ```text
//! w_ij = exp(-alpha * |x_i - x_j|^2 / s_i^2),   s_i = max(dist to K-th neighbor, min_scale)
//! ```
//!
//! and the directed weights are symmetrized as `W = (W_dir + W_dir^T) / 2`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::sparse_linalg::CsrMatrix;

/// Distance assigned to any pair involving an all-zero row, which ranks such
/// pairs at or after every pair of unit vectors (whose distance is at most 2).
pub const ZERO_ROW_DISTANCE: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    /// Neighbors per node.
    pub k: usize,
    /// Kernel sharpness.
    pub alpha: f64,
    /// Floor on the self-tuning scale.
    pub min_scale: f64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            k: 20,
            alpha: 4.0,
            min_scale: 1e-12,
        }
    }
}

impl GraphConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::Config("graph k must be at least 1".into()));
        }
        if !(self.alpha > 0.0) || !(self.min_scale > 0.0) {
            return Err(Error::Config(
                "graph alpha and min_scale must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Unit-length feature rows; rows that were all zero stay zero and are flagged.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedFeatures {
    pub features: FeatureMatrix,
    pub zero_rows: Vec<bool>,
}

pub fn normalize_rows(features: &FeatureMatrix) -> NormalizedFeatures {
    let dim = features.dim();
    let mut data = Vec::with_capacity(features.data().len());
    let mut zero_rows = Vec::with_capacity(features.n());
    for row in features.rows() {
        let norm = row
            .iter()
            .map(|&v| (v as f64) * (v as f64))
            .sum::<f64>()
            .sqrt();
        if norm > 0.0 {
            data.extend(row.iter().map(|&v| (v as f64 / norm) as f32));
            zero_rows.push(false);
        } else {
            data.extend(std::iter::repeat_n(0.0f32, dim));
            zero_rows.push(true);
        }
    }
    NormalizedFeatures {
        features: FeatureMatrix::new(dim, data, features.provenance().to_vec())
            .expect("same shape as input"),
        zero_rows,
    }
}

/// `K` nearest neighbors of every node, ascending by distance then index.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnResult {
    pub k: usize,
    /// `n x k`, row-major.
    pub indices: Vec<usize>,
    /// Euclidean distances, `n x k`, row-major.
    pub distances: Vec<f64>,
    /// Squared distances as accumulated (before the square root).
    pub sq_distances: Vec<f64>,
}

impl KnnResult {
    pub fn n(&self) -> usize {
        self.indices.len() / self.k
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }

    pub fn distances_of(&self, i: usize) -> &[f64] {
        &self.distances[i * self.k..(i + 1) * self.k]
    }
}

/// Squared Euclidean distance in `f64` with eight interleaved partial sums.
#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        let x: &[f64; 8] = x.try_into().expect("chunk of 8");
        let y: &[f64; 8] = y.try_into().expect("chunk of 8");
        for l in 0..8 {
            let d = x[l] - y[l];
            acc[l] += d * d;
        }
    }
    for (l, (x, y)) in ca.remainder().iter().zip(cb.remainder()).enumerate() {
        let d = x - y;
        acc[l] += d * d;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]))
}

const KNN_BLOCK: usize = 8;

/// Exact brute-force KNN over normalized rows.
pub fn knn_search(normalized: &NormalizedFeatures, k: usize) -> Result<KnnResult> {
    let n = normalized.features.n();
    if k == 0 || k >= n {
        return Err(Error::TooFewPoints { k, n });
    }
    let dim = normalized.features.dim();
    let wide: Vec<f64> = normalized
        .features
        .data()
        .iter()
        .map(|&v| v as f64)
        .collect();
    let zero = &normalized.zero_rows;
    let row = |i: usize| &wide[i * dim..(i + 1) * dim];

    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    // Queries are handled in small blocks so each candidate row is loaded
    // once per block rather than once per query.
    let per_row: Vec<Vec<(f64, usize)>> = (0..n.div_ceil(KNN_BLOCK))
        .into_par_iter()
        .flat_map_iter(|b| {
            let queries = b * KNN_BLOCK..((b + 1) * KNN_BLOCK).min(n);
            let mut bufs: Vec<Vec<(f64, usize)>> =
                queries.clone().map(|_| Vec::with_capacity(n)).collect();
            for j in 0..n {
                let rj = row(j);
                for (i, buf) in queries.clone().zip(bufs.iter_mut()) {
                    if i == j {
                        continue;
                    }
                    let d2 = if zero[i] || zero[j] {
                        ZERO_ROW_DISTANCE * ZERO_ROW_DISTANCE
                    } else {
                        sq_dist(row(i), rj)
                    };
                    buf.push((d2, j));
                }
            }
            bufs.into_iter().map(move |mut buf| {
                buf.select_nth_unstable_by(k - 1, cmp);
                buf.truncate(k);
                buf.sort_unstable_by(cmp);
                buf
            })
        })
        .collect();

    Ok(collect_knn(k, per_row))
}

/// KNN over the rows of `prefix` followed by the rows of `base`, reusing a
/// KNN result computed on `base` alone.
///
/// The `k` nearest nodes of a base row within the joint set are among its
/// nearest base rows plus the prefix rows, and distances are computed by the
/// same kernel, so the result equals [`knn_search`] on the concatenation.
/// This makes predicting one image against several RepSets cheap.
pub fn knn_search_with_prefix(
    prefix: &NormalizedFeatures,
    base: &NormalizedFeatures,
    base_knn: &KnnResult,
    k: usize,
) -> Result<KnnResult> {
    let r = prefix.features.n();
    let nb = base.features.n();
    let n = r + nb;
    if k == 0 || k >= n {
        return Err(Error::TooFewPoints { k, n });
    }
    let dim = base.features.dim();
    if prefix.features.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: prefix.features.dim(),
        });
    }
    let reuse = k.min(nb.saturating_sub(1));
    if base_knn.n() != nb || base_knn.k < reuse {
        return Err(Error::Shape(format!(
            "base KNN covers {} nodes with {} neighbors; need {nb} nodes with at least {reuse}",
            base_knn.n(),
            base_knn.k
        )));
    }
    let widen = |m: &FeatureMatrix| -> Vec<f64> { m.data().iter().map(|&v| v as f64).collect() };
    let (pw, bw) = (widen(&prefix.features), widen(&base.features));
    let row = |i: usize| {
        if i < r {
            &pw[i * dim..(i + 1) * dim]
        } else {
            &bw[(i - r) * dim..(i - r + 1) * dim]
        }
    };
    let zero = |i: usize| {
        if i < r {
            prefix.zero_rows[i]
        } else {
            base.zero_rows[i - r]
        }
    };
    let dist = |i: usize, j: usize| {
        if zero(i) || zero(j) {
            ZERO_ROW_DISTANCE * ZERO_ROW_DISTANCE
        } else {
            sq_dist(row(i), row(j))
        }
    };
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));

    let per_row: Vec<Vec<(f64, usize)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut buf: Vec<(f64, usize)> = if i < r {
                (0..n).filter(|&j| j != i).map(|j| (dist(i, j), j)).collect()
            } else {
                let p = i - r;
                let mut c: Vec<(f64, usize)> = (0..r).map(|j| (dist(i, j), j)).collect();
                let slots = p * base_knn.k..p * base_knn.k + reuse;
                c.extend(
                    base_knn.sq_distances[slots.clone()]
                        .iter()
                        .zip(&base_knn.indices[slots])
                        .map(|(&d2, &q)| (d2, q + r)),
                );
                c
            };
            buf.select_nth_unstable_by(k - 1, cmp);
            buf.truncate(k);
            buf.sort_unstable_by(cmp);
            buf
        })
        .collect();
    Ok(collect_knn(k, per_row))
}

fn collect_knn(k: usize, per_row: Vec<Vec<(f64, usize)>>) -> KnnResult {
    let n = per_row.len();
    let mut indices = Vec::with_capacity(n * k);
    let mut distances = Vec::with_capacity(n * k);
    let mut sq_distances = Vec::with_capacity(n * k);
    for top in per_row {
        for (d2, j) in top {
            indices.push(j);
            sq_distances.push(d2);
            distances.push(d2.sqrt());
        }
    }
    KnnResult {
        k,
        indices,
        distances,
        sq_distances,
    }
}

/// Symmetric weight matrix `W`, degrees, and Laplacian `L = D - W`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseGraph {
    weights: CsrMatrix,
    degrees: Vec<f64>,
    laplacian: CsrMatrix,
}

impl SparseGraph {
    /// Wraps a symmetric, nonnegative, zero-diagonal weight matrix.
    pub fn from_weights(weights: CsrMatrix) -> Result<Self> {
        let n = weights.n_rows();
        if !weights.is_symmetric() {
            return Err(Error::Shape("weight matrix must be symmetric".into()));
        }
        let mut degrees = Vec::with_capacity(n);
        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::with_capacity(weights.nnz() + n);
        let mut values = Vec::with_capacity(weights.nnz() + n);
        for i in 0..n {
            let (cols, vals) = weights.row(i);
            if vals.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                return Err(Error::Shape(format!("row {i} has a negative or non-finite weight")));
            }
            if cols.binary_search(&i).is_ok() {
                return Err(Error::Shape(format!("row {i} has a self loop")));
            }
            let d: f64 = vals.iter().sum();
            degrees.push(d);
            let split = cols.partition_point(|&c| c < i);
            for (&c, &v) in cols[..split].iter().zip(&vals[..split]) {
                col_idx.push(c);
                values.push(-v);
            }
            col_idx.push(i);
            values.push(d);
            for (&c, &v) in cols[split..].iter().zip(&vals[split..]) {
                col_idx.push(c);
                values.push(-v);
            }
            row_ptr.push(col_idx.len());
        }
        let laplacian = CsrMatrix::from_raw(n, n, row_ptr, col_idx, values)?;
        Ok(Self {
            weights,
            degrees,
            laplacian,
        })
    }

    pub fn n(&self) -> usize {
        self.weights.n_rows()
    }

    pub fn weights(&self) -> &CsrMatrix {
        &self.weights
    }

    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    pub fn laplacian(&self) -> &CsrMatrix {
        &self.laplacian
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        self.weights.row(i).0
    }

    /// Connected component id of every node (ids in order of first node).
    pub fn components(&self) -> Vec<usize> {
        let n = self.n();
        let mut comp = vec![usize::MAX; n];
        let mut next = 0;
        let mut stack = Vec::new();
        for start in 0..n {
            if comp[start] != usize::MAX {
                continue;
            }
            comp[start] = next;
            stack.push(start);
            while let Some(u) = stack.pop() {
                let (cols, vals) = self.weights.row(u);
                for (&v, &w) in cols.iter().zip(vals) {
                    if w > 0.0 && comp[v] == usize::MAX {
                        comp[v] = next;
                        stack.push(v);
                    }
                }
            }
            next += 1;
        }
        comp
    }
}

/// Builds the symmetrized self-tuning KNN graph from already-normalized rows.
pub fn build_graph(normalized: &NormalizedFeatures, config: &GraphConfig) -> Result<SparseGraph> {
    config.validate()?;
    let knn = knn_search(normalized, config.k)?;
    graph_from_knn(&knn, config)
}

/// Weighting and symmetrization step of [`build_graph`].
pub fn graph_from_knn(knn: &KnnResult, config: &GraphConfig) -> Result<SparseGraph> {
    let n = knn.n();
    let k = knn.k;
    let mut triplets = Vec::with_capacity(2 * n * k);
    for i in 0..n {
        let s = knn.distances[i * k + k - 1].max(config.min_scale);
        let s2 = s * s;
        for slot in i * k..(i + 1) * k {
            let j = knn.indices[slot];
            let w = (-config.alpha * knn.sq_distances[slot] / s2).exp();
            triplets.push((i, j, 0.5 * w));
            triplets.push((j, i, 0.5 * w));
        }
    }
    SparseGraph::from_weights(CsrMatrix::from_triplets(n, n, &triplets)?)
}
