#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use gap_core::features::{FeatureMatrix, Provenance};
use gap_core::graph::{build_graph, normalize_rows, GraphConfig, SparseGraph};
use gap_core::sparse_linalg::CsrMatrix;
use gap_core::ssl::LabelAssignment;

pub fn rng(seed: u64) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

pub fn dense(a: &CsrMatrix) -> DMatrix<f64> {
    let rows = a.to_dense();
    DMatrix::from_fn(a.n_rows(), a.n_cols(), |i, j| rows[i][j])
}

pub fn features(dim: usize, data: Vec<f32>) -> FeatureMatrix {
    let n = data.len() / dim;
    let prov = (0..n as u32)
        .map(|i| Provenance {
            image_id: 0,
            row: 0,
            col: i,
        })
        .collect();
    FeatureMatrix::new(dim, data, prov).unwrap()
}

pub fn random_features(rng: &mut impl Rng, n: usize, dim: usize) -> FeatureMatrix {
    features(dim, (0..n * dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect())
}

pub fn random_connected_graph(rng: &mut impl Rng, n: usize, k: usize) -> SparseGraph {
    loop {
        let dim = rng.gen_range(2..=5);
        let f = random_features(rng, n, dim);
        let config = GraphConfig {
            k: k.min(n - 1),
            ..GraphConfig::default()
        };
        let graph = build_graph(&normalize_rows(&f), &config).unwrap();
        if graph.components().iter().all(|&c| c == 0) {
            return graph;
        }
    }
}

/// A labeled set that touches every class; returns it with the unlabeled nodes.
pub fn random_labels(
    rng: &mut impl Rng,
    n: usize,
    classes: usize,
) -> (LabelAssignment, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let count = rng.gen_range(classes..=(n / 3).max(classes));
    let labels = (0..count)
        .map(|i| if i < classes { i as u8 } else { rng.gen_range(0..classes) as u8 })
        .collect();
    let mut unlabeled = order[count..].to_vec();
    unlabeled.sort_unstable();
    let labeled = order[..count].to_vec();
    (LabelAssignment::new(labeled, labels, classes).unwrap(), unlabeled)
}

pub fn max_abs_diff<'a>(a: impl IntoIterator<Item = &'a f64>, b: impl IntoIterator<Item = &'a f64>) -> f64 {
    a.into_iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
