mod common;

use std::collections::HashSet;

use nalgebra::DMatrix;
use proptest::prelude::*;

use common::{dense, random_connected_graph, random_labels, rng};
use gap_core::active::{
    acquisition_mc, active_learning_loop, init_repset, Acquisition, ActiveConfig, LoopInputs,
    PreparedImage,
};
use gap_core::graph::SparseGraph;
use gap_core::pipeline::PipelineConfig;
use gap_core::raster_io::{generate_synthetic, SynthConfig};
use gap_core::sparse_linalg::{lanczos_lowest, CgConfig, CsrMatrix};
use gap_core::ssl::{laplace_learning, LabelAssignment, NodeState};

fn tight() -> CgConfig {
    CgConfig {
        tol: 1e-12,
        ..CgConfig::default()
    }
}

fn harmonic_oracle(graph: &SparseGraph, labels: &LabelAssignment, unlabeled: &[usize]) -> DMatrix<f64> {
    let l = dense(graph.laplacian());
    let w = dense(graph.weights());
    let nu = unlabeled.len();
    let l_uu = DMatrix::from_fn(nu, nu, |a, b| l[(unlabeled[a], unlabeled[b])]);
    let rhs = DMatrix::from_fn(nu, labels.classes(), |a, c| {
        labels
            .indices()
            .iter()
            .zip(labels.labels())
            .filter(|(_, &y)| y as usize == c)
            .map(|(&j, _)| w[(unlabeled[a], j)])
            .sum()
    });
    l_uu.lu().solve(&rhs).unwrap()
}

#[test]
fn path_midpoint_splits_evenly() {
    let w = CsrMatrix::from_triplets(3, 3, &[(0, 1, 1.0), (1, 0, 1.0), (1, 2, 1.0), (2, 1, 1.0)]).unwrap();
    let g = SparseGraph::from_weights(w).unwrap();
    let labels = LabelAssignment::new(vec![0, 2], vec![0, 1], 2).unwrap();
    let s = laplace_learning(&g, &labels, &tight()).unwrap();
    assert!((s.row(1)[0] - 0.5).abs() < 1e-12);
    assert!((s.row(1)[1] - 0.5).abs() < 1e-12);
}

#[test]
fn unreachable_component_is_flagged_uniform() {
    let w = CsrMatrix::from_triplets(4, 4, &[(0, 1, 1.0), (1, 0, 1.0), (2, 3, 1.0), (3, 2, 1.0)]).unwrap();
    let g = SparseGraph::from_weights(w).unwrap();
    let labels = LabelAssignment::new(vec![0], vec![1], 2).unwrap();
    let s = laplace_learning(&g, &labels, &tight()).unwrap();
    assert_eq!(s.state(1), NodeState::Solved);
    assert_eq!(s.state(2), NodeState::Unreachable);
    assert_eq!(s.row(3), &[0.5, 0.5]);
}

#[test]
fn mc_scores_match_dense_covariance() {
    let mut rng = rng(31);
    let (gamma, tau) = (0.1, 0.1);
    for trial in 0..10 {
        let graph = random_connected_graph(&mut rng, 40, 5);
        let n = graph.n();
        let (labels, unlabeled) = random_labels(&mut rng, n, 3);
        let scores = laplace_learning(&graph, &labels, &tight()).unwrap();
        let eig = lanczos_lowest(graph.laplacian(), n, 1e-12, trial).unwrap();
        let got = acquisition_mc(&scores, &eig, &unlabeled, gamma, tau).unwrap();

        let cov = (dense(graph.laplacian()) + DMatrix::identity(n, n) * (tau * tau))
            .try_inverse()
            .unwrap();
        for (&k, &score) in unlabeled.iter().zip(&got) {
            let row = scores.row(k);
            let y = (0..3).fold(0, |b, c| if row[c] > row[b] { c } else { b });
            let res = (0..3)
                .map(|c| (if c == y { 1.0 } else { 0.0 } - row[c]).powi(2))
                .sum::<f64>()
                .sqrt();
            let want = res * cov.column(k).norm() / (gamma * gamma + cov[(k, k)]);
            assert!((score - want).abs() <= 1e-8, "trial {trial}, node {k}");
        }
    }
}

#[test]
fn mc_scores_respect_graph_symmetry() {
    // A path 0-1-2-3-4 labeled at both ends with the same class: 1 and 3 are
    // exchanged by the reflection that fixes the labeled set.
    let mut t = Vec::new();
    for i in 0..4 {
        t.push((i, i + 1, 1.0));
        t.push((i + 1, i, 1.0));
    }
    let g = SparseGraph::from_weights(CsrMatrix::from_triplets(5, 5, &t).unwrap()).unwrap();
    let labels = LabelAssignment::new(vec![0, 2, 4], vec![0, 1, 0], 2).unwrap();
    let scores = laplace_learning(&g, &labels, &tight()).unwrap();
    let eig = lanczos_lowest(g.laplacian(), 5, 1e-12, 3).unwrap();
    let s = acquisition_mc(&scores, &eig, &[1, 3], 0.1, 0.1).unwrap();
    assert!((s[0] - s[1]).abs() <= 1e-12);
    assert!(s.iter().all(|v| v.is_finite() && *v >= 0.0));
}

#[test]
fn loop_never_acquires_twice_and_respects_budget() {
    let (patch, mask) = generate_synthetic(&SynthConfig {
        height: 24,
        width: 24,
        seed: 3,
        ..SynthConfig::default()
    })
    .unwrap();
    let mut settings = PipelineConfig::default().settings();
    settings.active.k_max = 25;
    settings.active.epsilon = 0.0;
    for acquisition in [Acquisition::ModelChange, Acquisition::Uncertainty, Acquisition::Random] {
        settings.active.acquisition = acquisition;
        let prepared = PreparedImage::new(&patch, &mask, 5, &settings).unwrap();
        let mut r = rng(4);
        let initial = init_repset(mask.labels(), settings.active.n0, &mut r).unwrap();
        let inputs = LoopInputs {
            truth: mask.labels(),
            initial: &initial,
            eig: prepared.eig.as_ref(),
            solver: &settings.solver,
        };
        let (set, trace) = active_learning_loop(&prepared.graph, &inputs, &settings.active, &mut r).unwrap();
        let unique: HashSet<usize> = set.iter().copied().collect();
        assert_eq!(unique.len(), set.len());
        assert_eq!(&set[..initial.len()], &initial[..]);
        assert_eq!(set.len(), initial.len() + 25);
        assert_eq!(trace.acquisitions(), 25);
        let chosen: Vec<usize> = trace.records.iter().filter_map(|r| r.chosen).collect();
        assert_eq!(&chosen[..], &set[initial.len()..]);
    }
}

#[test]
fn init_takes_n0_per_present_class() {
    let labels: Vec<u8> = (0..100).map(|i| if i < 70 { 0 } else if i < 73 { 2 } else if i < 80 { 255 } else { 1 }).collect();
    let mut r = rng(9);
    let init = init_repset(&labels, 5, &mut r).unwrap();
    let count = |c: u8| init.iter().filter(|&&i| labels[i] == c).count();
    assert_eq!((count(0), count(1), count(2), count(255)), (5, 5, 3, 0));
}

#[test]
fn trace_on_small_image_improves_on_initial_accuracy() {
    let (patch, mask) = generate_synthetic(&SynthConfig {
        height: 32,
        width: 32,
        seed: 1,
        ..SynthConfig::default()
    })
    .unwrap();
    let settings = PipelineConfig::default().settings();
    let sel = PreparedImage::new(&patch, &mask, 0, &settings)
        .unwrap()
        .select(&settings)
        .unwrap();
    let a0 = sel.trace.records[0].accuracy;
    assert!(sel.trace.final_accuracy() >= a0, "a0 {a0}, final {}", sel.trace.final_accuracy());
    assert!(sel.acquired <= settings.active.k_max);
}

#[test]
fn model_change_needs_eigenpairs() {
    let (patch, mask) = generate_synthetic(&SynthConfig {
        height: 16,
        width: 16,
        ..SynthConfig::default()
    })
    .unwrap();
    let mut settings = PipelineConfig::default().settings();
    settings.active.acquisition = Acquisition::Random;
    let prepared = PreparedImage::new(&patch, &mask, 0, &settings).unwrap();
    settings.active.acquisition = Acquisition::ModelChange;
    assert!(prepared.select(&settings).is_err());
}

#[test]
fn active_config_rejects_bad_values() {
    let bad = [
        ActiveConfig { n0: 0, ..ActiveConfig::default() },
        ActiveConfig { epsilon: -1.0, ..ActiveConfig::default() },
        ActiveConfig { tau: 0.0, ..ActiveConfig::default() },
        ActiveConfig { m: 0, ..ActiveConfig::default() },
        ActiveConfig { eigen_tol: 0.0, ..ActiveConfig::default() },
    ];
    for c in bad {
        assert!(c.validate().is_err(), "{c:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn harmonic_solution_matches_dense_solve(seed in any::<u64>(), n in 6usize..60, classes in 2usize..4) {
        let mut rng = rng(seed);
        let graph = random_connected_graph(&mut rng, n, 5);
        let (labels, unlabeled) = random_labels(&mut rng, n, classes);
        let s = laplace_learning(&graph, &labels, &tight()).unwrap();
        let want = harmonic_oracle(&graph, &labels, &unlabeled);
        for (a, &u) in unlabeled.iter().enumerate() {
            let row = s.row(u);
            for c in 0..classes {
                prop_assert!((row[c] - want[(a, c)]).abs() <= 1e-8);
                prop_assert!(row[c] >= -1e-9 && row[c] <= 1.0 + 1e-9);
            }
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
        }
        for (&i, &y) in labels.indices().iter().zip(labels.labels()) {
            prop_assert_eq!(s.state(i), NodeState::Labeled);
            prop_assert_eq!(s.row(i)[y as usize], 1.0);
        }
    }

    #[test]
    fn solved_rows_are_harmonic(seed in any::<u64>(), n in 6usize..60) {
        let mut rng = rng(seed);
        let graph = random_connected_graph(&mut rng, n, 4);
        let (labels, unlabeled) = random_labels(&mut rng, n, 3);
        let s = laplace_learning(&graph, &labels, &tight()).unwrap();
        for c in 0..3 {
            let col: Vec<f64> = (0..n).map(|i| s.row(i)[c]).collect();
            let lu = graph.laplacian().spmv(&col).unwrap();
            for &u in &unlabeled {
                prop_assert!(lu[u].abs() <= 1e-6);
            }
        }
    }
}
