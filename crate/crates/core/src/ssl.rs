//! Graph Laplace learning: harmonic extension of one-hot labels.
//!
//! With `L = D - W` split into labeled (`l`) and unlabeled (`u`) blocks, the
//! scores of the unlabeled nodes solve `L_uu U_u = W_ul Y`, one conjugate
//! gradient solve per class column. Unlabeled nodes in components that hold
//! no labeled node are marked unreachable and receive the uniform row `1/C`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::SparseGraph;
use crate::sparse_linalg::{cg_solve_from, CgConfig, CgReport};

/// Labels on a subset of graph nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelAssignment {
    indices: Vec<usize>,
    labels: Vec<u8>,
    classes: usize,
}

impl LabelAssignment {
    pub fn new(indices: Vec<usize>, labels: Vec<u8>, classes: usize) -> Result<Self> {
        if indices.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: indices.len(),
                got: labels.len(),
            });
        }
        if classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {classes}")));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= classes) {
            return Err(Error::Config(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        let mut sorted = indices.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("labeled node listed twice".into()));
        }
        Ok(Self {
            indices,
            labels,
            classes,
        })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// One-hot rows, `|L| x C`.
    pub fn onehot(&self) -> Vec<Vec<f64>> {
        self.labels
            .iter()
            .map(|&l| {
                let mut row = vec![0.0; self.classes];
                row[l as usize] = 1.0;
                row
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeState {
    Labeled,
    Solved,
    Unreachable,
}

/// Class scores of every node, `n x C` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    classes: usize,
    scores: Vec<f64>,
    states: Vec<NodeState>,
    reports: Vec<CgReport>,
}

impl ScoreMatrix {
    pub fn n(&self) -> usize {
        self.states.len()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.scores[i * self.classes..(i + 1) * self.classes]
    }

    pub fn state(&self, i: usize) -> NodeState {
        self.states[i]
    }

    pub fn states(&self) -> &[NodeState] {
        &self.states
    }

    /// One report per class solve (empty when nothing needed solving).
    pub fn reports(&self) -> &[CgReport] {
        &self.reports
    }

    pub fn converged(&self) -> bool {
        self.reports.iter().all(|r| r.converged)
    }
}

pub fn laplace_learning(
    graph: &SparseGraph,
    labels: &LabelAssignment,
    solver: &CgConfig,
) -> Result<ScoreMatrix> {
    laplace_learning_warm(graph, labels, solver, None)
}

/// [`laplace_learning`] with CG started from a previous solution on the same graph.
pub fn laplace_learning_warm(
    graph: &SparseGraph,
    labels: &LabelAssignment,
    solver: &CgConfig,
    warm: Option<&ScoreMatrix>,
) -> Result<ScoreMatrix> {
    let n = graph.n();
    let c = labels.classes();
    if labels.is_empty() {
        return Err(Error::NoLabels);
    }
    if let Some(&bad) = labels.indices().iter().find(|&&i| i >= n) {
        return Err(Error::Config(format!("labeled node {bad} outside graph of {n} nodes")));
    }
    let warm = warm.filter(|w| w.n() == n && w.classes() == c);

    let mut label_of = vec![u8::MAX; n];
    for (&i, &l) in labels.indices().iter().zip(labels.labels()) {
        label_of[i] = l;
    }
    let comp = graph.components();
    let n_comp = comp.iter().max().map_or(0, |m| m + 1);
    let mut comp_has_label = vec![false; n_comp];
    for &i in labels.indices() {
        comp_has_label[comp[i]] = true;
    }

    let mut scores = vec![0.0; n * c];
    let mut states = vec![NodeState::Solved; n];
    let mut unknown = Vec::new();
    for i in 0..n {
        if label_of[i] != u8::MAX {
            states[i] = NodeState::Labeled;
            scores[i * c + label_of[i] as usize] = 1.0;
        } else if !comp_has_label[comp[i]] {
            states[i] = NodeState::Unreachable;
            scores[i * c..(i + 1) * c].fill(1.0 / c as f64);
        } else {
            unknown.push(i);
        }
    }

    let mut reports = Vec::new();
    if !unknown.is_empty() {
        let l_uu = graph.laplacian().principal_submatrix(&unknown);
        let w = graph.weights();
        let solutions: Vec<_> = (0..c)
            .into_par_iter()
            .map(|class| {
                let b: Vec<f64> = unknown
                    .iter()
                    .map(|&u| {
                        let (cols, vals) = w.row(u);
                        cols.iter()
                            .zip(vals)
                            .filter(|(&j, _)| label_of[j] as usize == class)
                            .map(|(_, &v)| v)
                            .sum()
                    })
                    .collect();
                let x0: Option<Vec<f64>> =
                    warm.map(|w| unknown.iter().map(|&u| w.row(u)[class]).collect());
                cg_solve_from(&l_uu, &b, x0.as_deref(), solver)
            })
            .collect::<Result<_>>()?;
        for (class, sol) in solutions.into_iter().enumerate() {
            for (&u, &v) in unknown.iter().zip(&sol.x) {
                scores[u * c + class] = v;
            }
            reports.push(sol.report);
        }
    }

    Ok(ScoreMatrix {
        classes: c,
        scores,
        states,
        reports,
    })
}

/// Index of the largest entry; ties go to the lowest index.
#[inline]
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Per-node argmax class, ties broken toward the lowest class code.
pub fn predict_labels(scores: &ScoreMatrix) -> Vec<u8> {
    (0..scores.n()).map(|i| argmax(scores.row(i)) as u8).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse_linalg::CsrMatrix;

    fn graph(dense: &[Vec<f64>]) -> SparseGraph {
        SparseGraph::from_weights(CsrMatrix::from_dense(dense).unwrap()).unwrap()
    }

    fn tight() -> CgConfig {
        CgConfig {
            tol: 1e-12,
            ..CgConfig::default()
        }
    }

    #[test]
    fn path_midpoint_is_even() {
        let g = graph(&[
            vec![0.0, 1.0, 0.0],
            vec![1.0, 0.0, 1.0],
            vec![0.0, 1.0, 0.0],
        ]);
        let labels = LabelAssignment::new(vec![0, 2], vec![0, 1], 2).unwrap();
        let u = laplace_learning(&g, &labels, &tight()).unwrap();
        assert!((u.row(1)[0] - 0.5).abs() < 1e-12 && (u.row(1)[1] - 0.5).abs() < 1e-12);
        assert_eq!(u.state(1), NodeState::Solved);
        assert_eq!(predict_labels(&u)[1], 0);
    }

    #[test]
    fn star_center_averages_leaves() {
        let mut d = vec![vec![0.0; 4]; 4];
        for leaf in 1..4 {
            d[0][leaf] = 1.0;
            d[leaf][0] = 1.0;
        }
        let g = graph(&d);
        let labels = LabelAssignment::new(vec![1, 2, 3], vec![0, 0, 1], 2).unwrap();
        let u = laplace_learning(&g, &labels, &tight()).unwrap();
        assert!((u.row(0)[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((u.row(0)[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn fully_labeled_needs_no_solve() {
        let g = graph(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
        let labels = LabelAssignment::new(vec![1, 0], vec![2, 0], 3).unwrap();
        let u = laplace_learning(&g, &labels, &CgConfig::default()).unwrap();
        assert!(u.reports().is_empty());
        assert_eq!(u.row(0), &[1.0, 0.0, 0.0]);
        assert_eq!(u.row(1), &[0.0, 0.0, 1.0]);
        assert_eq!(predict_labels(&u), vec![0, 2]);
    }

    #[test]
    fn unreachable_nodes_get_uniform_rows() {
        let g = graph(&[
            vec![0.0, 1.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.0, 1.0],
            vec![0.0, 0.0, 1.0, 0.0],
        ]);
        let labels = LabelAssignment::new(vec![0], vec![1], 3).unwrap();
        let u = laplace_learning(&g, &labels, &tight()).unwrap();
        assert_eq!(u.state(2), NodeState::Unreachable);
        assert_eq!(u.row(3), &[1.0 / 3.0; 3]);
        assert!((u.row(1)[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        let g = graph(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
        let empty = LabelAssignment::new(vec![], vec![], 2).unwrap();
        assert!(matches!(
            laplace_learning(&g, &empty, &CgConfig::default()),
            Err(Error::NoLabels)
        ));
        assert!(LabelAssignment::new(vec![0, 0], vec![0, 1], 2).is_err());
        assert!(LabelAssignment::new(vec![0], vec![3], 2).is_err());
        assert!(LabelAssignment::new(vec![0], vec![0], 1).is_err());
        let oob = LabelAssignment::new(vec![5], vec![0], 2).unwrap();
        assert!(laplace_learning(&g, &oob, &CgConfig::default()).is_err());
    }

    #[test]
    fn argmax_rules() {
        assert_eq!(argmax(&[0.2, 0.7, 0.1]), 1);
        assert_eq!(argmax(&[0.5, 0.5, 0.0]), 0);
        assert_eq!(argmax(&[0.0, 0.3, 0.3]), 1);
    }
}
