//! Thick-restart Lanczos with full reorthogonalization for the lowest
//! eigenpairs of a symmetric matrix.
//!
//! The basis grows to at most `max_basis` vectors. Every new vector is
//! orthogonalized twice against the whole basis (classical Gram-Schmidt,
//! twice), and the projected matrix `H = Q^T A Q` is kept explicitly, so the
//! relation `A Q = Q H + beta q_next e_last^T` holds throughout. When the
//! basis is full, the lowest Ritz vectors are kept and the iteration resumes
//! from the residual direction. A Ritz pair `(theta, Q y)` has residual norm
//! `beta * |y_last|`, which is the convergence test.
//!
//! When the recurrence breaks down on an invariant subspace, the iteration
//! continues from a random vector orthogonal to the basis; this is how
//! repeated eigenvalues (e.g. the null space of a disconnected graph
//! Laplacian) are resolved.

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;

use super::dense::symmetric_eigen;
use super::{axpy, dot, norm2, CsrMatrix};
use crate::error::{Error, Result};

/// `m` eigenpairs in ascending eigenvalue order.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenPairs {
    n: usize,
    eigenvalues: Vec<f64>,
    /// `n x m`, row-major: row `k` holds component `k` of every eigenvector.
    vectors: Vec<f64>,
}

impl EigenPairs {
    pub fn new(n: usize, eigenvalues: Vec<f64>, vectors: Vec<f64>) -> Result<Self> {
        if vectors.len() != n * eigenvalues.len() {
            return Err(Error::Shape(format!(
                "{} eigenvalues on {n} nodes need {} vector entries, got {}",
                eigenvalues.len(),
                n * eigenvalues.len(),
                vectors.len()
            )));
        }
        Ok(Self {
            n,
            eigenvalues,
            vectors,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Components of all `m` eigenvectors at node `k`.
    #[inline]
    pub fn node_row(&self, k: usize) -> &[f64] {
        let m = self.m();
        &self.vectors[k * m..(k + 1) * m]
    }

    pub fn vector(&self, j: usize) -> Vec<f64> {
        (0..self.n).map(|k| self.vectors[k * self.m() + j]).collect()
    }

    /// `||A v_j - lambda_j v_j||_2` for every pair.
    pub fn residuals(&self, a: &CsrMatrix) -> Vec<f64> {
        (0..self.m())
            .map(|j| {
                let v = self.vector(j);
                let av = a.spmv(&v).expect("matrix matches eigenvector length");
                av.iter()
                    .zip(&v)
                    .map(|(x, y)| (x - self.eigenvalues[j] * y).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect()
    }

    /// `max |V^T V - I|`.
    pub fn orthogonality_error(&self) -> f64 {
        let m = self.m();
        let mut worst = 0.0f64;
        for a in 0..m {
            for b in a..m {
                let g: f64 = (0..self.n)
                    .map(|k| self.vectors[k * m + a] * self.vectors[k * m + b])
                    .sum();
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((g - target).abs());
            }
        }
        worst
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LanczosOptions {
    /// Ritz pair accepted when its residual is at most `tol * max(1, |theta|)`.
    pub tol: f64,
    /// Basis size before a restart; `None` means `min(n, max(2m + 20, m + 40))`.
    pub max_basis: Option<usize>,
    /// Cap on matrix-vector products; `None` means `max(100 n, 20000)`.
    pub max_matvecs: Option<usize>,
    pub seed: u64,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_basis: None,
            max_matvecs: None,
            seed: 0,
        }
    }
}

pub fn lanczos_lowest(a: &CsrMatrix, m: usize, tol: f64, seed: u64) -> Result<EigenPairs> {
    lanczos_lowest_with(
        a,
        m,
        &LanczosOptions {
            tol,
            seed,
            ..LanczosOptions::default()
        },
    )
}

fn random_unit_orthogonal(
    rng: &mut Xoshiro256PlusPlus,
    basis: &[Vec<f64>],
    n: usize,
) -> Option<Vec<f64>> {
    for _ in 0..10 {
        let mut v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let start = norm2(&v);
        orthogonalize(&mut v, basis);
        let nv = norm2(&v);
        if nv > 1e-8 * start {
            v.iter_mut().for_each(|x| *x /= nv);
            return Some(v);
        }
    }
    None
}

/// Two passes of classical Gram-Schmidt; returns the accumulated coefficients.
fn orthogonalize(w: &mut [f64], basis: &[Vec<f64>]) -> Vec<f64> {
    let mut total = vec![0.0; basis.len()];
    for _ in 0..2 {
        let coeffs: Vec<f64> = basis.iter().map(|q| dot(q, w)).collect();
        for ((q, c), t) in basis.iter().zip(coeffs).zip(total.iter_mut()) {
            axpy(-c, q, w);
            *t += c;
        }
    }
    total
}

/// `sum_i basis[i] * coeffs[i]`
fn combine(basis: &[Vec<f64>], coeffs: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for (q, &c) in basis.iter().zip(coeffs) {
        axpy(c, q, &mut out);
    }
    out
}

struct RitzState {
    values: Vec<f64>,
    /// `y[row][col]`, eigenvectors of the projected matrix.
    vectors: Vec<Vec<f64>>,
}

fn ritz(h: &[Vec<f64>]) -> RitzState {
    let k = h.len();
    let sym: Vec<Vec<f64>> = (0..k)
        .map(|i| (0..k).map(|j| 0.5 * (h[i][j] + h[j][i])).collect())
        .collect();
    let (values, vectors) = symmetric_eigen(&sym);
    RitzState { values, vectors }
}

/// Result of one restarted Krylov run on an abstract operator.
struct KrylovOutcome {
    values: Vec<f64>,
    vectors: Vec<Vec<f64>>,
    estimates: Vec<f64>,
    converged: bool,
    matvecs: usize,
}

struct KrylovParams {
    m: usize,
    max_basis: usize,
    tol: f64,
    max_matvecs: usize,
}

/// Lowest `m` eigenpairs of the symmetric operator `apply` by thick-restart
/// Lanczos. Stops on convergence, on exhausting the space, or at the matvec cap.
fn krylov_lowest(
    apply: &dyn Fn(&[f64], &mut [f64]),
    n: usize,
    p: &KrylovParams,
    rng: &mut Xoshiro256PlusPlus,
) -> KrylovOutcome {
    let m = p.m;
    let max_basis = p.max_basis.clamp(m, n);
    let keep = if max_basis == m {
        m
    } else {
        (m + (max_basis - m) / 2).clamp(m, max_basis - 1)
    };
    let mut basis: Vec<Vec<f64>> = vec![random_unit_orthogonal(rng, &[], n).expect("n >= 1")];
    // Projected matrix Q^T A Q, filled from the reorthogonalization coefficients.
    let mut h: Vec<Vec<f64>> = Vec::new();
    let mut w = vec![0.0; n];
    let mut matvecs = 0;

    loop {
        let mut beta;
        let next: Option<Vec<f64>>;
        loop {
            let j = basis.len() - 1;
            apply(&basis[j], &mut w);
            matvecs += 1;
            let coeffs = orthogonalize(&mut w, &basis);
            for row in h.iter_mut() {
                row.push(0.0);
            }
            h.push(vec![0.0; j + 1]);
            for (i, &c) in coeffs.iter().enumerate() {
                h[i][j] = c;
                h[j][i] = c;
            }
            beta = norm2(&w);
            let scale = coeffs.iter().fold(beta, |acc, c| acc.max(c.abs()));
            let broke = beta <= 1e-12 * scale.max(f64::MIN_POSITIVE);
            let candidate = if basis.len() == n {
                beta = 0.0;
                None
            } else if broke {
                // Invariant subspace: continue with zero coupling.
                beta = 0.0;
                random_unit_orthogonal(rng, &basis, n)
            } else {
                Some(w.iter().map(|x| x / beta).collect())
            };
            match candidate {
                Some(q) if basis.len() < max_basis && matvecs < p.max_matvecs => basis.push(q),
                other => {
                    next = other;
                    break;
                }
            }
        }

        let dim = basis.len();
        let state = ritz(&h);
        let last = dim - 1;
        let count = m.min(dim);
        let estimates: Vec<f64> = (0..count)
            .map(|i| (beta * state.vectors[last][i]).abs())
            .collect();
        let converged = count == m
            && state.values[..m]
                .iter()
                .zip(&estimates)
                .all(|(t, r)| *r <= p.tol * t.abs().max(1.0));
        let exhausted = next.is_none();
        if converged || exhausted || matvecs >= p.max_matvecs {
            let vectors = (0..count)
                .map(|i| {
                    let coeffs: Vec<f64> = (0..dim).map(|r| state.vectors[r][i]).collect();
                    combine(&basis, &coeffs, n)
                })
                .collect();
            return KrylovOutcome {
                values: state.values[..count].to_vec(),
                vectors,
                estimates,
                converged: converged || (exhausted && count == m),
                matvecs,
            };
        }

        // Thick restart: keep the lowest `keep` Ritz vectors plus the residual direction.
        let kept = keep.min(dim);
        let mut new_basis = Vec::with_capacity(max_basis + 1);
        for i in 0..kept {
            let coeffs: Vec<f64> = (0..dim).map(|r| state.vectors[r][i]).collect();
            new_basis.push(combine(&basis, &coeffs, n));
        }
        let mut new_h = vec![vec![0.0; kept]; kept];
        for (i, row) in new_h.iter_mut().enumerate() {
            row[i] = state.values[i];
        }
        let mut q = next.expect("not exhausted");
        // Re-orthogonalize against the rotated basis to absorb rounding.
        orthogonalize(&mut q, &new_basis);
        let nq = norm2(&q);
        q.iter_mut().for_each(|x| *x /= nq);
        new_basis.push(q);
        basis = new_basis;
        h = new_h;
    }
}

/// Upper bound on the spectrum from Gershgorin discs.
fn gershgorin_max(a: &CsrMatrix) -> f64 {
    (0..a.n_rows())
        .map(|i| {
            let (cols, vals) = a.row(i);
            cols.iter()
                .zip(vals)
                .map(|(&j, &v)| if j == i { v } else { v.abs() })
                .sum::<f64>()
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Below this size the unfiltered iteration is cheap enough on its own.
const FILTER_MIN_N: usize = 400;
/// Target amplification of the low end of the spectrum by the filter.
const FILTER_GAIN: f64 = 1e4;
const FILTER_MAX_DEGREE: usize = 400;

pub fn lanczos_lowest_with(a: &CsrMatrix, m: usize, opts: &LanczosOptions) -> Result<EigenPairs> {
    let n = a.n_rows();
    if a.n_cols() != n || !a.is_symmetric() {
        return Err(Error::Shape("lanczos needs a symmetric matrix".into()));
    }
    if m == 0 || m > n {
        return Err(Error::Config(format!(
            "eigenpair count must be in 1..={n}, got {m}"
        )));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::Config("lanczos tol must be positive".into()));
    }
    let max_basis = opts.max_basis.unwrap_or((2 * m + 20).max(m + 40));
    let max_matvecs = opts.max_matvecs.unwrap_or((100 * n).max(20_000));
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(opts.seed);

    if n >= FILTER_MIN_N && opts.max_basis.is_none() && opts.max_matvecs.is_none() {
        if let Some(pairs) = filtered(a, m, opts.tol, max_basis, max_matvecs, &mut rng) {
            return Ok(pairs);
        }
        log::debug!("filtered lanczos did not verify; falling back to the plain iteration");
    }

    let spmv = |x: &[f64], y: &mut [f64]| a.spmv_into(x, y);
    let out = krylov_lowest(
        &spmv,
        n,
        &KrylovParams {
            m,
            max_basis,
            tol: opts.tol,
            max_matvecs,
        },
        &mut rng,
    );
    if !out.converged {
        let worst = out.estimates.iter().cloned().fold(0.0, f64::max);
        return Err(Error::LanczosNoConvergence {
            iterations: out.matvecs,
            residuals: out.estimates,
            worst_residual: worst,
        });
    }
    Ok(assemble(n, out.values, &out.vectors))
}

/// Lanczos on a Chebyshev polynomial of `a` that maps the low end of the
/// spectrum to large values and squeezes the rest into [-1, 1], followed by
/// a Rayleigh-Ritz step on `a` itself. Returns `None` when the result cannot
/// be verified, in which case the caller runs the plain iteration.
fn filtered(
    a: &CsrMatrix,
    m: usize,
    tol: f64,
    max_basis: usize,
    max_matvecs: usize,
    rng: &mut Xoshiro256PlusPlus,
) -> Option<EigenPairs> {
    let n = a.n_rows();
    let spmv = |x: &[f64], y: &mut [f64]| a.spmv_into(x, y);
    let upper = gershgorin_max(a);

    // A short unfiltered run: by interlacing, its Ritz values bound the true
    // ones from above, so the cut lies above the wanted part of the spectrum.
    let probe_basis = max_basis.min(n);
    let probe = krylov_lowest(
        &spmv,
        n,
        &KrylovParams {
            m: (m + 5).min(probe_basis),
            max_basis: probe_basis,
            tol,
            max_matvecs: probe_basis,
        },
        rng,
    );
    let cut = *probe.values.last()?;
    if !(cut > 0.0 && cut < 0.5 * upper) {
        return None;
    }
    let centre = upper + cut;
    let half = upper - cut;
    let x0 = centre / half;
    let degree = ((FILTER_GAIN.acosh() / x0.acosh()).ceil() as usize).clamp(2, FILTER_MAX_DEGREE);

    // -T_d((centre - 2A) / half) applied by the three-term recurrence.
    let filter = |x: &[f64], y: &mut [f64]| {
        let mut av = vec![0.0; n];
        let mut prev = x.to_vec();
        a.spmv_into(x, &mut av);
        let mut cur: Vec<f64> = x
            .iter()
            .zip(&av)
            .map(|(v, w)| (centre * v - 2.0 * w) / half)
            .collect();
        for _ in 1..degree {
            a.spmv_into(&cur, &mut av);
            for i in 0..n {
                let t = (centre * cur[i] - 2.0 * av[i]) / half;
                let nxt = 2.0 * t - prev[i];
                prev[i] = cur[i];
                cur[i] = nxt;
            }
        }
        for (yi, ci) in y.iter_mut().zip(&cur) {
            *yi = -ci;
        }
    };
    let out = krylov_lowest(
        &filter,
        n,
        &KrylovParams {
            m,
            max_basis,
            tol,
            max_matvecs: (max_matvecs / degree).max(max_basis),
        },
        rng,
    );
    log::debug!("filtered lanczos: cut {cut:.3e}, degree {degree}, {} products", out.matvecs);
    if !out.converged {
        return None;
    }

    // Rayleigh-Ritz on `a` within the filtered subspace.
    let av: Vec<Vec<f64>> = out
        .vectors
        .iter()
        .map(|v| {
            let mut y = vec![0.0; n];
            a.spmv_into(v, &mut y);
            y
        })
        .collect();
    let g: Vec<Vec<f64>> = (0..m)
        .map(|i| (0..m).map(|j| 0.5 * (dot(&out.vectors[i], &av[j]) + dot(&out.vectors[j], &av[i]))).collect())
        .collect();
    let (values, y) = symmetric_eigen(&g);
    if values[m - 1] >= cut {
        return None;
    }
    let vectors: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            let coeffs: Vec<f64> = (0..m).map(|r| y[r][i]).collect();
            combine(&out.vectors, &coeffs, n)
        })
        .collect();
    for (v, &lambda) in vectors.iter().zip(&values) {
        let mut r = vec![0.0; n];
        a.spmv_into(v, &mut r);
        axpy(-lambda, v, &mut r);
        if norm2(&r) > tol * lambda.abs().max(1.0) {
            log::debug!("filtered residual {:e} above tolerance", norm2(&r));
            return None;
        }
    }
    Some(assemble(n, values, &vectors))
}

fn assemble(n: usize, values: Vec<f64>, columns: &[Vec<f64>]) -> EigenPairs {
    let m = values.len();
    let mut vectors = vec![0.0; n * m];
    for (i, v) in columns.iter().enumerate() {
        for (k, &x) in v.iter().enumerate() {
            vectors[k * m + i] = x;
        }
    }
    normalize_signs(&mut vectors, n, m);
    EigenPairs::new(n, values, vectors).expect("shapes agree")
}

fn normalize_signs(vectors: &mut [f64], n: usize, m: usize) {
    // Largest-magnitude component of each vector is made positive.
    for j in 0..m {
        let mut best = 0.0f64;
        for k in 0..n {
            let v = vectors[k * m + j];
            if v.abs() > best.abs() {
                best = v;
            }
        }
        if best < 0.0 {
            for k in 0..n {
                vectors[k * m + j] = -vectors[k * m + j];
            }
        }
    }
}
