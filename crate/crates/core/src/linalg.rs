//! Sparse symmetric linear algebra used by the solvers.
//!
//! Factorization is delegated to `nalgebra-sparse`'s Cholesky, which does no
//! fill-reducing ordering on its own; matrices are permuted with reverse
//! Cuthill-McKee first. Singular Laplacian-like systems (constants in the
//! kernel) are handled by pinning one unknown per connected component, which
//! is exact whenever the right-hand side is compatible.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CooMatrix, CscMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::VecDeque;

use crate::{Error, Result};

/// Above this many unknowns the solver switches to preconditioned CG.
pub const DIRECT_SOLVE_LIMIT: usize = 150_000;
/// Relative residual target for the iterative fallback.
pub const CG_TOLERANCE: f64 = 1e-10;

/// Coordinate-format accumulator; duplicates are summed on conversion.
#[derive(Debug, Clone)]
pub struct Triplets {
    nrows: usize,
    ncols: usize,
    rows: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl Triplets {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            rows: Vec::new(),
            cols: Vec::new(),
            vals: Vec::new(),
        }
    }

    pub fn push(&mut self, i: usize, j: usize, v: f64) {
        self.rows.push(i);
        self.cols.push(j);
        self.vals.push(v);
    }

    pub fn into_csc(self) -> CscMatrix<f64> {
        let coo = CooMatrix::try_from_triplets(self.nrows, self.ncols, self.rows, self.cols, self.vals)
            .expect("triplet indices are in range by construction");
        CscMatrix::from(&coo)
    }
}

/// y = A x.
pub fn spmv(a: &CscMatrix<f64>, x: &[f64]) -> Vec<f64> {
    assert_eq!(a.ncols(), x.len());
    let mut y = vec![0.0; a.nrows()];
    for (j, col) in (0..a.ncols()).map(|j| (j, a.col(j))) {
        let xj = x[j];
        if xj == 0.0 {
            continue;
        }
        for (&i, &v) in col.row_indices().iter().zip(col.values()) {
            y[i] += v * xj;
        }
    }
    y
}

/// xᵀ A x.
pub fn quad_form(a: &CscMatrix<f64>, x: &[f64]) -> f64 {
    dot(x, &spmv(a, x))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Linear combination `a*x + b*y` of two sparse matrices of equal shape.
pub fn add_scaled(a: &CscMatrix<f64>, wa: f64, b: &CscMatrix<f64>, wb: f64) -> CscMatrix<f64> {
    let mut t = Triplets::new(a.nrows(), a.ncols());
    for (m, w) in [(a, wa), (b, wb)] {
        for (i, j, v) in m.triplet_iter() {
            t.push(i, j, w * v);
        }
    }
    t.into_csc()
}

/// Connected components of the graph given by the off-diagonal pattern.
pub fn pattern_components(a: &CscMatrix<f64>) -> Vec<usize> {
    let n = a.nrows();
    let mut comp = vec![usize::MAX; n];
    let mut next = 0;
    for s in 0..n {
        if comp[s] != usize::MAX {
            continue;
        }
        comp[s] = next;
        let mut stack = vec![s];
        while let Some(u) = stack.pop() {
            for &v in a.col(u).row_indices() {
                if comp[v] == usize::MAX {
                    comp[v] = next;
                    stack.push(v);
                }
            }
        }
        next += 1;
    }
    comp
}

/// Reverse Cuthill-McKee ordering; `perm[new] = old`.
pub fn reverse_cuthill_mckee(a: &CscMatrix<f64>) -> Vec<usize> {
    let n = a.nrows();
    let adj: Vec<Vec<usize>> = (0..n)
        .map(|j| a.col(j).row_indices().iter().copied().filter(|&i| i != j).collect())
        .collect();
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&i| (degree[i], i));

    for &start in &by_degree {
        if visited[start] {
            continue;
        }
        let root = pseudo_peripheral(&adj, start);
        visited[root] = true;
        let mut queue = VecDeque::from([root]);
        while let Some(u) = queue.pop_front() {
            order.push(u);
            let mut nbrs: Vec<usize> = adj[u].iter().copied().filter(|&v| !visited[v]).collect();
            nbrs.sort_by_key(|&v| (degree[v], v));
            for v in nbrs {
                visited[v] = true;
                queue.push_back(v);
            }
        }
    }
    order.reverse();
    order
}

fn pseudo_peripheral(adj: &[Vec<usize>], start: usize) -> usize {
    let mut root = start;
    let mut best_ecc = 0;
    for _ in 0..4 {
        let (far, ecc) = bfs_farthest(adj, root);
        if ecc <= best_ecc {
            break;
        }
        best_ecc = ecc;
        root = far;
    }
    root
}

fn bfs_farthest(adj: &[Vec<usize>], s: usize) -> (usize, usize) {
    let mut dist = std::collections::HashMap::new();
    dist.insert(s, 0usize);
    let mut queue = VecDeque::from([s]);
    let mut far = (s, 0);
    while let Some(u) = queue.pop_front() {
        let du = dist[&u];
        if du > far.1 || (du == far.1 && adj[u].len() < adj[far.0].len()) {
            far = (u, du);
        }
        for &v in &adj[u] {
            if let std::collections::hash_map::Entry::Vacant(e) = dist.entry(v) {
                e.insert(du + 1);
                queue.push_back(v);
            }
        }
    }
    far
}

enum Backend {
    Direct(CscCholesky<f64>),
    Iterative { matrix: CscMatrix<f64>, inv_diag: Vec<f64> },
}

/// Factorized symmetric positive (semi)definite system with optional pinned
/// unknowns (fixed to zero).
pub struct SpdSolver {
    n: usize,
    /// original index -> reduced, permuted index
    to_reduced: Vec<Option<usize>>,
    backend: Backend,
}

impl SpdSolver {
    pub fn new(a: &CscMatrix<f64>, pinned: &[usize]) -> Result<Self> {
        Self::with_limit(a, pinned, DIRECT_SOLVE_LIMIT)
    }

    /// Build with an explicit direct/iterative switch-over size.
    pub fn with_limit(a: &CscMatrix<f64>, pinned: &[usize], direct_limit: usize) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Solve("matrix is not square".into()));
        }
        let mut is_pinned = vec![false; n];
        for &p in pinned {
            is_pinned[p] = true;
        }
        let mut compact = vec![None; n];
        let mut m = 0;
        for i in 0..n {
            if !is_pinned[i] {
                compact[i] = Some(m);
                m += 1;
            }
        }
        let mut t = Triplets::new(m, m);
        for (i, j, v) in a.triplet_iter() {
            if let (Some(ri), Some(rj)) = (compact[i], compact[j]) {
                t.push(ri, rj, *v);
            }
        }
        let reduced = t.into_csc();
        let perm = reverse_cuthill_mckee(&reduced);
        let mut inv = vec![0; m];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut t = Triplets::new(m, m);
        for (i, j, v) in reduced.triplet_iter() {
            t.push(inv[i], inv[j], *v);
        }
        let permuted = t.into_csc();
        let to_reduced = compact.iter().map(|c| c.map(|r| inv[r])).collect();

        let backend = if m <= direct_limit {
            match CscCholesky::factor(&permuted) {
                Ok(f) => Backend::Direct(f),
                Err(e) => {
                    log::warn!("sparse Cholesky failed ({e}); falling back to PCG");
                    Self::iterative(permuted)?
                }
            }
        } else {
            Self::iterative(permuted)?
        };
        Ok(Self {
            n,
            to_reduced,
            backend,
        })
    }

    fn iterative(matrix: CscMatrix<f64>) -> Result<Backend> {
        let mut inv_diag = vec![0.0; matrix.nrows()];
        for (i, j, v) in matrix.triplet_iter() {
            if i == j {
                inv_diag[i] += v;
            }
        }
        for d in &mut inv_diag {
            if *d <= 0.0 {
                return Err(Error::Solve("non-positive diagonal".into()));
            }
            *d = 1.0 / *d;
        }
        Ok(Backend::Iterative { matrix, inv_diag })
    }

    pub fn is_direct(&self) -> bool {
        matches!(self.backend, Backend::Direct(_))
    }

    /// Solve with pinned unknowns set to zero (their equations are dropped).
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        assert_eq!(b.len(), self.n);
        let m = match &self.backend {
            Backend::Direct(f) => f.l().nrows(),
            Backend::Iterative { matrix, .. } => matrix.nrows(),
        };
        let mut rb = vec![0.0; m];
        for (i, r) in self.to_reduced.iter().enumerate() {
            if let Some(r) = r {
                rb[*r] = b[i];
            }
        }
        let rx = match &self.backend {
            Backend::Direct(f) => {
                let x = f.solve(&DMatrix::from_column_slice(m, 1, &rb));
                x.as_slice().to_vec()
            }
            Backend::Iterative { matrix, inv_diag } => pcg(matrix, &rb, inv_diag, CG_TOLERANCE, 20 * m + 100)?,
        };
        if rx.iter().any(|v| !v.is_finite()) {
            return Err(Error::Solve("non-finite solution".into()));
        }
        Ok(self
            .to_reduced
            .iter()
            .map(|r| r.map_or(0.0, |r| rx[r]))
            .collect())
    }
}

/// Jacobi-preconditioned conjugate gradients.
pub fn pcg(a: &CscMatrix<f64>, b: &[f64], inv_diag: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let n = b.len();
    let bnorm = dot(b, b).sqrt();
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(x);
    }
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for _ in 0..max_iter {
        let ap = spmv(a, &p);
        let alpha = rz / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if dot(&r, &r).sqrt() <= tol * bnorm {
            return Ok(x);
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::Solve(format!("PCG did not reach {tol:e} in {max_iter} iterations")))
}

/// Right-hand operator of a generalized eigenproblem.
pub enum BOperator<'a> {
    Diagonal(&'a [f64]),
    Sparse(&'a CscMatrix<f64>),
}

impl BOperator<'_> {
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        match self {
            BOperator::Diagonal(d) => x.iter().zip(d.iter()).map(|(x, d)| x * d).collect(),
            BOperator::Sparse(m) => spmv(m, x),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EigenOptions {
    pub block: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self {
            block: 6,
            tol: 1e-10,
            max_iter: 3000,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EigenPairs {
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
    pub iterations: usize,
}

/// Smallest eigenpairs of `A u = μ B u` by shift-invert subspace iteration.
///
/// `shift_solve(y)` must return `(A + sB)⁻¹ y` for some fixed shift `s > 0`;
/// `project` removes the unwanted (deflated) components in place. Ritz
/// vectors are B-orthonormal.
pub fn smallest_generalized(
    a: &CscMatrix<f64>,
    b: &BOperator<'_>,
    shift_solve: &dyn Fn(&[f64]) -> Result<Vec<f64>>,
    project: &dyn Fn(&mut [f64]),
    count: usize,
    opts: EigenOptions,
) -> Result<EigenPairs> {
    let n = a.nrows();
    let p = opts.block.max(count).min(n);
    if count == 0 || p == 0 {
        return Err(Error::EigenSolve("empty problem".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut x: Vec<Vec<f64>> = (0..p)
        .map(|_| (0..n).map(|_| rng.random::<f64>() - 0.5).collect())
        .collect();

    let mut prev: Option<Vec<f64>> = None;
    let mut stable = 0;
    for it in 0..opts.max_iter {
        // power step
        if it > 0 {
            let mut next = Vec::with_capacity(x.len());
            for v in &x {
                next.push(shift_solve(&b.apply(v))?);
            }
            x = next;
        }
        for v in &mut x {
            project(v);
        }
        let basis = b_orthonormalize(&x, b, project, &mut rng);
        if basis.len() < count {
            return Err(Error::EigenSolve(format!(
                "subspace collapsed to dimension {} < {count}",
                basis.len()
            )));
        }
        // Rayleigh-Ritz (B-inner product is identity on the basis)
        let k = basis.len();
        let ax: Vec<Vec<f64>> = basis.iter().map(|v| spmv(a, v)).collect();
        let mut ar = DMatrix::zeros(k, k);
        for i in 0..k {
            for j in i..k {
                let v = 0.5 * (dot(&basis[i], &ax[j]) + dot(&basis[j], &ax[i]));
                ar[(i, j)] = v;
                ar[(j, i)] = v;
            }
        }
        let eig = SymmetricEigen::new(ar);
        let mut idx: Vec<usize> = (0..k).collect();
        idx.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
        let values: Vec<f64> = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
        let mut ritz = Vec::with_capacity(k);
        let mut aritz = Vec::with_capacity(k);
        for &c in &idx {
            let q: DVector<f64> = eig.eigenvectors.column(c).into();
            let mut v = vec![0.0; n];
            let mut av = vec![0.0; n];
            for (r, (bv, axv)) in basis.iter().zip(&ax).enumerate() {
                let w = q[r];
                for t in 0..n {
                    v[t] += w * bv[t];
                    av[t] += w * axv[t];
                }
            }
            ritz.push(v);
            aritz.push(av);
        }

        let mut converged = true;
        for c in 0..count {
            let bv = b.apply(&ritz[c]);
            let bn = dot(&bv, &bv).sqrt().max(f64::MIN_POSITIVE);
            let res: f64 = aritz[c]
                .iter()
                .zip(&bv)
                .map(|(av, bv)| (av - values[c] * bv).powi(2))
                .sum::<f64>()
                .sqrt();
            if res / bn > opts.tol {
                converged = false;
            }
        }
        if let Some(prev) = &prev {
            let change = (0..count)
                .map(|c| (values[c] - prev[c]).abs() / values[c].abs().max(1e-300))
                .fold(0.0, f64::max);
            if change < 1e-14 || (0..count).all(|c| (values[c] - prev[c]).abs() < 1e-300) {
                stable += 1;
            } else {
                stable = 0;
            }
        }
        if converged || stable >= 5 {
            return Ok(EigenPairs {
                values: values[..count].to_vec(),
                vectors: ritz.into_iter().take(count).collect(),
                iterations: it + 1,
            });
        }
        prev = Some(values);
        x = ritz;
    }
    Err(Error::EigenSolve(format!("no convergence in {} iterations", opts.max_iter)))
}

fn b_orthonormalize(
    x: &[Vec<f64>],
    b: &BOperator<'_>,
    project: &dyn Fn(&mut [f64]),
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<f64>> {
    let n = x.first().map_or(0, Vec::len);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(x.len());
    let mut bbasis: Vec<Vec<f64>> = Vec::with_capacity(x.len());
    for v in x {
        let mut v = v.clone();
        let mut accepted = false;
        for attempt in 0..3 {
            if attempt > 0 {
                v = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
                project(&mut v);
            }
            let norm0 = dot(&v, &b.apply(&v)).max(0.0).sqrt();
            for _ in 0..2 {
                for (q, bq) in basis.iter().zip(&bbasis) {
                    let c = dot(&v, bq);
                    for t in 0..n {
                        v[t] -= c * q[t];
                    }
                }
            }
            let bv = b.apply(&v);
            let norm = dot(&v, &bv).max(0.0).sqrt();
            if norm > 1e-10 * norm0.max(1e-300) && norm > 0.0 {
                let inv = 1.0 / norm;
                basis.push(v.iter().map(|x| x * inv).collect());
                bbasis.push(bv.iter().map(|x| x * inv).collect());
                accepted = true;
                break;
            }
        }
        if !accepted {
            continue;
        }
    }
    basis
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path_laplacian(n: usize) -> CscMatrix<f64> {
        let mut t = Triplets::new(n, n);
        for i in 0..n - 1 {
            t.push(i, i, 1.0);
            t.push(i + 1, i + 1, 1.0);
            t.push(i, i + 1, -1.0);
            t.push(i + 1, i, -1.0);
        }
        t.into_csc()
    }

    #[test]
    fn rcm_is_a_permutation() {
        let a = path_laplacian(30);
        let mut p = reverse_cuthill_mckee(&a);
        p.sort_unstable();
        assert_eq!(p, (0..30).collect::<Vec<_>>());
    }

    #[test]
    fn pinned_solve_recovers_compatible_rhs() {
        let n = 20;
        let a = path_laplacian(n);
        let x_true: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).sin()).collect();
        let b = spmv(&a, &x_true);
        let s = SpdSolver::new(&a, &[0]).unwrap();
        let x = s.solve(&b).unwrap();
        let shift = x_true[0] - x[0];
        for i in 0..n {
            assert!((x[i] + shift - x_true[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn iterative_fallback_matches_direct() {
        let n = 40;
        let mut t = Triplets::new(n, n);
        for (i, j, v) in path_laplacian(n).triplet_iter() {
            t.push(i, j, *v);
        }
        for i in 0..n {
            t.push(i, i, 0.1);
        }
        let a = t.into_csc();
        let b: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let d = SpdSolver::new(&a, &[]).unwrap();
        let it = SpdSolver::with_limit(&a, &[], 0).unwrap();
        assert!(d.is_direct() && !it.is_direct());
        let (xd, xi) = (d.solve(&b).unwrap(), it.solve(&b).unwrap());
        for (u, v) in xd.iter().zip(&xi) {
            assert!((u - v).abs() < 1e-7 * (1.0 + u.abs()));
        }
    }

    #[test]
    fn fiedler_of_path_graph() {
        // Path graph: L u = μ u, smallest nonzero μ = 2 - 2 cos(π/n).
        let n = 25;
        let a = path_laplacian(n);
        let ones = vec![1.0; n];
        let shift = 1e-3;
        let shifted = add_scaled(&a, 1.0, &identity(n), shift);
        let solver = SpdSolver::new(&shifted, &[]).unwrap();
        let project = |v: &mut [f64]| {
            let m = dot(v, &ones) / n as f64;
            v.iter_mut().for_each(|x| *x -= m);
        };
        let res = smallest_generalized(
            &a,
            &BOperator::Diagonal(&ones),
            &|y| solver.solve(y),
            &project,
            1,
            EigenOptions::default(),
        )
        .unwrap();
        let expect = 2.0 - 2.0 * (std::f64::consts::PI / n as f64).cos();
        assert!((res.values[0] - expect).abs() < 1e-10, "{} vs {expect}", res.values[0]);
    }

    fn identity(n: usize) -> CscMatrix<f64> {
        let mut t = Triplets::new(n, n);
        for i in 0..n {
            t.push(i, i, 1.0);
        }
        t.into_csc()
    }
}
