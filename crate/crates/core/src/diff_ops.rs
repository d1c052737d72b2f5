//! Discrete differential operators: cotan Laplacian, divergence of per-face
//! vector fields and piecewise-linear gradients.
//!
//! The Laplacian is stored as a symmetric positive semidefinite stiffness
//! matrix `S = −L_cotan` plus a lumped mass `2A_i`, so that
//! `Δφ = −mass⁻¹ S φ`.

use nalgebra_sparse::CscMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::{spmv, Triplets};
use crate::mesh::{TriMesh, Vec3, COT_CLAMP};
use crate::{par, Error, Result};

#[derive(Debug, Clone)]
pub struct SparseOperator {
    matrix: CscMatrix<f64>,
}

impl SparseOperator {
    pub fn new(matrix: CscMatrix<f64>) -> Self {
        Self { matrix }
    }

    pub fn n_rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn nnz(&self) -> usize {
        self.matrix.nnz()
    }

    pub fn matrix(&self) -> &CscMatrix<f64> {
        &self.matrix
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        spmv(&self.matrix, x)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let col = self.matrix.col(j);
        col.row_indices()
            .iter()
            .position(|&r| r == i)
            .map_or(0.0, |p| col.values()[p])
    }
}

/// One tangent vector per face.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceVectorField {
    pub vectors: Vec<Vec3>,
}

impl FaceVectorField {
    pub fn zeros(n_faces: usize) -> Self {
        Self {
            vectors: vec![Vec3::zeros(); n_faces],
        }
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Largest |v·n| over faces.
    pub fn max_normal_component(&self, mesh: &TriMesh) -> f64 {
        self.vectors
            .iter()
            .enumerate()
            .map(|(f, v)| v.dot(&mesh.face_normal(f)).abs())
            .fold(0.0, f64::max)
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            vectors: self.vectors.iter().map(|v| v * s).collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Laplacian {
    /// Cotan sums with flipped sign: positive semidefinite, rows sum to zero.
    pub stiffness: SparseOperator,
    /// 2A_i per vertex.
    pub mass: Vec<f64>,
}

impl Laplacian {
    /// (Δφ)_i.
    pub fn apply(&self, phi: &[f64]) -> Vec<f64> {
        self.stiffness
            .apply(phi)
            .iter()
            .zip(&self.mass)
            .map(|(s, m)| -s / m)
            .collect()
    }
}

/// Scatter per-face 3×3 blocks into a vertex-by-vertex matrix.
pub fn assemble_face_matrix<F>(mesh: &TriMesh, local: F) -> SparseOperator
where
    F: Fn(usize) -> [[f64; 3]; 3] + Sync,
{
    let blocks = par::map(mesh.n_faces(), &local);
    let n = mesh.n_vertices();
    let mut t = Triplets::new(n, n);
    for (f, b) in blocks.iter().enumerate() {
        let tri = mesh.face(f);
        for r in 0..3 {
            for c in 0..3 {
                if b[r][c] != 0.0 {
                    t.push(tri[r], tri[c], b[r][c]);
                }
            }
        }
    }
    SparseOperator::new(t.into_csc())
}

pub fn assemble_laplacian(mesh: &TriMesh) -> Result<Laplacian> {
    let mut clamped = 0usize;
    for f in 0..mesh.n_faces() {
        let c = mesh.corner_cotangents(f);
        if c.iter().any(|x| !x.is_finite()) {
            return Err(Error::DegenerateTriangle(f));
        }
        clamped += c.iter().filter(|x| x.abs() >= COT_CLAMP).count();
    }
    if clamped > 0 {
        log::warn!("{clamped} cotangent(s) clamped to ±{COT_CLAMP:e}");
    }
    let stiffness = assemble_face_matrix(mesh, |f| {
        let c = mesh.corner_cotangents(f);
        let mut b = [[0.0; 3]; 3];
        // edge (i, j) is opposite corner k
        for k in 0..3 {
            let i = (k + 1) % 3;
            let j = (k + 2) % 3;
            let w = c[k];
            b[i][j] -= w;
            b[j][i] -= w;
            b[i][i] += w;
            b[j][j] += w;
        }
        b
    });
    let mass = mesh.voronoi_areas().iter().map(|a| 2.0 * a).collect();
    Ok(Laplacian { stiffness, mass })
}

/// Piecewise-constant gradient of the linear interpolant of `phi`.
pub fn face_gradient(mesh: &TriMesh, phi: &[f64]) -> FaceVectorField {
    assert_eq!(phi.len(), mesh.n_vertices());
    FaceVectorField {
        vectors: par::map(mesh.n_faces(), |f| {
            let g = mesh.gradient_basis(f);
            let t = mesh.face(f);
            g[0] * phi[t[0]] + g[1] * phi[t[1]] + g[2] * phi[t[2]]
        }),
    }
}

/// Σ over incident faces of `cot θ₁ (e₁·V) + cot θ₂ (e₂·V)`, i.e. `2A_i (∇·V)_i`.
pub fn integrated_divergence(mesh: &TriMesh, field: &FaceVectorField) -> Vec<f64> {
    assert_eq!(field.len(), mesh.n_faces());
    let local = par::map(mesh.n_faces(), |f| {
        let p = mesh.face_positions(f);
        let c = mesh.corner_cotangents(f);
        let v = &field.vectors[f];
        std::array::from_fn::<f64, 3, _>(|i| {
            let j = (i + 1) % 3;
            let k = (i + 2) % 3;
            // e1 = p_j − p_i faces the angle at k, e2 = p_k − p_i faces the angle at j
            c[k] * (p[j] - p[i]).dot(v) + c[j] * (p[k] - p[i]).dot(v)
        })
    });
    let mut out = vec![0.0; mesh.n_vertices()];
    for (f, l) in local.iter().enumerate() {
        let t = mesh.face(f);
        for k in 0..3 {
            out[t[k]] += l[k];
        }
    }
    out
}

/// (∇·V)_i per vertex.
pub fn divergence(mesh: &TriMesh, field: &FaceVectorField) -> Vec<f64> {
    integrated_divergence(mesh, field)
        .iter()
        .zip(mesh.voronoi_areas())
        .map(|(d, a)| d / (2.0 * a))
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdjointReport {
    pub trials: usize,
    pub max_relative_residual: f64,
}

/// Checks Σ A_i φ_i (∇·V)_i = −Σ_f area_f (∇φ·V)_f on random fields.
pub fn check_adjoint(mesh: &TriMesh, trials: usize, seed: u64) -> AdjointReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let phi: Vec<f64> = (0..mesh.n_vertices()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let field = random_tangent_field(mesh, &mut rng);
        worst = worst.max(adjoint_residual(mesh, &phi, &field));
    }
    AdjointReport {
        trials,
        max_relative_residual: worst,
    }
}

/// Relative mismatch of the two sides of the adjoint identity for given fields.
pub fn adjoint_residual(mesh: &TriMesh, phi: &[f64], field: &FaceVectorField) -> f64 {
    let div = divergence(mesh, field);
    let lhs: f64 = (0..mesh.n_vertices())
        .map(|i| mesh.voronoi_areas()[i] * phi[i] * div[i])
        .sum();
    let grad = face_gradient(mesh, phi);
    let mut rhs = 0.0;
    let mut scale = 0.0;
    for f in 0..mesh.n_faces() {
        let a = mesh.face_area(f);
        rhs -= a * grad.vectors[f].dot(&field.vectors[f]);
        scale += a * grad.vectors[f].norm() * field.vectors[f].norm();
    }
    if scale == 0.0 {
        (lhs - rhs).abs()
    } else {
        (lhs - rhs).abs() / scale
    }
}

pub fn random_tangent_field(mesh: &TriMesh, rng: &mut impl Rng) -> FaceVectorField {
    FaceVectorField {
        vectors: (0..mesh.n_faces())
            .map(|f| {
                let fr = mesh.frame(f);
                fr.t1 * rng.random_range(-1.0..1.0) + fr.t2 * rng.random_range(-1.0..1.0)
            })
            .collect(),
    }
}
