//! Per-face shape operators.
//!
//! The shape operator is stored as a symmetric 2×2 tensor in the face frame
//! (`t1`, `t2`) with the convention `S = dn/dp` for the outward (cutter-side)
//! normal, so convex regions have positive normal curvature.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::mesh::{Frame, TriMesh, Vec3};
use crate::{par, Error, Result};

/// Tangency tolerance for query directions.
pub const TANGENT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurvatureSource {
    Estimated,
    Analytic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Principal {
    pub k_min: f64,
    pub k_max: f64,
    pub dir_min: Vec3,
    pub dir_max: Vec3,
}

#[derive(Debug, Clone)]
pub struct CurvatureField {
    tensors: Vec<Matrix2<f64>>,
    frames: Vec<Frame>,
    source: CurvatureSource,
}

impl CurvatureField {
    /// Tensors are symmetrized on construction.
    pub fn new(mesh: &TriMesh, tensors: Vec<Matrix2<f64>>, source: CurvatureSource) -> Self {
        assert_eq!(tensors.len(), mesh.n_faces());
        let tensors = tensors.into_iter().map(|t| (t + t.transpose()) * 0.5).collect();
        let frames = (0..mesh.n_faces()).map(|f| *mesh.frame(f)).collect();
        Self {
            tensors,
            frames,
            source,
        }
    }

    pub fn zeros(mesh: &TriMesh, source: CurvatureSource) -> Self {
        Self::new(mesh, vec![Matrix2::zeros(); mesh.n_faces()], source)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn source(&self) -> CurvatureSource {
        self.source
    }

    pub fn tensor(&self, f: usize) -> &Matrix2<f64> {
        &self.tensors[f]
    }

    pub fn tensors(&self) -> &[Matrix2<f64>] {
        &self.tensors
    }

    pub fn normal(&self, face: usize) -> Vec3 {
        self.frames[face].n
    }

    /// dᵀ S d for a unit tangent `dir`.
    pub fn normal_curvature(&self, face: usize, dir: &Vec3) -> Result<f64> {
        let fr = &self.frames[face];
        if !fr.n.iter().all(|c| c.is_finite()) {
            return Err(Error::DegenerateFrame(face));
        }
        let deviation = dir.dot(&fr.n).abs();
        if deviation > TANGENT_TOL {
            return Err(Error::NotTangent { face, deviation });
        }
        let a = Vector2::from(fr.to_local(dir));
        Ok(a.dot(&(self.tensors[face] * a)))
    }

    pub fn principal(&self, face: usize) -> Principal {
        let s = &self.tensors[face];
        let (a, b, c) = (s[(0, 0)], s[(0, 1)], s[(1, 1)]);
        let mean = 0.5 * (a + c);
        let r = (0.25 * (a - c) * (a - c) + b * b).sqrt();
        let theta = 0.5 * (2.0 * b).atan2(a - c);
        let fr = &self.frames[face];
        let dir_max = fr.to_world([theta.cos(), theta.sin()]);
        Principal {
            k_min: mean - r,
            k_max: mean + r,
            dir_min: fr.n.cross(&dir_max),
            dir_max,
        }
    }
}

/// Shape operator of a smooth surface (3×3, tangent to `n_smooth`) moved onto
/// a face by the minimal rotation taking `n_smooth` to the face normal, then
/// expressed in the face frame. The rotation keeps the principal values.
pub fn project_world_tensor(frame: &Frame, s3: &Matrix3<f64>, n_smooth: &Vec3) -> Matrix2<f64> {
    let r = minimal_rotation(n_smooth, &frame.n);
    let s = r * s3 * r.transpose();
    let t = [frame.t1, frame.t2];
    Matrix2::from_fn(|i, j| t[i].dot(&(s * t[j])))
}

fn minimal_rotation(a: &Vec3, b: &Vec3) -> Matrix3<f64> {
    let v = a.cross(b);
    let c = a.dot(b);
    if c <= -1.0 + 1e-12 {
        // antipodal: half turn about any axis orthogonal to a
        let axis = any_orthogonal(a);
        return Matrix3::identity() * -1.0 + axis * axis.transpose() * 2.0;
    }
    let k = v.cross_matrix();
    Matrix3::identity() + k + k * k / (1.0 + c)
}

pub(crate) fn any_orthogonal(a: &Vec3) -> Vec3 {
    let helper = if a.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    a.cross(&helper).normalize()
}

/// Per-face shape operator from a local quadric fit.
///
/// Vertices of all faces sharing a vertex with `f` are expressed in the frame
/// of `f` (origin at the centroid, height along the normal) and
/// `z = a + bx + cy + ½(Ax² + 2Bxy + Cy²)` is fitted by least squares. The
/// fit is exact on quadrics even when the neighbourhood is one-sided, which
/// keeps boundary faces unbiased.
pub fn estimate_curvature(mesh: &TriMesh) -> Result<CurvatureField> {
    let tensors = par::map(mesh.n_faces(), |f| fit_face(mesh, f));
    let tensors = tensors.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(CurvatureField::new(mesh, tensors, CurvatureSource::Estimated))
}

fn fit_face(mesh: &TriMesh, f: usize) -> Result<Matrix2<f64>> {
    let fr = mesh.frame(f);
    if !fr.t1.iter().chain(fr.t2.iter()).all(|c| c.is_finite()) {
        return Err(Error::DegenerateFrame(f));
    }
    let cf = mesh.face_centroid(f);
    let mut ring: Vec<usize> = mesh
        .face(f)
        .iter()
        .flat_map(|&v| mesh.vertex_faces(v).iter().flat_map(|&g| mesh.face(g)))
        .collect();
    ring.sort_unstable();
    ring.dedup();

    let local: Vec<[f64; 3]> = ring
        .iter()
        .map(|&v| {
            let d = mesh.vertex(v) - cf;
            let [x, y] = fr.to_local(&d);
            [x, y, d.dot(&fr.n)]
        })
        .collect();
    let scale = (local.iter().map(|p| p[0] * p[0] + p[1] * p[1]).sum::<f64>() / local.len() as f64).sqrt();
    if local.len() < 6 || scale == 0.0 {
        return Ok(Matrix2::zeros());
    }
    let mut ata = nalgebra::Matrix6::<f64>::zeros();
    let mut atb = nalgebra::Vector6::<f64>::zeros();
    for p in &local {
        let (x, y) = (p[0] / scale, p[1] / scale);
        let row = nalgebra::Vector6::new(1.0, x, y, 0.5 * x * x, x * y, 0.5 * y * y);
        ata += row * row.transpose();
        atb += row * (p[2] / scale);
    }
    let svd = ata.svd(true, true);
    let tol = svd.singular_values.max() * 1e-10;
    let c = svd.solve(&atb, tol).map_err(|_| Error::DegenerateFrame(f))?;
    // undo the scaling: slopes are dimensionless, second derivatives carry 1/scale
    let g = [c[1], c[2]];
    let h = [[c[3] / scale, c[4] / scale], [c[4] / scale, c[5] / scale]];
    let (s, _) = crate::surfaces::height_shape_operator(g, h);
    // the local frame is (t1, t2, n); the operator is tangent to the fitted
    // normal, so bring it onto the face plane before projecting
    let n_fit = Vec3::new(-g[0], -g[1], 1.0).normalize();
    let local_frame = Frame {
        t1: Vector3::x(),
        t2: Vector3::y(),
        n: Vector3::z(),
    };
    Ok(project_world_tensor(&local_frame, &s, &n_fit))
}
