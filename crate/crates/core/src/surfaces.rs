//! Meshed analytic surfaces with exact shape operators attached.

use nalgebra::{Matrix2, Matrix3, Matrix3x2};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::curvature::{project_world_tensor, CurvatureField, CurvatureSource};
use crate::mesh::{TriMesh, Vec3};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestSurface {
    /// `[0, width] × [0, height]` in the z = 0 plane, normal +z.
    Plane { width: f64, height: f64 },
    /// Open cylinder about the z axis, `0 ≤ z ≤ height`, outward normal.
    Cylinder { radius: f64, height: f64 },
    /// z = (x² − y²)/c over `[−half_extent, half_extent]²`, normal +z.
    Saddle { c: f64, half_extent: f64 },
}

impl TestSurface {
    pub fn plane(width: f64, height: f64) -> Self {
        TestSurface::Plane { width, height }
    }

    pub fn cylinder(radius: f64, height: f64) -> Self {
        TestSurface::Cylinder { radius, height }
    }

    pub fn saddle(c: f64, half_extent: f64) -> Self {
        TestSurface::Saddle { c, half_extent }
    }

    fn params(&self) -> Vec<f64> {
        match *self {
            TestSurface::Plane { width, height } => vec![width, height],
            TestSurface::Cylinder { radius, height } => vec![radius, height],
            TestSurface::Saddle { c, half_extent } => vec![c, half_extent],
        }
    }
}

/// Value, gradient and Hessian of a height function at (x, y).
pub type HeightEval<'a> = &'a dyn Fn(f64, f64) -> (f64, [f64; 2], [[f64; 2]; 2]);

/// Mesh a parametric test surface and attach its exact curvature.
///
/// `resolution` is the number of grid cells along each side (plane, saddle)
/// or along the axis (cylinder; the circumferential count keeps cells
/// roughly square).
pub fn analytic_test_surface(kind: &TestSurface, resolution: usize) -> Result<(TriMesh, CurvatureField)> {
    if resolution < 2 {
        return Err(Error::InvalidParam(format!("resolution {resolution} < 2")));
    }
    if kind.params().iter().any(|p| !(p.is_finite() && *p > 0.0)) {
        return Err(Error::InvalidParam(format!("surface parameters must be positive: {kind:?}")));
    }
    match *kind {
        TestSurface::Plane { width, height } => height_field(
            [0.0, width, 0.0, height],
            resolution,
            resolution,
            &|_, _| (0.0, [0.0; 2], [[0.0; 2]; 2]),
        ),
        TestSurface::Saddle { c, half_extent: a } => height_field([-a, a, -a, a], resolution, resolution, &|x, y| {
            ((x * x - y * y) / c, [2.0 * x / c, -2.0 * y / c], [[2.0 / c, 0.0], [0.0, -2.0 / c]])
        }),
        TestSurface::Cylinder { radius, height } => cylinder(radius, height, resolution),
    }
}

/// Regular grid over `[x0, x1] × [y0, y1]` lifted by a height function.
pub fn height_field(extent: [f64; 4], nx: usize, ny: usize, eval: HeightEval<'_>) -> Result<(TriMesh, CurvatureField)> {
    let [x0, x1, y0, y1] = extent;
    let mut verts = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            let x = x0 + (x1 - x0) * i as f64 / nx as f64;
            let y = y0 + (y1 - y0) * j as f64 / ny as f64;
            verts.push(Vec3::new(x, y, eval(x, y).0));
        }
    }
    let id = |i: usize, j: usize| j * (nx + 1) + i;
    let mut faces = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            faces.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
            faces.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    let mesh = TriMesh::new(verts, faces)?;
    let tensors = (0..mesh.n_faces())
        .map(|f| {
            let c = mesh.face_centroid(f);
            let (_, g, h) = eval(c.x, c.y);
            let (s3, n) = height_shape_operator(g, h);
            project_world_tensor(mesh.frame(f), &s3, &n)
        })
        .collect();
    let curv = CurvatureField::new(&mesh, tensors, CurvatureSource::Analytic);
    Ok((mesh, curv))
}

/// Shape operator `dn/dp` (3×3) and upward unit normal of z = f(x, y).
pub fn height_shape_operator(g: [f64; 2], h: [[f64; 2]; 2]) -> (Matrix3<f64>, Vec3) {
    let w = (1.0 + g[0] * g[0] + g[1] * g[1]).sqrt();
    let n = Vec3::new(-g[0], -g[1], 1.0) / w;
    let j = Matrix3x2::new(1.0, 0.0, 0.0, 1.0, g[0], g[1]);
    let first = Matrix2::new(1.0 + g[0] * g[0], g[0] * g[1], g[0] * g[1], 1.0 + g[1] * g[1]);
    let second = Matrix2::new(h[0][0], h[0][1], h[1][0], h[1][1]) / w;
    let gi = first.try_inverse().expect("first fundamental form is positive definite");
    let s = -(j * gi * second * gi * j.transpose());
    (s, n)
}

fn cylinder(r: f64, height: f64, res: usize) -> Result<(TriMesh, CurvatureField)> {
    let nz = res;
    let nt = ((2.0 * PI * r) / (height / nz as f64)).round().max(3.0) as usize;
    let mut verts = Vec::with_capacity(nt * (nz + 1));
    for j in 0..=nz {
        let z = height * j as f64 / nz as f64;
        for i in 0..nt {
            let t = 2.0 * PI * i as f64 / nt as f64;
            verts.push(Vec3::new(r * t.cos(), r * t.sin(), z));
        }
    }
    let id = |i: usize, j: usize| j * nt + (i % nt);
    let mut faces = Vec::with_capacity(2 * nt * nz);
    for j in 0..nz {
        for i in 0..nt {
            faces.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
            faces.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    let mesh = TriMesh::new(verts, faces)?;
    let tensors = (0..mesh.n_faces())
        .map(|f| {
            let n = mesh.face_normal(f);
            let radial = Vec3::new(n.x, n.y, 0.0).normalize();
            let circ = Vec3::z().cross(&radial);
            let s3 = circ * circ.transpose() / r;
            project_world_tensor(mesh.frame(f), &s3, &radial)
        })
        .collect();
    let curv = CurvatureField::new(&mesh, tensors, CurvatureSource::Analytic);
    Ok((mesh, curv))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plane_face_count() {
        let (m, c) = analytic_test_surface(&TestSurface::plane(10.0, 10.0), 10).unwrap();
        assert_eq!(m.n_faces(), 200);
        assert!(c.tensors().iter().all(|t| t.norm() == 0.0));
    }

    #[test]
    fn cylinder_is_closed_around() {
        let (m, c) = analytic_test_surface(&TestSurface::cylinder(5.0, 20.0), 20).unwrap();
        // boundary only on the two rims
        let nt = m.n_faces() / (2 * 20);
        assert_eq!(m.n_boundary_edges(), 2 * nt);
        assert_eq!(m.n_components(), 1);
        for f in 0..m.n_faces() {
            let p = c.principal(f);
            assert!((p.k_max - 0.2).abs() < 0.2 * 1e-6);
            assert!(p.k_min.abs() < 1e-9);
            let x = m.face_centroid(f);
            assert!(m.face_normal(f).dot(&Vec3::new(x.x, x.y, 0.0)) > 0.0);
        }
    }

    #[test]
    fn saddle_curvature_at_origin() {
        let (s, _) = height_shape_operator([0.0, 0.0], [[0.1, 0.0], [0.0, -0.1]]);
        assert!((s[(0, 0)] + 0.1).abs() < 1e-15 && (s[(1, 1)] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_params() {
        assert!(analytic_test_surface(&TestSurface::cylinder(-1.0, 2.0), 4).is_err());
        assert!(analytic_test_surface(&TestSurface::plane(1.0, 1.0), 1).is_err());
    }
}
