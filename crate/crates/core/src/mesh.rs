//! Indexed triangle mesh with the adjacency and per-element geometry used by
//! the operators.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

use crate::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Faces smaller than this (mm²) are rejected.
pub const MIN_FACE_AREA: f64 = 1e-12;
/// Cotangents are clamped to this magnitude.
pub const COT_CLAMP: f64 = 1e4;

/// A location on the surface given by a face and barycentric coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfacePoint {
    pub face: usize,
    pub bary: [f64; 3],
}

impl SurfacePoint {
    pub fn new(face: usize, bary: [f64; 3]) -> Self {
        Self { face, bary }
    }

    pub fn is_valid(&self) -> bool {
        self.bary.iter().all(|&b| b >= -1e-12) && (self.bary.iter().sum::<f64>() - 1.0).abs() <= 1e-9
    }
}

/// An undirected edge with its one or two incident faces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub v: [usize; 2],
    pub faces: [Option<usize>; 2],
}

impl Edge {
    pub fn is_boundary(&self) -> bool {
        self.faces[1].is_none()
    }
}

/// Orthonormal tangent frame of a face: `t1` along the first edge, `t2 = n × t1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub t1: Vec3,
    pub t2: Vec3,
    pub n: Vec3,
}

impl Frame {
    pub fn to_local(&self, v: &Vec3) -> [f64; 2] {
        [v.dot(&self.t1), v.dot(&self.t2)]
    }

    pub fn to_world(&self, a: [f64; 2]) -> Vec3 {
        self.t1 * a[0] + self.t2 * a[1]
    }
}

#[derive(Debug, Clone)]
pub struct TriMesh {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    face_normals: Vec<Vec3>,
    face_areas: Vec<f64>,
    vertex_normals: Vec<Vec3>,
    voronoi_area: Vec<f64>,
    vertex_faces: Vec<Vec<usize>>,
    face_neighbors: Vec<[Option<usize>; 3]>,
    edges: Vec<Edge>,
    boundary_vertex: Vec<bool>,
    frames: Vec<Frame>,
    face_component: Vec<usize>,
    n_components: usize,
}

/// Cotangent of the angle between `u` and `v`, clamped.
pub fn cot(u: &Vec3, v: &Vec3) -> f64 {
    let s = u.cross(v).norm();
    let c = u.dot(v);
    if s <= c.abs() / COT_CLAMP {
        return COT_CLAMP.copysign(c);
    }
    (c / s).clamp(-COT_CLAMP, COT_CLAMP)
}

impl TriMesh {
    /// Build and validate a mesh. Every vertex must be used by some face.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        if faces.is_empty() {
            return Err(Error::Topology("mesh has no faces".into()));
        }
        let nv = vertices.len();
        if let Some(v) = vertices.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::Topology(format!("vertex {v} has non-finite coordinates")));
        }
        for (fi, f) in faces.iter().enumerate() {
            if f.iter().any(|&v| v >= nv) {
                return Err(Error::Topology(format!("face {fi} references a missing vertex")));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::Topology(format!("face {fi} repeats a vertex")));
            }
        }

        let mut face_normals = Vec::with_capacity(faces.len());
        let mut face_areas = Vec::with_capacity(faces.len());
        for (fi, f) in faces.iter().enumerate() {
            let c = (vertices[f[1]] - vertices[f[0]]).cross(&(vertices[f[2]] - vertices[f[0]]));
            let area = 0.5 * c.norm();
            if !(area >= MIN_FACE_AREA) {
                return Err(Error::Topology(format!("face {fi} is degenerate (area {area:e})")));
            }
            face_areas.push(area);
            face_normals.push(c / (2.0 * area));
        }

        let mut vertex_faces = vec![Vec::new(); nv];
        for (fi, f) in faces.iter().enumerate() {
            for &v in f {
                vertex_faces[v].push(fi);
            }
        }
        if let Some(v) = vertex_faces.iter().position(Vec::is_empty) {
            return Err(Error::Topology(format!("vertex {v} is not used by any face")));
        }

        // directed half-edges keyed by undirected edge
        let mut edge_map: HashMap<(usize, usize), Vec<(usize, usize, bool)>> = HashMap::new();
        for (fi, f) in faces.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                edge_map.entry(key).or_default().push((fi, k, a < b));
            }
        }
        let mut keys: Vec<_> = edge_map.keys().copied().collect();
        keys.sort_unstable();
        let mut face_neighbors = vec![[None; 3]; faces.len()];
        let mut edges = Vec::with_capacity(keys.len());
        let mut boundary_vertex = vec![false; nv];
        for key in keys {
            let inc = &edge_map[&key];
            match inc.as_slice() {
                [(f, _, _)] => {
                    boundary_vertex[key.0] = true;
                    boundary_vertex[key.1] = true;
                    edges.push(Edge {
                        v: [key.0, key.1],
                        faces: [Some(*f), None],
                    });
                }
                [(f, kf, df), (g, kg, dg)] => {
                    if df == dg {
                        return Err(Error::Topology(format!(
                            "faces {f} and {g} have inconsistent orientation across edge {key:?}"
                        )));
                    }
                    face_neighbors[*f][*kf] = Some(*g);
                    face_neighbors[*g][*kg] = Some(*f);
                    edges.push(Edge {
                        v: [key.0, key.1],
                        faces: [Some(*f), Some(*g)],
                    });
                }
                _ => {
                    return Err(Error::Topology(format!(
                        "edge {key:?} has {} incident faces",
                        inc.len()
                    )))
                }
            }
        }

        let mut vertex_normals = vec![Vec3::zeros(); nv];
        let mut voronoi_area = vec![0.0; nv];
        for (fi, f) in faces.iter().enumerate() {
            let p = [vertices[f[0]], vertices[f[1]], vertices[f[2]]];
            for k in 0..3 {
                vertex_normals[f[k]] += face_normals[fi] * face_areas[fi];
            }
            let parts = mixed_voronoi(&p, face_areas[fi]);
            for k in 0..3 {
                voronoi_area[f[k]] += parts[k];
            }
        }
        for (v, n) in vertex_normals.iter_mut().enumerate() {
            let len = n.norm();
            if len > 0.0 {
                *n /= len;
            } else {
                // opposite faces cancel; fall back to the first face normal
                *n = face_normals[vertex_faces[v][0]];
            }
        }

        let mut frames = Vec::with_capacity(faces.len());
        for (fi, f) in faces.iter().enumerate() {
            let e = vertices[f[1]] - vertices[f[0]];
            let n = face_normals[fi];
            let t1 = (e - n * n.dot(&e)).normalize();
            if !t1.iter().all(|c| c.is_finite()) {
                return Err(Error::DegenerateFrame(fi));
            }
            frames.push(Frame { t1, t2: n.cross(&t1), n });
        }

        let mut face_component = vec![usize::MAX; faces.len()];
        let mut n_components = 0;
        for s in 0..faces.len() {
            if face_component[s] != usize::MAX {
                continue;
            }
            face_component[s] = n_components;
            let mut stack = vec![s];
            while let Some(f) = stack.pop() {
                for g in face_neighbors[f].iter().flatten() {
                    if face_component[*g] == usize::MAX {
                        face_component[*g] = n_components;
                        stack.push(*g);
                    }
                }
            }
            n_components += 1;
        }

        Ok(Self {
            vertices,
            faces,
            face_normals,
            face_areas,
            vertex_normals,
            voronoi_area,
            vertex_faces,
            face_neighbors,
            edges,
            boundary_vertex,
            frames,
            face_component,
            n_components,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn vertex(&self, v: usize) -> Vec3 {
        self.vertices[v]
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn face(&self, f: usize) -> [usize; 3] {
        self.faces[f]
    }

    pub fn face_positions(&self, f: usize) -> [Vec3; 3] {
        let t = self.faces[f];
        [self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]]
    }

    pub fn face_normal(&self, f: usize) -> Vec3 {
        self.face_normals[f]
    }

    pub fn face_normals(&self) -> &[Vec3] {
        &self.face_normals
    }

    pub fn face_area(&self, f: usize) -> f64 {
        self.face_areas[f]
    }

    pub fn face_areas(&self) -> &[f64] {
        &self.face_areas
    }

    pub fn face_centroid(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.face_positions(f);
        (a + b + c) / 3.0
    }

    pub fn vertex_normal(&self, v: usize) -> Vec3 {
        self.vertex_normals[v]
    }

    pub fn vertex_normals(&self) -> &[Vec3] {
        &self.vertex_normals
    }

    /// Mixed Voronoi area A_i of each vertex.
    pub fn voronoi_areas(&self) -> &[f64] {
        &self.voronoi_area
    }

    pub fn vertex_faces(&self, v: usize) -> &[usize] {
        &self.vertex_faces[v]
    }

    /// Neighbor across edge `k`, the edge from corner `k` to corner `k+1`.
    pub fn face_neighbors(&self, f: usize) -> [Option<usize>; 3] {
        self.face_neighbors[f]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn n_boundary_edges(&self) -> usize {
        self.edges.iter().filter(|e| e.is_boundary()).count()
    }

    pub fn is_boundary_vertex(&self, v: usize) -> bool {
        self.boundary_vertex[v]
    }

    pub fn frame(&self, f: usize) -> &Frame {
        &self.frames[f]
    }

    pub fn face_component(&self, f: usize) -> usize {
        self.face_component[f]
    }

    pub fn n_components(&self) -> usize {
        self.n_components
    }

    /// Component id of each vertex (via its first incident face).
    pub fn vertex_components(&self) -> Vec<usize> {
        self.vertex_faces
            .iter()
            .map(|fs| self.face_component[fs[0]])
            .collect()
    }

    pub fn total_area(&self) -> f64 {
        self.face_areas.iter().sum()
    }

    pub fn mean_edge_length(&self) -> f64 {
        let s: f64 = self
            .edges
            .iter()
            .map(|e| (self.vertices[e.v[0]] - self.vertices[e.v[1]]).norm())
            .sum();
        s / self.edges.len() as f64
    }

    pub fn bounding_box(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for p in &self.vertices {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        (lo, hi)
    }

    /// Local index (0..3) of the edge shared with `g`, if adjacent.
    pub fn shared_edge(&self, f: usize, g: usize) -> Option<usize> {
        self.face_neighbors[f].iter().position(|&n| n == Some(g))
    }

    /// Gradients of the three hat functions on face `f`.
    pub fn gradient_basis(&self, f: usize) -> [Vec3; 3] {
        let p = self.face_positions(f);
        let n = self.face_normals[f];
        let s = 1.0 / (2.0 * self.face_areas[f]);
        [
            n.cross(&(p[2] - p[1])) * s,
            n.cross(&(p[0] - p[2])) * s,
            n.cross(&(p[1] - p[0])) * s,
        ]
    }

    /// Clamped cotangent of the interior angle at each corner of `f`.
    pub fn corner_cotangents(&self, f: usize) -> [f64; 3] {
        let p = self.face_positions(f);
        std::array::from_fn(|k| {
            let a = p[k];
            cot(&(p[(k + 1) % 3] - a), &(p[(k + 2) % 3] - a))
        })
    }

    pub fn corner_angles(&self, f: usize) -> [f64; 3] {
        let p = self.face_positions(f);
        std::array::from_fn(|k| {
            let a = p[k];
            let u = p[(k + 1) % 3] - a;
            let v = p[(k + 2) % 3] - a;
            u.cross(&v).norm().atan2(u.dot(&v))
        })
    }

    /// 2π − Σθ at interior vertices, π − Σθ on the boundary.
    pub fn angle_defects(&self) -> Vec<f64> {
        let mut sum = vec![0.0; self.n_vertices()];
        for f in 0..self.n_faces() {
            let ang = self.corner_angles(f);
            for k in 0..3 {
                sum[self.faces[f][k]] += ang[k];
            }
        }
        sum.iter()
            .enumerate()
            .map(|(v, s)| {
                let full = if self.boundary_vertex[v] {
                    std::f64::consts::PI
                } else {
                    2.0 * std::f64::consts::PI
                };
                full - s
            })
            .collect()
    }

    pub fn point_position(&self, p: &SurfacePoint) -> Vec3 {
        let [a, b, c] = self.face_positions(p.face);
        a * p.bary[0] + b * p.bary[1] + c * p.bary[2]
    }

    /// Linear interpolation of a per-vertex field at a surface point.
    pub fn interpolate(&self, values: &[f64], p: &SurfacePoint) -> f64 {
        let t = self.faces[p.face];
        values[t[0]] * p.bary[0] + values[t[1]] * p.bary[1] + values[t[2]] * p.bary[2]
    }

    /// Barycentric coordinates of `x` projected into the plane of face `f`.
    pub fn barycentric(&self, f: usize, x: &Vec3) -> [f64; 3] {
        let [a, b, c] = self.face_positions(f);
        let n = self.face_normals[f];
        let inv = 1.0 / (2.0 * self.face_areas[f]);
        let l0 = (c - b).cross(&(x - b)).dot(&n) * inv;
        let l1 = (a - c).cross(&(x - c)).dot(&n) * inv;
        [l0, l1, 1.0 - l0 - l1]
    }

    /// Mesh made of the given faces; returns it with the new→old vertex map.
    pub fn submesh(&self, faces: &[usize]) -> Result<(TriMesh, Vec<usize>)> {
        let mut remap = vec![usize::MAX; self.n_vertices()];
        let mut old = Vec::new();
        let mut new_faces = Vec::with_capacity(faces.len());
        for &f in faces {
            let t = self.faces[f];
            let mut nt = [0; 3];
            for k in 0..3 {
                if remap[t[k]] == usize::MAX {
                    remap[t[k]] = old.len();
                    old.push(t[k]);
                }
                nt[k] = remap[t[k]];
            }
            new_faces.push(nt);
        }
        let verts = old.iter().map(|&v| self.vertices[v]).collect();
        Ok((TriMesh::new(verts, new_faces)?, old))
    }

    /// Copy of the mesh with every vertex mapped through `f`.
    pub fn transformed(&self, f: impl Fn(&Vec3) -> Vec3) -> Result<TriMesh> {
        TriMesh::new(self.vertices.iter().map(f).collect(), self.faces.clone())
    }
}

/// Per-corner share of the face area (Meyer et al. mixed Voronoi cells).
fn mixed_voronoi(p: &[Vec3; 3], area: f64) -> [f64; 3] {
    let e = |i: usize, j: usize| p[j] - p[i];
    let dots: [f64; 3] = std::array::from_fn(|k| e(k, (k + 1) % 3).dot(&e(k, (k + 2) % 3)));
    if let Some(obtuse) = dots.iter().position(|&d| d < 0.0) {
        let mut out = [area / 4.0; 3];
        out[obtuse] = area / 2.0;
        return out;
    }
    let cots: [f64; 3] = std::array::from_fn(|k| cot(&e(k, (k + 1) % 3), &e(k, (k + 2) % 3)));
    std::array::from_fn(|k| {
        let j = (k + 1) % 3;
        let l = (k + 2) % 3;
        (e(k, j).norm_squared() * cots[l] + e(k, l).norm_squared() * cots[j]) / 8.0
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    pub(crate) fn icosahedron() -> TriMesh {
        let t = (1.0 + 5f64.sqrt()) / 2.0;
        let v = [
            [-1.0, t, 0.0],
            [1.0, t, 0.0],
            [-1.0, -t, 0.0],
            [1.0, -t, 0.0],
            [0.0, -1.0, t],
            [0.0, 1.0, t],
            [0.0, -1.0, -t],
            [0.0, 1.0, -t],
            [t, 0.0, -1.0],
            [t, 0.0, 1.0],
            [-t, 0.0, -1.0],
            [-t, 0.0, 1.0],
        ];
        let f = [
            [0, 11, 5],
            [0, 5, 1],
            [0, 1, 7],
            [0, 7, 10],
            [0, 10, 11],
            [1, 5, 9],
            [5, 11, 4],
            [11, 10, 2],
            [10, 7, 6],
            [7, 1, 8],
            [3, 9, 4],
            [3, 4, 2],
            [3, 2, 6],
            [3, 6, 8],
            [3, 8, 9],
            [4, 9, 5],
            [2, 4, 11],
            [6, 2, 10],
            [8, 6, 7],
            [9, 8, 1],
        ];
        TriMesh::new(
            v.iter().map(|p| Vec3::new(p[0], p[1], p[2]).normalize()).collect(),
            f.to_vec(),
        )
        .unwrap()
    }

    #[test]
    fn single_triangle() {
        let m = TriMesh::new(
            vec![Vec3::zeros(), Vec3::x(), Vec3::y()],
            vec![[0, 1, 2]],
        )
        .unwrap();
        assert_eq!(m.n_vertices(), 3);
        assert_eq!(m.n_boundary_edges(), 3);
        assert_relative_eq!(m.voronoi_areas().iter().sum::<f64>(), 0.5, max_relative = 1e-12);
    }

    #[test]
    fn icosahedron_is_closed_and_gauss_bonnet_holds() {
        let m = icosahedron();
        assert_eq!((m.n_vertices(), m.n_faces(), m.n_boundary_edges()), (12, 20, 0));
        let total: f64 = m.angle_defects().iter().sum();
        assert!((total - 4.0 * std::f64::consts::PI).abs() < 1e-9);
        let a: f64 = m.voronoi_areas().iter().sum();
        assert_relative_eq!(a, m.total_area(), max_relative = 1e-9);
    }

    #[test]
    fn repeated_vertex_is_rejected() {
        let r = TriMesh::new(vec![Vec3::zeros(), Vec3::x(), Vec3::y()], vec![[0, 1, 1]]);
        assert!(matches!(r, Err(Error::Topology(_))));
    }

    #[test]
    fn non_manifold_edge_is_rejected() {
        let v = vec![
            Vec3::zeros(),
            Vec3::x(),
            Vec3::y(),
            -Vec3::y(),
            Vec3::z(),
        ];
        let r = TriMesh::new(v, vec![[0, 1, 2], [1, 0, 3], [0, 1, 4]]);
        assert!(matches!(r, Err(Error::Topology(_))));
    }

    #[test]
    fn obtuse_triangle_areas_sum_to_face_area() {
        let m = TriMesh::new(
            vec![Vec3::zeros(), Vec3::new(4.0, 0.0, 0.0), Vec3::new(2.0, 0.3, 0.0)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let a = m.voronoi_areas();
        assert_relative_eq!(a[2], m.total_area() / 2.0, max_relative = 1e-12);
        assert!(a.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn barycentric_roundtrip() {
        let m = icosahedron();
        let p = SurfacePoint::new(3, [0.2, 0.3, 0.5]);
        let x = m.point_position(&p);
        let b = m.barycentric(3, &x);
        for k in 0..3 {
            assert!((b[k] - p.bary[k]).abs() < 1e-12);
        }
    }
}
