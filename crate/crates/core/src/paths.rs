//! Level scheduling and iso-curve extraction by marching triangles.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;

use crate::curvature::CurvatureField;
use crate::diff_ops::face_gradient;
use crate::feed_field::{effective_radius, CutterSpec};
use crate::mesh::{SurfacePoint, TriMesh, Vec3};
use crate::segmentation::SegmentationResult;
use crate::{par, Error, Result};

pub const DEFAULT_SAMPLES: usize = 64;
pub const MIN_SAMPLES: usize = 8;
/// Smallest φ range regarded as non-constant.
pub const MIN_FIELD_RANGE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolPath {
    pub level: f64,
    pub points: Vec<SurfacePoint>,
    pub positions: Vec<Vec3>,
    pub closed: bool,
    pub length: f64,
    pub patch: usize,
}

impl ToolPath {
    fn new(level: f64, points: Vec<SurfacePoint>, positions: Vec<Vec3>, closed: bool) -> Self {
        let length = polyline_length(&positions, closed);
        Self {
            level,
            points,
            positions,
            closed,
            length,
            patch: 0,
        }
    }

    pub fn n_segments(&self) -> usize {
        match (self.positions.len(), self.closed) {
            (0 | 1, _) => 0,
            (n, true) => n,
            (n, false) => n - 1,
        }
    }

    /// Segment `i` as (start index, end index).
    pub fn segment(&self, i: usize) -> (usize, usize) {
        (i, (i + 1) % self.positions.len())
    }

    /// Point at arc length `s` from the start, with the index of its segment.
    pub fn at_length(&self, s: f64) -> (Vec3, usize) {
        let mut left = s.clamp(0.0, self.length);
        let n = self.n_segments();
        for i in 0..n {
            let (a, b) = self.segment(i);
            let l = (self.positions[b] - self.positions[a]).norm();
            if left <= l || i + 1 == n {
                let t = if l > 0.0 { (left / l).min(1.0) } else { 0.0 };
                return (self.positions[a] + (self.positions[b] - self.positions[a]) * t, i);
            }
            left -= l;
        }
        (self.positions[0], 0)
    }
}

pub fn polyline_length(p: &[Vec3], closed: bool) -> f64 {
    let open: f64 = p.windows(2).map(|w| (w[1] - w[0]).norm()).sum();
    match (closed, p.first(), p.last()) {
        (true, Some(a), Some(b)) if p.len() > 2 => open + (a - b).norm(),
        _ => open,
    }
}

pub fn total_length(paths: &[ToolPath]) -> f64 {
    paths.iter().map(|p| p.length).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSchedule {
    pub levels: Vec<f64>,
    pub increments: Vec<f64>,
    pub h: f64,
}

impl LevelSchedule {
    pub fn empty(h: f64) -> Self {
        Self {
            levels: Vec::new(),
            increments: Vec::new(),
            h,
        }
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

fn field_range(phi: &[f64]) -> Result<(f64, f64)> {
    let (lo, hi) = phi
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(hi - lo >= MIN_FIELD_RANGE) {
        return Err(Error::DegenerateField(hi - lo));
    }
    Ok((lo, hi))
}

/// Iso-curves `φ = level`, one path per connected component.
///
/// Closed loops do not repeat their first point. Paths are oriented so that
/// φ increases to their left (seen from the face normal). Point `i` carries
/// the face of the segment leaving it.
pub fn extract_iso_curve(mesh: &TriMesh, phi: &[f64], level: f64) -> Result<Vec<ToolPath>> {
    let (lo, hi) = field_range(phi)?;
    if !(lo..=hi).contains(&level) {
        return Err(Error::OutOfRange { level, min: lo, max: hi });
    }
    let eps = 1e-12 * (hi - lo);
    let mut l = level;
    while phi.contains(&l) {
        l = if l + eps < hi { l + eps } else { l - eps };
    }

    // crossing per mesh edge
    let edges = mesh.edges();
    let mut crossing: HashMap<usize, (f64, usize)> = HashMap::new();
    let mut edge_index: HashMap<(usize, usize), usize> = HashMap::with_capacity(edges.len());
    for (e, edge) in edges.iter().enumerate() {
        let [a, b] = edge.v;
        edge_index.insert((a.min(b), a.max(b)), e);
        if (phi[a] > l) != (phi[b] > l) {
            crossing.insert(e, ((l - phi[a]) / (phi[b] - phi[a]), e));
        }
    }
    if crossing.is_empty() {
        return Ok(Vec::new());
    }
    // each crossed face joins two crossed edges
    let mut links: HashMap<usize, Vec<(usize, usize)>> = HashMap::new();
    for f in 0..mesh.n_faces() {
        let t = mesh.face(f);
        let crossed: Vec<usize> = (0..3)
            .map(|k| edge_index[&(t[k].min(t[(k + 1) % 3]), t[k].max(t[(k + 1) % 3]))])
            .filter(|e| crossing.contains_key(e))
            .collect();
        if let [e0, e1] = crossed[..] {
            links.entry(e0).or_default().push((e1, f));
            links.entry(e1).or_default().push((e0, f));
        }
    }

    let point_on = |e: usize, f: usize| -> SurfacePoint {
        let [a, b] = edges[e].v;
        let t = crossing[&e].0;
        let tri = mesh.face(f);
        let mut bary = [0.0; 3];
        for k in 0..3 {
            if tri[k] == a {
                bary[k] = 1.0 - t;
            } else if tri[k] == b {
                bary[k] = t;
            }
        }
        SurfacePoint::new(f, bary)
    };

    let mut starts: Vec<usize> = crossing.keys().copied().collect();
    starts.sort_unstable();
    // open chains begin at boundary crossings (one link)
    starts.sort_by_key(|e| links.get(e).map_or(0, Vec::len) != 1);
    let mut visited: HashMap<usize, bool> = HashMap::new();
    let mut grads: HashMap<usize, Vec3> = HashMap::new();
    let mut out = Vec::new();
    for s in starts {
        if visited.contains_key(&s) {
            continue;
        }
        let Some(first) = links.get(&s) else { continue };
        let open = first.len() == 1;
        // walk: edges and the faces of the segments between them
        let mut chain_edges = vec![s];
        let mut chain_faces = Vec::new();
        visited.insert(s, true);
        let mut prev_face = usize::MAX;
        let mut cur = s;
        let mut closed = false;
        loop {
            let next = links[&cur].iter().find(|&&(_, f)| f != prev_face).copied();
            let Some((e, f)) = next else { break };
            chain_faces.push(f);
            if e == s {
                closed = true;
                break;
            }
            if visited.contains_key(&e) {
                break;
            }
            visited.insert(e, true);
            chain_edges.push(e);
            prev_face = f;
            cur = e;
        }
        debug_assert!(open || closed);
        let n = chain_edges.len();
        let mut points: Vec<SurfacePoint> = (0..n)
            .map(|i| {
                let f = if i < chain_faces.len() { chain_faces[i] } else { chain_faces[i - 1] };
                point_on(chain_edges[i], f)
            })
            .collect();
        let mut positions: Vec<Vec3> = points.iter().map(|p| mesh.point_position(p)).collect();
        if n >= 2 {
            let f = chain_faces[0];
            let g = *grads.entry(f).or_insert_with(|| gradient_on_face(mesh, phi, f));
            let t = positions[1] - positions[0];
            if mesh.face_normal(f).dot(&t.cross(&g)) < 0.0 {
                reverse_chain(mesh, &mut points, &mut positions, &chain_edges, &chain_faces, closed, &point_on);
            }
        }
        out.push(ToolPath::new(level, points, positions, closed));
    }
    Ok(out)
}

fn gradient_on_face(mesh: &TriMesh, phi: &[f64], f: usize) -> Vec3 {
    let g = mesh.gradient_basis(f);
    let t = mesh.face(f);
    g[0] * phi[t[0]] + g[1] * phi[t[1]] + g[2] * phi[t[2]]
}

fn reverse_chain(
    mesh: &TriMesh,
    points: &mut Vec<SurfacePoint>,
    positions: &mut Vec<Vec3>,
    edges: &[usize],
    faces: &[usize],
    closed: bool,
    point_on: &dyn Fn(usize, usize) -> SurfacePoint,
) {
    let n = edges.len();
    // reversed point j is old point n−1−j; its outgoing segment is the old
    // incoming one
    *points = (0..n)
        .map(|j| {
            let i = n - 1 - j;
            let f = if i > 0 {
                faces[i - 1]
            } else if closed {
                faces[n - 1]
            } else {
                faces[0]
            };
            point_on(edges[i], f)
        })
        .collect();
    *positions = points.iter().map(|p| mesh.point_position(p)).collect();
}

/// Smallest admissible level step along the given paths at the sampled
/// points: ‖∇φ‖ times the side-step that leaves scallop `h`, using the local
/// effective radius on both sides.
pub fn level_increment(
    mesh: &TriMesh,
    phi: &[f64],
    curv: &CurvatureField,
    cutter: &CutterSpec,
    paths: &[ToolPath],
    h: f64,
    samples: usize,
) -> Result<f64> {
    let grad_norm: Vec<f64> = face_gradient(mesh, phi).vectors.iter().map(|g| g.norm()).collect();
    increment_with(mesh, &grad_norm, curv, cutter, paths, h, samples)
}

/// Side-step between paths with effective radii `r1`, `r2` for scallop `h`.
pub fn side_step(k_s: f64, r1: f64, r2: f64, h: f64) -> Option<f64> {
    let (d1, d2) = (k_s + 1.0 / r1, k_s + 1.0 / r2);
    (d1 > 0.0 && d2 > 0.0).then(|| h.sqrt() * ((2.0 / d1).sqrt() + (2.0 / d2).sqrt()))
}

fn increment_with(
    mesh: &TriMesh,
    grad_norm: &[f64],
    curv: &CurvatureField,
    cutter: &CutterSpec,
    paths: &[ToolPath],
    h: f64,
    samples: usize,
) -> Result<f64> {
    if samples < MIN_SAMPLES {
        return Err(Error::InvalidParam(format!("{samples} samples per path, need at least {MIN_SAMPLES}")));
    }
    if !(h > 0.0) {
        return Err(Error::InvalidParam(format!("scallop height {h} must be positive")));
    }
    let mut best = f64::INFINITY;
    let mut gouged = Vec::new();
    for path in paths.iter().filter(|p| p.n_segments() > 0 && p.length > 0.0) {
        let candidates = par::map(samples, |i| -> Result<std::result::Result<f64, usize>> {
            let s = if path.closed {
                i as f64 / samples as f64
            } else {
                (i as f64 + 0.5) / samples as f64
            } * path.length;
            let (_, seg) = path.at_length(s);
            let (a, b) = path.segment(seg);
            let f = path.points[a].face;
            let n = mesh.face_normal(f);
            let t = path.positions[b] - path.positions[a];
            let t = (t - n * t.dot(&n)).normalize();
            let r = effective_radius(cutter, f, &t)?.radius;
            let k_s = curv.normal_curvature(f, &n.cross(&t))?;
            Ok(side_step(k_s, r, r, h).map(|s| grad_norm[f] * s).ok_or(f))
        });
        for c in candidates {
            match c? {
                Ok(v) => best = best.min(v),
                Err(f) => gouged.push(f),
            }
        }
    }
    if best.is_finite() {
        if !gouged.is_empty() {
            log::warn!("{} scheduling sample(s) skipped on gouging faces", gouged.len());
        }
        Ok(best)
    } else if !gouged.is_empty() {
        gouged.sort_unstable();
        gouged.dedup();
        Err(Error::Gouge { faces: gouged })
    } else {
        Err(Error::InvalidParam("no path with positive length to sample".into()))
    }
}

/// Levels from just inside min φ to max φ.
///
/// The first level sits half an increment above the minimum so the boundary
/// strip is cut; each further level adds the increment measured on the
/// previous level's paths. A last level half an increment below the maximum
/// is appended when the remaining band is wider than half a step.
pub fn schedule_levels(
    mesh: &TriMesh,
    phi: &[f64],
    curv: &CurvatureField,
    cutter: &CutterSpec,
    h: f64,
    samples: usize,
) -> Result<LevelSchedule> {
    let (lo, hi) = field_range(phi)?;
    let grad_norm: Vec<f64> = face_gradient(mesh, phi).vectors.iter().map(|g| g.norm()).collect();
    let eps = 1e-6 * (hi - lo);
    let step_at = |l: f64| -> Result<f64> {
        let paths = extract_iso_curve(mesh, phi, l)?;
        let inc = increment_with(mesh, &grad_norm, curv, cutter, &paths, h, samples)?;
        if !(inc > 0.0) {
            return Err(Error::DegenerateField(inc));
        }
        Ok(inc)
    };
    let mut schedule = LevelSchedule::empty(h);
    let first = lo + 0.5 * step_at(lo + eps)?;
    if first >= hi {
        schedule.levels.push(0.5 * (lo + hi));
        schedule.increments.push(step_at(0.5 * (lo + hi))?);
        return Ok(schedule);
    }
    let mut l = first;
    loop {
        let inc = step_at(l)?;
        schedule.levels.push(l);
        schedule.increments.push(inc);
        if l + inc >= hi {
            let end = hi - 0.5 * step_at(hi - eps)?;
            if end > l + 1e-9 * (hi - lo) && hi - l > 0.5 * inc * (1.0 + 1e-6) {
                schedule.levels.push(end);
                schedule.increments.push(step_at(end)?);
            }
            break;
        }
        l += inc;
    }
    Ok(schedule)
}

/// All scheduled iso-curves, extracted in parallel.
pub fn extract_all(mesh: &TriMesh, phi: &[f64], schedule: &LevelSchedule) -> Result<Vec<ToolPath>> {
    if schedule.is_empty() {
        return Ok(Vec::new());
    }
    let per_level = par::map_slice(&schedule.levels, |&l| extract_iso_curve(mesh, phi, l));
    let mut out = Vec::new();
    for paths in per_level {
        out.extend(paths?);
    }
    Ok(out)
}

/// One segmentation patch as a standalone mesh.
#[derive(Debug, Clone)]
pub struct Patch {
    pub label: usize,
    /// Parent face of each patch face.
    pub faces: Vec<usize>,
    pub mesh: TriMesh,
    /// Parent vertex of each patch vertex.
    pub vertex_map: Vec<usize>,
}

impl Patch {
    pub fn curvature(&self, parent: &CurvatureField) -> CurvatureField {
        let tensors = self.faces.iter().map(|&f| *parent.tensor(f)).collect();
        CurvatureField::new(&self.mesh, tensors, parent.source())
    }

    /// Re-express paths on the parent mesh and tag them with the patch label.
    pub fn lift(&self, paths: Vec<ToolPath>) -> Vec<ToolPath> {
        paths
            .into_iter()
            .map(|mut p| {
                for q in &mut p.points {
                    q.face = self.faces[q.face];
                }
                p.patch = self.label;
                p
            })
            .collect()
    }
}

/// Split the mesh into its segmentation patches (one patch if `seg` is None).
pub fn split_patches(mesh: &TriMesh, seg: Option<&SegmentationResult>) -> Result<Vec<Patch>> {
    let Some(seg) = seg else {
        return Ok(vec![Patch {
            label: 0,
            faces: (0..mesh.n_faces()).collect(),
            mesh: mesh.clone(),
            vertex_map: (0..mesh.n_vertices()).collect(),
        }]);
    };
    (0..seg.k)
        .map(|label| {
            let faces = seg.patch_faces(label);
            let (m, vertex_map) = mesh.submesh(&faces)?;
            Ok(Patch {
                label,
                faces,
                mesh: m,
                vertex_map,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surfaces::{analytic_test_surface, TestSurface};

    #[test]
    fn straight_line_on_plane() {
        let (m, _) = analytic_test_surface(&TestSurface::plane(1.0, 1.0), 10).unwrap();
        let phi: Vec<f64> = m.vertices().iter().map(|p| p.x).collect();
        let paths = extract_iso_curve(&m, &phi, 0.5).unwrap();
        assert_eq!(paths.len(), 1);
        let p = &paths[0];
        assert!(!p.closed);
        for (q, x) in p.points.iter().zip(&p.positions) {
            assert!((x.x - 0.5).abs() < 1e-9);
            assert!((m.interpolate(&phi, q) - 0.5).abs() < 1e-9);
            assert!(q.is_valid());
        }
        assert!((p.length - 1.0).abs() < 1e-9);
        // φ increases to the left: walking −y with x to the left
        assert!(p.positions.last().unwrap().y < p.positions[0].y);
    }

    #[test]
    fn consecutive_points_share_or_neighbor_faces() {
        let (m, _) = analytic_test_surface(&TestSurface::saddle(20.0, 10.0), 12).unwrap();
        let phi: Vec<f64> = m.vertices().iter().map(|p| p.x * p.x + 0.5 * p.y * p.y).collect();
        for p in extract_iso_curve(&m, &phi, 30.0).unwrap() {
            assert!(p.closed);
            for i in 0..p.n_segments() {
                let (a, b) = p.segment(i);
                let (fa, fb) = (p.points[a].face, p.points[b].face);
                assert!(fa == fb || m.face_neighbors(fa).contains(&Some(fb)));
            }
        }
    }

    #[test]
    fn out_of_range_and_constant_fields() {
        let (m, _) = analytic_test_surface(&TestSurface::plane(1.0, 1.0), 4).unwrap();
        let phi: Vec<f64> = m.vertices().iter().map(|p| p.x).collect();
        assert!(matches!(extract_iso_curve(&m, &phi, 2.0), Err(Error::OutOfRange { .. })));
        let flat = vec![1.0; m.n_vertices()];
        assert!(matches!(extract_iso_curve(&m, &flat, 1.0), Err(Error::DegenerateField(_))));
    }

    #[test]
    fn side_step_of_ball_on_plane() {
        let s = side_step(0.0, 5.0, 5.0, 0.05).unwrap();
        assert!((s - 2.0f64.sqrt()).abs() < 1e-12);
        assert!(side_step(-1.0, 5.0, 5.0, 0.05).is_none());
    }

    #[test]
    fn empty_schedule_gives_no_paths() {
        let (m, _) = analytic_test_surface(&TestSurface::plane(1.0, 1.0), 4).unwrap();
        let phi: Vec<f64> = m.vertices().iter().map(|p| p.x).collect();
        assert!(extract_all(&m, &phi, &LevelSchedule::empty(0.1)).unwrap().is_empty());
    }
}
