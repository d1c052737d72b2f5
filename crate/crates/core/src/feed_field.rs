//! Cutter geometry and per-face feed direction fields.

use serde::{Deserialize, Serialize};
use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap};

use crate::curvature::CurvatureField;
use crate::mesh::{TriMesh, Vec3};
use crate::{par, Error, Result};

/// Relative strip-width spread below which a face has no preferred direction.
pub const SINGULAR_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutterKind {
    Ball,
    Flat,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutterSpec {
    pub kind: CutterKind,
    /// mm
    pub radius: f64,
    /// Degrees between cutter bottom and surface; flat-end only.
    #[serde(default = "default_inclination")]
    pub inclination: f64,
    /// Degrees; accepted but does not change the effective shape.
    #[serde(default)]
    pub tilt: f64,
}

fn default_inclination() -> f64 {
    90.0
}

impl CutterSpec {
    pub fn ball(radius: f64) -> Self {
        Self {
            kind: CutterKind::Ball,
            radius,
            inclination: 90.0,
            tilt: 0.0,
        }
    }

    pub fn flat(radius: f64, inclination: f64, tilt: f64) -> Self {
        Self {
            kind: CutterKind::Flat,
            radius,
            inclination,
            tilt,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius.is_finite() && self.radius > 0.0) {
            return Err(Error::InvalidConfig(format!("cutter radius {} must be positive", self.radius)));
        }
        if self.kind == CutterKind::Flat && !(self.inclination > 0.0 && self.inclination <= 90.0) {
            return Err(Error::InvalidConfig(format!(
                "flat-end inclination {}° must lie in (0°, 90°]",
                self.inclination
            )));
        }
        Ok(())
    }

    /// Effective cutting radius; independent of position and feed direction
    /// in this model.
    pub fn effective(&self) -> Result<f64> {
        self.validate()?;
        Ok(match self.kind {
            CutterKind::Ball => self.radius,
            CutterKind::Flat => self.radius / self.inclination.to_radians().sin(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectiveCutter {
    pub radius: f64,
}

/// Osculating radius of the cutter silhouette in the plane normal to the feed.
pub fn effective_radius(cutter: &CutterSpec, _face: usize, _feed_dir: &Vec3) -> Result<EffectiveCutter> {
    Ok(EffectiveCutter {
        radius: cutter.effective()?,
    })
}

/// 2√(2h / (k + 1/r_e)).
pub fn width_for(k_s: f64, r_e: f64, h: f64) -> Option<f64> {
    let denom = k_s + 1.0 / r_e;
    (denom > 0.0).then(|| 2.0 * (2.0 * h / denom).sqrt())
}

/// Machining strip width for feeding along `feed_dir` on `face`.
pub fn strip_width(
    cutter: &CutterSpec,
    face: usize,
    feed_dir: &Vec3,
    curv: &CurvatureField,
    h: f64,
) -> Result<f64> {
    let r_e = effective_radius(cutter, face, feed_dir)?.radius;
    let k_s = curv.normal_curvature(face, &curv.normal(face).cross(feed_dir))?;
    width_for(k_s, r_e, h).ok_or(Error::Gouge { faces: vec![face] })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionFlag {
    WellDefined,
    Singular,
    /// The cutter does not fit the surface for any feed direction.
    Gouge,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectionField {
    pub dirs: Vec<Vec3>,
    pub flags: Vec<DirectionFlag>,
}

impl DirectionField {
    pub fn uniform(mesh: &TriMesh, d: &Vec3) -> Self {
        let dirs = (0..mesh.n_faces()).map(|f| tangent_or_frame(mesh, f, d)).collect();
        Self {
            dirs,
            flags: vec![DirectionFlag::WellDefined; mesh.n_faces()],
        }
    }

    pub fn len(&self) -> usize {
        self.dirs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dirs.is_empty()
    }

    pub fn n_singular(&self) -> usize {
        self.flags.iter().filter(|f| **f == DirectionFlag::Singular).count()
    }

    pub fn gouge_faces(&self) -> Vec<usize> {
        (0..self.len()).filter(|&f| self.flags[f] == DirectionFlag::Gouge).collect()
    }

    /// Replace the direction of every singular face by `d` projected onto it.
    pub fn fill_singular(&mut self, mesh: &TriMesh, d: &Vec3) {
        for f in 0..self.len() {
            if self.flags[f] == DirectionFlag::Singular {
                self.dirs[f] = tangent_or_frame(mesh, f, d);
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let file = DirectionFile {
            directions: self
                .dirs
                .iter()
                .enumerate()
                .map(|(f, d)| (f, [d.x, d.y, d.z]))
                .collect(),
            flags: self
                .flags
                .iter()
                .enumerate()
                .filter(|(_, fl)| **fl != DirectionFlag::WellDefined)
                .map(|(f, fl)| (f, *fl))
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    /// Parse a (possibly partial) face → direction map. Listed faces become
    /// well-defined (unless flagged otherwise); missing ones are singular.
    pub fn from_json(mesh: &TriMesh, text: &str) -> Result<Self> {
        let file: DirectionFile = serde_json::from_str(text)?;
        let mut field = Self {
            dirs: (0..mesh.n_faces()).map(|f| mesh.frame(f).t1).collect(),
            flags: vec![DirectionFlag::Singular; mesh.n_faces()],
        };
        for (&f, d) in &file.directions {
            if f >= mesh.n_faces() {
                return Err(Error::Config(format!("direction for face {f} but mesh has {}", mesh.n_faces())));
            }
            let v = Vec3::new(d[0], d[1], d[2]);
            let n = mesh.face_normal(f);
            let t = v - n * n.dot(&v);
            if t.norm() < 1e-9 * v.norm().max(1.0) {
                return Err(Error::NotTangent {
                    face: f,
                    deviation: 1.0,
                });
            }
            field.dirs[f] = t.normalize();
            field.flags[f] = DirectionFlag::WellDefined;
        }
        for (&f, &fl) in &file.flags {
            if f < mesh.n_faces() {
                field.flags[f] = fl;
            }
        }
        Ok(field)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DirectionFile {
    directions: BTreeMap<usize, [f64; 3]>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    flags: BTreeMap<usize, DirectionFlag>,
}

fn tangent_or_frame(mesh: &TriMesh, f: usize, d: &Vec3) -> Vec3 {
    let n = mesh.face_normal(f);
    let t = d - n * n.dot(d);
    if t.norm() > 1e-9 {
        t.normalize()
    } else {
        mesh.frame(f).t1
    }
}

/// Feed along the principal direction of maximum normal curvature, so the
/// perpendicular sees the smallest curvature and the strip is widest.
pub fn preferred_directions(mesh: &TriMesh, curv: &CurvatureField, cutter: &CutterSpec, h: f64) -> Result<DirectionField> {
    let r_e = cutter.effective()?;
    if !(h > 0.0) {
        return Err(Error::InvalidParam(format!("scallop height {h} must be positive")));
    }
    let per_face = par::map(mesh.n_faces(), |f| {
        let p = curv.principal(f);
        let flag = match (width_for(p.k_min, r_e, h), width_for(p.k_max, r_e, h)) {
            (None, _) => DirectionFlag::Gouge,
            (Some(w_best), Some(w_worst)) if w_best - w_worst < SINGULAR_TOL * w_best => DirectionFlag::Singular,
            _ => DirectionFlag::WellDefined,
        };
        (p.dir_max, flag)
    });
    let (dirs, flags): (Vec<_>, Vec<_>) = per_face.into_iter().unzip();
    let gouged = flags.iter().filter(|f| **f == DirectionFlag::Gouge).count();
    if gouged > 0 {
        log::warn!("{gouged} face(s) flagged as gouging");
    }
    Ok(DirectionField { dirs, flags })
}

/// Rotate `d` from `from` into `to` about their shared edge (unfold, copy, fold).
pub fn transport_direction(mesh: &TriMesh, from: usize, to: usize, d: &Vec3) -> Result<Vec3> {
    let k = mesh.shared_edge(from, to).ok_or(Error::NotAdjacent(from, to))?;
    let tri = mesh.face(from);
    let axis = (mesh.vertex(tri[(k + 1) % 3]) - mesh.vertex(tri[k])).normalize();
    let n0 = mesh.face_normal(from);
    let n1 = mesh.face_normal(to);
    let angle = n0.cross(&n1).dot(&axis).atan2(n0.dot(&n1));
    let (s, c) = angle.sin_cos();
    let r = d * c + axis.cross(d) * s + axis * axis.dot(d) * (1.0 - c);
    let t = r - n1 * n1.dot(&r);
    Ok(t.normalize())
}

/// Orientation propagated outward from seed faces, breadth-first in order of
/// confidence: the edge whose transported dot has the largest magnitude is
/// crossed first, so sign decisions across near-perpendicular seams are made
/// last. Singular faces receive the transported direction of their parent.
pub fn orient(field: &DirectionField, mesh: &TriMesh, seeds: Option<&[usize]>) -> Result<DirectionField> {
    let nf = mesh.n_faces();
    let seeds = seeds.unwrap_or(&[]);
    let any_defined = field.flags.iter().any(|f| *f != DirectionFlag::Singular);
    if !any_defined && seeds.is_empty() {
        return Err(Error::NoSeed);
    }
    let mut out = field.clone();
    let mut visited = vec![false; nf];
    let mut heap = BinaryHeap::new();
    let mut seq = 0usize;

    let mut comp_seeds: Vec<Vec<usize>> = vec![Vec::new(); mesh.n_components()];
    for &s in seeds {
        comp_seeds[mesh.face_component(s)].push(s);
    }
    for f in 0..nf {
        let c = mesh.face_component(f);
        if comp_seeds[c].is_empty() && field.flags[f] != DirectionFlag::Singular {
            comp_seeds[c].push(f);
        }
    }
    for f in 0..nf {
        let c = mesh.face_component(f);
        if comp_seeds[c].is_empty() {
            comp_seeds[c].push(f);
        }
    }

    let mut push = |heap: &mut BinaryHeap<Candidate>, out: &DirectionField, visited: &[bool], f: usize| -> Result<()> {
        for g in mesh.face_neighbors(f).into_iter().flatten() {
            if visited[g] {
                continue;
            }
            let t = transport_direction(mesh, f, g, &out.dirs[f])?;
            let confidence = if field.flags[g] == DirectionFlag::Singular { 0.0 } else { t.dot(&out.dirs[g]).abs() };
            heap.push(Candidate { confidence, seq: Reverse(seq), face: g, dir: t });
            seq += 1;
        }
        Ok(())
    };

    for cs in &comp_seeds {
        for &s in cs {
            if !visited[s] {
                visited[s] = true;
                if out.flags[s] == DirectionFlag::Singular {
                    out.flags[s] = DirectionFlag::WellDefined;
                }
                push(&mut heap, &out, &visited, s)?;
            }
        }
        while let Some(Candidate { face: g, dir: t, .. }) = heap.pop() {
            if visited[g] {
                continue;
            }
            visited[g] = true;
            if field.flags[g] == DirectionFlag::Singular {
                out.dirs[g] = t;
                out.flags[g] = DirectionFlag::WellDefined;
            } else if t.dot(&out.dirs[g]) < 0.0 {
                out.dirs[g] = -out.dirs[g];
            }
            push(&mut heap, &out, &visited, g)?;
        }
    }
    Ok(out)
}

struct Candidate {
    confidence: f64,
    seq: Reverse<usize>,
    face: usize,
    dir: Vec3,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.confidence.total_cmp(&other.confidence).then(self.seq.cmp(&other.seq))
    }
}

/// Damped Laplacian smoothing with transported neighbour averages.
pub fn smooth_directions(field: &DirectionField, mesh: &TriMesh, iterations: usize, step: f64) -> DirectionField {
    let mut cur = field.dirs.clone();
    for _ in 0..iterations {
        let next = par::map(mesh.n_faces(), |f| {
            let mut sum = Vec3::zeros();
            let mut count = 0;
            for g in mesh.face_neighbors(f).into_iter().flatten() {
                if let Ok(t) = transport_direction(mesh, g, f, &cur[g]) {
                    sum += t;
                    count += 1;
                }
            }
            if count == 0 {
                return cur[f];
            }
            let n = mesh.face_normal(f);
            let v = cur[f] * (1.0 - step) + sum * (step / count as f64);
            let v = v - n * n.dot(&v);
            if v.norm() > 1e-12 {
                v.normalize()
            } else {
                cur[f]
            }
        });
        cur = next;
    }
    DirectionField {
        dirs: cur,
        flags: field.flags.clone(),
    }
}

pub fn rotate90(field: &DirectionField, mesh: &TriMesh) -> DirectionField {
    DirectionField {
        dirs: par::map(mesh.n_faces(), |f| mesh.face_normal(f).cross(&field.dirs[f])),
        flags: field.flags.clone(),
    }
}

/// Per-face √((k_s + 1/r₁)/8) with k_s across the feed.
pub fn magnitude_field(mesh: &TriMesh, curv: &CurvatureField, cutter: &CutterSpec, field: &DirectionField) -> Result<Vec<f64>> {
    let r_e = cutter.effective()?;
    let per_face = par::map(mesh.n_faces(), |f| -> Result<Option<f64>> {
        let across = mesh.face_normal(f).cross(&field.dirs[f]);
        let k = curv.normal_curvature(f, &across)?;
        let q = k + 1.0 / r_e;
        Ok((q > 0.0).then(|| (q / 8.0).sqrt()))
    });
    let mut out = Vec::with_capacity(mesh.n_faces());
    let mut gouged = Vec::new();
    for (f, m) in per_face.into_iter().enumerate() {
        match m? {
            Some(m) => out.push(m),
            None => {
                gouged.push(f);
                out.push(0.0);
            }
        }
    }
    if gouged.is_empty() {
        Ok(out)
    } else {
        Err(Error::Gouge { faces: gouged })
    }
}

/// Smallest transported dot product over interior edges.
pub fn min_edge_consistency(field: &DirectionField, mesh: &TriMesh) -> f64 {
    mesh.edges()
        .iter()
        .filter_map(|e| match e.faces {
            [Some(f), Some(g)] => transport_direction(mesh, f, g, &field.dirs[f])
                .ok()
                .map(|t| t.dot(&field.dirs[g])),
            _ => None,
        })
        .fold(f64::INFINITY, f64::min)
}
