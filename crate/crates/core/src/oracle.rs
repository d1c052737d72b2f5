//! Brute-force checks on generated paths: scallop height from exact circle
//! intersection in the cross-section, alignment with the feed directions,
//! total lengths and Monte-Carlo strip coverage.

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

use crate::curvature::CurvatureField;
use crate::feed_field::{effective_radius, strip_width, CutterSpec, DirectionField};
use crate::mesh::{SurfacePoint, TriMesh, Vec3};
use crate::paths::{side_step, ToolPath};
use crate::{par, Error, Result};

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_COVERAGE_SAMPLES: usize = 100_000;
/// Half-angle of the cone around the section plane searched for the partner point.
pub const CORRESPONDENCE_CONE_DEG: f64 = 30.0;
/// Below this |k| the section is treated as a straight line.
pub const FLAT_SECTION: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScallopSample {
    pub p1: SurfacePoint,
    pub p2: SurfacePoint,
    pub r1: f64,
    pub r2: f64,
    pub k_s: f64,
    pub side_step: f64,
    pub h_exact: f64,
    pub h_model: f64,
    pub rel_error: f64,
}

/// Point on a path with its unit tangent and face.
#[derive(Debug, Clone, Copy)]
struct PathPoint {
    x: Vec3,
    t: Vec3,
    point: SurfacePoint,
}

fn path_point(mesh: &TriMesh, path: &ToolPath, s: f64) -> PathPoint {
    let (x, seg) = path.at_length(s);
    let (a, b) = path.segment(seg);
    let f = path.points[a].face;
    let n = mesh.face_normal(f);
    let t = path.positions[b] - path.positions[a];
    let t = (t - n * t.dot(&n)).normalize();
    PathPoint {
        x,
        t,
        point: SurfacePoint::new(f, mesh.barycentric(f, &x)),
    }
}

/// Closest point of the `paths` to `x1` lying in the plane through `x1`
/// normal to `t`, or failing that within the correspondence cone around it.
fn partner(mesh: &TriMesh, paths: &[ToolPath], x1: &Vec3, t: &Vec3) -> Option<PathPoint> {
    let max_sin = CORRESPONDENCE_CONE_DEG.to_radians().sin();
    // (in plane, distance, path, arc length)
    let mut best: Option<(bool, f64, usize, f64)> = None;
    for (k, path) in paths.iter().enumerate() {
        let mut consider = |exact: bool, d: f64, s: f64| {
            let better = best.is_none_or(|(e, bd, _, _)| (exact && !e) || (exact == e && d < bd));
            if better {
                best = Some((exact, d, k, s));
            }
        };
        let mut along = 0.0;
        for i in 0..path.n_segments() {
            let (a, b) = path.segment(i);
            let (pa, pb) = (path.positions[a], path.positions[b]);
            let l = (pb - pa).norm();
            let (da, db) = ((pa - x1).dot(t), (pb - x1).dot(t));
            if (da <= 0.0) != (db <= 0.0) || da == 0.0 {
                let u = if da == db { 0.0 } else { da / (da - db) };
                let x = pa + (pb - pa) * u;
                consider(true, (x - x1).norm(), along + u * l);
            } else {
                let u = if l > 0.0 { ((x1 - pa).dot(&(pb - pa)) / (l * l)).clamp(0.0, 1.0) } else { 0.0 };
                let x = pa + (pb - pa) * u;
                let d = (x - x1).norm();
                if d > 0.0 && ((x - x1).dot(t) / d).abs() <= max_sin {
                    consider(false, d, along + u * l);
                }
            }
            along += l;
        }
    }
    best.map(|(_, _, k, s)| path_point(mesh, &paths[k], s))
}

/// Point at chord distance `s` along a circle of curvature `k` through the
/// origin with upward normal there, and the outward normal at that point.
fn section_point(k: f64, s: f64) -> Option<([f64; 2], [f64; 2])> {
    if k.abs() < FLAT_SECTION {
        return Some(([s, 0.0], [0.0, 1.0]));
    }
    let half = k * s / 2.0;
    if half.abs() > 1.0 {
        return None;
    }
    let theta = 2.0 * half.asin();
    Some(([theta.sin() / k, (theta.cos() - 1.0) / k], [theta.sin(), theta.cos()]))
}

/// Height of `q` above the section circle (or line) of curvature `k`.
fn height_above(k: f64, q: [f64; 2]) -> f64 {
    if k.abs() < FLAT_SECTION {
        return q[1];
    }
    let c = [0.0, -1.0 / k];
    let d = ((q[0] - c[0]).powi(2) + (q[1] - c[1]).powi(2)).sqrt();
    if k > 0.0 {
        d - 1.0 / k
    } else {
        -1.0 / k - d
    }
}

/// Exact scallop height left by cutting circles of radii `r1`, `r2` resting
/// on a section of curvature `k` at chord distance `s`.
pub fn exact_scallop(k: f64, r1: f64, r2: f64, s: f64) -> Result<f64> {
    Ok(cusp(k, r1, r2, s)?.1)
}

/// Lower intersection of the two cutting circles and its height.
fn cusp(k: f64, r1: f64, r2: f64, s: f64) -> Result<([f64; 2], f64)> {
    let no_cut = || Error::NoIntersection { side_step: s };
    let (p2, n2) = section_point(k, s).ok_or_else(no_cut)?;
    let c1 = [0.0, r1];
    let c2 = [p2[0] + r2 * n2[0], p2[1] + r2 * n2[1]];
    let dx = [c2[0] - c1[0], c2[1] - c1[1]];
    let d = (dx[0] * dx[0] + dx[1] * dx[1]).sqrt();
    if d == 0.0 {
        return Ok(([0.0, 0.0], 0.0));
    }
    if d > r1 + r2 || d < (r1 - r2).abs() {
        return Err(no_cut());
    }
    let a = (r1 * r1 - r2 * r2 + d * d) / (2.0 * d);
    let hh = (r1 * r1 - a * a).max(0.0).sqrt();
    let m = [c1[0] + a * dx[0] / d, c1[1] + a * dx[1] / d];
    let off = [-dx[1] / d * hh, dx[0] / d * hh];
    let q1 = [m[0] + off[0], m[1] + off[1]];
    let q2 = [m[0] - off[0], m[1] - off[1]];
    let (h1, h2) = (height_above(k, q1), height_above(k, q2));
    Ok(if h1 <= h2 { (q1, h1.max(0.0)) } else { (q2, h2.max(0.0)) })
}

/// Side-steps `‖p₄ − p₁‖` and `‖p₂ − p₃‖` of the auxiliary circles: the
/// circle of radius r₁ (resp. r₂) resting on the section that passes through
/// the same scallop cusp from the other side. Both tangent points are the
/// mirror images of p₁, p₂ across the line from the section centre through
/// the cusp.
pub fn auxiliary_side_steps(k: f64, r1: f64, r2: f64, s: f64) -> Result<(f64, f64)> {
    let (q, _) = cusp(k, r1, r2, s)?;
    let (p2, _) = section_point(k, s).ok_or(Error::NoIntersection { side_step: s })?;
    let (origin, dir) = if k.abs() < FLAT_SECTION {
        (q, [0.0, 1.0])
    } else {
        let c = [0.0, -1.0 / k];
        let d = [q[0] - c[0], q[1] - c[1]];
        let n = (d[0] * d[0] + d[1] * d[1]).sqrt();
        (c, [d[0] / n, d[1] / n])
    };
    let dist = |p: [f64; 2]| ((p[0] - origin[0]) * dir[1] - (p[1] - origin[1]) * dir[0]).abs();
    Ok((2.0 * dist([0.0, 0.0]), 2.0 * dist(p2)))
}

/// Scallop height predicted by the side-step relation for chord `s`.
pub fn model_scallop(k: f64, r1: f64, r2: f64, s: f64) -> Option<f64> {
    // side_step is linear in √h
    side_step(k, r1, r2, 1.0).map(|unit| (s / unit).powi(2))
}

/// Scallop samples between two adjacent paths.
///
/// At `samples` seeded random points of `path_a` the section plane normal to
/// the path tangent is erected and the partner point on `path_b` is taken as
/// the nearest one in that plane. The surface section is the osculating
/// circle from `reference`; `model` supplies the curvature used by the
/// side-step relation. Both may be the same field.
#[allow(clippy::too_many_arguments)]
pub fn scallop_oracle(
    mesh: &TriMesh,
    reference: &CurvatureField,
    model: &CurvatureField,
    cutter: &CutterSpec,
    path_a: &ToolPath,
    path_b: &ToolPath,
    samples: usize,
    seed: u64,
) -> Result<Vec<ScallopSample>> {
    scallop_to_next_level(mesh, reference, model, cutter, path_a, std::slice::from_ref(path_b), samples, seed)
}

/// As [`scallop_oracle`], with the partner point searched over every path of
/// the adjacent level.
#[allow(clippy::too_many_arguments)]
pub fn scallop_to_next_level(
    mesh: &TriMesh,
    reference: &CurvatureField,
    model: &CurvatureField,
    cutter: &CutterSpec,
    path_a: &ToolPath,
    next: &[ToolPath],
    samples: usize,
    seed: u64,
) -> Result<Vec<ScallopSample>> {
    if samples == 0 {
        return Err(Error::InvalidParam("at least one oracle sample is required".into()));
    }
    if path_a.length <= 0.0 || next.iter().all(|p| p.n_segments() == 0) {
        return Err(Error::InvalidParam("oracle needs two non-degenerate paths".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let at: Vec<f64> = (0..samples).map(|_| rng.random_range(0.0..path_a.length)).collect();
    let out = par::map_slice(&at, |&s| scallop_at(mesh, reference, model, cutter, path_a, next, s));
    let mut kept = Vec::with_capacity(samples);
    for s in out {
        kept.extend(s?);
    }
    Ok(kept)
}

/// One oracle sample at arc length `s` of `path_a`; `None` when no partner
/// point lies on `next` within the section cone.
pub fn scallop_at(
    mesh: &TriMesh,
    reference: &CurvatureField,
    model: &CurvatureField,
    cutter: &CutterSpec,
    path_a: &ToolPath,
    next: &[ToolPath],
    s: f64,
) -> Result<Option<ScallopSample>> {
    let p = path_point(mesh, path_a, s);
    let Some(q) = partner(mesh, next, &p.x, &p.t) else {
        return Ok(None);
    };
    let f1 = p.point.face;
    let n1 = mesh.face_normal(f1);
    let side = n1.cross(&p.t);
    let r1 = effective_radius(cutter, f1, &p.t)?.radius;
    let r2 = effective_radius(cutter, q.point.face, &q.t)?.radius;
    let k_ref = reference.normal_curvature(f1, &side)?;
    let k_mod = model.normal_curvature(f1, &side)?;
    let chord = (q.x - p.x).norm();
    let h_exact = exact_scallop(k_ref, r1, r2, chord)?;
    let h_model = model_scallop(k_mod, r1, r2, chord).ok_or(Error::Gouge { faces: vec![f1] })?;
    let rel_error = if h_exact > 0.0 { (h_model - h_exact).abs() / h_exact } else { 0.0 };
    Ok(Some(ScallopSample {
        p1: p.point,
        p2: q.point,
        r1,
        r2,
        k_s: k_ref,
        side_step: chord,
        h_exact,
        h_model,
        rel_error,
    }))
}

/// Exactly `samples` oracle samples spread over level pairs `(path, next
/// level)`, the pair drawn with probability proportional to path length.
/// Draws without a partner are replaced; gives up after `20 · samples` draws.
pub fn scallop_over_pairs(
    mesh: &TriMesh,
    reference: &CurvatureField,
    model: &CurvatureField,
    cutter: &CutterSpec,
    pairs: &[(&ToolPath, &[ToolPath])],
    samples: usize,
    seed: u64,
) -> Result<Vec<ScallopSample>> {
    let weights: Vec<f64> = pairs.iter().map(|(a, _)| a.length).collect();
    let pick = WeightedIndex::new(&weights)
        .map_err(|e| Error::InvalidParam(format!("no level pair to sample: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(samples);
    let mut drawn = 0;
    while out.len() < samples && drawn < 20 * samples {
        let batch: Vec<(usize, f64)> = (0..samples - out.len())
            .map(|_| {
                let i = pick.sample(&mut rng);
                (i, rng.random_range(0.0..pairs[i].0.length))
            })
            .collect();
        drawn += batch.len();
        let got = par::map_slice(&batch, |&(i, s)| scallop_at(mesh, reference, model, cutter, pairs[i].0, pairs[i].1, s));
        for g in got {
            out.extend(g?);
        }
    }
    if out.len() < samples {
        log::warn!("only {} of {samples} oracle samples found a partner point", out.len());
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub count: usize,
    pub max: f64,
    pub mean: f64,
    pub p95: f64,
}

impl ErrorStats {
    pub fn from_values(mut v: Vec<f64>) -> Self {
        if v.is_empty() {
            return Self::default();
        }
        v.sort_by(f64::total_cmp);
        let n = v.len();
        Self {
            count: n,
            max: v[n - 1],
            mean: v.iter().sum::<f64>() / n as f64,
            p95: v[((0.95 * n as f64).ceil() as usize).clamp(1, n) - 1],
        }
    }
}

pub fn scallop_stats(samples: &[ScallopSample]) -> ErrorStats {
    ErrorStats::from_values(samples.iter().map(|s| s.rel_error).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub count: usize,
    /// 1° bins over [0°, 90°].
    pub histogram: Vec<usize>,
    pub max_deg: f64,
    pub mean_deg: f64,
}

/// Angle between each path segment and the feed direction of its face.
pub fn alignment_report(paths: &[ToolPath], field: &DirectionField) -> AlignmentReport {
    let mut angles = Vec::new();
    for p in paths {
        for i in 0..p.n_segments() {
            let (a, b) = p.segment(i);
            let t = p.positions[b] - p.positions[a];
            let len = t.norm();
            if len == 0.0 {
                continue;
            }
            let d = field.dirs[p.points[a].face];
            angles.push((t.dot(&d).abs() / len).min(1.0).acos().to_degrees());
        }
    }
    let mut histogram = vec![0; 90];
    for &a in &angles {
        histogram[(a.floor() as usize).min(89)] += 1;
    }
    let count = angles.len();
    AlignmentReport {
        count,
        histogram,
        max_deg: angles.iter().copied().fold(0.0, f64::max),
        mean_deg: if count > 0 { angles.iter().sum::<f64>() / count as f64 } else { 0.0 },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetLength {
    pub name: String,
    pub paths: usize,
    pub total_length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub base: String,
    pub other: String,
    /// (other − base) / base in percent.
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthReport {
    pub sets: Vec<SetLength>,
    pub comparisons: Vec<Comparison>,
}

impl LengthReport {
    /// Plain-text table: one row per set, lengths and difference to the first set.
    pub fn to_table(&self) -> String {
        let mut out = format!("{:<24} {:>8} {:>14} {:>10}\n", "set", "paths", "length (mm)", "diff");
        for (i, s) in self.sets.iter().enumerate() {
            let diff = if i == 0 {
                "-".to_string()
            } else {
                self.comparisons
                    .iter()
                    .find(|c| c.base == self.sets[0].name && c.other == s.name)
                    .map_or("-".into(), |c| format!("{:+.2}%", c.percent))
            };
            out += &format!("{:<24} {:>8} {:>14.2} {:>10}\n", s.name, s.paths, s.total_length, diff);
        }
        out
    }
}

pub fn length_report(sets: &[(String, Vec<ToolPath>)]) -> LengthReport {
    let lens: Vec<SetLength> = sets
        .iter()
        .map(|(name, paths)| SetLength {
            name: name.clone(),
            paths: paths.len(),
            total_length: paths.iter().map(|p| p.length).sum(),
        })
        .collect();
    let mut comparisons = Vec::new();
    for i in 0..lens.len() {
        for j in i + 1..lens.len() {
            let base = lens[i].total_length;
            comparisons.push(Comparison {
                base: lens[i].name.clone(),
                other: lens[j].name.clone(),
                percent: if base > 0.0 { (lens[j].total_length - base) / base * 100.0 } else { 0.0 },
            });
        }
    }
    LengthReport { sets: lens, comparisons }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub samples: usize,
    pub fraction: f64,
    /// Σ strip width × segment length over surface area.
    pub strip_area_ratio: f64,
}

struct Strip {
    a: Vec3,
    b: Vec3,
    half_width: f64,
}

/// Fraction of uniformly sampled surface points lying within half a strip
/// width of some path segment.
#[allow(clippy::too_many_arguments)]
pub fn coverage_report(
    mesh: &TriMesh,
    paths: &[ToolPath],
    cutter: &CutterSpec,
    curv: &CurvatureField,
    h: f64,
    samples: usize,
    seed: u64,
) -> Result<CoverageReport> {
    let mut strips = Vec::new();
    let mut swept = 0.0;
    for p in paths {
        for i in 0..p.n_segments() {
            let (a, b) = p.segment(i);
            let (pa, pb) = (p.positions[a], p.positions[b]);
            let f = p.points[a].face;
            let n = mesh.face_normal(f);
            let t = pb - pa;
            let l = t.norm();
            if l == 0.0 {
                continue;
            }
            let t = (t - n * t.dot(&n)).normalize();
            let w = match strip_width(cutter, f, &t, curv, h) {
                Ok(w) => w,
                Err(Error::Gouge { .. }) => 0.0,
                Err(e) => return Err(e),
            };
            swept += w * l;
            strips.push(Strip {
                a: pa,
                b: pb,
                half_width: 0.5 * w,
            });
        }
    }
    let area = mesh.total_area();
    if strips.is_empty() || samples == 0 {
        return Ok(CoverageReport {
            samples,
            fraction: 0.0,
            strip_area_ratio: swept / area,
        });
    }

    let cell = strips.iter().map(|s| s.half_width).fold(0.0, f64::max).max(mesh.mean_edge_length());
    let key = |x: &Vec3| -> [i64; 3] { std::array::from_fn(|k| (x[k] / cell).floor() as i64) };
    let mut grid: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    for (i, s) in strips.iter().enumerate() {
        let lo = key(&s.a.zip_map(&s.b, f64::min).add_scalar(-s.half_width));
        let hi = key(&s.a.zip_map(&s.b, f64::max).add_scalar(s.half_width));
        for x in lo[0]..=hi[0] {
            for y in lo[1]..=hi[1] {
                for z in lo[2]..=hi[2] {
                    grid.entry([x, y, z]).or_default().push(i);
                }
            }
        }
    }

    let mut cumulative = Vec::with_capacity(mesh.n_faces());
    let mut acc = 0.0;
    for f in 0..mesh.n_faces() {
        acc += mesh.face_area(f);
        cumulative.push(acc);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<Vec3> = (0..samples)
        .map(|_| {
            let u = rng.random_range(0.0..acc);
            let f = cumulative.partition_point(|&c| c < u).min(mesh.n_faces() - 1);
            let (mut r1, mut r2): (f64, f64) = (rng.random(), rng.random());
            if r1 + r2 > 1.0 {
                r1 = 1.0 - r1;
                r2 = 1.0 - r2;
            }
            mesh.point_position(&SurfacePoint::new(f, [1.0 - r1 - r2, r1, r2]))
        })
        .collect();
    let hit = par::map_slice(&points, |x| {
        grid.get(&key(x)).is_some_and(|cands| {
            cands.iter().any(|&i| {
                let s = &strips[i];
                let ab = s.b - s.a;
                let u = ((x - s.a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
                (s.a + ab * u - x).norm() <= s.half_width * (1.0 + 1e-9)
            })
        })
    });
    Ok(CoverageReport {
        samples,
        fraction: hit.iter().filter(|&&b| b).count() as f64 / samples as f64,
        strip_area_ratio: swept / area,
    })
}
