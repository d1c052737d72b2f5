//! Patch segmentation of a direction field: similarity-weighted face graph,
//! 1D Laplacian eigenmap and k-means on the line.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, VecDeque};

use crate::feed_field::{transport_direction, DirectionField};
use crate::linalg::{smallest_generalized, BOperator, EigenOptions, SpdSolver, Triplets};
use crate::mesh::{TriMesh, Vec3};
use crate::{par, Error, Result};

pub const DEFAULT_SIGMA: f64 = 0.67;
/// Upper bound on the automatically chosen cluster count.
pub const MAX_AUTO_K: usize = 8;
/// Silhouette score a clustering must exceed to be accepted.
pub const SILHOUETTE_THRESHOLD: f64 = 0.6;
/// Label-components smaller than this fraction of faces are merged away.
pub const MIN_PATCH_FRACTION: f64 = 0.01;
/// Direction jump between adjacent faces regarded as abrupt.
pub const ABRUPT_ANGLE_DEG: f64 = 45.0;

/// exp(−(1 − d₁·d₂)² / (2σ²)).
pub fn similarity(d1: &Vec3, d2: &Vec3, sigma: f64) -> f64 {
    let t = 1.0 - d1.dot(d2);
    (-(t * t) / (2.0 * sigma * sigma)).exp()
}

/// Similarity of two directions `angle_deg` apart.
pub fn similarity_at_angle(angle_deg: f64, sigma: f64) -> f64 {
    let t = 1.0 - angle_deg.to_radians().cos();
    (-(t * t) / (2.0 * sigma * sigma)).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationResult {
    pub k: usize,
    pub sigma: f64,
    pub labels: Vec<usize>,
    pub embedding: Vec<f64>,
}

impl SegmentationResult {
    pub fn single(n_faces: usize, sigma: f64) -> Self {
        Self {
            k: 1,
            sigma,
            labels: vec![0; n_faces],
            embedding: vec![0.0; n_faces],
        }
    }

    pub fn patch_faces(&self, label: usize) -> Vec<usize> {
        (0..self.labels.len()).filter(|&f| self.labels[f] == label).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Interior-edge weights `(f, g, w)` comparing d_f transported into g with d_g.
pub fn edge_weights(mesh: &TriMesh, field: &DirectionField, sigma: f64) -> Result<Vec<(usize, usize, f64)>> {
    let interior: Vec<(usize, usize)> = mesh
        .edges()
        .iter()
        .filter_map(|e| match e.faces {
            [Some(f), Some(g)] => Some((f, g)),
            _ => None,
        })
        .collect();
    let w = par::map_slice(&interior, |&(f, g)| {
        transport_direction(mesh, f, g, &field.dirs[f]).map(|t| similarity(&t, &field.dirs[g], sigma))
    });
    interior
        .iter()
        .zip(w)
        .map(|(&(f, g), w)| w.map(|w| (f, g, w)))
        .collect()
}

/// Per-face coordinate from the generalized eigenvector of `L u = μ Deg u`
/// with the smallest μ > 0, computed separately on each mesh component.
pub fn eigenmap_embed(mesh: &TriMesh, field: &DirectionField, sigma: f64) -> Result<Vec<f64>> {
    let weights = edge_weights(mesh, field, sigma)?;
    let mut out = vec![0.0; mesh.n_faces()];
    for comp in face_components(mesh) {
        let coords = embed_component(&comp, &weights, mesh.n_faces())?;
        for (i, &f) in comp.iter().enumerate() {
            out[f] = coords[i];
        }
    }
    Ok(out)
}

fn face_components(mesh: &TriMesh) -> Vec<Vec<usize>> {
    let mut comps = vec![Vec::new(); mesh.n_components()];
    for f in 0..mesh.n_faces() {
        comps[mesh.face_component(f)].push(f);
    }
    comps
}

fn embed_component(faces: &[usize], weights: &[(usize, usize, f64)], n_faces: usize) -> Result<Vec<f64>> {
    let n = faces.len();
    if n < 2 {
        return Err(Error::EigenSolve("a single face has no non-constant embedding".into()));
    }
    let mut local = vec![usize::MAX; n_faces];
    for (i, &f) in faces.iter().enumerate() {
        local[f] = i;
    }
    let mut t = Triplets::new(n, n);
    let mut deg = vec![0.0; n];
    for &(f, g, w) in weights {
        let (i, j) = (local[f], local[g]);
        if i == usize::MAX {
            continue;
        }
        t.push(i, j, -w);
        t.push(j, i, -w);
        t.push(i, i, w);
        t.push(j, j, w);
        deg[i] += w;
        deg[j] += w;
    }
    if deg.iter().any(|&d| !(d > 0.0)) {
        return Err(Error::DisconnectedGraph);
    }
    let lap = t.into_csc();
    let solver = SpdSolver::new(&lap, &[0])?;
    let total: f64 = deg.iter().sum();
    let project = |x: &mut [f64]| {
        let c = x.iter().zip(&deg).map(|(x, d)| x * d).sum::<f64>() / total;
        x.iter_mut().for_each(|v| *v -= c);
    };
    // Deg-orthogonal inputs give compatible right-hand sides, so the pinned
    // factorization acts as an exact inverse on the complement of constants
    let shift_solve = |y: &[f64]| -> Result<Vec<f64>> {
        let mut x = solver.solve(y)?;
        project(&mut x);
        Ok(x)
    };
    let opts = EigenOptions {
        block: 6.min(n - 1).max(1),
        ..EigenOptions::default()
    };
    let pairs = smallest_generalized(&lap, &BOperator::Diagonal(&deg), &shift_solve, &project, 1, opts)?;
    if pairs.values[0] <= 1e-9 {
        return Err(Error::DisconnectedGraph);
    }
    let mut u = pairs.vectors.into_iter().next().expect("one eigenvector requested");
    let peak = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if let Some(first) = u.iter().find(|v| v.abs() > 1e-9 * peak) {
        if *first < 0.0 {
            u.iter_mut().for_each(|v| *v = -*v);
        }
    }
    Ok(u)
}

/// Lloyd iteration on the line, initialised at the k quantiles. Labels are
/// ordered by cluster centre.
pub fn kmeans_1d(points: &[f64], k: usize) -> Result<Vec<usize>> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(Error::InvalidK { k, n });
    }
    let mut sorted = points.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut centers: Vec<f64> = (0..k)
        .map(|j| sorted[(((j as f64 + 0.5) * n as f64 / k as f64) as usize).min(n - 1)])
        .collect();
    let mut labels = vec![usize::MAX; n];
    for _ in 0..1000 {
        let mut changed = false;
        for (i, &p) in points.iter().enumerate() {
            let best = (0..k)
                .min_by(|&a, &b| (p - centers[a]).abs().total_cmp(&(p - centers[b]).abs()))
                .expect("k ≥ 1");
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sum = vec![0.0; k];
        let mut count = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            sum[l] += points[i];
            count[l] += 1;
        }
        for j in 0..k {
            if count[j] > 0 {
                centers[j] = sum[j] / count[j] as f64;
            }
        }
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| centers[a].total_cmp(&centers[b]).then(a.cmp(&b)));
    let mut rank = vec![0; k];
    for (r, &c) in order.iter().enumerate() {
        rank[c] = r;
    }
    Ok(labels.into_iter().map(|l| rank[l]).collect())
}

/// Mean silhouette of a 1D clustering, O(n log n) via sorted prefix sums.
pub fn silhouette_1d(points: &[f64], labels: &[usize], k: usize) -> f64 {
    if k < 2 || points.is_empty() {
        return 0.0;
    }
    let mut clusters: Vec<Vec<f64>> = vec![Vec::new(); k];
    for (p, &l) in points.iter().zip(labels) {
        clusters[l].push(*p);
    }
    let prefix: Vec<Vec<f64>> = clusters
        .iter_mut()
        .map(|c| {
            c.sort_by(f64::total_cmp);
            std::iter::once(0.0)
                .chain(c.iter().scan(0.0, |s, x| {
                    *s += x;
                    Some(*s)
                }))
                .collect()
        })
        .collect();
    // Σ_y |x − y| over a cluster
    let dist_sum = |c: usize, x: f64| {
        let v = &clusters[c];
        let idx = v.partition_point(|&y| y < x);
        let below = x * idx as f64 - prefix[c][idx];
        let above = (prefix[c][v.len()] - prefix[c][idx]) - x * (v.len() - idx) as f64;
        below + above
    };
    let mut total = 0.0;
    for (p, &l) in points.iter().zip(labels) {
        let own = clusters[l].len();
        if own <= 1 {
            continue;
        }
        let a = dist_sum(l, *p) / (own - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != l && !clusters[c].is_empty())
            .map(|c| dist_sum(c, *p) / clusters[c].len() as f64)
            .fold(f64::INFINITY, f64::min);
        if !b.is_finite() {
            continue;
        }
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    total / points.len() as f64
}

/// Embed, cluster and clean up into edge-connected patches.
///
/// With `k = None` the count is chosen automatically: a field without any
/// abrupt jump between adjacent faces stays one patch, otherwise the smallest
/// k ≤ 8 whose silhouette exceeds 0.6 is used. Faces joined by smooth edges
/// form coherent regions, and clustering runs on the area-weighted mean
/// coordinate of each face's region so that no region is cut. Label-components
/// under 1% of the faces are merged into the neighbour sharing most edges.
pub fn segment(mesh: &TriMesh, field: &DirectionField, sigma: f64, k: Option<usize>) -> Result<SegmentationResult> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidParam(format!("σ = {sigma} must be positive")));
    }
    let nf = mesh.n_faces();
    let weights = edge_weights(mesh, field, sigma)?;
    let tau = similarity_at_angle(ABRUPT_ANGLE_DEG, sigma);
    let abrupt = weights.iter().any(|&(_, _, w)| w < tau);
    if k == Some(1) || (k.is_none() && !abrupt) || nf < 2 {
        return Ok(SegmentationResult::single(nf, sigma));
    }
    let region = coherent_regions(nf, &weights, tau);

    let mut labels = vec![0usize; nf];
    let mut embedding = vec![0.0; nf];
    let mut next_label = 0;
    for comp in face_components(mesh) {
        if comp.len() < 2 {
            for &f in &comp {
                labels[f] = next_label;
            }
            next_label += 1;
            continue;
        }
        let coords = embed_component(&comp, &weights, nf)?;
        let mut sum: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
        for (i, &f) in comp.iter().enumerate() {
            let e = sum.entry(region[f]).or_default();
            e.0 += mesh.face_area(f) * coords[i];
            e.1 += mesh.face_area(f);
        }
        let pooled: Vec<f64> = comp
            .iter()
            .map(|&f| {
                let (s, a) = sum[&region[f]];
                s / a
            })
            .collect();
        let chosen = match k {
            Some(k) => k.min(comp.len()),
            None => choose_k(&pooled)?,
        };
        let local = kmeans_1d(&pooled, chosen)?;
        for (i, &f) in comp.iter().enumerate() {
            embedding[f] = coords[i];
            labels[f] = next_label + local[i];
        }
        next_label += chosen;
    }

    repair_connectivity(mesh, &mut labels);
    let k = labels.iter().max().map_or(0, |m| m + 1);
    Ok(SegmentationResult {
        k,
        sigma,
        labels,
        embedding,
    })
}

fn choose_k(coords: &[f64]) -> Result<usize> {
    for k in 2..=MAX_AUTO_K.min(coords.len()) {
        let labels = kmeans_1d(coords, k)?;
        if silhouette_1d(coords, &labels, k) > SILHOUETTE_THRESHOLD {
            return Ok(k);
        }
    }
    Ok(1)
}

/// Region index per face, regions being joined by edges with weight ≥ `tau`.
fn coherent_regions(nf: usize, weights: &[(usize, usize, f64)], tau: f64) -> Vec<usize> {
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); nf];
    for &(f, g, w) in weights {
        if w >= tau {
            adj[f].push(g);
            adj[g].push(f);
        }
    }
    let mut region = vec![0; nf];
    for (r, group) in flood(nf, |f| adj[f].clone()).iter().enumerate() {
        for &f in group {
            region[f] = r;
        }
    }
    region
}

/// Connected groups of faces under the given adjacency, in first-face order.
fn flood(n: usize, neighbors: impl Fn(usize) -> Vec<usize>) -> Vec<Vec<usize>> {
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    for s in 0..n {
        if seen[s] {
            continue;
        }
        seen[s] = true;
        let mut group = vec![s];
        let mut queue = VecDeque::from([s]);
        while let Some(f) = queue.pop_front() {
            for g in neighbors(f) {
                if !seen[g] {
                    seen[g] = true;
                    group.push(g);
                    queue.push_back(g);
                }
            }
        }
        group.sort_unstable();
        out.push(group);
    }
    out
}

fn label_components(mesh: &TriMesh, labels: &[usize]) -> Vec<Vec<usize>> {
    flood(mesh.n_faces(), |f| {
        mesh.face_neighbors(f)
            .into_iter()
            .flatten()
            .filter(|&g| labels[g] == labels[f])
            .collect()
    })
}

/// Merge tiny label-components, split disconnected labels and renumber
/// patches 0..k−1 in order of their first face.
pub fn repair_connectivity(mesh: &TriMesh, labels: &mut [usize]) {
    let nf = mesh.n_faces();
    let min_size = ((MIN_PATCH_FRACTION * nf as f64).ceil() as usize).max(1);
    loop {
        let comps = label_components(mesh, labels);
        let small = comps
            .iter()
            .filter(|c| c.len() < min_size)
            .min_by_key(|c| (c.len(), c[0]));
        let Some(small) = small else { break };
        let mut shared: BTreeMap<usize, usize> = BTreeMap::new();
        for &f in small {
            for g in mesh.face_neighbors(f).into_iter().flatten() {
                if labels[g] != labels[f] {
                    *shared.entry(labels[g]).or_default() += 1;
                }
            }
        }
        let Some((&target, _)) = shared.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))) else {
            // a whole mesh component; nothing to merge into
            break;
        };
        for &f in small {
            labels[f] = target;
        }
    }
    let comps = label_components(mesh, labels);
    for (new, comp) in comps.iter().enumerate() {
        for &f in comp {
            labels[f] = new;
        }
    }
}
