//! File exports: JSON documents, legacy ASCII VTK, SVG plots and CSV.

use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

use crate::mesh::{TriMesh, Vec3};
use crate::oracle::ScallopSample;
use crate::paths::{total_length, LevelSchedule, ToolPath};
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathsDocument {
    pub total_length: f64,
    /// One schedule per patch, indexed by patch label.
    #[serde(default)]
    pub schedules: Vec<LevelSchedule>,
    pub paths: Vec<ToolPath>,
}

impl PathsDocument {
    pub fn new(paths: Vec<ToolPath>, schedules: Vec<LevelSchedule>) -> Self {
        Self {
            total_length: total_length(&paths),
            schedules,
            paths,
        }
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)?)
}

/// Mesh with an optional per-vertex scalar and per-face vectors.
pub fn mesh_vtk(mesh: &TriMesh, point_scalar: Option<(&str, &[f64])>, cell_vectors: Option<(&str, &[Vec3])>) -> String {
    let mut s = String::from("# vtk DataFile Version 3.0\npoissonpath\nASCII\nDATASET POLYDATA\n");
    let _ = writeln!(s, "POINTS {} double", mesh.n_vertices());
    for p in mesh.vertices() {
        let _ = writeln!(s, "{} {} {}", p.x, p.y, p.z);
    }
    let _ = writeln!(s, "POLYGONS {} {}", mesh.n_faces(), 4 * mesh.n_faces());
    for f in mesh.faces() {
        let _ = writeln!(s, "3 {} {} {}", f[0], f[1], f[2]);
    }
    if let Some((name, values)) = point_scalar {
        let _ = writeln!(s, "POINT_DATA {}\nSCALARS {name} double 1\nLOOKUP_TABLE default", values.len());
        for v in values {
            let _ = writeln!(s, "{v}");
        }
    }
    if let Some((name, vectors)) = cell_vectors {
        let _ = writeln!(s, "CELL_DATA {}\nVECTORS {name} double", vectors.len());
        for v in vectors {
            let _ = writeln!(s, "{} {} {}", v.x, v.y, v.z);
        }
    }
    s
}

/// Paths as VTK lines with the level and patch label per line.
pub fn paths_vtk(paths: &[ToolPath]) -> String {
    let n_points: usize = paths.iter().map(|p| p.positions.len()).sum();
    let mut s = String::from("# vtk DataFile Version 3.0\npoissonpath paths\nASCII\nDATASET POLYDATA\n");
    let _ = writeln!(s, "POINTS {n_points} double");
    for p in paths {
        for x in &p.positions {
            let _ = writeln!(s, "{} {} {}", x.x, x.y, x.z);
        }
    }
    let sizes: Vec<usize> = paths
        .iter()
        .map(|p| p.positions.len() + usize::from(p.closed && p.positions.len() > 2))
        .collect();
    let _ = writeln!(s, "LINES {} {}", paths.len(), sizes.iter().map(|n| n + 1).sum::<usize>());
    let mut base = 0;
    for (p, &n) in paths.iter().zip(&sizes) {
        let _ = write!(s, "{n}");
        for i in 0..n {
            let _ = write!(s, " {}", base + i % p.positions.len());
        }
        s.push('\n');
        base += p.positions.len();
    }
    let _ = writeln!(s, "CELL_DATA {}\nSCALARS level double 1\nLOOKUP_TABLE default", paths.len());
    for p in paths {
        let _ = writeln!(s, "{}", p.level);
    }
    let _ = writeln!(s, "SCALARS patch int 1\nLOOKUP_TABLE default");
    for p in paths {
        let _ = writeln!(s, "{}", p.patch);
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ViewAxis {
    X,
    Y,
    #[default]
    Z,
}

impl ViewAxis {
    fn project(self, p: &Vec3) -> (f64, f64) {
        match self {
            ViewAxis::X => (p.y, p.z),
            ViewAxis::Y => (p.x, p.z),
            ViewAxis::Z => (p.x, p.y),
        }
    }
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2",
];

/// Orthographic projection of the paths looking down `axis`, coloured by patch.
pub fn paths_svg(paths: &[ToolPath], axis: ViewAxis) -> String {
    let pts: Vec<(f64, f64)> = paths.iter().flat_map(|p| p.positions.iter().map(|x| axis.project(x))).collect();
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &pts {
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    if pts.is_empty() {
        (x0, y0, x1, y1) = (0.0, 0.0, 1.0, 1.0);
    }
    let size = 800.0;
    let span = (x1 - x0).max(y1 - y0).max(1e-12);
    let scale = (size - 40.0) / span;
    let map = |(x, y): (f64, f64)| (20.0 + (x - x0) * scale, size - 20.0 - (y - y0) * scale);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size}\" height=\"{size}\" viewBox=\"0 0 {size} {size}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    );
    for p in paths {
        let pts: Vec<String> = p
            .positions
            .iter()
            .map(|x| {
                let (u, v) = map(axis.project(x));
                format!("{u:.3},{v:.3}")
            })
            .collect();
        let tag = if p.closed { "polygon" } else { "polyline" };
        let _ = writeln!(
            s,
            "<{tag} points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1\"/>",
            pts.join(" "),
            PALETTE[p.patch % PALETTE.len()]
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Bar chart of a histogram.
pub fn histogram_svg(title: &str, bins: &[usize], bin_label: &str) -> String {
    let (w, h) = (720.0, 360.0);
    let top = bins.iter().copied().max().unwrap_or(0).max(1) as f64;
    let bar = (w - 60.0) / bins.len().max(1) as f64;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n<text x=\"{}\" y=\"20\" font-size=\"14\" text-anchor=\"middle\">{title}</text>\n",
        w / 2.0
    );
    for (i, &c) in bins.iter().enumerate() {
        let bh = c as f64 / top * (h - 80.0);
        let _ = writeln!(
            s,
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{bh:.2}\" fill=\"#1f77b4\"/>",
            40.0 + i as f64 * bar,
            h - 40.0 - bh,
            bar * 0.9
        );
    }
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">{bin_label}</text>\n</svg>",
        w / 2.0,
        h - 10.0
    );
    s
}

pub fn scallop_csv(samples: &[ScallopSample]) -> String {
    let mut s = String::from("face1,face2,r1,r2,k_s,side_step,h_exact,h_model,rel_error\n");
    for x in samples {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            x.p1.face, x.p2.face, x.r1, x.r2, x.k_s, x.side_step, x.h_exact, x.h_model, x.rel_error
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paths::extract_iso_curve;
    use crate::surfaces::{analytic_test_surface, TestSurface};

    #[test]
    fn vtk_counts() {
        let (m, _) = analytic_test_surface(&TestSurface::plane(1.0, 1.0), 3).unwrap();
        let phi: Vec<f64> = m.vertices().iter().map(|p| p.x).collect();
        let v = mesh_vtk(&m, Some(("phi", &phi)), None);
        assert!(v.contains(&format!("POINTS {} double", m.n_vertices())));
        assert!(v.contains(&format!("POLYGONS {} {}", m.n_faces(), 4 * m.n_faces())));
        let paths = extract_iso_curve(&m, &phi, 0.5).unwrap();
        let p = paths_vtk(&paths);
        assert!(p.contains(&format!("LINES 1 {}", paths[0].positions.len() + 1)));
    }

    #[test]
    fn svg_is_well_formed_when_empty() {
        let s = paths_svg(&[], ViewAxis::Z);
        assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
        assert!(histogram_svg("t", &[], "deg").contains("</svg>"));
    }
}
