//! OBJ and STL mesh input.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;

use crate::mesh::{TriMesh, Vec3};
use crate::{Error, Result};

/// STL vertices closer than this (mm) are merged.
pub const WELD_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeshFormat {
    Obj,
    Stl,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "obj" => Some(MeshFormat::Obj),
            "stl" => Some(MeshFormat::Stl),
            _ => None,
        }
    }
}

pub fn load_mesh(path: impl AsRef<Path>, format: MeshFormat) -> Result<TriMesh> {
    let bytes = std::fs::read(path.as_ref())?;
    match format {
        MeshFormat::Obj => {
            let text = std::str::from_utf8(&bytes).map_err(|e| Error::Parse {
                line: 0,
                msg: e.to_string(),
            })?;
            parse_obj(text)
        }
        MeshFormat::Stl => parse_stl(&bytes),
    }
}

pub fn parse_obj(text: &str) -> Result<TriMesh> {
    let mut verts = Vec::new();
    let mut faces = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let line = line.split('#').next().unwrap_or("");
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("v") => {
                let c: Vec<f64> = tok
                    .take(3)
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::Parse {
                        line: line_no,
                        msg: e.to_string(),
                    })?;
                if c.len() != 3 {
                    return Err(Error::Parse {
                        line: line_no,
                        msg: "vertex needs three coordinates".into(),
                    });
                }
                verts.push(Vec3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let mut idx = Vec::new();
                for t in tok {
                    let first = t.split('/').next().unwrap_or("");
                    let i: i64 = first.parse().map_err(|_| Error::Parse {
                        line: line_no,
                        msg: format!("bad face index {t:?}"),
                    })?;
                    let n = verts.len() as i64;
                    let resolved = if i > 0 { i - 1 } else { n + i };
                    if i == 0 || resolved < 0 || resolved >= n {
                        return Err(Error::Parse {
                            line: line_no,
                            msg: format!("face index {i} out of range"),
                        });
                    }
                    idx.push(resolved as usize);
                }
                if idx.len() < 3 {
                    return Err(Error::Parse {
                        line: line_no,
                        msg: "face needs at least three vertices".into(),
                    });
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    if faces.is_empty() {
        return Err(Error::Parse {
            line: 0,
            msg: "no faces".into(),
        });
    }
    build_compacted(verts, faces)
}

/// Drop vertices that no face references.
fn build_compacted(verts: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<TriMesh> {
    let mut remap = vec![usize::MAX; verts.len()];
    let mut kept = Vec::new();
    let faces = faces
        .into_iter()
        .map(|f| {
            f.map(|v| {
                if remap[v] == usize::MAX {
                    remap[v] = kept.len();
                    kept.push(verts[v]);
                }
                remap[v]
            })
        })
        .collect();
    TriMesh::new(kept, faces)
}

pub fn parse_stl(bytes: &[u8]) -> Result<TriMesh> {
    let tris = if is_binary_stl(bytes) {
        binary_stl(bytes)?
    } else {
        ascii_stl(bytes)?
    };
    if tris.is_empty() {
        return Err(Error::Parse {
            line: 0,
            msg: "no facets".into(),
        });
    }
    let mut welder = Welder::default();
    let faces: Vec<[usize; 3]> = tris.iter().map(|t| t.map(|p| welder.insert(p))).collect();
    TriMesh::new(welder.points, faces)
}

fn is_binary_stl(bytes: &[u8]) -> bool {
    if bytes.len() < 84 {
        return false;
    }
    let n = u32::from_le_bytes([bytes[80], bytes[81], bytes[82], bytes[83]]) as usize;
    bytes.len() == 84 + 50 * n
}

fn binary_stl(bytes: &[u8]) -> Result<Vec<[Vec3; 3]>> {
    let n = u32::from_le_bytes([bytes[80], bytes[81], bytes[82], bytes[83]]) as usize;
    let f = |o: usize| f32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as f64;
    Ok((0..n)
        .map(|t| {
            let base = 84 + 50 * t + 12;
            std::array::from_fn(|k| {
                let o = base + 12 * k;
                Vec3::new(f(o), f(o + 4), f(o + 8))
            })
        })
        .collect())
}

fn ascii_stl(bytes: &[u8]) -> Result<Vec<[Vec3; 3]>> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Parse {
        line: 0,
        msg: e.to_string(),
    })?;
    let mut tris = Vec::new();
    let mut cur = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("vertex") => {
                let c: Vec<f64> = tok.map(str::parse).collect::<std::result::Result<_, _>>().map_err(
                    |e: std::num::ParseFloatError| Error::Parse {
                        line: lineno + 1,
                        msg: e.to_string(),
                    },
                )?;
                if c.len() != 3 {
                    return Err(Error::Parse {
                        line: lineno + 1,
                        msg: "vertex needs three coordinates".into(),
                    });
                }
                cur.push(Vec3::new(c[0], c[1], c[2]));
            }
            Some("endloop") => {
                if cur.len() != 3 {
                    return Err(Error::Parse {
                        line: lineno + 1,
                        msg: format!("facet with {} vertices", cur.len()),
                    });
                }
                tris.push([cur[0], cur[1], cur[2]]);
                cur.clear();
            }
            _ => {}
        }
    }
    Ok(tris)
}

#[derive(Default)]
struct Welder {
    points: Vec<Vec3>,
    grid: HashMap<[i64; 3], Vec<usize>>,
}

impl Welder {
    fn cell(p: &Vec3) -> [i64; 3] {
        [0, 1, 2].map(|k| (p[k] / WELD_TOLERANCE).floor() as i64)
    }

    fn insert(&mut self, p: Vec3) -> usize {
        let c = Self::cell(&p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(ids) = self.grid.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                        if let Some(&i) = ids.iter().find(|&&i| (self.points[i] - p).norm() <= WELD_TOLERANCE) {
                            return i;
                        }
                    }
                }
            }
        }
        let i = self.points.len();
        self.points.push(p);
        self.grid.entry(c).or_default().push(i);
        i
    }
}
