use thiserror::Error;

use crate::solver::ScalarField;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("topology error: {0}")]
    Topology(String),

    #[error("degenerate tangent frame on face {0}")]
    DegenerateFrame(usize),

    #[error("direction is not tangent to face {face} (normal component {deviation:e})")]
    NotTangent { face: usize, deviation: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("degenerate triangle {0}")]
    DegenerateTriangle(usize),

    #[error("invalid cutter configuration: {0}")]
    InvalidConfig(String),

    #[error("gouge: effective cutter curvature does not exceed surface concavity on {} face(s), first {:?}", faces.len(), faces.first())]
    Gouge { faces: Vec<usize> },

    #[error("faces {0} and {1} do not share an edge")]
    NotAdjacent(usize, usize),

    #[error("no well-defined direction and no seed face to orient from")]
    NoSeed,

    #[error("similarity graph is disconnected beyond its mesh components")]
    DisconnectedGraph,

    #[error("eigen solve failed: {0}")]
    EigenSolve(String),

    #[error("invalid cluster count k={k} for {n} point(s)")]
    InvalidK { k: usize, n: usize },

    #[error("linear solve failed: {0}")]
    Solve(String),

    #[error("augmented Lagrangian did not reach tolerance (violation {violation:.3e})")]
    NoConvergence {
        best: Box<ScalarField>,
        violation: f64,
    },

    #[error("level {level} outside field range [{min}, {max}]")]
    OutOfRange { level: f64, min: f64, max: f64 },

    #[error("scalar field is (numerically) constant, range {0:e}")]
    DegenerateField(f64),

    #[error("cutting circles do not intersect: side-step {side_step} leaves an uncut gap")]
    NoIntersection { side_step: f64 },

    #[error("missing artifact {0}")]
    MissingArtifact(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
