//! Job configuration and the staged pipeline.
//!
//! Every stage reads its inputs from, and writes its artifacts to, the
//! job's output directory, so a full run is exactly the chain of single
//! stages: `field → segment → solve → extract → analyze`.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use crate::curvature::{estimate_curvature, CurvatureField, CurvatureSource};
use crate::diff_ops::FaceVectorField;
use crate::export::{self, PathsDocument, ViewAxis};
use crate::feed_field::{orient, preferred_directions, smooth_directions, CutterSpec, DirectionField};
use crate::io::{load_mesh, MeshFormat};
use crate::mesh::TriMesh;
use crate::oracle::{
    alignment_report, coverage_report, length_report, scallop_stats, scallop_over_pairs, AlignmentReport,
    CoverageReport, ErrorStats, LengthReport, ScallopSample,
};
use crate::paths::{extract_all, schedule_levels, split_patches, LevelSchedule, Patch, ToolPath};
use crate::segmentation::{segment, SegmentationResult, DEFAULT_SIGMA};
use crate::solver::{
    build_target_field, energy_report, solve_direction_only, solve_isoscallop_hard, solve_poisson, solve_smooth,
    AlmReport, EnergyReport, SolveVariant, TargetVectorField,
};
use crate::surfaces::{analytic_test_surface, TestSurface};
use crate::{Error, Result};

pub const FIELD_JSON: &str = "field.json";
pub const TARGET_JSON: &str = "target.json";
pub const SEGMENTATION_JSON: &str = "segmentation.json";
pub const PHI_JSON: &str = "phi.json";
pub const PATHS_JSON: &str = "paths.json";
pub const REPORT_JSON: &str = "report.json";
pub const MANIFEST_JSON: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceConfig {
    #[serde(flatten)]
    pub surface: TestSurface,
    pub resolution: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentationMode {
    Auto,
    Off,
}

/// `"auto"`, `"off"` or a fixed cluster count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Segmentation {
    Mode(SegmentationMode),
    Fixed(usize),
}

impl Default for Segmentation {
    fn default() -> Self {
        Segmentation::Mode(SegmentationMode::Off)
    }
}

impl FromStr for Segmentation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(Segmentation::Mode(SegmentationMode::Auto)),
            "off" => Ok(Segmentation::Mode(SegmentationMode::Off)),
            k => k
                .parse()
                .map(Segmentation::Fixed)
                .map_err(|_| Error::Config(format!("segmentation must be auto, off or a count, got {k:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothingConfig {
    pub iterations: usize,
    pub step: f64,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self {
            iterations: 5,
            step: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlmConfig {
    pub max_outer: usize,
    pub tol: f64,
}

impl Default for AlmConfig {
    fn default() -> Self {
        Self { max_outer: 30, tol: 1e-3 }
    }
}

fn default_sigma() -> f64 {
    DEFAULT_SIGMA
}

fn default_samples() -> usize {
    crate::paths::DEFAULT_SAMPLES
}

fn default_seed() -> u64 {
    crate::oracle::DEFAULT_SEED
}

fn default_oracle_samples() -> usize {
    500
}

fn default_coverage_samples() -> usize {
    crate::oracle::DEFAULT_COVERAGE_SAMPLES
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobConfig {
    /// OBJ or STL file; exclusive with `surface`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mesh: Option<PathBuf>,
    /// Built-in analytic surface; exclusive with `mesh`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub surface: Option<SurfaceConfig>,
    pub cutter: CutterSpec,
    /// Scallop height in mm.
    pub h: f64,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default)]
    pub variant: SolveVariant,
    #[serde(default)]
    pub segmentation: Segmentation,
    /// Path samples per level when scheduling.
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    /// Defaults to analytic for built-in surfaces, estimated otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curvature: Option<CurvatureSource>,
    #[serde(default)]
    pub smoothing: SmoothingConfig,
    /// Imported direction field instead of preferred directions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub directions: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<usize>>,
    #[serde(default)]
    pub alm: AlmConfig,
    #[serde(default = "default_oracle_samples")]
    pub oracle_samples: usize,
    #[serde(default = "default_coverage_samples")]
    pub coverage_samples: usize,
    #[serde(default)]
    pub view: ViewAxis,
}

impl JobConfig {
    /// Parse a JSON config; relative mesh and direction paths are taken
    /// relative to the config file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        if let Some(dir) = path.parent() {
            for p in [cfg.mesh.as_mut(), cfg.directions.as_mut()].into_iter().flatten() {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        match (&self.mesh, &self.surface) {
            (Some(_), Some(_)) => return bad("give either `mesh` or `surface`, not both".into()),
            (None, None) => return bad("one of `mesh` or `surface` is required".into()),
            _ => {}
        }
        if let Some(s) = &self.surface {
            if s.resolution < 2 {
                return bad(format!("surface resolution {} < 2", s.resolution));
            }
        }
        if self.mesh.is_some() && self.curvature == Some(CurvatureSource::Analytic) {
            return bad("analytic curvature needs a built-in surface".into());
        }
        if !(self.h > 0.0 && self.h.is_finite()) {
            return bad(format!("scallop height h = {} must be positive", self.h));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma = {} must be positive", self.sigma));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda = {} must be non-negative", self.lambda));
        }
        if self.variant == SolveVariant::Smooth && self.lambda == 0.0 {
            log::warn!("smooth variant with lambda = 0 is the plain Poisson solve");
        }
        if self.samples < crate::paths::MIN_SAMPLES {
            return bad(format!("samples = {} must be at least {}", self.samples, crate::paths::MIN_SAMPLES));
        }
        if self.segmentation == Segmentation::Fixed(0) {
            return bad("segmentation count must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.smoothing.step) {
            return bad(format!("smoothing step {} outside [0, 1]", self.smoothing.step));
        }
        if self.variant == SolveVariant::IsoscallopHard && !(self.alm.tol > 0.0 && self.alm.max_outer > 0) {
            return bad("isoscallop_hard needs alm.max_outer > 0 and alm.tol > 0".into());
        }
        self.cutter.validate().map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(serde_json::to_vec(self)?);
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Field,
    Segment,
    Solve,
    Extract,
    Analyze,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Field, Stage::Segment, Stage::Solve, Stage::Extract, Stage::Analyze];
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Field => "field",
            Stage::Segment => "segment",
            Stage::Solve => "solve",
            Stage::Extract => "extract",
            Stage::Analyze => "analyze",
        })
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.to_string() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage {s:?}")))
    }
}

/// Exit status for an error: 2 for configuration and missing inputs, 3 for
/// failures during computation.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::MissingArtifact(_) => 2,
        _ => 3,
    }
}

/// Mesh and curvature as used by every stage.
pub struct Geometry {
    pub mesh: TriMesh,
    /// Curvature driving directions, magnitudes and scheduling.
    pub curvature: CurvatureField,
    /// Curvature the oracle treats as ground truth.
    pub reference: CurvatureField,
}

pub fn load_geometry(cfg: &JobConfig) -> Result<Geometry> {
    let (mesh, analytic) = match (&cfg.mesh, &cfg.surface) {
        (Some(path), _) => {
            let format = MeshFormat::from_path(path)
                .ok_or_else(|| Error::Config(format!("unknown mesh format: {}", path.display())))?;
            (load_mesh(path, format)?, None)
        }
        (None, Some(s)) => {
            let (m, c) = analytic_test_surface(&s.surface, s.resolution)?;
            (m, Some(c))
        }
        (None, None) => return Err(Error::Config("no mesh or surface given".into())),
    };
    let source = cfg.curvature.unwrap_or(if analytic.is_some() {
        CurvatureSource::Analytic
    } else {
        CurvatureSource::Estimated
    });
    let curvature = match (source, &analytic) {
        (CurvatureSource::Analytic, Some(c)) => c.clone(),
        (CurvatureSource::Analytic, None) => return Err(Error::Config("analytic curvature needs a built-in surface".into())),
        (CurvatureSource::Estimated, _) => estimate_curvature(&mesh)?,
    };
    let reference = analytic.unwrap_or_else(|| curvature.clone());
    Ok(Geometry {
        mesh,
        curvature,
        reference,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchField {
    pub label: usize,
    /// Parent vertex of each value.
    pub vertices: Vec<usize>,
    pub values: Vec<f64>,
    pub energy: EnergyReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alm: Option<AlmReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhiDocument {
    pub variant: SolveVariant,
    pub patches: Vec<PatchField>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScallopSummary {
    /// What the oracle compares against.
    pub reference: String,
    pub level_pairs: usize,
    pub stats: ErrorStats,
    pub max_h_exact: f64,
    /// 0.5% bins of the relative error, the last bin collecting the rest.
    pub histogram: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub total_length: f64,
    pub path_lengths: Vec<f64>,
    pub patches: usize,
    pub alignment: AlignmentReport,
    pub scallop: ScallopSummary,
    pub coverage: CoverageReport,
    pub lengths: LengthReport,
    pub energies: Vec<EnergyReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub wall_ms: f64,
    pub artifacts: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config_sha256: String,
    pub created_unix: u64,
    pub parallel: bool,
    pub stages: Vec<StageRecord>,
}

/// Extra path sets for the length comparison in `analyze`.
#[derive(Debug, Clone, Default)]
pub struct AnalyzeOptions {
    pub compare: Vec<(String, PathBuf)>,
}

fn write(dir: &Path, name: &str, content: &str) -> Result<String> {
    let path = dir.join(name);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(&path, content)?;
    Ok(name.to_string())
}

fn read_artifact<T: for<'de> Deserialize<'de>>(dir: &Path, name: &str) -> Result<T> {
    let path = dir.join(name);
    let text = fs::read_to_string(&path).map_err(|_| Error::MissingArtifact(path.display().to_string()))?;
    Ok(serde_json::from_str(&text)?)
}

fn read_field(dir: &Path, mesh: &TriMesh) -> Result<DirectionField> {
    let path = dir.join(FIELD_JSON);
    let text = fs::read_to_string(&path).map_err(|_| Error::MissingArtifact(path.display().to_string()))?;
    DirectionField::from_json(mesh, &text)
}

/// Run one stage and record it in the manifest.
pub fn run_stage(cfg: &JobConfig, stage: Stage, opts: &AnalyzeOptions) -> Result<Vec<String>> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.output)?;
    let start = Instant::now();
    let result = load_geometry(cfg).and_then(|geo| match stage {
        Stage::Field => stage_field(cfg, &geo),
        Stage::Segment => stage_segment(cfg, &geo),
        Stage::Solve => stage_solve(cfg, &geo),
        Stage::Extract => stage_extract(cfg, &geo),
        Stage::Analyze => stage_analyze(cfg, &geo, opts),
    });
    let record = StageRecord {
        stage: stage.to_string(),
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
        artifacts: result.as_ref().map(Clone::clone).unwrap_or_default(),
        error: result.as_ref().err().map(ToString::to_string),
    };
    log::info!("stage {stage}: {:.1} ms", record.wall_ms);
    append_manifest(cfg, record)?;
    result
}

/// Full pipeline; stops at the first failing stage, keeping earlier artifacts.
pub fn run(cfg: &JobConfig, opts: &AnalyzeOptions) -> Result<()> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.output)?;
    let _ = fs::remove_file(cfg.output.join(MANIFEST_JSON));
    for stage in Stage::ALL {
        run_stage(cfg, stage, opts)?;
    }
    Ok(())
}

fn append_manifest(cfg: &JobConfig, record: StageRecord) -> Result<()> {
    let mut manifest = read_artifact::<Manifest>(&cfg.output, MANIFEST_JSON)
        .ok()
        .filter(|m| m.config_sha256 == cfg.hash().unwrap_or_default())
        .unwrap_or(Manifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_sha256: cfg.hash()?,
            created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            parallel: crate::par::is_parallel(),
            stages: Vec::new(),
        });
    manifest.stages.push(record);
    write(&cfg.output, MANIFEST_JSON, &export::to_json(&manifest)?)?;
    Ok(())
}

fn stage_field(cfg: &JobConfig, geo: &Geometry) -> Result<Vec<String>> {
    let mesh = &geo.mesh;
    let raw = match &cfg.directions {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|_| Error::MissingArtifact(path.display().to_string()))?;
            DirectionField::from_json(mesh, &text)?
        }
        None => preferred_directions(mesh, &geo.curvature, &cfg.cutter, cfg.h)?,
    };
    let oriented = orient(&raw, mesh, cfg.seeds.as_deref())?;
    let field = smooth_directions(&oriented, mesh, cfg.smoothing.iterations, cfg.smoothing.step);
    let dir = &cfg.output;
    let mut out = vec![write(dir, FIELD_JSON, &field.to_json()?)?];
    out.push(write(
        dir,
        "field.vtk",
        &export::mesh_vtk(mesh, None, Some(("direction", &field.dirs))),
    )?);
    let target = build_target_field(mesh, &geo.curvature, &cfg.cutter, &field)?;
    out.push(write(dir, TARGET_JSON, &export::to_json(&target)?)?);
    Ok(out)
}

fn stage_segment(cfg: &JobConfig, geo: &Geometry) -> Result<Vec<String>> {
    let field = read_field(&cfg.output, &geo.mesh)?;
    let seg = match cfg.segmentation {
        Segmentation::Mode(SegmentationMode::Off) => SegmentationResult::single(geo.mesh.n_faces(), cfg.sigma),
        Segmentation::Mode(SegmentationMode::Auto) => segment(&geo.mesh, &field, cfg.sigma, None)?,
        Segmentation::Fixed(k) => segment(&geo.mesh, &field, cfg.sigma, Some(k))?,
    };
    log::info!("{} patch(es)", seg.k);
    Ok(vec![write(&cfg.output, SEGMENTATION_JSON, &seg.to_json()?)?])
}

fn restrict_field(field: &DirectionField, faces: &[usize]) -> DirectionField {
    DirectionField {
        dirs: faces.iter().map(|&f| field.dirs[f]).collect(),
        flags: faces.iter().map(|&f| field.flags[f]).collect(),
    }
}

fn restrict_target(t: &TargetVectorField, faces: &[usize]) -> TargetVectorField {
    TargetVectorField {
        field: FaceVectorField {
            vectors: faces.iter().map(|&f| t.field.vectors[f]).collect(),
        },
        magnitudes: faces.iter().map(|&f| t.magnitudes[f]).collect(),
    }
}

fn load_patches(cfg: &JobConfig, mesh: &TriMesh) -> Result<Vec<Patch>> {
    let seg: SegmentationResult = read_artifact(&cfg.output, SEGMENTATION_JSON)?;
    if seg.labels.len() != mesh.n_faces() {
        return Err(Error::Config(format!(
            "segmentation has {} labels but the mesh has {} faces",
            seg.labels.len(),
            mesh.n_faces()
        )));
    }
    split_patches(mesh, Some(&seg))
}

/// Solve on one patch with the configured variant.
pub fn solve_patch(
    cfg: &JobConfig,
    patch: &Patch,
    curv: &CurvatureField,
    field: &DirectionField,
    target: &TargetVectorField,
) -> Result<PatchField> {
    let m = &patch.mesh;
    let (phi, mu, alm) = match cfg.variant {
        SolveVariant::Poisson => (solve_poisson(m, &target.field)?, None, None),
        SolveVariant::Smooth => (solve_smooth(m, &target.field, cfg.lambda)?, None, None),
        SolveVariant::DirectionOnly => {
            let r = solve_direction_only(m, field)?;
            (r.phi, Some(r.mu), None)
        }
        SolveVariant::IsoscallopHard => {
            match solve_isoscallop_hard(m, field, curv, &cfg.cutter, cfg.alm.max_outer, cfg.alm.tol) {
                Ok((phi, report)) => (phi, None, Some(report)),
                Err(Error::NoConvergence { best, violation }) => {
                    log::warn!("patch {}: constraint violation {violation:.3e} above tolerance, keeping best iterate", patch.label);
                    (*best, None, None)
                }
                Err(e) => return Err(e),
            }
        }
    };
    Ok(PatchField {
        label: patch.label,
        vertices: patch.vertex_map.clone(),
        energy: energy_report(m, &phi.values, target, field),
        values: phi.values,
        mu,
        alm,
    })
}

fn stage_solve(cfg: &JobConfig, geo: &Geometry) -> Result<Vec<String>> {
    let field = read_field(&cfg.output, &geo.mesh)?;
    let target: TargetVectorField = read_artifact(&cfg.output, TARGET_JSON)?;
    if target.magnitudes.len() != geo.mesh.n_faces() {
        return Err(Error::Config("target field does not match the mesh".into()));
    }
    let patches = load_patches(cfg, &geo.mesh)?;
    let mut fields = Vec::with_capacity(patches.len());
    for p in &patches {
        let curv = p.curvature(&geo.curvature);
        fields.push(solve_patch(
            cfg,
            p,
            &curv,
            &restrict_field(&field, &p.faces),
            &restrict_target(&target, &p.faces),
        )?);
    }
    // seam vertices take the value of the lowest patch
    let mut whole = vec![f64::NAN; geo.mesh.n_vertices()];
    for pf in fields.iter().rev() {
        for (&v, &x) in pf.vertices.iter().zip(&pf.values) {
            whole[v] = x;
        }
    }
    let doc = PhiDocument {
        variant: cfg.variant,
        patches: fields,
    };
    Ok(vec![
        write(&cfg.output, PHI_JSON, &export::to_json(&doc)?)?,
        write(&cfg.output, "phi.vtk", &export::mesh_vtk(&geo.mesh, Some(("phi", &whole)), None))?,
    ])
}

fn stage_extract(cfg: &JobConfig, geo: &Geometry) -> Result<Vec<String>> {
    let doc: PhiDocument = read_artifact(&cfg.output, PHI_JSON)?;
    let patches = load_patches(cfg, &geo.mesh)?;
    if doc.patches.len() != patches.len() {
        return Err(Error::Config("phi.json and segmentation.json disagree on the patch count".into()));
    }
    let mut paths = Vec::new();
    let mut schedules = Vec::new();
    for (p, pf) in patches.iter().zip(&doc.patches) {
        if pf.vertices != p.vertex_map {
            return Err(Error::Config(format!("phi.json patch {} does not match the segmentation", p.label)));
        }
        let curv = p.curvature(&geo.curvature);
        let schedule = schedule_levels(&p.mesh, &pf.values, &curv, &cfg.cutter, cfg.h, cfg.samples)?;
        paths.extend(p.lift(extract_all(&p.mesh, &pf.values, &schedule)?));
        schedules.push(schedule);
    }
    let n_levels: usize = schedules.iter().map(LevelSchedule::len).sum();
    let doc = PathsDocument::new(paths, schedules);
    log::info!("{n_levels} level(s), {} path(s), total length {:.3} mm", doc.paths.len(), doc.total_length);
    Ok(vec![
        write(&cfg.output, PATHS_JSON, &export::to_json(&doc)?)?,
        write(&cfg.output, "paths.vtk", &export::paths_vtk(&doc.paths))?,
        write(&cfg.output, "plots/paths.svg", &export::paths_svg(&doc.paths, cfg.view))?,
    ])
}

/// Scallop samples over the pairs of adjacent levels of each patch.
pub fn scallop_samples(cfg: &JobConfig, geo: &Geometry, doc: &PathsDocument) -> Result<(Vec<ScallopSample>, usize)> {
    let mut pairs: Vec<(&ToolPath, Vec<ToolPath>)> = Vec::new();
    for (label, schedule) in doc.schedules.iter().enumerate() {
        let at = |l: f64| -> Vec<ToolPath> {
            doc.paths
                .iter()
                .filter(|p| p.patch == label && p.level == l)
                .cloned()
                .collect()
        };
        for w in schedule.levels.windows(2) {
            let next = at(w[1]);
            if next.is_empty() {
                continue;
            }
            for p in doc.paths.iter().filter(|p| p.patch == label && p.level == w[0]) {
                if p.length > 0.0 {
                    pairs.push((p, next.clone()));
                }
            }
        }
    }
    if pairs.is_empty() || cfg.oracle_samples == 0 {
        return Ok((Vec::new(), 0));
    }
    let pairs: Vec<(&ToolPath, &[ToolPath])> = pairs.iter().map(|(a, next)| (*a, next.as_slice())).collect();
    let out = scallop_over_pairs(
        &geo.mesh,
        &geo.reference,
        &geo.curvature,
        &cfg.cutter,
        &pairs,
        cfg.oracle_samples,
        cfg.seed,
    )?;
    Ok((out, pairs.len()))
}

fn stage_analyze(cfg: &JobConfig, geo: &Geometry, opts: &AnalyzeOptions) -> Result<Vec<String>> {
    let field = read_field(&cfg.output, &geo.mesh)?;
    let doc: PathsDocument = read_artifact(&cfg.output, PATHS_JSON)?;
    let phi: Option<PhiDocument> = read_artifact(&cfg.output, PHI_JSON).ok();
    if let Some(bad) = doc.paths.iter().flat_map(|p| &p.points).find(|q| q.face >= geo.mesh.n_faces()) {
        return Err(Error::Config(format!("path point on face {} outside the mesh", bad.face)));
    }

    let alignment = alignment_report(&doc.paths, &field);
    let (samples, level_pairs) = scallop_samples(cfg, geo, &doc)?;
    let mut histogram = vec![0usize; 21];
    for s in &samples {
        histogram[((s.rel_error / 0.005) as usize).min(20)] += 1;
    }
    let reference = match (&cfg.surface, geo.curvature.source()) {
        (Some(_), CurvatureSource::Analytic) => "circle intersection in the section plane, analytic curvature",
        (Some(_), CurvatureSource::Estimated) => {
            "circle intersection in the section plane, analytic curvature (model uses estimated curvature)"
        }
        (None, _) => "circle intersection in the section plane, estimated curvature",
    };
    let scallop = ScallopSummary {
        reference: reference.to_string(),
        level_pairs,
        stats: scallop_stats(&samples),
        max_h_exact: samples.iter().map(|s| s.h_exact).fold(0.0, f64::max),
        histogram,
    };
    let coverage = coverage_report(
        &geo.mesh,
        &doc.paths,
        &cfg.cutter,
        &geo.curvature,
        cfg.h,
        cfg.coverage_samples,
        cfg.seed,
    )?;
    let mut sets = vec![("this run".to_string(), doc.paths.clone())];
    for (name, path) in &opts.compare {
        let text = fs::read_to_string(path).map_err(|_| Error::MissingArtifact(path.display().to_string()))?;
        let other: PathsDocument = serde_json::from_str(&text)?;
        sets.push((name.clone(), other.paths));
    }
    let lengths = length_report(&sets);
    let report = Report {
        total_length: doc.total_length,
        path_lengths: doc.paths.iter().map(|p| p.length).collect(),
        patches: doc.schedules.len(),
        alignment,
        scallop,
        coverage,
        lengths,
        energies: phi.map(|d| d.patches.iter().map(|p| p.energy).collect()).unwrap_or_default(),
    };
    let dir = &cfg.output;
    Ok(vec![
        write(dir, REPORT_JSON, &export::to_json(&report)?)?,
        write(dir, "lengths.txt", &report.lengths.to_table())?,
        write(dir, "scallop_samples.csv", &export::scallop_csv(&samples))?,
        write(
            dir,
            "plots/alignment.svg",
            &export::histogram_svg("alignment error", &report.alignment.histogram, "angle to feed direction (1° bins)"),
        )?,
        write(
            dir,
            "plots/scallop_error.svg",
            &export::histogram_svg("scallop model error", &report.scallop.histogram, "relative error (0.5% bins)"),
        )?,
    ])
}
