//! Target vector field and scalar-field solves.
//!
//! The Poisson problem is solved in weak form, `S φ = −2A ∇·V` with the
//! stiffness `S` from [`assemble_laplacian`]; this is exactly the normal
//! equation of min Σ_f area_f ‖∇φ_f − V_f‖², boundary rows included.
//! Constants are removed by pinning one vertex per connected component and
//! shifting each component to zero mean afterwards.

use nalgebra_sparse::CscMatrix;
use serde::{Deserialize, Serialize};

use crate::curvature::CurvatureField;
use crate::diff_ops::{assemble_face_matrix, assemble_laplacian, face_gradient, integrated_divergence, FaceVectorField, Laplacian};
use crate::feed_field::{magnitude_field, rotate90, CutterSpec, DirectionField};
use crate::linalg::{add_scaled, quad_form, smallest_generalized, BOperator, EigenOptions, SpdSolver, Triplets};
use crate::mesh::TriMesh;
use crate::{Error, Result};

/// Residual bound of the Poisson solve, relative, in the mass norm.
pub const POISSON_RESIDUAL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SolveVariant {
    #[default]
    Poisson,
    Smooth,
    DirectionOnly,
    IsoscallopHard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarField {
    pub values: Vec<f64>,
    pub provenance: SolveVariant,
}

impl ScalarField {
    pub fn range(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Per-face `m_f · (n_f × d_f)` with its magnitudes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetVectorField {
    pub field: FaceVectorField,
    pub magnitudes: Vec<f64>,
}

pub fn build_target_field(mesh: &TriMesh, curv: &CurvatureField, cutter: &CutterSpec, field: &DirectionField) -> Result<TargetVectorField> {
    let flagged = field.gouge_faces();
    if !flagged.is_empty() {
        return Err(Error::Gouge { faces: flagged });
    }
    let magnitudes = magnitude_field(mesh, curv, cutter, field)?;
    let rotated = rotate90(field, mesh);
    let vectors = rotated
        .dirs
        .iter()
        .zip(&magnitudes)
        .map(|(d, m)| d * *m)
        .collect();
    Ok(TargetVectorField {
        field: FaceVectorField { vectors },
        magnitudes,
    })
}

/// Assembled Laplacian with its pinned factorization, reusable across
/// right-hand sides.
pub struct PoissonSystem {
    lap: Laplacian,
    solver: SpdSolver,
    components: Vec<usize>,
    n_components: usize,
}

impl PoissonSystem {
    pub fn new(mesh: &TriMesh) -> Result<Self> {
        let lap = assemble_laplacian(mesh)?;
        let components = mesh.vertex_components();
        let solver = SpdSolver::new(lap.stiffness.matrix(), &component_pins(&components, mesh.n_components()))?;
        Ok(Self {
            lap,
            solver,
            components,
            n_components: mesh.n_components(),
        })
    }

    pub fn laplacian(&self) -> &Laplacian {
        &self.lap
    }

    /// Solve `S φ = b` for a right-hand side made compatible per component,
    /// returned with zero mean per component.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let mut b = b.to_vec();
        project_mean(&mut b, &self.components, self.n_components);
        let mut x = self.solver.solve(&b)?;
        project_mean(&mut x, &self.components, self.n_components);
        Ok(x)
    }
}

fn component_pins(components: &[usize], n: usize) -> Vec<usize> {
    let mut pins = vec![usize::MAX; n];
    for (v, &c) in components.iter().enumerate() {
        if pins[c] == usize::MAX {
            pins[c] = v;
        }
    }
    pins
}

/// Subtract the arithmetic mean on each component.
pub fn project_mean(x: &mut [f64], components: &[usize], n: usize) {
    let mut sum = vec![0.0; n];
    let mut count = vec![0usize; n];
    for (v, &c) in components.iter().enumerate() {
        sum[c] += x[v];
        count[c] += 1;
    }
    for (v, &c) in components.iter().enumerate() {
        x[v] -= sum[c] / count[c] as f64;
    }
}

pub fn solve_poisson(mesh: &TriMesh, target: &FaceVectorField) -> Result<ScalarField> {
    let system = PoissonSystem::new(mesh)?;
    solve_poisson_with(&system, mesh, target)
}

pub fn solve_poisson_with(system: &PoissonSystem, mesh: &TriMesh, target: &FaceVectorField) -> Result<ScalarField> {
    let div_int = integrated_divergence(mesh, target);
    let b: Vec<f64> = div_int.iter().map(|d| -d).collect();
    let values = system.solve(&b)?;

    // ‖Δφ − ∇·V‖ in the mass norm: with Δφ = −Sφ/m and ∇·V = d/m this is
    // √Σ (Sφ + d)²/m
    let mass = &system.lap.mass;
    let s_phi = system.lap.stiffness.apply(&values);
    let res: f64 = (0..values.len())
        .map(|i| (s_phi[i] + div_int[i]).powi(2) / mass[i])
        .sum::<f64>()
        .sqrt();
    let scale: f64 = (0..values.len())
        .map(|i| div_int[i].powi(2) / mass[i])
        .sum::<f64>()
        .sqrt();
    if res > POISSON_RESIDUAL_TOL * scale.max(f64::MIN_POSITIVE) && res > 1e-14 {
        return Err(Error::Solve(format!(
            "Poisson residual {:.3e} exceeds bound (relative {:.3e})",
            res,
            res / scale
        )));
    }
    Ok(ScalarField {
        values,
        provenance: SolveVariant::Poisson,
    })
}

/// min Σ area‖∇φ − V‖² + λ Σ_interior A_i (Δφ)_i².
///
/// The Laplacian term is restricted to interior vertices: the natural
/// boundary rows of Δφ are not zero for linear fields, and including them
/// would bend exact linear solutions.
pub fn solve_smooth(mesh: &TriMesh, target: &FaceVectorField, lambda: f64) -> Result<ScalarField> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParam(format!("smoothness weight {lambda} must be ≥ 0")));
    }
    let lap = assemble_laplacian(mesh)?;
    let s = lap.stiffness.matrix();
    let n = mesh.n_vertices();
    let system = if lambda == 0.0 {
        s.clone()
    } else {
        // S D S with D = diag(1/(4A_i)) on interior vertices
        let mut t = Triplets::new(n, n);
        for (i, j, v) in s.triplet_iter() {
            if !mesh.is_boundary_vertex(i) {
                t.push(i, j, v / (4.0 * mesh.voronoi_areas()[i]));
            }
        }
        let ds = t.into_csc();
        let sds: CscMatrix<f64> = s * &ds;
        add_scaled(s, 1.0, &sds, 2.0 * lambda)
    };
    let components = mesh.vertex_components();
    let solver = SpdSolver::new(&system, &component_pins(&components, mesh.n_components()))?;
    let mut b: Vec<f64> = integrated_divergence(mesh, target).iter().map(|d| -d).collect();
    project_mean(&mut b, &components, mesh.n_components());
    let mut values = solver.solve(&b)?;
    project_mean(&mut values, &components, mesh.n_components());
    Ok(ScalarField {
        values,
        provenance: SolveVariant::Smooth,
    })
}

/// Σ_interior A_i (Δφ)_i², the quantity penalised by [`solve_smooth`].
pub fn interior_laplacian_energy(mesh: &TriMesh, lap: &Laplacian, phi: &[f64]) -> f64 {
    let d = lap.apply(phi);
    (0..mesh.n_vertices())
        .filter(|&i| !mesh.is_boundary_vertex(i))
        .map(|i| mesh.voronoi_areas()[i] * d[i] * d[i])
        .sum()
}

/// Σ_f area_f (w_f · ∇ψ_i)(w_f · ∇ψ_j) for per-face vectors `w`.
pub fn directional_form(mesh: &TriMesh, w: &[crate::Vec3]) -> CscMatrix<f64> {
    assemble_face_matrix(mesh, |f| {
        let g = mesh.gradient_basis(f);
        let p: [f64; 3] = std::array::from_fn(|k| w[f].dot(&g[k]));
        let a = mesh.face_area(f);
        std::array::from_fn(|r| std::array::from_fn(|c| a * p[r] * p[c]))
    })
    .matrix()
    .clone()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DirectionOnlyResult {
    pub phi: ScalarField,
    /// Smallest generalized eigenvalue, the achieved Σ area (d·∇φ)².
    pub mu: f64,
}

/// Shift used by the direction-only eigen solve.
const DIRECTION_ONLY_SHIFT: f64 = 1e-4;

/// min Σ area (d·∇φ)² subject to Σ area ‖∇φ‖² = 1, as the smallest
/// generalized eigenpair of A u = μ B u off the constants.
pub fn solve_direction_only(mesh: &TriMesh, field: &DirectionField) -> Result<DirectionOnlyResult> {
    let a = directional_form(mesh, &field.dirs);
    let lap = assemble_laplacian(mesh)?;
    // Dirichlet form Σ area ‖∇φ‖² = ½ φᵀ S φ
    let b = lap.stiffness.matrix() * 0.5;
    let components = mesh.vertex_components();
    let nc = mesh.n_components();
    if mesh.n_vertices() <= nc + 1 {
        return Err(Error::EigenSolve("no non-constant functions on this mesh".into()));
    }
    let shifted = add_scaled(&a, 1.0, &b, DIRECTION_ONLY_SHIFT);
    let solver = SpdSolver::new(&shifted, &component_pins(&components, nc))?;
    let project = |x: &mut [f64]| project_mean(x, &components, nc);
    let shift_solve = |y: &[f64]| -> Result<Vec<f64>> {
        let mut y = y.to_vec();
        project(&mut y);
        let mut x = solver.solve(&y)?;
        project(&mut x);
        Ok(x)
    };
    let opts = EigenOptions {
        block: 4,
        ..EigenOptions::default()
    };
    let pairs = smallest_generalized(&a, &BOperator::Sparse(&b), &shift_solve, &project, 1, opts)?;
    let mut u = pairs.vectors.into_iter().next().expect("one eigenvector requested");
    let norm = quad_form(&b, &u).sqrt();
    let peak = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let sign = u.iter().find(|v| v.abs() > 1e-9 * peak).map_or(1.0, |v| v.signum());
    u.iter_mut().for_each(|x| *x *= sign / norm);
    let mu = quad_form(&a, &u).max(0.0);
    Ok(DirectionOnlyResult {
        phi: ScalarField {
            values: u,
            provenance: SolveVariant::DirectionOnly,
        },
        mu,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlmReport {
    /// Max over faces of |‖∇φ‖ − m| / m after each outer iteration.
    pub violations: Vec<f64>,
    pub final_penalty: f64,
}

pub const ALM_MAX_PENALTY: f64 = 1e6;

/// min Σ area (d·∇φ)² subject to ‖∇φ_f‖ = m_f on every face, by an augmented
/// Lagrangian with the constraint linearised about the current gradient
/// direction g_f (initially n × d).
pub fn solve_isoscallop_hard(
    mesh: &TriMesh,
    field: &DirectionField,
    curv: &CurvatureField,
    cutter: &CutterSpec,
    max_outer: usize,
    tol: f64,
) -> Result<(ScalarField, AlmReport)> {
    let m = magnitude_field(mesh, curv, cutter, field)?;
    let nf = mesh.n_faces();
    let n = mesh.n_vertices();
    let components = mesh.vertex_components();
    let nc = mesh.n_components();
    let pins = component_pins(&components, nc);
    let a_align = directional_form(mesh, &field.dirs);
    let lap = assemble_laplacian(mesh)?;

    let mut g: Vec<crate::Vec3> = rotate90(field, mesh).dirs;
    let mut lambda = vec![0.0; nf];
    let mut rho = 1.0;
    let mut report = AlmReport {
        violations: Vec::new(),
        final_penalty: rho,
    };
    let mut best: Option<(f64, Vec<f64>)> = None;

    for outer in 0..max_outer.max(1) {
        let gform = directional_form(mesh, &g);
        let system = add_scaled(&add_scaled(&a_align, 2.0, &gform, rho), 1.0, lap.stiffness.matrix(), 1e-10 * rho);
        let mut rhs = vec![0.0; n];
        for f in 0..nf {
            let basis = mesh.gradient_basis(f);
            let w = mesh.face_area(f) * (lambda[f] + rho * m[f]);
            let tri = mesh.face(f);
            for k in 0..3 {
                rhs[tri[k]] += w * g[f].dot(&basis[k]);
            }
        }
        project_mean(&mut rhs, &components, nc);
        let solver = SpdSolver::new(&system, &pins)?;
        let mut phi = solver.solve(&rhs)?;
        project_mean(&mut phi, &components, nc);

        let grad = face_gradient(mesh, &phi);
        let mut violation: f64 = 0.0;
        for f in 0..nf {
            let gn = grad.vectors[f].norm();
            violation = violation.max((gn - m[f]).abs() / m[f]);
            lambda[f] -= rho * (gn - m[f]);
            if gn > 1e-14 {
                g[f] = grad.vectors[f] / gn;
            }
        }
        report.violations.push(violation);
        log::debug!("ALM outer {outer}: violation {violation:.3e}, rho {rho:e}");
        if best.as_ref().is_none_or(|(v, _)| violation < *v) {
            best = Some((violation, phi.clone()));
        }
        report.final_penalty = rho;
        if violation <= tol {
            return Ok((
                ScalarField {
                    values: phi,
                    provenance: SolveVariant::IsoscallopHard,
                },
                report,
            ));
        }
        rho = (2.0 * rho).min(ALM_MAX_PENALTY);
    }
    let (violation, values) = best.expect("at least one outer iteration");
    Err(Error::NoConvergence {
        best: Box::new(ScalarField {
            values,
            provenance: SolveVariant::IsoscallopHard,
        }),
        violation,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub e_align: f64,
    pub e_scallop: f64,
    pub e_lsq: f64,
}

pub fn energy_report(mesh: &TriMesh, phi: &[f64], target: &TargetVectorField, field: &DirectionField) -> EnergyReport {
    let grad = face_gradient(mesh, phi);
    let mut r = EnergyReport {
        e_align: 0.0,
        e_scallop: 0.0,
        e_lsq: 0.0,
    };
    for f in 0..mesh.n_faces() {
        let a = mesh.face_area(f);
        let gf = &grad.vectors[f];
        r.e_align += a * field.dirs[f].dot(gf).powi(2);
        r.e_scallop += a * (gf.norm() - target.magnitudes[f]).powi(2);
        r.e_lsq += a * (gf - target.field.vectors[f]).norm_squared();
    }
    r
}

/// Σ area ‖∇φ − V‖² alone.
pub fn lsq_energy(mesh: &TriMesh, phi: &[f64], target: &FaceVectorField) -> f64 {
    let grad = face_gradient(mesh, phi);
    (0..mesh.n_faces())
        .map(|f| mesh.face_area(f) * (grad.vectors[f] - target.vectors[f]).norm_squared())
        .sum()
}

/// Mass-weighted norm √Σ 2A_i x_i².
pub fn mass_norm(lap: &Laplacian, x: &[f64]) -> f64 {
    x.iter().zip(&lap.mass).map(|(v, m)| m * v * v).sum::<f64>().sqrt()
}
