//! Linear tetrahedral FEM for the cavity wall.
//!
//! `M u'' + C u' + K u = f_ext` with lumped mass, Rayleigh damping
//! `C = alpha M + beta K` and backward Euler (one linearization per step):
//!
//! ```text
//! (M + h C + h^2 K) dv = h (f_ext - f_int - C v - h K v)
//! v += dv;  u += h v
//! ```
//!
//! Fixed nodes have their rows and columns replaced by identity with a zero
//! right-hand side. Units: mm, N, s, tonne, MPa.

pub mod skyline;
pub mod sparse;

use std::collections::BTreeSet;

use nalgebra::{DMatrix, Matrix3, SMatrix};
use serde::{Deserialize, Serialize};

use crate::mesh::{TetMesh, Vec3};
pub use skyline::SkylineCholesky;
pub use sparse::{linear_solve_cg, linear_solve_cg_from, CsrMatrix};

pub type Matrix12 = SMatrix<f64, 12, 12>;

#[derive(Debug, thiserror::Error)]
pub enum FemError {
    #[error("tet {tet}: {reason}")]
    Assembly { tet: usize, reason: String },
    #[error("linear solve stopped after {iterations} iterations, relative residual {residual:e}")]
    Solver { residual: f64, iterations: usize },
    #[error("system matrix is not positive definite (row {row})")]
    NotPositiveDefinite { row: usize },
    #[error("invalid parameter: {0}")]
    Parameter(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialParams {
    /// MPa
    pub young_modulus: f64,
    pub poisson_ratio: f64,
    /// tonne / mm^3
    pub density: f64,
    /// Rayleigh mass coefficient, 1/s
    pub rayleigh_mass: f64,
    /// Rayleigh stiffness coefficient, s
    pub rayleigh_stiffness: f64,
}

impl Default for MaterialParams {
    fn default() -> Self {
        Self {
            young_modulus: 0.05,
            poisson_ratio: 0.45,
            density: 1.05e-9,
            rayleigh_mass: 1.0,
            rayleigh_stiffness: 0.01,
        }
    }
}

impl MaterialParams {
    pub fn validate(&self) -> Result<(), FemError> {
        let bad = |what: &str| Err(FemError::Parameter(what.to_string()));
        if !(self.young_modulus > 0.0 && self.young_modulus.is_finite()) {
            return bad("young_modulus must be > 0");
        }
        if !(self.poisson_ratio > 0.0 && self.poisson_ratio < 0.5) {
            return bad("poisson_ratio must lie in (0, 0.5)");
        }
        if !(self.density > 0.0 && self.density.is_finite()) {
            return bad("density must be > 0");
        }
        if !(self.rayleigh_mass >= 0.0 && self.rayleigh_stiffness >= 0.0) {
            return bad("Rayleigh coefficients must be >= 0");
        }
        Ok(())
    }

    /// Lame parameters `(lambda, mu)`.
    pub fn lame(&self) -> (f64, f64) {
        let (e, nu) = (self.young_modulus, self.poisson_ratio);
        (e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu)), e / (2.0 * (1.0 + nu)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Elasticity {
    Linear,
    Corotational,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearSolver {
    /// Cached envelope Cholesky of the constant system (linear mode only).
    Direct,
    Cg { tol: f64, max_iter: usize },
}

#[derive(Debug, Clone)]
struct Element {
    nodes: [usize; 4],
    dm_inv: Matrix3<f64>,
    ke: Matrix12,
}

/// Element stiffness of a linear tet from its shape-function gradients:
/// block `(a, b) = V (lambda g_a g_b^T + mu g_b g_a^T + mu (g_a . g_b) I)`.
/// Returns `(K_e, D_m^-1, volume)`.
pub fn element_stiffness(x: &[Vec3; 4], material: &MaterialParams) -> Result<(Matrix12, Matrix3<f64>, f64), String> {
    let dm = Matrix3::from_columns(&[x[1] - x[0], x[2] - x[0], x[3] - x[0]]);
    let volume = dm.determinant() / 6.0;
    if !(volume > 0.0) {
        return Err(format!("non-positive rest volume {volume:e}"));
    }
    let dm_inv = dm.try_inverse().ok_or("singular edge matrix")?;
    let mut grads = [Vec3::zeros(); 4];
    for k in 0..3 {
        grads[k + 1] = dm_inv.row(k).transpose();
    }
    grads[0] = -(grads[1] + grads[2] + grads[3]);
    let (lambda, mu) = material.lame();
    let mut ke = Matrix12::zeros();
    for a in 0..4 {
        for b in 0..4 {
            let ga = grads[a];
            let gb = grads[b];
            let block = (ga * gb.transpose()) * lambda
                + (gb * ga.transpose()) * mu
                + Matrix3::identity() * (mu * ga.dot(&gb));
            ke.fixed_view_mut::<3, 3>(3 * a, 3 * b).copy_from(&(block * volume));
        }
    }
    Ok((ke, dm_inv, volume))
}

fn build_elements(mesh: &TetMesh, material: &MaterialParams) -> Result<Vec<Element>, FemError> {
    mesh.tets
        .iter()
        .enumerate()
        .map(|(t, tet)| {
            let x = tet.map(|i| mesh.vertices[i]);
            element_stiffness(&x, material)
                .map(|(ke, dm_inv, _)| Element { nodes: *tet, dm_inv, ke })
                .map_err(|reason| FemError::Assembly { tet: t, reason })
        })
        .collect()
}

fn assemble(n_nodes: usize, elements: &[Element], rotations: Option<&[Matrix3<f64>]>) -> CsrMatrix {
    let mut triplets = Vec::with_capacity(elements.len() * 144);
    for (e, el) in elements.iter().enumerate() {
        let ke = match rotations {
            Some(rs) => rotate_ke(&el.ke, &rs[e]),
            None => el.ke,
        };
        for a in 0..4 {
            for b in 0..4 {
                for i in 0..3 {
                    for j in 0..3 {
                        triplets.push((3 * el.nodes[a] + i, 3 * el.nodes[b] + j, ke[(3 * a + i, 3 * b + j)]));
                    }
                }
            }
        }
    }
    CsrMatrix::from_triplets(3 * n_nodes, triplets, true)
}

fn rotate_ke(ke: &Matrix12, r: &Matrix3<f64>) -> Matrix12 {
    let mut out = Matrix12::zeros();
    for a in 0..4 {
        for b in 0..4 {
            let block = ke.fixed_view::<3, 3>(3 * a, 3 * b);
            out.fixed_view_mut::<3, 3>(3 * a, 3 * b).copy_from(&(r * block * r.transpose()));
        }
    }
    out
}

/// Global stiffness `K_e` of the rest mesh, size `3N`.
pub fn assemble_stiffness(mesh: &TetMesh, material: &MaterialParams) -> Result<CsrMatrix, FemError> {
    material.validate()?;
    let elements = build_elements(mesh, material)?;
    Ok(assemble(mesh.vertices.len(), &elements, None))
}

/// Rotation factor of the polar decomposition `F = R S`.
pub fn polar_rotation(f: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = f.svd(true, true);
    let mut u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let (k, _) = svd
            .singular_values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        let mut col = u.column_mut(k);
        col *= -1.0;
        r = u * v_t;
    }
    r
}

#[derive(Debug, Clone)]
struct SystemCache {
    h_bits: u64,
    matrix: CsrMatrix,
    factor: Option<SkylineCholesky>,
}

#[derive(Debug, Clone)]
struct Compliance {
    /// Node -> position in `matrix` block rows, if precomputed.
    slot: Vec<Option<usize>>,
    matrix: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct DeformableBody {
    pub rest: TetMesh,
    pub material: MaterialParams,
    pub mode: Elasticity,
    pub solver: LinearSolver,
    /// Stacked nodal displacements, 3N, mm.
    pub u: Vec<f64>,
    /// Stacked nodal velocities, 3N, mm/s.
    pub v: Vec<f64>,
    /// Persistent external load, 3N, N.
    pub f_ext: Vec<f64>,
    /// Lumped nodal masses, tonne.
    pub mass: Vec<f64>,
    fixed: Vec<bool>,
    elements: Vec<Element>,
    stiffness: CsrMatrix,
    cache: Option<SystemCache>,
    compliance: Option<Compliance>,
    warm_start: Vec<f64>,
}

impl DeformableBody {
    pub fn new(rest: TetMesh, material: MaterialParams, mode: Elasticity) -> Result<Self, FemError> {
        material.validate()?;
        let elements = build_elements(&rest, &material)?;
        let n = rest.vertices.len();
        let mut mass = vec![0.0; n];
        for (t, tet) in rest.tets.iter().enumerate() {
            let m = material.density * rest.tet_volume(t) / 4.0;
            for &i in tet {
                mass[i] += m;
            }
        }
        if let Some(i) = mass.iter().position(|&m| m <= 0.0) {
            return Err(FemError::Parameter(format!("vertex {i} belongs to no tet")));
        }
        let stiffness = assemble(n, &elements, None);
        let solver = match mode {
            Elasticity::Linear => LinearSolver::Direct,
            Elasticity::Corotational => LinearSolver::Cg {
                tol: 1e-10,
                max_iter: 20 * 3 * n,
            },
        };
        Ok(Self {
            rest,
            material,
            mode,
            solver,
            u: vec![0.0; 3 * n],
            v: vec![0.0; 3 * n],
            f_ext: vec![0.0; 3 * n],
            mass,
            fixed: vec![false; n],
            elements,
            stiffness,
            cache: None,
            compliance: None,
            warm_start: vec![0.0; 3 * n],
        })
    }

    pub fn with_solver(mut self, solver: LinearSolver) -> Self {
        self.solver = solver;
        self.cache = None;
        self
    }

    pub fn node_count(&self) -> usize {
        self.rest.vertices.len()
    }

    pub fn stiffness(&self) -> &CsrMatrix {
        &self.stiffness
    }

    pub fn is_fixed(&self, node: usize) -> bool {
        self.fixed[node]
    }

    pub fn fixed_nodes(&self) -> Vec<usize> {
        (0..self.fixed.len()).filter(|&i| self.fixed[i]).collect()
    }

    /// Pins the listed nodes (zero displacement and velocity from now on).
    pub fn apply_fixed_constraints(&mut self, indices: &[usize]) -> Result<(), FemError> {
        let n = self.node_count();
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(FemError::Parameter(format!("fixed index {bad} >= node count {n}")));
        }
        for &i in indices.iter().collect::<BTreeSet<_>>() {
            self.fixed[i] = true;
            for d in 0..3 {
                self.u[3 * i + d] = 0.0;
                self.v[3 * i + d] = 0.0;
            }
        }
        self.cache = None;
        self.compliance = None;
        Ok(())
    }

    pub fn position(&self, node: usize) -> Vec3 {
        self.rest.vertices[node] + Vec3::new(self.u[3 * node], self.u[3 * node + 1], self.u[3 * node + 2])
    }

    pub fn positions(&self) -> Vec<Vec3> {
        (0..self.node_count()).map(|i| self.position(i)).collect()
    }

    pub fn velocity(&self, node: usize) -> Vec3 {
        Vec3::new(self.v[3 * node], self.v[3 * node + 1], self.v[3 * node + 2])
    }

    fn element_rotations(&self) -> Vec<Matrix3<f64>> {
        self.elements
            .iter()
            .map(|el| {
                let x: Vec<Vec3> = el.nodes.iter().map(|&i| self.position(i)).collect();
                let ds = Matrix3::from_columns(&[x[1] - x[0], x[2] - x[0], x[3] - x[0]]);
                polar_rotation(&(ds * el.dm_inv))
            })
            .collect()
    }

    fn corotational_forces(&self, rotations: &[Matrix3<f64>]) -> Vec<f64> {
        let mut f = vec![0.0; self.u.len()];
        for (el, r) in self.elements.iter().zip(rotations) {
            let mut local = SMatrix::<f64, 12, 1>::zeros();
            for (a, &i) in el.nodes.iter().enumerate() {
                let x = self.position(i);
                let unrotated = r.transpose() * x - self.rest.vertices[i];
                local.fixed_view_mut::<3, 1>(3 * a, 0).copy_from(&unrotated);
            }
            let fl = el.ke * local;
            for (a, &i) in el.nodes.iter().enumerate() {
                let fa = r * fl.fixed_view::<3, 1>(3 * a, 0);
                for d in 0..3 {
                    f[3 * i + d] += fa[d];
                }
            }
        }
        f
    }

    /// Elastic force `f_int`: `K u` in linear mode, rotated element response in
    /// co-rotational mode.
    pub fn internal_forces(&self) -> Vec<f64> {
        match self.mode {
            Elasticity::Linear => self.stiffness.mul_vec(&self.u),
            Elasticity::Corotational => self.corotational_forces(&self.element_rotations()),
        }
    }

    fn dof_mass(&self) -> Vec<f64> {
        self.mass.iter().flat_map(|&m| [m; 3]).collect()
    }

    fn fixed_dofs(&self) -> Vec<bool> {
        self.fixed.iter().flat_map(|&f| [f; 3]).collect()
    }

    fn system_matrix(&self, h: f64, k: &CsrMatrix) -> CsrMatrix {
        let alpha = self.material.rayleigh_mass;
        let beta = self.material.rayleigh_stiffness;
        let mut a = k.with_diagonal(&self.dof_mass(), 1.0 + h * alpha, h * beta + h * h);
        a.project_fixed(&self.fixed_dofs());
        a
    }

    fn ensure_cache(&mut self, h: f64, k: Option<&CsrMatrix>) -> Result<(), FemError> {
        let fresh = match (&self.cache, k) {
            (Some(c), None) => c.h_bits != h.to_bits(),
            _ => true,
        };
        if !fresh {
            return Ok(());
        }
        let matrix = self.system_matrix(h, k.unwrap_or(&self.stiffness));
        let factor = match (self.solver, k) {
            (LinearSolver::Direct, None) => Some(SkylineCholesky::factor(&matrix)?),
            _ => None,
        };
        self.cache = Some(SystemCache {
            h_bits: h.to_bits(),
            matrix,
            factor,
        });
        Ok(())
    }

    fn solve_system(&mut self, rhs: &[f64]) -> Result<Vec<f64>, FemError> {
        let cache = self.cache.as_ref().expect("system prepared");
        if let Some(f) = &cache.factor {
            return Ok(f.solve(rhs));
        }
        let (tol, max_iter) = match self.solver {
            LinearSolver::Cg { tol, max_iter } => (tol, max_iter),
            LinearSolver::Direct => (1e-10, 20 * rhs.len()),
        };
        let mut x = self.warm_start.clone();
        linear_solve_cg_from(&cache.matrix, rhs, &mut x, tol, max_iter)?;
        Ok(x)
    }

    /// Velocity half of the backward Euler step: updates `v` only.
    pub fn solve_velocity(&mut self, h: f64, extra_forces: Option<&[f64]>) -> Result<(), FemError> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(FemError::Parameter(format!("time step {h} must be > 0")));
        }
        let n3 = self.u.len();
        if let Some(e) = extra_forces {
            if e.len() != n3 {
                return Err(FemError::Parameter(format!("extra force length {} != {n3}", e.len())));
            }
        }
        let (f_int, k_step) = match self.mode {
            Elasticity::Linear => {
                self.ensure_cache(h, None)?;
                (self.stiffness.mul_vec(&self.u), None)
            }
            Elasticity::Corotational => {
                let rotations = self.element_rotations();
                let k = assemble(self.node_count(), &self.elements, Some(&rotations));
                (self.corotational_forces(&rotations), Some(k))
            }
        };
        if let Some(k) = &k_step {
            self.ensure_cache(h, Some(k))?;
        }
        let k = k_step.as_ref().unwrap_or(&self.stiffness);
        let kv = k.mul_vec(&self.v);
        let alpha = self.material.rayleigh_mass;
        let beta = self.material.rayleigh_stiffness;
        let fixed = self.fixed_dofs();
        let mut rhs = vec![0.0; n3];
        for i in 0..n3 {
            if fixed[i] {
                continue;
            }
            let extra = extra_forces.map_or(0.0, |e| e[i]);
            let m = self.mass[i / 3];
            rhs[i] = h * (self.f_ext[i] + extra - f_int[i] - alpha * m * self.v[i] - (beta + h) * kv[i]);
        }
        let dv = self.solve_system(&rhs)?;
        for i in 0..n3 {
            self.v[i] = if fixed[i] { 0.0 } else { self.v[i] + dv[i] };
        }
        self.warm_start = dv;
        Ok(())
    }

    pub fn integrate_positions(&mut self, h: f64) {
        for (u, v) in self.u.iter_mut().zip(&self.v) {
            *u += h * v;
        }
    }

    /// One backward Euler step.
    pub fn step_implicit(&mut self, h: f64, extra_forces: Option<&[f64]>) -> Result<(), FemError> {
        self.solve_velocity(h, extra_forces)?;
        self.integrate_positions(h);
        Ok(())
    }

    /// Velocity response to nodal impulses (N s) through the implicit system
    /// of the last step: `v += A^-1 p`.
    pub fn apply_impulses(&mut self, impulses: &[f64]) -> Result<(), FemError> {
        if self.cache.is_none() {
            return Err(FemError::Parameter("apply_impulses before any step".into()));
        }
        let fixed = self.fixed_dofs();
        let rhs: Vec<f64> = impulses
            .iter()
            .zip(&fixed)
            .map(|(&p, &f)| if f { 0.0 } else { p })
            .collect();
        let saved = std::mem::take(&mut self.warm_start);
        self.warm_start = vec![0.0; rhs.len()];
        let dv = self.solve_system(&rhs);
        self.warm_start = saved;
        let dv = dv?;
        for i in 0..self.v.len() {
            if !fixed[i] {
                self.v[i] += dv[i];
            }
        }
        Ok(())
    }

    /// Precomputes `A^-1` restricted to the listed nodes for time step `h`,
    /// used as the wall side of the contact Delassus operator.
    pub fn precompute_compliance(&mut self, h: f64, nodes: &[usize]) -> Result<(), FemError> {
        let saved_mode = self.mode;
        self.mode = Elasticity::Linear;
        let result = self.ensure_cache(h, None);
        self.mode = saved_mode;
        result?;
        let m = nodes.len();
        let mut slot = vec![None; self.node_count()];
        for (k, &node) in nodes.iter().enumerate() {
            slot[node] = Some(k);
        }
        let n3 = self.u.len();
        let mut matrix = DMatrix::zeros(3 * m, 3 * m);
        let mut e = vec![0.0; n3];
        for (k, &node) in nodes.iter().enumerate() {
            if self.fixed[node] {
                continue;
            }
            for d in 0..3 {
                e[3 * node + d] = 1.0;
                let col = {
                    let cache = self.cache.as_ref().unwrap();
                    match &cache.factor {
                        Some(f) => f.solve(&e),
                        None => linear_solve_cg(&cache.matrix, &e, 1e-12, 20 * n3)?,
                    }
                };
                e[3 * node + d] = 0.0;
                for (k2, &other) in nodes.iter().enumerate() {
                    if self.fixed[other] {
                        continue;
                    }
                    for d2 in 0..3 {
                        matrix[(3 * k2 + d2, 3 * k + d)] = col[3 * other + d2];
                    }
                }
            }
        }
        if self.mode == Elasticity::Corotational {
            self.cache = None;
        }
        self.compliance = Some(Compliance { slot, matrix });
        Ok(())
    }

    /// Velocity change at `a` per unit impulse at `b`; zero when either node
    /// was not part of the precomputed set or is fixed.
    pub fn compliance_block(&self, a: usize, b: usize) -> Matrix3<f64> {
        let Some(c) = &self.compliance else {
            return Matrix3::zeros();
        };
        match (c.slot[a], c.slot[b]) {
            (Some(i), Some(j)) => c.matrix.fixed_view::<3, 3>(3 * i, 3 * j).into_owned(),
            _ => Matrix3::zeros(),
        }
    }

    pub fn has_compliance(&self) -> bool {
        self.compliance.is_some()
    }

    /// `1/2 v^T M v + 1/2 u^T K u` with the rest stiffness.
    pub fn energy(&self) -> f64 {
        let ku = self.stiffness.mul_vec(&self.u);
        let kinetic: f64 = self
            .v
            .iter()
            .enumerate()
            .map(|(i, v)| self.mass[i / 3] * v * v)
            .sum();
        let elastic: f64 = self.u.iter().zip(&ku).map(|(u, f)| u * f).sum();
        0.5 * (kinetic + elastic)
    }

    pub fn max_speed(&self) -> f64 {
        (0..self.node_count())
            .map(|i| self.velocity(i).norm())
            .fold(0.0, f64::max)
    }

    /// Resets displacement and velocity (fixed set and loads are kept).
    pub fn set_state(&mut self, u: &[f64], v: &[f64]) {
        self.u.copy_from_slice(u);
        self.v.copy_from_slice(v);
        self.warm_start.iter_mut().for_each(|x| *x = 0.0);
    }
}

/// `f_int` for `body` given its assembled stiffness (linear mode uses `K u`).
pub fn internal_forces(body: &DeformableBody, k: &CsrMatrix) -> Vec<f64> {
    match body.mode {
        Elasticity::Linear => k.mul_vec(&body.u),
        Elasticity::Corotational => body.internal_forces(),
    }
}

/// Advances `body` by one backward Euler step of size `h`.
pub fn step_implicit(body: &mut DeformableBody, h: f64, extra_forces: Option<&[f64]>) -> Result<(), FemError> {
    body.step_implicit(h, extra_forces)
}

/// Pins `indices` on `body`.
pub fn apply_fixed_constraints(body: &mut DeformableBody, indices: &[usize]) -> Result<(), FemError> {
    body.apply_fixed_constraints(indices)
}

#[cfg(test)]
mod tests;
