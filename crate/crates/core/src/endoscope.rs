//! Cable-driven continuum endoscope as a lumped-mass rod chain.
//!
//! The chain runs from a kinematically driven base (nodes 0 and 1 clamp
//! position and direction) through a passive segment into a short active
//! tip. Four antagonistic cables set a target bend that is spread evenly over
//! the active joints; insertion slides the base along the insertion axis.

use nalgebra::{Matrix3, Rotation3, Unit};
use serde::{Deserialize, Serialize};

use crate::contact::ContactBody;
use crate::fem::{CsrMatrix, SkylineCholesky};
use crate::mesh::Vec3;

/// Per-component action bound, mm.
pub const ACTION_LIMIT: f64 = 0.4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndoscopeModel {
    /// mm
    pub passive_length: f64,
    /// mm
    pub active_length: f64,
    /// mm
    pub passive_spacing: f64,
    /// mm
    pub active_spacing: f64,
    /// mm
    pub radius: f64,
    /// N/mm
    pub stretch_stiffness: f64,
    /// N mm^2
    pub bend_stiffness: f64,
    /// tonne/mm
    pub linear_density: f64,
    /// mm
    pub cable_moment_arm: f64,
    /// Cable displacement limit, mm.
    pub cable_limit: f64,
    /// 1/s
    pub rayleigh_mass: f64,
    /// s
    pub rayleigh_stiffness: f64,
}

impl Default for EndoscopeModel {
    fn default() -> Self {
        Self {
            passive_length: 1000.0,
            active_length: 79.0,
            passive_spacing: 10.0,
            active_spacing: 5.0,
            radius: 1.5,
            stretch_stiffness: 50.0,
            bend_stiffness: 2.0e4,
            linear_density: 8.0e-9,
            cable_moment_arm: 3.0,
            cable_limit: 35.0,
            rayleigh_mass: 0.5,
            rayleigh_stiffness: 0.05,
        }
    }
}

impl EndoscopeModel {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("passive_length", self.passive_length),
            ("active_length", self.active_length),
            ("passive_spacing", self.passive_spacing),
            ("active_spacing", self.active_spacing),
            ("radius", self.radius),
            ("stretch_stiffness", self.stretch_stiffness),
            ("bend_stiffness", self.bend_stiffness),
            ("linear_density", self.linear_density),
            ("cable_moment_arm", self.cable_moment_arm),
            ("cable_limit", self.cable_limit),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("endoscope {name} must be > 0"));
            }
        }
        if self.rayleigh_mass < 0.0 || self.rayleigh_stiffness < 0.0 {
            return Err("endoscope damping must be >= 0".into());
        }
        if self.active_length >= self.passive_length {
            return Err("active_length must be shorter than passive_length".into());
        }
        if self.active_segments() < 2 {
            return Err("active segment needs at least 3 nodes".into());
        }
        Ok(())
    }

    pub fn passive_segments(&self) -> usize {
        ((self.passive_length / self.passive_spacing).round() as usize).max(1)
    }

    pub fn active_segments(&self) -> usize {
        (self.active_length / self.active_spacing).round() as usize
    }

    pub fn node_count(&self) -> usize {
        self.passive_segments() + self.active_segments() + 1
    }

    pub fn total_length(&self) -> f64 {
        self.passive_length + self.active_length
    }

    /// Arc length of each node from the base.
    pub fn arc_lengths(&self) -> Vec<f64> {
        let (np, na) = (self.passive_segments(), self.active_segments());
        let lp = self.passive_length / np as f64;
        let la = self.active_length / na as f64;
        let mut s = Vec::with_capacity(np + na + 1);
        for i in 0..=np {
            s.push(i as f64 * lp);
        }
        for i in 1..=na {
            s.push(self.passive_length + i as f64 * la);
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActuationState {
    /// Cable displacements from neutral, mm.
    pub cables: [f64; 4],
    /// Insertion depth, mm.
    pub insertion: f64,
    pub last_axial_action: f64,
    /// Track limits for the insertion, mm.
    pub insertion_range: (f64, f64),
    pub cable_limit: f64,
}

impl ActuationState {
    pub fn new(insertion: f64, insertion_range: (f64, f64), cable_limit: f64) -> Self {
        Self {
            cables: [0.0; 4],
            insertion: insertion.clamp(insertion_range.0, insertion_range.1),
            last_axial_action: 0.0,
            insertion_range,
            cable_limit,
        }
    }
}

/// Clamps each component to `[-0.4, 0.4]`; NaN counts as zero.
pub fn clamp_action(action: &[f64; 5]) -> [f64; 5] {
    action.map(|a| if a.is_nan() { 0.0 } else { a.clamp(-ACTION_LIMIT, ACTION_LIMIT) })
}

/// Integrates an action `(dL1..dL4, ds)` into the actuation state.
pub fn apply_action(act: &ActuationState, action: &[f64; 5]) -> ActuationState {
    let a = clamp_action(action);
    let mut next = act.clone();
    for i in 0..4 {
        next.cables[i] = (act.cables[i] + a[i]).clamp(-act.cable_limit, act.cable_limit);
    }
    next.insertion = (act.insertion + a[4]).clamp(act.insertion_range.0, act.insertion_range.1);
    next.last_axial_action = a[4];
    next
}

/// Constant-curvature map: `theta_y = (L1 - L3) / 2d`, `theta_z = (L2 - L4) / 2d`,
/// each clamped to `[-pi/2, pi/2]`.
pub fn cable_to_target_curvature(cables: &[f64; 4], moment_arm: f64) -> (f64, f64) {
    let half_pi = std::f64::consts::FRAC_PI_2;
    let ty = (cables[0] - cables[2]) / (2.0 * moment_arm);
    let tz = (cables[1] - cables[3]) / (2.0 * moment_arm);
    (ty.clamp(-half_pi, half_pi), tz.clamp(-half_pi, half_pi))
}

/// Total bend rotation vector in the base frame `(axis, d1, d2)` coordinates
/// `(0, theta_y, theta_z)`, with its magnitude limited to `pi/2`.
pub fn target_bend(cables: &[f64; 4], moment_arm: f64) -> (f64, f64) {
    let (ty, tz) = cable_to_target_curvature(cables, moment_arm);
    let norm = ty.hypot(tz);
    let limit = std::f64::consts::FRAC_PI_2;
    if norm > limit {
        (ty * limit / norm, tz * limit / norm)
    } else {
        (ty, tz)
    }
}

/// Rotation vector turning `a` into `b` (angle times unit axis).
pub fn turning_vector(a: &Vec3, b: &Vec3) -> Vec3 {
    let c = a.cross(b);
    let s = c.norm();
    if s < 1e-300 {
        return Vec3::zeros();
    }
    c * (s.atan2(a.dot(b)) / s)
}

fn transport(frame: &[Vec3; 2], from: &Vec3, to: &Vec3) -> [Vec3; 2] {
    let phi = turning_vector(&from.normalize(), &to.normalize());
    match Unit::try_new(phi, 1e-14) {
        Some(axis) => {
            let r = Rotation3::from_axis_angle(&axis, phi.norm());
            [r * frame[0], r * frame[1]]
        }
        None => *frame,
    }
}

#[derive(Debug, Clone)]
pub struct Rod {
    pub model: EndoscopeModel,
    pub x: Vec<Vec3>,
    pub v: Vec<Vec3>,
    pub mass: Vec<f64>,
    /// Base position at zero insertion.
    pub base_origin: Vec3,
    /// Columns: insertion axis, first and second bending directions.
    pub base_frame: Matrix3<f64>,
    arc: Vec<f64>,
    rest: Vec<f64>,
    first_active_joint: usize,
    insertion: f64,
    system: Option<SkylineCholesky>,
    compliance_nodes: Vec<usize>,
    compliance: Vec<Matrix3<f64>>,
}

/// Number of base nodes driven kinematically.
pub const CLAMPED_NODES: usize = 2;

impl Rod {
    /// Straight rod along the first column of `base_frame`.
    pub fn new(model: EndoscopeModel, base_origin: Vec3, base_frame: Matrix3<f64>, insertion: f64) -> Result<Self, String> {
        model.validate()?;
        let arc = model.arc_lengths();
        let n = arc.len();
        let rest: Vec<f64> = arc.windows(2).map(|w| w[1] - w[0]).collect();
        let mut mass = vec![0.0; n];
        for (k, l) in rest.iter().enumerate() {
            mass[k] += 0.5 * l * model.linear_density;
            mass[k + 1] += 0.5 * l * model.linear_density;
        }
        let mut rod = Self {
            first_active_joint: model.passive_segments(),
            model,
            x: vec![Vec3::zeros(); n],
            v: vec![Vec3::zeros(); n],
            mass,
            base_origin,
            base_frame,
            arc,
            rest,
            insertion,
            system: None,
            compliance_nodes: Vec::new(),
            compliance: Vec::new(),
        };
        rod.straighten(insertion);
        Ok(rod)
    }

    pub fn node_count(&self) -> usize {
        self.x.len()
    }

    pub fn axis(&self) -> Vec3 {
        self.base_frame.column(0).into_owned()
    }

    pub fn insertion(&self) -> f64 {
        self.insertion
    }

    pub fn rest_lengths(&self) -> &[f64] {
        &self.rest
    }

    pub fn first_active_joint(&self) -> usize {
        self.first_active_joint
    }

    /// Straight, at rest, at insertion `s`.
    pub fn straighten(&mut self, s: f64) {
        let axis = self.axis();
        for (i, a) in self.arc.iter().enumerate() {
            self.x[i] = self.base_origin + axis * (s + a);
            self.v[i] = Vec3::zeros();
        }
        self.insertion = s;
        self.system = None;
    }

    pub fn translate(&mut self, d: &Vec3) {
        self.base_origin += d;
        for x in &mut self.x {
            *x += d;
        }
    }

    /// Tip position and velocity.
    pub fn ee_state(&self) -> (Vec3, Vec3) {
        let n = self.node_count();
        (self.x[n - 1], self.v[n - 1])
    }

    /// Angle between the tip tangent and the tangent entering the active tip.
    pub fn tip_bend(&self) -> f64 {
        let n = self.node_count();
        let j = self.first_active_joint;
        let t0 = self.x[j] - self.x[j - 1];
        let t1 = self.x[n - 1] - self.x[n - 2];
        turning_vector(&t0, &t1).norm()
    }

    pub fn spheres(&self) -> Vec<(Vec3, f64)> {
        self.x.iter().map(|&c| (c, self.model.radius)).collect()
    }

    /// Per-joint target turning vectors (world frame) for a total bend of
    /// `(theta_y, theta_z)` about the transported base bending directions.
    fn joint_targets(&self, bend: (f64, f64)) -> Vec<Vec3> {
        let n = self.node_count();
        let mut targets = vec![Vec3::zeros(); n];
        let joints = n - 1 - self.first_active_joint;
        let mut frame = [
            self.base_frame.column(1).into_owned(),
            self.base_frame.column(2).into_owned(),
        ];
        let mut prev = self.axis();
        for i in 1..n - 1 {
            let a = self.x[i] - self.x[i - 1];
            frame = transport(&frame, &prev, &a);
            prev = a;
            if i >= self.first_active_joint {
                targets[i] = (frame[0] * bend.0 + frame[1] * bend.1) / joints as f64;
            }
        }
        targets
    }

    fn joint_stiffness(&self, i: usize) -> f64 {
        self.model.bend_stiffness / (0.5 * (self.rest[i - 1] + self.rest[i]))
    }

    /// Elastic forces: stretch springs plus joint bending moments toward the
    /// cable-set target.
    pub fn actuation_forces(&self, act: &ActuationState) -> Vec<Vec3> {
        let bend = target_bend(&act.cables, self.model.cable_moment_arm);
        self.elastic_forces(bend)
    }

    pub fn elastic_forces(&self, bend: (f64, f64)) -> Vec<Vec3> {
        let n = self.node_count();
        let mut f = vec![Vec3::zeros(); n];
        for k in 0..n - 1 {
            let e = self.x[k + 1] - self.x[k];
            let l = e.norm();
            let fs = e * (self.model.stretch_stiffness * (l - self.rest[k]) / l);
            f[k] += fs;
            f[k + 1] -= fs;
        }
        let targets = self.joint_targets(bend);
        for i in 1..n - 1 {
            let a = self.x[i] - self.x[i - 1];
            let b = self.x[i + 1] - self.x[i];
            let m = (turning_vector(&a, &b) - targets[i]) * self.joint_stiffness(i);
            let fb = -m.cross(&b) / b.norm_squared();
            let fa = -m.cross(&a) / a.norm_squared();
            f[i + 1] += fb;
            f[i - 1] += fa;
            f[i] -= fa + fb;
        }
        f
    }

    /// Symmetric positive semidefinite stiffness approximation used by the
    /// implicit step: projected stretch Hessian plus an isotropic
    /// second-difference bending term.
    fn stiffness_matrix(&self) -> CsrMatrix {
        let n = self.node_count();
        let mut trip = Vec::with_capacity(n * 81 + n * 36);
        let mut add = |i: usize, j: usize, m: &Matrix3<f64>| {
            for r in 0..3 {
                for c in 0..3 {
                    trip.push((3 * i + r, 3 * j + c, m[(r, c)]));
                }
            }
        };
        for k in 0..n - 1 {
            let e = self.x[k + 1] - self.x[k];
            let l = e.norm();
            let t = e / l;
            let tt = t * t.transpose();
            let ks = self.model.stretch_stiffness;
            let mut h = tt * ks;
            if l > self.rest[k] {
                h += (Matrix3::identity() - tt) * (ks * (1.0 - self.rest[k] / l));
            }
            add(k, k, &h);
            add(k + 1, k + 1, &h);
            add(k, k + 1, &-h);
            add(k + 1, k, &-h);
        }
        let coef = [1.0, -2.0, 1.0];
        for i in 1..n - 1 {
            let l = 0.5 * (self.rest[i - 1] + self.rest[i]);
            let kb = self.model.bend_stiffness / l.powi(3);
            for (p, cp) in coef.iter().enumerate() {
                for (q, cq) in coef.iter().enumerate() {
                    add(i - 1 + p, i - 1 + q, &(Matrix3::identity() * (kb * cp * cq)));
                }
            }
        }
        CsrMatrix::from_triplets(3 * n, trip, true)
    }

    fn clamp_positions(&mut self, s: f64) {
        let axis = self.axis();
        for i in 0..CLAMPED_NODES {
            self.x[i] = self.base_origin + axis * (s + self.arc[i]);
        }
    }

    /// Velocity half of the implicit step. The base moves to insertion `s`
    /// over this step; `external` holds per-node forces (gravity, loads).
    pub fn solve_velocity(&mut self, h: f64, act: &ActuationState, s: f64, external: &[Vec3]) -> Result<(), String> {
        let n = self.node_count();
        let base_v = self.axis() * ((s - self.insertion) / h);
        for i in 0..CLAMPED_NODES {
            self.v[i] = base_v;
        }
        let bend = target_bend(&act.cables, self.model.cable_moment_arm);
        let f = self.elastic_forces(bend);
        let k = self.stiffness_matrix();
        let (alpha, beta) = (self.model.rayleigh_mass, self.model.rayleigh_stiffness);
        let flat_v: Vec<f64> = self.v.iter().flat_map(|v| [v.x, v.y, v.z]).collect();
        let kv = k.mul_vec(&flat_v);
        let dof_mass: Vec<f64> = self.mass.iter().flat_map(|&m| [m; 3]).collect();
        let mut a = k.with_diagonal(&dof_mass, 1.0 + h * alpha, h * beta + h * h);
        let fixed: Vec<bool> = (0..3 * n).map(|d| d < 3 * CLAMPED_NODES).collect();
        a.project_fixed(&fixed);
        let mut rhs = vec![0.0; 3 * n];
        for i in CLAMPED_NODES..n {
            for d in 0..3 {
                let r = 3 * i + d;
                rhs[r] = h * (f[i][d] + external[i][d] - alpha * self.mass[i] * self.v[i][d] - (beta + h) * kv[r]);
            }
        }
        let chol = SkylineCholesky::factor(&a).map_err(|e| e.to_string())?;
        let dv = chol.solve(&rhs);
        for i in CLAMPED_NODES..n {
            self.v[i] += Vec3::new(dv[3 * i], dv[3 * i + 1], dv[3 * i + 2]);
        }
        self.system = Some(chol);
        self.compliance_nodes.clear();
        self.compliance.clear();
        Ok(())
    }

    /// Position half of the step; clamped nodes land exactly on the track.
    pub fn integrate_positions(&mut self, h: f64, s: f64) {
        for (x, v) in self.x.iter_mut().zip(&self.v).skip(CLAMPED_NODES) {
            *x += v * h;
        }
        self.clamp_positions(s);
        self.insertion = s;
    }

    pub fn step(&mut self, h: f64, act: &ActuationState, s: f64, external: &[Vec3]) -> Result<(), String> {
        self.solve_velocity(h, act, s, external)?;
        self.integrate_positions(h, s);
        Ok(())
    }

    /// Caches `A^-1` blocks between the listed nodes for the contact solve.
    pub fn prepare_compliance(&mut self, nodes: &[usize]) {
        let Some(chol) = &self.system else {
            return;
        };
        let n3 = 3 * self.node_count();
        let mut nodes = nodes.to_vec();
        nodes.sort_unstable();
        nodes.dedup();
        let m = nodes.len();
        let mut blocks = vec![Matrix3::zeros(); m * m];
        let mut e = vec![0.0; n3];
        for (cb, &b) in nodes.iter().enumerate() {
            if b < CLAMPED_NODES {
                continue;
            }
            for d in 0..3 {
                e[3 * b + d] = 1.0;
                let col = chol.solve(&e);
                e[3 * b + d] = 0.0;
                for (ca, &a) in nodes.iter().enumerate() {
                    if a < CLAMPED_NODES {
                        continue;
                    }
                    for r in 0..3 {
                        blocks[ca * m + cb][(r, d)] = col[3 * a + r];
                    }
                }
            }
        }
        self.compliance_nodes = nodes;
        self.compliance = blocks;
    }
}

impl ContactBody for Rod {
    fn node_velocity(&self, node: usize) -> Vec3 {
        self.v[node]
    }

    fn compliance(&self, a: usize, b: usize) -> Matrix3<f64> {
        let m = self.compliance_nodes.len();
        match (
            self.compliance_nodes.binary_search(&a),
            self.compliance_nodes.binary_search(&b),
        ) {
            (Ok(i), Ok(j)) => self.compliance[i * m + j],
            _ if a == b && a >= CLAMPED_NODES => Matrix3::identity() / self.mass[a],
            _ => Matrix3::zeros(),
        }
    }

    fn apply_node_impulses(&mut self, impulses: &[(usize, Vec3)]) -> Result<(), String> {
        if impulses.is_empty() {
            return Ok(());
        }
        let Some(chol) = &self.system else {
            return Err("rod impulses need a prior velocity solve".into());
        };
        let mut p = vec![0.0; 3 * self.node_count()];
        for (i, imp) in impulses {
            if *i >= CLAMPED_NODES {
                for d in 0..3 {
                    p[3 * i + d] += imp[d];
                }
            }
        }
        let dv = chol.solve(&p);
        for i in CLAMPED_NODES..self.node_count() {
            self.v[i] += Vec3::new(dv[3 * i], dv[3 * i + 1], dv[3 * i + 2]);
        }
        Ok(())
    }
}
