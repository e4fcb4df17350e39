//! Episodic navigation environment: deformable cavity, rod endoscope,
//! contact, periodic wall forcing, observations, reward and termination.
//!
//! The cavity entry sits near `x = 0` and the endoscope is inserted along
//! `+x` on the `y = z = 0` line.

use std::path::PathBuf;

use nalgebra::Matrix3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::contact::{self, ContactParams, ContactReport};
use crate::endoscope::{self, ActuationState, EndoscopeModel, Rod};
use crate::fem::{DeformableBody, Elasticity, MaterialParams};
use crate::mesh::{self, CavitySpec, SurfaceMesh, TetMesh, Vec3, TAG_INNER, TAG_OUTER};

pub const CONFIG_VERSION: u32 = 1;
pub const OBS_DIM: usize = 15;
pub const ACT_DIM: usize = 5;

/// Observation components, in order.
pub const OBS_LAYOUT: [&str; OBS_DIM] = [
    "p_x", "p_y", "p_z", "v_x", "v_y", "v_z", "L1", "L2", "L3", "L4", "a_axial_prev", "contact", "F_x", "F_y", "F_z",
];

/// Pre-roll step used to reach static equilibrium, s.
const SETTLE_STEP: f64 = 1.0e3;
/// Contacts kept per rod node; a node wedged in a fold needs both sides.
const CONTACTS_PER_NODE: usize = 6;

pub const SUCCESS_BONUS: f64 = 1.0e4;
pub const BOUNDARY_PENALTY: f64 = 1.0e4;

#[derive(Debug, thiserror::Error)]
pub enum EnvError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("simulation error: {0}")]
    Runtime(String),
}

impl From<mesh::MeshError> for EnvError {
    fn from(e: mesh::MeshError) -> Self {
        EnvError::Config(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Fe,
    Se,
    De,
    Ue1,
    Ue2,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::Fe, Variant::Se, Variant::De, Variant::Ue1, Variant::Ue2];

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Fe => "FE",
            Variant::Se => "SE",
            Variant::De => "DE",
            Variant::Ue1 => "UE1",
            Variant::Ue2 => "UE2",
        }
    }

    pub fn parse(s: &str) -> Option<Variant> {
        Self::ALL.into_iter().find(|v| v.name().eq_ignore_ascii_case(s))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TargetSetId {
    A,
    B,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MeshSource {
    /// ASCII `.msh` 2.2 file, used in its own coordinates.
    File { path: PathBuf },
    /// Generated shell, flipped so the opening faces `-x` and the entry
    /// lies at `x = 0`.
    Procedural(CavitySpec),
}

fn default_gravity() -> [f64; 3] {
    [0.0, 0.0, -9800.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub config_version: u32,
    pub seed: u64,
    pub variant: Variant,
    pub target_set: TargetSetId,
    pub mesh: Option<MeshSource>,
    #[serde(default)]
    pub material: MaterialParams,
    #[serde(default = "SceneConfig::default_elasticity")]
    pub elasticity: Elasticity,
    /// Pinned wall nodes; chosen automatically for procedural meshes when absent.
    #[serde(default)]
    pub fixed_indices: Option<Vec<usize>>,
    /// Wall nodes receiving the periodic force; automatic when absent.
    #[serde(default)]
    pub force_indices: Option<Vec<usize>>,
    /// Periodic force amplitude per force node, N.
    pub f0: [f64; 3],
    /// Half period of the force alternation, env steps.
    pub period: usize,
    #[serde(default = "default_gravity")]
    pub gravity: [f64; 3],
    #[serde(default)]
    pub contact: ContactParams,
    #[serde(default)]
    pub endoscope: EndoscopeModel,
    /// Tip x at reset, mm.
    pub tip_start_x: f64,
    /// Insertion depth at reset, mm.
    pub insertion_start: f64,
    pub insertion_max: f64,
    /// Wall targets are inner-surface vertices with x in this range, mm.
    pub target_x_range: [f64; 2],
    /// Targets must be reachable within this much insertion past the start, mm.
    pub target_reach_insertion: f64,
    /// Free-space targets keep this clearance from the wall, mm.
    pub free_target_margin: f64,
    /// Free-space targets per set.
    pub free_target_count: usize,
    pub boundary_x: f64,
    pub success_radius: f64,
    pub max_steps: usize,
    pub substeps: usize,
    /// Physics step, s.
    pub h: f64,
    pub force_observation: bool,
    /// Contact force normalization scale, N.
    pub force_scale: f64,
    /// Pre-roll cap, physics steps.
    pub settle_steps: usize,
}

impl SceneConfig {
    fn default_elasticity() -> Elasticity {
        Elasticity::Linear
    }

    /// Full-size defaults for the procedural cavity.
    pub fn standard() -> Self {
        Self {
            config_version: CONFIG_VERSION,
            seed: 0,
            variant: Variant::De,
            target_set: TargetSetId::A,
            mesh: Some(MeshSource::Procedural(CavitySpec::default())),
            material: MaterialParams::default(),
            elasticity: Elasticity::Linear,
            fixed_indices: None,
            force_indices: None,
            f0: [0.0, -1.0, 0.0],
            period: 20,
            gravity: default_gravity(),
            contact: ContactParams::default(),
            endoscope: EndoscopeModel {
                passive_length: 60.0,
                active_length: 40.0,
                cable_limit: 1.5 * std::f64::consts::PI,
                ..Default::default()
            },
            tip_start_x: 52.0,
            insertion_start: 5.0,
            insertion_max: 40.0,
            target_x_range: [30.0, 75.0],
            target_reach_insertion: 20.0,
            free_target_margin: 3.0,
            free_target_count: 64,
            boundary_x: 15.0,
            success_radius: 3.0,
            max_steps: 128,
            substeps: 12,
            h: 0.02,
            force_observation: true,
            force_scale: 5.0,
            settle_steps: 500,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, EnvError> {
        let cfg: SceneConfig = toml::from_str(text).map_err(|e| EnvError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scene config serializes")
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: String| Err(EnvError::Config(m));
        if self.config_version != CONFIG_VERSION {
            return bad(format!("config_version {} unsupported (expected {CONFIG_VERSION})", self.config_version));
        }
        if self.mesh.is_none() {
            return bad("mesh: no mesh file and no procedural spec".into());
        }
        self.material.validate().map_err(|e| EnvError::Config(format!("material: {e}")))?;
        self.contact.validate().map_err(|e| EnvError::Config(format!("contact: {e}")))?;
        self.endoscope.validate().map_err(|e| EnvError::Config(format!("endoscope: {e}")))?;
        if !(self.success_radius > 0.0) {
            return bad("success_radius must be > 0".into());
        }
        if self.substeps == 0 {
            return bad("substeps must be >= 1".into());
        }
        if !(self.h > 0.0) {
            return bad("h must be > 0".into());
        }
        if self.period == 0 {
            return bad("period must be >= 1".into());
        }
        if self.max_steps == 0 {
            return bad("max_steps must be >= 1".into());
        }
        if !(self.force_scale > 0.0) {
            return bad("force_scale must be > 0".into());
        }
        if !(0.0 <= self.insertion_start && self.insertion_start <= self.insertion_max) {
            return bad("insertion_start must lie in [0, insertion_max]".into());
        }
        if self.insertion_max > self.endoscope.passive_length {
            return bad("insertion_max exceeds the passive length".into());
        }
        if self.target_x_range[0] > self.target_x_range[1] {
            return bad("target_x_range must be ordered".into());
        }
        if self.free_target_count == 0 {
            return bad("free_target_count must be >= 1".into());
        }
        Ok(())
    }

    pub fn physics_per_step(&self) -> f64 {
        self.h * self.substeps as f64
    }
}

/// Variant-controlled fields: collision and targets for FE, force level and
/// target set for the others.
pub fn make_variant(base: &SceneConfig, variant: Variant) -> SceneConfig {
    let mut c = base.clone();
    c.variant = variant;
    let scale = match variant {
        Variant::Fe | Variant::Se => 0.0,
        Variant::De => 1.0,
        Variant::Ue1 => 2.0,
        Variant::Ue2 => 3.0,
    };
    c.f0 = base.f0.map(|f| f * scale);
    c.target_set = match variant {
        Variant::Ue1 | Variant::Ue2 => TargetSetId::B,
        _ => TargetSetId::A,
    };
    c
}

/// Eq.-5 alternation: `+f0` while `floor(t / T)` is even, `-f0` otherwise.
pub fn periodic_force(t: usize, period: usize, f0: &Vec3) -> Vec3 {
    assert!(period >= 1, "period must be >= 1");
    if (t / period) % 2 == 0 {
        *f0
    } else {
        -f0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub p: Vec3,
    pub v: Vec3,
    pub cables: [f64; 4],
    pub axial_prev: f64,
    pub contact: f64,
    pub force: Vec3,
}

impl Observation {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut o = Vec::with_capacity(OBS_DIM);
        o.extend_from_slice(self.p.as_slice());
        o.extend_from_slice(self.v.as_slice());
        o.extend_from_slice(&self.cables);
        o.push(self.axial_prev);
        o.push(self.contact);
        o.extend_from_slice(self.force.as_slice());
        o
    }
}

/// Clamped normalization into the unit ball.
pub fn normalize_force(f: &Vec3, scale: f64) -> Vec3 {
    let n = f / scale;
    let norm = n.norm();
    if norm > 1.0 {
        n / norm
    } else {
        n
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub distance: f64,
    pub ee: Vec3,
    pub target: Vec3,
    pub force: Vec3,
    pub contact_count: usize,
    pub success: bool,
    pub boundary: bool,
    pub solver_warning: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
    pub info: StepInfo,
}

/// Reward and termination flags from distance and tip x.
/// Success takes precedence over the boundary test.
pub fn reward(distance: f64, ee_x: f64, boundary_x: f64, success_radius: f64) -> (f64, bool, bool) {
    let success = distance < success_radius;
    let boundary = !success && ee_x < boundary_x;
    let mut r = -distance;
    if boundary {
        r -= BOUNDARY_PENALTY;
    }
    if success {
        r += SUCCESS_BONUS;
    }
    (r, success, boundary)
}

#[derive(Debug, Clone)]
pub struct TargetSets {
    /// Wall vertex indices (empty in FE).
    pub wall_a: Vec<usize>,
    pub wall_b: Vec<usize>,
    pub free_a: Vec<Vec3>,
    pub free_b: Vec<Vec3>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    Vertex(usize),
    Point(Vec3),
}

/// Static geometry shared by every variant of a scene.
#[derive(Debug, Clone)]
pub struct SceneGeometry {
    pub mesh: TetMesh,
    pub inner: SurfaceMesh,
    pub fixed: Vec<usize>,
    pub force_nodes: Vec<usize>,
    pub targets: TargetSets,
    /// Entry opening: x of the innermost rim.
    pub entry_x: f64,
}

fn load_mesh(cfg: &SceneConfig) -> Result<(TetMesh, bool), EnvError> {
    match cfg.mesh.as_ref().ok_or_else(|| EnvError::Config("mesh: missing".into()))? {
        MeshSource::File { path } => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| EnvError::Config(format!("mesh file {}: {e}", path.display())))?;
            Ok((mesh::load_msh(&text)?, false))
        }
        MeshSource::Procedural(spec) => {
            let raw = mesh::generate_cavity(spec, cfg.seed)?;
            let flip = Matrix3::from_diagonal(&Vec3::new(-1.0, -1.0, 1.0));
            Ok((raw.transformed(&flip, &Vec3::new(spec.radii[0], 0.0, 0.0)), true))
        }
    }
}

fn inner_surface(mesh: &TetMesh) -> SurfaceMesh {
    let mut s = mesh::surface_of(mesh);
    if let Some(tags) = &mesh.tags {
        let keep: Vec<usize> = (0..s.triangles.len())
            .filter(|&t| s.triangles[t].iter().all(|&i| tags[i] == TAG_INNER))
            .collect();
        s.triangles = keep.iter().map(|&t| s.triangles[t]).collect();
        s.normals = keep.iter().map(|&t| s.normals[t]).collect();
        s.owner = keep.iter().map(|&t| s.owner[t]).collect();
    }
    s
}

/// Signed clearance of `p` from the inner wall (positive inside the lumen).
pub fn wall_clearance(p: &Vec3, wall: &SurfaceMesh) -> f64 {
    let mut best = f64::INFINITY;
    let mut sign = 1.0;
    for (t, tri) in wall.triangles.iter().enumerate() {
        let (q, _) = contact::closest_point_on_triangle(p, &wall.vertices[tri[0]], &wall.vertices[tri[1]], &wall.vertices[tri[2]]);
        let d = (p - q).norm();
        if d < best {
            best = d;
            sign = if (p - q).dot(&wall.normals[t]) >= 0.0 { 1.0 } else { -1.0 };
        }
    }
    sign * best
}

/// Tip of a constant-curvature active segment of length `len` starting at
/// `junction` along `+x`, bent by `theta` toward azimuth `phi`.
pub fn constant_curvature_tip(junction: &Vec3, len: f64, theta: f64, phi: f64) -> Vec3 {
    let (axial, lateral) = if theta.abs() < 1e-12 {
        (len, 0.0)
    } else {
        (len * theta.sin() / theta, len * (1.0 - theta.cos()) / theta)
    };
    junction + Vec3::new(axial, lateral * phi.cos(), lateral * phi.sin())
}

/// Area-weighted vertex normals of a surface (zero for unused vertices).
pub fn vertex_normals(surface: &SurfaceMesh) -> Vec<Vec3> {
    let mut n = vec![Vec3::zeros(); surface.vertices.len()];
    for tri in &surface.triangles {
        let [a, b, c] = tri.map(|i| surface.vertices[i]);
        let w = (b - a).cross(&(c - a));
        for &i in tri {
            n[i] += w;
        }
    }
    for v in &mut n {
        if v.norm() > 0.0 {
            v.normalize_mut();
        }
    }
    n
}

/// Best constant-curvature pose for reaching `q`: the junction starts at
/// `x0` on the axis and may advance by up to `travel`; bend up to a right
/// angle. Returns `(advance, theta, phi, error)`.
pub fn cc_inverse(q: &Vec3, x0: f64, travel: f64, len: f64) -> (f64, f64, f64, f64) {
    let phi = q.z.atan2(q.y);
    let mut best = (0.0, 0.0, phi, f64::INFINITY);
    let ns = (travel / 0.25).ceil().max(1.0) as usize;
    for i in 0..=ns {
        let adv = travel * i as f64 / ns as f64;
        let junction = Vec3::new(x0 + adv, 0.0, 0.0);
        for j in 0..=90 {
            let theta = std::f64::consts::FRAC_PI_2 * j as f64 / 90.0;
            let e = (constant_curvature_tip(&junction, len, theta, phi) - q).norm();
            if e < best.3 {
                best = (adv, theta, phi, e);
            }
        }
    }
    best
}

/// Smallest distance from `q` to a reachable constant-curvature tip.
pub fn cc_reach_error(q: &Vec3, x0: f64, travel: f64, len: f64) -> f64 {
    cc_inverse(q, x0, travel, len).3
}

/// Cable lengths producing bend `theta` toward azimuth `phi` (measured
/// from `+y` toward `+z`).
pub fn cables_for_bend(theta: f64, phi: f64, moment_arm: f64) -> [f64; 4] {
    let ty = -theta * phi.sin();
    let tz = theta * phi.cos();
    [moment_arm * ty, moment_arm * tz, -moment_arm * ty, -moment_arm * tz]
}

impl SceneGeometry {
    pub fn build(cfg: &SceneConfig) -> Result<Self, EnvError> {
        cfg.validate()?;
        let (mesh, procedural) = load_mesh(cfg)?;
        let n = mesh.vertices.len();
        let inner = inner_surface(&mesh);
        let entry_x = inner
            .vertex_indices()
            .iter()
            .map(|&i| mesh.vertices[i].x)
            .fold(f64::INFINITY, f64::min);
        let tags = mesh.tags.clone().unwrap_or_else(|| vec![TAG_INNER; n]);
        let (lo, hi) = mesh.bounds();

        let fixed = match &cfg.fixed_indices {
            Some(ix) => ix.clone(),
            None if procedural => {
                let rim = entry_x + 1e-6;
                let outer_rim = (0..n)
                    .filter(|&i| tags[i] == TAG_OUTER)
                    .map(|i| mesh.vertices[i].x)
                    .fold(f64::INFINITY, f64::min)
                    + 1e-6;
                let far = lo.x + 0.9 * (hi.x - lo.x);
                (0..n)
                    .filter(|&i| {
                        let x = mesh.vertices[i].x;
                        (tags[i] == TAG_INNER && x <= rim) || (tags[i] == TAG_OUTER && (x <= outer_rim || x >= far))
                    })
                    .collect()
            }
            None => return Err(EnvError::Config("fixed_indices required for file meshes".into())),
        };
        let force_nodes = match &cfg.force_indices {
            Some(ix) => ix.clone(),
            None if procedural => {
                let cx = 0.5 * (lo.x + hi.x);
                [hi.y, lo.y]
                    .iter()
                    .map(|&y| {
                        let goal = Vec3::new(cx, y, 0.0);
                        (0..n)
                            .filter(|&i| tags[i] == TAG_OUTER)
                            .min_by(|&a, &b| {
                                (mesh.vertices[a] - goal)
                                    .norm()
                                    .total_cmp(&(mesh.vertices[b] - goal).norm())
                                    .then(a.cmp(&b))
                            })
                            .unwrap()
                    })
                    .collect()
            }
            None => return Err(EnvError::Config("force_indices required for file meshes".into())),
        };
        for (name, list) in [("fixed_indices", &fixed), ("force_indices", &force_nodes)] {
            if let Some(&bad) = list.iter().find(|&&i| i >= n) {
                return Err(EnvError::Config(format!("{name}: node {bad} out of range (mesh has {n} nodes)")));
            }
        }
        if cfg.boundary_x < lo.x || cfg.boundary_x > hi.x {
            return Err(EnvError::Config(format!(
                "boundary_x {} outside mesh x-extent [{}, {}]",
                cfg.boundary_x, lo.x, hi.x
            )));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7461_7267_6574_73);
        let mut fixed_mask = vec![false; n];
        for &i in &fixed {
            fixed_mask[i] = true;
        }
        let min_x = entry_x + 2.0 * cfg.contact.contact_distance;
        let s_hi = (cfg.insertion_start + cfg.target_reach_insertion).min(cfg.insertion_max);
        let active = cfg.endoscope.active_length;
        let junction_x = |s: f64| cfg.tip_start_x - cfg.insertion_start + s - active;
        let standoff = cfg.endoscope.radius + cfg.contact.contact_distance;
        let normals = vertex_normals(&inner);
        let mut wall: Vec<usize> = inner
            .vertex_indices()
            .into_iter()
            .filter(|&i| {
                let x = mesh.vertices[i].x;
                if fixed_mask[i] || x < cfg.target_x_range[0] || x > cfg.target_x_range[1] || x < min_x {
                    return false;
                }
                let q = mesh.vertices[i] + normals[i] * standoff;
                cc_reach_error(&q, junction_x(cfg.insertion_start), s_hi - cfg.insertion_start, active) < 1.0
            })
            .collect();
        wall.shuffle(&mut rng);
        let wall_a: Vec<usize> = wall.iter().step_by(2).copied().collect();
        let wall_b: Vec<usize> = wall.iter().skip(1).step_by(2).copied().collect();

        let mut free = Vec::new();
        let mut attempts = 0;
        while free.len() < 2 * cfg.free_target_count && attempts < 200_000 {
            attempts += 1;
            let s = rng.random_range(cfg.insertion_start..=s_hi);
            let theta = rng.random_range(0.0..std::f64::consts::FRAC_PI_2);
            let phi = rng.random_range(0.0..std::f64::consts::TAU);
            let p = constant_curvature_tip(&Vec3::new(junction_x(s), 0.0, 0.0), active, theta, phi);
            if p.x < cfg.boundary_x + cfg.success_radius {
                continue;
            }
            if wall_clearance(&p, &inner) >= cfg.free_target_margin {
                free.push(p);
            }
        }
        if free.len() < 2 * cfg.free_target_count {
            return Err(EnvError::Config("could not place free-space targets inside the cavity".into()));
        }
        let free_a: Vec<Vec3> = free.iter().step_by(2).copied().collect();
        let free_b: Vec<Vec3> = free.iter().skip(1).step_by(2).copied().collect();

        Ok(Self {
            mesh,
            inner,
            fixed,
            force_nodes,
            targets: TargetSets {
                wall_a,
                wall_b,
                free_a,
                free_b,
            },
            entry_x,
        })
    }
}

#[derive(Debug, Clone)]
struct WallState {
    body: DeformableBody,
    gravity: Vec<f64>,
    settled_u: Vec<f64>,
    settled_v: Vec<f64>,
}

/// One simulated scene; owns its wall, rod and episode state.
#[derive(Debug, Clone)]
pub struct Scene {
    pub config: SceneConfig,
    pub geometry: SceneGeometry,
    wall: Option<WallState>,
    surface: SurfaceMesh,
    pub rod: Rod,
    rod_settled: Rod,
    pub act: ActuationState,
    target: Option<Target>,
    step_count: usize,
    finished: bool,
    last_report: ContactReport,
    rod_gravity: Vec<Vec3>,
}

/// Candidates within the alarm distance, plus front-facing ones the rod and
/// wall could close on within this substep. When the squeezed wall snaps
/// toward the rod it can travel further than the alarm distance in one
/// substep; such pairs enter the solve with `gap >= 0`, which only limits
/// the approach to the gap and never pushes the bodies apart.
fn speculative_candidates(
    rod: &Rod,
    wall: &DeformableBody,
    surface: &SurfaceMesh,
    params: &ContactParams,
    h: f64,
) -> Vec<contact::Candidate> {
    let spheres = rod.spheres();
    let rod_speed = rod.v.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let reach = h * (rod_speed + wall.max_speed());
    if reach <= 0.0 {
        return contact::detect(&spheres, surface, params);
    }
    let wide = ContactParams {
        alarm_distance: params.alarm_distance + reach,
        ..params.clone()
    };
    contact::detect(&spheres, surface, &wide)
        .into_iter()
        .filter(|c| {
            let r = spheres[c.node].1;
            c.gap >= 0.0 || (c.gap + r).abs() - r < params.alarm_distance
        })
        .collect()
}

impl Scene {
    pub fn build(config: SceneConfig) -> Result<Self, EnvError> {
        let geometry = SceneGeometry::build(&config)?;
        Self::with_geometry(config, geometry)
    }

    /// Builds a scene reusing precomputed geometry (identical for all
    /// variants of one base config).
    pub fn with_geometry(config: SceneConfig, geometry: SceneGeometry) -> Result<Self, EnvError> {
        config.validate()?;
        let g = Vec3::from(config.gravity);
        let wall = if config.variant == Variant::Fe {
            None
        } else {
            let mut body = DeformableBody::new(geometry.mesh.clone(), config.material.clone(), config.elasticity)
                .map_err(|e| EnvError::Config(format!("wall: {e}")))?;
            body.apply_fixed_constraints(&geometry.fixed)
                .map_err(|e| EnvError::Config(format!("fixed_indices: {e}")))?;
            let gravity: Vec<f64> = body.mass.iter().flat_map(|&m| [m * g.x, m * g.y, m * g.z]).collect();
            body.f_ext.copy_from_slice(&gravity);
            let h = config.h;
            // Long backward Euler steps converge to the static equilibrium;
            // the regular pre-roll below then only confirms it.
            for _ in 0..20 {
                body.step_implicit(SETTLE_STEP, None).map_err(|e| EnvError::Runtime(e.to_string()))?;
                if body.max_speed() * SETTLE_STEP < 1e-9 {
                    break;
                }
            }
            let zero = vec![0.0; body.v.len()];
            let u = body.u.clone();
            body.set_state(&u, &zero);
            for _ in 0..config.settle_steps {
                body.step_implicit(h, None).map_err(|e| EnvError::Runtime(e.to_string()))?;
                if body.max_speed() < 1e-3 {
                    break;
                }
            }
            body.precompute_compliance(h, &geometry.inner.vertex_indices())
                .map_err(|e| EnvError::Runtime(e.to_string()))?;
            Some(WallState {
                settled_u: body.u.clone(),
                settled_v: body.v.clone(),
                body,
                gravity,
            })
        };
        let mut surface = geometry.inner.clone();
        if let Some(w) = &wall {
            surface.update_positions(&w.body.positions());
        }

        let model = config.endoscope.clone();
        let base_origin = Vec3::new(config.tip_start_x - config.insertion_start - model.total_length(), 0.0, 0.0);
        let rod = Rod::new(model, base_origin, Matrix3::identity(), config.insertion_start).map_err(EnvError::Config)?;
        // The inserted rod is carried by its channel; gravity acts on the wall only.
        let rod_gravity = vec![Vec3::zeros(); rod.node_count()];
        let act = ActuationState::new(config.insertion_start, (0.0, config.insertion_max), config.endoscope.cable_limit);
        let rod_settled = rod.clone();
        let mut scene = Self {
            config,
            geometry,
            wall,
            surface,
            rod,
            rod_settled,
            act,
            target: None,
            step_count: 0,
            finished: true,
            last_report: ContactReport::default(),
            rod_gravity,
        };
        scene.check_entry_clearance()?;
        Ok(scene)
    }

    fn check_entry_clearance(&mut self) -> Result<(), EnvError> {
        if self.wall.is_none() {
            return Ok(());
        }
        let cands = contact::detect(&self.rod.spheres(), &self.surface, &self.config.contact);
        if !cands.is_empty() {
            return Err(EnvError::Config(format!(
                "endoscope start pose is within the alarm distance of the wall (node {})",
                cands[0].node
            )));
        }
        Ok(())
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn step_count(&self) -> usize {
        self.step_count
    }

    pub fn wall(&self) -> Option<&DeformableBody> {
        self.wall.as_ref().map(|w| &w.body)
    }

    /// Current inner wall surface (deformed in wall variants).
    pub fn surface(&self) -> &SurfaceMesh {
        &self.surface
    }

    pub fn last_report(&self) -> &ContactReport {
        &self.last_report
    }

    pub fn target(&self) -> Option<Target> {
        self.target
    }

    pub fn target_position(&self) -> Vec3 {
        match self.target.expect("scene reset") {
            Target::Point(p) => p,
            Target::Vertex(i) => match &self.wall {
                Some(w) => w.body.position(i),
                None => self.geometry.mesh.vertices[i],
            },
        }
    }

    fn target_pool_len(&self) -> usize {
        let t = &self.geometry.targets;
        match (self.config.variant, self.config.target_set) {
            (Variant::Fe, TargetSetId::A) => t.free_a.len(),
            (Variant::Fe, TargetSetId::B) => t.free_b.len(),
            (_, TargetSetId::A) => t.wall_a.len(),
            (_, TargetSetId::B) => t.wall_b.len(),
        }
    }

    fn target_from_pool(&self, k: usize) -> Target {
        let t = &self.geometry.targets;
        match (self.config.variant, self.config.target_set) {
            (Variant::Fe, TargetSetId::A) => Target::Point(t.free_a[k]),
            (Variant::Fe, TargetSetId::B) => Target::Point(t.free_b[k]),
            (_, TargetSetId::A) => Target::Vertex(t.wall_a[k]),
            (_, TargetSetId::B) => Target::Vertex(t.wall_b[k]),
        }
    }

    /// Restores the settled wall and straight rod, draws a target.
    pub fn reset(&mut self, seed: u64) -> Result<Observation, EnvError> {
        let n = self.target_pool_len();
        if n == 0 {
            return Err(EnvError::Config("target set is empty".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = rng.random_range(0..n);
        self.reset_with_target(self.target_from_pool(k))
    }

    pub fn reset_with_target(&mut self, target: Target) -> Result<Observation, EnvError> {
        if let Some(w) = &mut self.wall {
            w.body.set_state(&w.settled_u, &w.settled_v);
            w.body.f_ext.copy_from_slice(&w.gravity);
            self.surface.update_positions(&w.body.positions());
        }
        self.rod.clone_from(&self.rod_settled);
        self.act = ActuationState::new(
            self.config.insertion_start,
            (0.0, self.config.insertion_max),
            self.config.endoscope.cable_limit,
        );
        self.target = Some(target);
        self.step_count = 0;
        self.finished = false;
        self.last_report = ContactReport::default();
        Ok(self.observe())
    }

    pub fn observe(&self) -> Observation {
        let (ee, v) = self.rod.ee_state();
        let (contact, force) = if self.config.force_observation {
            (
                if self.last_report.any_contact { 1.0 } else { 0.0 },
                normalize_force(&self.last_report.resultant, self.config.force_scale),
            )
        } else {
            (0.0, Vec3::zeros())
        };
        Observation {
            p: self.target_position() - ee,
            v,
            cables: self.act.cables,
            axial_prev: self.act.last_axial_action,
            contact,
            force,
        }
    }

    fn apply_wall_load(&mut self, t: usize) {
        let f = periodic_force(t, self.config.period, &Vec3::from(self.config.f0));
        if let Some(w) = &mut self.wall {
            w.body.f_ext.copy_from_slice(&w.gravity);
            for &i in &self.geometry.force_nodes {
                for d in 0..3 {
                    w.body.f_ext[3 * i + d] += f[d];
                }
            }
        }
    }

    /// One physics substep with the base moving to insertion `s`.
    fn substep(&mut self, s: f64) -> Result<ContactReport, EnvError> {
        let h = self.config.h;
        let rt = |e: String| EnvError::Runtime(e);
        self.rod.solve_velocity(h, &self.act, s, &self.rod_gravity).map_err(rt)?;
        let mut report = ContactReport::default();
        if let Some(w) = &mut self.wall {
            w.body.solve_velocity(h, None).map_err(|e| EnvError::Runtime(e.to_string()))?;
            let cands = speculative_candidates(&self.rod, &w.body, &self.surface, &self.config.contact, h);
            let cands = contact::prune_candidates(cands, CONTACTS_PER_NODE, 10.0);
            if !cands.is_empty() {
                let nodes: Vec<usize> = cands.iter().map(|c| c.node).collect();
                self.rod.prepare_compliance(&nodes);
                let sol = contact::solve_contacts(&cands, &mut self.rod, &mut w.body, &self.surface, &self.config.contact, h)
                    .map_err(rt)?;
                report = contact::report(&sol.points, &self.config.contact, h);
                report.not_converged = !sol.converged;
            }
            w.body.integrate_positions(h);
            self.surface.update_positions(&w.body.positions());
        }
        self.rod.integrate_positions(h, s);
        Ok(report)
    }

    pub fn step(&mut self, action: &[f64]) -> Result<StepResult, EnvError> {
        if self.finished {
            return Err(EnvError::Usage("step called on a finished episode; call reset".into()));
        }
        let action: [f64; ACT_DIM] = action
            .try_into()
            .map_err(|_| EnvError::Usage(format!("action must have {ACT_DIM} components, got {}", action.len())))?;
        let next = endoscope::apply_action(&self.act, &action);
        let s0 = self.act.insertion;
        let s1 = next.insertion;
        self.act = next;
        self.apply_wall_load(self.step_count);
        let n = self.config.substeps;
        let mut report = ContactReport::default();
        let mut warning = false;
        for k in 1..=n {
            let s = if k == n { s1 } else { s0 + (s1 - s0) * k as f64 / n as f64 };
            report = self.substep(s)?;
            warning |= report.not_converged;
        }
        self.last_report = report;
        self.step_count += 1;

        let (ee, _) = self.rod.ee_state();
        let target = self.target_position();
        let distance = (target - ee).norm();
        if !distance.is_finite() {
            return Err(EnvError::Runtime("non-finite end-effector state".into()));
        }
        let (r, success, boundary) = reward(distance, ee.x, self.config.boundary_x, self.config.success_radius);
        let terminated = success || boundary;
        let truncated = !terminated && self.step_count >= self.config.max_steps;
        self.finished = terminated || truncated;
        Ok(StepResult {
            observation: self.observe(),
            reward: r,
            terminated,
            truncated,
            info: StepInfo {
                distance,
                ee,
                target,
                force: self.last_report.resultant,
                contact_count: self.last_report.points.len(),
                success,
                boundary,
                solver_warning: warning,
            },
        })
    }
}

/// One environment transition as seen by a learner.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
    pub success: bool,
}

/// Minimal episodic interface shared by the scene and test environments.
pub trait Environment {
    fn obs_dim(&self) -> usize;
    fn act_dim(&self) -> usize;
    fn reset(&mut self, seed: u64) -> Result<Vec<f64>, EnvError>;
    fn step(&mut self, action: &[f64]) -> Result<Transition, EnvError>;
}

impl Environment for Scene {
    fn obs_dim(&self) -> usize {
        OBS_DIM
    }

    fn act_dim(&self) -> usize {
        ACT_DIM
    }

    fn reset(&mut self, seed: u64) -> Result<Vec<f64>, EnvError> {
        Scene::reset(self, seed).map(|o| o.to_vec())
    }

    fn step(&mut self, action: &[f64]) -> Result<Transition, EnvError> {
        let r = Scene::step(self, action)?;
        Ok(Transition {
            obs: r.observation.to_vec(),
            reward: r.reward,
            terminated: r.terminated,
            truncated: r.truncated,
            success: r.info.success,
        })
    }
}

#[cfg(test)]
mod tests;
