//! Sphere-chain versus triangle-wall proximity and velocity-level frictional
//! contact.
//!
//! Each robot node carries a sphere. Candidate pairs within the alarm
//! distance become unilateral constraints `0 <= lambda_n _|_ (u_n - target) >= 0`
//! on the relative normal velocity, solved together with a Coulomb disk by
//! projected Gauss-Seidel on the Delassus operator assembled from both
//! bodies' compliance blocks.

use std::collections::HashMap;

use nalgebra::{DMatrix, Matrix3, Vector2};
use serde::{Deserialize, Serialize};

use crate::mesh::{SurfaceMesh, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactParams {
    /// mm
    pub alarm_distance: f64,
    /// mm
    pub contact_distance: f64,
    pub friction_coef: f64,
    pub pgs_iterations: usize,
    /// N s
    pub pgs_tolerance: f64,
}

impl Default for ContactParams {
    fn default() -> Self {
        Self {
            alarm_distance: 2.0,
            contact_distance: 0.5,
            friction_coef: 0.1,
            pgs_iterations: 50,
            pgs_tolerance: 1e-6,
        }
    }
}

impl ContactParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.contact_distance > 0.0 && self.alarm_distance > self.contact_distance) {
            return Err("contact parameters need alarm_distance > contact_distance > 0".into());
        }
        if !(self.friction_coef >= 0.0 && self.friction_coef.is_finite()) {
            return Err("friction_coef must be >= 0".into());
        }
        if self.pgs_iterations == 0 || !(self.pgs_tolerance > 0.0) {
            return Err("PGS needs at least one iteration and a positive tolerance".into());
        }
        Ok(())
    }

    fn slop(&self) -> f64 {
        0.1 * self.contact_distance
    }
}

/// A robot sphere near a wall triangle.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub node: usize,
    pub triangle: usize,
    pub closest: Vec3,
    /// Barycentric weights of `closest` on the triangle's vertices.
    pub bary: [f64; 3],
    /// Unit normal pointing from the wall into free space.
    pub normal: Vec3,
    /// Signed surface distance minus radius, mm.
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactPoint {
    pub node: usize,
    pub triangle: usize,
    pub normal: Vec3,
    pub gap: f64,
    /// Normal impulse, N s.
    pub lambda_n: f64,
    /// Tangential impulse in the point's tangent basis, N s.
    pub lambda_t: Vector2<f64>,
    pub tangent: [Vec3; 2],
}

impl ContactPoint {
    /// Impulse on the robot node, world frame.
    pub fn impulse(&self) -> Vec3 {
        self.normal * self.lambda_n + self.tangent[0] * self.lambda_t.x + self.tangent[1] * self.lambda_t.y
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ContactReport {
    pub any_contact: bool,
    /// Force on the robot, N.
    pub resultant: Vec3,
    pub points: Vec<ContactPoint>,
    /// PGS hit its iteration cap.
    pub not_converged: bool,
}

/// Closest point on triangle `abc` to `p` with its barycentric weights.
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> (Vec3, [f64; 3]) {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (*a, [1.0, 0.0, 0.0]);
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (*b, [0.0, 1.0, 0.0]);
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (a + ab * v, [1.0 - v, v, 0.0]);
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (*c, [0.0, 0.0, 1.0]);
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (a + ac * w, [1.0 - w, 0.0, w]);
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (b + (c - b) * w, [0.0, 1.0 - w, w]);
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (a + ab * v + ac * w, [1.0 - v - w, v, w])
}

/// Candidate for one sphere/triangle pair, if the unsigned surface distance
/// minus radius is below `alarm`. The returned gap is signed: negative when
/// the center lies behind the face.
pub fn sphere_triangle(center: &Vec3, radius: f64, wall: &SurfaceMesh, triangle: usize, alarm: f64) -> Option<(Vec3, [f64; 3], Vec3, f64)> {
    let [ia, ib, ic] = wall.triangles[triangle];
    let (q, bary) = closest_point_on_triangle(center, &wall.vertices[ia], &wall.vertices[ib], &wall.vertices[ic]);
    let d = center - q;
    let dist = d.norm();
    let face_normal = wall.normals[triangle];
    let in_front = d.dot(&face_normal) >= 0.0;
    let signed = if in_front { dist } else { -dist };
    if dist - radius >= alarm {
        return None;
    }
    let gap = signed - radius;
    let normal = if in_front && dist > 1e-12 { d / dist } else { face_normal };
    Some((q, bary, normal, gap))
}

/// Uniform grid over triangle bounding boxes.
#[derive(Debug, Clone)]
pub struct TriangleGrid {
    cell: f64,
    cells: HashMap<[i64; 3], Vec<usize>>,
}

impl TriangleGrid {
    pub fn build(wall: &SurfaceMesh, cell: f64) -> Self {
        let mut cells: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        for (t, tri) in wall.triangles.iter().enumerate() {
            let mut lo = wall.vertices[tri[0]];
            let mut hi = lo;
            for &i in &tri[1..] {
                lo = lo.inf(&wall.vertices[i]);
                hi = hi.sup(&wall.vertices[i]);
            }
            let (a, b) = (key(&lo, cell), key(&hi, cell));
            for x in a[0]..=b[0] {
                for y in a[1]..=b[1] {
                    for z in a[2]..=b[2] {
                        cells.entry([x, y, z]).or_default().push(t);
                    }
                }
            }
        }
        Self { cell, cells }
    }

    /// Triangles whose boxes may intersect the box `[lo, hi]`, ascending.
    pub fn query(&self, lo: &Vec3, hi: &Vec3) -> Vec<usize> {
        let (a, b) = (key(lo, self.cell), key(hi, self.cell));
        let mut out = Vec::new();
        for x in a[0]..=b[0] {
            for y in a[1]..=b[1] {
                for z in a[2]..=b[2] {
                    if let Some(ts) = self.cells.get(&[x, y, z]) {
                        out.extend_from_slice(ts);
                    }
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

fn key(p: &Vec3, cell: f64) -> [i64; 3] {
    [(p.x / cell).floor() as i64, (p.y / cell).floor() as i64, (p.z / cell).floor() as i64]
}

/// Grid cell edge used by [`detect`]: the mean triangle bounding-box extent,
/// at least the query reach.
pub fn default_cell_size(wall: &SurfaceMesh, reach: f64) -> f64 {
    if wall.triangles.is_empty() {
        return reach.max(1.0);
    }
    let total: f64 = wall
        .triangles
        .iter()
        .map(|tri| {
            let mut lo = wall.vertices[tri[0]];
            let mut hi = lo;
            for &i in &tri[1..] {
                lo = lo.inf(&wall.vertices[i]);
                hi = hi.sup(&wall.vertices[i]);
            }
            (hi - lo).max()
        })
        .sum();
    (total / wall.triangles.len() as f64).max(reach).max(1e-6)
}

/// All sphere/triangle pairs closer than the alarm distance, sorted by
/// `(node, triangle)`.
pub fn detect(spheres: &[(Vec3, f64)], wall: &SurfaceMesh, params: &ContactParams) -> Vec<Candidate> {
    if wall.triangles.len() * spheres.len() > GRID_THRESHOLD {
        let max_r = spheres.iter().map(|s| s.1).fold(0.0, f64::max);
        let grid = TriangleGrid::build(wall, default_cell_size(wall, max_r + params.alarm_distance));
        return detect_with_grid(spheres, wall, &grid, params);
    }
    let boxes: Vec<(Vec3, Vec3)> = wall
        .triangles
        .iter()
        .map(|tri| {
            let [a, b, c] = tri.map(|i| wall.vertices[i]);
            (a.inf(&b).inf(&c), a.sup(&b).sup(&c))
        })
        .collect();
    let mut out = Vec::new();
    for (node, (center, radius)) in spheres.iter().enumerate() {
        let reach = Vec3::repeat(radius + params.alarm_distance);
        let (lo, hi) = (center - reach, center + reach);
        for (t, (blo, bhi)) in boxes.iter().enumerate() {
            if blo.x > hi.x || blo.y > hi.y || blo.z > hi.z || bhi.x < lo.x || bhi.y < lo.y || bhi.z < lo.z {
                continue;
            }
            if let Some((closest, bary, normal, gap)) = sphere_triangle(center, *radius, wall, t, params.alarm_distance) {
                out.push(Candidate {
                    node,
                    triangle: t,
                    closest,
                    bary,
                    normal,
                    gap,
                });
            }
        }
    }
    out
}

/// Sphere-triangle pair count above which [`detect`] builds a grid.
const GRID_THRESHOLD: usize = 20_000;

pub fn detect_with_grid(spheres: &[(Vec3, f64)], wall: &SurfaceMesh, grid: &TriangleGrid, params: &ContactParams) -> Vec<Candidate> {
    let mut out = Vec::new();
    for (node, (center, radius)) in spheres.iter().enumerate() {
        let reach = Vec3::repeat(radius + params.alarm_distance);
        for t in grid.query(&(center - reach), &(center + reach)) {
            if let Some((closest, bary, normal, gap)) = sphere_triangle(center, *radius, wall, t, params.alarm_distance) {
                out.push(Candidate {
                    node,
                    triangle: t,
                    closest,
                    bary,
                    normal,
                    gap,
                });
            }
        }
    }
    out
}

/// O(n m) reference for [`detect`].
pub fn detect_brute_force(spheres: &[(Vec3, f64)], wall: &SurfaceMesh, params: &ContactParams) -> Vec<Candidate> {
    let mut out = Vec::new();
    for (node, (center, radius)) in spheres.iter().enumerate() {
        for t in 0..wall.triangles.len() {
            if let Some((closest, bary, normal, gap)) = sphere_triangle(center, *radius, wall, t, params.alarm_distance) {
                out.push(Candidate {
                    node,
                    triangle: t,
                    closest,
                    bary,
                    normal,
                    gap,
                });
            }
        }
    }
    out
}

/// Keeps, per node, the closest candidates whose normals differ by more than
/// `min_angle_deg` from every kept one, at most `max_per_node`. Neighbouring
/// triangles of a smooth wall otherwise yield near-duplicate constraints.
pub fn prune_candidates(candidates: Vec<Candidate>, max_per_node: usize, min_angle_deg: f64) -> Vec<Candidate> {
    let cos_limit = min_angle_deg.to_radians().cos();
    let mut out = Vec::with_capacity(candidates.len());
    let mut start = 0;
    while start < candidates.len() {
        let node = candidates[start].node;
        let mut end = start;
        while end < candidates.len() && candidates[end].node == node {
            end += 1;
        }
        let mut group: Vec<&Candidate> = candidates[start..end].iter().collect();
        group.sort_by(|a, b| a.gap.total_cmp(&b.gap).then(a.triangle.cmp(&b.triangle)));
        let mut kept: Vec<&Candidate> = Vec::new();
        for c in group {
            if kept.len() >= max_per_node {
                break;
            }
            if kept.iter().all(|k| k.normal.dot(&c.normal) < cos_limit) {
                kept.push(c);
            }
        }
        kept.sort_by_key(|c| c.triangle);
        out.extend(kept.into_iter().cloned());
        start = end;
    }
    out
}

/// A body taking part in the contact solve.
pub trait ContactBody {
    fn node_velocity(&self, node: usize) -> Vec3;
    /// Velocity change at `a` per unit impulse at `b`.
    fn compliance(&self, a: usize, b: usize) -> Matrix3<f64>;
    fn apply_node_impulses(&mut self, impulses: &[(usize, Vec3)]) -> Result<(), String>;
}

/// Independent point masses; a mass of `f64::INFINITY` pins the node.
#[derive(Debug, Clone)]
pub struct PointMasses {
    pub mass: Vec<f64>,
    pub velocity: Vec<Vec3>,
}

impl ContactBody for PointMasses {
    fn node_velocity(&self, node: usize) -> Vec3 {
        self.velocity[node]
    }

    fn compliance(&self, a: usize, b: usize) -> Matrix3<f64> {
        if a == b {
            Matrix3::identity() / self.mass[a]
        } else {
            Matrix3::zeros()
        }
    }

    fn apply_node_impulses(&mut self, impulses: &[(usize, Vec3)]) -> Result<(), String> {
        for (i, p) in impulses {
            self.velocity[*i] += p / self.mass[*i];
        }
        Ok(())
    }
}

/// Immovable wall.
#[derive(Debug, Clone, Copy, Default)]
pub struct RigidWall;

impl ContactBody for RigidWall {
    fn node_velocity(&self, _: usize) -> Vec3 {
        Vec3::zeros()
    }

    fn compliance(&self, _: usize, _: usize) -> Matrix3<f64> {
        Matrix3::zeros()
    }

    fn apply_node_impulses(&mut self, _: &[(usize, Vec3)]) -> Result<(), String> {
        Ok(())
    }
}

impl ContactBody for crate::fem::DeformableBody {
    fn node_velocity(&self, node: usize) -> Vec3 {
        self.velocity(node)
    }

    fn compliance(&self, a: usize, b: usize) -> Matrix3<f64> {
        self.compliance_block(a, b)
    }

    fn apply_node_impulses(&mut self, impulses: &[(usize, Vec3)]) -> Result<(), String> {
        if impulses.is_empty() {
            return Ok(());
        }
        let mut p = vec![0.0; self.u.len()];
        for (i, imp) in impulses {
            for d in 0..3 {
                p[3 * i + d] += imp[d];
            }
        }
        self.apply_impulses(&p).map_err(|e| e.to_string())
    }
}

fn tangent_basis(n: &Vec3) -> [Vec3; 2] {
    let helper = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let t1 = n.cross(&helper).normalize();
    let t2 = n.cross(&t1);
    [t1, t2]
}

#[derive(Debug, Clone)]
pub struct ContactSolution {
    /// One entry per candidate, in candidate order.
    pub points: Vec<ContactPoint>,
    pub iterations: usize,
    pub converged: bool,
    pub robot_impulses: Vec<(usize, Vec3)>,
    pub wall_impulses: Vec<(usize, Vec3)>,
}

/// Normal target velocity: speculative approach allowance while separated,
/// soft push-out beyond the slop while penetrating.
pub fn target_normal_velocity(gap: f64, h: f64, params: &ContactParams) -> f64 {
    if gap >= 0.0 {
        -gap / h
    } else {
        0.2 * (-gap - params.slop()).max(0.0) / h
    }
}

/// Solves the frictional contact problem and applies the impulses to both
/// bodies.
pub fn solve_contacts<R: ContactBody, W: ContactBody>(
    candidates: &[Candidate],
    robot: &mut R,
    wall: &mut W,
    wall_mesh: &SurfaceMesh,
    params: &ContactParams,
    h: f64,
) -> Result<ContactSolution, String> {
    let sol = compute_impulses(candidates, robot, wall, wall_mesh, params, h)?;
    robot.apply_node_impulses(&sol.robot_impulses)?;
    wall.apply_node_impulses(&sol.wall_impulses)?;
    Ok(sol)
}

/// PGS solve without touching the bodies.
pub fn compute_impulses<R: ContactBody, W: ContactBody>(
    candidates: &[Candidate],
    robot: &R,
    wall: &W,
    wall_mesh: &SurfaceMesh,
    params: &ContactParams,
    h: f64,
) -> Result<ContactSolution, String> {
    if !(h > 0.0) {
        return Err(format!("time step {h} must be > 0"));
    }
    let m = candidates.len();
    let frames: Vec<[Vec3; 3]> = candidates
        .iter()
        .map(|c| {
            let [t1, t2] = tangent_basis(&c.normal);
            [c.normal, t1, t2]
        })
        .collect();
    let wall_nodes: Vec<[usize; 3]> = candidates.iter().map(|c| wall_mesh.triangles[c.triangle]).collect();

    // World-frame relative velocity (robot minus wall point) and Delassus blocks.
    let mut free = Vec::with_capacity(m);
    for (c, tri) in candidates.iter().zip(&wall_nodes) {
        let vw: Vec3 = (0..3).map(|k| wall.node_velocity(tri[k]) * c.bary[k]).sum();
        free.push(robot.node_velocity(c.node) - vw);
    }
    let mut w = DMatrix::<f64>::zeros(3 * m, 3 * m);
    for i in 0..m {
        for j in 0..m {
            let ci = &candidates[i];
            let cj = &candidates[j];
            let mut block = robot.compliance(ci.node, cj.node);
            for a in 0..3 {
                for b in 0..3 {
                    let s = ci.bary[a] * cj.bary[b];
                    if s != 0.0 {
                        block += wall.compliance(wall_nodes[i][a], wall_nodes[j][b]) * s;
                    }
                }
            }
            let fi = Matrix3::from_rows(&[
                frames[i][0].transpose(),
                frames[i][1].transpose(),
                frames[i][2].transpose(),
            ]);
            let fj = Matrix3::from_columns(&frames[j]);
            w.view_mut((3 * i, 3 * j), (3, 3)).copy_from(&(fi * block * fj));
        }
    }
    let mut u: Vec<f64> = Vec::with_capacity(3 * m);
    let mut target = Vec::with_capacity(m);
    for (i, c) in candidates.iter().enumerate() {
        for k in 0..3 {
            u.push(frames[i][k].dot(&free[i]));
        }
        target.push(target_normal_velocity(c.gap, h, params));
    }

    let mu = params.friction_coef;
    let mut lambda = vec![0.0; 3 * m];
    let mut converged = m == 0;
    let mut iterations = 0;
    while !converged && iterations < params.pgs_iterations {
        iterations += 1;
        let mut change: f64 = 0.0;
        for i in 0..m {
            let vel = |lambda: &[f64], r: usize| u[r] + (0..3 * m).map(|c| w[(r, c)] * lambda[c]).sum::<f64>();
            let wn = w[(3 * i, 3 * i)];
            if wn <= 0.0 {
                continue;
            }
            let un = vel(&lambda, 3 * i);
            let old_n = lambda[3 * i];
            let new_n = (old_n - (un - target[i]) / wn).max(0.0);
            lambda[3 * i] = new_n;
            change = change.max((new_n - old_n).abs());

            let old_t = Vector2::new(lambda[3 * i + 1], lambda[3 * i + 2]);
            let mut t = old_t;
            for k in 1..3 {
                let wt = w[(3 * i + k, 3 * i + k)];
                if wt > 0.0 {
                    let ut = vel(&lambda, 3 * i + k);
                    t[k - 1] = lambda[3 * i + k] - ut / wt;
                    lambda[3 * i + k] = t[k - 1];
                }
            }
            let limit = mu * new_n;
            let norm = t.norm();
            if norm > limit {
                t *= if norm > 0.0 { limit / norm } else { 0.0 };
            }
            lambda[3 * i + 1] = t.x;
            lambda[3 * i + 2] = t.y;
            change = change.max((t - old_t).amax());
        }
        converged = change < params.pgs_tolerance;
    }

    let mut points = Vec::with_capacity(m);
    let mut robot_impulses = Vec::with_capacity(m);
    let mut wall_impulses = Vec::with_capacity(3 * m);
    for (i, c) in candidates.iter().enumerate() {
        let p = ContactPoint {
            node: c.node,
            triangle: c.triangle,
            normal: c.normal,
            gap: c.gap,
            lambda_n: lambda[3 * i],
            lambda_t: Vector2::new(lambda[3 * i + 1], lambda[3 * i + 2]),
            tangent: [frames[i][1], frames[i][2]],
        };
        let imp = p.impulse();
        if imp != Vec3::zeros() {
            robot_impulses.push((c.node, imp));
            for k in 0..3 {
                if c.bary[k] != 0.0 {
                    wall_impulses.push((wall_nodes[i][k], -imp * c.bary[k]));
                }
            }
        }
        points.push(p);
    }
    Ok(ContactSolution {
        points,
        iterations,
        converged,
        robot_impulses,
        wall_impulses,
    })
}

/// Aggregates solved points into the contact flag and the resultant force on
/// the robot. Points count as contacts when within `contact_distance` or
/// carrying a normal impulse.
pub fn report(points: &[ContactPoint], params: &ContactParams, h: f64) -> ContactReport {
    let active: Vec<ContactPoint> = points
        .iter()
        .filter(|p| p.gap < params.contact_distance || p.lambda_n > 0.0)
        .cloned()
        .collect();
    let resultant = active.iter().map(|p| p.impulse() / h).sum();
    ContactReport {
        any_contact: !active.is_empty(),
        resultant,
        points: active,
        not_converged: false,
    }
}

#[cfg(test)]
mod tests;
