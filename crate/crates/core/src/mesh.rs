//! Tetrahedral and surface meshes.
//!
//! Lengths are in millimeters. The loader accepts the ASCII 2.2 subset of the
//! `.msh` interchange format restricted to 4-node tetrahedra; lower-dimensional
//! elements (points, lines, triangles) are skipped and any other volumetric
//! element type is rejected.

use std::collections::HashMap;
use std::fmt::Write as _;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub type Vec3 = Vector3<f64>;

/// Per-vertex label used by generated cavities for the inner wall layer.
pub const TAG_INNER: i32 = 0;
/// Per-vertex label used by generated cavities for the outer wall layer.
pub const TAG_OUTER: i32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum MeshError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("element {element} references unknown node {node}")]
    UnknownNode { element: usize, node: usize },
    #[error("tet {tet} references vertex {index} but the mesh has {count} vertices")]
    IndexOutOfRange { tet: usize, index: usize, count: usize },
    #[error("tet {0} has non-positive rest volume")]
    Degenerate(usize),
    #[error("tet {0} duplicates an earlier tet")]
    DuplicateTet(usize),
    #[error("invalid mesh parameter: {0}")]
    Parameter(String),
    #[error("unsupported element type {kind} at line {line}")]
    UnsupportedElement { kind: u32, line: usize },
}

/// Signed volume of the tetrahedron `(a, b, c, d)`; positive when `d` lies on
/// the side of `(a, b, c)` given by the right-hand rule.
pub fn signed_volume(a: &Vec3, b: &Vec3, c: &Vec3, d: &Vec3) -> f64 {
    (b - a).cross(&(c - a)).dot(&(d - a)) / 6.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct TetMesh {
    pub vertices: Vec<Vec3>,
    pub tets: Vec<[usize; 4]>,
    pub tags: Option<Vec<i32>>,
}

impl TetMesh {
    /// Builds a mesh and checks index range, positive orientation and uniqueness.
    pub fn new(vertices: Vec<Vec3>, tets: Vec<[usize; 4]>) -> Result<Self, MeshError> {
        let mesh = Self {
            vertices,
            tets,
            tags: None,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn with_tags(mut self, tags: Vec<i32>) -> Result<Self, MeshError> {
        if tags.len() != self.vertices.len() {
            return Err(MeshError::Parameter(format!(
                "{} tags for {} vertices",
                tags.len(),
                self.vertices.len()
            )));
        }
        self.tags = Some(tags);
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), MeshError> {
        let count = self.vertices.len();
        let mut seen = HashMap::with_capacity(self.tets.len());
        for (t, tet) in self.tets.iter().enumerate() {
            for &index in tet {
                if index >= count {
                    return Err(MeshError::IndexOutOfRange { tet: t, index, count });
                }
            }
            if self.tet_volume(t) <= 0.0 {
                return Err(MeshError::Degenerate(t));
            }
            let mut key = *tet;
            key.sort_unstable();
            if seen.insert(key, t).is_some() {
                return Err(MeshError::DuplicateTet(t));
            }
        }
        Ok(())
    }

    pub fn tet_volume(&self, t: usize) -> f64 {
        let [a, b, c, d] = self.tets[t];
        signed_volume(
            &self.vertices[a],
            &self.vertices[b],
            &self.vertices[c],
            &self.vertices[d],
        )
    }

    pub fn volume(&self) -> f64 {
        (0..self.tets.len()).map(|t| self.tet_volume(t)).sum()
    }

    /// Axis-aligned bounds `(min, max)`.
    pub fn bounds(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (lo, hi)
    }

    /// Applies `x -> rotation * x + translation`. The rotation must be proper
    /// (det = +1) so tet orientation is preserved.
    pub fn transformed(&self, rotation: &nalgebra::Matrix3<f64>, translation: &Vec3) -> Self {
        Self {
            vertices: self
                .vertices
                .iter()
                .map(|v| rotation * v + translation)
                .collect(),
            tets: self.tets.clone(),
            tags: self.tags.clone(),
        }
    }
}

/// Boundary triangles of a tet mesh. Triangles index the shared vertex array.
#[derive(Debug, Clone)]
pub struct SurfaceMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
    pub normals: Vec<Vec3>,
    /// Tet owning each triangle.
    pub owner: Vec<usize>,
}

impl SurfaceMesh {
    /// Replaces vertex positions (e.g. with the deformed configuration) and
    /// recomputes unit normals. Winding is kept.
    pub fn update_positions(&mut self, positions: &[Vec3]) {
        self.vertices.clear();
        self.vertices.extend_from_slice(positions);
        for (n, tri) in self.normals.iter_mut().zip(&self.triangles) {
            *n = triangle_normal(&self.vertices, tri);
        }
    }

    pub fn centroid(&self, t: usize) -> Vec3 {
        let [a, b, c] = self.triangles[t];
        (self.vertices[a] + self.vertices[b] + self.vertices[c]) / 3.0
    }

    /// Vertex indices referenced by at least one triangle, ascending.
    pub fn vertex_indices(&self) -> Vec<usize> {
        let mut used: Vec<usize> = self.triangles.iter().flatten().copied().collect();
        used.sort_unstable();
        used.dedup();
        used
    }
}

fn triangle_normal(vertices: &[Vec3], tri: &[usize; 3]) -> Vec3 {
    let [a, b, c] = *tri;
    let n = (vertices[b] - vertices[a]).cross(&(vertices[c] - vertices[a]));
    let len = n.norm();
    if len > 0.0 {
        n / len
    } else {
        Vec3::zeros()
    }
}

/// Faces that appear in exactly one tet, wound so the normal points away from
/// the owning tet.
pub fn surface_of(mesh: &TetMesh) -> SurfaceMesh {
    const FACES: [[usize; 3]; 4] = [[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]];
    let mut counts: HashMap<[usize; 3], u32> = HashMap::with_capacity(mesh.tets.len() * 4);
    for tet in &mesh.tets {
        for face in FACES {
            let mut key = [tet[face[0]], tet[face[1]], tet[face[2]]];
            key.sort_unstable();
            *counts.entry(key).or_insert(0) += 1;
        }
    }

    let mut triangles = Vec::new();
    let mut normals = Vec::new();
    let mut owner = Vec::new();
    for (t, tet) in mesh.tets.iter().enumerate() {
        let centroid = tet.iter().map(|&i| mesh.vertices[i]).sum::<Vec3>() / 4.0;
        for face in FACES {
            let mut tri = [tet[face[0]], tet[face[1]], tet[face[2]]];
            let mut key = tri;
            key.sort_unstable();
            if counts[&key] != 1 {
                continue;
            }
            let face_centroid = tri.iter().map(|&i| mesh.vertices[i]).sum::<Vec3>() / 3.0;
            let mut n = triangle_normal(&mesh.vertices, &tri);
            if n.dot(&(face_centroid - centroid)) < 0.0 {
                tri.swap(1, 2);
                n = -n;
            }
            triangles.push(tri);
            normals.push(n);
            owner.push(t);
        }
    }
    SurfaceMesh {
        vertices: mesh.vertices.clone(),
        triangles,
        normals,
        owner,
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> MeshError {
    MeshError::Parse {
        line,
        message: message.into(),
    }
}

/// Number of nodes for the element types we skip without complaint.
fn lower_dim_nodes(kind: u32) -> Option<usize> {
    match kind {
        15 => Some(1), // point
        1 => Some(2),  // line
        2 => Some(3),  // triangle
        3 => Some(4),  // quadrangle
        _ => None,
    }
}

/// Parses an ASCII `.msh` 2.2 document into a tet mesh.
pub fn load_msh(text: &str) -> Result<TetMesh, MeshError> {
    let lines: Vec<&str> = text.lines().collect();
    let mut i = 0;
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut node_ids: HashMap<usize, usize> = HashMap::new();
    let mut tets: Vec<[usize; 4]> = Vec::new();
    let mut seen_format = false;
    let mut seen_nodes = false;

    let next_nonempty = |i: &mut usize| -> Option<(usize, &str)> {
        while *i < lines.len() {
            let l = lines[*i].trim();
            *i += 1;
            if !l.is_empty() {
                return Some((*i, l));
            }
        }
        None
    };

    while let Some((lineno, header)) = next_nonempty(&mut i) {
        match header {
            "$MeshFormat" => {
                let (ln, fmt) = next_nonempty(&mut i).ok_or_else(|| parse_err(lineno, "truncated $MeshFormat"))?;
                let parts: Vec<&str> = fmt.split_whitespace().collect();
                if parts.len() < 3 {
                    return Err(parse_err(ln, "expected `version file-type data-size`"));
                }
                if !parts[0].starts_with("2.2") && parts[0] != "2" {
                    return Err(parse_err(ln, format!("unsupported format version {}", parts[0])));
                }
                if parts[1] != "0" {
                    return Err(parse_err(ln, "binary files are not supported"));
                }
                expect_end(&mut i, &lines, "$EndMeshFormat")?;
                seen_format = true;
            }
            "$Nodes" => {
                let (ln, count) = next_nonempty(&mut i).ok_or_else(|| parse_err(lineno, "truncated $Nodes"))?;
                let count: usize = count.parse().map_err(|_| parse_err(ln, "bad node count"))?;
                vertices.reserve(count);
                for _ in 0..count {
                    let (ln, row) = next_nonempty(&mut i).ok_or_else(|| parse_err(ln, "node rows end early"))?;
                    if row.starts_with('$') {
                        return Err(parse_err(ln, format!("expected {count} node rows, found {}", vertices.len())));
                    }
                    let mut it = row.split_whitespace();
                    let id: usize = parse_field(it.next(), ln, "node id")?;
                    let x: f64 = parse_field(it.next(), ln, "x")?;
                    let y: f64 = parse_field(it.next(), ln, "y")?;
                    let z: f64 = parse_field(it.next(), ln, "z")?;
                    if node_ids.insert(id, vertices.len()).is_some() {
                        return Err(parse_err(ln, format!("duplicate node id {id}")));
                    }
                    vertices.push(Vec3::new(x, y, z));
                }
                expect_end(&mut i, &lines, "$EndNodes")?;
                seen_nodes = true;
            }
            "$Elements" => {
                if !seen_nodes {
                    return Err(parse_err(lineno, "$Elements before $Nodes"));
                }
                let (ln, count) = next_nonempty(&mut i).ok_or_else(|| parse_err(lineno, "truncated $Elements"))?;
                let count: usize = count.parse().map_err(|_| parse_err(ln, "bad element count"))?;
                let mut last = ln;
                for _ in 0..count {
                    let (ln, row) = next_nonempty(&mut i).ok_or_else(|| parse_err(last, "element rows end early"))?;
                    last = ln;
                    if row.starts_with('$') {
                        return Err(parse_err(ln, format!("expected {count} element rows")));
                    }
                    let fields: Vec<&str> = row.split_whitespace().collect();
                    let id: usize = parse_field(fields.first().copied(), ln, "element id")?;
                    let kind: u32 = parse_field(fields.get(1).copied(), ln, "element type")?;
                    let ntags: usize = parse_field(fields.get(2).copied(), ln, "tag count")?;
                    let nodes = &fields.get(3 + ntags..).unwrap_or(&[]);
                    let expected = match kind {
                        4 => 4,
                        k => match lower_dim_nodes(k) {
                            Some(n) => n,
                            None => return Err(MeshError::UnsupportedElement { kind, line: ln }),
                        },
                    };
                    if nodes.len() != expected {
                        return Err(parse_err(ln, format!("element type {kind} needs {expected} nodes, got {}", nodes.len())));
                    }
                    if kind != 4 {
                        continue;
                    }
                    let mut tet = [0usize; 4];
                    for (slot, node) in tet.iter_mut().zip(nodes.iter()) {
                        let nid: usize = parse_field(Some(node), ln, "node reference")?;
                        *slot = *node_ids
                            .get(&nid)
                            .ok_or(MeshError::UnknownNode { element: id, node: nid })?;
                    }
                    let v = signed_volume(
                        &vertices[tet[0]],
                        &vertices[tet[1]],
                        &vertices[tet[2]],
                        &vertices[tet[3]],
                    );
                    if v < 0.0 {
                        tet.swap(2, 3);
                    }
                    tets.push(tet);
                }
                expect_end(&mut i, &lines, "$EndElements")?;
            }
            h if h.starts_with('$') && !h.starts_with("$End") => {
                // Unknown section: skip to its terminator.
                let end = format!("$End{}", &h[1..]);
                loop {
                    match next_nonempty(&mut i) {
                        Some((_, l)) if l == end => break,
                        Some(_) => {}
                        None => return Err(parse_err(lineno, format!("section {h} is not terminated"))),
                    }
                }
            }
            other => return Err(parse_err(lineno, format!("unexpected line `{other}`"))),
        }
    }
    if !seen_format {
        return Err(parse_err(1, "missing $MeshFormat"));
    }
    if !seen_nodes {
        return Err(parse_err(lines.len(), "missing $Nodes"));
    }
    TetMesh::new(vertices, tets)
}

fn parse_field<T: std::str::FromStr>(s: Option<&str>, line: usize, what: &str) -> Result<T, MeshError> {
    s.ok_or_else(|| parse_err(line, format!("missing {what}")))?
        .parse()
        .map_err(|_| parse_err(line, format!("bad {what}")))
}

fn expect_end(i: &mut usize, lines: &[&str], end: &str) -> Result<(), MeshError> {
    while *i < lines.len() {
        let l = lines[*i].trim();
        *i += 1;
        if l.is_empty() {
            continue;
        }
        if l == end {
            return Ok(());
        }
        return Err(parse_err(*i, format!("expected {end}, found `{l}`")));
    }
    Err(parse_err(lines.len(), format!("missing {end}")))
}

/// Serializes to ASCII `.msh` 2.2. Coordinates use shortest round-trip
/// formatting so reloading reproduces the arrays exactly.
pub fn write_msh(mesh: &TetMesh) -> String {
    let mut out = String::new();
    out.push_str("$MeshFormat\n2.2 0 8\n$EndMeshFormat\n$Nodes\n");
    let _ = writeln!(out, "{}", mesh.vertices.len());
    for (i, v) in mesh.vertices.iter().enumerate() {
        let _ = writeln!(out, "{} {:?} {:?} {:?}", i + 1, v.x, v.y, v.z);
    }
    out.push_str("$EndNodes\n$Elements\n");
    let _ = writeln!(out, "{}", mesh.tets.len());
    for (i, t) in mesh.tets.iter().enumerate() {
        let _ = writeln!(
            out,
            "{} 4 2 0 0 {} {} {} {}",
            i + 1,
            t[0] + 1,
            t[1] + 1,
            t[2] + 1,
            t[3] + 1
        );
    }
    out.push_str("$EndElements\n");
    out
}

/// One vertex or tet per line: `v <i> <x> <y> <z>` then `t <i> <a> <b> <c> <d>`.
pub fn debug_dump(mesh: &TetMesh) -> String {
    let mut out = String::new();
    for (i, v) in mesh.vertices.iter().enumerate() {
        let tag = mesh.tags.as_ref().map(|t| t[i]).unwrap_or(-1);
        let _ = writeln!(out, "v {i} {:?} {:?} {:?} {tag}", v.x, v.y, v.z);
    }
    for (i, t) in mesh.tets.iter().enumerate() {
        let _ = writeln!(out, "t {i} {} {} {} {}", t[0], t[1], t[2], t[3]);
    }
    out
}

/// Procedural hollow ellipsoid, polar axis along x, with an optional opening
/// around the +x pole.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CavitySpec {
    /// Outer semi-axes (x, y, z), mm.
    pub radii: [f64; 3],
    /// Wall thickness, mm. Inner semi-axes are `radii - thickness`.
    pub thickness: f64,
    /// Number of latitude bands; longitude count is twice this.
    pub resolution: usize,
    /// Half-angle of the entry opening around the +x pole, degrees. Zero closes the shell.
    #[serde(default = "CavitySpec::default_aperture")]
    pub aperture_deg: f64,
    /// Random perturbation of grid angles as a fraction of the grid spacing.
    #[serde(default = "CavitySpec::default_jitter")]
    pub jitter: f64,
}

impl CavitySpec {
    fn default_aperture() -> f64 {
        30.0
    }
    fn default_jitter() -> f64 {
        0.1
    }
}

impl Default for CavitySpec {
    fn default() -> Self {
        Self {
            radii: [40.0, 30.0, 30.0],
            thickness: 5.0,
            resolution: 8,
            aperture_deg: Self::default_aperture(),
            jitter: Self::default_jitter(),
        }
    }
}

/// Splits the prism `(b0, b1, b2, t0, t1, t2)` (t_i above b_i) into three tets.
/// The split of each quad face depends only on its global vertex ids, so
/// neighbouring prisms agree on shared faces.
fn split_prism(v: [usize; 6]) -> [[usize; 4]; 3] {
    const ROT: [[usize; 6]; 6] = [
        [0, 1, 2, 3, 4, 5],
        [1, 2, 0, 4, 5, 3],
        [2, 0, 1, 5, 3, 4],
        [3, 5, 4, 0, 2, 1],
        [4, 3, 5, 1, 0, 2],
        [5, 4, 3, 2, 1, 0],
    ];
    let min_pos = (0..6).min_by_key(|&k| v[k]).unwrap();
    let p: Vec<usize> = ROT[min_pos].iter().map(|&k| v[k]).collect();
    if p[1].min(p[5]) < p[2].min(p[4]) {
        [
            [p[0], p[1], p[2], p[5]],
            [p[0], p[1], p[5], p[4]],
            [p[0], p[4], p[5], p[3]],
        ]
    } else {
        [
            [p[0], p[1], p[2], p[4]],
            [p[0], p[4], p[2], p[5]],
            [p[0], p[4], p[5], p[3]],
        ]
    }
}

fn orient(vertices: &[Vec3], mut tet: [usize; 4]) -> [usize; 4] {
    if signed_volume(&vertices[tet[0]], &vertices[tet[1]], &vertices[tet[2]], &vertices[tet[3]]) < 0.0 {
        tet.swap(2, 3);
    }
    tet
}

/// Hollow ellipsoidal shell, one element layer thick. Vertices carry
/// [`TAG_INNER`] / [`TAG_OUTER`] tags.
pub fn generate_cavity(spec: &CavitySpec, seed: u64) -> Result<TetMesh, MeshError> {
    let [a, b, c] = spec.radii;
    if !(a > 0.0 && b > 0.0 && c > 0.0) || !spec.radii.iter().all(|r| r.is_finite()) {
        return Err(MeshError::Parameter(format!("radii must be positive, got {:?}", spec.radii)));
    }
    let min_r = a.min(b).min(c);
    if !(spec.thickness > 0.0 && spec.thickness < min_r) {
        return Err(MeshError::Parameter(format!(
            "thickness {} must lie in (0, {min_r})",
            spec.thickness
        )));
    }
    if spec.resolution < 4 {
        return Err(MeshError::Parameter(format!("resolution {} < 4", spec.resolution)));
    }
    if !(0.0..90.0).contains(&spec.aperture_deg) {
        return Err(MeshError::Parameter(format!("aperture {} outside [0, 90)", spec.aperture_deg)));
    }
    if !(0.0..0.45).contains(&spec.jitter) {
        return Err(MeshError::Parameter(format!("jitter {} outside [0, 0.45)", spec.jitter)));
    }

    let n_lat = spec.resolution;
    let n_lon = 2 * spec.resolution;
    let theta0 = spec.aperture_deg.to_radians();
    let closed = theta0 == 0.0;
    let d_theta = (std::f64::consts::PI - theta0) / n_lat as f64;
    let d_phi = std::f64::consts::TAU / n_lon as f64;

    // Grid angles per (ring, lon), shared by both layers.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut angles = vec![vec![(0.0, 0.0); n_lon]; n_lat + 1];
    for (i, ring) in angles.iter_mut().enumerate() {
        for (j, slot) in ring.iter_mut().enumerate() {
            let mut theta = theta0 + d_theta * i as f64;
            let mut phi = d_phi * j as f64;
            let pole = (i == 0 && closed) || i == n_lat;
            if !pole && spec.jitter > 0.0 {
                if i > 0 {
                    theta += spec.jitter * d_theta * (rng.random::<f64>() - 0.5);
                }
                phi += spec.jitter * d_phi * (rng.random::<f64>() - 0.5);
            }
            *slot = (theta, phi);
        }
    }

    let ring_len = |i: usize| if (i == 0 && closed) || i == n_lat { 1 } else { n_lon };
    let per_layer: usize = (0..=n_lat).map(ring_len).sum();
    let mut ring_start = vec![0usize; n_lat + 1];
    for i in 1..=n_lat {
        ring_start[i] = ring_start[i - 1] + ring_len(i - 1);
    }

    let mut vertices = Vec::with_capacity(2 * per_layer);
    let mut tags = Vec::with_capacity(2 * per_layer);
    for (layer, tag) in [(spec.thickness, TAG_INNER), (0.0, TAG_OUTER)] {
        let (ra, rb, rc) = (a - layer, b - layer, c - layer);
        for i in 0..=n_lat {
            for j in 0..ring_len(i) {
                let (theta, phi) = angles[i][j];
                let theta = if i == n_lat { std::f64::consts::PI } else if i == 0 && closed { 0.0 } else { theta };
                vertices.push(Vec3::new(
                    ra * theta.cos(),
                    rb * theta.sin() * phi.cos(),
                    rc * theta.sin() * phi.sin(),
                ));
                tags.push(tag);
            }
        }
    }

    let node = |i: usize, j: usize| ring_start[i] + if ring_len(i) == 1 { 0 } else { j % n_lon };
    let mut surface_tris = Vec::new();
    for i in 0..n_lat {
        for j in 0..n_lon {
            let (a0, a1) = (node(i, j), node(i, j + 1));
            let (b0, b1) = (node(i + 1, j), node(i + 1, j + 1));
            if ring_len(i) == 1 {
                surface_tris.push([a0, b0, b1]);
            } else if ring_len(i + 1) == 1 {
                surface_tris.push([a0, b0, a1]);
            } else {
                surface_tris.push([a0, b0, b1]);
                surface_tris.push([a0, b1, a1]);
            }
        }
    }

    let mut tets = Vec::with_capacity(3 * surface_tris.len());
    for tri in &surface_tris {
        let prism = [
            tri[0],
            tri[1],
            tri[2],
            tri[0] + per_layer,
            tri[1] + per_layer,
            tri[2] + per_layer,
        ];
        for tet in split_prism(prism) {
            tets.push(orient(&vertices, tet));
        }
    }
    TetMesh::new(vertices, tets)?.with_tags(tags)
}

/// Regular grid of `nx * ny * nz` cubes of edge `cell`, each split into six
/// tets around its main diagonal. The grid starts at the origin.
pub fn generate_beam(nx: usize, ny: usize, nz: usize, cell: f64) -> Result<TetMesh, MeshError> {
    if nx == 0 || ny == 0 || nz == 0 {
        return Err(MeshError::Parameter("cell counts must be >= 1".into()));
    }
    if !(cell > 0.0 && cell.is_finite()) {
        return Err(MeshError::Parameter(format!("cell size {cell} must be positive")));
    }
    let idx = |i: usize, j: usize, k: usize| i + (nx + 1) * (j + (ny + 1) * k);
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1) * (nz + 1));
    for k in 0..=nz {
        for j in 0..=ny {
            for i in 0..=nx {
                vertices.push(Vec3::new(i as f64, j as f64, k as f64) * cell);
            }
        }
    }
    const PATHS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut tets = Vec::with_capacity(6 * nx * ny * nz);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                for path in PATHS {
                    let mut corner = [i, j, k];
                    let mut tet = [idx(i, j, k), 0, 0, 0];
                    for (step, &axis) in path.iter().enumerate() {
                        corner[axis] += 1;
                        tet[step + 1] = idx(corner[0], corner[1], corner[2]);
                    }
                    tets.push(orient(&vertices, tet));
                }
            }
        }
    }
    TetMesh::new(vertices, tets)
}
