use nalgebra::{DMatrix, DVector, Matrix4, Rotation3, SMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::mesh::generate_beam;

fn regular_tet() -> TetMesh {
    let s = 1.0 / 2f64.sqrt();
    TetMesh::new(
        vec![
            Vec3::new(1.0, 0.0, -s),
            Vec3::new(-1.0, 0.0, -s),
            Vec3::new(0.0, 1.0, s),
            Vec3::new(0.0, -1.0, s),
        ],
        vec![[0, 1, 2, 3]],
    )
    .or_else(|_| {
        TetMesh::new(
            vec![
                Vec3::new(-1.0, 0.0, -s),
                Vec3::new(1.0, 0.0, -s),
                Vec3::new(0.0, 1.0, s),
                Vec3::new(0.0, -1.0, s),
            ],
            vec![[0, 1, 2, 3]],
        )
    })
    .unwrap()
}

/// Textbook `V B^T D B` with gradients from the inverse of `[1 x y z]`.
fn dense_reference(x: &[Vec3; 4], m: &MaterialParams) -> DMatrix<f64> {
    let mut p = Matrix4::zeros();
    for a in 0..4 {
        p[(a, 0)] = 1.0;
        p[(a, 1)] = x[a].x;
        p[(a, 2)] = x[a].y;
        p[(a, 3)] = x[a].z;
    }
    let volume = p.determinant().abs() / 6.0;
    let c = p.try_inverse().unwrap();
    let mut b = SMatrix::<f64, 6, 12>::zeros();
    for a in 0..4 {
        let (dx, dy, dz) = (c[(1, a)], c[(2, a)], c[(3, a)]);
        b[(0, 3 * a)] = dx;
        b[(1, 3 * a + 1)] = dy;
        b[(2, 3 * a + 2)] = dz;
        b[(3, 3 * a)] = dy;
        b[(3, 3 * a + 1)] = dx;
        b[(4, 3 * a + 1)] = dz;
        b[(4, 3 * a + 2)] = dy;
        b[(5, 3 * a)] = dz;
        b[(5, 3 * a + 2)] = dx;
    }
    let (e, nu) = (m.young_modulus, m.poisson_ratio);
    let f = e / ((1.0 + nu) * (1.0 - 2.0 * nu));
    let mut d = SMatrix::<f64, 6, 6>::zeros();
    for i in 0..3 {
        for j in 0..3 {
            d[(i, j)] = if i == j { f * (1.0 - nu) } else { f * nu };
        }
        d[(i + 3, i + 3)] = f * (1.0 - 2.0 * nu) / 2.0;
    }
    let k = b.transpose() * d * b * volume;
    DMatrix::from_iterator(12, 12, k.iter().copied())
}

fn beam_material() -> MaterialParams {
    MaterialParams {
        young_modulus: 1.0,
        poisson_ratio: 0.3,
        density: 1e-9,
        rayleigh_mass: 1.0,
        rayleigh_stiffness: 0.01,
    }
}

struct Cantilever {
    body: DeformableBody,
    tip: Vec<usize>,
    load: f64,
    expected: f64,
}

fn cantilever(nx: usize, ny: usize, cell: f64, load: f64) -> Cantilever {
    let mesh = generate_beam(nx, ny, ny, cell).unwrap();
    let length = nx as f64 * cell;
    let side = ny as f64 * cell;
    let base: Vec<usize> = (0..mesh.vertices.len()).filter(|&i| mesh.vertices[i].x == 0.0).collect();
    let tip: Vec<usize> = (0..mesh.vertices.len())
        .filter(|&i| (mesh.vertices[i].x - length).abs() < 1e-9)
        .collect();
    let material = beam_material();
    let inertia = side.powi(4) / 12.0;
    let expected = load * length.powi(3) / (3.0 * material.young_modulus * inertia);
    let mut body = DeformableBody::new(mesh, material, Elasticity::Linear).unwrap();
    body.apply_fixed_constraints(&base).unwrap();
    for &i in &tip {
        body.f_ext[3 * i + 2] = -load / tip.len() as f64;
    }
    Cantilever { body, tip, load, expected }
}

fn tip_deflection(c: &Cantilever) -> f64 {
    -c.tip.iter().map(|&i| c.body.u[3 * i + 2]).sum::<f64>() / c.tip.len() as f64
}

#[test]
fn translation_in_null_space() {
    let mesh = generate_beam(3, 2, 2, 1.5).unwrap();
    let k = assemble_stiffness(&mesh, &MaterialParams::default()).unwrap();
    for dir in [Vec3::x(), Vec3::y(), Vec3::new(0.3, -1.2, 0.7)] {
        let t: Vec<f64> = (0..mesh.vertices.len()).flat_map(|_| [dir.x, dir.y, dir.z]).collect();
        let f = k.mul_vec(&t);
        let rel = f.iter().fold(0.0f64, |a, b| a.max(b.abs())) / (k.max_abs() * dir.norm());
        assert!(rel < 1e-8, "{rel}");
    }
}

#[test]
fn stiffness_symmetric_psd() {
    let mesh = generate_beam(4, 2, 2, 1.0).unwrap();
    let k = assemble_stiffness(&mesh, &MaterialParams::default()).unwrap();
    assert!(k.max_asymmetry() < 1e-9);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let x: Vec<f64> = (0..k.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let kx = k.mul_vec(&x);
        let q: f64 = x.iter().zip(&kx).map(|(a, b)| a * b).sum::<f64>() / x.iter().map(|a| a * a).sum::<f64>();
        assert!(q >= -1e-9 * k.max_abs());
    }
}

#[test]
fn single_tet_matches_b_matrix_reference() {
    let mesh = regular_tet();
    let m = MaterialParams::default();
    let k = assemble_stiffness(&mesh, &m).unwrap().to_dense();
    let x = [mesh.vertices[0], mesh.vertices[1], mesh.vertices[2], mesh.vertices[3]];
    let r = dense_reference(&x, &m);
    let scale = r.amax();
    assert!((k - r).amax() < 1e-12 * scale);
}

#[test]
fn skewed_tet_matches_b_matrix_reference() {
    let x = [
        Vec3::new(0.1, -0.2, 0.0),
        Vec3::new(2.0, 0.3, 0.1),
        Vec3::new(0.4, 1.7, -0.3),
        Vec3::new(0.2, 0.5, 1.1),
    ];
    let m = MaterialParams::default();
    let (ke, _, _) = element_stiffness(&x, &m).unwrap();
    let r = dense_reference(&x, &m);
    let k = DMatrix::from_iterator(12, 12, ke.iter().copied());
    assert!((k - &r).amax() < 1e-12 * r.amax());
}

#[test]
fn stiffness_linear_in_young_modulus() {
    let mesh = generate_beam(2, 1, 1, 1.0).unwrap();
    let m = MaterialParams::default();
    let m2 = MaterialParams {
        young_modulus: 2.0 * m.young_modulus,
        ..m.clone()
    };
    let a = assemble_stiffness(&mesh, &m).unwrap().to_dense();
    let b = assemble_stiffness(&mesh, &m2).unwrap().to_dense();
    assert_eq!(a * 2.0, b);
}

#[test]
fn inverted_tet_is_named() {
    let mut mesh = regular_tet();
    mesh.tets[0].swap(0, 1);
    match assemble_stiffness(&mesh, &MaterialParams::default()) {
        Err(FemError::Assembly { tet: 0, .. }) => {}
        other => panic!("{other:?}"),
    }
}

#[test]
fn invalid_material_rejected() {
    let bad = MaterialParams {
        poisson_ratio: 0.5,
        ..Default::default()
    };
    assert!(bad.validate().is_err());
    let bad = MaterialParams {
        rayleigh_mass: -1.0,
        ..Default::default()
    };
    assert!(bad.validate().is_err());
}

#[test]
fn internal_forces_linear() {
    let mesh = generate_beam(3, 1, 1, 1.0).unwrap();
    let mut body = DeformableBody::new(mesh, MaterialParams::default(), Elasticity::Linear).unwrap();
    assert!(body.internal_forces().iter().all(|&f| f == 0.0));
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    body.u.iter_mut().for_each(|u| *u = rng.random_range(-1e-3..1e-3));
    let ku = body.stiffness().mul_vec(&body.u);
    let f = internal_forces(&body, body.stiffness());
    for (a, b) in f.iter().zip(&ku) {
        assert!((a - b).abs() < 1e-10);
    }
}

#[test]
fn corotational_rigid_rotation_is_force_free() {
    let mesh = generate_beam(3, 2, 2, 1.0).unwrap();
    let mut body = DeformableBody::new(mesh, MaterialParams::default(), Elasticity::Corotational).unwrap();
    let r = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(Vec3::new(1.0, 2.0, 0.5)), 30f64.to_radians());
    for i in 0..body.node_count() {
        let x = body.rest.vertices[i];
        let d = r * x - x;
        body.u[3 * i..3 * i + 3].copy_from_slice(d.as_slice());
    }
    let f = body.internal_forces();
    let fnorm = f.iter().map(|x| x * x).sum::<f64>().sqrt();
    let unorm = body.u.iter().map(|x| x * x).sum::<f64>().sqrt();
    assert!(fnorm < 1e-6 * body.stiffness().max_abs() * unorm, "{fnorm}");
    let linear = body.stiffness().mul_vec(&body.u);
    assert!(linear.iter().map(|x| x * x).sum::<f64>().sqrt() > 1e-3 * body.stiffness().max_abs() * unorm);
}

#[test]
fn corotational_matches_linear_for_small_strain() {
    let mesh = generate_beam(2, 1, 1, 1.0).unwrap();
    let mut body = DeformableBody::new(mesh, MaterialParams::default(), Elasticity::Corotational).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    body.u.iter_mut().for_each(|u| *u = rng.random_range(-1e-7..1e-7));
    let a = body.internal_forces();
    let b = body.stiffness().mul_vec(&body.u);
    let scale = b.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-4 * scale);
    }
}

#[test]
fn rest_state_is_bit_exact() {
    let mesh = generate_beam(2, 1, 1, 1.0).unwrap();
    let mut body = DeformableBody::new(mesh, MaterialParams::default(), Elasticity::Linear).unwrap();
    body.apply_fixed_constraints(&[0]).unwrap();
    for _ in 0..10 {
        body.step_implicit(0.02, None).unwrap();
    }
    assert!(body.u.iter().chain(&body.v).all(|&x| x == 0.0));
}

#[test]
fn single_tet_static_matches_dense_solve() {
    let mesh = regular_tet();
    let material = MaterialParams {
        density: 1e-6,
        rayleigh_mass: 5.0,
        ..Default::default()
    };
    let mut body = DeformableBody::new(mesh, material, Elasticity::Linear).unwrap();
    body.apply_fixed_constraints(&[0, 1, 2]).unwrap();
    let force = Vec3::new(0.01, -0.02, 0.015);
    body.f_ext[9..12].copy_from_slice(force.as_slice());
    for _ in 0..500 {
        body.step_implicit(0.1, None).unwrap();
    }
    let k = body.stiffness().to_dense();
    let k33 = k.view((9, 9), (3, 3)).into_owned();
    let expected = k33.lu().solve(&DVector::from_column_slice(force.as_slice())).unwrap();
    let got = DVector::from_column_slice(&body.u[9..12]);
    assert!((got - &expected).norm() < 1e-6 * expected.norm());
}

#[test]
fn cantilever_tip_deflection() {
    let mut c = cantilever(80, 8, 1.0, 1e-4);
    for _ in 0..60 {
        c.body.step_implicit(0.1, None).unwrap();
    }
    let d = tip_deflection(&c);
    assert!(c.load > 0.0);
    assert!((d - c.expected).abs() < 0.1 * c.expected, "tip {d} vs {}", c.expected);
}

#[test]
fn energy_non_increasing_and_bounded() {
    let mut c = cantilever(10, 1, 1.0, 1e-4);
    for _ in 0..20 {
        c.body.step_implicit(0.1, None).unwrap();
    }
    c.body.f_ext.iter_mut().for_each(|f| *f = 0.0);
    let mut prev = c.body.energy();
    assert!(prev > 0.0);
    for _ in 0..2000 {
        c.body.step_implicit(0.1, None).unwrap();
        let e = c.body.energy();
        assert!(e <= prev * (1.0 + 1e-8) + 1e-300, "{e} > {prev}");
        prev = e;
    }
}

#[test]
fn fixed_nodes_stay_put_and_all_fixed_is_identity() {
    let mut c = cantilever(4, 1, 1.0, 1e-3);
    let base = c.body.fixed_nodes();
    for _ in 0..10 {
        c.body.step_implicit(0.05, None).unwrap();
    }
    for &i in &base {
        assert_eq!(&c.body.u[3 * i..3 * i + 3], &[0.0; 3]);
        assert_eq!(&c.body.v[3 * i..3 * i + 3], &[0.0; 3]);
    }
    let u = c.body.u.clone();
    let all: Vec<usize> = (0..c.body.node_count()).collect();
    c.body.apply_fixed_constraints(&all).unwrap();
    c.body.step_implicit(0.05, None).unwrap();
    assert!(c.body.u.iter().all(|&x| x == 0.0));
    assert!(u.iter().any(|&x| x != 0.0));
}

#[test]
fn fixing_none_matches_unconstrained() {
    let mesh = generate_beam(2, 1, 1, 1.0).unwrap();
    let mut a = DeformableBody::new(mesh.clone(), MaterialParams::default(), Elasticity::Linear).unwrap();
    let mut b = DeformableBody::new(mesh, MaterialParams::default(), Elasticity::Linear).unwrap();
    b.apply_fixed_constraints(&[]).unwrap();
    a.f_ext[5] = 1e-3;
    b.f_ext[5] = 1e-3;
    for _ in 0..5 {
        a.step_implicit(0.02, None).unwrap();
        b.step_implicit(0.02, None).unwrap();
    }
    assert_eq!(a.u, b.u);
    assert!(b.apply_fixed_constraints(&[999]).is_err());
}

#[test]
fn direct_and_cg_agree() {
    let make = |solver| {
        let mut c = cantilever(6, 1, 1.0, 1e-3);
        c.body = c.body.with_solver(solver);
        for _ in 0..20 {
            c.body.step_implicit(0.05, None).unwrap();
        }
        c.body.u
    };
    let a = make(LinearSolver::Direct);
    let b = make(LinearSolver::Cg { tol: 1e-12, max_iter: 10_000 });
    let scale = a.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-8 * scale);
    }
}

#[test]
fn cg_cap_surfaces_solver_error() {
    let mut c = cantilever(6, 1, 1.0, 1e-3);
    c.body = c.body.with_solver(LinearSolver::Cg { tol: 1e-14, max_iter: 1 });
    match c.body.step_implicit(0.05, None) {
        Err(FemError::Solver { residual, iterations }) => {
            assert!(residual > 0.0);
            assert_eq!(iterations, 1);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn linear_step_is_deterministic() {
    let run = || {
        let mut c = cantilever(5, 1, 1.0, 1e-3);
        for _ in 0..30 {
            c.body.step_implicit(0.02, None).unwrap();
        }
        (c.body.u, c.body.v)
    };
    assert_eq!(run(), run());
}

#[test]
fn impulse_response_matches_compliance() {
    let mut c = cantilever(4, 1, 1.0, 0.0);
    let h = 0.02;
    c.body.step_implicit(h, None).unwrap();
    let nodes: Vec<usize> = c.tip.clone();
    c.body.precompute_compliance(h, &nodes).unwrap();
    let mut p = vec![0.0; c.body.u.len()];
    let (a, b) = (nodes[0], nodes[1]);
    p[3 * b + 1] = 2e-6;
    let v0 = c.body.velocity(a);
    c.body.apply_impulses(&p).unwrap();
    let dv = c.body.velocity(a) - v0;
    let predicted = c.body.compliance_block(a, b) * Vec3::new(0.0, 2e-6, 0.0);
    assert!((dv - predicted).norm() < 1e-9 * predicted.norm().max(1e-30));
    assert!(predicted.norm() > 0.0);
    let block = c.body.compliance_block(a, b);
    let block_t = c.body.compliance_block(b, a);
    assert!((block - block_t.transpose()).amax() < 1e-9 * block.amax());
    assert_eq!(c.body.compliance_block(0, a), Matrix3::zeros());
}

