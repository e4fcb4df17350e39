use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::fem::{DeformableBody, Elasticity, MaterialParams};
use crate::mesh::{generate_beam, surface_of};

fn soup(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> SurfaceMesh {
    let n = triangles.len();
    let mut s = SurfaceMesh {
        vertices: vertices.clone(),
        triangles,
        normals: vec![Vec3::zeros(); n],
        owner: vec![0; n],
    };
    s.update_positions(&vertices);
    s
}

fn big_floor() -> SurfaceMesh {
    soup(
        vec![Vec3::new(-100.0, -100.0, 0.0), Vec3::new(100.0, -100.0, 0.0), Vec3::new(0.0, 150.0, 0.0)],
        vec![[0, 1, 2]],
    )
}

fn segment_closest(p: &Vec3, a: &Vec3, b: &Vec3) -> Vec3 {
    let ab = b - a;
    let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
    a + ab * t
}

/// Plane projection when it lands inside, otherwise the best edge point.
fn closest_oracle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    let n = (b - a).cross(&(c - a)).normalize();
    let q = p - n * n.dot(&(p - a));
    let inside = [(a, b), (b, c), (c, a)].iter().all(|(u, v)| (*v - *u).cross(&(q - *u)).dot(&n) >= 0.0);
    if inside {
        return q;
    }
    [segment_closest(p, a, b), segment_closest(p, b, c), segment_closest(p, c, a)]
        .into_iter()
        .min_by(|x, y| (p - x).norm().total_cmp(&(p - y).norm()))
        .unwrap()
}

fn random_vec(rng: &mut ChaCha8Rng, s: f64) -> Vec3 {
    Vec3::new(rng.random_range(-s..s), rng.random_range(-s..s), rng.random_range(-s..s))
}

#[test]
fn closest_point_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..5000 {
        let (a, b, c) = (random_vec(&mut rng, 5.0), random_vec(&mut rng, 5.0), random_vec(&mut rng, 5.0));
        if (b - a).cross(&(c - a)).norm() < 1e-3 {
            continue;
        }
        let p = random_vec(&mut rng, 10.0);
        let (q, bary) = closest_point_on_triangle(&p, &a, &b, &c);
        let o = closest_oracle(&p, &a, &b, &c);
        assert!(((p - q).norm() - (p - o).norm()).abs() < 1e-9);
        let rebuilt = a * bary[0] + b * bary[1] + c * bary[2];
        assert!((rebuilt - q).norm() < 1e-9);
        assert!(bary.iter().all(|&w| w >= -1e-12));
    }
}

#[test]
fn far_sphere_has_no_candidates() {
    let wall = big_floor();
    assert!(detect(&[(Vec3::new(0.0, 0.0, 10.3), 0.3)], &wall, &ContactParams::default()).is_empty());
}

#[test]
fn sphere_above_triangle_gap() {
    let wall = big_floor();
    let c = detect(&[(Vec3::new(1.0, 2.0, 1.0), 0.3)], &wall, &ContactParams::default());
    assert_eq!(c.len(), 1);
    assert!((c[0].gap - 0.7).abs() < 1e-9);
    assert!((c[0].normal - Vec3::z()).norm() < 1e-12);
}

#[test]
fn sphere_behind_triangle_is_penetrating() {
    let wall = big_floor();
    let c = detect(&[(Vec3::new(1.0, 2.0, -0.2), 0.3)], &wall, &ContactParams::default());
    assert!((c[0].gap + 0.5).abs() < 1e-9);
    assert_eq!(c[0].normal, Vec3::z());
}

#[test]
fn broadphase_equals_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for t in 0..500 {
        let base = random_vec(&mut rng, 20.0);
        for _ in 0..3 {
            vertices.push(base + random_vec(&mut rng, 3.0));
        }
        triangles.push([3 * t, 3 * t + 1, 3 * t + 2]);
    }
    let wall = soup(vertices, triangles);
    let spheres: Vec<(Vec3, f64)> = (0..100)
        .map(|_| (random_vec(&mut rng, 22.0), rng.random_range(0.2..2.0)))
        .collect();
    let params = ContactParams::default();
    let fast = detect(&spheres, &wall, &params);
    let slow = detect_brute_force(&spheres, &wall, &params);
    assert!(!slow.is_empty());
    assert_eq!(fast, slow);
}

fn one_ball(mass: f64, v: Vec3) -> PointMasses {
    PointMasses {
        mass: vec![mass],
        velocity: vec![v],
    }
}

#[test]
fn no_candidates_changes_nothing() {
    let mut ball = one_ball(1e-3, Vec3::new(1.0, 2.0, 3.0));
    let sol = solve_contacts(&[], &mut ball, &mut RigidWall, &big_floor(), &ContactParams::default(), 0.01).unwrap();
    assert!(sol.points.is_empty() && sol.converged);
    assert_eq!(ball.velocity[0], Vec3::new(1.0, 2.0, 3.0));
}

#[test]
fn head_on_impact_stops_normal_motion() {
    let wall = big_floor();
    let (m, w, h) = (2e-4, 30.0, 0.01);
    let mut ball = one_ball(m, Vec3::new(0.0, 0.0, -w));
    let params = ContactParams::default();
    let cands = detect(&[(Vec3::new(0.0, 0.0, 0.5), 0.5)], &wall, &params);
    assert!(cands[0].gap.abs() < 1e-12);
    let sol = solve_contacts(&cands, &mut ball, &mut RigidWall, &wall, &params, h).unwrap();
    assert!(ball.velocity[0].z.abs() < 1e-6);
    assert!((sol.points[0].lambda_n - m * w).abs() < 1e-12);
}

#[test]
fn speculative_gap_allows_closing_exactly() {
    let wall = big_floor();
    let (m, h) = (1e-3, 0.01);
    let mut ball = one_ball(m, Vec3::new(0.0, 0.0, -100.0));
    let params = ContactParams::default();
    let cands = detect(&[(Vec3::new(0.0, 0.0, 1.3), 0.3)], &wall, &params);
    solve_contacts(&cands, &mut ball, &mut RigidWall, &wall, &params, h).unwrap();
    assert!((ball.velocity[0].z + 1.0 / h).abs() < 1e-9);
    let mut slow = one_ball(m, Vec3::new(0.0, 0.0, -10.0));
    let sol = solve_contacts(&cands, &mut slow, &mut RigidWall, &wall, &params, h).unwrap();
    assert_eq!(sol.points[0].lambda_n, 0.0);
}

#[test]
fn penetration_is_pushed_out_softly() {
    let wall = big_floor();
    let h = 0.01;
    let params = ContactParams::default();
    let mut ball = one_ball(1e-3, Vec3::zeros());
    let cands = detect(&[(Vec3::new(0.0, 0.0, 0.0), 0.3)], &wall, &params);
    solve_contacts(&cands, &mut ball, &mut RigidWall, &wall, &params, h).unwrap();
    let expected = 0.2 * (0.3 - 0.1 * params.contact_distance) / h;
    assert!((ball.velocity[0].z - expected).abs() < 1e-9);
}

#[test]
fn coulomb_slide_deceleration() {
    let wall = big_floor();
    let (m, w, h) = (1e-3, 5.0, 0.01);
    let params = ContactParams::default();
    let mut ball = one_ball(m, Vec3::new(40.0, 0.0, -w));
    let cands = detect(&[(Vec3::new(0.0, 0.0, 0.5), 0.5)], &wall, &params);
    let sol = solve_contacts(&cands, &mut ball, &mut RigidWall, &wall, &params, h).unwrap();
    let ln = sol.points[0].lambda_n;
    assert!((ln - m * w).abs() < 1e-9);
    let decel = 40.0 - ball.velocity[0].x;
    assert!((decel - params.friction_coef * ln / m).abs() < 1e-6);
    assert!(ball.velocity[0].y.abs() < 1e-9);
    assert!((sol.points[0].lambda_t.norm() - params.friction_coef * ln).abs() < 1e-12);
}

#[test]
fn sticking_when_friction_suffices() {
    let wall = big_floor();
    let (m, h) = (1e-3, 0.01);
    let params = ContactParams::default();
    let mut ball = one_ball(m, Vec3::new(0.2, 0.0, -5.0));
    let cands = detect(&[(Vec3::new(0.0, 0.0, 0.5), 0.5)], &wall, &params);
    solve_contacts(&cands, &mut ball, &mut RigidWall, &wall, &params, h).unwrap();
    assert!(ball.velocity[0].norm() < 1e-6);
}

fn point(normal: Vec3, lambda_n: f64) -> ContactPoint {
    ContactPoint {
        node: 0,
        triangle: 0,
        normal,
        gap: 0.0,
        lambda_n,
        lambda_t: Vector2::zeros(),
        tangent: tangent_basis(&normal),
    }
}

#[test]
fn report_examples() {
    let params = ContactParams::default();
    let empty = report(&[], &params, 0.02);
    assert!(!empty.any_contact);
    assert_eq!(empty.resultant, Vec3::zeros());

    let one = report(&[point(Vec3::z(), 0.5)], &params, 0.02);
    assert!(one.any_contact);
    assert!((one.resultant - Vec3::new(0.0, 0.0, 25.0)).norm() < 1e-12);

    let n1 = Vec3::new(0.3, 0.6, 0.8).normalize();
    let n2 = Vec3::new(0.3, -0.6, -0.8).normalize();
    let mut a = point(n1, 0.7);
    a.lambda_t = Vector2::new(0.02, -0.03);
    let mut b = point(n2, 0.7);
    b.tangent = [a.tangent[0].component_mul(&Vec3::new(1.0, -1.0, -1.0)), a.tangent[1].component_mul(&Vec3::new(1.0, -1.0, -1.0))];
    b.lambda_t = a.lambda_t;
    let sym = report(&[a, b], &params, 0.02);
    assert!(sym.resultant.y.abs() < 1e-9 && sym.resultant.z.abs() < 1e-9);
    assert!(sym.resultant.x > 0.0);
}

#[test]
fn distant_unloaded_points_are_not_contacts() {
    let params = ContactParams::default();
    let mut p = point(Vec3::z(), 0.0);
    p.gap = 1.5;
    let r = report(&[p], &params, 0.02);
    assert!(!r.any_contact && r.points.is_empty());
}

/// Random multi-contact fixture: robot balls over a cluster of wall masses.
fn random_fixture(rng: &mut ChaCha8Rng) -> (Vec<Candidate>, PointMasses, PointMasses, SurfaceMesh) {
    let wall_vertices: Vec<Vec3> = (0..6).map(|_| random_vec(rng, 4.0)).collect();
    let triangles = vec![[0, 1, 2], [1, 3, 2], [2, 3, 4], [3, 5, 4]];
    let wall = soup(wall_vertices, triangles);
    let n_robot = 4;
    let robot = PointMasses {
        mass: (0..n_robot).map(|_| rng.random_range(1e-4..1e-3)).collect(),
        velocity: (0..n_robot).map(|_| random_vec(rng, 50.0)).collect(),
    };
    let wall_body = PointMasses {
        mass: (0..6).map(|i| if i % 3 == 0 { f64::INFINITY } else { rng.random_range(1e-3..1e-2) }).collect(),
        velocity: (0..6).map(|_| random_vec(rng, 5.0)).collect(),
    };
    let mut cands = Vec::new();
    for node in 0..n_robot {
        for t in 0..4 {
            let bary = {
                let a: f64 = rng.random_range(0.05..1.0);
                let b: f64 = rng.random_range(0.05..1.0);
                let c: f64 = rng.random_range(0.05..1.0);
                let s = a + b + c;
                [a / s, b / s, c / s]
            };
            if rng.random_bool(0.5) {
                cands.push(Candidate {
                    node,
                    triangle: t,
                    closest: Vec3::zeros(),
                    bary,
                    normal: random_vec(rng, 1.0).normalize(),
                    gap: rng.random_range(-0.4..0.3),
                });
            }
        }
    }
    (cands, robot, wall_body, wall)
}

#[test]
fn friction_cone_and_third_law_on_random_fixtures() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let params = ContactParams::default();
    for _ in 0..200 {
        let (cands, mut robot, mut wall_body, wall) = random_fixture(&mut rng);
        let sol = solve_contacts(&cands, &mut robot, &mut wall_body, &wall, &params, 0.01).unwrap();
        for p in &sol.points {
            assert!(p.lambda_n >= 0.0);
            assert!(p.lambda_t.norm() <= params.friction_coef * p.lambda_n + 1e-9);
        }
        let mut on_robot = Vec3::zeros();
        for (_, p) in &sol.robot_impulses {
            on_robot += p;
        }
        let on_wall: Vec3 = sol.wall_impulses.iter().map(|(_, p)| p).sum();
        assert!((on_robot + on_wall).norm() < 1e-9 * on_robot.norm().max(1.0));
        // Per contact: the barycentric split sums to the negated robot impulse.
        let mut k = 0;
        for (i, p) in sol.points.iter().enumerate() {
            let imp = p.impulse();
            if imp == Vec3::zeros() {
                continue;
            }
            let n = cands[i].bary.iter().filter(|&&b| b != 0.0).count();
            let split: Vec3 = sol.wall_impulses[k..k + n].iter().map(|(_, q)| q).sum();
            assert!((split + imp).norm() < 1e-9 * imp.norm().max(1e-12));
            k += n;
        }
    }
}

/// Frictionless LCP `w = W l + b, l >= 0, w >= 0, l.w = 0` by enumeration.
fn lcp_enumerate(w: &DMatrix<f64>, b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut best = None;
    for mask in 0..(1u32 << n) {
        let active: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let mut l = vec![0.0; n];
        if !active.is_empty() {
            let k = active.len();
            let sub = DMatrix::from_fn(k, k, |r, c| w[(active[r], active[c])]);
            let rhs = nalgebra::DVector::from_iterator(k, active.iter().map(|&i| -b[i]));
            let Some(x) = sub.lu().solve(&rhs) else { continue };
            for (r, &i) in active.iter().enumerate() {
                l[i] = x[r];
            }
        }
        let ok = (0..n).all(|i| {
            let wi: f64 = b[i] + (0..n).map(|j| w[(i, j)] * l[j]).sum::<f64>();
            l[i] >= -1e-12 && wi >= -1e-9
        });
        if ok {
            assert!(best.is_none(), "LCP with PD matrix has a unique solution");
            best = Some(l);
        }
    }
    best.expect("LCP solution")
}

#[test]
fn three_contact_fixtures_match_lcp_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let params = ContactParams {
        friction_coef: 0.0,
        pgs_iterations: 100_000,
        pgs_tolerance: 1e-15,
        ..Default::default()
    };
    let wall = big_floor();
    let h = 0.01;
    for _ in 0..100 {
        let m = rng.random_range(1e-4..1e-3);
        let ball = one_ball(m, random_vec(&mut rng, 100.0));
        let cands: Vec<Candidate> = (0..3)
            .map(|_| {
                let mut n = random_vec(&mut rng, 1.0);
                n.z = n.z.abs() + 0.3;
                Candidate {
                    node: 0,
                    triangle: 0,
                    closest: Vec3::zeros(),
                    bary: [1.0, 0.0, 0.0],
                    normal: n.normalize(),
                    gap: rng.random_range(-0.3..0.3),
                }
            })
            .collect();
        let wmat = DMatrix::from_fn(3, 3, |i, j| cands[i].normal.dot(&cands[j].normal) / m);
        if wmat.clone().cholesky().is_none() || wmat.determinant() < 1e-3 / m.powi(3) {
            continue;
        }
        let b: Vec<f64> = cands
            .iter()
            .map(|c| c.normal.dot(&ball.velocity[0]) - target_normal_velocity(c.gap, h, &params))
            .collect();
        let oracle = lcp_enumerate(&wmat, &b);
        let sol = compute_impulses(&cands, &ball, &RigidWall, &wall, &params, h).unwrap();
        for (p, o) in sol.points.iter().zip(&oracle) {
            assert!((p.lambda_n - o).abs() < 1e-6 * (m * 100.0), "{} vs {o}", p.lambda_n);
        }
        // Dropping any contact: the rest still solve their own LCP and stay non-penetrating.
        for drop in 0..3 {
            let rest: Vec<Candidate> = (0..3).filter(|&i| i != drop).map(|i| cands[i].clone()).collect();
            let mut ball2 = ball.clone();
            let sol2 = solve_contacts(&rest, &mut ball2, &mut RigidWall, &wall, &params, h).unwrap();
            for (c, p) in rest.iter().zip(&sol2.points) {
                let un = c.normal.dot(&ball2.velocity[0]);
                assert!(un >= target_normal_velocity(c.gap, h, &params) - 1e-6);
                assert!(p.lambda_n >= 0.0);
            }
        }
    }
}

#[test]
fn deformable_wall_contact_is_consistent() {
    let mesh = generate_beam(4, 4, 1, 2.0).unwrap();
    let surface = surface_of(&mesh);
    let bottom: Vec<usize> = (0..mesh.vertices.len()).filter(|&i| mesh.vertices[i].z == 0.0).collect();
    let mut body = DeformableBody::new(mesh, MaterialParams::default(), Elasticity::Linear).unwrap();
    body.apply_fixed_constraints(&bottom).unwrap();
    let h = 0.01;
    body.solve_velocity(h, None).unwrap();
    let top: Vec<usize> = surface.vertex_indices();
    body.precompute_compliance(h, &top).unwrap();
    let params = ContactParams {
        friction_coef: 0.0,
        ..Default::default()
    };
    let (m, w) = (1e-5, 20.0);
    let mut ball = one_ball(m, Vec3::new(0.0, 0.0, -w));
    let cands = prune_candidates(detect(&[(Vec3::new(3.3, 4.1, 2.5), 0.5)], &surface, &params), 1, 10.0);
    assert_eq!(cands.len(), 1);
    assert!(cands[0].gap.abs() < 1e-9);
    let sol = solve_contacts(&cands, &mut ball, &mut body, &surface, &params, h).unwrap();
    assert!(sol.converged);
    let tri = surface.triangles[cands[0].triangle];
    let vw: Vec3 = (0..3).map(|k| body.velocity(tri[k]) * cands[0].bary[k]).sum();
    let rel = (ball.velocity[0] - vw).dot(&cands[0].normal);
    assert!(rel.abs() < 1e-6 * w, "{rel}");
    assert!(vw.z < 0.0, "wall yields");
    assert!(sol.points[0].lambda_n < m * w);
}

#[test]
fn pruning_keeps_nearest_distinct_normals() {
    let mk = |triangle, gap, normal: Vec3| Candidate {
        node: 0,
        triangle,
        closest: Vec3::zeros(),
        bary: [1.0, 0.0, 0.0],
        normal: normal.normalize(),
        gap,
    };
    let cands = vec![
        mk(0, 0.4, Vec3::z()),
        mk(1, 0.1, Vec3::new(0.01, 0.0, 1.0)),
        mk(2, 0.3, Vec3::x()),
        mk(3, 0.2, Vec3::y()),
        mk(4, 0.0, -Vec3::x()),
    ];
    let kept = prune_candidates(cands, 3, 10.0);
    let ids: Vec<usize> = kept.iter().map(|c| c.triangle).collect();
    assert_eq!(ids, vec![1, 3, 4]);
}
