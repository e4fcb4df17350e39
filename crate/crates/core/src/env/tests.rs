use super::*;
use std::sync::OnceLock;

fn base() -> SceneConfig {
    SceneConfig::standard()
}

fn geometry() -> &'static SceneGeometry {
    static GEO: OnceLock<SceneGeometry> = OnceLock::new();
    GEO.get_or_init(|| SceneGeometry::build(&base()).unwrap())
}

fn scene(variant: Variant) -> Scene {
    Scene::with_geometry(make_variant(&base(), variant), geometry().clone()).unwrap()
}

#[test]
fn reward_table() {
    let (r, s, b) = reward(5.0, 20.0, 15.0, 3.0);
    assert_eq!((r, s, b), (-5.0, false, false));
    let (r, s, b) = reward(2.9, 20.0, 15.0, 3.0);
    assert_eq!(r, 1.0e4 - 2.9);
    assert!(s && !b);
    let (r, s, b) = reward(5.0, 10.0, 15.0, 3.0);
    assert_eq!(r, -1.0e4 - 5.0);
    assert!(!s && b);
    // exactly at the radius is not a success
    assert!(!reward(3.0, 20.0, 15.0, 3.0).1);
    // reaching outside the plane counts as success only
    let (r, s, b) = reward(1.0, 10.0, 15.0, 3.0);
    assert!(s && !b);
    assert_eq!(r, 1.0e4 - 1.0);
}

#[test]
fn periodic_force_alternates() {
    let f0 = Vec3::new(0.3, -1.0, 0.25);
    for t in 0..20 {
        assert_eq!(periodic_force(t, 20, &f0), f0);
    }
    for t in 20..40 {
        assert_eq!(periodic_force(t, 20, &f0), -f0);
    }
    for t in 0..400 {
        assert_eq!(periodic_force(t, 7, &f0), periodic_force(t + 14, 7, &f0));
    }
    assert_eq!(periodic_force(0, 1, &f0), f0);
    assert_eq!(periodic_force(1, 1, &f0), -f0);
}

#[test]
fn variants_touch_only_their_fields() {
    let c = base();
    let ue1 = make_variant(&c, Variant::Ue1);
    let ue2 = make_variant(&c, Variant::Ue2);
    let se = make_variant(&c, Variant::Se);
    let de = make_variant(&c, Variant::De);
    for i in 0..3 {
        assert_eq!(ue1.f0[i], 2.0 * c.f0[i]);
        assert_eq!(ue2.f0[i], 3.0 * c.f0[i]);
        assert_eq!(se.f0[i], 0.0);
        assert_eq!(de.f0[i], c.f0[i]);
    }
    assert_eq!(ue1.target_set, TargetSetId::B);
    assert_eq!(de.target_set, TargetSetId::A);
    let mut back = ue2.clone();
    back.variant = c.variant;
    back.f0 = c.f0;
    back.target_set = c.target_set;
    assert_eq!(back, c);
}

#[test]
fn variant_names_parse() {
    for v in Variant::ALL {
        assert_eq!(Variant::parse(v.name()), Some(v));
        assert_eq!(Variant::parse(&v.name().to_lowercase()), Some(v));
    }
    assert_eq!(Variant::parse("XE"), None);
}

#[test]
fn config_round_trips_through_toml() {
    let c = base();
    let text = c.to_toml();
    let back = SceneConfig::from_toml(&text).unwrap();
    assert_eq!(back, c);
}

#[test]
fn config_rejects_unknown_keys_and_bad_values() {
    let text = base().to_toml();
    let with_extra = format!("surprise = 1\n{text}");
    assert!(matches!(SceneConfig::from_toml(&with_extra), Err(EnvError::Config(_))));

    let mut c = base();
    c.mesh = None;
    assert!(matches!(SceneConfig::from_toml(&c.to_toml()), Err(EnvError::Config(m)) if m.contains("mesh")));

    let mut c = base();
    c.config_version = 99;
    assert!(c.validate().is_err());
    let mut c = base();
    c.success_radius = 0.0;
    assert!(c.validate().is_err());
    let mut c = base();
    c.substeps = 0;
    assert!(c.validate().is_err());
}

#[test]
fn boundary_outside_mesh_is_rejected() {
    let mut c = base();
    c.boundary_x = -50.0;
    assert!(matches!(SceneGeometry::build(&c), Err(EnvError::Config(m)) if m.contains("boundary_x")));
}

#[test]
fn out_of_range_fixed_index_is_a_config_error() {
    let mut c = base();
    c.fixed_indices = Some(vec![0, 1, 1_000_000]);
    match SceneGeometry::build(&c) {
        Err(EnvError::Config(m)) => assert!(m.contains("fixed_indices") && m.contains("1000000"), "{m}"),
        other => panic!("expected config error, got {other:?}"),
    }
}

#[test]
fn target_sets_are_disjoint_inner_and_away_from_entry() {
    let g = geometry();
    let t = &g.targets;
    assert!(!t.wall_a.is_empty() && !t.wall_b.is_empty());
    let inner = g.inner.vertex_indices();
    let tags = g.mesh.tags.as_ref().unwrap();
    let min_x = g.entry_x + 2.0 * base().contact.contact_distance;
    for &i in t.wall_a.iter().chain(&t.wall_b) {
        assert!(inner.binary_search(&i).is_ok());
        assert_eq!(tags[i], TAG_INNER);
        assert!(g.mesh.vertices[i].x >= min_x);
        assert!(!g.fixed.contains(&i));
    }
    for i in &t.wall_a {
        assert!(!t.wall_b.contains(i));
    }
    for p in t.free_a.iter().chain(&t.free_b) {
        assert!(wall_clearance(p, &g.inner) >= base().free_target_margin);
    }
}

#[test]
fn build_is_deterministic() {
    let a = Scene::build(make_variant(&base(), Variant::De)).unwrap();
    let b = Scene::build(make_variant(&base(), Variant::De)).unwrap();
    assert_eq!(a.wall().unwrap().u, b.wall().unwrap().u);
    assert_eq!(a.wall().unwrap().v, b.wall().unwrap().v);
    assert_eq!(a.rod.x, b.rod.x);
    assert_eq!(a.geometry.targets.wall_a, b.geometry.targets.wall_a);
    assert_eq!(a.geometry.targets.free_b, b.geometry.targets.free_b);
}

#[test]
fn wall_is_settled_before_first_reset() {
    let s = scene(Variant::Se);
    assert!(s.wall().unwrap().max_speed() < 1e-3);
    for &i in &s.geometry.fixed {
        assert_eq!(s.wall().unwrap().position(i), s.geometry.mesh.vertices[i]);
    }
}

#[test]
fn reset_is_reproducible_and_out_of_contact() {
    let mut s = scene(Variant::De);
    let o1 = s.reset(11).unwrap();
    let t1 = s.target();
    let o2 = s.reset(11).unwrap();
    assert_eq!(o1, o2);
    assert_eq!(t1, s.target());
    assert_eq!(o1.contact, 0.0);
    assert_eq!(o1.force, Vec3::zeros());
    assert_eq!(s.step_count(), 0);
    let seen: std::collections::BTreeSet<_> = (0..40)
        .map(|k| {
            s.reset(k).unwrap();
            match s.target().unwrap() {
                Target::Vertex(i) => i,
                Target::Point(_) => unreachable!(),
            }
        })
        .collect();
    assert!(seen.len() > 5);
}

#[test]
fn free_environment_draws_free_space_targets() {
    let mut s = scene(Variant::Fe);
    for k in 0..10 {
        s.reset(k).unwrap();
        let Some(Target::Point(p)) = s.target() else {
            panic!("FE target should be a point");
        };
        assert!(wall_clearance(&p, &s.geometry.inner) > 0.0);
    }
    assert!(s.wall().is_none());
}

#[test]
fn static_wall_stays_still_without_robot_motion() {
    let mut s = scene(Variant::Se);
    s.reset(0).unwrap();
    let start = s.wall().unwrap().positions();
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        s.step(&[0.0; 5]).unwrap();
        let now = s.wall().unwrap().positions();
        for (a, b) in start.iter().zip(&now) {
            worst = worst.max((a - b).norm());
        }
    }
    assert!(worst < 1e-3, "wall drifted {worst} mm");
}

#[test]
fn forced_wall_oscillates_with_period_two_t() {
    let mut c = make_variant(&base(), Variant::De);
    c.max_steps = 1000;
    let mut s = Scene::with_geometry(c.clone(), geometry().clone()).unwrap();
    s.reset(0).unwrap();
    let probe = s.geometry.force_nodes[0];
    let rest = s.wall().unwrap().position(probe);
    let mut series = Vec::new();
    for _ in 0..(8 * c.period) {
        s.step(&[0.0; 5]).unwrap();
        series.push((s.wall().unwrap().position(probe) - rest).y);
    }
    // skip the start-up transient, then find the autocorrelation peak
    let x = &series[2 * c.period..];
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let ac = |lag: usize| -> f64 { (0..x.len() - lag).map(|i| (x[i] - mean) * (x[i + lag] - mean)).sum::<f64>() / (x.len() - lag) as f64 };
    let lags = c.period..(3 * c.period);
    let best = lags.max_by(|&a, &b| ac(a).total_cmp(&ac(b))).unwrap();
    assert!(best.abs_diff(2 * c.period) <= 1, "peak at lag {best}");
    let amp = x.iter().fold(0.0f64, |m, v| m.max((v - mean).abs()));
    assert!(amp > 0.1, "forced displacement amplitude {amp} mm");
}

#[test]
fn observation_is_target_minus_tip() {
    let mut s = scene(Variant::De);
    s.reset(3).unwrap();
    for k in 0..30 {
        let a = [0.2, -0.1, 0.3, 0.0, if k % 3 == 0 { 0.4 } else { 0.1 }];
        let r = s.step(&a).unwrap();
        let p = r.info.target - r.info.ee;
        assert!((r.observation.p - p).norm() < 1e-9);
        assert!((r.info.distance - p.norm()).abs() < 1e-9);
        assert_eq!(r.observation.to_vec().len(), OBS_DIM);
        assert!(r.observation.force.norm() <= 1.0 + 1e-9);
        assert!(r.observation.contact == 0.0 || r.observation.contact == 1.0);
        assert_eq!(r.observation.cables, s.act.cables);
        assert_eq!(r.observation.axial_prev, a[4]);
        if r.terminated || r.truncated {
            break;
        }
    }
}

#[test]
fn force_normalization_clamps_to_unit_ball() {
    assert_eq!(normalize_force(&Vec3::new(10.0, 0.0, 0.0), 5.0), Vec3::new(1.0, 0.0, 0.0));
    assert_eq!(normalize_force(&Vec3::new(0.0, 2.5, 0.0), 5.0), Vec3::new(0.0, 0.5, 0.0));
    assert_eq!(normalize_force(&Vec3::zeros(), 5.0), Vec3::zeros());
    let f = normalize_force(&Vec3::new(30.0, -40.0, 0.0), 5.0);
    assert!((f.norm() - 1.0).abs() < 1e-12);
}

/// Drives the tip into the wall; returns the scene and the step results.
fn push_into_wall(force_observation: bool) -> Vec<StepResult> {
    let mut c = make_variant(&base(), Variant::Se);
    c.force_observation = force_observation;
    let mut s = Scene::with_geometry(c, geometry().clone()).unwrap();
    s.reset(0).unwrap();
    let mut out = Vec::new();
    for _ in 0..60 {
        let r = s.step(&[0.0, 0.4, 0.0, -0.4, 0.3]).unwrap();
        let done = r.terminated || r.truncated;
        out.push(r);
        if done {
            break;
        }
    }
    out
}

#[test]
fn force_blind_mode_zeroes_contact_channels() {
    let seeing = push_into_wall(true);
    let blind = push_into_wall(false);
    assert!(seeing.iter().any(|r| r.observation.contact == 1.0 && r.observation.force.norm() > 0.0));
    assert_eq!(seeing.len(), blind.len());
    for (a, b) in seeing.iter().zip(&blind) {
        assert_eq!(b.observation.contact, 0.0);
        assert_eq!(b.observation.force, Vec3::zeros());
        // dynamics are unaffected by what the policy can see
        assert_eq!(a.info.ee, b.info.ee);
        assert_eq!(a.info.force, b.info.force);
    }
}

#[test]
fn contact_pushes_the_tip_back() {
    let rs = push_into_wall(true);
    let r = rs.iter().find(|r| r.info.force.norm() > 1e-6).expect("tip presses on the wall");
    // the wall force on the tip points back into the lumen, toward -y here
    assert!(r.info.force.y < 0.0, "{:?}", r.info.force);
}

#[test]
fn truncates_exactly_at_max_steps() {
    let mut c = make_variant(&base(), Variant::Se);
    c.max_steps = 12;
    let mut s = Scene::with_geometry(c, geometry().clone()).unwrap();
    s.reset(2).unwrap();
    for k in 1..=12 {
        let r = s.step(&[0.0; 5]).unwrap();
        assert!(!r.terminated);
        assert_eq!(r.truncated, k == 12);
    }
    assert!(matches!(s.step(&[0.0; 5]), Err(EnvError::Usage(_))));
    s.reset(2).unwrap();
    assert!(s.step(&[0.0; 5]).is_ok());
}

#[test]
fn wrong_action_length_is_a_usage_error() {
    let mut s = scene(Variant::Fe);
    s.reset(0).unwrap();
    assert!(matches!(s.step(&[0.0; 4]), Err(EnvError::Usage(_))));
}

#[test]
fn reward_decomposes_and_terminations_are_sound() {
    let mut s = scene(Variant::De);
    for seed in 0..3 {
        s.reset(seed).unwrap();
        loop {
            let p = s.observe().p;
            let d = p.norm().max(1e-9);
            let a = [0.0, 0.4 * p.y / d, 0.0, -0.4 * p.y / d, 0.4];
            let r = s.step(&a).unwrap();
            let c = &s.config;
            let expect = -r.info.distance
                + if r.info.boundary { -BOUNDARY_PENALTY } else { 0.0 }
                + if r.info.success { SUCCESS_BONUS } else { 0.0 };
            assert_eq!(r.reward, expect);
            assert!(!(r.terminated && r.truncated));
            if r.terminated {
                assert!(r.info.success ^ r.info.boundary);
            }
            if r.info.success {
                assert!(r.info.distance < c.success_radius);
            }
            if r.truncated {
                assert_eq!(s.step_count(), c.max_steps);
            }
            if r.terminated || r.truncated {
                break;
            }
        }
    }
}

#[test]
fn identical_inputs_give_identical_trajectories() {
    let run = || {
        let mut s = scene(Variant::Ue1);
        s.reset(5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut out = Vec::new();
        for _ in 0..40 {
            let a: Vec<f64> = (0..5).map(|_| rng.random_range(-0.4..0.4)).collect();
            let r = s.step(&a).unwrap();
            out.push((r.observation.to_vec(), r.reward, r.info.force));
            if r.terminated || r.truncated {
                break;
            }
        }
        out
    };
    let a = run();
    let b = run();
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), y.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!(x.1.to_bits(), y.1.to_bits());
        assert_eq!(x.2, y.2);
    }
}

#[test]
fn constant_curvature_tip_matches_arc_geometry() {
    let j = Vec3::new(1.0, 0.0, 0.0);
    assert!((constant_curvature_tip(&j, 10.0, 0.0, 0.3) - Vec3::new(11.0, 0.0, 0.0)).norm() < 1e-12);
    // quarter circle of radius 2L/pi
    let r = 20.0 / std::f64::consts::PI;
    let p = constant_curvature_tip(&j, 10.0, std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2);
    assert!((p - Vec3::new(1.0 + r, 0.0, r)).norm() < 1e-12);
    let (adv, theta, _, err) = cc_inverse(&p, 1.0, 5.0, 10.0);
    assert!(err < 1e-9 && adv == 0.0 && (theta - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
}

#[test]
fn cables_for_bend_invert_the_cable_map() {
    for (theta, phi) in [(0.5, 0.0), (1.2, 1.0), (0.3, -2.5)] {
        let c = cables_for_bend(theta, phi, 3.0);
        let (ty, tz) = endoscope::target_bend(&c, 3.0);
        assert!((ty.hypot(tz) - theta).abs() < 1e-12);
        // bending direction is the rotation vector crossed with the axis
        let dir = Vec3::new(0.0, ty, tz).cross(&Vec3::x()).normalize();
        assert!((dir - Vec3::new(0.0, phi.cos(), phi.sin())).norm() < 1e-12);
    }
}
