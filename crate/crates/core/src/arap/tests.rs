use nalgebra::{Rotation3, Unit};
use proptest::prelude::*;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::mesh::primitives::{capped_cylinder, icosphere, tetrahedron};
use crate::mesh::{build_adjacency, Mesh, Vec3};

fn rot_z(deg: f64) -> Rotation {
    *Rotation3::from_axis_angle(&Vec3::z_axis(), deg.to_radians()).matrix()
}

fn random_rotation(rng: &mut ChaCha8Rng) -> Rotation {
    let axis = Unit::new_normalize(Vec3::new(
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
    ));
    *Rotation3::from_axis_angle(&axis, rng.gen_range(-3.1..3.1)).matrix()
}

fn cell_energy(edges: &[Vec3], deformed: &[Vec3], r: &Rotation) -> f64 {
    edges
        .iter()
        .zip(deformed)
        .map(|(e, d)| (d - r * e).norm_squared())
        .sum()
}

/// Exhaustive ZYZ Euler-angle grid over SO(3) at `step_deg` spacing.
fn grid_minimum(edges: &[Vec3], deformed: &[Vec3], step_deg: f64) -> f64 {
    let steps_full = (360.0 / step_deg).round() as usize;
    let steps_half = (180.0 / step_deg).round() as usize;
    let mut best = f64::INFINITY;
    for a in 0..steps_full {
        let ra = Rotation3::from_axis_angle(&Vec3::z_axis(), (a as f64 * step_deg).to_radians());
        for b in 0..=steps_half {
            let rb = Rotation3::from_axis_angle(&Vec3::y_axis(), (b as f64 * step_deg).to_radians());
            let rab = ra * rb;
            for c in 0..steps_full {
                let rc = Rotation3::from_axis_angle(&Vec3::z_axis(), (c as f64 * step_deg).to_radians());
                let r = *(rab * rc).matrix();
                best = best.min(cell_energy(edges, deformed, &r));
            }
        }
    }
    best
}

#[test]
fn fit_rotation_identity() {
    let e = vec![
        Vec3::new(1.0, 0.0, 0.0),
        Vec3::new(0.0, 2.0, 0.0),
        Vec3::new(0.3, 0.1, 1.0),
    ];
    let r = fit_rotation(&e, &e, &[1.0; 3]).unwrap();
    assert!((r - Rotation::identity()).abs().max() < 1e-12);
}

#[test]
fn fit_rotation_exact_rigid_case() {
    let r_true = rot_z(90.0);
    let e = vec![Vec3::x(), Vec3::y(), Vec3::z()];
    let d: Vec<Vec3> = e.iter().map(|v| r_true * v).collect();
    let r = fit_rotation(&e, &d, &[1.0; 3]).unwrap();
    assert!((r - r_true).abs().max() < 1e-9);
}

#[test]
fn fit_rotation_never_reflects() {
    // a mirrored cell: the unconstrained optimum is a reflection
    let e = vec![Vec3::x(), Vec3::y(), Vec3::z()];
    let d = vec![Vec3::x(), Vec3::y(), -Vec3::z() * 0.1];
    let r = fit_rotation(&e, &d, &[1.0; 3]).unwrap();
    assert!((r.determinant() - 1.0).abs() < 1e-9);
    assert!((r.transpose() * r - Rotation::identity()).abs().max() < 1e-9);
}

#[test]
fn fit_rotation_beats_grid_on_noisy_cells() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..2 {
        let r_true = random_rotation(&mut rng);
        let e: Vec<Vec3> = (0..6)
            .map(|_| {
                Vec3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                )
            })
            .collect();
        let d: Vec<Vec3> = e
            .iter()
            .map(|v| {
                r_true * v
                    + Vec3::new(
                        rng.gen_range(-0.01..0.01),
                        rng.gen_range(-0.01..0.01),
                        rng.gen_range(-0.01..0.01),
                    )
            })
            .collect();
        let r = fit_rotation(&e, &d, &[1.0; 6]).unwrap();
        let fitted = cell_energy(&e, &d, &r);
        let grid = grid_minimum(&e, &d, 6.0);
        assert!(fitted <= grid + 1e-9, "fitted {fitted} > grid {grid}");
    }
}

#[test]
fn fit_rotation_degenerate_cell() {
    let z = vec![Vec3::zeros(); 3];
    assert!(matches!(
        fit_rotation(&z, &z, &[1.0; 3]),
        Err(ArapError::DegenerateCell)
    ));
    assert!(matches!(
        fit_rotation(&[Vec3::x()], &[Vec3::x()], &[0.0]),
        Err(ArapError::NonPositiveWeight)
    ));
}

fn sphere() -> Mesh {
    icosphere(2)
}

fn all_anchors(m: &Mesh) -> Vec<(usize, Vec3)> {
    m.vertices().iter().copied().enumerate().collect()
}

#[test]
fn energy_zero_for_identity_and_rigid_motion() {
    let m = sphere();
    let adj = build_adjacency(&m).unwrap();
    let p = ArapProblem::new(&m, &adj, Weighting::Uniform, vec![(0, m.vertices()[0])]).unwrap();
    assert_eq!(
        arap_energy(&p, &m, &RotationField::identity(m.num_vertices())).unwrap(),
        0.0
    );
    let r = rot_z(37.0) * *Rotation3::from_axis_angle(&Vec3::x_axis(), 0.4).matrix();
    let moved = m.map_vertices(|v| r * v + Vec3::new(1.0, -2.0, 0.5));
    let e = arap_energy(&p, &moved, &RotationField::uniform(m.num_vertices(), r)).unwrap();
    assert!(e < 1e-10, "{e}");
}

#[test]
fn energy_of_single_vertex_displacement() {
    let m = sphere();
    let adj = build_adjacency(&m).unwrap();
    let p = ArapProblem::new(&m, &adj, Weighting::Uniform, vec![(0, m.vertices()[0])]).unwrap();
    let i = 17;
    let j = adj.one_ring(i)[0];
    let d = (m.vertices()[j] - m.vertices()[i]) * 0.25;
    let mut moved = m.clone();
    moved.vertices_mut()[i] += d;
    // each incident edge changes by d; it appears in cell i and in cell j
    let expected = 2.0 * adj.degree(i) as f64 * d.norm_squared();
    let e = arap_energy(&p, &moved, &RotationField::identity(m.num_vertices())).unwrap();
    assert!((e - expected).abs() < 1e-12 * expected.max(1.0));
}

#[test]
fn solve_identity_all_anchored() {
    let m = sphere();
    let adj = build_adjacency(&m).unwrap();
    let p = ArapProblem::new(&m, &adj, Weighting::Uniform, all_anchors(&m)).unwrap();
    let out = solve_positions(&p, &RotationField::identity(m.num_vertices())).unwrap();
    assert_eq!(out, m);
}

#[test]
fn solve_global_rotation_with_two_anchors() {
    let m = sphere();
    let adj = build_adjacency(&m).unwrap();
    let r = rot_z(25.0) * *Rotation3::from_axis_angle(&Vec3::y_axis(), -0.7).matrix();
    let anchors = vec![(3, r * m.vertices()[3]), (100, r * m.vertices()[100])];
    let p = ArapProblem::new(&m, &adj, Weighting::Uniform, anchors).unwrap();
    let rf = RotationField::uniform(m.num_vertices(), r);
    let out = solve_positions(&p, &rf).unwrap();
    let expected = m.map_vertices(|v| r * v);
    assert!(out.max_vertex_distance(&expected) < 1e-6);
    assert!(linear_residual(&p, &rf, &out) <= 1e-8);
}

#[test]
fn solve_single_free_vertex_by_hand() {
    let m = sphere();
    let adj = build_adjacency(&m).unwrap();
    let free = 40;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let rotations: Vec<Rotation> = (0..m.num_vertices()).map(|_| random_rotation(&mut rng)).collect();
    let rf = RotationField::new(rotations.clone());
    let anchors: Vec<(usize, Vec3)> = all_anchors(&m)
        .into_iter()
        .filter(|&(i, _)| i != free)
        .map(|(i, v)| (i, v + Vec3::new(0.01 * i as f64, 0.0, 0.0)))
        .collect();
    let p = ArapProblem::new(&m, &adj, Weighting::Uniform, anchors.clone()).unwrap();
    let out = solve_positions(&p, &rf).unwrap();
    let v = m.vertices();
    let mut acc = Vec3::zeros();
    for &j in adj.one_ring(free) {
        let pj = anchors.iter().find(|a| a.0 == j).unwrap().1;
        acc += pj + 0.5 * (rotations[free] + rotations[j]) * (v[free] - v[j]);
    }
    let expected = acc / adj.degree(free) as f64;
    assert!((out.vertices()[free] - expected).norm() < 1e-12);
}

#[test]
fn unanchored_component_is_reported() {
    let t = tetrahedron();
    let mut verts = t.vertices().to_vec();
    verts.extend(t.vertices().iter().map(|v| v + Vec3::new(4.0, 0.0, 0.0)));
    let mut faces = t.faces().to_vec();
    faces.extend(t.faces().iter().map(|f| [f[0] + 4, f[1] + 4, f[2] + 4]));
    let m = Mesh::new(verts, faces).unwrap();
    let adj = build_adjacency(&m).unwrap();
    let p = ArapProblem::new(&m, &adj, Weighting::Uniform, vec![(1, m.vertices()[1])]).unwrap();
    match solve_positions(&p, &RotationField::identity(8)) {
        Err(ArapError::UnanchoredComponent {
            component: 1,
            size: 4,
            first_vertex: 4,
        }) => {}
        other => panic!("unexpected {other:?}"),
    }
    assert!(matches!(
        ArapProblem::new(&m, &adj, Weighting::Uniform, vec![]),
        Err(ArapError::NoAnchors)
    ));
}

#[test]
fn deform_fixed_point() {
    let m = sphere();
    let out = arap_deform(&m, &m, 0.05, 1, 3).unwrap();
    assert!(out.max_vertex_distance(&m) < 1e-6);
}

#[test]
fn deform_recovers_rigid_motion() {
    let m = sphere();
    let r = rot_z(60.0) * *Rotation3::from_axis_angle(&Vec3::x_axis(), 1.1).matrix();
    let t = Vec3::new(0.3, 2.0, -1.0);
    let target = m.map_vertices(|v| r * v + t);
    let out = arap_deform(&m, &target, 0.05, 1, 11).unwrap();
    assert!(out.max_vertex_distance(&target) < 1e-3);
}

fn bent(m: &Mesh, curvature: f64, noise: f64, seed: u64) -> Mesh {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let verts = m
        .vertices()
        .iter()
        .map(|v| {
            let r = Rotation3::from_axis_angle(&Vec3::z_axis(), curvature * v.x);
            let n = Vec3::new(
                rng.gen_range(-noise..=noise),
                rng.gen_range(-noise..=noise),
                rng.gen_range(-noise..=noise),
            );
            r * Vec3::new(0.0, v.y, v.z) + Vec3::new(v.x, 0.0, 0.0) + n
        })
        .collect();
    Mesh::with_topology(verts, std::sync::Arc::clone(m.topology()))
}

fn energy_at(engine: &ArapEngine, source: &Mesh, deformed: &Mesh, anchors: &[usize]) -> f64 {
    let anchors = anchors.iter().map(|&i| (i, deformed.vertices()[i])).collect();
    let p = ArapProblem::new(source, engine.adjacency(), Weighting::Uniform, anchors).unwrap();
    let r = p.fit_rotations(deformed).unwrap();
    arap_energy(&p, deformed, &r).unwrap()
}

#[test]
fn more_iterations_do_not_increase_energy_on_bent_cylinder() {
    let source = capped_cylinder(16, 10, 0.3, 3.0);
    let target = bent(&source, 0.6, 0.02, 1);
    let anchors = sample_anchors(source.num_vertices(), 0.05, 4).unwrap();
    let mut energies = Vec::new();
    for iterations in [1, 2] {
        let cfg = ArapConfig {
            iterations,
            ..Default::default()
        };
        let engine = ArapEngine::new(&source, cfg).unwrap();
        let out = engine.deform_with_anchors(&source, &target, &anchors).unwrap();
        let anchored: Vec<(usize, Vec3)> = anchors.iter().map(|&i| (i, target.vertices()[i])).collect();
        let p = ArapProblem::new(&source, engine.adjacency(), Weighting::Uniform, anchored).unwrap();
        let e = arap_energy(&p, &out, &p.fit_rotations(&out).unwrap()).unwrap();
        energies.push(e);
    }
    assert!(energies[1] <= energies[0], "{energies:?}");
}

#[test]
fn cotangent_weights_are_positive_and_symmetric() {
    let m = capped_cylinder(6, 8, 0.4, 2.0);
    let adj = build_adjacency(&m).unwrap();
    let p = ArapProblem::new(&m, &adj, Weighting::Cotangent, vec![(0, m.vertices()[0])]).unwrap();
    for i in 0..m.num_vertices() {
        for (k, &j) in adj.one_ring(i).iter().enumerate() {
            let w = p.weights(i)[k];
            assert!(w > 0.0);
            let back = adj.one_ring(j).iter().position(|&x| x == i).unwrap();
            assert_eq!(w, p.weights(j)[back]);
        }
    }
    let cfg = ArapConfig {
        weighting: Weighting::Cotangent,
        ..Default::default()
    };
    let target = bent(&m, 0.4, 0.0, 0);
    ArapEngine::new(&m, cfg).unwrap().deform(&m, &target, 1).unwrap();
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn alternation_descends_and_keeps_rotations_valid(seed in any::<u64>(), noise in 0.0f64..0.1) {
        let source = capped_cylinder(8, 8, 0.3, 2.0);
        let target = bent(&source, 0.8, noise, seed);
        let engine = ArapEngine::new(&source, ArapConfig::default()).unwrap();
        let anchors = sample_anchors(source.num_vertices(), 0.1, seed).unwrap();
        let anchored: Vec<(usize, Vec3)> = anchors.iter().map(|&i| (i, target.vertices()[i])).collect();
        let p = ArapProblem::new(&source, engine.adjacency(), Weighting::Uniform, anchored).unwrap();
        let r0 = p.fit_rotations(&target).unwrap();
        prop_assert!(r0.is_valid(1e-6));
        let e0 = arap_energy(&p, &target, &r0).unwrap();
        let x1 = solve_positions(&p, &r0).unwrap();
        prop_assert!(linear_residual(&p, &r0, &x1) <= 1e-8);
        let e_mid = arap_energy(&p, &x1, &r0).unwrap();
        let r1 = p.fit_rotations(&x1).unwrap();
        prop_assert!(r1.is_valid(1e-6));
        let e1 = arap_energy(&p, &x1, &r1).unwrap();
        prop_assert!(e_mid <= e0 + 1e-10 * e0.max(1.0));
        prop_assert!(e1 <= e_mid + 1e-10 * e_mid.max(1.0));
        for &(i, q) in p.anchors() {
            prop_assert_eq!(x1.vertices()[i], q);
        }
        let e_engine = energy_at(&engine, &source, &x1, &anchors);
        prop_assert!((e_engine - e1).abs() <= 1e-9 * e1.max(1.0));
    }

    #[test]
    fn deform_is_translation_equivariant(seed in any::<u64>(), tx in -5.0f64..5.0, ty in -5.0f64..5.0, tz in -5.0f64..5.0) {
        let source = capped_cylinder(8, 8, 0.3, 2.0);
        let target = bent(&source, 0.5, 0.01, seed);
        let t = Vec3::new(tx, ty, tz);
        let a = arap_deform(&source, &target, 0.05, 1, seed).unwrap();
        let b = arap_deform(&source.translated(&t), &target.translated(&t), 0.05, 1, seed).unwrap();
        prop_assert!(b.max_vertex_distance(&a.translated(&t)) < 1e-9);
    }
}
