use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::mesh::primitives::{capped_cylinder, grid, icosahedron, icosphere, tetrahedron};
use crate::mesh::{build_adjacency, Vec3};
use crate::multires::build_hierarchy;
use crate::nn::{ParamStore, Tensor};

fn spirals_of(m: &Mesh, len: usize) -> SpiralSet {
    build_spirals(m, &build_adjacency(m).unwrap(), len).unwrap()
}

fn random_tensor(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

#[test]
fn icosahedron_spiral_is_self_then_ring() {
    let m = icosahedron();
    let adj = build_adjacency(&m).unwrap();
    let s = build_spirals(&m, &adj, 6).unwrap();
    for v in 0..12 {
        assert_eq!(s.spiral(v)[0], v);
        assert_eq!(&s.spiral(v)[1..], adj.one_ring(v));
    }
}

#[test]
fn grid_interior_spiral_walks_counterclockwise_from_lowest() {
    let n = 8;
    let m = grid(n);
    let s = spirals_of(&m, 7);
    let v = 3 * n + 4;
    let spiral = s.spiral(v);
    assert_eq!(spiral[0], v);
    // neighbours of the generated triangulation, sorted by angle from the lowest index
    let p = m.vertices()[v];
    let mut ring: Vec<usize> = m
        .faces()
        .iter()
        .filter(|f| f.contains(&v))
        .flat_map(|f| f.iter().copied())
        .filter(|&w| w != v)
        .collect();
    ring.sort_unstable();
    ring.dedup();
    let start = ring[0];
    let angle = |w: usize| {
        let d = m.vertices()[w] - p;
        let d0 = m.vertices()[start] - p;
        (d.y.atan2(d.x) - d0.y.atan2(d0.x)).rem_euclid(std::f64::consts::TAU)
    };
    ring.sort_by(|&a, &b| angle(a).total_cmp(&angle(b)));
    assert_eq!(&spiral[1..], &ring[..]);
}

#[test]
fn short_spirals_are_padded() {
    let s = spirals_of(&tetrahedron(), 8);
    for v in 0..4 {
        let sp = s.spiral(v);
        assert_eq!(&sp[4..], &[PAD; 4]);
        let mut real: Vec<usize> = sp[..4].to_vec();
        real.sort_unstable();
        assert_eq!(real, vec![0, 1, 2, 3]);
    }
}

#[test]
fn isolated_vertex_is_rejected() {
    let t = tetrahedron();
    let mut v = t.vertices().to_vec();
    v.push(Vec3::new(5.0, 5.0, 5.0));
    let m = Mesh::new(v, t.faces().to_vec()).unwrap();
    let adj = build_adjacency(&m).unwrap();
    assert!(matches!(
        build_spirals(&m, &adj, 4),
        Err(SpiralError::IsolatedVertex(4))
    ));
    assert!(matches!(
        build_spirals(&t, &build_adjacency(&t).unwrap(), 0),
        Err(SpiralError::ZeroLength)
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn spirals_are_distinct_and_ring_ordered(len in 1usize..30) {
        let m = icosphere(2);
        let adj = build_adjacency(&m).unwrap();
        let s = build_spirals(&m, &adj, len).unwrap();
        for v in 0..m.num_vertices() {
            let sp: Vec<usize> = s.spiral(v).iter().copied().filter(|&i| i != PAD).collect();
            prop_assert_eq!(sp[0], v);
            let mut sorted = sp.clone();
            sorted.sort_unstable();
            sorted.dedup();
            prop_assert_eq!(sorted.len(), sp.len());
            // graph distance never decreases along the spiral
            let dist = bfs(&adj, v);
            for w in sp.windows(2) {
                prop_assert!(dist[w[0]] <= dist[w[1]]);
            }
        }
    }
}

fn bfs(adj: &crate::mesh::Adjacency, s: usize) -> Vec<usize> {
    let mut d = vec![usize::MAX; adj.num_vertices()];
    d[s] = 0;
    let mut q = std::collections::VecDeque::from([s]);
    while let Some(u) = q.pop_front() {
        for &w in adj.one_ring(u) {
            if d[w] == usize::MAX {
                d[w] = d[u] + 1;
                q.push_back(w);
            }
        }
    }
    d
}

/// Gather-concatenate-multiply written out per vertex.
fn naive_spiral_conv(x: &Tensor, s: &SpiralSet, w: &Tensor, b: &Tensor, blocks: usize) -> Tensor {
    let n = s.num_vertices();
    let c = x.cols();
    let out_c = w.cols();
    let mut out = Tensor::zeros(blocks * n, out_c);
    for blk in 0..blocks {
        for v in 0..n {
            for o in 0..out_c {
                let mut acc = b.get(0, o);
                for (j, &u) in s.spiral(v).iter().enumerate() {
                    if u == PAD {
                        continue;
                    }
                    for ch in 0..c {
                        acc += x.get(blk * n + u, ch) * w.get(j * c + ch, o);
                    }
                }
                out.set(blk * n + v, o, acc);
            }
        }
    }
    out
}

fn run_conv(x: &Tensor, s: &SpiralSet, w: &Tensor, b: &Tensor, blocks: usize) -> Tensor {
    let mut tape = Tape::no_grad();
    let (xv, wv, bv) = (
        tape.constant(x.clone()).unwrap(),
        tape.constant(w.clone()).unwrap(),
        tape.constant(b.clone()).unwrap(),
    );
    let y = spiral_conv(&mut tape, xv, s, wv, bv, blocks).unwrap();
    tape.value(y).clone()
}

#[test]
fn spiral_conv_matches_naive_loop() {
    let m = capped_cylinder(3, 6, 0.5, 2.0);
    assert_eq!(m.num_vertices(), 20);
    let s = spirals_of(&m, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for blocks in [1, 3] {
        let x = random_tensor(20 * blocks, 4, &mut rng);
        let w = random_tensor(9 * 4, 5, &mut rng);
        let b = random_tensor(1, 5, &mut rng);
        let got = run_conv(&x, &s, &w, &b, blocks);
        let want = naive_spiral_conv(&x, &s, &w, &b, blocks);
        for (a, e) in got.data().iter().zip(want.data()) {
            assert!((a - e).abs() < 1e-12);
        }
    }
}

#[test]
fn center_selecting_weights_apply_pointwise_map() {
    let m = icosphere(1);
    let s = spirals_of(&m, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random_tensor(m.num_vertices(), 3, &mut rng);
    let a = random_tensor(3, 2, &mut rng);
    let w = Tensor::from_fn(15, 2, |r, c| if r < 3 { a.get(r, c) } else { 0.0 });
    let b = Tensor::zeros(1, 2);
    let got = run_conv(&x, &s, &w, &b, 1);
    for v in 0..m.num_vertices() {
        for o in 0..2 {
            let e: f64 = (0..3).map(|k| x.get(v, k) * a.get(k, o)).sum();
            assert!((got.get(v, o) - e).abs() < 1e-12);
        }
    }
}

#[test]
fn constant_input_gives_equal_rows_for_equal_padding() {
    let m = grid(6);
    let s = spirals_of(&m, 12);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = Tensor::full(36, 2, 0.7);
    let w = random_tensor(24, 3, &mut rng);
    let b = random_tensor(1, 3, &mut rng);
    let y = run_conv(&x, &s, &w, &b, 1);
    let pattern = |v: usize| s.spiral(v).iter().map(|&i| i == PAD).collect::<Vec<_>>();
    for u in 0..36 {
        for v in 0..36 {
            if pattern(u) == pattern(v) {
                assert_eq!(y.row(u), y.row(v));
            }
        }
    }
}

fn toy_model(branches: Branches, seed: u64) -> DisentangleModel {
    let template = capped_cylinder(3, 6, 0.5, 2.0);
    let h = Arc::new(build_hierarchy(&template, 3, 2.0).unwrap());
    let cfg = ModelConfig {
        latent_shape_dim: 2,
        latent_pose_dim: 3,
        channels: vec![4, 5],
        spiral_lengths: vec![5, 4],
        slope: 0.02,
        branches,
    };
    DisentangleModel::new(cfg, h, seed).unwrap()
}

#[test]
fn branches_share_no_parameters() {
    let model = toy_model(Branches::Dual, 0);
    let s = model.shape_param_ids();
    let p = model.pose_param_ids();
    let d = model.decoder_param_ids();
    assert!(!s.is_empty() && !p.is_empty() && !d.is_empty());
    assert!(s.iter().all(|id| !p.contains(id) && !d.contains(id)));
    assert!(p.iter().all(|id| !d.contains(id)));
    assert_eq!(s.len() + p.len() + d.len(), model.params().len());
    // gradients of the shape code never touch pose parameters
    let mut tape = Tape::new();
    let x = tape.constant(model.stack(&[model.template()]).unwrap()).unwrap();
    let b = model.encode_shape(&mut tape, x, 1).unwrap();
    let l = tape.sum(b).unwrap();
    let g = tape.backward(l).unwrap();
    assert!(p.iter().all(|&id| g.param(id).is_none()));
    assert!(s.iter().all(|&id| g.param(id).is_some()));
}

#[test]
fn codes_and_decoding_are_deterministic() {
    let a = toy_model(Branches::Dual, 5);
    let b = toy_model(Branches::Dual, 5);
    let m = a.template().map_vertices(|v| v * 1.1);
    let (ba, ta) = a.encode(&m).unwrap();
    let (bb, tb) = b.encode(&m).unwrap();
    assert_eq!((ba.len(), ta.len()), (2, 3));
    assert_eq!((&ba, &ta), (&bb, &tb));
    let d1 = a.decode_codes(&ba, &ta).unwrap();
    let d2 = a.decode_codes(&ba, &ta).unwrap();
    assert_eq!(d1, d2);
    assert!(d1.same_topology(a.template()));
    // batched inference equals per-mesh inference
    let many = a.encode_many(&[&m, a.template()]).unwrap();
    assert_eq!(many[0], (ba, ta));
}

#[test]
fn code_and_topology_errors() {
    let model = toy_model(Branches::Dual, 0);
    assert!(matches!(
        model.decode_codes(&[0.0; 3], &[0.0; 3]),
        Err(SpiralError::CodeLength { expected: 2, found: 3 })
    ));
    assert!(matches!(model.encode(&icosahedron()), Err(SpiralError::Mesh(_))));
}

#[test]
fn single_branch_splits_one_code() {
    let model = toy_model(Branches::Single, 1);
    assert!(model.shape_param_ids().is_empty() && model.pose_param_ids().is_empty());
    let (b, t) = model.encode(model.template()).unwrap();
    let mut tape = Tape::no_grad();
    let x = tape.constant(model.stack(&[model.template()]).unwrap()).unwrap();
    let z = model.encode_joint(&mut tape, x, 1).unwrap();
    let joint = tape.value(z).data().to_vec();
    assert_eq!(&joint[..2], &b[..]);
    assert_eq!(&joint[2..], &t[..]);
}

#[test]
fn params_round_trip_through_from_params() {
    let model = toy_model(Branches::Dual, 3);
    let rebuilt = DisentangleModel::from_params(
        model.config().clone(),
        Arc::clone(model.hierarchy()),
        model.params().clone(),
    )
    .unwrap();
    let m = model.template();
    assert_eq!(model.encode(m).unwrap(), rebuilt.encode(m).unwrap());
    let mut wrong = ParamStore::new();
    wrong.add("x", Tensor::zeros(1, 1)).unwrap();
    assert!(DisentangleModel::from_params(model.config().clone(), Arc::clone(model.hierarchy()), wrong).is_err());
}

/// Reconstruction-style loss through both encoders and the decoder.
fn toy_loss(model: &DisentangleModel, tape: &mut Tape, x: &Tensor, y: &Tensor) -> Var {
    let xv = tape.constant(x.clone()).unwrap();
    let yv = tape.constant(y.clone()).unwrap();
    let b = model.encode_shape(tape, xv, 2).unwrap();
    let t = model.encode_pose(tape, xv, 2).unwrap();
    let out = model.decode(tape, b, t).unwrap();
    tape.l1_loss(out, yv).unwrap()
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    let mut model = toy_model(Branches::Dual, 7);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = model.template().num_vertices();
    let x = random_tensor(2 * n, 3, &mut rng);
    let y = random_tensor(2 * n, 3, &mut rng);
    let mut tape = Tape::new();
    let l = toy_loss(&model, &mut tape, &x, &y);
    let grads = tape.backward(l).unwrap();
    let eval = |m: &DisentangleModel| {
        let mut t = Tape::no_grad();
        let l = toy_loss(m, &mut t, &x, &y);
        t.value(l).get(0, 0)
    };
    let h = 1e-5;
    let ids: Vec<_> = model.params().iter().map(|(id, _, _)| id).collect();
    let (mut checked, mut skipped) = (0, 0);
    for id in ids {
        let analytic = grads.param(id).unwrap().clone();
        for k in 0..analytic.len() {
            let orig = model.params().get(id).data()[k];
            model.params_mut().get_mut(id).data_mut()[k] = orig + h;
            let fp = eval(&model);
            model.params_mut().get_mut(id).data_mut()[k] = orig - h;
            let fm = eval(&model);
            model.params_mut().get_mut(id).data_mut()[k] = orig;
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic.data()[k];
            let diff = (a - numeric).abs();
            if diff <= 1e-4 * a.abs().max(numeric.abs()) || diff <= 1e-8 {
                checked += 1;
                continue;
            }
            let f0 = eval(&model);
            let (right, left) = ((fp - f0) / h, (f0 - fm) / h);
            assert!(
                (right - left).abs() > 1e-3 * right.abs().max(left.abs()),
                "{} entry {k}: analytic {a} numeric {numeric}",
                model.params().name(id)
            );
            skipped += 1;
        }
    }
    assert!(skipped * 20 <= checked, "{skipped} kinks of {checked}");
}

#[test]
fn decoder_gradients_wrt_codes_match_finite_differences() {
    let model = toy_model(Branches::Dual, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let n = model.template().num_vertices();
    let target = random_tensor(n, 3, &mut rng);
    let beta = random_tensor(1, 2, &mut rng);
    let theta = random_tensor(1, 3, &mut rng);
    let f = |b: &Tensor, t: &Tensor| {
        let mut tape = Tape::no_grad();
        let (bv, tv, yv) = (
            tape.constant(b.clone()).unwrap(),
            tape.constant(t.clone()).unwrap(),
            tape.constant(target.clone()).unwrap(),
        );
        let out = model.decode(&mut tape, bv, tv).unwrap();
        let l = tape.l1_loss(out, yv).unwrap();
        tape.value(l).get(0, 0)
    };
    let mut tape = Tape::new();
    let bv = tape.leaf(beta.clone()).unwrap();
    let tv = tape.leaf(theta.clone()).unwrap();
    let yv = tape.constant(target.clone()).unwrap();
    let out = model.decode(&mut tape, bv, tv).unwrap();
    let l = tape.l1_loss(out, yv).unwrap();
    let g = tape.backward(l).unwrap();
    let h = 1e-5;
    for (which, base) in [(bv, &beta), (tv, &theta)] {
        for k in 0..base.len() {
            let mut p = base.clone();
            p.data_mut()[k] += h;
            let mut m = base.clone();
            m.data_mut()[k] -= h;
            let numeric = if which == bv {
                (f(&p, &theta) - f(&m, &theta)) / (2.0 * h)
            } else {
                (f(&beta, &p) - f(&beta, &m)) / (2.0 * h)
            };
            let a = g.wrt(which).unwrap().data()[k];
            assert!(
                (a - numeric).abs() <= 1e-4 * a.abs().max(numeric.abs()).max(1e-4),
                "{a} vs {numeric}"
            );
        }
    }
}
