use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use shapepose_bench::{desk_config, fixture};
use shapepose_core::arap::fit_rotation;
use shapepose_core::disentangle::TrainingSet;
use shapepose_core::{AblationMode, ArapConfig, ArapEngine, DisentangleModel, Trainer, Vec3};

fn arap(c: &mut Criterion) {
    let (ds, _) = fixture(2, 2);
    let engine = ArapEngine::new(&ds.template, ArapConfig::default()).unwrap();
    let (src, tgt) = (&ds.meshes[0][0], &ds.meshes[1][1]);
    c.bench_function("arap_deform_614v", |b| {
        b.iter(|| engine.deform(black_box(src), black_box(tgt), 0).unwrap())
    });
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let edges: Vec<Vec3> = (0..6).map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen())).collect();
    let moved: Vec<Vec3> = edges
        .iter()
        .map(|e| e + Vec3::new(rng.gen(), rng.gen(), rng.gen()) * 0.1)
        .collect();
    let w = vec![1.0; 6];
    c.bench_function("fit_rotation_6", |b| {
        b.iter(|| fit_rotation(black_box(&edges), black_box(&moved), &w).unwrap())
    });
}

fn model(c: &mut Criterion) {
    let (ds, h) = fixture(2, 4);
    let cfg = desk_config();
    let m = DisentangleModel::new(cfg.model.clone(), h, 0).unwrap();
    let batch: Vec<_> = ds.meshes.iter().flatten().collect();
    c.bench_function("encode_8_meshes", |b| {
        b.iter(|| m.encode_many(black_box(&batch)).unwrap())
    });
    let codes = m.encode_many(&batch).unwrap();
    c.bench_function("decode_8_meshes", |b| {
        b.iter(|| m.decode_many(black_box(&codes)).unwrap())
    });
}

fn training(c: &mut Criterion) {
    let (ds, h) = fixture(3, 4);
    let set = TrainingSet::new(ds.meshes.clone()).unwrap();
    let mut group = c.benchmark_group("train_step");
    group.sample_size(10);
    for ablation in [
        AblationMode::Full,
        AblationMode::NoArap,
        AblationMode::NoSelfConsistency,
    ] {
        let cfg = shapepose_core::TrainConfig {
            ablation,
            steps: 1_000_000,
            ..desk_config()
        };
        group.bench_function(ablation.cli_name(), |b| {
            b.iter_batched_ref(
                || Trainer::new(cfg.clone(), &set, h.clone()).unwrap(),
                |t| t.step().unwrap(),
                BatchSize::LargeInput,
            )
        });
    }
    let base = desk_config().baseline();
    group.bench_function("baseline", |b| {
        b.iter_batched_ref(
            || Trainer::new(base.clone(), &set, h.clone()).unwrap(),
            |t| t.step().unwrap(),
            BatchSize::LargeInput,
        )
    });
    group.finish();
}

criterion_group!(benches, arap, model, training);
criterion_main!(benches);
