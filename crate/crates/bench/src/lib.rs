//! Shared fixtures for the benchmarks.

use std::sync::Arc;

use shapepose_core::evalbench::{generate_dataset, SyntheticDataset};
use shapepose_core::{build_hierarchy, MeshHierarchy, ModelConfig, TrainConfig};

/// A small oracle dataset with its five-level hierarchy.
pub fn fixture(subjects: usize, poses: usize) -> (SyntheticDataset, Arc<MeshHierarchy>) {
    let ds = generate_dataset(subjects, poses, 1).expect("valid counts");
    let h = build_hierarchy(&ds.template, 5, 3.0).expect("template decimates");
    (ds, Arc::new(h))
}

/// The desk-scale training configuration used by the acceptance runs.
pub fn desk_config() -> TrainConfig {
    TrainConfig {
        model: ModelConfig {
            channels: vec![8, 16, 32, 64],
            ..ModelConfig::default()
        },
        batch_size: 4,
        ..TrainConfig::default()
    }
}
