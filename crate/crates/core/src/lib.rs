//! Unsupervised shape/pose disentanglement for registered triangle meshes.
//!
//! The crate is organised bottom-up:
//!
//! * [`mesh`]: fixed-topology meshes, OBJ/PLY IO, one-ring adjacency and the
//!   pose-invariant augmentation family.
//! * [`linalg`]: compressed sparse operators and a sparse Cholesky solver.
//! * [`arap`]: as-rigid-as-possible deformation toward anchor positions.
//! * [`multires`]: quadric-error decimation and the down/up-sampling operators.
//! * [`nn`]: a small reverse-mode autodiff runtime with Adam and a cosine schedule.
//! * [`spiral`]: spiral sequences, spiral convolution and the dual-branch autoencoder.
//! * [`disentangle`]: triplet sampling, consistency losses and the training loop.
//! * [`evalbench`]: a synthetic articulated-creature oracle and evaluation protocols.

pub mod arap;
mod binio;
pub mod disentangle;
pub mod evalbench;
pub mod linalg;
pub mod mesh;
pub mod multires;
pub mod nn;
pub mod spiral;

pub use arap::{arap_deform, ArapConfig, ArapEngine, ArapError};
pub use disentangle::{AblationMode, LossReport, Objective, TrainConfig, TrainError, Trainer, TrainingSet};
pub use evalbench::{generate_dataset, run_benchmark, BenchConfig, BenchReport, EvalError, Oracle, SyntheticDataset};
pub use mesh::{Adjacency, DatasetIndex, Mesh, MeshError, Topology, TopologyId, Vec3};
pub use multires::{build_hierarchy, HierarchyConfig, MeshHierarchy, MultiresError};
pub use nn::{Checkpoint, NnError};
pub use spiral::{DisentangleModel, ModelConfig, SpiralError, CONFIG_SCHEMA_VERSION};
/// Version string written into run manifests and checkpoints.
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
