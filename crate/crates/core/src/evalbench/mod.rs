//! Synthetic creature oracle with known shape and pose factors, and the
//! pose-transfer, retrieval and interpolation protocols.

mod bench;
mod dataset;
pub mod oracle;
mod protocols;
#[cfg(test)]
pub(crate) mod stub;

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::mesh::MeshError;

pub use bench::{
    interpolation_sequences, run_benchmark, BenchConfig, BenchReport, InterpolationRecord, InterpolationReport,
};
pub use dataset::{
    euclidean, generate_dataset, sample_pose, sample_shape, template, FactorTable, SubjectFactors, SyntheticDataset,
};
pub use oracle::{pose_distance, shape_distance, Oracle};
pub use protocols::{
    aligned_error, heldout_transfer_cases, interpolate, median, pose_transfer_error, retrieval_table, sequence_drift,
    transfer_benchmark, CodeKind, Codes, LatentModel, Pca, RetrievalErrors, RetrievalIndex, RetrievalResult,
    RetrievalTable, TransferCase, TransferPairResult, TransferStats,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{what} factor vector has length {found}, expected {expected}")]
    FactorLength {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("invalid factors: {0}")]
    InvalidFactors(String),
    #[error("mesh does not have the oracle connectivity")]
    NotOracleMesh,
    #[error("retrieval gallery is empty")]
    EmptyGallery,
    #[error("model error: {0}")]
    Model(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

impl EvalError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
