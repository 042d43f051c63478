//! Quadric-error mesh decimation and the sparse operators that move
//! per-vertex features between resolution levels.

mod cache;
mod decimate;
mod quadric;
mod upsample;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::SparseMatrix;
use crate::mesh::{build_adjacency, Mesh, MeshError};

pub use cache::{cache_key, cache_path, load_or_build, read_hierarchy, write_hierarchy};
pub use decimate::{decimate, Decimated, BOUNDARY_WEIGHT};
pub use quadric::{edge_collapse_cost, Quadric, SINGULAR_CONDITION};
pub use upsample::{closest_point_barycentric, upsampling_operator};

#[derive(Debug, Error)]
pub enum MultiresError {
    #[error("decimation factor must be > 1, got {0}")]
    InvalidFactor(f64),
    #[error("a hierarchy needs at least one level")]
    NoLevels,
    #[error("decimation stalled building level {level}: reached {reached} vertices, target {target}")]
    Stall {
        level: usize,
        reached: usize,
        target: usize,
    },
    #[error("feature array has {found} rows, level {level} has {expected} vertices")]
    ShapeMismatch {
        level: usize,
        expected: usize,
        found: usize,
    },
    #[error("level {level} out of range for a hierarchy with {levels} levels")]
    LevelOutOfRange { level: usize, levels: usize },
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("hierarchy cache {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("hierarchy cache is malformed: {0}")]
    Format(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HierarchyConfig {
    /// Number of topologies including the template.
    pub num_levels: usize,
    pub factor: f64,
}

impl Default for HierarchyConfig {
    fn default() -> Self {
        Self {
            num_levels: 5,
            factor: 4.0,
        }
    }
}

/// Meshes from fine to coarse with selection (down) and barycentric (up) operators.
#[derive(Clone, Debug, PartialEq)]
pub struct MeshHierarchy {
    levels: Vec<Mesh>,
    down_ops: Vec<SparseMatrix>,
    up_ops: Vec<SparseMatrix>,
}

/// Vertex target for the level following one with `n` vertices.
pub fn level_target(n: usize, factor: f64) -> usize {
    (n as f64 / factor).ceil() as usize
}

pub fn build_hierarchy(template: &Mesh, num_levels: usize, factor: f64) -> Result<MeshHierarchy, MultiresError> {
    if !(factor > 1.0) || !factor.is_finite() {
        return Err(MultiresError::InvalidFactor(factor));
    }
    if num_levels == 0 {
        return Err(MultiresError::NoLevels);
    }
    build_adjacency(template)?;
    let mut levels = vec![template.clone()];
    let mut down_ops = Vec::new();
    let mut up_ops = Vec::new();
    for level in 1..num_levels {
        let fine = levels.last().unwrap();
        let target = level_target(fine.num_vertices(), factor);
        let d = decimate(fine.vertices(), fine.faces(), target).map_err(|reached| MultiresError::Stall {
            level,
            reached,
            target,
        })?;
        let coarse = Mesh::new(d.vertices, d.faces)?;
        build_adjacency(&coarse)?;
        let sel: Vec<(usize, usize, f64)> = d.kept.iter().enumerate().map(|(k, &v)| (k, v, 1.0)).collect();
        down_ops.push(SparseMatrix::from_triplets(
            coarse.num_vertices(),
            fine.num_vertices(),
            &sel,
        ));
        up_ops.push(upsampling_operator(fine.vertices(), coarse.vertices(), coarse.faces()));
        levels.push(coarse);
    }
    Ok(MeshHierarchy {
        levels,
        down_ops,
        up_ops,
    })
}

impl MeshHierarchy {
    pub fn from_parts(
        levels: Vec<Mesh>,
        down_ops: Vec<SparseMatrix>,
        up_ops: Vec<SparseMatrix>,
    ) -> Result<Self, MultiresError> {
        if levels.is_empty() {
            return Err(MultiresError::NoLevels);
        }
        let ops_ok = down_ops.len() + 1 == levels.len()
            && up_ops.len() + 1 == levels.len()
            && (0..down_ops.len()).all(|k| {
                let (nf, nc) = (levels[k].num_vertices(), levels[k + 1].num_vertices());
                down_ops[k].rows() == nc && down_ops[k].cols() == nf && up_ops[k].rows() == nf && up_ops[k].cols() == nc
            });
        if !ops_ok {
            return Err(MultiresError::Format("operator shapes do not match levels".into()));
        }
        Ok(Self {
            levels,
            down_ops,
            up_ops,
        })
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn level(&self, k: usize) -> &Mesh {
        &self.levels[k]
    }

    pub fn levels(&self) -> &[Mesh] {
        &self.levels
    }

    pub fn vertex_counts(&self) -> Vec<usize> {
        self.levels.iter().map(Mesh::num_vertices).collect()
    }

    pub fn down_op(&self, k: usize) -> &SparseMatrix {
        &self.down_ops[k]
    }

    pub fn up_op(&self, k: usize) -> &SparseMatrix {
        &self.up_ops[k]
    }

    pub fn down_ops(&self) -> &[SparseMatrix] {
        &self.down_ops
    }

    pub fn up_ops(&self) -> &[SparseMatrix] {
        &self.up_ops
    }

    fn check_level(&self, k: usize) -> Result<(), MultiresError> {
        if k + 1 >= self.levels.len() {
            return Err(MultiresError::LevelOutOfRange {
                level: k,
                levels: self.levels.len(),
            });
        }
        Ok(())
    }

    /// `down_ops[k] * features`, with `features` row-major `N_k x width`.
    pub fn restrict(&self, features: &[f64], width: usize, k: usize) -> Result<Vec<f64>, MultiresError> {
        self.check_level(k)?;
        let n = self.levels[k].num_vertices();
        if width == 0 || features.len() != n * width {
            return Err(MultiresError::ShapeMismatch {
                level: k,
                expected: n,
                found: features.len() / width.max(1),
            });
        }
        Ok(self.down_ops[k].mul_dense(features, width))
    }

    /// `up_ops[k] * features`, with `features` row-major `N_{k+1} x width`.
    pub fn prolong(&self, features: &[f64], width: usize, k: usize) -> Result<Vec<f64>, MultiresError> {
        self.check_level(k)?;
        let n = self.levels[k + 1].num_vertices();
        if width == 0 || features.len() != n * width {
            return Err(MultiresError::ShapeMismatch {
                level: k + 1,
                expected: n,
                found: features.len() / width.max(1),
            });
        }
        Ok(self.up_ops[k].mul_dense(features, width))
    }
}
