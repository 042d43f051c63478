//! Spiral neighbourhood sequences, spiral convolution and the dual-branch
//! mesh autoencoder built from them.

mod model;

use std::collections::HashSet;
use std::sync::Arc;

use thiserror::Error;

use crate::mesh::{Adjacency, Mesh, MeshError};
use crate::multires::MultiresError;
use crate::nn::{NnError, Tape, Var, PAD};

pub use model::{Branches, DisentangleModel, ModelConfig, CONFIG_SCHEMA_VERSION};

#[derive(Debug, Error)]
pub enum SpiralError {
    #[error("vertex {0} has no neighbours; spirals need a connected neighbourhood")]
    IsolatedVertex(usize),
    #[error("spiral length must be at least 1")]
    ZeroLength,
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("code length {found} does not match the configured {expected}")]
    CodeLength { expected: usize, found: usize },
    #[error("parameter set does not match the model: {0}")]
    ParamMismatch(String),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Multires(#[from] MultiresError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Fixed-length spiral per vertex, stored flat (`N * length` indices, [`PAD`]
/// where the reachable neighbourhood is too small).
#[derive(Clone, Debug, PartialEq)]
pub struct SpiralSet {
    length: usize,
    indices: Arc<[usize]>,
}

impl SpiralSet {
    pub fn length(&self) -> usize {
        self.length
    }

    pub fn num_vertices(&self) -> usize {
        self.indices.len() / self.length
    }

    pub fn spiral(&self, v: usize) -> &[usize] {
        &self.indices[v * self.length..(v + 1) * self.length]
    }

    pub fn indices(&self) -> &Arc<[usize]> {
        &self.indices
    }
}

/// Spiral of every vertex: the vertex itself, its one-ring in stored
/// counterclockwise order, then later rings, each ring walked in the order
/// its parents were visited. Truncated or padded to `length`.
pub fn build_spirals(mesh: &Mesh, adjacency: &Adjacency, length: usize) -> Result<SpiralSet, SpiralError> {
    if length == 0 {
        return Err(SpiralError::ZeroLength);
    }
    let n = mesh.num_vertices();
    let mut indices = Vec::with_capacity(n * length);
    for v in 0..n {
        if adjacency.degree(v) == 0 {
            return Err(SpiralError::IsolatedVertex(v));
        }
        let mut spiral = vec![v];
        let mut seen: HashSet<usize> = HashSet::from([v]);
        let mut frontier = vec![v];
        while spiral.len() < length && !frontier.is_empty() {
            let mut next = Vec::new();
            for &u in &frontier {
                for &w in adjacency.one_ring(u) {
                    if seen.insert(w) {
                        next.push(w);
                    }
                }
            }
            spiral.extend_from_slice(&next);
            frontier = next;
        }
        spiral.resize(length, PAD);
        indices.extend_from_slice(&spiral);
    }
    Ok(SpiralSet {
        length,
        indices: indices.into(),
    })
}

/// Spiral convolution on `blocks` stacked meshes: `x` is `(blocks * N) x C`,
/// `weight` is `(L * C) x C'` and `bias` is `1 x C'`.
pub fn spiral_conv(
    tape: &mut Tape,
    x: Var,
    spirals: &SpiralSet,
    weight: Var,
    bias: Var,
    blocks: usize,
) -> Result<Var, SpiralError> {
    let gathered = tape.gather_concat(x, Arc::clone(&spirals.indices), spirals.length, blocks)?;
    let y = tape.matmul(gathered, weight)?;
    Ok(tape.add(y, bias)?)
}

#[cfg(test)]
mod tests;
