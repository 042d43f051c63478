//! As-rigid-as-possible deformation.
//!
//! A source mesh is deformed toward a target guess by fixing a random subset
//! of anchor vertices at the guess positions and alternating two steps:
//! per-cell rotation fitting (SVD of the edge covariance) and a global sparse
//! least-squares solve for the free vertex positions.

mod rotation;
mod solve;

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::Matrix3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{CholeskyError, SymbolicCholesky};
use crate::mesh::{build_adjacency, Adjacency, Mesh, MeshError, TopologyId, Vec3};

pub use rotation::{fit_rotation, RotationField};
pub use solve::linear_residual;

pub type Rotation = Matrix3<f64>;

#[derive(Debug, Error)]
pub enum ArapError {
    #[error("degenerate cell: all edges have zero length")]
    DegenerateCell,
    #[error("edge, deformed-edge and weight lists differ in length ({0}, {1}, {2})")]
    LengthMismatch(usize, usize, usize),
    #[error("weights must be positive")]
    NonPositiveWeight,
    #[error("no anchor vertices: the position solve is underdetermined")]
    NoAnchors,
    #[error("anchor index {0} out of range")]
    AnchorOutOfRange(usize),
    #[error("connected component {component} ({size} vertices, lowest vertex {first_vertex}) has no anchor")]
    UnanchoredComponent {
        component: usize,
        size: usize,
        first_vertex: usize,
    },
    #[error("anchor fraction {0} must lie in (0, 1]")]
    InvalidAnchorFraction(f64),
    #[error("rotation field has {found} entries, mesh has {expected} vertices")]
    RotationCount { expected: usize, found: usize },
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("sparse solve failed: {0}")]
    Solver(#[from] CholeskyError),
}

/// Edge weighting scheme `w_ij`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    #[default]
    Uniform,
    Cotangent,
}

impl std::str::FromStr for Weighting {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "cotangent" => Ok(Self::Cotangent),
            other => Err(format!("unknown weighting '{other}' (expected uniform or cotangent)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArapConfig {
    pub anchor_fraction: f64,
    pub iterations: usize,
    pub weighting: Weighting,
}

impl Default for ArapConfig {
    fn default() -> Self {
        Self {
            anchor_fraction: 0.05,
            iterations: 1,
            weighting: Weighting::Uniform,
        }
    }
}

/// Source geometry, connectivity, edge weights and hard anchor constraints.
#[derive(Clone, Debug)]
pub struct ArapProblem<'a> {
    source: &'a Mesh,
    adjacency: &'a Adjacency,
    /// `weights[i][k]` belongs to the edge `(i, one_ring(i)[k])`.
    weights: Vec<Vec<f64>>,
    anchors: Vec<(usize, Vec3)>,
    is_anchor: Vec<bool>,
}

impl<'a> ArapProblem<'a> {
    pub fn new(
        source: &'a Mesh,
        adjacency: &'a Adjacency,
        weighting: Weighting,
        mut anchors: Vec<(usize, Vec3)>,
    ) -> Result<Self, ArapError> {
        if anchors.is_empty() {
            return Err(ArapError::NoAnchors);
        }
        let n = source.num_vertices();
        anchors.sort_by_key(|a| a.0);
        anchors.dedup_by_key(|a| a.0);
        let mut is_anchor = vec![false; n];
        for &(i, _) in &anchors {
            if i >= n {
                return Err(ArapError::AnchorOutOfRange(i));
            }
            is_anchor[i] = true;
        }
        let weights = match weighting {
            Weighting::Uniform => adjacency.rings().iter().map(|r| vec![1.0; r.len()]).collect(),
            Weighting::Cotangent => cotangent_weights(source, adjacency),
        };
        Ok(Self {
            source,
            adjacency,
            weights,
            anchors,
            is_anchor,
        })
    }

    pub fn source(&self) -> &Mesh {
        self.source
    }

    pub fn adjacency(&self) -> &Adjacency {
        self.adjacency
    }

    pub fn anchors(&self) -> &[(usize, Vec3)] {
        &self.anchors
    }

    pub fn is_anchor(&self, i: usize) -> bool {
        self.is_anchor[i]
    }

    pub fn anchor_fraction(&self) -> f64 {
        self.anchors.len() as f64 / self.source.num_vertices() as f64
    }

    pub fn weights(&self, i: usize) -> &[f64] {
        &self.weights[i]
    }

    fn source_edge(&self, i: usize, j: usize) -> Vec3 {
        let v = self.source.vertices();
        v[j] - v[i]
    }

    /// Best rotation per cell for the given deformed positions.
    pub fn fit_rotations(&self, deformed: &Mesh) -> Result<RotationField, ArapError> {
        self.source.check_topology(deformed)?;
        let dv = deformed.vertices();
        let mut out = Vec::with_capacity(dv.len());
        let mut edges = Vec::new();
        let mut deformed_edges = Vec::new();
        for (i, ring) in self.adjacency.rings().iter().enumerate() {
            if ring.is_empty() {
                out.push(Rotation::identity());
                continue;
            }
            edges.clear();
            deformed_edges.clear();
            for &j in ring {
                edges.push(self.source_edge(i, j));
                deformed_edges.push(dv[j] - dv[i]);
            }
            out.push(fit_rotation(&edges, &deformed_edges, &self.weights[i])?);
        }
        Ok(RotationField::new(out))
    }
}

/// Total energy `sum_i sum_{j in N(i)} w_ij |e~_ij - R_i e_ij|^2`.
pub fn arap_energy(problem: &ArapProblem<'_>, deformed: &Mesh, rotations: &RotationField) -> Result<f64, ArapError> {
    problem.source.check_topology(deformed)?;
    let n = deformed.num_vertices();
    if rotations.len() != n {
        return Err(ArapError::RotationCount {
            expected: n,
            found: rotations.len(),
        });
    }
    let dv = deformed.vertices();
    let mut energy = 0.0;
    for (i, ring) in problem.adjacency.rings().iter().enumerate() {
        let r = rotations.get(i);
        for (k, &j) in ring.iter().enumerate() {
            let residual = (dv[j] - dv[i]) - r * problem.source_edge(i, j);
            energy += problem.weights[i][k] * residual.norm_squared();
        }
    }
    Ok(energy)
}

/// Solves for deformed positions given fixed per-cell rotations.
pub fn solve_positions(problem: &ArapProblem<'_>, rotations: &RotationField) -> Result<Mesh, ArapError> {
    let symbolic = symbolic_for(problem)?;
    solve::solve_with(problem, rotations, &symbolic)
}

fn symbolic_cache() -> &'static Mutex<HashMap<TopologyId, Arc<SymbolicCholesky>>> {
    static CACHE: OnceLock<Mutex<HashMap<TopologyId, Arc<SymbolicCholesky>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

fn symbolic_for(problem: &ArapProblem<'_>) -> Result<Arc<SymbolicCholesky>, ArapError> {
    let id = problem.source.topology_id();
    if let Some(s) = symbolic_cache().lock().unwrap().get(&id) {
        return Ok(Arc::clone(s));
    }
    let pattern = solve::system_pattern(problem.adjacency);
    let symbolic = Arc::new(SymbolicCholesky::analyze(&pattern)?);
    symbolic_cache().lock().unwrap().insert(id, Arc::clone(&symbolic));
    Ok(symbolic)
}

/// Samples `ceil(fraction * n)` distinct vertices, sorted.
pub fn sample_anchors(n: usize, fraction: f64, seed: u64) -> Result<Vec<usize>, ArapError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(ArapError::InvalidAnchorFraction(fraction));
    }
    let k = ((fraction * n as f64).ceil() as usize).clamp(1, n.max(1));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, n, k).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// Reusable deformation context for one connectivity.
#[derive(Clone, Debug)]
pub struct ArapEngine {
    adjacency: Adjacency,
    config: ArapConfig,
}

impl ArapEngine {
    pub fn new(template: &Mesh, config: ArapConfig) -> Result<Self, ArapError> {
        if !(config.anchor_fraction > 0.0 && config.anchor_fraction <= 1.0) {
            return Err(ArapError::InvalidAnchorFraction(config.anchor_fraction));
        }
        Ok(Self {
            adjacency: build_adjacency(template)?,
            config,
        })
    }

    pub fn config(&self) -> &ArapConfig {
        &self.config
    }

    pub fn adjacency(&self) -> &Adjacency {
        &self.adjacency
    }

    /// Deforms `source` toward `target_guess`, anchoring a seeded random subset
    /// of vertices at their `target_guess` positions.
    pub fn deform(&self, source: &Mesh, target_guess: &Mesh, seed: u64) -> Result<Mesh, ArapError> {
        source.check_topology(target_guess)?;
        let anchors = sample_anchors(source.num_vertices(), self.config.anchor_fraction, seed)?;
        self.deform_with_anchors(source, target_guess, &anchors)
    }

    pub fn deform_with_anchors(
        &self,
        source: &Mesh,
        target_guess: &Mesh,
        anchors: &[usize],
    ) -> Result<Mesh, ArapError> {
        source.check_topology(target_guess)?;
        if source.num_vertices() != self.adjacency.num_vertices() {
            return Err(MeshError::TopologyMismatch {
                expected: source.topology_id(),
                found: target_guess.topology_id(),
            }
            .into());
        }
        let tv = target_guess.vertices();
        let anchors = anchors.iter().map(|&i| (i, tv[i])).collect();
        let problem = ArapProblem::new(source, &self.adjacency, self.config.weighting, anchors)?;
        let symbolic = symbolic_for(&problem)?;
        let mut current = target_guess.clone();
        for _ in 0..self.config.iterations {
            let rotations = problem.fit_rotations(&current)?;
            current = solve::solve_with(&problem, &rotations, &symbolic)?;
        }
        Ok(current)
    }
}

/// One-shot convenience wrapper around [`ArapEngine`].
pub fn arap_deform(
    source: &Mesh,
    target_guess: &Mesh,
    anchor_fraction: f64,
    iterations: usize,
    seed: u64,
) -> Result<Mesh, ArapError> {
    let config = ArapConfig {
        anchor_fraction,
        iterations,
        weighting: Weighting::Uniform,
    };
    ArapEngine::new(source, config)?.deform(source, target_guess, seed)
}

fn cotangent_weights(mesh: &Mesh, adjacency: &Adjacency) -> Vec<Vec<f64>> {
    let v = mesh.vertices();
    let mut cot: HashMap<(usize, usize), f64> = HashMap::new();
    for f in mesh.faces() {
        for k in 0..3 {
            let (o, a, b) = (f[k], f[(k + 1) % 3], f[(k + 2) % 3]);
            let ea = v[a] - v[o];
            let eb = v[b] - v[o];
            let c = ea.dot(&eb) / ea.cross(&eb).norm().max(1e-300);
            *cot.entry((a.min(b), a.max(b))).or_default() += 0.5 * c;
        }
    }
    adjacency
        .rings()
        .iter()
        .enumerate()
        .map(|(i, ring)| {
            ring.iter()
                .map(|&j| {
                    let w = cot.get(&(i.min(j), i.max(j))).copied().unwrap_or(0.0);
                    // obtuse configurations give negative cotangents; keep the system SPD
                    w.max(1e-4)
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests;
