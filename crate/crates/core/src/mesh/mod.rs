//! Registered triangle meshes.
//!
//! Every mesh in a dataset shares one [`Topology`]: the same vertex count and
//! the same face array. Meshes hold the topology behind an `Arc`, so cloning a
//! mesh or building thousands of meshes of one template only copies vertices.

mod adjacency;
mod dataset;
mod io;
pub mod primitives;

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use adjacency::{build_adjacency, connected_components, Adjacency};
pub use dataset::{DatasetIndex, LoadedDataset, MeshRecord, SubjectEntry};
pub use io::{load_mesh, read_obj, read_ply, write_mesh, write_obj, write_ply, PlyFormat};

pub type Vec3 = nalgebra::Vector3<f64>;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("non-triangle face with {0} vertices")]
    NonTriangleFace(usize),
    #[error("face {face} references vertex {index} but mesh has {num_vertices} vertices")]
    IndexOutOfRange {
        face: usize,
        index: usize,
        num_vertices: usize,
    },
    #[error("degenerate face {0}: repeated vertex index")]
    DegenerateFace(usize),
    #[error("topology mismatch: expected {expected}, found {found}")]
    TopologyMismatch { expected: TopologyId, found: TopologyId },
    #[error("non-manifold edges: {0:?}")]
    NonManifoldEdges(Vec<(usize, usize)>),
    #[error("non-manifold vertex {0}: one-ring is not a single fan")]
    NonManifoldVertex(usize),
    #[error("inconsistent face orientation along edge ({0}, {1})")]
    InconsistentOrientation(usize, usize),
    #[error("invalid augmentation parameters: {0}")]
    InvalidAugmentation(String),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("unsupported format: {0}")]
    Unsupported(String),
}

/// Hash of the connectivity (vertex count and face array).
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TopologyId(pub u64);

impl fmt::Display for TopologyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl fmt::Debug for TopologyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TopologyId({self})")
    }
}

/// Shared connectivity of a family of registered meshes.
#[derive(Debug, PartialEq, Eq)]
pub struct Topology {
    num_vertices: usize,
    faces: Vec<[usize; 3]>,
    id: TopologyId,
}

impl Topology {
    pub fn new(num_vertices: usize, faces: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        for (fi, face) in faces.iter().enumerate() {
            for &index in face {
                if index >= num_vertices {
                    return Err(MeshError::IndexOutOfRange {
                        face: fi,
                        index,
                        num_vertices,
                    });
                }
            }
            if face[0] == face[1] || face[1] == face[2] || face[0] == face[2] {
                return Err(MeshError::DegenerateFace(fi));
            }
        }
        let id = Self::hash(num_vertices, &faces);
        Ok(Self {
            num_vertices,
            faces,
            id,
        })
    }

    fn hash(num_vertices: usize, faces: &[[usize; 3]]) -> TopologyId {
        let mut hasher = Sha256::new();
        hasher.update((num_vertices as u64).to_le_bytes());
        hasher.update((faces.len() as u64).to_le_bytes());
        for face in faces {
            for &i in face {
                hasher.update((i as u32).to_le_bytes());
            }
        }
        let digest = hasher.finalize();
        let mut bytes = [0u8; 8];
        bytes.copy_from_slice(&digest[..8]);
        TopologyId(u64::from_le_bytes(bytes))
    }

    pub fn num_vertices(&self) -> usize {
        self.num_vertices
    }

    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn id(&self) -> TopologyId {
        self.id
    }
}

/// A triangle mesh with fixed connectivity.
#[derive(Clone, Debug)]
pub struct Mesh {
    vertices: Vec<Vec3>,
    topology: Arc<Topology>,
}

impl PartialEq for Mesh {
    fn eq(&self, other: &Self) -> bool {
        self.topology.id == other.topology.id && self.vertices == other.vertices
    }
}

impl Mesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        let topology = Arc::new(Topology::new(vertices.len(), faces)?);
        Ok(Self { vertices, topology })
    }

    /// Builds a mesh on an existing topology. Panics if the vertex count differs.
    pub fn with_topology(vertices: Vec<Vec3>, topology: Arc<Topology>) -> Self {
        assert_eq!(
            vertices.len(),
            topology.num_vertices,
            "vertex count does not match topology"
        );
        Self { vertices, topology }
    }

    pub fn try_with_topology(vertices: Vec<Vec3>, topology: Arc<Topology>) -> Result<Self, MeshError> {
        if vertices.len() != topology.num_vertices {
            return Err(MeshError::Dataset(format!(
                "vertex count {} does not match topology {} ({} vertices)",
                vertices.len(),
                topology.id,
                topology.num_vertices
            )));
        }
        Ok(Self { vertices, topology })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn vertices_mut(&mut self) -> &mut [Vec3] {
        &mut self.vertices
    }

    pub fn into_vertices(self) -> Vec<Vec3> {
        self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.topology.faces
    }

    pub fn topology(&self) -> &Arc<Topology> {
        &self.topology
    }

    pub fn topology_id(&self) -> TopologyId {
        self.topology.id
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_faces(&self) -> usize {
        self.topology.faces.len()
    }

    pub fn same_topology(&self, other: &Mesh) -> bool {
        Arc::ptr_eq(&self.topology, &other.topology) || self.topology.id == other.topology.id
    }

    pub fn check_topology(&self, other: &Mesh) -> Result<(), MeshError> {
        if self.same_topology(other) {
            Ok(())
        } else {
            Err(MeshError::TopologyMismatch {
                expected: self.topology_id(),
                found: other.topology_id(),
            })
        }
    }

    pub fn centroid(&self) -> Vec3 {
        if self.vertices.is_empty() {
            return Vec3::zeros();
        }
        let sum: Vec3 = self.vertices.iter().sum();
        sum / self.vertices.len() as f64
    }

    pub fn bounding_box(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (lo, hi)
    }

    pub fn bbox_diagonal(&self) -> f64 {
        if self.vertices.is_empty() {
            return 0.0;
        }
        let (lo, hi) = self.bounding_box();
        (hi - lo).norm()
    }

    /// Applies `f` to every vertex, keeping connectivity.
    pub fn map_vertices(&self, f: impl Fn(&Vec3) -> Vec3) -> Mesh {
        Mesh {
            vertices: self.vertices.iter().map(f).collect(),
            topology: Arc::clone(&self.topology),
        }
    }

    pub fn translated(&self, t: &Vec3) -> Mesh {
        self.map_vertices(|v| v + t)
    }

    /// Flattened `[x0, y0, z0, x1, ...]` coordinates.
    pub fn to_flat(&self) -> Vec<f64> {
        self.vertices.iter().flat_map(|v| [v.x, v.y, v.z]).collect()
    }

    pub fn from_flat(values: &[f64], topology: Arc<Topology>) -> Mesh {
        let vertices = values.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect();
        Mesh::with_topology(vertices, topology)
    }

    /// Largest vertex-to-vertex distance between two meshes of equal size.
    pub fn max_vertex_distance(&self, other: &Mesh) -> f64 {
        self.vertices
            .iter()
            .zip(&other.vertices)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn mean_vertex_distance(&self, other: &Mesh) -> f64 {
        let n = self.vertices.len().max(1) as f64;
        self.vertices
            .iter()
            .zip(&other.vertices)
            .map(|(a, b)| (a - b).norm())
            .sum::<f64>()
            / n
    }
}

/// Translates the mesh so its vertex centroid is the origin.
pub fn center(mesh: &Mesh) -> Mesh {
    let c = mesh.centroid();
    mesh.map_vertices(|v| v - c)
}

/// Parameters of the pose-invariant transformation family.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub scale_range: (f64, f64),
    /// Noise amplitude as a fraction of the mesh bounding-box diagonal.
    pub relative_noise: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            scale_range: (0.9, 1.1),
            relative_noise: 0.005,
        }
    }
}

impl AugmentConfig {
    pub fn identity() -> Self {
        Self {
            scale_range: (1.0, 1.0),
            relative_noise: 0.0,
        }
    }

    pub fn noise_amplitude(&self, mesh: &Mesh) -> f64 {
        self.relative_noise * mesh.bbox_diagonal()
    }

    /// Augments, then re-centers. This is the form used for pose-branch inputs.
    pub fn apply_centered(&self, mesh: &Mesh, seed: u64) -> Result<Mesh, MeshError> {
        let a = self.noise_amplitude(mesh);
        Ok(center(&augment(mesh, seed, self.scale_range, a)?))
    }
}

/// Random global scaling plus independent uniform per-vertex noise:
/// `v -> s * v + u`, `s ~ U(scale_range)`, `u ~ U([-a, a]^3)`.
pub fn augment(mesh: &Mesh, seed: u64, scale_range: (f64, f64), noise_amplitude: f64) -> Result<Mesh, MeshError> {
    let (lo, hi) = scale_range;
    if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
        return Err(MeshError::InvalidAugmentation(format!(
            "scale range [{lo}, {hi}] must satisfy 0 < lo <= hi < inf"
        )));
    }
    if !(noise_amplitude >= 0.0 && noise_amplitude.is_finite()) {
        return Err(MeshError::InvalidAugmentation(format!(
            "noise amplitude {noise_amplitude} must be finite and >= 0"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = if lo == hi { lo } else { rng.gen_range(lo..hi) };
    let a = noise_amplitude;
    let vertices = mesh
        .vertices
        .iter()
        .map(|v| {
            let scaled = v * s;
            if a == 0.0 {
                scaled
            } else {
                let u = Vec3::new(rng.gen_range(-a..=a), rng.gen_range(-a..=a), rng.gen_range(-a..=a));
                scaled + u
            }
        })
        .collect();
    Ok(Mesh {
        vertices,
        topology: Arc::clone(&mesh.topology),
    })
}


#[cfg(test)]
mod tests {
    use super::test_meshes::*;
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn center_two_points() {
        let m = Mesh {
            vertices: vec![Vec3::new(1.0, 1.0, 1.0), Vec3::new(3.0, 1.0, 1.0)],
            topology: Arc::new(Topology::new(2, vec![]).unwrap()),
        };
        let c = center(&m);
        assert_eq!(c.vertices()[0], Vec3::new(-1.0, 0.0, 0.0));
        assert_eq!(c.vertices()[1], Vec3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn center_is_idempotent() {
        let m = center(&unit_cube());
        let again = center(&m);
        assert_eq!(m, again);
    }

    #[test]
    fn center_random_cloud() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let vertices: Vec<Vec3> = (0..100)
            .map(|_| Vec3::new(rng.gen::<f64>() * 50.0, rng.gen(), rng.gen::<f64>() - 7.0))
            .collect();
        let m = Mesh::new(vertices, vec![]).unwrap();
        let c = center(&m);
        let recomputed: Vec3 = c.vertices().iter().sum::<Vec3>() / 100.0;
        assert!(recomputed.norm() < 1e-6);
    }

    #[test]
    fn rejects_degenerate_and_out_of_range_faces() {
        let v = vec![Vec3::zeros(); 3];
        assert!(matches!(
            Mesh::new(v.clone(), vec![[0, 1, 1]]),
            Err(MeshError::DegenerateFace(0))
        ));
        assert!(matches!(
            Mesh::new(v, vec![[0, 1, 3]]),
            Err(MeshError::IndexOutOfRange { index: 3, .. })
        ));
    }

    #[test]
    fn augment_identity() {
        let m = unit_cube();
        let a = augment(&m, 11, (1.0, 1.0), 0.0).unwrap();
        assert_eq!(a, m);
    }

    #[test]
    fn augment_pure_scaling() {
        let m = unit_cube();
        let a = augment(&m, 11, (2.0, 2.0), 0.0).unwrap();
        let (lo, hi) = a.bounding_box();
        assert_eq!(hi - lo, Vec3::new(2.0, 2.0, 2.0));
        assert_eq!(a.faces(), m.faces());
    }

    #[test]
    fn augment_noise_bound_with_defaults() {
        let m = grid(10);
        let cfg = AugmentConfig::default();
        let a_amp = cfg.noise_amplitude(&m);
        let out = augment(&m, 7, cfg.scale_range, a_amp).unwrap();
        // recover s from an unperturbed quantity: the noise-free map is s*v, so
        // estimate s by least squares and bound the residual per vertex.
        let num: f64 = m.vertices().iter().zip(out.vertices()).map(|(v, w)| v.dot(w)).sum();
        let den: f64 = m.vertices().iter().map(|v| v.norm_squared()).sum();
        let s_est = num / den;
        assert!((0.9..=1.1).contains(&s_est));
        // recompute the exact s by replaying the generator
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s: f64 = rng.gen_range(0.9..1.1);
        for (v, w) in m.vertices().iter().zip(out.vertices()) {
            assert!((w - v * s).norm() <= a_amp * 3f64.sqrt() + 1e-12);
        }
    }

    #[test]
    fn augment_rejects_bad_ranges() {
        let m = unit_cube();
        assert!(augment(&m, 0, (0.0, 1.0), 0.0).is_err());
        assert!(augment(&m, 0, (1.2, 1.0), 0.0).is_err());
        assert!(augment(&m, 0, (1.0, 1.0), -1.0).is_err());
    }

    proptest! {
        #[test]
        fn augment_preserves_faces_and_is_deterministic(seed in any::<u64>(), lo in 0.5f64..1.0, w in 0.0f64..0.5, a in 0.0f64..0.1) {
            let m = grid(4);
            let x = augment(&m, seed, (lo, lo + w), a).unwrap();
            let y = augment(&m, seed, (lo, lo + w), a).unwrap();
            prop_assert_eq!(x.faces(), m.faces());
            prop_assert_eq!(&x, &y);
        }

        #[test]
        fn center_commutes_with_permutation(seed in any::<u64>()) {
            let m = grid(4);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = m.num_vertices();
            let mut perm: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                perm.swap(i, rng.gen_range(0..=i));
            }
            // perm maps old index -> new index
            let mut verts = vec![Vec3::zeros(); n];
            for (old, &new) in perm.iter().enumerate() {
                verts[new] = m.vertices()[old];
            }
            let faces: Vec<[usize; 3]> = m.faces().iter().map(|f| [perm[f[0]], perm[f[1]], perm[f[2]]]).collect();
            let permuted = Mesh::new(verts, faces).unwrap();
            let a = center(&m);
            let b = center(&permuted);
            for (old, &new) in perm.iter().enumerate() {
                prop_assert!((a.vertices()[old] - b.vertices()[new]).norm() < 1e-12);
            }
        }
    }
}
