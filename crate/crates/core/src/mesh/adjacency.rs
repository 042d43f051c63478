use std::collections::{BTreeMap, HashMap};

use super::{Mesh, MeshError, Vec3};

/// Ordered one-ring neighbourhoods of a mesh.
///
/// Each ring walks counterclockwise around the outward normal. Closed fans
/// start at their lowest-index neighbour; open (boundary) fans start at the
/// neighbour that has no predecessor, so the walk covers the fan in one pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Adjacency {
    one_ring: Vec<Vec<usize>>,
    incident_edges: Vec<Vec<Vec3>>,
    boundary: Vec<bool>,
}

impl Adjacency {
    pub fn one_ring(&self, i: usize) -> &[usize] {
        &self.one_ring[i]
    }

    pub fn rings(&self) -> &[Vec<usize>] {
        &self.one_ring
    }

    /// Edge vectors `v_j - v_i` in one-ring order.
    pub fn incident_edges(&self, i: usize) -> &[Vec3] {
        &self.incident_edges[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.one_ring[i].len()
    }

    pub fn is_boundary(&self, i: usize) -> bool {
        self.boundary[i]
    }

    pub fn num_vertices(&self) -> usize {
        self.one_ring.len()
    }

    /// Undirected edges `(i, j)` with `i < j`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, ring) in self.one_ring.iter().enumerate() {
            for &j in ring {
                if i < j {
                    out.push((i, j));
                }
            }
        }
        out.sort_unstable();
        out
    }

    pub fn contains_edge(&self, i: usize, j: usize) -> bool {
        self.one_ring[i].contains(&j)
    }
}

pub fn build_adjacency(mesh: &Mesh) -> Result<Adjacency, MeshError> {
    let n = mesh.num_vertices();
    let faces = mesh.faces();

    let mut edge_faces: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for f in faces {
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            *edge_faces.entry((a.min(b), a.max(b))).or_default() += 1;
        }
    }
    let bad: Vec<(usize, usize)> = edge_faces.iter().filter(|(_, &c)| c > 2).map(|(&e, _)| e).collect();
    if !bad.is_empty() {
        return Err(MeshError::NonManifoldEdges(bad));
    }

    // succ[i][j] = k means the fan around i steps from j to k counterclockwise.
    let mut succ: Vec<HashMap<usize, usize>> = vec![HashMap::new(); n];
    let mut pred: Vec<HashMap<usize, usize>> = vec![HashMap::new(); n];
    for f in faces {
        for k in 0..3 {
            let (i, j, l) = (f[k], f[(k + 1) % 3], f[(k + 2) % 3]);
            if succ[i].insert(j, l).is_some() || pred[i].insert(l, j).is_some() {
                return Err(MeshError::InconsistentOrientation(i.min(j), i.max(j)));
            }
        }
    }

    let mut one_ring = Vec::with_capacity(n);
    let mut boundary = vec![false; n];
    for i in 0..n {
        let mut neighbours: Vec<usize> = succ[i].keys().chain(pred[i].keys()).copied().collect();
        neighbours.sort_unstable();
        neighbours.dedup();
        if neighbours.is_empty() {
            one_ring.push(Vec::new());
            continue;
        }
        let starts: Vec<usize> = neighbours
            .iter()
            .copied()
            .filter(|j| !pred[i].contains_key(j))
            .collect();
        let start = match starts.len() {
            0 => neighbours[0],
            1 => {
                boundary[i] = true;
                starts[0]
            }
            _ => return Err(MeshError::NonManifoldVertex(i)),
        };
        let mut ring = Vec::with_capacity(neighbours.len());
        let mut cur = start;
        loop {
            ring.push(cur);
            match succ[i].get(&cur) {
                Some(&next) if next != start => cur = next,
                _ => break,
            }
            if ring.len() > neighbours.len() {
                return Err(MeshError::NonManifoldVertex(i));
            }
        }
        if ring.len() != neighbours.len() {
            return Err(MeshError::NonManifoldVertex(i));
        }
        one_ring.push(ring);
    }

    let verts = mesh.vertices();
    let incident_edges = one_ring
        .iter()
        .enumerate()
        .map(|(i, ring)| ring.iter().map(|&j| verts[j] - verts[i]).collect())
        .collect();
    Ok(Adjacency {
        one_ring,
        incident_edges,
        boundary,
    })
}

/// Connected-component label per vertex, labels assigned in order of the
/// lowest vertex index in each component. Returns `(labels, count)`.
pub fn connected_components(adjacency: &Adjacency) -> (Vec<usize>, usize) {
    let n = adjacency.num_vertices();
    let mut label = vec![usize::MAX; n];
    let mut count = 0;
    let mut stack = Vec::new();
    for s in 0..n {
        if label[s] != usize::MAX {
            continue;
        }
        label[s] = count;
        stack.push(s);
        while let Some(v) = stack.pop() {
            for &w in adjacency.one_ring(v) {
                if label[w] == usize::MAX {
                    label[w] = count;
                    stack.push(w);
                }
            }
        }
        count += 1;
    }
    (label, count)
}

#[cfg(test)]
mod tests {
    use super::super::primitives::icosahedron;
    use super::super::test_meshes::*;
    use super::*;

    #[test]
    fn tetrahedron_degree_three() {
        let adj = build_adjacency(&tetrahedron()).unwrap();
        for i in 0..4 {
            assert_eq!(adj.degree(i), 3);
            assert!(!adj.is_boundary(i));
        }
    }

    #[test]
    fn icosahedron_degree_five() {
        let adj = build_adjacency(&icosahedron()).unwrap();
        for i in 0..12 {
            assert_eq!(adj.degree(i), 5);
        }
    }

    #[test]
    fn grid_interior_has_six_neighbours_ccw() {
        let m = grid(10);
        let adj = build_adjacency(&m).unwrap();
        // enumerate the generated triangulation directly
        let n = 10;
        for j in 1..n - 1 {
            for i in 1..n - 1 {
                let v = j * n + i;
                let mut expected: Vec<usize> = m
                    .faces()
                    .iter()
                    .filter(|f| f.contains(&v))
                    .flat_map(|f| f.iter().copied())
                    .filter(|&w| w != v)
                    .collect();
                expected.sort_unstable();
                expected.dedup();
                assert_eq!(expected.len(), 6);
                let mut got = adj.one_ring(v).to_vec();
                assert_eq!(got[0], expected[0]);
                got.sort_unstable();
                assert_eq!(got, expected);
                // counterclockwise in the xy-plane (normals point +z)
                let ring = adj.one_ring(v);
                let p = m.vertices()[v];
                let angles: Vec<f64> = ring
                    .iter()
                    .map(|&w| {
                        let d = m.vertices()[w] - p;
                        d.y.atan2(d.x)
                    })
                    .collect();
                for k in 0..ring.len() {
                    let a0 = angles[k];
                    let a1 = angles[(k + 1) % ring.len()];
                    let step = (a1 - a0).rem_euclid(std::f64::consts::TAU);
                    assert!(step > 0.0 && step < std::f64::consts::PI);
                }
            }
        }
        assert!(adj.is_boundary(0));
    }

    #[test]
    fn adjacency_is_symmetric_and_deterministic() {
        let m = icosahedron();
        let a = build_adjacency(&m).unwrap();
        let b = build_adjacency(&m).unwrap();
        assert_eq!(a, b);
        for i in 0..a.num_vertices() {
            for &j in a.one_ring(i) {
                assert!(a.contains_edge(j, i));
            }
        }
        let e = a.incident_edges(0);
        assert_eq!(e[0], m.vertices()[a.one_ring(0)[0]] - m.vertices()[0]);
    }

    #[test]
    fn rejects_non_manifold_edge() {
        let vertices = vec![Vec3::zeros(); 5];
        let faces = vec![[0, 1, 2], [1, 0, 3], [0, 1, 4]];
        let m = Mesh::new(vertices, faces).unwrap();
        match build_adjacency(&m) {
            Err(MeshError::NonManifoldEdges(e)) => assert_eq!(e, vec![(0, 1)]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn components() {
        let mut v = tetrahedron().vertices().to_vec();
        v.extend(tetrahedron().vertices().iter().map(|p| p + Vec3::new(5.0, 0.0, 0.0)));
        let mut faces = tetrahedron().faces().to_vec();
        faces.extend(tetrahedron().faces().iter().map(|f| [f[0] + 4, f[1] + 4, f[2] + 4]));
        let m = Mesh::new(v, faces).unwrap();
        let (labels, count) = connected_components(&build_adjacency(&m).unwrap());
        assert_eq!(count, 2);
        assert_eq!(labels, vec![0, 0, 0, 0, 1, 1, 1, 1]);
    }
}
