//! Small procedural meshes used by tests, benchmarks and the synthetic oracle.

use std::collections::HashMap;

use super::{Mesh, Vec3};

pub fn tetrahedron() -> Mesh {
    Mesh::new(
        vec![
            Vec3::new(1.0, 1.0, 1.0),
            Vec3::new(1.0, -1.0, -1.0),
            Vec3::new(-1.0, 1.0, -1.0),
            Vec3::new(-1.0, -1.0, 1.0),
        ],
        vec![[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]],
    )
    .expect("valid tetrahedron")
}

pub fn icosahedron() -> Mesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let v = |x: f64, y: f64, z: f64| Vec3::new(x, y, z);
    let vertices = vec![
        v(-1., t, 0.),
        v(1., t, 0.),
        v(-1., -t, 0.),
        v(1., -t, 0.),
        v(0., -1., t),
        v(0., 1., t),
        v(0., -1., -t),
        v(0., 1., -t),
        v(t, 0., -1.),
        v(t, 0., 1.),
        v(-t, 0., -1.),
        v(-t, 0., 1.),
    ];
    let faces = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    Mesh::new(vertices, faces).expect("valid icosahedron")
}

/// Unit sphere by midpoint subdivision of the icosahedron:
/// 12, 42, 162, 642, ... vertices.
pub fn icosphere(subdivisions: usize) -> Mesh {
    let base = icosahedron();
    let mut vertices: Vec<Vec3> = base.vertices().iter().map(|v| v.normalize()).collect();
    let mut faces = base.faces().to_vec();
    for _ in 0..subdivisions {
        let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        let mut mid = |a: usize, b: usize, vertices: &mut Vec<Vec3>| -> usize {
            *midpoints.entry((a.min(b), a.max(b))).or_insert_with(|| {
                vertices.push(((vertices[a] + vertices[b]) * 0.5).normalize());
                vertices.len() - 1
            })
        };
        for [a, b, c] in faces {
            let ab = mid(a, b, &mut vertices);
            let bc = mid(b, c, &mut vertices);
            let ca = mid(c, a, &mut vertices);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    Mesh::new(vertices, faces).expect("valid icosphere")
}

/// `n x n` vertex grid in the xy-plane, each quad split along the same diagonal.
pub fn grid(n: usize) -> Mesh {
    let mut vertices = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            vertices.push(Vec3::new(i as f64, j as f64, 0.0));
        }
    }
    let mut faces = Vec::new();
    for j in 0..n.saturating_sub(1) {
        for i in 0..n - 1 {
            let a = j * n + i;
            let b = a + 1;
            let c = a + n;
            let d = c + 1;
            faces.push([a, b, d]);
            faces.push([a, d, c]);
        }
    }
    Mesh::new(vertices, faces).expect("valid grid")
}

pub fn unit_cube() -> Mesh {
    let v = |x: f64, y: f64, z: f64| Vec3::new(x, y, z);
    let vertices = vec![
        v(0., 0., 0.),
        v(1., 0., 0.),
        v(1., 1., 0.),
        v(0., 1., 0.),
        v(0., 0., 1.),
        v(1., 0., 1.),
        v(1., 1., 1.),
        v(0., 1., 1.),
    ];
    let faces = vec![
        [0, 2, 1],
        [0, 3, 2],
        [4, 5, 6],
        [4, 6, 7],
        [0, 1, 5],
        [0, 5, 4],
        [1, 2, 6],
        [1, 6, 5],
        [2, 3, 7],
        [2, 7, 6],
        [3, 0, 4],
        [3, 4, 7],
    ];
    Mesh::new(vertices, faces).expect("valid cube")
}

/// Faces of a closed tube: `rings` rings of `segments` vertices along +x
/// (ring-major numbering), then a pole at each end (`rings*segments` is the
/// start pole, `rings*segments + 1` the end pole). Normals point outward.
pub fn capped_tube_faces(rings: usize, segments: usize) -> Vec<[usize; 3]> {
    let idx = |r: usize, s: usize| r * segments + (s % segments);
    let start = rings * segments;
    let end = start + 1;
    let mut faces = Vec::with_capacity(2 * segments * rings);
    for s in 0..segments {
        faces.push([start, idx(0, s + 1), idx(0, s)]);
    }
    for r in 0..rings - 1 {
        for s in 0..segments {
            let a = idx(r, s);
            let b = idx(r, s + 1);
            let c = idx(r + 1, s);
            let d = idx(r + 1, s + 1);
            faces.push([a, b, d]);
            faces.push([a, d, c]);
        }
    }
    for s in 0..segments {
        faces.push([end, idx(rings - 1, s), idx(rings - 1, s + 1)]);
    }
    faces
}

/// Closed cylinder of the given radius along +x from 0 to `length`.
pub fn capped_cylinder(rings: usize, segments: usize, radius: f64, length: f64) -> Mesh {
    let mut vertices = Vec::with_capacity(rings * segments + 2);
    for r in 0..rings {
        let x = length * (r as f64 + 0.5) / rings as f64;
        for s in 0..segments {
            let phi = std::f64::consts::TAU * s as f64 / segments as f64;
            vertices.push(Vec3::new(x, radius * phi.cos(), radius * phi.sin()));
        }
    }
    vertices.push(Vec3::new(0.0, 0.0, 0.0));
    vertices.push(Vec3::new(length, 0.0, 0.0));
    Mesh::new(vertices, capped_tube_faces(rings, segments)).expect("valid cylinder")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_adjacency;

    #[test]
    fn icosphere_counts() {
        assert_eq!(icosphere(0).num_vertices(), 12);
        assert_eq!(icosphere(1).num_vertices(), 42);
        assert_eq!(icosphere(3).num_vertices(), 642);
        build_adjacency(&icosphere(2)).unwrap();
    }

    #[test]
    fn cylinder_is_closed_manifold_with_outward_normals() {
        let m = capped_cylinder(6, 8, 0.5, 3.0);
        let adj = build_adjacency(&m).unwrap();
        assert!((0..m.num_vertices()).all(|i| !adj.is_boundary(i)));
        // signed volume is positive for outward-facing triangles
        let v = m.vertices();
        let vol: f64 = m
            .faces()
            .iter()
            .map(|f| v[f[0]].dot(&v[f[1]].cross(&v[f[2]])) / 6.0)
            .sum();
        assert!(vol > 0.0);
    }
}
