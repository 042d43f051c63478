use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use super::quadric::{edge_collapse_cost, Quadric};
use crate::mesh::Vec3;

/// Weight of the boundary-preservation planes.
pub const BOUNDARY_WEIGHT: f64 = 1e3;

const MIN_VERTICES: usize = 4;

#[derive(Clone, Copy, Debug)]
struct Candidate {
    cost: f64,
    a: usize,
    b: usize,
    stamp_a: u32,
    stamp_b: u32,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    // BinaryHeap is a max-heap: invert so the cheapest, lowest-index edge pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.a.cmp(&self.a))
            .then_with(|| other.b.cmp(&self.b))
    }
}

/// Result of one decimation pass.
#[derive(Clone, Debug)]
pub struct Decimated {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
    /// `kept[k]` is the fine vertex that became coarse vertex `k`.
    pub kept: Vec<usize>,
}

struct State {
    pos: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    face_alive: Vec<bool>,
    vertex_faces: Vec<BTreeSet<usize>>,
    alive: Vec<bool>,
    quadrics: Vec<Quadric>,
    stamp: Vec<u32>,
    live_vertices: usize,
}

impl State {
    fn new(vertices: &[Vec3], faces: &[[usize; 3]]) -> Self {
        let n = vertices.len();
        let mut vertex_faces = vec![BTreeSet::new(); n];
        let mut quadrics = vec![Quadric::zero(); n];
        let mut edge_faces: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        for (fi, f) in faces.iter().enumerate() {
            let q = Quadric::from_triangle(&vertices[f[0]], &vertices[f[1]], &vertices[f[2]]);
            for k in 0..3 {
                vertex_faces[f[k]].insert(fi);
                quadrics[f[k]] += q;
                let (a, b) = (f[k], f[(k + 1) % 3]);
                edge_faces.entry((a.min(b), a.max(b))).or_default().push(fi);
            }
        }
        for (&(a, b), fs) in &edge_faces {
            if fs.len() != 1 {
                continue;
            }
            let f = faces[fs[0]];
            let normal = (vertices[f[1]] - vertices[f[0]]).cross(&(vertices[f[2]] - vertices[f[0]]));
            let m = (vertices[b] - vertices[a]).cross(&normal);
            let len = m.norm();
            if len == 0.0 {
                continue;
            }
            let m = m / len;
            let q = Quadric::from_plane(&m, -m.dot(&vertices[a]), BOUNDARY_WEIGHT);
            quadrics[a] += q;
            quadrics[b] += q;
        }
        Self {
            pos: vertices.to_vec(),
            faces: faces.to_vec(),
            face_alive: vec![true; faces.len()],
            vertex_faces,
            alive: vec![true; n],
            quadrics,
            stamp: vec![0; n],
            live_vertices: n,
        }
    }

    fn neighbours(&self, v: usize) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        for &fi in &self.vertex_faces[v] {
            for &w in &self.faces[fi] {
                if w != v {
                    out.insert(w);
                }
            }
        }
        out
    }

    fn shared_faces(&self, a: usize, b: usize) -> Vec<usize> {
        self.vertex_faces[a]
            .intersection(&self.vertex_faces[b])
            .copied()
            .collect()
    }

    fn is_boundary_vertex(&self, v: usize) -> bool {
        self.neighbours(v)
            .into_iter()
            .any(|w| self.shared_faces(v, w).len() == 1)
    }

    fn candidate(&self, a: usize, b: usize) -> Candidate {
        let (a, b) = (a.min(b), a.max(b));
        let (cost, _) = edge_collapse_cost(&self.quadrics[a], &self.quadrics[b], &self.pos[a], &self.pos[b]);
        Candidate {
            cost,
            a,
            b,
            stamp_a: self.stamp[a],
            stamp_b: self.stamp[b],
        }
    }

    fn all_candidates(&self) -> BinaryHeap<Candidate> {
        let mut heap = BinaryHeap::new();
        for v in 0..self.pos.len() {
            if !self.alive[v] {
                continue;
            }
            for w in self.neighbours(v) {
                if v < w {
                    heap.push(self.candidate(v, w));
                }
            }
        }
        heap
    }

    fn is_legal(&self, a: usize, b: usize, target: &Vec3) -> bool {
        if self.live_vertices <= MIN_VERTICES {
            return false;
        }
        let shared = self.shared_faces(a, b);
        if shared.is_empty() || shared.len() > 2 {
            return false;
        }
        let na = self.neighbours(a);
        let nb = self.neighbours(b);
        let common: Vec<usize> = na.intersection(&nb).copied().collect();
        // link condition
        if common.len() != shared.len() {
            return false;
        }
        if shared.len() == 2 && self.is_boundary_vertex(a) && self.is_boundary_vertex(b) {
            return false;
        }
        // a common neighbour of degree 3 would be left with two neighbours
        if common.iter().any(|&c| self.neighbours(c).len() <= 3) {
            return false;
        }
        // surviving faces must not flip or collapse to zero area
        for v in [a, b] {
            for &fi in &self.vertex_faces[v] {
                if shared.contains(&fi) {
                    continue;
                }
                let f = self.faces[fi];
                let p = |k: usize| self.pos[f[k]];
                let before = (p(1) - p(0)).cross(&(p(2) - p(0)));
                let q = |k: usize| {
                    if f[k] == a || f[k] == b {
                        *target
                    } else {
                        self.pos[f[k]]
                    }
                };
                let after = (q(1) - q(0)).cross(&(q(2) - q(0)));
                let scale = before.norm() * after.norm();
                if after.norm_squared() <= 1e-24 || before.dot(&after) <= 1e-3 * scale {
                    return false;
                }
            }
        }
        true
    }

    /// Contracts `b` into `a` at `target`.
    fn collapse(&mut self, a: usize, b: usize, target: Vec3) {
        for fi in self.shared_faces(a, b) {
            self.face_alive[fi] = false;
            for &v in &self.faces[fi] {
                self.vertex_faces[v].remove(&fi);
            }
        }
        let moved: Vec<usize> = self.vertex_faces[b].iter().copied().collect();
        for fi in moved {
            for v in self.faces[fi].iter_mut() {
                if *v == b {
                    *v = a;
                }
            }
            self.vertex_faces[a].insert(fi);
        }
        self.vertex_faces[b].clear();
        self.alive[b] = false;
        self.live_vertices -= 1;
        self.pos[a] = target;
        let qb = self.quadrics[b];
        self.quadrics[a] += qb;
        self.stamp[a] += 1;
        self.stamp[b] += 1;
    }

    fn finish(self) -> Decimated {
        let mut remap = vec![usize::MAX; self.pos.len()];
        let mut kept = Vec::with_capacity(self.live_vertices);
        let mut vertices = Vec::with_capacity(self.live_vertices);
        for v in 0..self.pos.len() {
            if self.alive[v] {
                remap[v] = kept.len();
                kept.push(v);
                vertices.push(self.pos[v]);
            }
        }
        let faces = self
            .faces
            .iter()
            .zip(&self.face_alive)
            .filter(|(_, &alive)| alive)
            .map(|(f, _)| [remap[f[0]], remap[f[1]], remap[f[2]]])
            .collect();
        Decimated { vertices, faces, kept }
    }
}

/// Greedy quadric-error edge collapse down to `target` vertices.
///
/// Returns the vertex count reached when no legal collapse remains.
pub fn decimate(vertices: &[Vec3], faces: &[[usize; 3]], target: usize) -> Result<Decimated, usize> {
    let mut state = State::new(vertices, faces);
    let mut heap = state.all_candidates();
    let mut progress_since_rebuild = true;
    while state.live_vertices > target {
        let Some(c) = heap.pop() else {
            // stale-entry skipping can drop edges whose legality changed later
            if !progress_since_rebuild {
                return Err(state.live_vertices);
            }
            heap = state.all_candidates();
            progress_since_rebuild = false;
            continue;
        };
        if !state.alive[c.a] || !state.alive[c.b] || c.stamp_a != state.stamp[c.a] || c.stamp_b != state.stamp[c.b] {
            continue;
        }
        let (_, target_pos) = edge_collapse_cost(
            &state.quadrics[c.a],
            &state.quadrics[c.b],
            &state.pos[c.a],
            &state.pos[c.b],
        );
        if !state.is_legal(c.a, c.b, &target_pos) {
            continue;
        }
        state.collapse(c.a, c.b, target_pos);
        progress_since_rebuild = true;
        for w in state.neighbours(c.a) {
            heap.push(state.candidate(c.a, w));
        }
    }
    Ok(state.finish())
}
