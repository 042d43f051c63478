//! Procedural articulated creature: a chain of five capsule segments with a
//! tapering radius, bent at four two-axis joints.

use std::sync::Arc;

use nalgebra::{Matrix3, Rotation3};

use crate::arap::fit_rotation;
use crate::mesh::primitives::capped_tube_faces;
use crate::mesh::{center, Mesh, Topology, Vec3};

use super::EvalError;

pub const NUM_SEGMENTS: usize = 5;
pub const NUM_JOINTS: usize = NUM_SEGMENTS - 1;
pub const SHAPE_DIM: usize = 8;
pub const POSE_DIM: usize = 2 * NUM_JOINTS;
pub const RINGS_PER_SEGMENT: usize = 10;
pub const RING_RESOLUTION: usize = 12;
pub const NUM_RINGS: usize = NUM_SEGMENTS * RINGS_PER_SEGMENT + 1;
pub const NUM_VERTICES: usize = NUM_RINGS * RING_RESOLUTION + 2;

/// Fraction of the shorter adjacent segment over which a joint bends, per side.
const BLEND_HALF_WIDTH: f64 = 0.25;
const SUBSTEPS: usize = 8;

/// Sampling ranges: segment lengths, then base/middle/tip radii.
pub const SHAPE_RANGES: [(f64, f64); SHAPE_DIM] = [
    (0.5, 1.0),
    (0.5, 1.0),
    (0.5, 1.0),
    (0.5, 1.0),
    (0.5, 1.0),
    (0.15, 0.3),
    (0.1, 0.25),
    (0.05, 0.15),
];
pub const POSE_LIMIT: f64 = 0.45;

/// Joint axes in the parent frame: each joint bends about y, then about z.
pub fn joint_axis(angle_index: usize) -> Vec3 {
    if angle_index % 2 == 0 {
        Vec3::y()
    } else {
        Vec3::z()
    }
}

fn joint_rotation(a: f64, b: f64) -> Matrix3<f64> {
    Rotation3::from_axis_angle(&Vec3::y_axis(), a).into_inner()
        * Rotation3::from_axis_angle(&Vec3::z_axis(), b).into_inner()
}

fn smoothstep(x: f64) -> f64 {
    let t = x.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Radius profile weights of (base, middle, tip) at chain parameter `u`.
fn radius_weights(u: f64) -> [f64; 3] {
    if u <= 0.5 {
        let t = u / 0.5;
        [1.0 - t, t, 0.0]
    } else {
        let t = (u - 0.5) / 0.5;
        [0.0, 1.0 - t, t]
    }
}

fn check_len(what: &'static str, v: &[f64], n: usize) -> Result<(), EvalError> {
    if v.len() != n {
        return Err(EvalError::FactorLength {
            what,
            expected: n,
            found: v.len(),
        });
    }
    Ok(())
}

/// Renders the creature for the given factors. Output is centred at the origin.
#[derive(Clone, Debug)]
pub struct Oracle {
    topology: Arc<Topology>,
}

impl Default for Oracle {
    fn default() -> Self {
        Self::new()
    }
}

impl Oracle {
    pub fn new() -> Self {
        let topology = Topology::new(NUM_VERTICES, capped_tube_faces(NUM_RINGS, RING_RESOLUTION))
            .expect("oracle topology is valid");
        Self {
            topology: Arc::new(topology),
        }
    }

    pub fn topology(&self) -> &Arc<Topology> {
        &self.topology
    }

    fn orientation(shape: &[f64], pose: &[f64], s: f64) -> Matrix3<f64> {
        let mut r = Matrix3::identity();
        let mut joint_s = 0.0;
        for j in 0..NUM_JOINTS {
            joint_s += shape[j];
            let h = BLEND_HALF_WIDTH * shape[j].min(shape[j + 1]);
            let t = smoothstep((s - joint_s + h) / (2.0 * h));
            if t == 0.0 {
                break;
            }
            r *= joint_rotation(t * pose[2 * j], t * pose[2 * j + 1]);
        }
        r
    }

    pub fn render(&self, shape: &[f64], pose: &[f64]) -> Result<Mesh, EvalError> {
        check_len("shape", shape, SHAPE_DIM)?;
        check_len("pose", pose, POSE_DIM)?;
        if shape.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
            return Err(EvalError::InvalidFactors("shape parameters must be positive".into()));
        }
        let mut ring_s = Vec::with_capacity(NUM_RINGS);
        let mut acc = 0.0;
        for len in &shape[..NUM_SEGMENTS] {
            for i in 0..RINGS_PER_SEGMENT {
                ring_s.push(acc + len * i as f64 / RINGS_PER_SEGMENT as f64);
            }
            acc += len;
        }
        ring_s.push(acc);

        // centreline by midpoint integration of the unit tangent
        let mut centres = Vec::with_capacity(NUM_RINGS);
        let mut c = Vec3::zeros();
        centres.push(c);
        for w in ring_s.windows(2) {
            let ds = (w[1] - w[0]) / SUBSTEPS as f64;
            for k in 0..SUBSTEPS {
                let s = w[0] + (k as f64 + 0.5) * ds;
                c += Self::orientation(shape, pose, s) * Vec3::x() * ds;
            }
            centres.push(c);
        }

        let mut vertices = Vec::with_capacity(NUM_VERTICES);
        let mut frames = Vec::with_capacity(NUM_RINGS);
        for (i, (&s, c)) in ring_s.iter().zip(&centres).enumerate() {
            let r = Self::orientation(shape, pose, s);
            let wts = radius_weights(i as f64 / (NUM_RINGS - 1) as f64);
            let radius = wts[0] * shape[5] + wts[1] * shape[6] + wts[2] * shape[7];
            for k in 0..RING_RESOLUTION {
                let phi = std::f64::consts::TAU * k as f64 / RING_RESOLUTION as f64;
                let local = Vec3::new(0.0, radius * phi.cos(), radius * phi.sin());
                vertices.push(c + r * local);
            }
            frames.push((r, radius));
        }
        let (r0, rad0) = frames[0];
        let (r1, rad1) = frames[NUM_RINGS - 1];
        vertices.push(centres[0] - r0 * Vec3::x() * (0.5 * rad0));
        vertices.push(centres[NUM_RINGS - 1] + r1 * Vec3::x() * (0.5 * rad1));
        Ok(center(&Mesh::with_topology(vertices, Arc::clone(&self.topology))))
    }

    fn check_mesh(&self, mesh: &Mesh) -> Result<(), EvalError> {
        if mesh.num_vertices() != NUM_VERTICES || mesh.faces() != self.topology.faces() {
            return Err(EvalError::NotOracleMesh);
        }
        Ok(())
    }

    /// Ring centroids and mean ring radii.
    fn rings(mesh: &Mesh) -> (Vec<Vec3>, Vec<f64>) {
        let v = mesh.vertices();
        let mut centres = Vec::with_capacity(NUM_RINGS);
        let mut radii = Vec::with_capacity(NUM_RINGS);
        for ring in v[..NUM_RINGS * RING_RESOLUTION].chunks(RING_RESOLUTION) {
            let c = ring.iter().sum::<Vec3>() / RING_RESOLUTION as f64;
            radii.push(ring.iter().map(|p| (p - c).norm()).sum::<f64>() / RING_RESOLUTION as f64);
            centres.push(c);
        }
        (centres, radii)
    }

    /// Least-squares shape estimate: segment lengths as centreline polyline
    /// lengths, radii as the best piecewise-linear fit to the ring radii.
    /// Exact on rest-pose meshes.
    pub fn fit_shape(&self, mesh: &Mesh) -> Result<Vec<f64>, EvalError> {
        self.check_mesh(mesh)?;
        let (centres, radii) = Self::rings(mesh);
        let mut out = Vec::with_capacity(SHAPE_DIM);
        for k in 0..NUM_SEGMENTS {
            let r = k * RINGS_PER_SEGMENT;
            out.push(
                (r..r + RINGS_PER_SEGMENT)
                    .map(|i| (centres[i + 1] - centres[i]).norm())
                    .sum(),
            );
        }
        let mut ata = Matrix3::zeros();
        let mut atb = Vec3::zeros();
        for (i, &r) in radii.iter().enumerate() {
            let w = Vec3::from(radius_weights(i as f64 / (NUM_RINGS - 1) as f64));
            ata += w * w.transpose();
            atb += w * r;
        }
        let x = ata
            .lu()
            .solve(&atb)
            .ok_or(EvalError::InvalidFactors("singular radius fit".into()))?;
        out.extend(x.iter());
        Ok(out)
    }

    /// Pose estimate from the rigidly moving middle of each segment: a
    /// rotation fit per segment, then joint angles from relative rotations.
    pub fn fit_pose(&self, mesh: &Mesh) -> Result<Vec<f64>, EvalError> {
        self.check_mesh(mesh)?;
        let (centres, radii) = Self::rings(mesh);
        let v = mesh.vertices();
        let mut frames = Vec::with_capacity(NUM_SEGMENTS);
        for k in 0..NUM_SEGMENTS {
            let mid = k * RINGS_PER_SEGMENT + RINGS_PER_SEGMENT / 2;
            let mut rest = Vec::new();
            let mut posed = Vec::new();
            for i in mid - 1..=mid + 1 {
                let axial = (i as f64 - mid as f64) * (centres[mid + 1] - centres[mid - 1]).norm() / 2.0;
                for q in 0..RING_RESOLUTION {
                    let phi = std::f64::consts::TAU * q as f64 / RING_RESOLUTION as f64;
                    rest.push(Vec3::new(axial, radii[i] * phi.cos(), radii[i] * phi.sin()));
                    posed.push(v[i * RING_RESOLUTION + q] - centres[mid]);
                }
            }
            let w = vec![1.0; rest.len()];
            frames.push(fit_rotation(&rest, &posed, &w).map_err(|e| EvalError::InvalidFactors(e.to_string()))?);
        }
        let mut pose = Vec::with_capacity(POSE_DIM);
        for k in 0..NUM_JOINTS {
            let j = frames[k].transpose() * frames[k + 1];
            pose.push(j[(0, 2)].atan2(j[(2, 2)]));
            pose.push(j[(1, 0)].atan2(j[(1, 1)]));
        }
        Ok(pose)
    }
}

/// Unit quaternion `(w, x, y, z)` of a rotation by `angle` about `axis`.
pub fn angle_quaternion(angle: f64, axis: &Vec3) -> [f64; 4] {
    let (s, c) = (0.5 * angle).sin_cos();
    [c, s * axis.x, s * axis.y, s * axis.z]
}

/// Mean over joint angles of the quaternion distance `min(|q1-q2|, |q1+q2|)`.
pub fn pose_distance(a: &[f64], b: &[f64]) -> f64 {
    let total: f64 = a
        .iter()
        .zip(b)
        .enumerate()
        .map(|(i, (&x, &y))| {
            let axis = joint_axis(i);
            let (p, q) = (angle_quaternion(x, &axis), angle_quaternion(y, &axis));
            let minus: f64 = p.iter().zip(&q).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
            let plus: f64 = p.iter().zip(&q).map(|(u, v)| (u + v).powi(2)).sum::<f64>().sqrt();
            minus.min(plus)
        })
        .sum();
    total / a.len().max(1) as f64
}

/// Mean absolute difference of shape parameters.
pub fn shape_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len().max(1) as f64
}
