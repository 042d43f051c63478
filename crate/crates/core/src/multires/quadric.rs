use nalgebra::{Matrix3, Matrix4, Vector4};

use crate::mesh::Vec3;

/// Symmetric 4x4 plane-distance quadric.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quadric(pub Matrix4<f64>);

/// Condition number above which the 3x3 block is treated as singular.
pub const SINGULAR_CONDITION: f64 = 1e12;

impl Quadric {
    pub fn zero() -> Self {
        Self(Matrix4::zeros())
    }

    /// `w * p p^T` for the plane `n . x + d = 0` with unit normal `n`.
    pub fn from_plane(normal: &Vec3, d: f64, weight: f64) -> Self {
        let p = Vector4::new(normal.x, normal.y, normal.z, d);
        Self(weight * p * p.transpose())
    }

    /// Plane quadric of a triangle; zero for degenerate triangles.
    pub fn from_triangle(a: &Vec3, b: &Vec3, c: &Vec3) -> Self {
        let n = (b - a).cross(&(c - a));
        let len = n.norm();
        if len == 0.0 {
            return Self::zero();
        }
        let n = n / len;
        Self::from_plane(&n, -n.dot(a), 1.0)
    }

    pub fn evaluate(&self, p: &Vec3) -> f64 {
        let h = Vector4::new(p.x, p.y, p.z, 1.0);
        (h.transpose() * self.0 * h)[(0, 0)]
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.0.symmetric_eigenvalues().min()
    }
}

impl std::ops::Add for Quadric {
    type Output = Quadric;
    fn add(self, rhs: Quadric) -> Quadric {
        Quadric(self.0 + rhs.0)
    }
}

impl std::ops::AddAssign for Quadric {
    fn add_assign(&mut self, rhs: Quadric) {
        self.0 += rhs.0;
    }
}

/// Cost and optimal position for contracting the edge `(pa, pb)` under
/// `qa + qb`. Falls back to the best of midpoint and endpoints (in that
/// order, so ties keep the midpoint) when the linear block is singular.
pub fn edge_collapse_cost(qa: &Quadric, qb: &Quadric, pa: &Vec3, pb: &Vec3) -> (f64, Vec3) {
    let q = *qa + *qb;
    let a: Matrix3<f64> = q.0.fixed_view::<3, 3>(0, 0).into_owned();
    let b = Vec3::new(q.0[(0, 3)], q.0[(1, 3)], q.0[(2, 3)]);
    let sv = a.singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    if smax > 0.0 && smin > smax / SINGULAR_CONDITION {
        if let Some(inv) = a.try_inverse() {
            let p = -(inv * b);
            if p.iter().all(|x| x.is_finite()) {
                return (q.evaluate(&p).max(0.0), p);
            }
        }
    }
    let mid = (pa + pb) * 0.5;
    let mut best = (q.evaluate(&mid).max(0.0), mid);
    for p in [*pa, *pb] {
        let c = q.evaluate(&p).max(0.0);
        if c < best.0 {
            best = (c, p);
        }
    }
    best
}
