use nalgebra::Matrix3;

use super::{ArapError, Rotation};
use crate::mesh::Vec3;

/// Rotation minimizing `sum_j w_j |d_j - R e_j|^2` over SO(3).
///
/// With the covariance `S = sum_j w_j e_j d_j^T = U Sigma V^T`, the optimum is
/// `R = V U^T`. A reflection (`det < 0`) is repaired by negating the column of
/// `V` paired with the smallest singular value.
pub fn fit_rotation(edges: &[Vec3], deformed: &[Vec3], weights: &[f64]) -> Result<Rotation, ArapError> {
    if edges.len() != deformed.len() || edges.len() != weights.len() {
        return Err(ArapError::LengthMismatch(edges.len(), deformed.len(), weights.len()));
    }
    if weights.iter().any(|&w| !(w > 0.0)) {
        return Err(ArapError::NonPositiveWeight);
    }
    if edges.iter().all(|e| e.norm_squared() == 0.0) {
        return Err(ArapError::DegenerateCell);
    }
    let mut s = Matrix3::zeros();
    for ((e, d), &w) in edges.iter().zip(deformed).zip(weights) {
        s += w * e * d.transpose();
    }
    let svd = s.svd(true, true);
    let u = svd.u.expect("requested U");
    let mut v = svd.v_t.expect("requested V^T").transpose();
    let mut r = v * u.transpose();
    if r.determinant() < 0.0 {
        let smallest = svd
            .singular_values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(k, _)| k)
            .unwrap();
        let mut col = v.column_mut(smallest);
        col *= -1.0;
        r = v * u.transpose();
    }
    Ok(r)
}

/// Per-vertex cell rotations.
#[derive(Clone, Debug, PartialEq)]
pub struct RotationField(Vec<Rotation>);

impl RotationField {
    pub fn new(rotations: Vec<Rotation>) -> Self {
        Self(rotations)
    }

    pub fn identity(n: usize) -> Self {
        Self(vec![Rotation::identity(); n])
    }

    pub fn uniform(n: usize, r: Rotation) -> Self {
        Self(vec![r; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> &Rotation {
        &self.0[i]
    }

    pub fn as_slice(&self) -> &[Rotation] {
        &self.0
    }

    /// Largest deviation from orthogonality (`|R^T R - I|_max`) and from `det = 1`.
    pub fn max_violation(&self) -> f64 {
        self.0
            .iter()
            .map(|r| {
                let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
                ortho.max((r.determinant() - 1.0).abs())
            })
            .fold(0.0, f64::max)
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        self.max_violation() <= tol
    }
}
