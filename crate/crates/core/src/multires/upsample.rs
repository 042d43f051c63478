use crate::linalg::SparseMatrix;
use crate::mesh::Vec3;

/// Barycentric coordinates of the point of triangle `abc` closest to `p`.
/// All three are nonnegative and sum to one.
pub fn closest_point_barycentric(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> [f64; 3] {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return [1.0, 0.0, 0.0];
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return [0.0, 1.0, 0.0];
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return [1.0 - v, v, 0.0];
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return [0.0, 0.0, 1.0];
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return [1.0 - w, 0.0, w];
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return [0.0, 1.0 - w, w];
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    [1.0 - v - w, v, w]
}

/// `N_fine x N_coarse` operator: each fine vertex is expressed in barycentric
/// coordinates of its nearest coarse triangle (lowest face index on ties).
pub fn upsampling_operator(fine: &[Vec3], coarse: &[Vec3], coarse_faces: &[[usize; 3]]) -> SparseMatrix {
    let mut triplets = Vec::with_capacity(fine.len() * 3);
    for (i, p) in fine.iter().enumerate() {
        let mut best = (f64::INFINITY, 0usize, [1.0, 0.0, 0.0]);
        for (fi, f) in coarse_faces.iter().enumerate() {
            let (a, b, c) = (&coarse[f[0]], &coarse[f[1]], &coarse[f[2]]);
            let w = closest_point_barycentric(p, a, b, c);
            let q = a * w[0] + b * w[1] + c * w[2];
            let d = (p - q).norm_squared();
            if d < best.0 {
                best = (d, fi, w);
            }
        }
        let f = coarse_faces[best.1];
        for k in 0..3 {
            let w = best.2[k].clamp(0.0, 1.0);
            if w > 0.0 {
                triplets.push((i, f[k], w));
            }
        }
    }
    let mut m = SparseMatrix::from_triplets(fine.len(), coarse.len(), &triplets);
    m.normalize_rows();
    m
}
