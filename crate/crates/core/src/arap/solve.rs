use super::{ArapError, ArapProblem, RotationField};
use crate::linalg::{CholeskyFactor, SparseMatrix, SymbolicCholesky};
use crate::mesh::{connected_components, Adjacency, Mesh, Vec3};

/// Sparsity pattern shared by every system on this connectivity: the graph
/// Laplacian plus the diagonal.
pub(super) fn system_pattern(adjacency: &Adjacency) -> SparseMatrix {
    let mut t = Vec::new();
    for (i, ring) in adjacency.rings().iter().enumerate() {
        t.push((i, i, 1.0 + ring.len() as f64));
        for &j in ring {
            t.push((i, j, -1.0));
        }
    }
    SparseMatrix::from_triplets(adjacency.num_vertices(), adjacency.num_vertices(), &t)
}

fn check_anchored(problem: &ArapProblem<'_>) -> Result<(), ArapError> {
    let (labels, count) = connected_components(problem.adjacency);
    let mut anchored = vec![false; count];
    for &(i, _) in problem.anchors() {
        anchored[labels[i]] = true;
    }
    if let Some(component) = anchored.iter().position(|&a| !a) {
        let size = labels.iter().filter(|&&l| l == component).count();
        let first_vertex = labels.iter().position(|&l| l == component).unwrap();
        return Err(ArapError::UnanchoredComponent {
            component,
            size,
            first_vertex,
        });
    }
    Ok(())
}

/// System matrix with anchor rows and columns replaced by identity, and the
/// three right-hand sides (row-major `n x 3`).
fn assemble(problem: &ArapProblem<'_>, rotations: &RotationField) -> (SparseMatrix, Vec<f64>) {
    let n = problem.source.num_vertices();
    let src = problem.source.vertices();
    let mut t = Vec::with_capacity(n * 8);
    let mut rhs = vec![0.0; n * 3];
    for &(a, p) in problem.anchors() {
        rhs[3 * a] = p.x;
        rhs[3 * a + 1] = p.y;
        rhs[3 * a + 2] = p.z;
    }
    for (i, ring) in problem.adjacency.rings().iter().enumerate() {
        if problem.is_anchor(i) {
            t.push((i, i, 1.0));
            for &j in ring {
                t.push((i, j, 0.0));
            }
            continue;
        }
        let ri = rotations.get(i);
        let mut diag = 0.0;
        let mut b = Vec3::zeros();
        for (k, &j) in ring.iter().enumerate() {
            let w = problem.weights(i)[k];
            diag += w;
            b += (w * 0.5) * ((ri + rotations.get(j)) * (src[i] - src[j]));
            if problem.is_anchor(j) {
                t.push((i, j, 0.0));
                let pj = problem
                    .anchors()
                    .binary_search_by_key(&j, |a| a.0)
                    .map(|pos| problem.anchors()[pos].1)
                    .unwrap();
                b += w * pj;
            } else {
                t.push((i, j, -w));
            }
        }
        if ring.is_empty() {
            // isolated vertices stay where they are
            diag = 1.0;
            b = src[i];
        }
        t.push((i, i, diag));
        rhs[3 * i] = b.x;
        rhs[3 * i + 1] = b.y;
        rhs[3 * i + 2] = b.z;
    }
    (SparseMatrix::from_triplets(n, n, &t), rhs)
}

pub(super) fn solve_with(
    problem: &ArapProblem<'_>,
    rotations: &RotationField,
    symbolic: &SymbolicCholesky,
) -> Result<Mesh, ArapError> {
    let n = problem.source.num_vertices();
    if rotations.len() != n {
        return Err(ArapError::RotationCount {
            expected: n,
            found: rotations.len(),
        });
    }
    check_anchored(problem)?;
    let (a, rhs) = assemble(problem, rotations);
    let factor = CholeskyFactor::factor(symbolic, &a)?;
    let mut cols = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for (c, col) in cols.iter_mut().enumerate() {
        for i in 0..n {
            col[i] = rhs[3 * i + c];
        }
        factor.solve_in_place(col);
    }
    let mut vertices: Vec<Vec3> = (0..n).map(|i| Vec3::new(cols[0][i], cols[1][i], cols[2][i])).collect();
    for &(i, p) in problem.anchors() {
        vertices[i] = p;
    }
    Ok(Mesh::with_topology(
        vertices,
        std::sync::Arc::clone(problem.source.topology()),
    ))
}

/// Relative residual `|A x - b| / |b|` of the position system restricted to free vertices.
pub fn linear_residual(problem: &ArapProblem<'_>, rotations: &RotationField, solution: &Mesh) -> f64 {
    let (a, rhs) = assemble(problem, rotations);
    let x = solution.to_flat();
    let ax = a.mul_dense(&x, 3);
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..problem.source.num_vertices() {
        if problem.is_anchor(i) {
            continue;
        }
        for c in 0..3 {
            num += (ax[3 * i + c] - rhs[3 * i + c]).powi(2);
            den += rhs[3 * i + c].powi(2);
        }
    }
    if den == 0.0 {
        num.sqrt()
    } else {
        (num / den).sqrt()
    }
}
