use serde::{Deserialize, Serialize};

/// Compressed sparse row matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from `(row, col, value)` triplets. Duplicates are summed;
    /// columns within a row end up sorted.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut indptr = vec![0usize; rows + 1];
        let mut indices = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            assert!(r < rows && c < cols, "triplet ({r}, {c}) out of bounds");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            indices.push(c);
            values.push(v);
            indptr[r + 1] += 1;
            last = Some((r, c));
        }
        for r in 0..rows {
            indptr[r + 1] += indptr[r];
        }
        Self {
            rows,
            cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        (0..self.rows)
            .flat_map(|r| self.row(r).map(move |(c, v)| (r, c, v)))
            .collect()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.row(r).find(|&(cc, _)| cc == c).map_or(0.0, |(_, v)| v)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.cols]; self.rows];
        for (r, c, v) in self.triplets() {
            d[r][c] += v;
        }
        d
    }

    pub fn transpose(&self) -> SparseMatrix {
        let t: Vec<(usize, usize, f64)> = self.triplets().into_iter().map(|(r, c, v)| (c, r, v)).collect();
        SparseMatrix::from_triplets(self.cols, self.rows, &t)
    }

    /// `self * x` where `x` is row-major `cols x width`; output is `rows x width`.
    pub fn mul_dense(&self, x: &[f64], width: usize) -> Vec<f64> {
        assert_eq!(x.len(), self.cols * width, "dense operand has wrong size");
        let mut out = vec![0.0; self.rows * width];
        for r in 0..self.rows {
            let dst = &mut out[r * width..(r + 1) * width];
            for (c, v) in self.row(r) {
                let src = &x[c * width..(c + 1) * width];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += v * s;
                }
            }
        }
        out
    }

    /// `self^T * y` where `y` is `rows x width`; output is `cols x width`.
    pub fn transpose_mul_dense(&self, y: &[f64], width: usize) -> Vec<f64> {
        assert_eq!(y.len(), self.rows * width, "dense operand has wrong size");
        let mut out = vec![0.0; self.cols * width];
        for r in 0..self.rows {
            let src = &y[r * width..(r + 1) * width];
            for (c, v) in self.row(r) {
                let dst = &mut out[c * width..(c + 1) * width];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += v * s;
                }
            }
        }
        out
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|r| self.row(r).map(|(_, v)| v).sum()).collect()
    }

    /// Scales every nonzero row to sum to one.
    pub fn normalize_rows(&mut self) {
        for r in 0..self.rows {
            let span = self.indptr[r]..self.indptr[r + 1];
            let s: f64 = self.values[span.clone()].iter().sum();
            if s != 0.0 {
                for v in &mut self.values[span] {
                    *v /= s;
                }
            }
        }
    }
}
