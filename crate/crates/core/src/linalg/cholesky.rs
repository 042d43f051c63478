//! Up-looking sparse Cholesky factorization `P A P^T = L L^T`.
//!
//! The symbolic phase (fill-reducing ordering, elimination tree, column
//! counts) depends only on the sparsity pattern and can be reused for any
//! matrix whose pattern is contained in the analysed one.

use std::collections::VecDeque;

use thiserror::Error;

use super::SparseMatrix;

const NONE: usize = usize::MAX;

#[derive(Debug, Error, PartialEq)]
pub enum CholeskyError {
    #[error("matrix is not positive definite (pivot {pivot} at column {column})")]
    NotPositiveDefinite { column: usize, pivot: f64 },
    #[error("matrix must be square, got {0}x{1}")]
    NotSquare(usize, usize),
    #[error("dimension mismatch: symbolic analysis for n={expected}, matrix has n={found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("entry ({0}, {1}) lies outside the analysed sparsity pattern")]
    PatternMismatch(usize, usize),
}

/// Ordering and elimination structure of a symmetric sparsity pattern.
#[derive(Clone, Debug)]
pub struct SymbolicCholesky {
    n: usize,
    /// `perm[new] = old`
    perm: Vec<usize>,
    /// `iperm[old] = new`
    iperm: Vec<usize>,
    parent: Vec<usize>,
    /// Upper-triangular pattern of the permuted matrix, column-compressed.
    cp: Vec<usize>,
    ci: Vec<usize>,
    lp: Vec<usize>,
}

impl SymbolicCholesky {
    /// Analyses the pattern of a symmetric matrix stored with both triangles.
    pub fn analyze(a: &SparseMatrix) -> Result<Self, CholeskyError> {
        if a.rows() != a.cols() {
            return Err(CholeskyError::NotSquare(a.rows(), a.cols()));
        }
        let n = a.rows();
        let perm = reverse_cuthill_mckee(a);
        let mut iperm = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            iperm[old] = new;
        }

        let mut cols: Vec<Vec<usize>> = vec![Vec::new(); n];
        for r in 0..n {
            for (c, _) in a.row(r) {
                let (i, j) = (iperm[r], iperm[c]);
                if i <= j {
                    cols[j].push(i);
                }
            }
        }
        for (j, col) in cols.iter_mut().enumerate() {
            col.push(j);
            col.sort_unstable();
            col.dedup();
        }
        let mut cp = Vec::with_capacity(n + 1);
        let mut ci = Vec::new();
        cp.push(0);
        for col in &cols {
            ci.extend_from_slice(col);
            cp.push(ci.len());
        }

        let parent = etree(n, &cp, &ci);
        let mut counts = vec![1usize; n];
        let mut stack = vec![0usize; n];
        let mut mark = vec![NONE; n];
        for k in 0..n {
            let top = ereach(&cp, &ci, k, &parent, &mut stack, &mut mark);
            for &i in &stack[top..] {
                counts[i] += 1;
            }
        }
        let mut lp = Vec::with_capacity(n + 1);
        lp.push(0);
        for c in counts {
            lp.push(lp.last().unwrap() + c);
        }
        Ok(Self {
            n,
            perm,
            iperm,
            parent,
            cp,
            ci,
            lp,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Number of stored entries in `L`.
    pub fn factor_nnz(&self) -> usize {
        self.lp[self.n]
    }
}

/// Numeric Cholesky factor built on a shared symbolic analysis.
#[derive(Clone, Debug)]
pub struct CholeskyFactor<'s> {
    symbolic: &'s SymbolicCholesky,
    li: Vec<usize>,
    lx: Vec<f64>,
    cend: Vec<usize>,
}

impl<'s> CholeskyFactor<'s> {
    pub fn factor(symbolic: &'s SymbolicCholesky, a: &SparseMatrix) -> Result<Self, CholeskyError> {
        let n = symbolic.n;
        if a.rows() != n || a.cols() != n {
            return Err(CholeskyError::DimensionMismatch {
                expected: n,
                found: a.rows(),
            });
        }
        // scatter the permuted upper triangle into the analysed layout
        let mut cx = vec![0.0; symbolic.ci.len()];
        for r in 0..n {
            for (c, v) in a.row(r) {
                let (i, j) = (symbolic.iperm[r], symbolic.iperm[c]);
                if i > j {
                    continue;
                }
                let span = symbolic.cp[j]..symbolic.cp[j + 1];
                let pos = symbolic.ci[span.clone()]
                    .binary_search(&i)
                    .map_err(|_| CholeskyError::PatternMismatch(r, c))?;
                cx[span.start + pos] += v;
            }
        }

        let lp = &symbolic.lp;
        let mut li = vec![0usize; lp[n]];
        let mut lx = vec![0.0; lp[n]];
        let mut next: Vec<usize> = lp[..n].to_vec();
        let mut x = vec![0.0; n];
        let mut stack = vec![0usize; n];
        let mut mark = vec![NONE; n];
        for k in 0..n {
            let top = ereach(&symbolic.cp, &symbolic.ci, k, &symbolic.parent, &mut stack, &mut mark);
            for p in symbolic.cp[k]..symbolic.cp[k + 1] {
                x[symbolic.ci[p]] = cx[p];
            }
            let mut d = x[k];
            x[k] = 0.0;
            for &i in &stack[top..] {
                let lki = x[i] / lx[lp[i]];
                x[i] = 0.0;
                for p in lp[i] + 1..next[i] {
                    x[li[p]] -= lx[p] * lki;
                }
                d -= lki * lki;
                let p = next[i];
                next[i] += 1;
                li[p] = k;
                lx[p] = lki;
            }
            if !(d > 0.0) {
                return Err(CholeskyError::NotPositiveDefinite {
                    column: symbolic.perm[k],
                    pivot: d,
                });
            }
            let p = next[k];
            next[k] += 1;
            li[p] = k;
            lx[p] = d.sqrt();
        }
        Ok(Self {
            symbolic,
            li,
            lx,
            cend: next,
        })
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let s = self.symbolic;
        let n = s.n;
        assert_eq!(b.len(), n);
        let mut y: Vec<f64> = (0..n).map(|k| b[s.perm[k]]).collect();
        for j in 0..n {
            let p0 = s.lp[j];
            y[j] /= self.lx[p0];
            let yj = y[j];
            for p in p0 + 1..self.cend[j] {
                y[self.li[p]] -= self.lx[p] * yj;
            }
        }
        for j in (0..n).rev() {
            let p0 = s.lp[j];
            let mut acc = y[j];
            for p in p0 + 1..self.cend[j] {
                acc -= self.lx[p] * y[self.li[p]];
            }
            y[j] = acc / self.lx[p0];
        }
        for k in 0..n {
            b[s.perm[k]] = y[k];
        }
    }
}

fn etree(n: usize, cp: &[usize], ci: &[usize]) -> Vec<usize> {
    let mut parent = vec![NONE; n];
    let mut ancestor = vec![NONE; n];
    for k in 0..n {
        for &start in &ci[cp[k]..cp[k + 1]] {
            let mut i = start;
            while i != NONE && i < k {
                let inext = ancestor[i];
                ancestor[i] = k;
                if inext == NONE {
                    parent[i] = k;
                }
                i = inext;
            }
        }
    }
    parent
}

/// Pattern of row `k` of `L` (excluding the diagonal), returned in
/// `stack[top..]` in topological order.
fn ereach(cp: &[usize], ci: &[usize], k: usize, parent: &[usize], stack: &mut [usize], mark: &mut [usize]) -> usize {
    let n = parent.len();
    let mut top = n;
    mark[k] = k;
    for &start in &ci[cp[k]..cp[k + 1]] {
        if start > k {
            continue;
        }
        let mut i = start;
        let mut len = 0;
        while mark[i] != k {
            stack[len] = i;
            len += 1;
            mark[i] = k;
            i = parent[i];
        }
        while len > 0 {
            len -= 1;
            top -= 1;
            stack[top] = stack[len];
        }
    }
    top
}

/// Bandwidth-reducing ordering; returns `perm[new] = old`.
fn reverse_cuthill_mckee(a: &SparseMatrix) -> Vec<usize> {
    let n = a.rows();
    let neighbours: Vec<Vec<usize>> = (0..n)
        .map(|r| a.row(r).map(|(c, _)| c).filter(|&c| c != r).collect())
        .collect();
    let degree: Vec<usize> = neighbours.iter().map(Vec::len).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&v| (degree[v], v));
    for &seed in &by_degree {
        if visited[seed] {
            continue;
        }
        visited[seed] = true;
        let mut queue = VecDeque::from([seed]);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = neighbours[v].iter().copied().filter(|&w| !visited[w]).collect();
            next.sort_by_key(|&w| (degree[w], w));
            next.dedup();
            for w in next {
                if !visited[w] {
                    visited[w] = true;
                    queue.push_back(w);
                }
            }
        }
    }
    order.reverse();
    order
}
