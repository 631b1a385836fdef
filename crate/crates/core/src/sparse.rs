//! Minimal sparse symmetric kernel: CSR storage, incomplete-Cholesky
//! preconditioned conjugate gradients, and Matrix Market export.
//!
//! All loops are serial with a fixed traversal order so repeated runs produce
//! identical floating-point results.

use crate::error::{Error, Result};
use std::io::Write;

/// Coordinate-format accumulator for symmetric matrices.
#[derive(Debug, Clone)]
pub struct Triplets {
    pub n: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl Triplets {
    pub fn new(n: usize) -> Self {
        Self { n, entries: Vec::new() }
    }

    pub fn push(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.n && j < self.n);
        if v != 0.0 {
            self.entries.push((i, j, v));
        }
    }

    /// Build CSR, summing duplicates. Entries are sorted by (row, col, value)
    /// first, so the result does not depend on insertion order.
    pub fn to_csr(mut self) -> CsrMatrix {
        self.entries
            .sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)).then(a.2.total_cmp(&b.2)));
        let mut counts = vec![0usize; self.n];
        let mut col = Vec::new();
        let mut val = Vec::new();
        let mut k = 0;
        while k < self.entries.len() {
            let (i, j, mut v) = self.entries[k];
            let mut k2 = k + 1;
            while k2 < self.entries.len() && self.entries[k2].0 == i && self.entries[k2].1 == j {
                v += self.entries[k2].2;
                k2 += 1;
            }
            counts[i] += 1;
            col.push(j);
            val.push(v);
            k = k2;
        }
        let mut row_ptr = vec![0usize; self.n + 1];
        for i in 0..self.n {
            row_ptr[i + 1] = row_ptr[i] + counts[i];
        }
        CsrMatrix { n: self.n, row_ptr, col, val }
    }
}

/// Compressed sparse row square matrix.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col: Vec<usize>,
    pub val: Vec<f64>,
}

impl CsrMatrix {
    pub fn nnz(&self) -> usize {
        self.col.len()
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(y.len(), self.n);
        for i in 0..self.n {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.val[k] * x[self.col[k]];
            }
            y[i] = acc;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                if self.col[k] == i {
                    d[i] = self.val[k];
                }
            }
        }
        d
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        for k in self.row_ptr[i]..self.row_ptr[i + 1] {
            if self.col[k] == j {
                return self.val[k];
            }
        }
        0.0
    }

    /// Max relative asymmetry |a_ij - a_ji| / max|a|.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.val.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col[k];
                if j > i {
                    worst = worst.max((self.val[k] - self.get(j, i)).abs());
                }
            }
        }
        worst / scale
    }

    /// Copy with `shift` added to the diagonal.
    pub fn shifted(&self, shift: f64) -> CsrMatrix {
        let mut out = self.clone();
        for i in 0..out.n {
            let mut seen = false;
            for k in out.row_ptr[i]..out.row_ptr[i + 1] {
                if out.col[k] == i {
                    out.val[k] += shift;
                    seen = true;
                }
            }
            debug_assert!(seen, "shifted() requires an explicit diagonal");
        }
        out
    }

    /// Dense copy (oracle-scale problems only).
    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                m[(i, self.col[k])] = self.val[k];
            }
        }
        m
    }

    /// Matrix Market coordinate format, symmetric storage (lower triangle),
    /// 1-based indices.
    pub fn write_matrix_market<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate real symmetric")?;
        let mut lower = Vec::new();
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                if self.col[k] <= i {
                    lower.push((i + 1, self.col[k] + 1, self.val[k]));
                }
            }
        }
        writeln!(w, "{} {} {}", self.n, self.n, lower.len())?;
        for (i, j, v) in lower {
            writeln!(w, "{} {} {:e}", i, j, v)?;
        }
        Ok(())
    }
}

/// Zero-fill incomplete Cholesky of a symmetric positive definite CSR matrix.
///
/// Falls back to a progressively boosted diagonal (Manteuffel shift) when a
/// pivot fails, which handles the mildly indefinite patterns produced by
/// obtuse triangles.
pub struct IncompleteCholesky {
    n: usize,
    row_ptr: Vec<usize>,
    col: Vec<usize>,
    val: Vec<f64>, // L, lower triangle, diagonal stored explicitly
}

impl IncompleteCholesky {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let mut boost = 0.0;
        let diag_scale: f64 =
            a.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        for _ in 0..6 {
            match Self::try_factor(a, boost) {
                Some(f) => return Ok(f),
                None => {
                    boost = if boost == 0.0 { 1e-8 * diag_scale } else { boost * 100.0 };
                }
            }
        }
        Err(Error::Solver {
            msg: "incomplete Cholesky failed even with boosted diagonal".into(),
            best_residuals: vec![],
        })
    }

    fn try_factor(a: &CsrMatrix, boost: f64) -> Option<Self> {
        let n = a.n;
        // Lower-triangle pattern of A.
        let mut row_ptr = vec![0usize; n + 1];
        for i in 0..n {
            let cnt = (a.row_ptr[i]..a.row_ptr[i + 1]).filter(|&k| a.col[k] <= i).count();
            row_ptr[i + 1] = row_ptr[i] + cnt;
        }
        let nnz = row_ptr[n];
        let mut col = vec![0usize; nnz];
        let mut val = vec![0.0f64; nnz];
        for i in 0..n {
            let mut at = row_ptr[i];
            for k in a.row_ptr[i]..a.row_ptr[i + 1] {
                if a.col[k] <= i {
                    col[at] = a.col[k];
                    val[at] = a.val[k] + if a.col[k] == i { boost } else { 0.0 };
                    at += 1;
                }
            }
        }
        // Up-looking IC(0). For each row i, update with previously
        // factored rows restricted to the existing pattern.
        let mut diag_pos = vec![usize::MAX; n];
        for i in 0..n {
            for k in row_ptr[i]..row_ptr[i + 1] {
                if col[k] == i {
                    diag_pos[i] = k;
                }
            }
            if diag_pos[i] == usize::MAX {
                return None;
            }
        }
        // rows of L as we build them, needed for dot products on the pattern
        for i in 0..n {
            let (start, end) = (row_ptr[i], row_ptr[i + 1]);
            for kk in start..end {
                let j = col[kk];
                // l_ij = (a_ij - sum_{p<j} l_ip l_jp) / l_jj   (j < i)
                // l_ii = sqrt(a_ii - sum_{p<i} l_ip^2)
                let mut s = val[kk];
                // intersect row i (cols < j) with row j (cols < j)
                let mut pi = start;
                let mut pj = row_ptr[j];
                let jend = diag_pos[j];
                while pi < kk && pj < jend {
                    match col[pi].cmp(&col[pj]) {
                        std::cmp::Ordering::Less => pi += 1,
                        std::cmp::Ordering::Greater => pj += 1,
                        std::cmp::Ordering::Equal => {
                            s -= val[pi] * val[pj];
                            pi += 1;
                            pj += 1;
                        }
                    }
                }
                if j == i {
                    if s <= 0.0 {
                        return None;
                    }
                    val[kk] = s.sqrt();
                } else {
                    val[kk] = s / val[diag_pos[j]];
                }
            }
        }
        Some(Self { n, row_ptr, col, val })
    }

    /// Solve L L^T x = b.
    pub fn solve(&self, b: &[f64], x: &mut [f64]) {
        let n = self.n;
        debug_assert_eq!(b.len(), n);
        // forward: L y = b
        for i in 0..n {
            let mut s = b[i];
            let mut dpos = 0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col[k];
                if j < i {
                    s -= self.val[k] * x[j];
                } else {
                    dpos = k;
                }
            }
            x[i] = s / self.val[dpos];
        }
        // backward: L^T x = y  (column sweep over L rows in reverse)
        for i in (0..n).rev() {
            let mut dpos = 0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                if self.col[k] == i {
                    dpos = k;
                }
            }
            let xi = x[i] / self.val[dpos];
            x[i] = xi;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col[k];
                if j < i {
                    x[j] -= self.val[k] * xi;
                }
            }
        }
    }
}

/// Preconditioned conjugate gradient for SPD systems.
///
/// Returns the iteration count. Errors on breakdown (non-SPD curvature) or
/// when the relative residual fails to reach `tol` within `max_iter`.
pub fn pcg(
    a: &CsrMatrix,
    precond: &IncompleteCholesky,
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> Result<usize> {
    let n = a.n;
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(0);
    }
    let mut r = b.to_vec();
    let mut tmp = vec![0.0; n];
    if x.iter().any(|&v| v != 0.0) {
        a.matvec(x, &mut tmp);
        for i in 0..n {
            r[i] -= tmp[i];
        }
    }
    let mut z = vec![0.0; n];
    precond.solve(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for it in 0..max_iter {
        if norm2(&r) <= tol * bnorm {
            return Ok(it);
        }
        a.matvec(&p, &mut tmp);
        let pap = dot(&p, &tmp);
        if pap <= 0.0 {
            return Err(Error::Solver {
                msg: format!("PCG breakdown: non-positive curvature {pap:e}"),
                best_residuals: vec![norm2(&r) / bnorm],
            });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * tmp[i];
        }
        precond.solve(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    if norm2(&r) <= tol * bnorm {
        return Ok(max_iter);
    }
    Err(Error::Solver {
        msg: format!("PCG did not reach tol {tol:e} in {max_iter} iterations"),
        best_residuals: vec![norm2(&r) / bnorm],
    })
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
