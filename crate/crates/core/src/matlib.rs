//! Dense linear algebra and rank-revealing subspace helpers.
//!
//! Everything here works on `DMatrix<f64>`. Subspaces are carried as
//! orthonormal bases; the empty subspace is a basis with zero columns.

use nalgebra::{Complex, DMatrix, DVector, Schur};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;
pub type C64 = Complex<f64>;

/// Default relative rank threshold.
pub const DEFAULT_TOL: f64 = 1e-10;

/// Builds a matrix from row-major data.
pub fn mat(rows: usize, cols: usize, data: &[f64]) -> Matrix {
    assert_eq!(
        data.len(),
        rows * cols,
        "mat: {}x{} needs {} entries",
        rows,
        cols,
        rows * cols
    );
    Matrix::from_row_slice(rows, cols, data)
}

pub fn vector(data: &[f64]) -> Vector {
    Vector::from_column_slice(data)
}

pub fn col(data: &[f64]) -> Matrix {
    Matrix::from_column_slice(data.len(), 1, data)
}

pub fn row(data: &[f64]) -> Matrix {
    Matrix::from_row_slice(1, data.len(), data)
}

pub fn eye(n: usize) -> Matrix {
    Matrix::identity(n, n)
}

pub fn zeros(r: usize, c: usize) -> Matrix {
    Matrix::zeros(r, c)
}

pub fn diag(d: &[f64]) -> Matrix {
    Matrix::from_diagonal(&vector(d))
}

/// Stacks blocks vertically. All blocks must share a column count.
pub fn vstack(blocks: &[&Matrix]) -> Matrix {
    let cols = blocks.first().map(|b| b.ncols()).unwrap_or(0);
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = Matrix::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        assert_eq!(b.ncols(), cols, "vstack: column count mismatch");
        out.view_mut((r, 0), (b.nrows(), cols)).copy_from(*b);
        r += b.nrows();
    }
    out
}

/// Stacks blocks horizontally. All blocks must share a row count.
pub fn hstack(blocks: &[&Matrix]) -> Matrix {
    let rows = blocks.first().map(|b| b.nrows()).unwrap_or(0);
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Matrix::zeros(rows, cols);
    let mut c = 0;
    for b in blocks {
        assert_eq!(b.nrows(), rows, "hstack: row count mismatch");
        out.view_mut((0, c), (rows, b.ncols())).copy_from(*b);
        c += b.ncols();
    }
    out
}

pub fn block_diag(blocks: &[&Matrix]) -> Matrix {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Matrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(*b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

pub fn check_finite(m: &Matrix, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

pub fn max_abs(m: &Matrix) -> f64 {
    m.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
}

/// Singular values in descending order.
pub fn singular_values(m: &Matrix) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    // nalgebra's SVD never terminates on non-finite input.
    if m.iter().any(|v| !v.is_finite()) {
        return vec![f64::NAN; m.nrows().min(m.ncols())];
    }
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Spectral norm.
pub fn norm2(m: &Matrix) -> f64 {
    singular_values(m).first().copied().unwrap_or(0.0)
}

/// Rank decision together with the singular values that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankInfo {
    pub rank: usize,
    pub sigma: Vec<f64>,
    pub threshold: f64,
    /// σ_r / σ_{r+1}; infinite when there is no σ_{r+1} or it is exactly zero.
    pub gap: f64,
}

fn threshold(sigma_max: f64, rows: usize, cols: usize, tol: f64) -> f64 {
    tol * sigma_max * rows.max(cols) as f64
}

pub fn rank_info(m: &Matrix, tol: f64) -> RankInfo {
    let sigma = singular_values(m);
    let smax = sigma.first().copied().unwrap_or(0.0);
    if smax == 0.0 {
        return RankInfo {
            rank: 0,
            sigma,
            threshold: 0.0,
            gap: f64::INFINITY,
        };
    }
    let thr = threshold(smax, m.nrows(), m.ncols(), tol);
    let rank = sigma.iter().filter(|&&s| s > thr).count();
    let gap = match (rank.checked_sub(1).map(|i| sigma[i]), sigma.get(rank)) {
        (Some(a), Some(&b)) if b > 0.0 => a / b,
        (None, Some(_)) => 0.0,
        _ => f64::INFINITY,
    };
    RankInfo {
        rank,
        sigma,
        threshold: thr,
        gap,
    }
}

/// Number of singular values above `tol·σ_max·max(rows, cols)`.
pub fn numerical_rank(m: &Matrix, tol: f64) -> usize {
    rank_info(m, tol).rank
}

/// Orthonormal basis of a subspace of ℝ^ambient_dim.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceBasis {
    pub basis: Matrix,
    pub ambient_dim: usize,
    pub tol: f64,
}

impl SubspaceBasis {
    pub fn empty(ambient_dim: usize, tol: f64) -> Self {
        SubspaceBasis {
            basis: Matrix::zeros(ambient_dim, 0),
            ambient_dim,
            tol,
        }
    }

    pub fn full(ambient_dim: usize, tol: f64) -> Self {
        SubspaceBasis {
            basis: eye(ambient_dim),
            ambient_dim,
            tol,
        }
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.dim() == 0
    }

    /// Orthogonal projector onto the subspace.
    pub fn projector(&self) -> Matrix {
        &self.basis * self.basis.transpose()
    }

    pub fn complement(&self) -> SubspaceBasis {
        if self.is_empty() {
            return SubspaceBasis::full(self.ambient_dim, self.tol);
        }
        left_null_basis(&self.basis, self.tol)
    }

    /// Distance of `v` from the subspace.
    pub fn residual(&self, v: &Vector) -> f64 {
        (v - &self.basis * (self.basis.transpose() * v)).norm()
    }
}

// Complete right singular basis (c×c) with σ padded by zeros to length c and
// sorted descending. Wide inputs are padded with zero rows first.
fn full_right(m: &Matrix) -> (Vec<f64>, Matrix) {
    let (r, c) = m.shape();
    let p = if r < c {
        let mut p = Matrix::zeros(c, c);
        p.view_mut((0, 0), (r, c)).copy_from(m);
        p
    } else {
        m.clone()
    };
    let svd = p.svd(false, true);
    let v = svd.v_t.expect("svd: V requested").transpose();
    let mut idx: Vec<usize> = (0..c).collect();
    idx.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let sigma = idx.iter().map(|&i| svd.singular_values[i]).collect();
    (sigma, Matrix::from_fn(c, c, |i, j| v[(i, idx[j])]))
}

// Complete left singular basis (r×r), the transpose analogue of `full_right`.
fn full_left(m: &Matrix) -> (Vec<f64>, Matrix) {
    full_right(&m.transpose())
}

/// Orthonormal basis of the right null space.
pub fn null_basis(m: &Matrix, tol: f64) -> SubspaceBasis {
    let (r, c) = m.shape();
    if c == 0 {
        return SubspaceBasis::empty(0, tol);
    }
    if r == 0 {
        return SubspaceBasis::full(c, tol);
    }
    let rank = numerical_rank(m, tol);
    let (_, v) = full_right(m);
    SubspaceBasis {
        basis: v.view((0, rank), (c, c - rank)).into_owned(),
        ambient_dim: c,
        tol,
    }
}

/// Orthonormal basis of the column space.
pub fn range_basis(m: &Matrix, tol: f64) -> SubspaceBasis {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return SubspaceBasis::empty(r, tol);
    }
    let rank = numerical_rank(m, tol);
    let (_, u) = full_left(m);
    SubspaceBasis {
        basis: u.view((0, 0), (r, rank)).into_owned(),
        ambient_dim: r,
        tol,
    }
}

/// Orthonormal basis of null(mᵀ).
pub fn left_null_basis(m: &Matrix, tol: f64) -> SubspaceBasis {
    let (r, c) = m.shape();
    if r == 0 {
        return SubspaceBasis::empty(0, tol);
    }
    if c == 0 {
        return SubspaceBasis::full(r, tol);
    }
    let rank = numerical_rank(m, tol);
    let (_, u) = full_left(m);
    SubspaceBasis {
        basis: u.view((0, rank), (r, r - rank)).into_owned(),
        ambient_dim: r,
        tol,
    }
}

/// Largest sine of the principal angles between two subspaces of equal
/// dimension.
pub fn max_principal_sine(u: &SubspaceBasis, v: &SubspaceBasis) -> f64 {
    if u.is_empty() || v.is_empty() {
        return 0.0;
    }
    let resid = &v.basis - &u.basis * (u.basis.transpose() * &v.basis);
    norm2(&resid)
}

pub fn subspace_equal(u: &SubspaceBasis, v: &SubspaceBasis, tol: f64) -> Result<bool> {
    if u.ambient_dim != v.ambient_dim {
        return Err(Error::dim("subspace_equal", u.ambient_dim, v.ambient_dim));
    }
    if u.dim() != v.dim() {
        return Ok(false);
    }
    Ok(max_principal_sine(u, v) <= tol)
}

/// Threshold on singular values of the stacked complement projectors below
/// which a direction counts as shared.
pub const INTERSECTION_TOL: f64 = 1e-8;

/// Orthonormal basis of u ∩ v.
pub fn subspace_intersection(u: &SubspaceBasis, v: &SubspaceBasis) -> Result<SubspaceBasis> {
    if u.ambient_dim != v.ambient_dim {
        return Err(Error::dim("subspace_intersection", u.ambient_dim, v.ambient_dim));
    }
    let n = u.ambient_dim;
    let tol = u.tol.max(v.tol);
    if u.is_empty() || v.is_empty() || n == 0 {
        return Ok(SubspaceBasis::empty(n, tol));
    }
    let pu = eye(n) - u.projector();
    let pv = eye(n) - v.projector();
    let stacked = vstack(&[&pu, &pv]);
    let (sigma, vv) = full_right(&stacked);
    let keep: Vec<usize> = (0..n).filter(|&i| sigma[i] <= INTERSECTION_TOL).collect();
    let basis = Matrix::from_fn(n, keep.len(), |i, j| vv[(i, keep[j])]);
    Ok(SubspaceBasis {
        basis,
        ambient_dim: n,
        tol,
    })
}

// Diagonal similarity by powers of two that roughly equalizes row and column
// norms (Parlett and Reinsch). Exact in floating point.
fn balance(a: &Matrix) -> Matrix {
    let n = a.nrows();
    let mut m = a.clone();
    let radix = 2.0_f64;
    let mut converged = false;
    let mut sweeps = 0;
    while !converged && sweeps < 100 {
        converged = true;
        sweeps += 1;
        for i in 0..n {
            let mut c = 0.0;
            let mut r = 0.0;
            for j in 0..n {
                if j != i {
                    c += m[(j, i)].abs();
                    r += m[(i, j)].abs();
                }
            }
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let s = c + r;
            let mut f = 1.0;
            let mut cc = c;
            let rr = r;
            while cc < rr / radix {
                cc *= radix;
                f *= radix;
            }
            while cc >= rr * radix {
                cc /= radix;
                f /= radix;
            }
            if (cc + rr / f) < 0.95 * s {
                converged = false;
                for j in 0..n {
                    m[(i, j)] /= f;
                }
                for j in 0..n {
                    m[(j, i)] *= f;
                }
            }
        }
    }
    m
}

/// All eigenvalues of a square matrix (balanced real Schur iteration).
pub fn eigenvalues(a: &Matrix) -> Result<Vec<C64>> {
    if a.nrows() != a.ncols() {
        return Err(Error::NotSquare {
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    check_finite(a, "eigenvalue input")?;
    let n = a.nrows();
    if n == 0 {
        return Ok(Vec::new());
    }
    if n == 1 {
        return Ok(vec![C64::new(a[(0, 0)], 0.0)]);
    }
    let b = balance(a);
    let schur = Schur::try_new(b, f64::EPSILON, 10_000 * n)
        .ok_or_else(|| Error::Invalid("Schur iteration did not converge".into()))?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

/// Groups eigenvalues closer than `tol·(1+|λ|)` and returns each group's mean.
/// Repeated eigenvalues of a defective matrix come back perturbed by roughly
/// ε^(1/k); grouping them keeps rank tests from seeing spurious distinct modes.
pub fn cluster_eigenvalues(eigs: &[C64], tol: f64) -> Vec<C64> {
    let mut groups: Vec<Vec<C64>> = Vec::new();
    for &l in eigs {
        let hit = groups.iter_mut().find(|g| {
            g.iter()
                .any(|&m| (m - l).norm() <= tol * (1.0 + l.norm().max(m.norm())))
        });
        match hit {
            Some(g) => g.push(l),
            None => groups.push(vec![l]),
        }
    }
    // Merge groups that became connected through later members.
    let mut merged = true;
    while merged {
        merged = false;
        'outer: for i in 0..groups.len() {
            for j in (i + 1)..groups.len() {
                let close = groups[i].iter().any(|&a| {
                    groups[j]
                        .iter()
                        .any(|&b| (a - b).norm() <= tol * (1.0 + a.norm().max(b.norm())))
                });
                if close {
                    let g = groups.remove(j);
                    groups[i].extend(g);
                    merged = true;
                    break 'outer;
                }
            }
        }
    }
    groups
        .into_iter()
        .map(|g| {
            let k = g.len() as f64;
            let s: C64 = g.iter().sum();
            s / k
        })
        .collect()
}

/// Least-squares solution of `a·x = b` with minimal norm.
pub fn solve_linear(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.nrows() != b.nrows() {
        return Err(Error::dim("solve_linear rows", a.nrows(), b.nrows()));
    }
    let (r, c) = a.shape();
    if r == 0 || c == 0 {
        return Ok(Matrix::zeros(c, b.ncols()));
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.iter().fold(0.0_f64, |m, v| m.max(*v));
    if smax == 0.0 {
        return Ok(Matrix::zeros(c, b.ncols()));
    }
    let eps = threshold(smax, r, c, DEFAULT_TOL);
    svd.solve(b, eps).map_err(|e| Error::Invalid(e.to_string()))
}

pub fn solve_vec(a: &Matrix, b: &Vector) -> Result<Vector> {
    let x = solve_linear(a, &Matrix::from_column_slice(b.len(), 1, b.as_slice()))?;
    Ok(x.column(0).into_owned())
}

/// Moore-Penrose pseudo-inverse.
pub fn pinv(a: &Matrix) -> Matrix {
    solve_linear(a, &eye(a.nrows())).expect("pinv: shapes agree by construction")
}

/// Largest real part in the spectrum, or -∞ for an empty matrix.
pub fn spectral_abscissa(a: &Matrix) -> Result<f64> {
    Ok(eigenvalues(a)?.iter().fold(f64::NEG_INFINITY, |m, l| m.max(l.re)))
}
