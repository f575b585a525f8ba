//! Dense real-matrix kernels.
//!
//! Everything downstream is built on three routines: a thin SVD (one-sided
//! Jacobi), a greedy row-pivoted QR driven by Householder reflections, and a
//! Householder least-squares solve. Storage is row-major `f64`.
//!
//! The SVD uses the conventional factorization `A = U · diag(s) · Vᵀ`. Code
//! that talks about "the right factor V" of a snapshot matrix means the
//! rows of `vt` here.

use std::fmt;
use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// Cap on one-sided Jacobi sweeps before reporting non-convergence.
pub const SVD_MAX_SWEEPS: usize = 80;

/// Condition number above which a solve is rejected as singular.
pub const SINGULAR_CONDITION: f64 = 1e12;

/// Relative tolerance under which two pivot candidates count as tied.
const PIVOT_TIE_TOL: f64 = 1e-12;

/// A dense row-major matrix of finite `f64` values.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    /// Builds a matrix from row-major data, rejecting bad lengths and non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape {
                op: "Matrix::new",
                expected: format!("{} values for {rows}x{cols}", rows * cols),
                found: format!("{} values", data.len()),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                location: format!("row {}, column {}", pos / cols.max(1), pos % cols.max(1)),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::Shape {
                op: "Matrix::from_rows",
                expected: format!("rows of length {cols}"),
                found: format!("row of length {}", bad.len()),
            });
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix whose columns are the given equal-length vectors.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let rows = columns.first().map_or(0, |c| c.len());
        if columns.iter().any(|c| c.len() != rows) {
            return Err(Error::Shape {
                op: "Matrix::from_columns",
                expected: format!("columns of length {rows}"),
                found: "ragged columns".into(),
            });
        }
        let m = Self::from_fn(rows, columns.len(), |i, j| columns[j][i]);
        Self::new(m.rows, m.cols, m.data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access to the raw storage. Callers are responsible for keeping entries finite.
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    /// Copies the listed rows, in the listed order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Matrix> {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            if i >= self.rows {
                return Err(Error::arg(format!(
                    "row index {i} out of range for {} rows",
                    self.rows
                )));
            }
            data.extend_from_slice(self.row(i));
        }
        Ok(Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        })
    }

    /// Keeps the first `n` columns.
    pub fn leading_columns(&self, n: usize) -> Matrix {
        let n = n.min(self.cols);
        Matrix::from_fn(self.rows, n, |i, j| self[(i, j)])
    }

    /// Keeps the first `n` rows.
    pub fn leading_rows(&self, n: usize) -> Matrix {
        let n = n.min(self.rows);
        Matrix {
            rows: n,
            cols: self.cols,
            data: self.data[..n * self.cols].to_vec(),
        }
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Shape {
                op: "matmul",
                expected: format!("left columns = right rows ({})", self.cols),
                found: format!("{}", other.rows),
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// Computes `self · v` for a column vector `v`.
    pub fn mul_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::Shape {
                op: "mul_vec",
                expected: format!("vector of length {}", self.cols),
                found: format!("{}", v.len()),
            });
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    /// Multiplies column `j` by `s[j]`.
    pub fn scale_columns(&self, s: &[f64]) -> Matrix {
        Matrix::from_fn(self.rows, self.cols, |i, j| self[(i, j)] * s[j])
    }

    pub fn scaled(&self, factor: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::Shape {
                op: "sub",
                expected: format!("{:?}", self.shape()),
                found: format!("{:?}", other.shape()),
            });
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        })
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm(&self.data)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Thin singular value decomposition `a = u · diag(s) · vt`.
#[derive(Clone, Debug)]
pub struct SvdResult {
    /// Left singular vectors, `rows × k`, orthonormal columns.
    pub u: Matrix,
    /// Singular values, non-negative and non-increasing, length `k`.
    pub s: Vec<f64>,
    /// Right singular vectors as rows, `k × cols`.
    pub vt: Matrix,
}

impl SvdResult {
    /// Rebuilds `u · diag(s) · vt` from the leading `rank` triplets.
    pub fn reconstruct(&self, rank: usize) -> Matrix {
        let rank = rank.min(self.s.len());
        let us = self.u.leading_columns(rank).scale_columns(&self.s[..rank]);
        us.matmul(&self.vt.leading_rows(rank))
            .expect("svd factors have consistent shapes")
    }
}

/// Thin SVD by one-sided (Hestenes) Jacobi rotations, `k = min(rows, cols)`.
///
/// Output is deterministic: singular values are sorted descending with ties
/// kept in column order, and each left singular vector is signed so that its
/// largest-magnitude entry is non-negative. Left vectors belonging to
/// numerically zero singular values are completed to an orthonormal set.
pub fn thin_svd(a: &Matrix) -> Result<SvdResult> {
    if a.rows == 0 || a.cols == 0 {
        return Err(Error::arg("thin_svd needs a non-empty matrix"));
    }
    if let Some(pos) = a.data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            location: format!("thin_svd input entry {pos}"),
        });
    }

    let (u, s, vt) = if a.rows >= a.cols {
        let (w, s, v) = jacobi_tall(a)?;
        (w, s, v.transpose())
    } else {
        // aᵀ = W S Vᵀ  ⇒  a = V S Wᵀ
        let (w, s, v) = jacobi_tall(&a.transpose())?;
        (v, s, w.transpose())
    };
    let mut out = SvdResult { u, s, vt };
    fix_signs(&mut out);
    Ok(out)
}

/// One-sided Jacobi on a matrix with `rows >= cols`. Returns (U, s, V) with
/// `a = U diag(s) Vᵀ`, U `rows × cols` orthonormal, V `cols × cols`.
fn jacobi_tall(a: &Matrix) -> Result<(Matrix, Vec<f64>, Matrix)> {
    let (m, n) = a.shape();
    // column-major working copies
    let mut w: Vec<Vec<f64>> = (0..n).map(|j| a.column(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let tol = f64::EPSILON * (m as f64);
    // columns shorter than this are roundoff and are left alone
    let frob = norm(&a.data);
    let zero_sq = ((m.max(n) as f64) * f64::EPSILON * frob).powi(2);

    let mut converged = n < 2;
    for _ in 0..SVD_MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let alpha = dot(&w[p], &w[p]);
                let beta = dot(&w[q], &w[q]);
                let gamma = dot(&w[p], &w[q]);
                if gamma == 0.0
                    || alpha.min(beta) <= zero_sq
                    || gamma.abs() <= tol * (alpha * beta).sqrt()
                {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut w, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
        }
    }
    if !converged {
        return Err(Error::NoConvergence {
            algorithm: "one-sided Jacobi SVD",
            cap: SVD_MAX_SWEEPS,
        });
    }

    let norms: Vec<f64> = w.iter().map(|c| norm(c)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]).then(x.cmp(&y)));

    let s_max = norms[order[0]];
    let negligible = s_max * (m.max(n) as f64) * f64::EPSILON;
    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut deficient = Vec::new();
    let mut s = Vec::with_capacity(n);
    for (slot, &j) in order.iter().enumerate() {
        s.push(norms[j]);
        if norms[j] > negligible && norms[j] > 0.0 {
            u_cols.push(w[j].iter().map(|x| x / norms[j]).collect());
        } else {
            u_cols.push(vec![0.0; m]);
            deficient.push(slot);
        }
    }
    complete_orthonormal(&mut u_cols, &deficient);

    let v_sorted: Vec<Vec<f64>> = order.iter().map(|&j| v[j].clone()).collect();
    Ok((
        Matrix::from_columns(&u_cols)?,
        s,
        Matrix::from_columns(&v_sorted)?,
    ))
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (left, right) = cols.split_at_mut(q);
    let (cp, cq) = (&mut left[p], &mut right[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Fills the listed slots with unit vectors orthogonal to every other column,
/// drawn from the canonical basis by modified Gram-Schmidt.
fn complete_orthonormal(cols: &mut [Vec<f64>], slots: &[usize]) {
    if slots.is_empty() {
        return;
    }
    let m = cols[0].len();
    let mut filled: Vec<bool> = vec![true; cols.len()];
    for &s in slots {
        filled[s] = false;
    }
    let mut candidate = 0;
    for &slot in slots {
        while candidate < m {
            let mut e = vec![0.0; m];
            e[candidate] = 1.0;
            candidate += 1;
            for _ in 0..2 {
                for (k, c) in cols.iter().enumerate() {
                    if filled[k] {
                        let proj = dot(&e, c);
                        for (x, y) in e.iter_mut().zip(c) {
                            *x -= proj * y;
                        }
                    }
                }
            }
            let len = norm(&e);
            if len > 0.5 {
                cols[slot] = e.iter().map(|x| x / len).collect();
                filled[slot] = true;
                break;
            }
        }
    }
}

fn fix_signs(svd: &mut SvdResult) {
    let k = svd.s.len();
    for j in 0..k {
        let mut best = 0;
        let mut best_abs = -1.0;
        for i in 0..svd.u.rows {
            let v = svd.u[(i, j)].abs();
            if v > best_abs {
                best_abs = v;
                best = i;
            }
        }
        if svd.u[(best, j)] < 0.0 {
            for i in 0..svd.u.rows {
                svd.u[(i, j)] = -svd.u[(i, j)];
            }
            for c in 0..svd.vt.cols {
                svd.vt[(j, c)] = -svd.vt[(j, c)];
            }
        }
    }
}

/// Ratio of the largest to the smallest singular value (infinite when singular).
pub fn condition_number(a: &Matrix) -> Result<f64> {
    let svd = thin_svd(a)?;
    let s_max = svd.s[0];
    let s_min = *svd.s.last().expect("non-empty");
    if s_min == 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(s_max / s_min)
    }
}

/// Greedy row selection by Householder QR with column pivoting on `tᵀ`.
#[derive(Clone, Debug)]
pub struct PivotedQrResult {
    /// Selected row indices of `t`, in selection order.
    pub pivots: Vec<usize>,
    /// Orthogonal factor, `cols × cols`.
    pub q: Matrix,
    /// Upper-trapezoidal factor, `cols × rows`, with columns ordered as the
    /// pivots followed by the unselected rows in ascending index order.
    pub r_factor: Matrix,
}

impl PivotedQrResult {
    /// Column order used by `r_factor`.
    pub fn permutation(&self) -> Vec<usize> {
        let rows = self.r_factor.cols();
        let mut chosen = vec![false; rows];
        for &p in &self.pivots {
            chosen[p] = true;
        }
        let mut perm = self.pivots.clone();
        perm.extend((0..rows).filter(|&i| !chosen[i]));
        perm
    }
}

/// Selects `r` rows of `t` greedily: at each step the row with the largest
/// residual norm, after Householder deflation against the rows already
/// chosen, is taken. Ties go to the lowest row index.
pub fn qr_row_pivot(t: &Matrix, r: usize) -> Result<PivotedQrResult> {
    let (rows, n) = t.shape();
    if r == 0 {
        return Err(Error::arg("qr_row_pivot needs r >= 1"));
    }
    if r > rows {
        return Err(Error::arg(format!(
            "cannot select {r} pivots from {rows} rows"
        )));
    }

    // each row of t is one candidate column of tᵀ
    let mut cand: Vec<Vec<f64>> = (0..rows).map(|i| t.row(i).to_vec()).collect();
    let mut selected = vec![false; rows];
    let mut pivots = Vec::with_capacity(r);
    let mut reflectors: Vec<(usize, Vec<f64>)> = Vec::new();

    for k in 0..r {
        let mut best: Option<(usize, f64)> = None;
        for (j, col) in cand.iter().enumerate() {
            if selected[j] {
                continue;
            }
            let res = if k < n { norm(&col[k..]) } else { 0.0 };
            match best {
                Some((_, b)) if res <= b * (1.0 + PIVOT_TIE_TOL) => {}
                _ => best = Some((j, res)),
            }
        }
        let (p, res) = best.expect("r <= rows leaves a candidate");
        selected[p] = true;
        pivots.push(p);

        if k < n && res > 0.0 {
            let x = &cand[p][k..];
            let alpha = if x[0] >= 0.0 { -res } else { res };
            let mut v = x.to_vec();
            v[0] -= alpha;
            let vv = dot(&v, &v);
            if vv > 0.0 {
                for col in cand.iter_mut() {
                    apply_reflector(&v, vv, &mut col[k..]);
                }
                cand[p][k] = alpha;
                for x in &mut cand[p][k + 1..] {
                    *x = 0.0;
                }
                reflectors.push((k, v));
            }
        }
    }

    let mut q = Matrix::identity(n);
    let mut q_cols: Vec<Vec<f64>> = (0..n).map(|j| q.column(j)).collect();
    for (k, v) in reflectors.iter().rev() {
        let vv = dot(v, v);
        for col in q_cols.iter_mut() {
            apply_reflector(v, vv, &mut col[*k..]);
        }
    }
    q = Matrix::from_columns(&q_cols)?;

    let mut result = PivotedQrResult {
        pivots,
        q,
        r_factor: Matrix::zeros(n, rows),
    };
    let perm = result.permutation();
    result.r_factor = Matrix::from_fn(n, rows, |i, j| cand[perm[j]][i]);
    Ok(result)
}

/// x ← (I − 2 v vᵀ / vᵀv) x
fn apply_reflector(v: &[f64], vv: f64, x: &mut [f64]) {
    let scale = 2.0 * dot(v, x) / vv;
    if scale != 0.0 {
        for (xi, vi) in x.iter_mut().zip(v) {
            *xi -= scale * vi;
        }
    }
}

/// Householder QR of a tall matrix, reusable across right-hand sides.
#[derive(Clone, Debug)]
pub(crate) struct HouseholderQr {
    cols: usize,
    /// Reflector for step k acts on entries k.. of a column.
    reflectors: Vec<Option<(Vec<f64>, f64)>>,
    /// Upper triangle, `cols × cols`.
    r: Matrix,
    condition: f64,
}

impl HouseholderQr {
    pub(crate) fn factor(a: &Matrix) -> Result<Self> {
        let (rows, cols) = a.shape();
        if rows < cols {
            return Err(Error::arg(format!(
                "least squares needs rows >= cols, got {rows}x{cols}"
            )));
        }
        if cols == 0 {
            return Err(Error::arg("least squares needs at least one column"));
        }
        let condition = condition_number(a)?;
        let mut work: Vec<Vec<f64>> = (0..cols).map(|j| a.column(j)).collect();
        let mut reflectors = Vec::with_capacity(cols);
        for k in 0..cols {
            let x = &work[k][k..];
            let len = norm(x);
            if len == 0.0 {
                reflectors.push(None);
                continue;
            }
            let alpha = if x[0] >= 0.0 { -len } else { len };
            let mut v = x.to_vec();
            v[0] -= alpha;
            let vv = dot(&v, &v);
            for col in work.iter_mut().skip(k) {
                apply_reflector(&v, vv, &mut col[k..]);
            }
            reflectors.push(Some((v, vv)));
        }
        let r = Matrix::from_fn(cols, cols, |i, j| if i <= j { work[j][i] } else { 0.0 });
        Ok(Self {
            cols,
            reflectors,
            r,
            condition,
        })
    }

    pub(crate) fn condition(&self) -> f64 {
        self.condition
    }

    /// Least-squares solution for one right-hand side.
    pub(crate) fn solve_column(&self, b: &[f64]) -> Vec<f64> {
        let mut y = b.to_vec();
        for (k, refl) in self.reflectors.iter().enumerate() {
            if let Some((v, vv)) = refl {
                apply_reflector(v, *vv, &mut y[k..]);
            }
        }
        let n = self.cols;
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut acc = y[i];
            for j in i + 1..n {
                acc -= self.r[(i, j)] * x[j];
            }
            x[i] = acc / self.r[(i, i)];
        }
        x
    }
}

/// Solves `min ‖a·x − b‖_F` column by column with Householder QR.
///
/// Rejects systems whose condition number exceeds [`SINGULAR_CONDITION`].
pub fn solve_least_squares(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows != b.rows {
        return Err(Error::Shape {
            op: "solve_least_squares",
            expected: format!("b with {} rows", a.rows),
            found: format!("{} rows", b.rows),
        });
    }
    let qr = HouseholderQr::factor(a)?;
    if !(qr.condition() <= SINGULAR_CONDITION) {
        return Err(Error::Singular {
            condition: qr.condition(),
            advice: "the system matrix is rank deficient",
        });
    }
    let columns: Vec<Vec<f64>> = (0..b.cols)
        .map(|j| qr.solve_column(&b.column(j)))
        .collect();
    if columns.is_empty() {
        return Ok(Matrix::zeros(a.cols, 0));
    }
    Matrix::from_columns(&columns)
}
