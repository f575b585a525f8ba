//! Principal-basis fitting and closed-form reconstruction from sparse
//! readings, `Φ̃ = T_r · (C·T_r)⁻¹ · Y`.
//!
//! With pivoted-QR sensors this is the Q-DEIM benchmark; with
//! [`random_placement`] sensors it is the RAND baseline.

use crate::data::{GridShape, SnapshotSeries};
use crate::error::{Error, Result};
use crate::linalg::{thin_svd, HouseholderQr, Matrix, SINGULAR_CONDITION};
use crate::placement::Placement;
use crate::rng::SeededRng;

/// Rank-`r` principal basis of a snapshot matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct PrincipalBasis {
    /// Score basis `T_r = Ψ_r·Σ_r`, `m × r`.
    pub t_r: Matrix,
    /// Leading right singular vectors as rows, `r × M`, so that
    /// `Φ ≈ t_r · v_r`.
    pub v_r: Matrix,
    pub singular_values: Vec<f64>,
}

impl PrincipalBasis {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    /// The training reconstruction `T_r · V_rᵀ`.
    pub fn reconstruct_training(&self) -> Matrix {
        self.t_r.matmul(&self.v_r).expect("basis factors agree")
    }
}

/// Truncated SVD of the series matrix, keeping the leading `r` triplets.
pub fn fit_principal_basis(series: &SnapshotSeries, r: usize) -> Result<PrincipalBasis> {
    let phi = series.to_matrix();
    let max_rank = phi.rows().min(phi.cols());
    if r == 0 || r > max_rank {
        return Err(Error::arg(format!("rank {r} must lie in 1..={max_rank}")));
    }
    let svd = thin_svd(&phi)?;
    let s = svd.s[..r].to_vec();
    Ok(PrincipalBasis {
        t_r: svd.u.leading_columns(r).scale_columns(&s),
        v_r: svd.vt.leading_rows(r),
        singular_values: s,
    })
}

/// Reconstructs `m × K` fields from `r × K` sensor readings.
///
/// Each column is solved independently against one factorization of
/// `C·T_r`, so the output for a column does not depend on its batch.
pub fn reconstruct_linear(
    basis: &PrincipalBasis,
    placement: &Placement,
    y: &Matrix,
) -> Result<Matrix> {
    let r = basis.rank();
    if placement.len() != r {
        return Err(Error::arg(format!(
            "placement has {} sensors but the basis has rank {r}",
            placement.len()
        )));
    }
    if y.rows() != r {
        return Err(Error::Shape {
            op: "reconstruct_linear",
            expected: format!("{r} measurement rows"),
            found: format!("{}", y.rows()),
        });
    }
    if placement.grid().cells() != basis.t_r.rows() {
        return Err(Error::arg("placement grid does not match the basis"));
    }
    let ct = basis.t_r.select_rows(placement.indices())?;
    let qr = HouseholderQr::factor(&ct)?;
    if !(qr.condition() <= SINGULAR_CONDITION) {
        return Err(Error::Singular {
            condition: qr.condition(),
            advice: "the sensors do not resolve the basis; choose a different placement",
        });
    }
    let m = basis.t_r.rows();
    let mut out = Matrix::zeros(m, y.cols());
    for k in 0..y.cols() {
        let coeffs = qr.solve_column(&y.column(k));
        let field = basis.t_r.mul_vec(&coeffs)?;
        for (i, v) in field.into_iter().enumerate() {
            out[(i, k)] = v;
        }
    }
    Ok(out)
}

/// `r` distinct cells drawn uniformly without replacement from the valid
/// cells (partial Fisher-Yates over ascending valid indices, driven by
/// [`SeededRng`]).
pub fn random_placement(
    grid: GridShape,
    r: usize,
    seed: u64,
    mask: Option<&[bool]>,
) -> Result<Placement> {
    if let Some(mask) = mask {
        if mask.len() != grid.cells() {
            return Err(Error::arg("mask does not match the grid"));
        }
    }
    let mut pool: Vec<usize> = (0..grid.cells())
        .filter(|&i| mask.is_none_or(|m| m[i]))
        .collect();
    if r == 0 || r > pool.len() {
        return Err(Error::arg(format!(
            "cannot draw {r} sensors from {} valid cells",
            pool.len()
        )));
    }
    let mut rng = SeededRng::new(seed);
    for k in 0..r {
        let j = k + rng.below(pool.len() - k);
        pool.swap(k, j);
    }
    pool.truncate(r);
    Placement::new(pool, grid)
}
