//! Reconstruction metrics: MSE@N, VAR@N and relative improvement.
//!
//! Both metrics take `m × M` matrices (cells × snapshots). Masked cells are
//! dropped from every sum and from the divisors.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub n_sensors: usize,
    pub mse: f64,
    pub var: f64,
    /// Number of cells that entered the metrics.
    pub effective_cells: usize,
    /// Temporal-mean squared error per cell (0 for masked cells).
    pub per_cell_mse: Vec<f64>,
    /// Squared deviation of each cell's mean squared error from `mse`.
    pub per_cell_var: Vec<f64>,
}

fn check_shapes(truth: &Matrix, recon: &Matrix, mask: Option<&[bool]>) -> Result<()> {
    if truth.shape() != recon.shape() {
        return Err(Error::Shape {
            op: "metrics",
            expected: format!("{:?}", truth.shape()),
            found: format!("{:?}", recon.shape()),
        });
    }
    if truth.cols() == 0 || truth.rows() == 0 {
        return Err(Error::arg("metrics need at least one cell and one snapshot"));
    }
    if let Some(mask) = mask {
        if mask.len() != truth.rows() {
            return Err(Error::arg("mask length differs from the number of cells"));
        }
        if !mask.iter().any(|&v| v) {
            return Err(Error::arg("mask leaves no valid cells"));
        }
    }
    Ok(())
}

fn cell_mean_sq(truth: &Matrix, recon: &Matrix, i: usize) -> f64 {
    let sum: f64 = truth
        .row(i)
        .iter()
        .zip(recon.row(i))
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    sum / truth.cols() as f64
}

/// Full report, with optional cell mask (`true` = valid).
pub fn evaluate(
    truth: &Matrix,
    recon: &Matrix,
    mask: Option<&[bool]>,
    n_sensors: usize,
) -> Result<EvalReport> {
    check_shapes(truth, recon, mask)?;
    let valid = |i: usize| mask.is_none_or(|m| m[i]);
    let m = truth.rows();
    let per_cell_mse: Vec<f64> = (0..m)
        .map(|i| if valid(i) { cell_mean_sq(truth, recon, i) } else { 0.0 })
        .collect();
    let effective = (0..m).filter(|&i| valid(i)).count();
    let mse = (0..m).filter(|&i| valid(i)).map(|i| per_cell_mse[i]).sum::<f64>() / effective as f64;
    let per_cell_var: Vec<f64> = (0..m)
        .map(|i| if valid(i) { (per_cell_mse[i] - mse).powi(2) } else { 0.0 })
        .collect();
    let var = per_cell_var.iter().sum::<f64>() / effective as f64;
    Ok(EvalReport {
        n_sensors,
        mse,
        var,
        effective_cells: effective,
        per_cell_mse,
        per_cell_var,
    })
}

/// `(1/(m·M)) Σᵢ Σⱼ (Φᵢⱼ − Φ̃ᵢⱼ)²`
pub fn mse_at_n(truth: &Matrix, recon: &Matrix) -> Result<f64> {
    Ok(evaluate(truth, recon, None, 0)?.mse)
}

/// `(1/m) Σᵢ ((1/M) Σⱼ (Φᵢⱼ − Φ̃ᵢⱼ)² − MSE@N)²`, population form.
pub fn var_at_n(truth: &Matrix, recon: &Matrix) -> Result<f64> {
    Ok(evaluate(truth, recon, None, 0)?.var)
}

/// `(benchmark − proposed) / benchmark × 100`
pub fn improvement_pct(benchmark: f64, proposed: f64) -> Result<f64> {
    if benchmark == 0.0 {
        return Err(Error::arg("improvement is undefined for a zero benchmark"));
    }
    Ok((benchmark - proposed) / benchmark * 100.0)
}

/// One row of the metrics table.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub strategy: String,
    pub n_sensors: usize,
    pub mse: f64,
    pub var: f64,
}

/// `strategy,n_sensors,mse,var` with a header line. Reals use the shortest
/// representation that round-trips.
pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from("strategy,n_sensors,mse,var\n");
    for r in rows {
        writeln!(out, "{},{},{:?},{:?}", r.strategy, r.n_sensors, r.mse, r.var).expect("String write");
    }
    out
}

/// Per-cell dump: `cell,row,col,mse,var`, masked cells omitted.
pub fn per_cell_csv(report: &EvalReport, width: usize, mask: Option<&[bool]>) -> String {
    let mut out = String::from("cell,row,col,mse,var\n");
    for (i, (m, v)) in report.per_cell_mse.iter().zip(&report.per_cell_var).enumerate() {
        if mask.is_none_or(|mk| mk[i]) {
            writeln!(out, "{i},{},{},{m:?},{v:?}", i / width, i % width).expect("String write");
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn mse_examples() {
        let t = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(mse_at_n(&t, &t).unwrap(), 0.0);
        assert_eq!(mse_at_n(&t, &m(&[&[1.0, 2.0], &[3.0, 6.0]])).unwrap(), 1.0);
        let shifted = Matrix::from_fn(2, 2, |i, j| t[(i, j)] + 0.5);
        assert_eq!(mse_at_n(&t, &shifted).unwrap(), 0.25);
        assert!(mse_at_n(&t, &Matrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn var_examples() {
        let t = Matrix::zeros(2, 2);
        assert_eq!(var_at_n(&t, &t).unwrap(), 0.0);
        // squared errors {0, 2} at cell 0 and {0, 0} at cell 1
        let r = m(&[&[0.0, 2f64.sqrt()], &[0.0, 0.0]]);
        let mse = mse_at_n(&t, &r).unwrap();
        assert!((mse - 0.5).abs() < 1e-15);
        assert!((var_at_n(&t, &r).unwrap() - 0.25).abs() < 1e-15);
        let shifted = Matrix::from_fn(2, 2, |_, _| 0.3);
        assert_eq!(var_at_n(&t, &shifted).unwrap(), 0.0);
    }

    #[test]
    fn mask_excludes_cells() {
        let t = m(&[&[0.0, 0.0], &[0.0, 0.0], &[0.0, 0.0]]);
        let r = m(&[&[1.0, 1.0], &[100.0, 100.0], &[3.0, 3.0]]);
        let mask = [true, false, true];
        let rep = evaluate(&t, &r, Some(&mask), 2).unwrap();
        assert_eq!(rep.effective_cells, 2);
        assert_eq!(rep.mse, 5.0);
        assert_eq!(rep.var, 16.0);
        assert_eq!(rep.per_cell_mse[1], 0.0);
        assert!(evaluate(&t, &r, Some(&[false; 3]), 2).is_err());
    }

    #[test]
    fn improvement_examples() {
        let p = improvement_pct(0.4192, 0.3910).unwrap();
        assert!((p - 6.727).abs() < 1e-3);
        assert_eq!(improvement_pct(2.0, 2.0).unwrap(), 0.0);
        assert!((improvement_pct(0.0096, 0.0056).unwrap() - 41.67).abs() < 0.01);
        assert!(improvement_pct(0.0, 1.0).is_err());
    }

    #[test]
    fn mse_invariant_under_permutation() {
        let mut rng = SeededRng::new(4);
        let t = Matrix::from_fn(5, 4, |_, _| rng.normal());
        let r = Matrix::from_fn(5, 4, |_, _| rng.normal());
        let rows = [3, 0, 4, 1, 2];
        let cols = [2, 3, 0, 1];
        let tp = Matrix::from_fn(5, 4, |i, j| t[(rows[i], cols[j])]);
        let rp = Matrix::from_fn(5, 4, |i, j| r[(rows[i], cols[j])]);
        let a = mse_at_n(&t, &r).unwrap();
        let b = mse_at_n(&tp, &rp).unwrap();
        assert!((a - b).abs() <= 1e-15 * a);
    }

    #[test]
    fn csv_layout() {
        let rows = vec![MetricsRow {
            strategy: "qr+linear".into(),
            n_sensors: 4,
            mse: 0.5,
            var: 0.0,
        }];
        assert_eq!(metrics_csv(&rows), "strategy,n_sensors,mse,var\nqr+linear,4,0.5,0.0\n");
    }
}
