//! Gridded snapshot containers, file formats, synthetic fields and splitting.

mod io;
mod synth;

pub use io::{decode_series, encode_series, load_series, save_series, save_series_csv, Format};
pub use synth::{synth_series, SynthKind, SynthSpec};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Height and width of a row-major grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct GridShape {
    pub height: usize,
    pub width: usize,
}

impl GridShape {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width }
    }

    /// Number of cells, `m = H·W`.
    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    /// (row, col) of a flat index.
    pub fn coords(&self, index: usize) -> (usize, usize) {
        (index / self.width, index % self.width)
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }
}

/// One time slice of the field, flattened row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldSnapshot {
    pub values: Vec<f64>,
    pub height: usize,
    pub width: usize,
    pub timestamp: u64,
}

impl FieldSnapshot {
    pub fn grid(&self) -> GridShape {
        GridShape::new(self.height, self.width)
    }
}

/// Time-ordered snapshots on a common grid, with an optional validity mask.
#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotSeries {
    grid: GridShape,
    snapshots: Vec<FieldSnapshot>,
    /// `true` marks a valid cell.
    mask: Option<Vec<bool>>,
}

impl SnapshotSeries {
    pub fn new(
        grid: GridShape,
        snapshots: Vec<FieldSnapshot>,
        mask: Option<Vec<bool>>,
    ) -> Result<Self> {
        if grid.cells() == 0 {
            return Err(Error::arg("grid must have at least one cell"));
        }
        if let Some(mask) = &mask {
            if mask.len() != grid.cells() {
                return Err(Error::Shape {
                    op: "SnapshotSeries::new",
                    expected: format!("mask of {} cells", grid.cells()),
                    found: format!("{}", mask.len()),
                });
            }
        }
        for (t, snap) in snapshots.iter().enumerate() {
            if snap.grid() != grid || snap.values.len() != grid.cells() {
                return Err(Error::Shape {
                    op: "SnapshotSeries::new",
                    expected: format!("{}x{} snapshot", grid.height, grid.width),
                    found: format!(
                        "{}x{} with {} values at position {t}",
                        snap.height,
                        snap.width,
                        snap.values.len()
                    ),
                });
            }
            if let Some(i) = snap.values.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    location: format!("snapshot {t}, cell {i}"),
                });
            }
            if t > 0 && snap.timestamp <= snapshots[t - 1].timestamp {
                return Err(Error::arg(format!(
                    "timestamps must increase strictly (position {t})"
                )));
            }
        }
        Ok(Self {
            grid,
            snapshots,
            mask,
        })
    }

    /// Builds a series from an `m × M` matrix, one column per snapshot, with
    /// timestamps `first_timestamp, first_timestamp + 1, …`.
    pub fn from_matrix(
        grid: GridShape,
        phi: &Matrix,
        mask: Option<Vec<bool>>,
        first_timestamp: u64,
    ) -> Result<Self> {
        if phi.rows() != grid.cells() {
            return Err(Error::Shape {
                op: "SnapshotSeries::from_matrix",
                expected: format!("{} rows", grid.cells()),
                found: format!("{}", phi.rows()),
            });
        }
        let snapshots = (0..phi.cols())
            .map(|j| FieldSnapshot {
                values: phi.column(j),
                height: grid.height,
                width: grid.width,
                timestamp: first_timestamp + j as u64,
            })
            .collect();
        Self::new(grid, snapshots, mask)
    }

    pub fn grid(&self) -> GridShape {
        self.grid
    }

    pub fn snapshots(&self) -> &[FieldSnapshot] {
        &self.snapshots
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    pub fn is_valid(&self, cell: usize) -> bool {
        self.mask.as_ref().is_none_or(|m| m[cell])
    }

    /// Flat indices of valid cells in ascending order.
    pub fn valid_cells(&self) -> Vec<usize> {
        (0..self.grid.cells()).filter(|&i| self.is_valid(i)).collect()
    }

    /// The `m × M` snapshot matrix Φ, one column per snapshot.
    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_fn(self.grid.cells(), self.snapshots.len(), |i, j| {
            self.snapshots[j].values[i]
        })
    }

    /// Snapshots `range`, keeping grid, mask and timestamps.
    pub fn slice(&self, range: std::ops::Range<usize>) -> SnapshotSeries {
        SnapshotSeries {
            grid: self.grid,
            snapshots: self.snapshots[range].to_vec(),
            mask: self.mask.clone(),
        }
    }
}

/// Time-ordered split: the first `floor(train_fraction · M)` snapshots train.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitSpec {
    pub train_fraction: f64,
}

impl SplitSpec {
    pub fn new(train_fraction: f64) -> Result<Self> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(Error::arg(format!(
                "train fraction must lie in (0, 1), got {train_fraction}"
            )));
        }
        Ok(Self { train_fraction })
    }

    pub fn train_len(&self, total: usize) -> usize {
        (self.train_fraction * total as f64).floor() as usize
    }
}

/// Splits without shuffling; both sides must be non-empty.
pub fn split_series(
    series: &SnapshotSeries,
    spec: SplitSpec,
) -> Result<(SnapshotSeries, SnapshotSeries)> {
    let total = series.len();
    let n_train = spec.train_len(total);
    if n_train == 0 || n_train >= total {
        return Err(Error::arg(format!(
            "train fraction {} of {total} snapshots leaves an empty side ({n_train} train)",
            spec.train_fraction
        )));
    }
    Ok((series.slice(0..n_train), series.slice(n_train..total)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(len: usize) -> SnapshotSeries {
        let grid = GridShape::new(1, 2);
        let phi = Matrix::from_fn(2, len, |i, j| (i * 10 + j) as f64);
        SnapshotSeries::from_matrix(grid, &phi, None, 0).unwrap()
    }

    #[test]
    fn split_counts() {
        let (a, b) = split_series(&series(10), SplitSpec::new(0.7).unwrap()).unwrap();
        assert_eq!((a.len(), b.len()), (7, 3));
        let (a, b) = split_series(&series(2), SplitSpec::new(0.5).unwrap()).unwrap();
        assert_eq!((a.len(), b.len()), (1, 1));
        let (a, b) = split_series(&series(3), SplitSpec::new(0.9).unwrap()).unwrap();
        assert_eq!((a.len(), b.len()), (2, 1));
        assert!(split_series(&series(3), SplitSpec::new(0.1).unwrap()).is_err());
    }

    #[test]
    fn split_preserves_order_and_concatenation() {
        let s = series(9);
        let (a, b) = split_series(&s, SplitSpec::new(0.6).unwrap()).unwrap();
        let joined: Vec<_> = a.snapshots().iter().chain(b.snapshots()).cloned().collect();
        assert_eq!(joined, s.snapshots());
        assert!(a.snapshots().last().unwrap().timestamp < b.snapshots()[0].timestamp);
    }

    #[test]
    fn split_spec_bounds() {
        assert!(SplitSpec::new(0.0).is_err());
        assert!(SplitSpec::new(1.0).is_err());
        assert!(SplitSpec::new(f64::NAN).is_err());
    }

    #[test]
    fn series_validation() {
        let grid = GridShape::new(1, 2);
        let snap = |t, v: f64| FieldSnapshot {
            values: vec![v, v],
            height: 1,
            width: 2,
            timestamp: t,
        };
        assert!(SnapshotSeries::new(grid, vec![snap(1, 0.0), snap(1, 0.0)], None).is_err());
        assert!(SnapshotSeries::new(grid, vec![snap(0, f64::INFINITY)], None).is_err());
        assert!(SnapshotSeries::new(grid, vec![snap(0, 1.0)], Some(vec![true])).is_err());
        let bad = FieldSnapshot {
            values: vec![0.0; 3],
            height: 1,
            width: 3,
            timestamp: 0,
        };
        assert!(SnapshotSeries::new(grid, vec![bad], None).is_err());
    }

    #[test]
    fn grid_coords_row_major() {
        let g = GridShape::new(3, 4);
        assert_eq!(g.coords(6), (1, 2));
        assert_eq!(g.index(1, 2), 6);
    }
}
