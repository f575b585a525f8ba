//! Binary portable graymap (P5) heatmaps.

use sparsefield::data::GridShape;

const MAXVAL: u8 = 255;

/// Gray level of each cell: linear min-max over the valid cells, rounded
/// half-up. A constant field maps to mid-gray 128, masked cells to 0, and
/// cells listed in `sensors` to 255.
pub fn gray_levels(values: &[f64], mask: Option<&[bool]>, sensors: &[usize]) -> Vec<u8> {
    let valid = |i: usize| mask.is_none_or(|m| m[i]);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (i, &v) in values.iter().enumerate() {
        if valid(i) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    let mut out: Vec<u8> = values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if !valid(i) {
                0
            } else if hi <= lo {
                128
            } else {
                ((v - lo) / (hi - lo) * f64::from(MAXVAL) + 0.5).floor() as u8
            }
        })
        .collect();
    for &s in sensors {
        out[s] = MAXVAL;
    }
    out
}

pub fn encode_pgm(grid: GridShape, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n{}\n", grid.width, grid.height, MAXVAL).into_bytes();
    out.extend_from_slice(pixels);
    out
}
