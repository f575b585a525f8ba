//! Series file formats.
//!
//! Binary (`SFGD`), all integers little-endian:
//!
//! ```text
//! magic "SFGD" | version u32 | H u32 | W u32 | M u32 | mask flag u8
//! [mask bits, ceil(H·W / 8) bytes, row-major, least significant bit first]
//! M·H·W f64, time-major then row-major
//! ```
//!
//! Masked cells are written as 0.0 and read back as 0.0 whatever the file holds.
//!
//! CSV, comma separated, `.` decimal point, no quoting:
//!
//! * stacked file: first line `H,W`, then one line per snapshot holding the
//!   H·W values row-major. An empty field marks a masked cell; every line
//!   must leave the same cells empty.
//! * directory: every `*.csv` file, in file-name order, is one snapshot laid
//!   out as H lines of W values. Empty fields mark masked cells as above.

use std::fs;
use std::path::Path;

use super::{FieldSnapshot, GridShape, SnapshotSeries};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SFGD";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 * 4 + 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Binary,
    Csv,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" | "sfgd" => Ok(Format::Binary),
            "csv" => Ok(Format::Csv),
            other => Err(Error::arg(format!("unknown series format '{other}'"))),
        }
    }
}

pub fn encode_series(series: &SnapshotSeries) -> Vec<u8> {
    let grid = series.grid();
    let m = grid.cells();
    let mut out = Vec::with_capacity(HEADER_LEN + m.div_ceil(8) + 8 * m * series.len());
    out.extend_from_slice(MAGIC);
    for v in [VERSION, grid.height as u32, grid.width as u32, series.len() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    match series.mask() {
        None => out.push(0),
        Some(mask) => {
            out.push(1);
            let mut bytes = vec![0u8; m.div_ceil(8)];
            for (i, &valid) in mask.iter().enumerate() {
                if valid {
                    bytes[i / 8] |= 1 << (i % 8);
                }
            }
            out.extend_from_slice(&bytes);
        }
    }
    for snap in series.snapshots() {
        for (i, v) in snap.values.iter().enumerate() {
            let v = if series.is_valid(i) { *v } else { 0.0 };
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

pub fn decode_series(bytes: &[u8]) -> Result<SnapshotSeries> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::parse(
            "header",
            format!(
                "truncated header: expected {HEADER_LEN} bytes, found {}",
                bytes.len()
            ),
        ));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::parse("offset 0", "bad magic, expected SFGD"));
    }
    let version = read_u32(bytes, 4);
    if version != VERSION {
        return Err(Error::parse(
            "offset 4",
            format!("unsupported version {version}"),
        ));
    }
    let height = read_u32(bytes, 8) as usize;
    let width = read_u32(bytes, 12) as usize;
    let count = read_u32(bytes, 16) as usize;
    let grid = GridShape::new(height, width);
    let m = grid.cells();
    if m == 0 {
        return Err(Error::parse("offset 8", "grid has zero cells"));
    }
    let has_mask = match bytes[20] {
        0 => false,
        1 => true,
        f => {
            return Err(Error::parse(
                "offset 20",
                format!("mask flag must be 0 or 1, found {f}"),
            ))
        }
    };
    let mask_len = if has_mask { m.div_ceil(8) } else { 0 };
    let expected = HEADER_LEN + mask_len + 8 * m * count;
    if bytes.len() != expected {
        return Err(Error::parse(
            "body",
            format!(
                "expected {expected} bytes for {count} snapshots of {height}x{width}, found {}",
                bytes.len()
            ),
        ));
    }
    let mask = has_mask.then(|| {
        (0..m)
            .map(|i| bytes[HEADER_LEN + i / 8] & (1 << (i % 8)) != 0)
            .collect::<Vec<bool>>()
    });
    let mut offset = HEADER_LEN + mask_len;
    let mut snapshots = Vec::with_capacity(count);
    for t in 0..count {
        let mut values = Vec::with_capacity(m);
        for i in 0..m {
            let v = f64::from_le_bytes(bytes[offset..offset + 8].try_into().expect("8 bytes"));
            let valid = mask.as_ref().is_none_or(|mk| mk[i]);
            if valid && !v.is_finite() {
                return Err(Error::parse(
                    format!("offset {offset}"),
                    format!("non-finite value in snapshot {t}, cell {i}"),
                ));
            }
            values.push(if valid { v } else { 0.0 });
            offset += 8;
        }
        snapshots.push(FieldSnapshot {
            values,
            height,
            width,
            timestamp: t as u64,
        });
    }
    SnapshotSeries::new(grid, snapshots, mask)
}

pub fn save_series(path: &Path, series: &SnapshotSeries) -> Result<()> {
    fs::write(path, encode_series(series))?;
    Ok(())
}

/// Writes the stacked CSV layout.
pub fn save_series_csv(path: &Path, series: &SnapshotSeries) -> Result<()> {
    let grid = series.grid();
    let mut text = format!("{},{}\n", grid.height, grid.width);
    for snap in series.snapshots() {
        let row: Vec<String> = snap
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| {
                if series.is_valid(i) {
                    format!("{v:?}")
                } else {
                    String::new()
                }
            })
            .collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

pub fn load_series(path: &Path, format: Format) -> Result<SnapshotSeries> {
    match format {
        Format::Binary => decode_series(&fs::read(path)?),
        Format::Csv if path.is_dir() => load_csv_dir(path),
        Format::Csv => load_csv_stacked(path),
    }
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))
}

fn parse_cell(field: &str, location: impl FnOnce() -> String) -> Result<Option<f64>> {
    if field.is_empty() {
        return Ok(None);
    }
    match field.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        Ok(_) => Err(Error::parse(location(), format!("non-finite value '{field}'"))),
        Err(_) => Err(Error::parse(location(), format!("not a number: '{field}'"))),
    }
}

/// Folds one parsed row of optional values into the running mask.
fn merge_mask(
    mask: &mut Option<Vec<bool>>,
    cells: &[Option<f64>],
    location: impl FnOnce() -> String,
) -> Result<Vec<f64>> {
    let this: Vec<bool> = cells.iter().map(Option::is_some).collect();
    match mask {
        None => *mask = Some(this),
        Some(prev) if *prev != this => {
            return Err(Error::parse(
                location(),
                "masked (empty) cells differ from the first snapshot",
            ))
        }
        Some(_) => {}
    }
    Ok(cells.iter().map(|c| c.unwrap_or(0.0)).collect())
}

fn finish(
    grid: GridShape,
    rows: Vec<Vec<f64>>,
    mask: Option<Vec<bool>>,
) -> Result<SnapshotSeries> {
    let mask = mask.filter(|m| m.iter().any(|v| !v));
    let snapshots = rows
        .into_iter()
        .enumerate()
        .map(|(t, values)| FieldSnapshot {
            values,
            height: grid.height,
            width: grid.width,
            timestamp: t as u64,
        })
        .collect();
    SnapshotSeries::new(grid, snapshots, mask)
}

fn load_csv_stacked(path: &Path) -> Result<SnapshotSeries> {
    let name = path.display().to_string();
    let mut reader = csv_reader(path)?;
    let mut records = reader.records();
    let header = records
        .next()
        .ok_or_else(|| Error::parse(format!("{name}:1"), "missing H,W header"))?
        .map_err(|e| Error::parse(format!("{name}:1"), e.to_string()))?;
    if header.len() != 2 {
        return Err(Error::parse(
            format!("{name}:1"),
            format!("header must be 'H,W', found {} fields", header.len()),
        ));
    }
    let dim = |k: usize| -> Result<usize> {
        header[k]
            .parse::<usize>()
            .map_err(|_| Error::parse(format!("{name}:1:{}", k + 1), "bad grid dimension"))
    };
    let grid = GridShape::new(dim(0)?, dim(1)?);
    if grid.cells() == 0 {
        return Err(Error::parse(format!("{name}:1"), "grid has zero cells"));
    }

    let mut mask = None;
    let mut rows = Vec::new();
    for (k, record) in records.enumerate() {
        let line = k + 2;
        let record = record.map_err(|e| Error::parse(format!("{name}:{line}"), e.to_string()))?;
        if record.len() != grid.cells() {
            return Err(Error::parse(
                format!("{name}:{line}"),
                format!("expected {} values, found {}", grid.cells(), record.len()),
            ));
        }
        let cells = record
            .iter()
            .enumerate()
            .map(|(c, f)| parse_cell(f, || format!("{name}:{line}:{}", c + 1)))
            .collect::<Result<Vec<_>>>()?;
        rows.push(merge_mask(&mut mask, &cells, || format!("{name}:{line}"))?);
    }
    finish(grid, rows, mask)
}

fn load_csv_dir(dir: &Path) -> Result<SnapshotSeries> {
    let mut files: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::parse(dir.display().to_string(), "no .csv snapshots"));
    }
    let mut grid = None;
    let mut mask = None;
    let mut rows = Vec::new();
    for path in &files {
        let name = path.display().to_string();
        let mut cells = Vec::new();
        let mut width = None;
        let mut height = 0;
        for (k, record) in csv_reader(path)?.records().enumerate() {
            let line = k + 1;
            let record =
                record.map_err(|e| Error::parse(format!("{name}:{line}"), e.to_string()))?;
            match width {
                None => width = Some(record.len()),
                Some(w) if w != record.len() => {
                    return Err(Error::parse(
                        format!("{name}:{line}"),
                        format!("expected {w} values, found {}", record.len()),
                    ))
                }
                Some(_) => {}
            }
            for (c, f) in record.iter().enumerate() {
                cells.push(parse_cell(f, || format!("{name}:{line}:{}", c + 1))?);
            }
            height += 1;
        }
        let this = GridShape::new(height, width.unwrap_or(0));
        match grid {
            None => grid = Some(this),
            Some(g) if g != this => {
                return Err(Error::parse(
                    name,
                    format!(
                        "grid {}x{} differs from {}x{}",
                        this.height, this.width, g.height, g.width
                    ),
                ))
            }
            Some(_) => {}
        }
        rows.push(merge_mask(&mut mask, &cells, || name.clone())?);
    }
    finish(grid.expect("at least one file"), rows, mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_series, SynthKind, SynthSpec};

    fn sample() -> SnapshotSeries {
        synth_series(&SynthSpec {
            kind: SynthKind::Mixed,
            height: 5,
            width: 3,
            snapshots: 7,
            seed: 3,
            noise: 0.1,
            components: 2,
        })
        .unwrap()
    }

    fn masked_sample() -> SnapshotSeries {
        let s = sample();
        let mask: Vec<bool> = (0..15).map(|i| i % 4 != 1).collect();
        let snaps = s
            .snapshots()
            .iter()
            .map(|sn| FieldSnapshot {
                values: sn
                    .values
                    .iter()
                    .enumerate()
                    .map(|(i, v)| if mask[i] { *v } else { 0.0 })
                    .collect(),
                ..sn.clone()
            })
            .collect();
        SnapshotSeries::new(s.grid(), snaps, Some(mask)).unwrap()
    }

    #[test]
    fn binary_round_trip_bitwise() {
        for s in [sample(), masked_sample()] {
            let back = decode_series(&encode_series(&s)).unwrap();
            assert_eq!(back, s);
        }
    }

    #[test]
    fn truncated_file_reports_byte_counts() {
        let mut bytes = encode_series(&sample());
        bytes.truncate(bytes.len() - 5);
        let err = decode_series(&bytes).unwrap_err().to_string();
        let full = bytes.len() + 5;
        assert!(err.contains(&format!("expected {full} bytes")), "{err}");
        assert!(err.contains(&format!("found {}", full - 5)), "{err}");
        assert!(decode_series(&bytes[..10]).is_err());
    }

    #[test]
    fn bad_magic_and_masked_slots_ignored() {
        let mut bytes = encode_series(&sample());
        bytes[0] = b'X';
        assert!(matches!(decode_series(&bytes), Err(Error::Parse { .. })));

        let s = masked_sample();
        let mut bytes = encode_series(&s);
        // overwrite the masked slot of cell 1 in snapshot 0 with garbage
        let off = HEADER_LEN + 2 + 8;
        bytes[off..off + 8].copy_from_slice(&f64::NAN.to_le_bytes());
        assert_eq!(decode_series(&bytes).unwrap(), s);
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        for s in [sample(), masked_sample()] {
            save_series_csv(&path, &s).unwrap();
            assert_eq!(load_series(&path, Format::Csv).unwrap(), s);
        }

        fs::write(&path, "1,3\n1.0,2.0,3.0\n4.0,abc,6.0\n").unwrap();
        let err = load_series(&path, Format::Csv).unwrap_err().to_string();
        assert!(err.contains(":3:2"), "{err}");
        assert!(err.contains("abc"), "{err}");

        fs::write(&path, "1,3\n1.0,2.0\n").unwrap();
        assert!(load_series(&path, Format::Csv).is_err());
        fs::write(&path, "1,3\n1.0,inf,2.0\n").unwrap();
        assert!(load_series(&path, Format::Csv).is_err());
        fs::write(&path, "1,2\n1.0,\n1.0,2.0\n").unwrap();
        assert!(load_series(&path, Format::Csv).is_err());
    }

    #[test]
    fn csv_directory_of_grids() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("t000.csv"), "1,2,3\n4,,6\n").unwrap();
        fs::write(dir.path().join("t001.csv"), "7,8,9\n10,,12\n").unwrap();
        fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        let s = load_series(dir.path(), Format::Csv).unwrap();
        assert_eq!(s.grid(), GridShape::new(2, 3));
        assert_eq!(s.len(), 2);
        assert_eq!(s.snapshots()[1].values, vec![7.0, 8.0, 9.0, 10.0, 0.0, 12.0]);
        assert_eq!(s.mask().unwrap(), &[true, true, true, true, false, true]);

        fs::write(dir.path().join("t002.csv"), "1,2\n3,4\n").unwrap();
        assert!(load_series(dir.path(), Format::Csv).is_err());
    }
}
