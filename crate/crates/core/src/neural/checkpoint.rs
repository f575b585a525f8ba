//! `SFNR` checkpoint layout, little-endian throughout:
//!
//! ```text
//! magic "SFNR" | u32 version | u32 r | u32 m | u32 hidden_layer_count
//! u32 height | u32 width | f64 norm_min | f64 norm_max | u32 × r sensor indices
//! f64 parameters: w_f w_i w_c w_o b_f b_i b_c b_o, then per layer weight, bias
//! ```
//!
//! Matrices are row-major. The carried state is not stored.

use std::fs;
use std::path::Path;

use super::{ModelParams, NeuralReconstructor, Normalization};
use crate::data::GridShape;
use crate::error::{Error, Result};
use crate::neural::LstmState;
use crate::placement::Placement;

const MAGIC: &[u8; 4] = b"SFNR";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 6 * 4 + 2 * 8;

pub fn encode_checkpoint(model: &NeuralReconstructor) -> Vec<u8> {
    let grid = model.placement.grid();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    for v in [
        VERSION,
        model.sensors() as u32,
        model.cells() as u32,
        model.params.mlp.hidden_layer_count() as u32,
        grid.height as u32,
        grid.width as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&model.norm.min.to_le_bytes());
    out.extend_from_slice(&model.norm.max.to_le_bytes());
    for &g in model.placement.indices() {
        out.extend_from_slice(&(g as u32).to_le_bytes());
    }
    for (_, t) in model.params.tensors() {
        for v in t {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() < self.at + n {
            return Err(Error::parse(
                format!("offset {}", self.at),
                format!("truncated checkpoint: expected {} bytes, found {}", self.at + n, self.bytes.len()),
            ));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<NeuralReconstructor> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::parse(
            "offset 0",
            format!("truncated checkpoint: expected at least {HEADER_LEN} bytes, found {}", bytes.len()),
        ));
    }
    let mut rd = Reader { bytes, at: 0 };
    if rd.take(4)? != MAGIC {
        return Err(Error::parse("offset 0", "bad magic, expected SFNR"));
    }
    let version = rd.u32()?;
    if version != VERSION as usize {
        return Err(Error::parse("offset 4", format!("unsupported checkpoint version {version}")));
    }
    let (r, m, hidden, height, width) = (rd.u32()?, rd.u32()?, rd.u32()?, rd.u32()?, rd.u32()?);
    let grid = GridShape::new(height, width);
    if grid.cells() != m {
        return Err(Error::parse("offset 8", format!("grid {height}x{width} does not hold {m} cells")));
    }
    let norm = Normalization {
        min: rd.f64()?,
        max: rd.f64()?,
    };
    if !norm.min.is_finite() || !norm.max.is_finite() {
        return Err(Error::parse("offset 28", "non-finite normalization constants"));
    }
    let gamma = (0..r).map(|_| rd.u32()).collect::<Result<Vec<_>>>()?;
    let placement = Placement::new(gamma, grid)
        .map_err(|e| Error::parse("sensor indices", e.to_string()))?;
    let mut params = ModelParams::zeros(r, m, hidden)
        .map_err(|e| Error::parse("offset 16", e.to_string()))?;
    let expected = rd.at + 8 * params.parameter_count();
    if bytes.len() != expected {
        return Err(Error::parse(
            format!("offset {}", rd.at),
            format!("checkpoint should be {expected} bytes, found {}", bytes.len()),
        ));
    }
    for (name, t) in params.tensors_mut() {
        for v in t.iter_mut() {
            *v = rd.f64()?;
            if !v.is_finite() {
                return Err(Error::parse(format!("offset {}", rd.at - 8), format!("non-finite value in {name}")));
            }
        }
    }
    Ok(NeuralReconstructor {
        placement,
        params,
        state: LstmState::zeros(r),
        norm,
    })
}

pub fn save_checkpoint(path: &Path, model: &NeuralReconstructor) -> Result<()> {
    fs::write(path, encode_checkpoint(model))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<NeuralReconstructor> {
    decode_checkpoint(&fs::read(path)?).map_err(|e| match e {
        Error::Parse { location, message } => Error::Parse {
            location: format!("{}: {location}", path.display()),
            message,
        },
        other => other,
    })
}
