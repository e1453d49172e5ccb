//! Binary parameter files.
//!
//! Layout (all integers `u32` little-endian, all reals `f64` little-endian):
//!
//! ```text
//! offset  size        field
//! 0       8           magic "GEMPOL\0\0"
//! 8       4           format version (1)
//! 12      4           vocabulary size V
//! 16      4           BOS id
//! 20      4           EOS id
//! 24      4           context length c
//! 28      8·V·c·V     weights, row-major V × (c·V)
//! ...     8·V         bias
//! ```

use std::io::{Read, Write};

use ndarray::{Array1, Array2};

use super::PolicyParams;
use crate::error::{GemError, Result};
use crate::tokens::Vocabulary;

pub const PARAMS_MAGIC: &[u8; 8] = b"GEMPOL\0\0";
pub const PARAMS_FORMAT_VERSION: u32 = 1;

pub fn write_params<W: Write>(params: &PolicyParams, mut out: W) -> Result<()> {
    let vocab = params.vocab();
    out.write_all(PARAMS_MAGIC)?;
    for x in [
        PARAMS_FORMAT_VERSION,
        vocab.size() as u32,
        vocab.bos(),
        vocab.eos(),
        params.context_length() as u32,
    ] {
        out.write_all(&x.to_le_bytes())?;
    }
    for x in params.weights().iter().chain(params.bias().iter()) {
        out.write_all(&x.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    input.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_f64s<R: Read>(input: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; n * 8];
    input.read_exact(&mut bytes).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => GemError::Format("parameter file is truncated".into()),
        _ => e.into(),
    })?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

pub fn read_params<R: Read>(mut input: R) -> Result<PolicyParams> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != PARAMS_MAGIC {
        return Err(GemError::Format("not a parameter file (bad magic)".into()));
    }
    let version = read_u32(&mut input)?;
    if version != PARAMS_FORMAT_VERSION {
        return Err(GemError::Format(format!("unsupported format version {version}")));
    }
    let v = read_u32(&mut input)? as usize;
    let bos = read_u32(&mut input)?;
    let eos = read_u32(&mut input)?;
    let c = read_u32(&mut input)? as usize;
    let vocab = Vocabulary::new(v, bos, eos)?;
    if c == 0 || v.checked_mul(c).and_then(|x| x.checked_mul(v)).is_none() {
        return Err(GemError::Format(format!("bad context length {c}")));
    }

    let weights = Array2::from_shape_vec((v, c * v), read_f64s(&mut input, v * c * v)?)
        .map_err(|e| GemError::Format(e.to_string()))?;
    let bias = Array1::from_vec(read_f64s(&mut input, v)?);
    let mut rest = Vec::new();
    input.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(GemError::Format(format!("{} trailing bytes", rest.len())));
    }
    PolicyParams::from_parts(vocab, c, weights, bias)
}
