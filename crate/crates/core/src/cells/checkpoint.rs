//! Binary parameter container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "GRNNPARM"
//! version  u32
//! count    u32
//! count x record:
//!     name_len u32, name (UTF-8)
//!     ndim u32, ndim x u64 dims
//!     value_count u64, value_count x f64
//! ```

use std::io::{Read, Write};

use crate::error::{GrnnError, Result};
use crate::ndmath::{check_unique_names, Parameter, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"GRNNPARM";
pub const CHECKPOINT_VERSION: u32 = 1;

/// One serialized parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamRecord {
    pub name: String,
    pub tensor: Tensor,
}

impl From<&Parameter> for ParamRecord {
    fn from(p: &Parameter) -> Self {
        ParamRecord {
            name: p.name.clone(),
            tensor: p.tensor.clone(),
        }
    }
}

pub fn write_params<'a, W: Write>(
    mut w: W,
    params: impl IntoIterator<Item = &'a Parameter>,
) -> std::io::Result<()> {
    let params: Vec<&Parameter> = params.into_iter().collect();
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for p in params {
        let name = p.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        let shape = p.tensor.shape();
        w.write_all(&(shape.len() as u32).to_le_bytes())?;
        for &d in shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        w.write_all(&(p.tensor.len() as u64).to_le_bytes())?;
        for v in p.tensor.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()
}

fn corrupt(msg: impl Into<String>) -> GrnnError {
    GrnnError::Data(format!("corrupt checkpoint: {}", msg.into()))
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| corrupt(format!("truncated ({e})")))?;
    Ok(buf)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    Ok(u64::from_le_bytes(read_array(r)?))
}

// Upper bound on any single length field; guards allocations on garbage input.
const MAX_LEN: u64 = 1 << 32;

pub fn read_params<R: Read>(mut r: R) -> Result<Vec<ParamRecord>> {
    let magic: [u8; 8] = read_array(&mut r)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(corrupt(format!("unsupported version {version}")));
    }
    let count = read_u32(&mut r)?;
    let mut out = Vec::with_capacity(count.min(1024) as usize);
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; name_len.min(MAX_LEN as usize)];
        r.read_exact(&mut name)
            .map_err(|e| corrupt(format!("truncated name ({e})")))?;
        let name = String::from_utf8(name).map_err(|_| corrupt("name is not UTF-8"))?;
        let ndim = read_u32(&mut r)?;
        if ndim > 8 {
            return Err(corrupt(format!("{name}: rank {ndim}")));
        }
        let mut shape = Vec::with_capacity(ndim as usize);
        for _ in 0..ndim {
            let d = read_u64(&mut r)?;
            if d > MAX_LEN {
                return Err(corrupt(format!("{name}: dimension {d}")));
            }
            shape.push(d as usize);
        }
        let n = read_u64(&mut r)?;
        if n > MAX_LEN {
            return Err(corrupt(format!("{name}: value count {n}")));
        }
        let mut data = Vec::with_capacity(n as usize);
        for _ in 0..n {
            data.push(f64::from_le_bytes(read_array(&mut r)?));
        }
        let tensor = Tensor::new(shape, data).map_err(|e| corrupt(format!("{name}: {e}")))?;
        out.push(ParamRecord { name, tensor });
    }
    check_unique_names(out.iter().map(|r| r.name.as_str())).map_err(|e| corrupt(e.to_string()))?;
    Ok(out)
}
