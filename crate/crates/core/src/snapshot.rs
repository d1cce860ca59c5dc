//! Binary parameter snapshots.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic      8 bytes  "LSTMWFN\0"
//! version    u32      = 1
//! n_sites    u32
//! hidden1    u32
//! hidden2    u32
//! n_arrays   u32
//! repeated n_arrays times:
//!   name_len u32, name (UTF-8)
//!   ndim     u32, dims (u64 each)
//!   data     prod(dims) complex values as (re: f64, im: f64)
//! ```
//!
//! Arrays are written in the order of [`LstmWavefunction::blocks`]; readers
//! match them by name.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::ansatz::{LstmShape, LstmWavefunction};
use crate::error::{Error, Result};
use crate::scalar::{cplx, Scalar, C};

pub const MAGIC: &[u8; 8] = b"LSTMWFN\0";
pub const VERSION: u32 = 1;

pub fn write_snapshot<T: Scalar, W: Write>(w: &LstmWavefunction<T>, mut out: W) -> Result<()> {
    let shape = w.shape();
    out.write_all(MAGIC)?;
    out.write_u32::<LittleEndian>(VERSION)?;
    for v in [shape.n_sites, shape.hidden1, shape.hidden2] {
        out.write_u32::<LittleEndian>(v as u32)?;
    }
    let blocks = w.blocks();
    out.write_u32::<LittleEndian>(blocks.len() as u32)?;
    for b in &blocks {
        out.write_u32::<LittleEndian>(b.name.len() as u32)?;
        out.write_all(b.name.as_bytes())?;
        out.write_u32::<LittleEndian>(b.dims.len() as u32)?;
        for &d in &b.dims {
            out.write_u64::<LittleEndian>(d as u64)?;
        }
        for p in &w.params()[b.range()] {
            out.write_f64::<LittleEndian>(p.re.to_f64_lossy())?;
            out.write_f64::<LittleEndian>(p.im.to_f64_lossy())?;
        }
    }
    Ok(())
}

pub fn read_snapshot<T: Scalar, R: Read>(mut input: R) -> Result<LstmWavefunction<T>> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = input.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let n_sites = input.read_u32::<LittleEndian>()? as usize;
    let hidden1 = input.read_u32::<LittleEndian>()? as usize;
    let hidden2 = input.read_u32::<LittleEndian>()? as usize;
    let shape = LstmShape::with_hidden(n_sites, hidden1, hidden2);
    let mut w = LstmWavefunction::<T>::zeros(shape)?;
    let blocks = w.blocks();
    let mut seen = vec![false; blocks.len()];
    let n_arrays = input.read_u32::<LittleEndian>()? as usize;
    for _ in 0..n_arrays {
        let name_len = input.read_u32::<LittleEndian>()? as usize;
        if name_len > 256 {
            return Err(Error::Format("array name too long".into()));
        }
        let mut name = vec![0u8; name_len];
        input.read_exact(&mut name)?;
        let name =
            String::from_utf8(name).map_err(|_| Error::Format("array name not UTF-8".into()))?;
        let ndim = input.read_u32::<LittleEndian>()? as usize;
        if ndim > 8 {
            return Err(Error::Format(format!("array '{name}' has {ndim} dims")));
        }
        let dims = (0..ndim)
            .map(|_| input.read_u64::<LittleEndian>().map(|d| d as usize))
            .collect::<std::io::Result<Vec<_>>>()?;
        let (idx, block) = blocks
            .iter()
            .enumerate()
            .find(|(_, b)| b.name == name)
            .ok_or_else(|| Error::Format(format!("unknown array '{name}'")))?;
        if block.dims != dims {
            return Err(Error::Format(format!(
                "array '{name}' has dims {dims:?}, expected {:?}",
                block.dims
            )));
        }
        for p in &mut w.params_mut()[block.range()] {
            let re = input.read_f64::<LittleEndian>()?;
            let im = input.read_f64::<LittleEndian>()?;
            *p = cplx(T::lit(re), T::lit(im));
        }
        seen[idx] = true;
    }
    if let Some(missing) = blocks.iter().zip(&seen).find(|(_, &s)| !s) {
        return Err(Error::Format(format!("missing array '{}'", missing.0.name)));
    }
    if !w
        .params()
        .iter()
        .all(|p: &C<T>| p.re.is_finite() && p.im.is_finite())
    {
        return Err(Error::NonFinite("snapshot parameters"));
    }
    Ok(w)
}
