//! FOAT binary tensor files.
//!
//! Layout: magic `FOAT`, version byte `0x01`, dtype byte (`0x02` = f64),
//! one byte `ndim`, `ndim` little-endian `u64` dimensions, then the
//! row-major little-endian payload.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"FOAT";
pub const VERSION: u8 = 0x01;
pub const DTYPE_F64: u8 = 0x02;

pub fn write_tensor<W: Write>(mut w: W, t: &Tensor) -> Result<()> {
    let ndim = u8::try_from(t.ndim())
        .map_err(|_| Error::Format(format!("{} dimensions do not fit in one byte", t.ndim())))?;
    w.write_all(&MAGIC)?;
    w.write_all(&[VERSION, DTYPE_F64, ndim])?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_tensor<R: Read>(mut r: R) -> Result<Tensor> {
    let mut header = [0u8; 7];
    r.read_exact(&mut header)?;
    if header[..4] != MAGIC {
        return Err(Error::Format(format!("bad magic {:02x?}", &header[..4])));
    }
    if header[4] != VERSION {
        return Err(Error::Format(format!("unsupported version {:#04x}", header[4])));
    }
    if header[5] != DTYPE_F64 {
        return Err(Error::Format(format!("unsupported dtype {:#04x}", header[5])));
    }
    let ndim = header[6] as usize;
    let mut shape = Vec::with_capacity(ndim);
    let mut word = [0u8; 8];
    for _ in 0..ndim {
        r.read_exact(&mut word)?;
        let d = usize::try_from(u64::from_le_bytes(word))
            .map_err(|_| Error::Format("dimension overflows usize".into()))?;
        shape.push(d);
    }
    let numel = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format("element count overflows".into()))?;
    let mut data = Vec::with_capacity(numel);
    for _ in 0..numel {
        r.read_exact(&mut word)?;
        data.push(f64::from_le_bytes(word));
    }
    if r.read(&mut word)? != 0 {
        return Err(Error::Format("trailing bytes after payload".into()));
    }
    Tensor::new(shape, data).map_err(|e| Error::Format(e.to_string()))
}

pub fn save(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tensor(&mut w, t)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Tensor> {
    read_tensor(BufReader::new(File::open(path)?))
}
