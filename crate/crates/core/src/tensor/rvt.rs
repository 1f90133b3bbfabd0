//! `.rvt` tensor files: `"RVT1"`, four `u32` LE dims (N, C, H, W), then
//! `N·C·H·W` `f32` LE values.

use std::fs;
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};
use crate::wire::{dim_u32, put_f32s, put_u32, Reader};

pub const MAGIC: &[u8; 4] = b"RVT1";

pub fn encode(t: &Tensor) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(20 + t.len() * 4);
    out.extend_from_slice(MAGIC);
    for d in t.dims() {
        put_u32(&mut out, dim_u32(d, "tensor dim")?);
    }
    put_f32s(&mut out, t.data());
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    let mut r = Reader::new(bytes);
    if r.bytes(4, "magic")? != MAGIC {
        return Err(Error::format(0, "bad magic, expected \"RVT1\""));
    }
    let mut dims = [0usize; 4];
    for d in &mut dims {
        *d = r.u32("dims")? as usize;
    }
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::format(4, "element count overflows"))?;
    let data = r.f32s(count, "tensor data")?;
    if r.remaining() != 0 {
        return Err(Error::format(
            r.offset(),
            format!("{} trailing bytes after tensor data", r.remaining()),
        ));
    }
    Tensor::new(dims, data)
}

pub fn write(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    fs::write(path, encode(t)?)?;
    Ok(())
}

pub fn read(path: impl AsRef<Path>) -> Result<Tensor> {
    decode(&fs::read(path)?)
}
