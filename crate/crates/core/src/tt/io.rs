//! Binary checkpoint format for tensor trains.
//!
//! Layout, all little-endian: `d: u64`, `d` mode dimensions as `u64`,
//! `d + 1` ranks as `u64`, then every core's entries as `f64` in core order,
//! each core in `(left, mode, right)` row-major order.

use std::io::{Read, Write};

use super::{Core, TensorTrain};
use crate::error::{Error, Result};

// Refuse headers that would make us allocate absurd buffers.
const MAX_CORE_ENTRIES: usize = 1 << 32;

impl TensorTrain {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let d = self.order();
        w.write_all(&(d as u64).to_le_bytes())?;
        for p in self.mode_dims() {
            w.write_all(&(p as u64).to_le_bytes())?;
        }
        for r in self.ranks() {
            w.write_all(&(r as u64).to_le_bytes())?;
        }
        for core in self.cores() {
            for v in core.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let d = read_u64(&mut r)? as usize;
        if d == 0 || d > 1 << 20 {
            return Err(Error::Format(format!("implausible order {d}")));
        }
        let mut modes = Vec::with_capacity(d);
        for _ in 0..d {
            modes.push(read_u64(&mut r)? as usize);
        }
        let mut ranks = Vec::with_capacity(d + 1);
        for _ in 0..=d {
            ranks.push(read_u64(&mut r)? as usize);
        }
        let mut cores = Vec::with_capacity(d);
        for k in 0..d {
            let len = ranks[k]
                .checked_mul(modes[k])
                .and_then(|v| v.checked_mul(ranks[k + 1]))
                .filter(|&v| v <= MAX_CORE_ENTRIES)
                .ok_or_else(|| Error::Format(format!("core {k} is too large")))?;
            let mut data = Vec::with_capacity(len);
            for _ in 0..len {
                data.push(read_f64(&mut r)?);
            }
            cores.push(Core::new(ranks[k], modes[k], ranks[k + 1], data)?);
        }
        TensorTrain::new(cores)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read_from(bytes)
    }
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Format(format!("truncated header: {e}")))?;
    Ok(u64::from_le_bytes(buf))
}

pub(crate) fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Format(format!("truncated body: {e}")))?;
    Ok(f64::from_le_bytes(buf))
}
