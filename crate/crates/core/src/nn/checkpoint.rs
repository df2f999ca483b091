//! `STCNET1` parameter checkpoints: magic, `u32` count of layer sizes, the
//! sizes as `u32`, then per layer the row-major weights followed by the
//! biases as `f32`. Everything little-endian. The output activation is not
//! stored; callers supply it when loading.

use std::fs;
use std::path::Path;

use super::{Mlp, OutputActivation};
use crate::bytes::{put_f32s, Reader};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 7] = b"STCNET1";

pub fn write_checkpoint(net: &Mlp<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * net.num_params());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(net.sizes().len() as u32).to_le_bytes());
    for &s in net.sizes() {
        out.extend_from_slice(&(s as u32).to_le_bytes());
    }
    put_f32s(&mut out, net.params());
    out
}

pub fn read_checkpoint(bytes: &[u8], output: OutputActivation) -> Result<Mlp<f32>> {
    let mut r = Reader::new(bytes);
    r.expect_magic(CHECKPOINT_MAGIC)?;
    let count = r.u32("layer count")? as usize;
    if count < 2 {
        return Err(r.error(format!("layer count {count} is below 2")));
    }
    let mut sizes = Vec::with_capacity(count);
    for i in 0..count {
        let s = r.u32(&format!("layer size {i}"))? as usize;
        if s == 0 {
            return Err(r.error(format!("layer size {i} is zero")));
        }
        sizes.push(s);
    }
    let total: usize = sizes.windows(2).map(|p| p[0] * p[1] + p[1]).sum();
    let mut params = Vec::with_capacity(total);
    r.f32s(total, "parameters", &mut params)?;
    r.finish()?;
    Mlp::from_params(&sizes, output, params)
}

pub fn save_checkpoint(net: &Mlp<f32>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, write_checkpoint(net))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>, output: OutputActivation) -> Result<Mlp<f32>> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    read_checkpoint(&fs::read(path)?, output)
}
