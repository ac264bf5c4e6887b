//! Parameter-tree visiting, flattening, and the checkpoint container.
//!
//! Every learnable structure implements [`ParamSet`], exposing its tensors as
//! `(name, Mat)` pairs in a fixed order. The optimizer, the gradient checker,
//! and the checkpoint reader/writer are all built on that single walk.
//!
//! Checkpoint layout (little-endian): magic `LIONCK1\0`, `u32` entry count,
//! then per entry `u32` name length, UTF-8 name, `u32` rows, `u32` cols,
//! `rows*cols` IEEE-754 `f64` values.

use std::collections::HashMap;
use std::io::{Read, Write};

use crate::error::{CoreError, Result};
use crate::linalg::Mat;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"LIONCK1\0";

pub trait ParamSet {
    /// Visit every tensor in a fixed, deterministic order.
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Mat));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Mat));
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub fn param_count(p: &dyn ParamSet) -> usize {
    let mut n = 0;
    p.visit("", &mut |_, m| n += m.len());
    n
}

/// Concatenate all tensors into one vector, in visit order.
pub fn flatten(p: &dyn ParamSet) -> Vec<f64> {
    let mut out = Vec::new();
    p.visit("", &mut |_, m| out.extend_from_slice(m.as_slice()));
    out
}

/// Inverse of [`flatten`]; the slice length must match exactly.
pub fn load_flat(p: &mut dyn ParamSet, flat: &[f64]) -> Result<()> {
    let mut offset = 0;
    let mut overrun = false;
    p.visit_mut("", &mut |_, m| {
        let n = m.len();
        if offset + n > flat.len() {
            overrun = true;
            return;
        }
        m.as_mut_slice().copy_from_slice(&flat[offset..offset + n]);
        offset += n;
    });
    if overrun || offset != flat.len() {
        return Err(CoreError::contract(
            "params",
            "load_flat",
            format!("expected {} values, got {}", offset, flat.len()),
        ));
    }
    Ok(())
}

pub fn write_checkpoint<W: Write>(w: &mut W, p: &dyn ParamSet) -> Result<()> {
    let mut entries: Vec<(String, Mat)> = Vec::new();
    p.visit("", &mut |name, m| entries.push((name.to_string(), m.clone())));
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for (name, m) in &entries {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(m.rows() as u32).to_le_bytes())?;
        w.write_all(&(m.cols() as u32).to_le_bytes())?;
        for v in m.as_slice() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(r: &mut R, p: &mut dyn ParamSet) -> Result<()> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(CoreError::Format("bad checkpoint magic".into()));
    }
    let count = read_u32(r)? as usize;
    let mut blocks: HashMap<String, Mat> = HashMap::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| CoreError::Format("checkpoint entry name is not UTF-8".into()))?;
        let rows = read_u32(r)? as usize;
        let cols = read_u32(r)? as usize;
        let mut data = vec![0.0f64; rows * cols];
        for v in &mut data {
            let mut buf = [0u8; 8];
            r.read_exact(&mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
        if blocks.insert(name.clone(), Mat::from_vec(rows, cols, data)).is_some() {
            return Err(CoreError::Format(format!("duplicate checkpoint entry `{name}`")));
        }
    }

    let mut missing: Vec<String> = Vec::new();
    let mut mismatched: Vec<String> = Vec::new();
    let mut used = 0usize;
    p.visit_mut("", &mut |name, m| match blocks.get(name) {
        Some(src) if (src.rows(), src.cols()) == (m.rows(), m.cols()) => {
            m.as_mut_slice().copy_from_slice(src.as_slice());
            used += 1;
        }
        Some(_) => mismatched.push(name.to_string()),
        None => missing.push(name.to_string()),
    });
    if !missing.is_empty() || !mismatched.is_empty() {
        return Err(CoreError::Format(format!(
            "checkpoint does not match model (missing: {missing:?}, shape mismatch: {mismatched:?})"
        )));
    }
    if used != blocks.len() {
        return Err(CoreError::Format(format!(
            "checkpoint has {} unused entries",
            blocks.len() - used
        )));
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}
