//! Binary file formats (little-endian) and image/text exports.
//!
//! Point cloud: magic `LIONPC1\0`, `u64` point count, then per point four
//! `f32` values (x, y, z, intensity).
//!
//! Voxel dump: magic `LIONVX1\0`, `u64` voxel count L, `u32` channel count C,
//! then `L×3` `i32` coordinates followed by `L×C` `f32` features.

use std::io::{Read, Write};

use crate::error::{CoreError, Result};
use crate::linalg::Mat;
use crate::voxelgrid::{Point, PointCloud, VoxelSet};

pub const POINTCLOUD_MAGIC: &[u8; 8] = b"LIONPC1\0";
pub const VOXELDUMP_MAGIC: &[u8; 8] = b"LIONVX1\0";

pub fn write_pointcloud<W: Write>(w: &mut W, pc: &PointCloud) -> Result<()> {
    w.write_all(POINTCLOUD_MAGIC)?;
    w.write_all(&(pc.points.len() as u64).to_le_bytes())?;
    for p in &pc.points {
        for v in [p.x, p.y, p.z, p.intensity] {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_pointcloud<R: Read>(r: &mut R) -> Result<PointCloud> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != POINTCLOUD_MAGIC {
        return Err(CoreError::Format("bad point-cloud magic".into()));
    }
    let count = read_u64(r)? as usize;
    let mut points = Vec::with_capacity(count.min(1 << 24));
    for _ in 0..count {
        let mut vals = [0.0f64; 4];
        for v in &mut vals {
            *v = read_f32(r)? as f64;
        }
        points.push(Point {
            x: vals[0],
            y: vals[1],
            z: vals[2],
            intensity: vals[3],
        });
    }
    Ok(PointCloud { points })
}

pub fn write_voxeldump<W: Write>(w: &mut W, vs: &VoxelSet) -> Result<()> {
    w.write_all(VOXELDUMP_MAGIC)?;
    w.write_all(&(vs.len() as u64).to_le_bytes())?;
    w.write_all(&(vs.dim() as u32).to_le_bytes())?;
    for c in vs.coords() {
        for v in c {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    for r in 0..vs.len() {
        for &v in vs.feats().row(r) {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_voxeldump<R: Read>(r: &mut R) -> Result<VoxelSet> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != VOXELDUMP_MAGIC {
        return Err(CoreError::Format("bad voxel-dump magic".into()));
    }
    let l = read_u64(r)? as usize;
    let c = read_u32(r)? as usize;
    let mut coords = Vec::with_capacity(l.min(1 << 24));
    for _ in 0..l {
        let mut triple = [0i32; 3];
        for v in &mut triple {
            let mut buf = [0u8; 4];
            r.read_exact(&mut buf)?;
            *v = i32::from_le_bytes(buf);
        }
        coords.push(triple);
    }
    let mut feats = Mat::zeros(l, c);
    for row in 0..l {
        for col in 0..c {
            feats.set(row, col, read_f32(r)? as f64);
        }
    }
    VoxelSet::from_parts(coords, feats)
}

/// 8-bit binary PGM (P5), normalizing values to the full gray range; a
/// constant field maps to all-black.
pub fn write_pgm<W: Write>(w: &mut W, grid: &Mat) -> Result<()> {
    let (rows, cols) = (grid.rows(), grid.cols());
    write!(w, "P5\n{cols} {rows}\n255\n")?;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in grid.as_slice() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let span = hi - lo;
    let mut bytes = Vec::with_capacity(rows * cols);
    for &v in grid.as_slice() {
        let g = if span > 0.0 { ((v - lo) / span * 255.0).round() as u8 } else { 0 };
        bytes.push(g);
    }
    w.write_all(&bytes)?;
    Ok(())
}

/// Space-separated text matrix, one grid row per line.
pub fn write_text_matrix<W: Write>(w: &mut W, grid: &Mat) -> Result<()> {
    for r in 0..grid.rows() {
        let line: Vec<String> = grid.row(r).iter().map(|v| format!("{v:.6e}")).collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f32<R: Read>(r: &mut R) -> Result<f32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(f32::from_le_bytes(buf))
}
