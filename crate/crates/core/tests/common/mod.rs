//! Shared oracles and helpers for the integration suites. Everything here is
//! an independent re-derivation used to check the library — plain
//! per-step loops and brute-force enumerations, no reuse of the paths under
//! test.

use lion_core::linalg::{dot, matvec, Mat};
use lion_core::linear_rnn::{LinearRnnParams, Variant};
use lion_core::voxelgrid::VoxelSet;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_mat(rows: usize, cols: usize, scale: f64, rng: &mut impl Rng) -> Mat {
    Mat::from_fn(rows, cols, |_, _| rng.gen_range(-scale..scale))
}

pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub fn max_rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| rel_err(x, y, floor))
        .fold(0.0, f64::max)
}

/// Random sparse voxel set with distinct coordinates.
pub fn random_voxels(n: usize, dim: usize, extent: [i32; 3], seed: u64) -> VoxelSet {
    let mut r = rng(seed);
    let mut coords = std::collections::BTreeSet::new();
    let cap = (extent[0] as usize) * (extent[1] as usize) * (extent[2] as usize);
    let n = n.min(cap);
    while coords.len() < n {
        coords.insert([
            r.gen_range(0..extent[0]),
            r.gen_range(0..extent[1]),
            r.gen_range(0..extent[2]),
        ]);
    }
    let coords: Vec<[i32; 3]> = coords.into_iter().collect();
    let feats = rand_mat(coords.len(), dim, 1.0, &mut r);
    VoxelSet::from_parts(coords, feats).unwrap()
}

/// Naive per-step scan: a direct transcription of the defining recurrences,
/// unstabilized and unchunked.
pub fn naive_scan(seq: &Mat, p: &LinearRnnParams) -> Mat {
    let (t_len, c_dim, s_dim) = (seq.rows(), p.dim_c, p.dim_s);
    let mut out = Mat::zeros(t_len, c_dim);
    let sigmoid = |x: f64| 1.0 / (1.0 + (-x).exp());
    match &p.variant {
        Variant::SelectiveScan(v) => {
            let mut h = vec![vec![0.0; s_dim]; c_dim];
            for t in 0..t_len {
                let u = seq.row(t);
                let x = matvec(&v.w_in, u);
                let z = matvec(&v.w_gate, u);
                let bv = matvec(&v.w_b, &x);
                let cv = matvec(&v.w_c, &x);
                let mut o = vec![0.0; c_dim];
                for c in 0..c_dim {
                    let draw = dot(v.w_dt.row(c), &x) + v.b_dt.get(0, c);
                    let delta = (1.0 + draw.exp()).ln();
                    let mut y = v.d.get(0, c) * x[c];
                    for s in 0..s_dim {
                        h[c][s] = (delta * v.a.get(c, s)).exp() * h[c][s] + delta * bv[s] * x[c];
                        y += cv[s] * h[c][s];
                    }
                    o[c] = y * z[c] * sigmoid(z[c]);
                }
                out.copy_row_from(t, &matvec(&p.w_out, &o));
            }
        }
        Variant::Retention(v) => {
            let gamma = v.gamma.get(0, 0);
            let mut state = vec![vec![0.0; c_dim]; s_dim];
            for t in 0..t_len {
                let u = seq.row(t);
                let q = matvec(&v.w_q, u);
                let k = matvec(&v.w_k, u);
                let val = matvec(&v.w_v, u);
                for s in 0..s_dim {
                    for c in 0..c_dim {
                        state[s][c] = gamma * state[s][c] + k[s] * val[c];
                    }
                }
                let mut y = vec![0.0; c_dim];
                for c in 0..c_dim {
                    for s in 0..s_dim {
                        y[c] += q[s] * state[s][c];
                    }
                }
                out.copy_row_from(t, &matvec(&p.w_out, &y));
            }
        }
        Variant::Wkv(v) => {
            let mut a = vec![0.0; c_dim];
            let mut b = vec![0.0; c_dim];
            for t in 0..t_len {
                let u_row = seq.row(t);
                let k = matvec(&v.w_k, u_row);
                let val = matvec(&v.w_v, u_row);
                let r = matvec(&v.w_r, u_row);
                let mut y = vec![0.0; c_dim];
                for c in 0..c_dim {
                    let p_exp = (v.bonus.get(0, c) + k[c]).exp();
                    let wkv = (a[c] + p_exp * val[c]) / (b[c] + p_exp);
                    y[c] = sigmoid(r[c]) * wkv;
                    let w = v.decay.get(0, c).exp();
                    a[c] = w * a[c] + k[c].exp() * val[c];
                    b[c] = w * b[c] + k[c].exp();
                }
                out.copy_row_from(t, &matvec(&p.w_out, &y));
            }
        }
    }
    out
}

/// Brute-force dense 3D convolution restricted to active sites, on a cubic
/// grid of the given extent.
pub fn dense_conv_oracle(
    vs: &VoxelSet,
    kernel: &Mat,
    bias: &Mat,
    c_in: usize,
    c_out: usize,
    extent: usize,
) -> Mat {
    let at = |x: i32, y: i32, z: i32, c: usize| {
        ((x as usize * extent + y as usize) * extent + z as usize) * c_in + c
    };
    let mut dense = vec![0.0; extent * extent * extent * c_in];
    for i in 0..vs.len() {
        let co = vs.coord(i);
        for c in 0..c_in {
            dense[at(co[0], co[1], co[2], c)] = vs.feats().get(i, c);
        }
    }
    let mut out = Mat::zeros(vs.len(), c_out);
    for i in 0..vs.len() {
        let co = vs.coord(i);
        let row = out.row_mut(i);
        row.copy_from_slice(bias.row(0));
        for dz in -1..=1i32 {
            for dy in -1..=1i32 {
                for dx in -1..=1i32 {
                    let (nx, ny, nz) = (co[0] + dx, co[1] + dy, co[2] + dz);
                    if nx < 0
                        || ny < 0
                        || nz < 0
                        || nx >= extent as i32
                        || ny >= extent as i32
                        || nz >= extent as i32
                        || vs.lookup([nx, ny, nz]).is_none()
                    {
                        continue;
                    }
                    let o = ((dz + 1) * 9 + (dy + 1) * 3 + (dx + 1)) as usize;
                    for ci in 0..c_in {
                        let fv = dense[at(nx, ny, nz, ci)];
                        for cj in 0..c_out {
                            row[cj] += fv * kernel.get(o * c_in + ci, cj);
                        }
                    }
                }
            }
        }
    }
    out
}

/// Order-sensitive FNV-1a digest over f64 bit patterns; used for the
/// bit-identical reproducibility criterion.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Digest(pub u64);

impl Digest {
    pub fn new() -> Self {
        Digest(0xcbf2_9ce4_8422_2325)
    }

    pub fn absorb_u64(&mut self, v: u64) {
        for byte in v.to_le_bytes() {
            self.0 ^= byte as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01B3);
        }
    }

    pub fn absorb_f64(&mut self, v: f64) {
        self.absorb_u64(v.to_bits());
    }

    pub fn absorb_slice(&mut self, vs: &[f64]) {
        for &v in vs {
            self.absorb_f64(v);
        }
    }
}

impl Default for Digest {
    fn default() -> Self {
        Self::new()
    }
}
