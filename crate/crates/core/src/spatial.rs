//! 3D spatial feature descriptor: sub-manifold 3×3×3 convolution, layer
//! normalization over channels, exact-erf GELU, wrapped in a residual
//! connection. Restores local 3D context that 1D serialization loses.
//!
//! The convolution is sub-manifold: output active sites equal input active
//! sites, and only occupied neighbors contribute. Offsets iterate in fixed
//! z-major order so accumulation is deterministic.

use rand::Rng;

use crate::error::{CoreError, Result};
use crate::linalg::Mat;
use crate::params::{join, ParamSet};
use crate::voxelgrid::VoxelSet;

/// The 27 neighborhood offsets in z-major order: `(dz, dy, dx)` each over
/// `-1..=1`, flattened as `index = (dz+1)*9 + (dy+1)*3 + (dx+1)`.
pub const NEIGHBOR_OFFSETS: [[i32; 3]; 27] = {
    let mut offs = [[0i32; 3]; 27];
    let mut i = 0;
    let mut dz = -1;
    while dz <= 1 {
        let mut dy = -1;
        while dy <= 1 {
            let mut dx = -1;
            while dx <= 1 {
                offs[i] = [dx, dy, dz];
                i += 1;
                dx += 1;
            }
            dy += 1;
        }
        dz += 1;
    }
    offs
};

pub const CENTER_OFFSET_INDEX: usize = 13;

#[derive(Clone, Debug)]
pub struct SubmConvParams {
    /// `(27*C_in) × C_out`; rows `o*C_in..(o+1)*C_in` hold the tap for
    /// neighbor offset `o`.
    pub kernel: Mat,
    pub bias: Mat, // 1×C_out
    pub c_in: usize,
    pub c_out: usize,
}

impl SubmConvParams {
    pub fn init(c_in: usize, c_out: usize, rng: &mut impl Rng) -> Self {
        SubmConvParams {
            kernel: Mat::uniform_init(27 * c_in, c_out, 27 * c_in, rng),
            bias: Mat::zeros(1, c_out),
            c_in,
            c_out,
        }
    }

    /// Identity kernel: center tap is the identity map, all else zero.
    pub fn identity(c: usize) -> Self {
        let mut kernel = Mat::zeros(27 * c, c);
        for i in 0..c {
            kernel.set(CENTER_OFFSET_INDEX * c + i, i, 1.0);
        }
        SubmConvParams {
            kernel,
            bias: Mat::zeros(1, c),
            c_in: c,
            c_out: c,
        }
    }

    pub fn zeros_like(&self) -> Self {
        SubmConvParams {
            kernel: self.kernel.zeros_like(),
            bias: self.bias.zeros_like(),
            c_in: self.c_in,
            c_out: self.c_out,
        }
    }
}

impl ParamSet for SubmConvParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Mat)) {
        f(&join(prefix, "kernel"), &self.kernel);
        f(&join(prefix, "bias"), &self.bias);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Mat)) {
        f(&join(prefix, "kernel"), &mut self.kernel);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

#[derive(Clone, Debug)]
pub struct NormParams {
    pub scale: Mat, // 1×C
    pub shift: Mat, // 1×C
    pub epsilon: f64,
}

impl NormParams {
    pub fn init(c: usize) -> Self {
        NormParams {
            scale: Mat::filled(1, c, 1.0),
            shift: Mat::zeros(1, c),
            epsilon: 1e-5,
        }
    }

    pub fn zeros_like(&self) -> Self {
        NormParams {
            scale: self.scale.zeros_like(),
            shift: self.shift.zeros_like(),
            epsilon: self.epsilon,
        }
    }
}

impl ParamSet for NormParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Mat)) {
        f(&join(prefix, "scale"), &self.scale);
        f(&join(prefix, "shift"), &self.shift);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Mat)) {
        f(&join(prefix, "scale"), &mut self.scale);
        f(&join(prefix, "shift"), &mut self.shift);
    }
}

/// Exact GELU: `0.5 x (1 + erf(x/sqrt(2)))`.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// d/dx of [`gelu`]: `Phi(x) + x phi(x)`.
pub fn gelu_prime(x: f64) -> f64 {
    let phi_cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    phi_cdf + x * pdf
}

fn check_dim(vs: &VoxelSet, p: &SubmConvParams, op: &'static str) -> Result<()> {
    if vs.dim() != p.c_in {
        return Err(CoreError::contract(
            "spatial",
            op,
            format!("feature dim {} != kernel C_in {}", vs.dim(), p.c_in),
        ));
    }
    Ok(())
}

/// Sub-manifold convolution: output coords identical to input coords;
/// `out[i] = sum_o kernel[o]ᵀ feat(coord_i + o) + bias` over occupied
/// neighbors.
pub fn subm_conv(vs: &VoxelSet, p: &SubmConvParams) -> Result<VoxelSet> {
    check_dim(vs, p, "subm_conv")?;
    let mut out = Mat::zeros(vs.len(), p.c_out);
    for i in 0..vs.len() {
        let base = vs.coord(i);
        let row = out.row_mut(i);
        row.copy_from_slice(p.bias.row(0));
        for (o, off) in NEIGHBOR_OFFSETS.iter().enumerate() {
            let nb = [base[0] + off[0], base[1] + off[1], base[2] + off[2]];
            if let Some(j) = vs.lookup(nb) {
                let feat = vs.feats().row(j);
                for (ci, &fv) in feat.iter().enumerate() {
                    if fv != 0.0 {
                        let krow = p.kernel.row(o * p.c_in + ci);
                        for (acc, &kv) in row.iter_mut().zip(krow) {
                            *acc += fv * kv;
                        }
                    }
                }
            }
        }
    }
    vs.with_feats(out)
}

/// VJP of [`subm_conv`]: scatter-add over the 27 offsets, accumulated in
/// fixed offset order.
pub fn subm_conv_backward(
    vs: &VoxelSet,
    p: &SubmConvParams,
    grad_out: &Mat,
) -> Result<(Mat, SubmConvParams)> {
    check_dim(vs, p, "subm_conv_backward")?;
    if (grad_out.rows(), grad_out.cols()) != (vs.len(), p.c_out) {
        return Err(CoreError::contract(
            "spatial",
            "subm_conv_backward",
            "grad_out shape mismatch",
        ));
    }
    let mut grad_in = Mat::zeros(vs.len(), p.c_in);
    let mut grads = p.zeros_like();
    for i in 0..vs.len() {
        let base = vs.coord(i);
        let g_row = grad_out.row(i);
        for (b, &g) in grads.bias.row_mut(0).iter_mut().zip(g_row) {
            *b += g;
        }
        for (o, off) in NEIGHBOR_OFFSETS.iter().enumerate() {
            let nb = [base[0] + off[0], base[1] + off[1], base[2] + off[2]];
            if let Some(j) = vs.lookup(nb) {
                let feat = vs.feats().row(j);
                let gin = grad_in.row_mut(j);
                for ci in 0..p.c_in {
                    let krow = p.kernel.row(o * p.c_in + ci);
                    let gkrow = grads.kernel.row_mut(o * p.c_in + ci);
                    let mut acc = 0.0;
                    for (co, (&kv, gk)) in krow.iter().zip(gkrow.iter_mut()).enumerate() {
                        acc += g_row[co] * kv;
                        *gk += g_row[co] * feat[ci];
                    }
                    gin[ci] += acc;
                }
            }
        }
    }
    Ok((grad_in, grads))
}

#[derive(Clone, Debug)]
pub struct DescriptorParams {
    pub conv: SubmConvParams,
    pub norm: NormParams,
}

impl DescriptorParams {
    pub fn init(c: usize, rng: &mut impl Rng) -> Self {
        DescriptorParams {
            conv: SubmConvParams::init(c, c, rng),
            norm: NormParams::init(c),
        }
    }

    pub fn zeros_like(&self) -> Self {
        DescriptorParams {
            conv: self.conv.zeros_like(),
            norm: self.norm.zeros_like(),
        }
    }
}

impl ParamSet for DescriptorParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Mat)) {
        self.conv.visit(&join(prefix, "conv"), f);
        self.norm.visit(&join(prefix, "norm"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Mat)) {
        self.conv.visit_mut(&join(prefix, "conv"), f);
        self.norm.visit_mut(&join(prefix, "norm"), f);
    }
}

/// Layer-normalize each row over the channel axis, then apply the affine
/// `scale`/`shift`. Returns `(out, normalized rows, inv_std per row)` so the
/// backward pass can reuse the statistics.
pub(crate) fn layer_norm_cached(x: &Mat, norm: &NormParams) -> (Mat, Mat, Vec<f64>) {
    let (rows, cols) = (x.rows(), x.cols());
    let mut out = Mat::zeros(rows, cols);
    let mut xhat = Mat::zeros(rows, cols);
    let mut inv_std = vec![0.0; rows];
    for r in 0..rows {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / cols as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
        let istd = 1.0 / (var + norm.epsilon).sqrt();
        inv_std[r] = istd;
        for c in 0..cols {
            let xh = (row[c] - mean) * istd;
            xhat.set(r, c, xh);
            out.set(r, c, norm.scale.get(0, c) * xh + norm.shift.get(0, c));
        }
    }
    (out, xhat, inv_std)
}

/// VJP of [`layer_norm_cached`]. Accumulates scale/shift grads and returns
/// the input gradient.
pub(crate) fn layer_norm_backward(
    grad_out: &Mat,
    xhat: &Mat,
    inv_std: &[f64],
    norm: &NormParams,
    g_norm: &mut NormParams,
) -> Mat {
    let (rows, cols) = (grad_out.rows(), grad_out.cols());
    let mut grad_in = Mat::zeros(rows, cols);
    for r in 0..rows {
        let g = grad_out.row(r);
        let xh = xhat.row(r);
        let mut sum_gs = 0.0;
        let mut sum_gs_xhat = 0.0;
        for c in 0..cols {
            let gs = g[c] * norm.scale.get(0, c);
            sum_gs += gs;
            sum_gs_xhat += gs * xh[c];
            g_norm.scale.set(0, c, g_norm.scale.get(0, c) + g[c] * xh[c]);
            g_norm.shift.set(0, c, g_norm.shift.get(0, c) + g[c]);
        }
        let n = cols as f64;
        let gin = grad_in.row_mut(r);
        for c in 0..cols {
            let gs = g[c] * norm.scale.get(0, c);
            gin[c] = inv_std[r] / n * (n * gs - sum_gs - xh[c] * sum_gs_xhat);
        }
    }
    grad_in
}

/// `out = in + GELU(LN(subm_conv(in)))`. Output coords equal input coords.
pub fn descriptor(vs: &VoxelSet, d: &DescriptorParams) -> Result<VoxelSet> {
    let conv_out = subm_conv(vs, &d.conv)?;
    let (normed, _, _) = layer_norm_cached(conv_out.feats(), &d.norm);
    let mut out = vs.feats().clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let nr = normed.row(r);
        for (acc, &v) in row.iter_mut().zip(nr) {
            *acc += gelu(v);
        }
    }
    vs.with_feats(out)
}

/// VJP of [`descriptor`] through GELU, normalization, convolution, and the
/// residual path.
pub fn descriptor_backward(
    vs: &VoxelSet,
    d: &DescriptorParams,
    grad_out: &Mat,
) -> Result<(Mat, DescriptorParams)> {
    if (grad_out.rows(), grad_out.cols()) != (vs.len(), vs.dim()) {
        return Err(CoreError::contract(
            "spatial",
            "descriptor_backward",
            "grad_out shape mismatch",
        ));
    }
    let conv_out = subm_conv(vs, &d.conv)?;
    let (normed, xhat, inv_std) = layer_norm_cached(conv_out.feats(), &d.norm);

    let mut grads = d.zeros_like();
    let mut g_normed = Mat::zeros(normed.rows(), normed.cols());
    for r in 0..normed.rows() {
        let src = grad_out.row(r);
        let nr = normed.row(r);
        let dst = g_normed.row_mut(r);
        for c in 0..nr.len() {
            dst[c] = src[c] * gelu_prime(nr[c]);
        }
    }
    let g_conv = layer_norm_backward(&g_normed, &xhat, &inv_std, &d.norm, &mut grads.norm);
    let (mut grad_in, g_conv_params) = subm_conv_backward(vs, &d.conv, &g_conv)?;
    grads.conv = g_conv_params;
    // Residual path.
    grad_in.add_assign(grad_out);
    Ok((grad_in, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::flatten;
    use crate::test_util::{central_diff, max_rel_err, rand_mat, rng};
    use crate::voxelgrid::VoxelSet;
    use rand::Rng;

    fn random_voxels(n: usize, dim: usize, extent: i32, seed: u64) -> VoxelSet {
        let mut r = rng(seed);
        let mut coords = std::collections::BTreeSet::new();
        while coords.len() < n {
            coords.insert([
                r.gen_range(0..extent),
                r.gen_range(0..extent),
                r.gen_range(0..extent),
            ]);
        }
        let coords: Vec<[i32; 3]> = coords.into_iter().collect();
        let feats = rand_mat(coords.len(), dim, 1.0, &mut r);
        VoxelSet::from_parts(coords, feats).unwrap()
    }

    #[test]
    fn identity_kernel_on_isolated_voxel() {
        let vs = VoxelSet::from_parts(
            vec![[4, 4, 4]],
            Mat::from_vec(1, 3, vec![1.0, -2.0, 0.5]),
        )
        .unwrap();
        let p = SubmConvParams::identity(3);
        let out = subm_conv(&vs, &p).unwrap();
        assert_eq!(out.feats(), vs.feats());
    }

    #[test]
    fn zero_kernel_gives_bias_everywhere() {
        let vs = random_voxels(20, 2, 6, 1);
        let mut p = SubmConvParams::identity(2);
        p.kernel = p.kernel.zeros_like();
        p.bias = Mat::from_vec(1, 2, vec![0.25, -1.5]);
        let out = subm_conv(&vs, &p).unwrap();
        for i in 0..out.len() {
            assert_eq!(out.feats().row(i), &[0.25, -1.5]);
        }
    }

    #[test]
    fn submanifold_property_and_dim_check() {
        let vs = random_voxels(30, 3, 6, 2);
        let mut r = rng(3);
        let p = SubmConvParams::init(3, 3, &mut r);
        let out = subm_conv(&vs, &p).unwrap();
        assert_eq!(out.coords(), vs.coords());
        let bad = SubmConvParams::init(4, 4, &mut r);
        assert!(subm_conv(&vs, &bad).is_err());
    }

    /// Brute-force dense 3D convolution restricted to active sites.
    fn dense_conv_oracle(vs: &VoxelSet, p: &SubmConvParams, extent: usize) -> Mat {
        let c_in = p.c_in;
        let mut dense = vec![0.0; extent * extent * extent * c_in];
        let at = |x: i32, y: i32, z: i32, c: usize| {
            ((x as usize * extent + y as usize) * extent + z as usize) * c_in + c
        };
        for i in 0..vs.len() {
            let co = vs.coord(i);
            for c in 0..c_in {
                dense[at(co[0], co[1], co[2], c)] = vs.feats().get(i, c);
            }
        }
        let mut out = Mat::zeros(vs.len(), p.c_out);
        for i in 0..vs.len() {
            let co = vs.coord(i);
            let row = out.row_mut(i);
            row.copy_from_slice(p.bias.row(0));
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
                        {
                            continue;
                        }
                        // Only occupied neighbors contribute.
                        if vs.lookup([nx, ny, nz]).is_none() {
                            continue;
                        }
                        let o = ((dz + 1) * 9 + (dy + 1) * 3 + (dx + 1)) as usize;
                        for ci in 0..c_in {
                            let fv = dense[at(nx, ny, nz, ci)];
                            for co_ in 0..p.c_out {
                                row[co_] += fv * p.kernel.get(o * c_in + ci, co_);
                            }
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn sparse_matches_dense_oracle() {
        let mut r = rng(7);
        for trial in 0..5 {
            let vs = random_voxels(40, 3, 6, 100 + trial);
            let p = SubmConvParams::init(3, 3, &mut r);
            let out = subm_conv(&vs, &p).unwrap();
            let oracle = dense_conv_oracle(&vs, &p, 6);
            assert!(
                max_rel_err(out.feats().as_slice(), oracle.as_slice(), 1.0) <= 1e-12,
                "trial {trial}"
            );
        }
    }

    #[test]
    fn translation_equivariance() {
        let vs = random_voxels(25, 2, 5, 9);
        let mut r = rng(10);
        let p = SubmConvParams::init(2, 2, &mut r);
        let out = subm_conv(&vs, &p).unwrap();

        let shifted: Vec<[i32; 3]> = vs.coords().iter().map(|c| [c[0] + 3, c[1] + 7, c[2] + 2]).collect();
        let vs2 = VoxelSet::from_parts(shifted, vs.feats().clone()).unwrap();
        let out2 = subm_conv(&vs2, &p).unwrap();
        assert_eq!(out.feats().as_slice(), out2.feats().as_slice());
    }

    #[test]
    fn descriptor_zero_input_zero_scale_gives_zero() {
        let vs = VoxelSet::from_parts(vec![[1, 1, 1], [2, 1, 1]], Mat::zeros(2, 3)).unwrap();
        let mut r = rng(11);
        let mut d = DescriptorParams::init(3, &mut r);
        d.conv.bias = d.conv.bias.zeros_like();
        d.norm.scale = d.norm.scale.zeros_like();
        let out = descriptor(&vs, &d).unwrap();
        assert!(out.feats().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn normalized_preactivation_has_zero_mean_unit_variance() {
        let vs = random_voxels(15, 8, 5, 13);
        let mut r = rng(14);
        let d = DescriptorParams::init(8, &mut r);
        let conv_out = subm_conv(&vs, &d.conv).unwrap();
        let (_, xhat, _) = layer_norm_cached(conv_out.feats(), &d.norm);
        for i in 0..xhat.rows() {
            let row = xhat.row(i);
            let mean: f64 = row.iter().sum::<f64>() / 8.0;
            let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 8.0;
            assert!(mean.abs() < 1e-12);
            // epsilon shrinks the variance to exactly v/(v + eps).
            let raw = conv_out.feats().row(i);
            let raw_mean: f64 = raw.iter().sum::<f64>() / 8.0;
            let raw_var: f64 =
                raw.iter().map(|v| (v - raw_mean) * (v - raw_mean)).sum::<f64>() / 8.0;
            let expect = raw_var / (raw_var + d.norm.epsilon);
            assert!((var - expect).abs() < 1e-9);
            assert!((var - 1.0).abs() < 0.05, "epsilon effect too large: {var}");
        }
    }

    #[test]
    fn descriptor_matches_primitive_composition() {
        let vs = random_voxels(20, 4, 6, 17);
        let mut r = rng(18);
        let d = DescriptorParams::init(4, &mut r);
        let out = descriptor(&vs, &d).unwrap();

        let conv_out = subm_conv(&vs, &d.conv).unwrap();
        let (normed, _, _) = layer_norm_cached(conv_out.feats(), &d.norm);
        for i in 0..vs.len() {
            for c in 0..4 {
                let expect = vs.feats().get(i, c) + gelu(normed.get(i, c));
                assert!(max_rel_err(&[out.feats().get(i, c)], &[expect], 1e-9) <= 1e-12);
            }
        }
    }

    #[test]
    fn conv_backward_single_voxel_is_center_outer_product() {
        let feats = Mat::from_vec(1, 2, vec![0.7, -0.3]);
        let vs = VoxelSet::from_parts(vec![[3, 3, 3]], feats).unwrap();
        let mut r = rng(20);
        let p = SubmConvParams::init(2, 2, &mut r);
        let grad_out = Mat::from_vec(1, 2, vec![1.0, 2.0]);
        let (_, g) = subm_conv_backward(&vs, &p, &grad_out).unwrap();
        for o in 0..27 {
            for ci in 0..2 {
                for co in 0..2 {
                    let expect = if o == CENTER_OFFSET_INDEX {
                        vs.feats().get(0, ci) * grad_out.get(0, co)
                    } else {
                        0.0
                    };
                    assert_eq!(g.kernel.get(o * 2 + ci, co), expect);
                }
            }
        }
        assert_eq!(g.bias.as_slice(), grad_out.as_slice());
    }

    #[test]
    fn descriptor_backward_zero_grad() {
        let vs = random_voxels(10, 3, 5, 23);
        let mut r = rng(24);
        let d = DescriptorParams::init(3, &mut r);
        let (gin, gd) = descriptor_backward(&vs, &d, &Mat::zeros(10, 3)).unwrap();
        assert!(gin.as_slice().iter().all(|&v| v == 0.0));
        assert!(flatten(&gd).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn descriptor_backward_matches_finite_differences() {
        let vs = random_voxels(12, 3, 5, 29);
        let mut r = rng(30);
        let d = DescriptorParams::init(3, &mut r);
        let lambda = rand_mat(12, 3, 1.0, &mut r);

        let (g_in, g_d) = descriptor_backward(&vs, &d, &lambda).unwrap();

        let fd_in = central_diff(vs.feats().as_slice(), 1e-5, |x| {
            let v2 = vs
                .with_feats(Mat::from_vec(12, 3, x.to_vec()))
                .unwrap();
            let out = descriptor(&v2, &d).unwrap();
            crate::linalg::dot(out.feats().as_slice(), lambda.as_slice())
        });
        assert!(max_rel_err(g_in.as_slice(), &fd_in, 1e-6) <= 1e-4);

        let theta = flatten(&d);
        let fd_params = central_diff(&theta, 1e-5, |x| {
            let mut d2 = d.clone();
            crate::params::load_flat(&mut d2, x).unwrap();
            let out = descriptor(&vs, &d2).unwrap();
            crate::linalg::dot(out.feats().as_slice(), lambda.as_slice())
        });
        assert!(max_rel_err(&flatten(&g_d), &fd_params, 1e-6) <= 1e-4);
    }

    #[test]
    fn gelu_is_exact_erf_form() {
        assert_eq!(gelu(0.0), 0.0);
        // gelu(1) = 0.5 * (1 + erf(1/sqrt(2))) = Phi(1) in closed form.
        let expect = 0.841344746068543; // Phi(1), standard normal CDF
        assert!((gelu(1.0) - expect).abs() < 1e-12);
        let fd = (gelu(0.3 + 1e-6) - gelu(0.3 - 1e-6)) / 2e-6;
        assert!((gelu_prime(0.3) - fd).abs() < 1e-9);
    }
}
