//! Minimal BEV center-heatmap head: scatter-max projection over the height
//! axis, a 3×3 dense convolution with GELU, and a 1×1 projection producing a
//! class heatmap plus box regression channels. Loss is a penalty-reduced
//! Gaussian focal term on the heatmap and an L1 term on box channels at
//! ground-truth centers.

use rand::Rng;

use crate::error::Result;
use crate::harness::scene::{GtBox, SyntheticScene};
use crate::linalg::Mat;
use crate::params::{join, ParamSet};
use crate::spatial::{gelu, gelu_prime};
use crate::voxelgrid::{GridGeometry, Point, VoxelSet};

/// Box regression channels: (dx, dy, z, log l, log w, log h, sin yaw,
/// cos yaw).
pub const BOX_CHANNELS: usize = 8;
pub const BOX_LOSS_WEIGHT: f64 = 0.25;
/// A cell counts as a detection peak when its sigmoid response clears this.
pub const PEAK_THRESHOLD: f64 = 0.5;

const CONV_OFFSETS: [[i32; 2]; 9] = [
    [-1, -1],
    [-1, 0],
    [-1, 1],
    [0, -1],
    [0, 0],
    [0, 1],
    [1, -1],
    [1, 0],
    [1, 1],
];

#[derive(Clone, Debug)]
pub struct HeadParams {
    /// 3×3 conv over the BEV grid: `(9*C)×C`.
    pub conv1: Mat,
    pub bias1: Mat, // 1×C
    /// 1×1 projection: `C×(1+BOX_CHANNELS)`.
    pub conv2: Mat,
    pub bias2: Mat, // 1×(1+BOX_CHANNELS)
    pub dim_c: usize,
}

impl HeadParams {
    pub fn init(dim_c: usize, rng: &mut impl Rng) -> Self {
        HeadParams {
            conv1: Mat::uniform_init(9 * dim_c, dim_c, 9 * dim_c, rng),
            bias1: Mat::zeros(1, dim_c),
            conv2: Mat::uniform_init(dim_c, 1 + BOX_CHANNELS, dim_c, rng),
            bias2: Mat::zeros(1, 1 + BOX_CHANNELS),
            dim_c,
        }
    }

    pub fn zeros_like(&self) -> Self {
        HeadParams {
            conv1: self.conv1.zeros_like(),
            bias1: self.bias1.zeros_like(),
            conv2: self.conv2.zeros_like(),
            bias2: self.bias2.zeros_like(),
            dim_c: self.dim_c,
        }
    }
}

impl ParamSet for HeadParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Mat)) {
        f(&join(prefix, "conv1"), &self.conv1);
        f(&join(prefix, "bias1"), &self.bias1);
        f(&join(prefix, "conv2"), &self.conv2);
        f(&join(prefix, "bias2"), &self.bias2);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Mat)) {
        f(&join(prefix, "conv1"), &mut self.conv1);
        f(&join(prefix, "bias1"), &mut self.bias1);
        f(&join(prefix, "conv2"), &mut self.conv2);
        f(&join(prefix, "bias2"), &mut self.bias2);
    }
}

/// Head activations cached for the backward pass.
pub struct HeadCache {
    bev: Mat,          // (H*W)×C scatter-max projection
    argmax: Vec<i64>,  // (H*W)*C source voxel per cell-channel, -1 if empty
    pre_act: Mat,      // conv1 output before GELU
    hidden: Mat,       // after GELU
    h: usize,
    w: usize,
}

pub struct HeadOutput {
    /// Heatmap logits, `H×W`.
    pub heatmap: Mat,
    /// Box channels per cell, `(H*W)×BOX_CHANNELS`.
    pub boxes: Mat,
}

/// Scatter-max BEV projection: per `(x, y)` column and channel, the max
/// feature over z; empty cells read zero. Ties keep the lowest voxel index.
fn bev_project(vs: &VoxelSet, h: usize, w: usize) -> (Mat, Vec<i64>) {
    let c_dim = vs.dim();
    let mut bev = Mat::zeros(h * w, c_dim);
    let mut argmax = vec![-1i64; h * w * c_dim];
    for (i, &co) in vs.coords().iter().enumerate() {
        let cell = co[0] as usize * w + co[1] as usize;
        let row = vs.feats().row(i);
        for c in 0..c_dim {
            let slot = cell * c_dim + c;
            if argmax[slot] < 0 || row[c] > bev.get(cell, c) {
                bev.set(cell, c, row[c]);
                argmax[slot] = i as i64;
            }
        }
    }
    (bev, argmax)
}

pub fn head_forward(
    head: &HeadParams,
    vs: &VoxelSet,
    geom: &GridGeometry,
) -> Result<(HeadOutput, HeadCache)> {
    let [h, w, _] = geom.extents();
    let (h, w) = (h as usize, w as usize);
    let c_dim = head.dim_c;
    let (bev, argmax) = bev_project(vs, h, w);

    // 3×3 conv with zero padding, then GELU.
    let mut pre_act = Mat::zeros(h * w, c_dim);
    for x in 0..h {
        for y in 0..w {
            let cell = x * w + y;
            let out_row = pre_act.row_mut(cell);
            out_row.copy_from_slice(head.bias1.row(0));
            for (o, off) in CONV_OFFSETS.iter().enumerate() {
                let (nx, ny) = (x as i32 + off[0], y as i32 + off[1]);
                if nx < 0 || ny < 0 || nx >= h as i32 || ny >= w as i32 {
                    continue;
                }
                let src = bev.row(nx as usize * w + ny as usize);
                for ci in 0..c_dim {
                    let k = head.conv1.row(o * c_dim + ci);
                    let v = src[ci];
                    if v != 0.0 {
                        for (acc, &kv) in out_row.iter_mut().zip(k) {
                            *acc += v * kv;
                        }
                    }
                }
            }
        }
    }
    let mut hidden = Mat::zeros(h * w, c_dim);
    for i in 0..h * w {
        for c in 0..c_dim {
            hidden.set(i, c, gelu(pre_act.get(i, c)));
        }
    }

    // 1×1 projection to heatmap + box channels.
    let mut heatmap = Mat::zeros(h, w);
    let mut boxes = Mat::zeros(h * w, BOX_CHANNELS);
    for cell in 0..h * w {
        let hid = hidden.row(cell);
        for out_c in 0..1 + BOX_CHANNELS {
            let mut acc = head.bias2.get(0, out_c);
            for ci in 0..c_dim {
                acc += hid[ci] * head.conv2.get(ci, out_c);
            }
            if out_c == 0 {
                heatmap.set(cell / w, cell % w, acc);
            } else {
                boxes.set(cell, out_c - 1, acc);
            }
        }
    }

    Ok((
        HeadOutput { heatmap, boxes },
        HeadCache {
            bev,
            argmax,
            pre_act,
            hidden,
            h,
            w,
        },
    ))
}

/// Backward through the head; returns the gradient on the voxel features.
pub fn head_backward(
    head: &HeadParams,
    cache: &HeadCache,
    vs_len: usize,
    g_heatmap: &Mat,
    g_boxes: &Mat,
    grads: &mut HeadParams,
) -> Result<Mat> {
    let (h, w, c_dim) = (cache.h, cache.w, head.dim_c);

    // 1×1 projection backward.
    let mut g_hidden = Mat::zeros(h * w, c_dim);
    for cell in 0..h * w {
        let hid = cache.hidden.row(cell);
        for out_c in 0..1 + BOX_CHANNELS {
            let g = if out_c == 0 {
                g_heatmap.get(cell / w, cell % w)
            } else {
                g_boxes.get(cell, out_c - 1)
            };
            if g == 0.0 {
                continue;
            }
            grads.bias2.set(0, out_c, grads.bias2.get(0, out_c) + g);
            let gh = g_hidden.row_mut(cell);
            for ci in 0..c_dim {
                grads
                    .conv2
                    .set(ci, out_c, grads.conv2.get(ci, out_c) + g * hid[ci]);
                gh[ci] += g * head.conv2.get(ci, out_c);
            }
        }
    }

    // GELU backward.
    let mut g_pre = Mat::zeros(h * w, c_dim);
    for cell in 0..h * w {
        for c in 0..c_dim {
            g_pre.set(
                cell,
                c,
                g_hidden.get(cell, c) * gelu_prime(cache.pre_act.get(cell, c)),
            );
        }
    }

    // 3×3 conv backward.
    let mut g_bev = Mat::zeros(h * w, c_dim);
    for x in 0..h {
        for y in 0..w {
            let cell = x * w + y;
            let g_row = g_pre.row(cell);
            for (b, &g) in grads.bias1.row_mut(0).iter_mut().zip(g_row) {
                *b += g;
            }
            for (o, off) in CONV_OFFSETS.iter().enumerate() {
                let (nx, ny) = (x as i32 + off[0], y as i32 + off[1]);
                if nx < 0 || ny < 0 || nx >= h as i32 || ny >= w as i32 {
                    continue;
                }
                let src_cell = nx as usize * w + ny as usize;
                let src = cache.bev.row(src_cell);
                let gb = g_bev.row_mut(src_cell);
                for ci in 0..c_dim {
                    let krow = head.conv1.row(o * c_dim + ci);
                    let gkrow = grads.conv1.row_mut(o * c_dim + ci);
                    let mut acc = 0.0;
                    for (co, (&kv, gk)) in krow.iter().zip(gkrow.iter_mut()).enumerate() {
                        acc += g_row[co] * kv;
                        *gk += g_row[co] * src[ci];
                    }
                    gb[ci] += acc;
                }
            }
        }
    }

    // Scatter-max backward: route each cell-channel gradient to its argmax
    // voxel.
    let mut g_feats = Mat::zeros(vs_len, c_dim);
    for cell in 0..h * w {
        for c in 0..c_dim {
            let src = cache.argmax[cell * c_dim + c];
            if src >= 0 {
                let v = src as usize;
                g_feats.set(v, c, g_feats.get(v, c) + g_bev.get(cell, c));
            }
        }
    }
    Ok(g_feats)
}

/// Ground-truth BEV targets.
pub struct BevTargets {
    /// Gaussian heatmap in `[0, 1]`, `H×W`.
    pub heatmap: Mat,
    /// `(cell, box channel targets)` per ground-truth box whose center lies
    /// in range.
    pub boxes: Vec<(usize, [f64; BOX_CHANNELS])>,
    /// Center cells `(x, y)` per in-range box.
    pub centers: Vec<(usize, usize)>,
}

pub fn build_targets(scene: &SyntheticScene, geom: &GridGeometry) -> BevTargets {
    let [h, w, _] = geom.extents();
    let (h, w) = (h as usize, w as usize);
    let mut heatmap = Mat::zeros(h, w);
    let mut boxes = Vec::new();
    let mut centers = Vec::new();
    for b in &scene.boxes {
        let Some(cell) = geom.cell_of(&Point {
            x: b.center[0],
            y: b.center[1],
            z: b.center[2],
            intensity: 0.0,
        }) else {
            continue;
        };
        let (cx, cy) = (cell[0] as usize, cell[1] as usize);
        centers.push((cx, cy));
        boxes.push((cx * w + cy, box_targets(b, geom, cell)));

        // Gaussian splat with size-derived radius, peak exactly 1.
        let lx = b.size[0] / geom.voxel_size[0];
        let ly = b.size[1] / geom.voxel_size[1];
        let sigma = ((lx * lx + ly * ly).sqrt() / 6.0).max(1.0);
        let radius = (3.0 * sigma).ceil() as i32;
        for dx in -radius..=radius {
            for dy in -radius..=radius {
                let (nx, ny) = (cx as i32 + dx, cy as i32 + dy);
                if nx < 0 || ny < 0 || nx >= h as i32 || ny >= w as i32 {
                    continue;
                }
                let g = (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp();
                let cur = heatmap.get(nx as usize, ny as usize);
                if g > cur {
                    heatmap.set(nx as usize, ny as usize, g);
                }
            }
        }
    }
    BevTargets {
        heatmap,
        boxes,
        centers,
    }
}

fn box_targets(b: &GtBox, geom: &GridGeometry, cell: [i32; 3]) -> [f64; BOX_CHANNELS] {
    let center = geom.cell_center([cell[0], cell[1], cell[2]]);
    [
        (b.center[0] - center[0]) / geom.voxel_size[0],
        (b.center[1] - center[1]) / geom.voxel_size[1],
        b.center[2],
        b.size[0].ln(),
        b.size[1].ln(),
        b.size[2].ln(),
        b.yaw.sin(),
        b.yaw.cos(),
    ]
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Penalty-reduced Gaussian focal loss on the heatmap plus L1 box
/// regression; returns the loss and analytic gradients on both predictions.
///
/// The focal term is evaluated through `softplus`/`sigmoid(±z)` so it stays
/// exact for saturated logits: `-ln p = softplus(-z)` and
/// `-ln(1-p) = softplus(z)` never lose precision the way `1 - sigmoid(z)`
/// does.
pub fn loss(pred: &HeadOutput, targets: &BevTargets) -> (f64, Mat, Mat) {
    let (h, w) = (pred.heatmap.rows(), pred.heatmap.cols());
    let mut g_heat = Mat::zeros(h, w);
    let n_pos = targets
        .heatmap
        .as_slice()
        .iter()
        .filter(|&&y| y == 1.0)
        .count()
        .max(1) as f64;

    let mut focal = 0.0;
    for x in 0..h {
        for y in 0..w {
            let z = pred.heatmap.get(x, y);
            let p = sigmoid(z);
            let q = sigmoid(-z);
            let t = targets.heatmap.get(x, y);
            let (l, dl_dz) = if t == 1.0 {
                let sp = softplus(-z);
                (q * q * sp, -q * q * (2.0 * p * sp + q))
            } else {
                let red = (1.0 - t).powi(4);
                let sp = softplus(z);
                (red * p * p * sp, red * p * p * (2.0 * q * sp + p))
            };
            focal += l;
            g_heat.set(x, y, dl_dz / n_pos);
        }
    }
    focal /= n_pos;

    let mut g_boxes = Mat::zeros(pred.boxes.rows(), BOX_CHANNELS);
    let mut l1 = 0.0;
    if !targets.boxes.is_empty() {
        let norm = (targets.boxes.len() * BOX_CHANNELS) as f64;
        for &(cell, ref t) in &targets.boxes {
            for c in 0..BOX_CHANNELS {
                let diff = pred.boxes.get(cell, c) - t[c];
                l1 += diff.abs() / norm;
                g_boxes.set(cell, c, BOX_LOSS_WEIGHT * diff.signum() / norm);
            }
        }
    }

    (focal + BOX_LOSS_WEIGHT * l1, g_heat, g_boxes)
}

/// Fraction of ground-truth centers with a heatmap peak within Chebyshev
/// radius 1. A peak is a cell whose sigmoid response reaches
/// [`PEAK_THRESHOLD`] and is >= all 8 neighbors. Vacuously 1 with no boxes.
pub fn center_recall(heatmap_logits: &Mat, centers: &[(usize, usize)]) -> f64 {
    if centers.is_empty() {
        return 1.0;
    }
    let (h, w) = (heatmap_logits.rows(), heatmap_logits.cols());
    let is_peak = |x: usize, y: usize| -> bool {
        let v = heatmap_logits.get(x, y);
        if sigmoid(v) < PEAK_THRESHOLD {
            return false;
        }
        for dx in -1i32..=1 {
            for dy in -1i32..=1 {
                if dx == 0 && dy == 0 {
                    continue;
                }
                let (nx, ny) = (x as i32 + dx, y as i32 + dy);
                if nx >= 0 && ny >= 0 && nx < h as i32 && ny < w as i32
                    && heatmap_logits.get(nx as usize, ny as usize) > v
                {
                    return false;
                }
            }
        }
        true
    };
    let mut hits = 0usize;
    for &(cx, cy) in centers {
        let mut hit = false;
        'search: for dx in -1i32..=1 {
            for dy in -1i32..=1 {
                let (nx, ny) = (cx as i32 + dx, cy as i32 + dy);
                if nx >= 0 && ny >= 0 && nx < h as i32 && ny < w as i32 && is_peak(nx as usize, ny as usize)
                {
                    hit = true;
                    break 'search;
                }
            }
        }
        if hit {
            hits += 1;
        }
    }
    hits as f64 / centers.len() as f64
}
