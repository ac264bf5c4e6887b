//! Synthetic scenes: oriented boxes with surface-sampled points plus uniform
//! clutter, deterministic per seed.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::voxelgrid::{GridGeometry, Point, PointCloud};

#[derive(Clone, Copy, Debug)]
pub struct GtBox {
    pub center: [f64; 3],
    /// (length, width, height) in meters.
    pub size: [f64; 3],
    pub yaw: f64,
    pub class_id: usize,
}

#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub cloud: PointCloud,
    pub boxes: Vec<GtBox>,
}

const SURFACE_POINTS_PER_BOX: usize = 60;
const CLUTTER_POINTS: usize = 150;

/// Deterministic per seed. Every box contributes its exact center point (so
/// the center cell is always occupied) plus surface samples; clutter points
/// are uniform over the whole range with a lower intensity band.
pub fn make_scene(seed: u64, n_objects: usize, geom: &GridGeometry) -> SyntheticScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::new();
    let mut boxes = Vec::with_capacity(n_objects);

    let span: Vec<f64> = (0..3).map(|a| geom.range_max[a] - geom.range_min[a]).collect();
    for _ in 0..n_objects {
        let margin_xy = 0.15;
        let center = [
            geom.range_min[0] + span[0] * rng.gen_range(margin_xy..1.0 - margin_xy),
            geom.range_min[1] + span[1] * rng.gen_range(margin_xy..1.0 - margin_xy),
            geom.range_min[2] + span[2] * rng.gen_range(0.35..0.65),
        ];
        let size = [
            rng.gen_range(1.0..2.4),
            rng.gen_range(0.8..1.6),
            rng.gen_range(0.8..1.4),
        ];
        let yaw = rng.gen_range(0.0..std::f64::consts::PI);
        let b = GtBox {
            center,
            size,
            yaw,
            class_id: 0,
        };
        boxes.push(b);

        points.push(Point {
            x: center[0],
            y: center[1],
            z: center[2],
            intensity: rng.gen_range(0.5..1.0),
        });
        for _ in 0..SURFACE_POINTS_PER_BOX {
            points.push(sample_box_surface(&b, &mut rng));
        }
    }

    for _ in 0..CLUTTER_POINTS {
        points.push(Point {
            x: geom.range_min[0] + span[0] * rng.gen::<f64>(),
            y: geom.range_min[1] + span[1] * rng.gen::<f64>(),
            z: geom.range_min[2] + span[2] * rng.gen::<f64>(),
            intensity: rng.gen_range(0.0..0.3),
        });
    }

    SyntheticScene {
        cloud: PointCloud { points },
        boxes,
    }
}

fn sample_box_surface(b: &GtBox, rng: &mut impl Rng) -> Point {
    // Pick a face weighted uniformly, sample in local frame, rotate by yaw.
    let (l, w, h) = (b.size[0], b.size[1], b.size[2]);
    let face = rng.gen_range(0..6);
    let (mut x, mut y, mut z) = (
        rng.gen_range(-0.5..0.5) * l,
        rng.gen_range(-0.5..0.5) * w,
        rng.gen_range(-0.5..0.5) * h,
    );
    match face {
        0 => x = 0.5 * l,
        1 => x = -0.5 * l,
        2 => y = 0.5 * w,
        3 => y = -0.5 * w,
        4 => z = 0.5 * h,
        _ => z = -0.5 * h,
    }
    let (s, c) = b.yaw.sin_cos();
    Point {
        x: b.center[0] + c * x - s * y,
        y: b.center[1] + s * x + c * y,
        z: b.center[2] + z,
        intensity: rng.gen_range(0.5..1.0),
    }
}
