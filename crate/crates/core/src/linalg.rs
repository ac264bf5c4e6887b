//! Minimal row-major `f64` matrix used for feature tables and parameters.
//!
//! Deliberately small: the crate hand-writes its forward/backward passes, so
//! all it needs are dense storage, a few BLAS-level-2 helpers, and
//! deterministic initialization.

use rand::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Mat {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "shape/data mismatch");
        Mat { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Mat { rows, cols, data }
    }

    /// Variance-preserving uniform init on `[-sqrt(3/fan_in), sqrt(3/fan_in)]`.
    pub fn uniform_init(rows: usize, cols: usize, fan_in: usize, rng: &mut impl Rng) -> Self {
        let bound = (3.0 / fan_in.max(1) as f64).sqrt();
        Mat::from_fn(rows, cols, |_, _| rng.gen_range(-bound..bound))
    }

    pub fn zeros_like(&self) -> Self {
        Mat::zeros(self.rows, self.cols)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn copy_row_from(&mut self, r: usize, src: &[f64]) {
        self.row_mut(r).copy_from_slice(src);
    }

    /// `self += other`, shapes must match.
    pub fn add_assign(&mut self, other: &Mat) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// `self += s * other`.
    pub fn add_scaled(&mut self, other: &Mat, s: f64) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    pub fn first_non_finite(&self) -> Option<(usize, usize)> {
        for r in 0..self.rows {
            for c in 0..self.cols {
                if !self.get(r, c).is_finite() {
                    return Some((r, c));
                }
            }
        }
        None
    }
}

/// `w * x` for `w: (m×n)`, `x: n` — returns length-`m` vector.
pub fn matvec(w: &Mat, x: &[f64]) -> Vec<f64> {
    debug_assert_eq!(w.cols, x.len());
    let mut out = vec![0.0; w.rows];
    for (r, o) in out.iter_mut().enumerate() {
        let row = w.row(r);
        let mut acc = 0.0;
        for (a, b) in row.iter().zip(x) {
            acc += a * b;
        }
        *o = acc;
    }
    out
}

/// `wᵀ * g` for `w: (m×n)`, `g: m` — returns length-`n` vector.
pub fn matvec_t(w: &Mat, g: &[f64]) -> Vec<f64> {
    debug_assert_eq!(w.rows, g.len());
    let mut out = vec![0.0; w.cols];
    for (r, &gv) in g.iter().enumerate() {
        let row = w.row(r);
        for (o, a) in out.iter_mut().zip(row) {
            *o += gv * a;
        }
    }
    out
}

/// Accumulate the outer product: `gw += g xᵀ` with `gw: (m×n)`.
pub fn outer_acc(gw: &mut Mat, g: &[f64], x: &[f64]) {
    debug_assert_eq!(gw.rows, g.len());
    debug_assert_eq!(gw.cols, x.len());
    for (r, &gv) in g.iter().enumerate() {
        let row = gw.row_mut(r);
        for (o, b) in row.iter_mut().zip(x) {
            *o += gv * b;
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
