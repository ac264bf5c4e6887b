//! Single-head retention: decayed outer-product state with query readout.
//!
//! `S_t = γ S_{t-1} + k_t v_tᵀ`, `y_t = S_tᵀ q_t`, output `W_out y_t`.

use rand::Rng;

use crate::linalg::{matvec, matvec_t, outer_acc, Mat};
use crate::params::{join, ParamSet};

#[derive(Clone, Debug)]
pub struct RetentionParams {
    pub w_q: Mat, // S×C
    pub w_k: Mat, // S×C
    pub w_v: Mat, // C×C
    /// Fixed decay in (0,1); stored raw so its gradient is directly
    /// comparable to finite differences.
    pub gamma: Mat, // 1×1
}

impl RetentionParams {
    pub fn init(dim_c: usize, dim_s: usize, rng: &mut impl Rng) -> Self {
        RetentionParams {
            w_q: Mat::uniform_init(dim_s, dim_c, dim_c, rng),
            w_k: Mat::uniform_init(dim_s, dim_c, dim_c, rng),
            w_v: Mat::uniform_init(dim_c, dim_c, dim_c, rng),
            gamma: Mat::filled(1, 1, 1.0 - 2.0f64.powi(-5)),
        }
    }

    pub fn zeros_like(&self) -> Self {
        RetentionParams {
            w_q: self.w_q.zeros_like(),
            w_k: self.w_k.zeros_like(),
            w_v: self.w_v.zeros_like(),
            gamma: self.gamma.zeros_like(),
        }
    }

    pub fn forward(&self, w_out: &Mat, seq: &Mat, state: &mut Mat, out: &mut Mat) {
        let gamma = self.gamma.get(0, 0);
        let (dim_s, dim_c) = (self.w_q.rows(), self.w_v.rows());
        for t in 0..seq.rows() {
            let u = seq.row(t);
            let q = matvec(&self.w_q, u);
            let k = matvec(&self.w_k, u);
            let v = matvec(&self.w_v, u);
            let mut y = vec![0.0; dim_c];
            for s in 0..dim_s {
                let row = state.row_mut(s);
                for c in 0..dim_c {
                    row[c] = gamma * row[c] + k[s] * v[c];
                }
                for c in 0..dim_c {
                    y[c] += q[s] * row[c];
                }
            }
            out.copy_row_from(t, &matvec(w_out, &y));
        }
    }

    pub fn backward(
        &self,
        w_out: &Mat,
        seq: &Mat,
        grad_out: &Mat,
        g: &mut RetentionParams,
        g_w_out: &mut Mat,
    ) -> Mat {
        let t_len = seq.rows();
        let gamma = self.gamma.get(0, 0);
        let (dim_s, dim_c) = (self.w_q.rows(), self.w_v.rows());

        let mut qs = Mat::zeros(t_len, dim_s);
        let mut ks = Mat::zeros(t_len, dim_s);
        let mut vs = Mat::zeros(t_len, dim_c);
        let mut ys = Mat::zeros(t_len, dim_c);
        let mut states = vec![0.0; t_len * dim_s * dim_c];
        {
            let mut state = Mat::zeros(dim_s, dim_c);
            for t in 0..t_len {
                let u = seq.row(t);
                let q = matvec(&self.w_q, u);
                let k = matvec(&self.w_k, u);
                let v = matvec(&self.w_v, u);
                let mut y = vec![0.0; dim_c];
                for s in 0..dim_s {
                    let row = state.row_mut(s);
                    for c in 0..dim_c {
                        row[c] = gamma * row[c] + k[s] * v[c];
                        y[c] += q[s] * row[c];
                    }
                }
                states[t * dim_s * dim_c..(t + 1) * dim_s * dim_c]
                    .copy_from_slice(state.as_slice());
                qs.copy_row_from(t, &q);
                ks.copy_row_from(t, &k);
                vs.copy_row_from(t, &v);
                ys.copy_row_from(t, &y);
            }
        }

        let mut grad_seq = Mat::zeros(t_len, dim_c);
        let mut g_state = vec![0.0; dim_s * dim_c];
        let mut g_gamma = 0.0;
        for t in (0..t_len).rev() {
            let go_row = grad_out.row(t);
            outer_acc(g_w_out, go_row, ys.row(t));
            let g_y = matvec_t(w_out, go_row);

            let q = qs.row(t);
            let k = ks.row(t);
            let v = vs.row(t);
            let s_t = &states[t * dim_s * dim_c..(t + 1) * dim_s * dim_c];

            let mut g_q = vec![0.0; dim_s];
            let mut g_k = vec![0.0; dim_s];
            let mut g_v = vec![0.0; dim_c];
            for s in 0..dim_s {
                let row = &s_t[s * dim_c..(s + 1) * dim_c];
                let grow = &mut g_state[s * dim_c..(s + 1) * dim_c];
                let mut gq = 0.0;
                for c in 0..dim_c {
                    gq += row[c] * g_y[c];
                    grow[c] += q[s] * g_y[c];
                }
                g_q[s] = gq;
                let s_prev = if t > 0 {
                    &states[(t - 1) * dim_s * dim_c + s * dim_c..(t - 1) * dim_s * dim_c + (s + 1) * dim_c]
                } else {
                    &[] as &[f64]
                };
                for c in 0..dim_c {
                    let gs = grow[c];
                    if t > 0 {
                        g_gamma += gs * s_prev[c];
                    }
                    g_k[s] += gs * v[c];
                    g_v[c] += gs * k[s];
                    grow[c] = gs * gamma;
                }
            }

            let u = seq.row(t);
            outer_acc(&mut g.w_q, &g_q, u);
            outer_acc(&mut g.w_k, &g_k, u);
            outer_acc(&mut g.w_v, &g_v, u);
            let mut g_u = matvec_t(&self.w_q, &g_q);
            for (a, b) in g_u.iter_mut().zip(matvec_t(&self.w_k, &g_k)) {
                *a += b;
            }
            for (a, b) in g_u.iter_mut().zip(matvec_t(&self.w_v, &g_v)) {
                *a += b;
            }
            grad_seq.copy_row_from(t, &g_u);
        }
        g.gamma.set(0, 0, g.gamma.get(0, 0) + g_gamma);
        grad_seq
    }
}

impl ParamSet for RetentionParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Mat)) {
        f(&join(prefix, "w_q"), &self.w_q);
        f(&join(prefix, "w_k"), &self.w_k);
        f(&join(prefix, "w_v"), &self.w_v);
        f(&join(prefix, "gamma"), &self.gamma);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Mat)) {
        f(&join(prefix, "w_q"), &mut self.w_q);
        f(&join(prefix, "w_k"), &mut self.w_k);
        f(&join(prefix, "w_v"), &mut self.w_v);
        f(&join(prefix, "gamma"), &mut self.gamma);
    }
}
