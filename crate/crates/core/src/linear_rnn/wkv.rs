//! WKV recurrence: exponentially time-decayed weighted average of past
//! values with a bonus for the current token, gated by a receptance sigmoid.
//!
//! Semantics (per channel, unnormalized form):
//! `wkv_t = (a_t + e^{u+k_t} v_t) / (b_t + e^{u+k_t})` with
//! `a_{t+1} = e^w a_t + e^{k_t} v_t`, `b_{t+1} = e^w b_t + e^{k_t}`,
//! `y_t = σ(r_t) ⊙ wkv_t`, output `W_out y_t`.
//!
//! The forward pass keeps `(a, b)` scaled by a running max exponent so the
//! scan cannot overflow however long the sequence is. The backward pass
//! differentiates the (mathematically identical) unnormalized form, which is
//! safe at training magnitudes in double precision.

use rand::Rng;

use super::sigmoid;
use crate::linalg::{matvec, matvec_t, outer_acc, Mat};
use crate::params::{join, ParamSet};

#[derive(Clone, Debug)]
pub struct WkvParams {
    pub w_k: Mat, // C×C
    pub w_v: Mat, // C×C
    pub w_r: Mat, // C×C
    /// Per-channel time decay `w < 0` (state multiplies by `e^w` each step).
    pub decay: Mat, // 1×C
    /// Per-channel current-token bonus `u`.
    pub bonus: Mat, // 1×C
}

impl WkvParams {
    pub fn init(dim_c: usize, rng: &mut impl Rng) -> Self {
        let decay = Mat::from_fn(1, dim_c, |_, c| -5.0 + c as f64 / dim_c as f64);
        WkvParams {
            w_k: Mat::uniform_init(dim_c, dim_c, dim_c, rng),
            w_v: Mat::uniform_init(dim_c, dim_c, dim_c, rng),
            w_r: Mat::uniform_init(dim_c, dim_c, dim_c, rng),
            decay,
            bonus: Mat::filled(1, dim_c, 0.5),
        }
    }

    pub fn zeros_like(&self) -> Self {
        WkvParams {
            w_k: self.w_k.zeros_like(),
            w_v: self.w_v.zeros_like(),
            w_r: self.w_r.zeros_like(),
            decay: self.decay.zeros_like(),
            bonus: self.bonus.zeros_like(),
        }
    }

    /// Running-max stabilized scan. State per channel: `(num, den)` scaled by
    /// `e^{max_exp}`, with `max_exp = -inf` for the empty state.
    pub fn forward(
        &self,
        w_out: &Mat,
        seq: &Mat,
        num: &mut [f64],
        den: &mut [f64],
        max_exp: &mut [f64],
        out: &mut Mat,
    ) {
        let dim_c = self.w_k.rows();
        for t in 0..seq.rows() {
            let u_row = seq.row(t);
            let k = matvec(&self.w_k, u_row);
            let v = matvec(&self.w_v, u_row);
            let r = matvec(&self.w_r, u_row);
            let mut y = vec![0.0; dim_c];
            for c in 0..dim_c {
                let w = self.decay.get(0, c);
                let u = self.bonus.get(0, c);

                // Readout with the bonus applied to the current token.
                let q1 = max_exp[c].max(u + k[c]);
                let e1 = (max_exp[c] - q1).exp();
                let e2 = (u + k[c] - q1).exp();
                let wkv = (e1 * num[c] + e2 * v[c]) / (e1 * den[c] + e2);
                y[c] = sigmoid(r[c]) * wkv;

                // Decayed state update.
                let q2 = (max_exp[c] + w).max(k[c]);
                let e3 = (max_exp[c] + w - q2).exp();
                let e4 = (k[c] - q2).exp();
                num[c] = e3 * num[c] + e4 * v[c];
                den[c] = e3 * den[c] + e4;
                max_exp[c] = q2;
            }
            out.copy_row_from(t, &matvec(w_out, &y));
        }
    }

    pub fn backward(
        &self,
        w_out: &Mat,
        seq: &Mat,
        grad_out: &Mat,
        g: &mut WkvParams,
        g_w_out: &mut Mat,
    ) -> Mat {
        let t_len = seq.rows();
        let dim_c = self.w_k.rows();

        // Forward recompute in the unnormalized form, caching pre-update
        // states.
        let mut ks = Mat::zeros(t_len, dim_c);
        let mut vs = Mat::zeros(t_len, dim_c);
        let mut rs = Mat::zeros(t_len, dim_c);
        let mut a_pre = Mat::zeros(t_len, dim_c);
        let mut b_pre = Mat::zeros(t_len, dim_c);
        let mut ys = Mat::zeros(t_len, dim_c);
        {
            let mut a = vec![0.0; dim_c];
            let mut b = vec![0.0; dim_c];
            for t in 0..t_len {
                let u_row = seq.row(t);
                let k = matvec(&self.w_k, u_row);
                let v = matvec(&self.w_v, u_row);
                let r = matvec(&self.w_r, u_row);
                for c in 0..dim_c {
                    a_pre.set(t, c, a[c]);
                    b_pre.set(t, c, b[c]);
                    let p = (self.bonus.get(0, c) + k[c]).exp();
                    let wkv = (a[c] + p * v[c]) / (b[c] + p);
                    ys.set(t, c, sigmoid(r[c]) * wkv);
                    let e = k[c].exp();
                    let w = self.decay.get(0, c).exp();
                    a[c] = w * a[c] + e * v[c];
                    b[c] = w * b[c] + e;
                }
                ks.copy_row_from(t, &k);
                vs.copy_row_from(t, &v);
                rs.copy_row_from(t, &r);
            }
        }

        let mut grad_seq = Mat::zeros(t_len, dim_c);
        let mut g_a_next = vec![0.0; dim_c];
        let mut g_b_next = vec![0.0; dim_c];
        for t in (0..t_len).rev() {
            let go_row = grad_out.row(t);
            outer_acc(g_w_out, go_row, ys.row(t));
            let g_y = matvec_t(w_out, go_row);

            let k = ks.row(t);
            let v = vs.row(t);
            let r = rs.row(t);
            let mut g_k = vec![0.0; dim_c];
            let mut g_v = vec![0.0; dim_c];
            let mut g_r = vec![0.0; dim_c];
            for c in 0..dim_c {
                let a = a_pre.get(t, c);
                let b = b_pre.get(t, c);
                let p = (self.bonus.get(0, c) + k[c]).exp();
                let e = k[c].exp();
                let w = self.decay.get(0, c).exp();
                let num = a + p * v[c];
                let den = b + p;
                let wkv = num / den;
                let sr = sigmoid(r[c]);

                g_r[c] = g_y[c] * wkv * sr * (1.0 - sr);
                let g_wkv = g_y[c] * sr;
                let g_num = g_wkv / den;
                let g_den = -g_wkv * wkv / den;

                let g_a = g_num + w * g_a_next[c];
                let g_b = g_den + w * g_b_next[c];
                let g_p = g_num * v[c] + g_den;
                g_v[c] = g_num * p + g_a_next[c] * e;
                g_k[c] = g_p * p + (g_a_next[c] * v[c] + g_b_next[c]) * e;
                g.bonus.set(0, c, g.bonus.get(0, c) + g_p * p);
                g.decay
                    .set(0, c, g.decay.get(0, c) + w * (g_a_next[c] * a + g_b_next[c] * b));

                g_a_next[c] = g_a;
                g_b_next[c] = g_b;
            }

            let u_row = seq.row(t);
            outer_acc(&mut g.w_k, &g_k, u_row);
            outer_acc(&mut g.w_v, &g_v, u_row);
            outer_acc(&mut g.w_r, &g_r, u_row);
            let mut g_u = matvec_t(&self.w_k, &g_k);
            for (a, b) in g_u.iter_mut().zip(matvec_t(&self.w_v, &g_v)) {
                *a += b;
            }
            for (a, b) in g_u.iter_mut().zip(matvec_t(&self.w_r, &g_r)) {
                *a += b;
            }
            grad_seq.copy_row_from(t, &g_u);
        }
        grad_seq
    }
}

impl ParamSet for WkvParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Mat)) {
        f(&join(prefix, "w_k"), &self.w_k);
        f(&join(prefix, "w_v"), &self.w_v);
        f(&join(prefix, "w_r"), &self.w_r);
        f(&join(prefix, "decay"), &self.decay);
        f(&join(prefix, "bonus"), &self.bonus);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Mat)) {
        f(&join(prefix, "w_k"), &mut self.w_k);
        f(&join(prefix, "w_v"), &mut self.w_v);
        f(&join(prefix, "w_r"), &mut self.w_r);
        f(&join(prefix, "decay"), &mut self.decay);
        f(&join(prefix, "bonus"), &mut self.bonus);
    }
}
