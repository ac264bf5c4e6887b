//! Linear group RNN operators: selective state-space scan, retention, and
//! WKV time-decay recurrence, each with a bidirectional wrapper.
//!
//! All three share the same contract: a causal recurrence over a `T×C`
//! sequence with `O(T·C·S)` work, an exact reverse-time vector-Jacobian
//! product, and a streaming form that carries state across chunks so that
//! chunked evaluation reproduces the full scan bit-for-bit up to rounding.
//!
//! Recurrences (per group, zero initial state):
//! - selective scan: `h_t = exp(Δ_t a) ⊙ h_{t-1} + (Δ_t B_t) x_t`,
//!   `y_t = C_t h_t + d ⊙ x_t`, gated by `silu` of a parallel projection;
//! - retention: `S_t = γ S_{t-1} + k_t v_tᵀ`, `y_t = S_tᵀ q_t`;
//! - WKV: exponentially decayed weighted average of past values with a
//!   current-token bonus, gated by a receptance sigmoid; evaluated in a
//!   running-max form so arbitrarily long scans cannot overflow.

mod retention;
mod selective_scan;
mod wkv;

pub use retention::RetentionParams;
pub use selective_scan::SelectiveScanParams;
pub use wkv::WkvParams;

use rand::Rng;

use crate::error::{CoreError, Result};
use crate::linalg::Mat;
use crate::params::{join, ParamSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OperatorKind {
    SelectiveScan,
    Retention,
    Wkv,
}

impl OperatorKind {
    pub fn name(&self) -> &'static str {
        match self {
            OperatorKind::SelectiveScan => "mamba",
            OperatorKind::Retention => "retnet",
            OperatorKind::Wkv => "rwkv",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mamba" | "selective-scan" => Ok(OperatorKind::SelectiveScan),
            "retnet" | "retention" => Ok(OperatorKind::Retention),
            "rwkv" | "wkv" => Ok(OperatorKind::Wkv),
            other => Err(CoreError::Format(format!(
                "unknown operator `{other}` (expected mamba|retnet|rwkv)"
            ))),
        }
    }
}

#[derive(Clone, Debug)]
pub enum Variant {
    SelectiveScan(SelectiveScanParams),
    Retention(RetentionParams),
    Wkv(WkvParams),
}

/// Parameters of one unidirectional operator.
#[derive(Clone, Debug)]
pub struct LinearRnnParams {
    pub dim_c: usize,
    pub dim_s: usize,
    pub variant: Variant,
    /// Output projection, shared contract across variants.
    pub w_out: Mat,
}

impl LinearRnnParams {
    pub fn init(kind: OperatorKind, dim_c: usize, dim_s: usize, rng: &mut impl Rng) -> Self {
        let variant = match kind {
            OperatorKind::SelectiveScan => {
                Variant::SelectiveScan(SelectiveScanParams::init(dim_c, dim_s, rng))
            }
            OperatorKind::Retention => Variant::Retention(RetentionParams::init(dim_c, dim_s, rng)),
            OperatorKind::Wkv => Variant::Wkv(WkvParams::init(dim_c, rng)),
        };
        LinearRnnParams {
            dim_c,
            dim_s,
            variant,
            w_out: Mat::uniform_init(dim_c, dim_c, dim_c, rng),
        }
    }

    pub fn kind(&self) -> OperatorKind {
        match &self.variant {
            Variant::SelectiveScan(_) => OperatorKind::SelectiveScan,
            Variant::Retention(_) => OperatorKind::Retention,
            Variant::Wkv(_) => OperatorKind::Wkv,
        }
    }

    pub fn zeros_like(&self) -> Self {
        let variant = match &self.variant {
            Variant::SelectiveScan(p) => Variant::SelectiveScan(p.zeros_like()),
            Variant::Retention(p) => Variant::Retention(p.zeros_like()),
            Variant::Wkv(p) => Variant::Wkv(p.zeros_like()),
        };
        LinearRnnParams {
            dim_c: self.dim_c,
            dim_s: self.dim_s,
            variant,
            w_out: self.w_out.zeros_like(),
        }
    }

    /// Clamp decay parameters back into their contraction region. Applied
    /// after optimizer steps so the stability invariant survives training.
    pub fn project_invariants(&mut self) {
        match &mut self.variant {
            Variant::SelectiveScan(p) => {
                for v in p.a.as_mut_slice() {
                    *v = v.min(-1e-4);
                }
            }
            Variant::Retention(p) => {
                let g = p.gamma.get(0, 0).clamp(1e-4, 1.0 - 1e-4);
                p.gamma.set(0, 0, g);
            }
            Variant::Wkv(p) => {
                for v in p.decay.as_mut_slice() {
                    *v = v.min(-1e-4);
                }
            }
        }
    }
}

impl ParamSet for LinearRnnParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Mat)) {
        match &self.variant {
            Variant::SelectiveScan(p) => p.visit(prefix, f),
            Variant::Retention(p) => p.visit(prefix, f),
            Variant::Wkv(p) => p.visit(prefix, f),
        }
        f(&join(prefix, "w_out"), &self.w_out);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Mat)) {
        match &mut self.variant {
            Variant::SelectiveScan(p) => p.visit_mut(prefix, f),
            Variant::Retention(p) => p.visit_mut(prefix, f),
            Variant::Wkv(p) => p.visit_mut(prefix, f),
        }
        f(&join(prefix, "w_out"), &mut self.w_out);
    }
}

/// Carry state for streamed (chunked) evaluation.
#[derive(Clone, Debug)]
pub enum ScanState {
    /// `C×S` hidden state.
    SelectiveScan { h: Mat },
    /// `S×C` outer-product state.
    Retention { s: Mat },
    /// Per-channel decayed numerator/denominator with their shared running
    /// max exponent (log-domain stabilization).
    Wkv {
        num: Vec<f64>,
        den: Vec<f64>,
        max_exp: Vec<f64>,
    },
}

impl ScanState {
    pub fn zero(p: &LinearRnnParams) -> Self {
        match p.kind() {
            OperatorKind::SelectiveScan => ScanState::SelectiveScan {
                h: Mat::zeros(p.dim_c, p.dim_s),
            },
            OperatorKind::Retention => ScanState::Retention {
                s: Mat::zeros(p.dim_s, p.dim_c),
            },
            OperatorKind::Wkv => ScanState::Wkv {
                num: vec![0.0; p.dim_c],
                den: vec![0.0; p.dim_c],
                max_exp: vec![f64::NEG_INFINITY; p.dim_c],
            },
        }
    }
}

fn check_seq(seq: &Mat, p: &LinearRnnParams, op: &'static str) -> Result<()> {
    if seq.rows() < 1 {
        return Err(CoreError::contract("linear-rnn", op, "sequence length T must be >= 1"));
    }
    if seq.cols() != p.dim_c {
        return Err(CoreError::contract(
            "linear-rnn",
            op,
            format!("sequence dim {} != model dim {}", seq.cols(), p.dim_c),
        ));
    }
    if let Some((t, c)) = seq.first_non_finite() {
        return Err(CoreError::NonFinite {
            op,
            location: format!("input[{t}][{c}]"),
        });
    }
    Ok(())
}

/// Causal scan over the full sequence from zero state.
pub fn scan_forward(seq: &Mat, p: &LinearRnnParams) -> Result<Mat> {
    let mut state = ScanState::zero(p);
    scan_forward_streamed(seq, p, &mut state)
}

/// Causal scan continuing from (and updating) `state`, so a sequence may be
/// processed in chunks: feeding consecutive chunks reproduces the full scan.
pub fn scan_forward_streamed(seq: &Mat, p: &LinearRnnParams, state: &mut ScanState) -> Result<Mat> {
    check_seq(seq, p, "scan_forward")?;
    let mut out = Mat::zeros(seq.rows(), p.dim_c);
    match (&p.variant, state) {
        (Variant::SelectiveScan(v), ScanState::SelectiveScan { h }) => {
            v.forward(&p.w_out, seq, h, &mut out)
        }
        (Variant::Retention(v), ScanState::Retention { s }) => {
            v.forward(&p.w_out, seq, s, &mut out)
        }
        (Variant::Wkv(v), ScanState::Wkv { num, den, max_exp }) => {
            v.forward(&p.w_out, seq, num, den, max_exp, &mut out)
        }
        _ => {
            return Err(CoreError::contract(
                "linear-rnn",
                "scan_forward",
                "state kind does not match operator kind",
            ))
        }
    }
    Ok(out)
}

/// Exact vector-Jacobian product of [`scan_forward`]: reverse-time
/// recurrence, linear in `T`. Returns `(grad_seq, grad_params)` with
/// `grad_params` shaped like `p`.
pub fn scan_backward_vjp(
    seq: &Mat,
    p: &LinearRnnParams,
    grad_out: &Mat,
) -> Result<(Mat, LinearRnnParams)> {
    check_seq(seq, p, "scan_backward_vjp")?;
    if (grad_out.rows(), grad_out.cols()) != (seq.rows(), p.dim_c) {
        return Err(CoreError::contract(
            "linear-rnn",
            "scan_backward_vjp",
            format!(
                "grad_out shape {}x{} != {}x{}",
                grad_out.rows(),
                grad_out.cols(),
                seq.rows(),
                p.dim_c
            ),
        ));
    }
    let mut grads = p.zeros_like();
    let grad_seq = match (&p.variant, &mut grads.variant) {
        (Variant::SelectiveScan(v), Variant::SelectiveScan(gv)) => {
            v.backward(&p.w_out, seq, grad_out, gv, &mut grads.w_out)
        }
        (Variant::Retention(v), Variant::Retention(gv)) => {
            v.backward(&p.w_out, seq, grad_out, gv, &mut grads.w_out)
        }
        (Variant::Wkv(v), Variant::Wkv(gv)) => {
            v.backward(&p.w_out, seq, grad_out, gv, &mut grads.w_out)
        }
        _ => unreachable!("zeros_like preserves the variant"),
    };
    Ok((grad_seq, grads))
}

/// A forward/backward operator pair with independent parameters.
#[derive(Clone, Debug)]
pub struct BiDirParams {
    pub fwd: LinearRnnParams,
    pub bwd: LinearRnnParams,
}

impl BiDirParams {
    pub fn new(fwd: LinearRnnParams, bwd: LinearRnnParams) -> Result<Self> {
        if fwd.kind() != bwd.kind() || fwd.dim_c != bwd.dim_c || fwd.dim_s != bwd.dim_s {
            return Err(CoreError::contract(
                "linear-rnn",
                "BiDirParams::new",
                "forward/backward operator kind and dims must match",
            ));
        }
        Ok(BiDirParams { fwd, bwd })
    }

    pub fn init(kind: OperatorKind, dim_c: usize, dim_s: usize, rng: &mut impl Rng) -> Self {
        BiDirParams {
            fwd: LinearRnnParams::init(kind, dim_c, dim_s, rng),
            bwd: LinearRnnParams::init(kind, dim_c, dim_s, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        BiDirParams {
            fwd: self.fwd.zeros_like(),
            bwd: self.bwd.zeros_like(),
        }
    }

    pub fn project_invariants(&mut self) {
        self.fwd.project_invariants();
        self.bwd.project_invariants();
    }
}

impl ParamSet for BiDirParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Mat)) {
        self.fwd.visit(&join(prefix, "fwd"), f);
        self.bwd.visit(&join(prefix, "bwd"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Mat)) {
        self.fwd.visit_mut(&join(prefix, "fwd"), f);
        self.bwd.visit_mut(&join(prefix, "bwd"), f);
    }
}

fn reverse_rows(m: &Mat) -> Mat {
    let mut out = Mat::zeros(m.rows(), m.cols());
    for r in 0..m.rows() {
        out.copy_row_from(m.rows() - 1 - r, m.row(r));
    }
    out
}

/// `0.5 * (fwd(seq) + reverse(bwd(reverse(seq))))`.
pub fn bidir_apply(seq: &Mat, bp: &BiDirParams) -> Result<Mat> {
    let mut out = scan_forward(seq, &bp.fwd)?;
    let rev_out = scan_forward(&reverse_rows(seq), &bp.bwd)?;
    let rev_out = reverse_rows(&rev_out);
    out.add_assign(&rev_out);
    out.scale(0.5);
    Ok(out)
}

/// VJP of [`bidir_apply`].
pub fn bidir_backward_vjp(seq: &Mat, bp: &BiDirParams, grad_out: &Mat) -> Result<(Mat, BiDirParams)> {
    let mut half = grad_out.clone();
    half.scale(0.5);
    let (mut grad_seq, grad_fwd) = scan_backward_vjp(seq, &bp.fwd, &half)?;
    let (grad_rev_seq, grad_bwd) =
        scan_backward_vjp(&reverse_rows(seq), &bp.bwd, &reverse_rows(&half))?;
    grad_seq.add_assign(&reverse_rows(&grad_rev_seq));
    Ok((grad_seq, BiDirParams { fwd: grad_fwd, bwd: grad_bwd }))
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}
