//! Single-layer GRU with backpropagation through time.
//!
//! Gate layout follows the common `[r; z; n]` stacking:
//!
//! ```text
//! r = σ(W_ir x + b_ir + W_hr h + b_hr)
//! z = σ(W_iz x + b_iz + W_hz h + b_hz)
//! n = tanh(W_in x + b_in + r ⊙ (W_hn h + b_hn))
//! h' = (1 − z) ⊙ n + z ⊙ h
//! ```

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    /// `3h × input`
    pub w_ih: Array2<f64>,
    /// `3h × h`
    pub w_hh: Array2<f64>,
    pub b_ih: Array1<f64>,
    pub b_hh: Array1<f64>,
}

impl GruParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_ih: Array2::zeros((3 * hidden, input)),
            w_hh: Array2::zeros((3 * hidden, hidden)),
            b_ih: Array1::zeros(3 * hidden),
            b_hh: Array1::zeros(3 * hidden),
        }
    }

    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn init(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(input, hidden);
        fill_uniform(&mut p.w_ih, input, rng);
        fill_uniform(&mut p.w_hh, hidden, rng);
        p
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.ncols()
    }

    pub fn input(&self) -> usize {
        self.w_ih.ncols()
    }
}

pub(crate) fn fill_uniform(m: &mut Array2<f64>, fan_in: usize, rng: &mut impl Rng) {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    m.mapv_inplace(|_| rng.random_range(-bound..=bound));
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Per-step activations kept for the backward pass.
#[derive(Debug, Clone)]
struct Step {
    t: usize,
    h_prev: Array1<f64>,
    r: Array1<f64>,
    z: Array1<f64>,
    n: Array1<f64>,
    /// `W_hn h + b_hn`
    ghn: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct GruTrace {
    steps: Vec<Step>,
}

/// Runs the GRU over `x` (`T × input`) from a zero state, front to back or
/// back to front. Returns the final hidden state and the trace.
pub fn run(p: &GruParams, x: ArrayView2<f64>, reverse: bool, keep_trace: bool) -> (Array1<f64>, Option<GruTrace>) {
    let h_dim = p.hidden();
    let t_len = x.nrows();
    let gi = x.dot(&p.w_ih.t()) + &p.b_ih;
    let mut h = Array1::<f64>::zeros(h_dim);
    let mut steps = Vec::with_capacity(if keep_trace { t_len } else { 0 });
    let order: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new((0..t_len).rev())
    } else {
        Box::new(0..t_len)
    };
    for t in order {
        let gh = p.w_hh.dot(&h) + &p.b_hh;
        let gi_t = gi.row(t);
        let r = Array1::from_shape_fn(h_dim, |k| sigmoid(gi_t[k] + gh[k]));
        let z = Array1::from_shape_fn(h_dim, |k| sigmoid(gi_t[h_dim + k] + gh[h_dim + k]));
        let ghn = gh.slice(s![2 * h_dim..]).to_owned();
        let n = Array1::from_shape_fn(h_dim, |k| (gi_t[2 * h_dim + k] + r[k] * ghn[k]).tanh());
        let h_next = Array1::from_shape_fn(h_dim, |k| (1.0 - z[k]) * n[k] + z[k] * h[k]);
        if keep_trace {
            steps.push(Step {
                t,
                h_prev: h,
                r,
                z,
                n,
                ghn,
            });
        }
        h = h_next;
    }
    (h, keep_trace.then_some(GruTrace { steps }))
}

/// Accumulates parameter gradients given `∂L/∂h_final`.
pub fn backward(p: &GruParams, x: ArrayView2<f64>, trace: &GruTrace, dh_final: ArrayView1<f64>, grads: &mut GruParams) {
    let h_dim = p.hidden();
    let steps = trace.steps.len();
    let mut dgi = Array2::<f64>::zeros((x.nrows(), 3 * h_dim));
    // rows in processing order; dW_hh = Σ dgh_s ⊗ h_prev_s is one product at the end
    let mut dgh_all = Array2::<f64>::zeros((steps, 3 * h_dim));
    let mut h_prev_all = Array2::<f64>::zeros((steps, h_dim));
    let mut dh = dh_final.to_owned();
    for (s_idx, step) in trace.steps.iter().enumerate().rev() {
        let mut row = dgi.row_mut(step.t);
        let mut dgh = dgh_all.row_mut(s_idx);
        for k in 0..h_dim {
            let (r, z, n) = (step.r[k], step.z[k], step.n[k]);
            let dn = dh[k] * (1.0 - z);
            let dz = dh[k] * (step.h_prev[k] - n);
            let da_n = dn * (1.0 - n * n);
            let da_r = da_n * step.ghn[k] * r * (1.0 - r);
            let da_z = dz * z * (1.0 - z);
            row[k] = da_r;
            row[h_dim + k] = da_z;
            row[2 * h_dim + k] = da_n;
            dgh[k] = da_r;
            dgh[h_dim + k] = da_z;
            dgh[2 * h_dim + k] = da_n * r;
        }
        h_prev_all.row_mut(s_idx).assign(&step.h_prev);
        dh = &dh * &step.z + p.w_hh.t().dot(&dgh);
    }
    grads.w_hh += &dgh_all.t().dot(&h_prev_all);
    grads.b_hh += &dgh_all.sum_axis(Axis(0));
    grads.w_ih += &dgi.t().dot(&x);
    grads.b_ih += &dgi.sum_axis(Axis(0));
}
