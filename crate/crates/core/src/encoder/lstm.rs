//! One LSTM direction with masking and its hand-derived backward pass.
//!
//! Gate rows are laid out `[input, forget, cell, output]`, each `hidden`
//! wide. A masked position leaves `(h, c)` unchanged and emits a zero row.

use super::linalg::{matvec_add, matvec_t_add, outer_add, sigmoid, Matrix};

pub(crate) struct LstmWeights<'a> {
    pub w_ih: &'a [f64],
    pub w_hh: &'a [f64],
    pub bias: &'a [f64],
    pub hidden: usize,
    pub input: usize,
}

pub(crate) struct LstmGrads<'a> {
    pub w_ih: &'a mut [f64],
    pub w_hh: &'a mut [f64],
    pub bias: &'a mut [f64],
}

#[derive(Debug, Clone)]
pub(crate) struct LstmTrace {
    reverse: bool,
    /// Activated gates per position, `L × 4H`.
    gates: Matrix,
    /// Cell state after each position, `L × H`.
    c: Matrix,
    tanh_c: Matrix,
    /// Previous valid position in processing order.
    prev: Vec<Option<usize>>,
    /// Output rows, `L × H`; zero at masked positions.
    pub out: Matrix,
}

fn processing_order(len: usize, reverse: bool) -> Box<dyn Iterator<Item = usize>> {
    if reverse {
        Box::new((0..len).rev())
    } else {
        Box::new(0..len)
    }
}

pub(crate) fn forward(w: &LstmWeights<'_>, x: &Matrix, mask: &[bool], reverse: bool) -> LstmTrace {
    let hd = w.hidden;
    let len = x.rows;
    let mut gates = Matrix::zeros(len, 4 * hd);
    let mut c_all = Matrix::zeros(len, hd);
    let mut tanh_c = Matrix::zeros(len, hd);
    let mut out = Matrix::zeros(len, hd);
    let mut prev = vec![None; len];
    let mut last: Option<usize> = None;
    let zeros = vec![0.0; hd];
    let mut z = vec![0.0; 4 * hd];
    for t in processing_order(len, reverse) {
        if !mask[t] {
            continue;
        }
        prev[t] = last;
        let (h_prev, c_prev) = match last {
            Some(p) => (out.row(p).to_vec(), c_all.row(p).to_vec()),
            None => (zeros.clone(), zeros.clone()),
        };
        z.copy_from_slice(w.bias);
        matvec_add(&mut z, w.w_ih, w.input, x.row(t));
        matvec_add(&mut z, w.w_hh, hd, &h_prev);
        let g = gates.row_mut(t);
        for k in 0..hd {
            g[k] = sigmoid(z[k]);
            g[hd + k] = sigmoid(z[hd + k]);
            g[2 * hd + k] = z[2 * hd + k].tanh();
            g[3 * hd + k] = sigmoid(z[3 * hd + k]);
        }
        let g = gates.row(t).to_vec();
        for k in 0..hd {
            let c = g[hd + k] * c_prev[k] + g[k] * g[2 * hd + k];
            let tc = c.tanh();
            c_all.row_mut(t)[k] = c;
            tanh_c.row_mut(t)[k] = tc;
            out.row_mut(t)[k] = g[3 * hd + k] * tc;
        }
        last = Some(t);
    }
    LstmTrace {
        reverse,
        gates,
        c: c_all,
        tanh_c,
        prev,
        out,
    }
}

/// Backpropagates `d_out` (`L × H`) through the recurrence, accumulating
/// weight gradients into `grads` and input gradients into `dx`.
pub(crate) fn backward(
    w: &LstmWeights<'_>,
    trace: &LstmTrace,
    x: &Matrix,
    mask: &[bool],
    d_out: &Matrix,
    grads: &mut LstmGrads<'_>,
    dx: &mut Matrix,
) {
    let hd = w.hidden;
    let len = x.rows;
    let mut dh_next = vec![0.0; hd];
    let mut dc_next = vec![0.0; hd];
    let mut dz = vec![0.0; 4 * hd];
    let zeros = vec![0.0; hd];
    // Reverse of the processing order.
    for t in processing_order(len, !trace.reverse) {
        if !mask[t] {
            continue;
        }
        let g = trace.gates.row(t);
        let tc = trace.tanh_c.row(t);
        let (h_prev, c_prev): (&[f64], &[f64]) = match trace.prev[t] {
            Some(p) => (trace.out.row(p), trace.c.row(p)),
            None => (&zeros, &zeros),
        };
        let d_row = d_out.row(t);
        for k in 0..hd {
            let (i, f, gg, o) = (g[k], g[hd + k], g[2 * hd + k], g[3 * hd + k]);
            let dh = d_row[k] + dh_next[k];
            let d_o = dh * tc[k];
            let dc = dc_next[k] + dh * o * (1.0 - tc[k] * tc[k]);
            let d_i = dc * gg;
            let d_g = dc * i;
            let d_f = dc * c_prev[k];
            dc_next[k] = dc * f;
            dz[k] = d_i * i * (1.0 - i);
            dz[hd + k] = d_f * f * (1.0 - f);
            dz[2 * hd + k] = d_g * (1.0 - gg * gg);
            dz[3 * hd + k] = d_o * o * (1.0 - o);
        }
        outer_add(grads.w_ih, &dz, x.row(t));
        outer_add(grads.w_hh, &dz, h_prev);
        for (b, d) in grads.bias.iter_mut().zip(&dz) {
            *b += d;
        }
        matvec_t_add(dx.row_mut(t), w.w_ih, w.input, &dz);
        dh_next.iter_mut().for_each(|v| *v = 0.0);
        matvec_t_add(&mut dh_next, w.w_hh, hd, &dz);
    }
}
