use super::params::LstmWeights;
use crate::real::Real;

/// Direction a sequence is traversed in. Output stays in position order for
/// both directions; only the recurrence order differs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// Dense affine map: out[r] = b[r] + sum_c w[r*cols + c] * x[c].
pub fn affine<T: Real>(w: &[T], b: &[T], rows: usize, cols: usize, x: &[T], out: &mut [T]) {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    for r in 0..rows {
        let row = &w[r * cols..(r + 1) * cols];
        let mut acc = b[r];
        for (wc, xc) in row.iter().zip(x.iter()) {
            acc += *wc * *xc;
        }
        out[r] = acc;
    }
}

/// One LSTM cell update. `pre` is 4H scratch; `h` and `c` are updated in
/// place. Gate order along 4H: input, forget, cell candidate, output.
pub fn lstm_step<T: Real>(w: &LstmWeights<T>, x: &[T], h: &mut [T], c: &mut [T], pre: &mut [T]) {
    let hidden = w.hidden;
    let din = w.input_dim;
    debug_assert_eq!(x.len(), din);
    debug_assert_eq!(h.len(), hidden);
    debug_assert_eq!(c.len(), hidden);
    debug_assert_eq!(pre.len(), 4 * hidden);

    for r in 0..4 * hidden {
        let wi = &w.w_ih.data[r * din..(r + 1) * din];
        let wh = &w.w_hh.data[r * hidden..(r + 1) * hidden];
        let mut acc = w.bias.data[r];
        for (a, b) in wi.iter().zip(x.iter()) {
            acc += *a * *b;
        }
        for (a, b) in wh.iter().zip(h.iter()) {
            acc += *a * *b;
        }
        pre[r] = acc;
    }

    for j in 0..hidden {
        let i_gate = pre[j].sigmoid();
        let f_gate = pre[hidden + j].sigmoid();
        let g_cand = pre[2 * hidden + j].tanh();
        let o_gate = pre[3 * hidden + j].sigmoid();
        let cell = f_gate * c[j] + i_gate * g_cand;
        c[j] = cell;
        h[j] = o_gate * cell.tanh();
    }
}

/// Run an LSTM over a length-`len` sequence with zero initial state.
/// `input` is len x Din row-major; the output is len x H in position order.
pub fn lstm_sequence<T: Real>(
    input: &[T],
    len: usize,
    w: &LstmWeights<T>,
    direction: Direction,
) -> Vec<T> {
    let mut out = vec![T::ZERO; len * w.hidden];
    lstm_sequence_into(input, len, w, direction, &mut out, &mut LstmScratch::new(w.hidden));
    out
}

/// Reusable scratch for allocation-free sequence passes.
#[derive(Debug, Clone)]
pub struct LstmScratch<T> {
    pub h: Vec<T>,
    pub c: Vec<T>,
    pub pre: Vec<T>,
}

impl<T: Real> LstmScratch<T> {
    pub fn new(hidden: usize) -> Self {
        Self {
            h: vec![T::ZERO; hidden],
            c: vec![T::ZERO; hidden],
            pre: vec![T::ZERO; 4 * hidden],
        }
    }

    pub fn reset(&mut self) {
        self.h.iter_mut().for_each(|v| *v = T::ZERO);
        self.c.iter_mut().for_each(|v| *v = T::ZERO);
    }
}

/// Allocation-free variant of [`lstm_sequence`], writing into `out`
/// (len x H, position order).
pub fn lstm_sequence_into<T: Real>(
    input: &[T],
    len: usize,
    w: &LstmWeights<T>,
    direction: Direction,
    out: &mut [T],
    scratch: &mut LstmScratch<T>,
) {
    let din = w.input_dim;
    let hidden = w.hidden;
    debug_assert_eq!(input.len(), len * din);
    debug_assert_eq!(out.len(), len * hidden);
    scratch.reset();
    for step in 0..len {
        let pos = match direction {
            Direction::Forward => step,
            Direction::Backward => len - 1 - step,
        };
        let x = &input[pos * din..(pos + 1) * din];
        lstm_step(w, x, &mut scratch.h, &mut scratch.c, &mut scratch.pre);
        out[pos * hidden..(pos + 1) * hidden].copy_from_slice(&scratch.h);
    }
}

/// Post-activation gate values and cell states recorded during a cached
/// sequence pass, indexed by sequence position.
#[derive(Debug, Clone)]
pub struct LstmSeqCache {
    /// len x 4H: sigmoid/tanh-activated (i, f, g, o).
    pub gates: Vec<f64>,
    /// len x H cell states.
    pub cells: Vec<f64>,
}

impl LstmSeqCache {
    pub fn new(len: usize, hidden: usize) -> Self {
        Self {
            gates: vec![0.0; len * 4 * hidden],
            cells: vec![0.0; len * hidden],
        }
    }
}

/// Forward pass that also records the activations needed by
/// [`lstm_sequence_grad`]. Double precision only: this is the training path.
pub fn lstm_sequence_cached(
    input: &[f64],
    len: usize,
    w: &LstmWeights<f64>,
    direction: Direction,
    out: &mut [f64],
    cache: &mut LstmSeqCache,
) {
    let din = w.input_dim;
    let hidden = w.hidden;
    debug_assert_eq!(input.len(), len * din);
    debug_assert_eq!(out.len(), len * hidden);
    let mut h = vec![0.0; hidden];
    let mut c = vec![0.0; hidden];
    let mut pre = vec![0.0; 4 * hidden];

    for step in 0..len {
        let pos = match direction {
            Direction::Forward => step,
            Direction::Backward => len - 1 - step,
        };
        let x = &input[pos * din..(pos + 1) * din];
        for r in 0..4 * hidden {
            let wi = &w.w_ih.data[r * din..(r + 1) * din];
            let wh = &w.w_hh.data[r * hidden..(r + 1) * hidden];
            let mut acc = w.bias.data[r];
            for (a, b) in wi.iter().zip(x.iter()) {
                acc += *a * *b;
            }
            for (a, b) in wh.iter().zip(h.iter()) {
                acc += *a * *b;
            }
            pre[r] = acc;
        }
        let gate_base = pos * 4 * hidden;
        for j in 0..hidden {
            let i_gate = pre[j].sigmoid();
            let f_gate = pre[hidden + j].sigmoid();
            let g_cand = pre[2 * hidden + j].tanh();
            let o_gate = pre[3 * hidden + j].sigmoid();
            let cell = f_gate * c[j] + i_gate * g_cand;
            cache.gates[gate_base + j] = i_gate;
            cache.gates[gate_base + hidden + j] = f_gate;
            cache.gates[gate_base + 2 * hidden + j] = g_cand;
            cache.gates[gate_base + 3 * hidden + j] = o_gate;
            cache.cells[pos * hidden + j] = cell;
            c[j] = cell;
            h[j] = o_gate * cell.tanh();
        }
        out[pos * hidden..(pos + 1) * hidden].copy_from_slice(&h);
    }
}

/// Reverse-mode pass through a cached LSTM sequence.
///
/// `d_out` holds dL/d(hidden output) per position; gradients are accumulated
/// into `d_input` (+=) and `grads`.
#[allow(clippy::too_many_arguments)]
pub fn lstm_sequence_grad(
    input: &[f64],
    out_hidden: &[f64],
    cache: &LstmSeqCache,
    w: &LstmWeights<f64>,
    direction: Direction,
    d_out: &[f64],
    d_input: &mut [f64],
    grads: &mut LstmWeights<f64>,
) {
    let din = w.input_dim;
    let hidden = w.hidden;
    let len = d_out.len() / hidden;
    debug_assert_eq!(input.len(), len * din);
    debug_assert_eq!(out_hidden.len(), len * hidden);
    debug_assert_eq!(d_input.len(), len * din);

    let pos_at = |step: usize| match direction {
        Direction::Forward => step,
        Direction::Backward => len - 1 - step,
    };

    let mut dh_carry = vec![0.0; hidden];
    let mut dc_carry = vec![0.0; hidden];
    let mut dpre = vec![0.0; 4 * hidden];

    for step in (0..len).rev() {
        let pos = pos_at(step);
        let gate = &cache.gates[pos * 4 * hidden..(pos + 1) * 4 * hidden];
        let cell = &cache.cells[pos * hidden..(pos + 1) * hidden];
        let (h_prev, c_prev): (Option<&[f64]>, Option<&[f64]>) = if step == 0 {
            (None, None)
        } else {
            let prev = pos_at(step - 1);
            (
                Some(&out_hidden[prev * hidden..(prev + 1) * hidden]),
                Some(&cache.cells[prev * hidden..(prev + 1) * hidden]),
            )
        };

        for j in 0..hidden {
            let dh = d_out[pos * hidden + j] + dh_carry[j];
            let i_gate = gate[j];
            let f_gate = gate[hidden + j];
            let g_cand = gate[2 * hidden + j];
            let o_gate = gate[3 * hidden + j];
            let tanh_c = cell[j].tanh();

            let d_o = dh * tanh_c;
            let mut dc = dh * o_gate * (1.0 - tanh_c * tanh_c) + dc_carry[j];
            let d_i = dc * g_cand;
            let d_g = dc * i_gate;
            let cp = c_prev.map_or(0.0, |c| c[j]);
            let d_f = dc * cp;
            dc *= f_gate; // carried to c_{t-1}

            dpre[j] = d_i * i_gate * (1.0 - i_gate);
            dpre[hidden + j] = d_f * f_gate * (1.0 - f_gate);
            dpre[2 * hidden + j] = d_g * (1.0 - g_cand * g_cand);
            dpre[3 * hidden + j] = d_o * o_gate * (1.0 - o_gate);
            dc_carry[j] = dc;
        }

        let x = &input[pos * din..(pos + 1) * din];
        dh_carry.iter_mut().for_each(|v| *v = 0.0);
        for r in 0..4 * hidden {
            let g = dpre[r];
            if g == 0.0 {
                continue;
            }
            grads.bias.data[r] += g;
            let gw_ih = &mut grads.w_ih.data[r * din..(r + 1) * din];
            for (slot, xv) in gw_ih.iter_mut().zip(x.iter()) {
                *slot += g * xv;
            }
            let w_ih_row = &w.w_ih.data[r * din..(r + 1) * din];
            let d_in = &mut d_input[pos * din..(pos + 1) * din];
            for (slot, wv) in d_in.iter_mut().zip(w_ih_row.iter()) {
                *slot += g * wv;
            }
            if let Some(hp) = h_prev {
                let gw_hh = &mut grads.w_hh.data[r * hidden..(r + 1) * hidden];
                for (slot, hv) in gw_hh.iter_mut().zip(hp.iter()) {
                    *slot += g * hv;
                }
                let w_hh_row = &w.w_hh.data[r * hidden..(r + 1) * hidden];
                for (slot, wv) in dh_carry.iter_mut().zip(w_hh_row.iter()) {
                    *slot += g * wv;
                }
            }
        }
    }
}
