//! Forward pass with activation caching and backpropagation through time
//! over one batch of consecutive snapshots.

use super::lstm::{sigmoid, LstmCellParams, LstmState};
use super::mlp::relu;
use super::ModelParams;
use crate::linalg::{dot, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum StateMode {
    /// Each step starts from the previous step's output state.
    Carry,
    /// Each step starts from the batch's initial state.
    ResetEachStep,
}

struct StepCache {
    z: Vec<f64>,
    c_prev: Vec<f64>,
    f: Vec<f64>,
    i: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    tanh_c: Vec<f64>,
    /// Input of every MLP layer; `layer_in[0]` is the hidden state.
    layer_in: Vec<Vec<f64>>,
    /// Pre-activation of every MLP layer.
    pre: Vec<Vec<f64>>,
    out: Vec<f64>,
}

pub(crate) struct BatchPass {
    pub loss: f64,
    pub grads: Option<ModelParams>,
    pub final_state: LstmState,
    /// Sign of every ReLU pre-activation, in step then layer order.
    pub relu_pattern: Vec<bool>,
}

fn gate(w: &Matrix, b: &[f64], z: &[f64], act: fn(f64) -> f64) -> Vec<f64> {
    (0..w.rows()).map(|k| act(dot(w.row(k), z) + b[k])).collect()
}

fn step_forward(p: &ModelParams, state: &LstmState, y: &[f64]) -> (StepCache, LstmState) {
    let l: &LstmCellParams = &p.lstm;
    let r = l.state_size();
    let z: Vec<f64> = state.h.iter().chain(y).copied().collect();
    let f = gate(&l.w_f, &l.b_f, &z, sigmoid);
    let i = gate(&l.w_i, &l.b_i, &z, sigmoid);
    let g = gate(&l.w_c, &l.b_c, &z, f64::tanh);
    let o = gate(&l.w_o, &l.b_o, &z, sigmoid);
    let c: Vec<f64> = (0..r).map(|k| f[k] * state.c[k] + i[k] * g[k]).collect();
    let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
    let h: Vec<f64> = (0..r).map(|k| o[k] * tanh_c[k]).collect();

    let mut layer_in = Vec::with_capacity(p.mlp.layers.len());
    let mut pre = Vec::with_capacity(p.mlp.layers.len());
    let mut x = h.clone();
    for layer in &p.mlp.layers {
        let a = layer.preactivation(&x);
        let next = a.iter().map(|&v| relu(v)).collect();
        layer_in.push(std::mem::replace(&mut x, next));
        pre.push(a);
    }
    let cache = StepCache {
        z,
        c_prev: state.c.clone(),
        f,
        i,
        g,
        o,
        tanh_c,
        layer_in,
        pre,
        out: x,
    };
    (cache, LstmState { c, h })
}

fn add_outer(m: &mut Matrix, d: &[f64], x: &[f64]) {
    let cols = m.cols();
    for (row, &dk) in m.as_mut_slice().chunks_mut(cols).zip(d) {
        if dk != 0.0 {
            for (w, &xj) in row.iter_mut().zip(x) {
                *w += dk * xj;
            }
        }
    }
}

fn add_into(acc: &mut [f64], d: &[f64]) {
    for (a, v) in acc.iter_mut().zip(d) {
        *a += v;
    }
}

/// `Wᵀ d` accumulated into `out`.
fn add_transpose_mul(out: &mut [f64], w: &Matrix, d: &[f64]) {
    for (k, &dk) in d.iter().enumerate() {
        if dk != 0.0 {
            for (o, &wkj) in out.iter_mut().zip(w.row(k)) {
                *o += wkj * dk;
            }
        }
    }
}

/// Runs the model over `fields` (normalized snapshots, all of length `m`).
/// The loss is the batch mean of the per-snapshot squared L2 error over
/// valid cells. Gradients flow back through every step of the batch, and
/// nothing flows into `start`.
pub(crate) fn run_batch(
    p: &ModelParams,
    gamma: &[usize],
    start: &LstmState,
    fields: &[Vec<f64>],
    mask: Option<&[bool]>,
    mode: StateMode,
    want_grads: bool,
) -> BatchPass {
    let r = p.lstm.state_size();
    let batch = fields.len() as f64;
    let valid = |k: usize| mask.is_none_or(|m| m[k]);

    let mut caches = Vec::with_capacity(fields.len());
    let mut state = start.clone();
    let mut loss = 0.0;
    let mut relu_pattern = Vec::new();
    for field in fields {
        let y: Vec<f64> = gamma.iter().map(|&g| field[g]).collect();
        let from = match mode {
            StateMode::Carry => &state,
            StateMode::ResetEachStep => start,
        };
        let (cache, next) = step_forward(p, from, &y);
        for (k, (o, t)) in cache.out.iter().zip(field).enumerate() {
            if valid(k) {
                loss += (o - t) * (o - t);
            }
        }
        relu_pattern.extend(cache.pre.iter().flatten().map(|&a| a > 0.0));
        state = next;
        if want_grads {
            caches.push(cache);
        }
    }
    loss /= batch;

    let grads = want_grads.then(|| {
        let mut gr = p.zeros_like();
        let mut dh_next = vec![0.0; r];
        let mut dc_next = vec![0.0; r];
        for (cache, field) in caches.iter().zip(fields).rev() {
            let mut d: Vec<f64> = cache
                .out
                .iter()
                .zip(field)
                .enumerate()
                .map(|(k, (o, t))| if valid(k) { 2.0 * (o - t) / batch } else { 0.0 })
                .collect();
            for (li, layer) in p.mlp.layers.iter().enumerate().rev() {
                for (dk, &a) in d.iter_mut().zip(&cache.pre[li]) {
                    if a <= 0.0 {
                        *dk = 0.0;
                    }
                }
                let gl = &mut gr.mlp.layers[li];
                add_outer(&mut gl.weight, &d, &cache.layer_in[li]);
                add_into(&mut gl.bias, &d);
                let mut dx = vec![0.0; layer.weight.cols()];
                add_transpose_mul(&mut dx, &layer.weight, &d);
                d = dx;
            }
            let dh: Vec<f64> = d.iter().zip(&dh_next).map(|(a, b)| a + b).collect();
            let mut d_f = vec![0.0; r];
            let mut d_i = vec![0.0; r];
            let mut d_g = vec![0.0; r];
            let mut d_o = vec![0.0; r];
            let mut dc_prev = vec![0.0; r];
            for k in 0..r {
                let (f, i, g, o, tc) = (cache.f[k], cache.i[k], cache.g[k], cache.o[k], cache.tanh_c[k]);
                d_o[k] = dh[k] * tc * o * (1.0 - o);
                let dc = dh[k] * o * (1.0 - tc * tc) + dc_next[k];
                d_f[k] = dc * cache.c_prev[k] * f * (1.0 - f);
                d_i[k] = dc * g * i * (1.0 - i);
                d_g[k] = dc * i * (1.0 - g * g);
                dc_prev[k] = dc * f;
            }
            let l = &p.lstm;
            let gl = &mut gr.lstm;
            let mut dz = vec![0.0; 2 * r];
            for (w, gw, gb, dgate) in [
                (&l.w_f, &mut gl.w_f, &mut gl.b_f, &d_f),
                (&l.w_i, &mut gl.w_i, &mut gl.b_i, &d_i),
                (&l.w_c, &mut gl.w_c, &mut gl.b_c, &d_g),
                (&l.w_o, &mut gl.w_o, &mut gl.b_o, &d_o),
            ] {
                add_outer(gw, dgate, &cache.z);
                add_into(gb, dgate);
                add_transpose_mul(&mut dz, w, dgate);
            }
            match mode {
                StateMode::Carry => {
                    dh_next = dz[..r].to_vec();
                    dc_next = dc_prev;
                }
                StateMode::ResetEachStep => {
                    dh_next.fill(0.0);
                    dc_next.fill(0.0);
                }
            }
        }
        gr
    });

    BatchPass {
        loss,
        grads,
        final_state: state,
        relu_pattern,
    }
}
