use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};

/// Gate weights act on the concatenation `[h_{t−1}, y_t]` (hidden state first).
#[derive(Clone, Debug, PartialEq)]
pub struct LstmCellParams {
    pub w_f: Matrix,
    pub w_i: Matrix,
    pub w_c: Matrix,
    pub w_o: Matrix,
    pub b_f: Vec<f64>,
    pub b_i: Vec<f64>,
    pub b_c: Vec<f64>,
    pub b_o: Vec<f64>,
}

impl LstmCellParams {
    pub fn zeros(r: usize) -> Self {
        Self {
            w_f: Matrix::zeros(r, 2 * r),
            w_i: Matrix::zeros(r, 2 * r),
            w_c: Matrix::zeros(r, 2 * r),
            w_o: Matrix::zeros(r, 2 * r),
            b_f: vec![0.0; r],
            b_i: vec![0.0; r],
            b_c: vec![0.0; r],
            b_o: vec![0.0; r],
        }
    }

    pub fn state_size(&self) -> usize {
        self.b_f.len()
    }

    pub(crate) fn check(&self) -> Result<()> {
        let r = self.state_size();
        let weights = [&self.w_f, &self.w_i, &self.w_c, &self.w_o];
        let biases = [&self.b_f, &self.b_i, &self.b_c, &self.b_o];
        if weights.iter().any(|w| w.shape() != (r, 2 * r)) || biases.iter().any(|b| b.len() != r) {
            return Err(Error::arg(format!(
                "LSTM gate weights must be {r}x{} and biases of length {r}",
                2 * r
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub c: Vec<f64>,
    pub h: Vec<f64>,
}

impl LstmState {
    pub fn zeros(r: usize) -> Self {
        Self {
            c: vec![0.0; r],
            h: vec![0.0; r],
        }
    }
}

/// Gate activations of one step.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmGates {
    pub forget: Vec<f64>,
    pub input: Vec<f64>,
    /// Candidate cell values `c̃`.
    pub candidate: Vec<f64>,
    pub output: Vec<f64>,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn affine(w: &Matrix, b: &[f64], z: &[f64]) -> Vec<f64> {
    (0..w.rows()).map(|k| dot(w.row(k), z) + b[k]).collect()
}

/// One LSTM step, also returning the gate activations.
pub fn lstm_step_gates(
    params: &LstmCellParams,
    state: &LstmState,
    y: &[f64],
) -> Result<(LstmState, LstmGates)> {
    params.check()?;
    let r = params.state_size();
    if state.c.len() != r || state.h.len() != r || y.len() != r {
        return Err(Error::arg(format!(
            "LSTM of size {r} got state ({}, {}) and input {}",
            state.c.len(),
            state.h.len(),
            y.len()
        )));
    }
    let z: Vec<f64> = state.h.iter().chain(y).copied().collect();
    let forget: Vec<f64> = affine(&params.w_f, &params.b_f, &z).into_iter().map(sigmoid).collect();
    let input: Vec<f64> = affine(&params.w_i, &params.b_i, &z).into_iter().map(sigmoid).collect();
    let candidate: Vec<f64> = affine(&params.w_c, &params.b_c, &z).into_iter().map(f64::tanh).collect();
    let output: Vec<f64> = affine(&params.w_o, &params.b_o, &z).into_iter().map(sigmoid).collect();
    let c: Vec<f64> = (0..r)
        .map(|k| forget[k] * state.c[k] + input[k] * candidate[k])
        .collect();
    let h: Vec<f64> = (0..r).map(|k| output[k] * c[k].tanh()).collect();
    Ok((
        LstmState { c, h },
        LstmGates {
            forget,
            input,
            candidate,
            output,
        },
    ))
}

/// `f = σ(W_f[h,y]+b_f)`, `i = σ(W_i[h,y]+b_i)`, `c̃ = tanh(W_c[h,y]+b_c)`,
/// `c' = f⊙c + i⊙c̃`, `o = σ(W_o[h,y]+b_o)`, `h' = o⊙tanh(c')`.
pub fn lstm_step(params: &LstmCellParams, state: &LstmState, y: &[f64]) -> Result<LstmState> {
    Ok(lstm_step_gates(params, state, y)?.0)
}
