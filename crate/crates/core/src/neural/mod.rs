//! Recurrent neural reconstructor: sensor readings pass through an LSTM
//! cell whose hidden state drives a ReLU multilayer reconstructor of the
//! full field. Trained with Adam on mean squared error, with gradients from
//! hand-written backpropagation through time.

mod adam;
mod backprop;
mod checkpoint;
mod gradcheck;
mod lstm;
mod mlp;
mod train;

pub use adam::{adam_step, AdamState, TrainConfig};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use gradcheck::{check_gradients, gradient_check, GradCheckReport, FD_STEP};
pub use lstm::{lstm_step, lstm_step_gates, LstmCellParams, LstmGates, LstmState};
pub use mlp::{mlp_forward, DenseLayer, ReconstructorParams};
pub use train::{fit_neural, train, TrainOutcome};

use crate::data::{FieldSnapshot, SnapshotSeries};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::placement::Placement;
use crate::rng::SeededRng;
use backprop::{run_batch, StateMode};

/// Default number of hidden layers (`r → m`, `m → r`).
pub const DEFAULT_HIDDEN_LAYERS: usize = 2;

/// Every trainable tensor. Also used as the gradient and Adam-moment container.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub lstm: LstmCellParams,
    pub mlp: ReconstructorParams,
}

impl ModelParams {
    pub fn zeros(r: usize, m: usize, hidden_layers: usize) -> Result<Self> {
        Ok(Self {
            lstm: LstmCellParams::zeros(r),
            mlp: ReconstructorParams::zeros(r, m, hidden_layers)?,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(
            self.lstm.state_size(),
            self.mlp.output_size(),
            self.mlp.hidden_layer_count(),
        )
        .expect("shape copied from a valid model")
    }

    /// Tensors in declaration order with their parameter paths.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let l = &self.lstm;
        let mut out: Vec<(String, &[f64])> = vec![
            ("lstm.w_f".into(), l.w_f.as_slice()),
            ("lstm.w_i".into(), l.w_i.as_slice()),
            ("lstm.w_c".into(), l.w_c.as_slice()),
            ("lstm.w_o".into(), l.w_o.as_slice()),
            ("lstm.b_f".into(), &l.b_f),
            ("lstm.b_i".into(), &l.b_i),
            ("lstm.b_c".into(), &l.b_c),
            ("lstm.b_o".into(), &l.b_o),
        ];
        for (k, layer) in self.mlp.layers.iter().enumerate() {
            let name = self.layer_name(k);
            out.push((format!("mlp.{name}.weight"), layer.weight.as_slice()));
            out.push((format!("mlp.{name}.bias"), &layer.bias));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let names: Vec<String> = self.tensors().into_iter().map(|(n, _)| n).collect();
        let l = &mut self.lstm;
        let mut slices: Vec<&mut [f64]> = vec![
            l.w_f.as_mut_slice(),
            l.w_i.as_mut_slice(),
            l.w_c.as_mut_slice(),
            l.w_o.as_mut_slice(),
            &mut l.b_f,
            &mut l.b_i,
            &mut l.b_c,
            &mut l.b_o,
        ];
        for layer in &mut self.mlp.layers {
            slices.push(layer.weight.as_mut_slice());
            slices.push(&mut layer.bias);
        }
        names.into_iter().zip(slices).collect()
    }

    fn layer_name(&self, k: usize) -> String {
        if k == self.mlp.hidden_layer_count() {
            "output".into()
        } else {
            format!("hidden{k}")
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    /// Uniform initialization with half-width `1/√fan_in` of the owning
    /// layer. LSTM parameters and all weights are zero-mean; reconstructor
    /// biases are drawn from `[0, 1/√fan_in]` so no ReLU unit starts dead.
    pub fn randomize(&mut self, rng: &mut SeededRng) {
        let r = self.lstm.state_size();
        let fan_ins: Vec<usize> = std::iter::repeat_n(2 * r, 8)
            .chain(self.mlp.layers.iter().flat_map(|l| {
                let f = l.weight.cols();
                [f, f]
            }))
            .collect();
        for ((name, tensor), fan_in) in self.tensors_mut().into_iter().zip(fan_ins) {
            let half = 1.0 / (fan_in as f64).sqrt();
            let lo = if name.starts_with("mlp.") && name.ends_with(".bias") {
                0.0
            } else {
                -half
            };
            for v in tensor.iter_mut() {
                *v = rng.uniform_range(lo, half);
            }
        }
    }
}

/// Min-max scaling to `[0, 1]` with constants taken from the training data.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Normalization {
    pub min: f64,
    pub max: f64,
}

impl Normalization {
    pub fn identity() -> Self {
        Self { min: 0.0, max: 1.0 }
    }

    /// Global min and max over valid cells of every snapshot.
    pub fn fit(series: &SnapshotSeries) -> Result<Self> {
        let valid = series.valid_cells();
        if series.is_empty() || valid.is_empty() {
            return Err(Error::arg("cannot fit normalization to an empty series"));
        }
        let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
        for snap in series.snapshots() {
            for &i in &valid {
                min = min.min(snap.values[i]);
                max = max.max(snap.values[i]);
            }
        }
        Ok(Self { min, max })
    }

    /// True when the training data was constant; everything then maps to 0.
    pub fn zero_range(&self) -> bool {
        self.max <= self.min
    }

    pub fn normalize(&self, v: f64) -> f64 {
        if self.zero_range() {
            0.0
        } else {
            (v - self.min) / (self.max - self.min)
        }
    }

    pub fn denormalize(&self, x: f64) -> f64 {
        if self.zero_range() {
            self.min
        } else {
            self.min + x * (self.max - self.min)
        }
    }
}

/// Placement, trainable parameters, carried recurrent state and the
/// normalization constants of the training data.
#[derive(Clone, Debug, PartialEq)]
pub struct NeuralReconstructor {
    pub placement: Placement,
    pub params: ModelParams,
    pub state: LstmState,
    pub norm: Normalization,
}

impl NeuralReconstructor {
    /// All-zero parameters and state, identity normalization.
    pub fn zeroed(placement: Placement, hidden_layers: usize) -> Result<Self> {
        let r = placement.len();
        let m = placement.grid().cells();
        Ok(Self {
            params: ModelParams::zeros(r, m, hidden_layers)?,
            state: LstmState::zeros(r),
            norm: Normalization::identity(),
            placement,
        })
    }

    /// Seeded uniform initialization, see [`ModelParams::randomize`].
    pub fn init(placement: Placement, hidden_layers: usize, seed: u64) -> Result<Self> {
        let mut model = Self::zeroed(placement, hidden_layers)?;
        model.params.randomize(&mut SeededRng::new(seed));
        Ok(model)
    }

    pub fn sensors(&self) -> usize {
        self.placement.len()
    }

    pub fn cells(&self) -> usize {
        self.placement.grid().cells()
    }

    pub fn reset_state(&mut self) {
        self.state = LstmState::zeros(self.sensors());
    }

    pub(crate) fn check(&self) -> Result<()> {
        let (r, m) = (self.sensors(), self.cells());
        self.params.lstm.check()?;
        if self.params.lstm.state_size() != r {
            return Err(Error::arg(format!(
                "LSTM state size {} differs from the {r} sensors",
                self.params.lstm.state_size()
            )));
        }
        self.params.mlp.check(r, m)?;
        if self.state.c.len() != r || self.state.h.len() != r {
            return Err(Error::arg("carried state has the wrong size"));
        }
        Ok(())
    }

    fn check_series(&self, series: &SnapshotSeries) -> Result<()> {
        if series.grid() != self.placement.grid() {
            return Err(Error::arg(format!(
                "series grid {:?} differs from the model grid {:?}",
                series.grid(),
                self.placement.grid()
            )));
        }
        Ok(())
    }

    pub(crate) fn normalized_fields(&self, series: &SnapshotSeries) -> Vec<Vec<f64>> {
        series
            .snapshots()
            .iter()
            .map(|s| s.values.iter().map(|&v| self.norm.normalize(v)).collect())
            .collect()
    }

    /// Advances the carried state by one snapshot and returns the reconstruction.
    pub fn step(&mut self, snapshot: &FieldSnapshot) -> Result<FieldSnapshot> {
        let (out, state) = forward(self, snapshot)?;
        self.state = state;
        Ok(out)
    }
}

/// Normalizes, samples at the sensors, advances the LSTM from the model's
/// carried state, reconstructs, denormalizes.
pub fn forward(
    model: &NeuralReconstructor,
    snapshot: &FieldSnapshot,
) -> Result<(FieldSnapshot, LstmState)> {
    model.check()?;
    if snapshot.grid() != model.placement.grid() || snapshot.values.len() != model.cells() {
        return Err(Error::arg("snapshot does not match the model grid"));
    }
    let y: Vec<f64> = model
        .placement
        .indices()
        .iter()
        .map(|&g| model.norm.normalize(snapshot.values[g]))
        .collect();
    let state = lstm_step(&model.params.lstm, &model.state, &y)?;
    let out = mlp_forward(&model.params.mlp, &state.h)?;
    Ok((
        FieldSnapshot {
            values: out.into_iter().map(|x| model.norm.denormalize(x)).collect(),
            ..snapshot.clone()
        },
        state,
    ))
}

/// Mean over the batch of the squared L2 reconstruction error, in
/// normalized units, starting from the carried state. Masked cells are skipped.
pub fn loss_mse(model: &NeuralReconstructor, batch: &SnapshotSeries) -> Result<f64> {
    Ok(evaluate_batch(model, batch, StateMode::Carry, false)?.0)
}

/// Loss and gradients for a batch, with BPTT through the whole batch.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub loss: f64,
    pub grads: ModelParams,
    /// State after the last snapshot of the batch.
    pub final_state: LstmState,
}

pub fn backward(model: &NeuralReconstructor, batch: &SnapshotSeries) -> Result<Gradients> {
    backward_with(model, batch, false)
}

/// As [`backward`]; with `reset_each_step` every snapshot starts from the
/// model's carried state instead of its predecessor's output state.
pub fn backward_with(
    model: &NeuralReconstructor,
    batch: &SnapshotSeries,
    reset_each_step: bool,
) -> Result<Gradients> {
    let mode = if reset_each_step {
        StateMode::ResetEachStep
    } else {
        StateMode::Carry
    };
    let (loss, grads, final_state) = evaluate_batch(model, batch, mode, true)?;
    Ok(Gradients {
        loss,
        grads: grads.expect("gradients requested"),
        final_state,
    })
}

fn evaluate_batch(
    model: &NeuralReconstructor,
    batch: &SnapshotSeries,
    mode: StateMode,
    want_grads: bool,
) -> Result<(f64, Option<ModelParams>, LstmState)> {
    model.check()?;
    model.check_series(batch)?;
    if batch.is_empty() {
        return Err(Error::arg("loss needs a non-empty batch"));
    }
    let fields = model.normalized_fields(batch);
    let pass = run_batch(
        &model.params,
        model.placement.indices(),
        &model.state,
        &fields,
        batch.mask(),
        mode,
        want_grads,
    );
    Ok((pass.loss, pass.grads, pass.final_state))
}

/// Stateful inference over a series: the state is reset once, then carried
/// through the snapshots in order. Returns the `m × M` reconstruction.
pub fn predict_series(model: &NeuralReconstructor, series: &SnapshotSeries) -> Result<Matrix> {
    model.check_series(series)?;
    let mut runner = model.clone();
    runner.reset_state();
    let mut columns = Vec::with_capacity(series.len());
    for snap in series.snapshots() {
        columns.push(runner.step(snap)?.values);
    }
    if columns.is_empty() {
        return Ok(Matrix::zeros(model.cells(), 0));
    }
    Matrix::from_columns(&columns)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::GridShape;

    fn series(phi: &Matrix, grid: GridShape) -> SnapshotSeries {
        SnapshotSeries::from_matrix(grid, phi, None, 0).unwrap()
    }

    fn small_model(seed: u64) -> (NeuralReconstructor, SnapshotSeries) {
        let grid = GridShape::new(1, 3);
        let placement = Placement::new(vec![0, 2], grid).unwrap();
        let mut model = NeuralReconstructor::init(placement, 2, seed).unwrap();
        let mut rng = SeededRng::new(seed + 50);
        let phi = Matrix::from_fn(3, 3, |_, _| rng.uniform_range(-1.0, 2.0));
        let s = series(&phi, grid);
        model.norm = Normalization::fit(&s).unwrap();
        (model, s)
    }

    #[test]
    fn tensor_paths_cover_every_parameter() {
        let p = ModelParams::zeros(2, 3, 2).unwrap();
        let names: Vec<String> = p.tensors().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names[0], "lstm.w_f");
        assert_eq!(names.last().unwrap(), "mlp.output.bias");
        assert_eq!(names.len(), 8 + 6);
        assert_eq!(p.parameter_count(), 4 * 2 * 4 + 4 * 2 + (6 + 3) + (6 + 2) + (6 + 3));
    }

    #[test]
    fn normalization_round_trip_and_zero_range() {
        let n = Normalization { min: -2.0, max: 6.0 };
        assert_eq!(n.normalize(2.0), 0.5);
        assert_eq!(n.denormalize(0.5), 2.0);
        let flat = Normalization { min: 3.0, max: 3.0 };
        assert!(flat.zero_range());
        assert_eq!(flat.normalize(3.0), 0.0);
        assert_eq!(flat.denormalize(0.7), 3.0);
    }

    #[test]
    fn zero_model_outputs_normalization_floor() {
        let grid = GridShape::new(2, 2);
        let placement = Placement::new(vec![0, 3], grid).unwrap();
        let mut model = NeuralReconstructor::zeroed(placement, 2).unwrap();
        model.norm = Normalization { min: -1.5, max: 4.0 };
        let snap = FieldSnapshot {
            values: vec![1.0, 2.0, 3.0, 4.0],
            height: 2,
            width: 2,
            timestamp: 0,
        };
        let (out, state) = forward(&model, &snap).unwrap();
        assert_eq!(out.values, vec![-1.5; 4]);
        assert_eq!(state, LstmState::zeros(2));
    }

    #[test]
    fn carried_state_changes_second_output() {
        let (mut model, s) = small_model(4);
        let snap = &s.snapshots()[0];
        let first = model.step(snap).unwrap();
        let second = model.step(snap).unwrap();
        assert_ne!(first.values, second.values);
        for (got, frozen) in [(&first.values, FORWARD_TWICE_FIRST), (&second.values, FORWARD_TWICE_SECOND)] {
            for (a, b) in got.iter().zip(frozen) {
                assert!((a - b).abs() < 1e-12, "{got:?}");
            }
        }
    }

    const FORWARD_TWICE_FIRST: [f64; 3] = [-0.3987508833286625, -0.06625700131358458, 0.2085156773835516];
    const FORWARD_TWICE_SECOND: [f64; 3] = [-0.3987508833286625, -0.08691364129964974, 0.20763746763678692];

    #[test]
    fn loss_of_perfect_and_offset_outputs() {
        // zero model on a constant batch: normalized targets and outputs are all 0
        let grid = GridShape::new(1, 4);
        let placement = Placement::new(vec![1], grid).unwrap();
        let mut model = NeuralReconstructor::zeroed(placement, 2).unwrap();
        let flat = series(&Matrix::from_fn(4, 2, |_, _| 5.0), grid);
        model.norm = Normalization::fit(&flat).unwrap();
        assert_eq!(loss_mse(&model, &flat).unwrap(), 0.0);
        let g = backward(&model, &flat).unwrap();
        assert!(g.grads.tensors().iter().all(|(_, t)| t.iter().all(|&v| v == 0.0)));

        // bias of +1 on every output cell with a zero target → loss = m
        let zeros = series(&Matrix::zeros(4, 1), grid);
        model.norm = Normalization { min: 0.0, max: 1.0 };
        model.params.mlp.layers.last_mut().unwrap().bias = vec![1.0; 4];
        assert_eq!(loss_mse(&model, &zeros).unwrap(), 4.0);
    }

    #[test]
    fn loss_matches_scalar_accumulation() {
        let (model, s) = small_model(9);
        let mut state = model.state.clone();
        let mut total = 0.0;
        for snap in s.snapshots() {
            let y: Vec<f64> = [0usize, 2].iter().map(|&g| model.norm.normalize(snap.values[g])).collect();
            state = lstm_step(&model.params.lstm, &state, &y).unwrap();
            let out = mlp_forward(&model.params.mlp, &state.h).unwrap();
            for (o, v) in out.iter().zip(&snap.values) {
                let d = o - model.norm.normalize(*v);
                total += d * d;
            }
        }
        total /= s.len() as f64;
        assert!((loss_mse(&model, &s).unwrap() - total).abs() < 1e-10);
    }

    #[test]
    fn outputs_never_fall_below_training_minimum() {
        let (model, s) = small_model(1);
        let pred = predict_series(&model, &s).unwrap();
        assert!(pred.as_slice().iter().all(|&v| v >= model.norm.min));
    }

    #[test]
    fn permuting_sensors_with_wiring_leaves_loss_unchanged() {
        let grid = GridShape::new(2, 3);
        let placement = Placement::new(vec![0, 4, 5], grid).unwrap();
        let mut model = NeuralReconstructor::init(placement, 2, 7).unwrap();
        let mut rng = SeededRng::new(70);
        let s = series(&Matrix::from_fn(6, 4, |_, _| rng.normal()), grid);
        model.norm = Normalization::fit(&s).unwrap();
        let base = loss_mse(&model, &s).unwrap();

        let perm = [2, 0, 1];
        let mut permuted = model.clone();
        permuted.placement = Placement::new(perm.iter().map(|&k| model.placement.indices()[k]).collect(), grid).unwrap();
        let r = 3;
        for (dst, src) in [
            (&mut permuted.params.lstm.w_f, &model.params.lstm.w_f),
            (&mut permuted.params.lstm.w_i, &model.params.lstm.w_i),
            (&mut permuted.params.lstm.w_c, &model.params.lstm.w_c),
            (&mut permuted.params.lstm.w_o, &model.params.lstm.w_o),
        ] {
            for row in 0..r {
                for (k, &p) in perm.iter().enumerate() {
                    dst[(row, r + k)] = src[(row, r + p)];
                }
            }
        }
        let moved = loss_mse(&permuted, &s).unwrap();
        assert!((moved - base).abs() <= 1e-12 * base.max(1.0));
    }

    #[test]
    fn duplicated_batch_keeps_gradient_direction() {
        let (model, s) = small_model(5);
        let phi = s.to_matrix();
        let doubled = Matrix::from_fn(3, 6, |i, j| phi[(i, j / 2)]);
        let g1 = backward_with(&model, &s, true).unwrap().grads;
        let g2 = backward_with(&model, &series(&doubled, s.grid()), true).unwrap().grads;
        let flat = |g: &ModelParams| g.tensors().into_iter().flat_map(|(_, t)| t.to_vec()).collect::<Vec<_>>();
        let (a, b) = (flat(&g1), flat(&g2));
        let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(na > 0.0);
        assert!((dot / (na * nb) - 1.0).abs() < 1e-12);
        assert!((na - nb).abs() < 1e-12 * na);
    }

    #[test]
    fn grid_mismatch_rejected() {
        let (model, _) = small_model(0);
        let other = series(&Matrix::zeros(4, 2), GridShape::new(2, 2));
        assert!(loss_mse(&model, &other).is_err());
        assert!(loss_mse(&model, &other.slice(0..0)).is_err());
    }
}
