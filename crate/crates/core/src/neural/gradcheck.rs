use super::backprop::{run_batch, StateMode};
use super::{backward, ModelParams, NeuralReconstructor};
use crate::data::SnapshotSeries;
use crate::error::{Error, Result};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Magnitude below which deviations are measured in absolute rather than
/// relative terms.
const DEVIATION_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_deviation: f64,
    /// Path of the component with the largest deviation, e.g. `lstm.w_f[3]`.
    pub worst: String,
    /// Largest deviation per parameter tensor.
    pub per_tensor: Vec<(String, f64)>,
    /// Components skipped because a perturbation crossed a ReLU kink.
    pub skipped: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// Checks analytic gradients of `loss_mse` against central differences.
pub fn gradient_check(
    model: &NeuralReconstructor,
    batch: &SnapshotSeries,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let analytic = backward(model, batch)?.grads;
    check_gradients(model, batch, &analytic, tolerance)
}

/// As [`gradient_check`] with a caller-supplied gradient set.
pub fn check_gradients(
    model: &NeuralReconstructor,
    batch: &SnapshotSeries,
    analytic: &ModelParams,
    tolerance: f64,
) -> Result<GradCheckReport> {
    model.check()?;
    model.check_series(batch)?;
    if batch.is_empty() {
        return Err(Error::arg("gradient check needs a non-empty batch"));
    }
    if analytic.parameter_count() != model.params.parameter_count() {
        return Err(Error::arg("gradient set does not match the model"));
    }
    let fields = model.normalized_fields(batch);
    let gamma = model.placement.indices();
    let eval = |p: &ModelParams| {
        run_batch(p, gamma, &model.state, &fields, batch.mask(), StateMode::Carry, false)
    };
    let pattern = eval(&model.params).relu_pattern;

    let mut probe = model.params.clone();
    let mut report = GradCheckReport {
        max_deviation: 0.0,
        worst: String::new(),
        per_tensor: Vec::new(),
        skipped: 0,
        tolerance,
        passed: true,
    };
    let analytic = analytic.tensors();
    for (t, (name, grad)) in analytic.iter().enumerate() {
        let mut tensor_max: f64 = 0.0;
        for k in 0..grad.len() {
            let original = probe.tensors()[t].1[k];
            let mut shifted = |delta: f64| {
                probe.tensors_mut()[t].1[k] = original + delta;
                let pass = eval(&probe);
                probe.tensors_mut()[t].1[k] = original;
                pass
            };
            let plus = shifted(FD_STEP);
            let minus = shifted(-FD_STEP);
            if plus.relu_pattern != pattern || minus.relu_pattern != pattern {
                report.skipped += 1;
                continue;
            }
            let numeric = (plus.loss - minus.loss) / (2.0 * FD_STEP);
            let a = grad[k];
            let dev = (a - numeric).abs() / a.abs().max(numeric.abs()).max(DEVIATION_FLOOR);
            tensor_max = tensor_max.max(dev);
            if dev > report.max_deviation {
                report.max_deviation = dev;
                report.worst = format!("{name}[{k}]");
            }
        }
        report.per_tensor.push((name.clone(), tensor_max));
    }
    report.passed = report.max_deviation <= tolerance;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::GridShape;
    use crate::linalg::Matrix;
    use crate::neural::Normalization;
    use crate::placement::Placement;
    use crate::rng::SeededRng;

    fn seeded(seed: u64) -> (NeuralReconstructor, SnapshotSeries) {
        let grid = GridShape::new(1, 3);
        let placement = Placement::new(vec![0, 2], grid).unwrap();
        let mut model = NeuralReconstructor::init(placement, 2, seed).unwrap();
        let mut rng = SeededRng::new(1000 + seed);
        let phi = Matrix::from_fn(3, 3, |_, _| rng.uniform());
        let batch = SnapshotSeries::from_matrix(grid, &phi, None, 0).unwrap();
        model.norm = Normalization::fit(&batch).unwrap();
        (model, batch)
    }

    #[test]
    fn zero_model_has_zero_deviation() {
        let grid = GridShape::new(1, 3);
        let model = NeuralReconstructor::zeroed(Placement::new(vec![0, 1], grid).unwrap(), 2).unwrap();
        let batch = SnapshotSeries::from_matrix(grid, &Matrix::from_fn(3, 3, |i, j| (i + j) as f64 * 0.1), None, 0).unwrap();
        let report = gradient_check(&model, &batch, 1e-5).unwrap();
        assert_eq!(report.max_deviation, 0.0);
        assert!(report.passed);
    }

    #[test]
    fn seeded_models_pass() {
        for seed in 0..3 {
            let (model, batch) = seeded(seed);
            let report = gradient_check(&model, &batch, 1e-5).unwrap();
            assert!(report.passed, "seed {seed}: {report:?}");
            assert_eq!(report.per_tensor.len(), 14);
        }
    }

    #[test]
    fn corrupted_gradient_is_named() {
        let (model, batch) = seeded(1);
        let mut grads = backward(&model, &batch).unwrap().grads;
        let (mut best, mut path) = (0.0, String::new());
        for (name, t) in grads.tensors() {
            for (k, v) in t.iter().enumerate() {
                if v.abs() > best {
                    best = v.abs();
                    path = format!("{name}[{k}]");
                }
            }
        }
        for (name, t) in grads.tensors_mut() {
            for (k, v) in t.iter_mut().enumerate() {
                if format!("{name}[{k}]") == path {
                    *v = -*v;
                }
            }
        }
        let report = check_gradients(&model, &batch, &grads, 1e-5).unwrap();
        assert!(!report.passed);
        assert_eq!(report.worst, path);
        assert!((report.max_deviation - 2.0).abs() < 1e-4);
    }
}
