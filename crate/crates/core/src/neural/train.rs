use super::adam::{adam_step, AdamState, TrainConfig};
use super::backprop::{run_batch, StateMode};
use super::{NeuralReconstructor, Normalization};
use crate::data::SnapshotSeries;
use crate::error::{Error, Result};
use crate::placement::Placement;

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: NeuralReconstructor,
    /// Batch loss before each optimizer step, in normalized units.
    pub loss_history: Vec<f64>,
}

/// Trains `model` on `train_series`. Fits the normalization to the series,
/// then runs `epochs` passes over consecutive batches in time order. State
/// is reset at each epoch start and carried across batches; gradients stop
/// at batch boundaries. The last batch of a pass is short when the series
/// length is not a multiple of the batch size.
pub fn train(
    mut model: NeuralReconstructor,
    train_series: &SnapshotSeries,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    model.check()?;
    model.check_series(train_series)?;
    let len = train_series.len();
    if config.batch_size > len {
        return Err(Error::arg(format!(
            "batch size {} exceeds the {len} training snapshots",
            config.batch_size
        )));
    }
    model.norm = Normalization::fit(train_series)?;
    let fields = model.normalized_fields(train_series);
    let batches: Vec<&[Vec<f64>]> = fields.chunks(config.batch_size).collect();
    let total = config.epochs * batches.len();
    let mut moments = AdamState::new(&model.params, total);
    let mut history = Vec::with_capacity(total);
    let mut step = 0;
    for _ in 0..config.epochs {
        model.reset_state();
        for batch in &batches {
            let pass = run_batch(
                &model.params,
                model.placement.indices(),
                &model.state,
                batch,
                train_series.mask(),
                StateMode::Carry,
                true,
            );
            step += 1;
            if !pass.loss.is_finite() {
                return Err(Error::NonFinite {
                    location: format!("training loss at step {step}"),
                });
            }
            history.push(pass.loss);
            let grads = pass.grads.expect("gradients requested");
            adam_step(&mut model.params, &grads, &mut moments, step, config)?;
            if !model.params.is_finite() {
                return Err(Error::NonFinite {
                    location: format!("model parameters after step {step}"),
                });
            }
            model.state = pass.final_state;
        }
    }
    model.reset_state();
    Ok(TrainOutcome {
        model,
        loss_history: history,
    })
}

/// Initializes a model from `config.seed` and trains it.
pub fn fit_neural(
    placement: Placement,
    train_series: &SnapshotSeries,
    hidden_layers: usize,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let model = NeuralReconstructor::init(placement, hidden_layers, config.seed)?;
    train(model, train_series, config)
}
