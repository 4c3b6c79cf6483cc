//! The training loop: shuffled minibatches, L1 loss, Adam, per-epoch
//! validation, best-validation parameter tracking, and early stopping.
//!
//! Determinism contract: every random choice derives from `config.seed`
//! through fixed streams — parameter initialization uses the seed directly,
//! the epoch shuffle uses one derived stream, and each optimizer step's
//! dropout masks use a per-step derived seed. Identical config and data
//! therefore reproduce the run bit for bit.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{shuffled_starts, WindowSet};
use crate::model::adam::Adam;
use crate::model::{l1_loss, Model, ModelError};
use crate::substrate::{ParamSet, Scalar, SubstrateError, Tape};

const SHUFFLE_STREAM: u64 = 1;
const DROPOUT_STREAM: u64 = 2;

/// Mixes a base seed with a stream tag and a counter into an independent
/// 64-bit seed (splitmix64 finalizer).
pub fn derived_seed(base: u64, stream: u64, counter: u64) -> u64 {
    fn splitmix64(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    splitmix64(base ^ splitmix64(stream ^ splitmix64(counter)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug)]
pub struct TrainReport<T: Scalar> {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch with the lowest validation loss.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub best_params: ParamSet<T>,
    pub final_params: ParamSet<T>,
    pub steps_taken: usize,
    pub stopped_early: bool,
}

/// Runs up to `config.max_epochs` epochs (or exactly `step_limit` optimizer
/// steps if given, finishing the epoch record early). `on_epoch` fires after
/// each recorded epoch, before early-stop bookkeeping.
pub fn train<T: Scalar>(
    model: &Model,
    params: ParamSet<T>,
    training: &WindowSet<T>,
    validation: &WindowSet<T>,
    step_limit: Option<usize>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainReport<T>, ModelError> {
    let cfg = &model.config;
    let mut params = params;
    let mut adam = Adam::new(&params);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derived_seed(cfg.seed, SHUFFLE_STREAM, 0));

    let mut epochs = Vec::new();
    let mut best_epoch = 0usize;
    let mut best_val_loss = f64::INFINITY;
    let mut best_params = params.clone();
    let mut steps_taken = 0usize;
    let mut stopped_early = false;

    'epochs: for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        let order = shuffled_starts(training.len(), &mut shuffle_rng);
        let mut loss_sum = 0.0f64;
        let mut seen = 0usize;
        let mut hit_limit = false;

        for (batch_index, chunk) in order.chunks(cfg.batch).enumerate() {
            let (inputs, targets) = training.batch(chunk);
            let mut tape = Tape::with_seed(derived_seed(cfg.seed, DROPOUT_STREAM, steps_taken as u64));
            let diverged = |e: ModelError| match e {
                ModelError::Stage {
                    source: SubstrateError::NonFinite { .. },
                    ..
                }
                | ModelError::Substrate(SubstrateError::NonFinite { .. }) => {
                    ModelError::Diverged { epoch, batch: batch_index }
                }
                other => other,
            };
            // Optimizer blow-ups surface as non-finite parameters when the
            // next step stages them, so that path maps to divergence too.
            let vars = params
                .register_on(&mut tape)
                .map_err(ModelError::from)
                .map_err(diverged)?;
            let x = tape.leaf(inputs)?;
            let y = tape.leaf(targets)?;
            let pred = model.forward(&mut tape, &vars, x, true).map_err(diverged)?;
            let loss = l1_loss(&mut tape, pred, y)
                .map_err(ModelError::from)
                .map_err(diverged)?;
            let loss_value = Scalar::to_f64(tape.value(loss).data()[0]);
            if !loss_value.is_finite() {
                return Err(ModelError::Diverged { epoch, batch: batch_index });
            }
            tape.backward(loss)
                .map_err(ModelError::from)
                .map_err(diverged)?;
            params.collect_grads(&tape, &vars);
            adam.step(&mut params, cfg.lr);

            loss_sum += loss_value * chunk.len() as f64;
            seen += chunk.len();
            steps_taken += 1;
            if step_limit.is_some_and(|limit| steps_taken >= limit) {
                hit_limit = true;
                break;
            }
        }

        let train_loss = loss_sum / seen as f64;
        let val_loss = evaluate_loss(model, &params, validation)?;
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        epochs.push(record);

        if val_loss < best_val_loss {
            best_val_loss = val_loss;
            best_epoch = epoch;
            best_params = params.clone();
        } else if epoch - best_epoch >= cfg.patience {
            stopped_early = true;
            break 'epochs;
        }
        if hit_limit {
            break 'epochs;
        }
    }

    Ok(TrainReport {
        epochs,
        best_epoch,
        best_val_loss,
        best_params,
        final_params: params,
        steps_taken,
        stopped_early,
    })
}

/// Mean L1 over a window set in evaluation mode (dropout off), weighted so
/// the result is the mean over windows regardless of batch boundaries.
pub fn evaluate_loss<T: Scalar>(
    model: &Model,
    params: &ParamSet<T>,
    windows: &WindowSet<T>,
) -> Result<f64, ModelError> {
    let starts: Vec<usize> = (0..windows.len()).collect();
    let mut loss_sum = 0.0f64;
    let mut seen = 0usize;
    for chunk in starts.chunks(model.config.batch) {
        let (inputs, targets) = windows.batch(chunk);
        let mut tape = Tape::new();
        let vars = params.register_on(&mut tape)?;
        let x = tape.leaf(inputs)?;
        let y = tape.leaf(targets)?;
        let pred = model.forward(&mut tape, &vars, x, false)?;
        let loss = l1_loss(&mut tape, pred, y)?;
        loss_sum += Scalar::to_f64(tape.value(loss).data()[0]) * chunk.len() as f64;
        seen += chunk.len();
    }
    Ok(loss_sum / seen as f64)
}
