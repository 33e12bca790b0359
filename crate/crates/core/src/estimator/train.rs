use rayon::prelude::*;

use super::{adam_step, EstimatorError, ForwardMode, LogCosh, Network, Result, TrainConfig};
use crate::dataset::{DatasetManifest, Sample, Split};
use crate::patch::{PatchProvider, PatchTensor};
use crate::rng::Xoshiro256StarStar;
use crate::table::PredictionRow;
use crate::Scalar;

/// Offset mixed into the seed for the batching/dropout stream so it never
/// coincides with the initialization stream of the same seed.
const TRAIN_STREAM: u64 = 0x5452_4149_4E5F_5354;

const PREDICT_CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLoss {
    pub step: usize,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    /// Network carrying the best-validation parameters.
    pub network: Network<T>,
    /// Batch loss (summed over the batch) after every step.
    pub curve: Vec<StepLoss>,
    /// Mean per-sample validation loss, step 0 included.
    pub validation: Vec<StepLoss>,
    pub best_step: usize,
    pub steps_run: usize,
    pub stopped_early: bool,
}

impl<T> TrainOutcome<T> {
    pub fn initial_validation(&self) -> Option<f64> {
        self.validation.first().map(|s| s.loss)
    }

    pub fn best_validation(&self) -> Option<f64> {
        self.validation
            .iter()
            .map(|s| s.loss)
            .min_by(|a, b| a.total_cmp(b))
    }
}

fn fetch<T: Scalar, P: PatchProvider<T>>(
    provider: &P,
    samples: &[&Sample],
) -> Result<Vec<PatchTensor<T>>> {
    samples
        .par_iter()
        .map(|s| provider.patch(s.cell()).map_err(EstimatorError::from))
        .collect()
}

fn mean_loss<T: Scalar>(
    net: &Network<T>,
    patches: &[PatchTensor<T>],
    truth: &[T],
    loss: &LogCosh,
) -> Result<f64> {
    let mut total = 0.0;
    for (chunk, t) in patches.chunks(PREDICT_CHUNK).zip(truth.chunks(PREDICT_CHUNK)) {
        let out = net.predict_batch(chunk)?;
        total += loss.loss(&out, t)?.as_f64();
    }
    Ok(total / patches.len() as f64)
}

/// Mini-batch Adam on the training split with validation-based early
/// stopping. The returned network holds the parameters of the best
/// validation evaluation. Given the same inputs and seed every loss value
/// and parameter is reproduced exactly.
pub fn train<T: Scalar, P: PatchProvider<T>>(
    mut net: Network<T>,
    manifest: &DatasetManifest,
    provider: &P,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let train_set: Vec<&Sample> = manifest.split(Split::Train).collect();
    let valid_set: Vec<&Sample> = manifest.split(Split::Valid).collect();
    if train_set.is_empty() {
        return Err(EstimatorError::EmptySplit("train"));
    }
    if valid_set.is_empty() {
        return Err(EstimatorError::EmptySplit("valid"));
    }
    if cfg.max_steps == 0 {
        return Ok(TrainOutcome {
            network: net,
            curve: vec![],
            validation: vec![],
            best_step: 0,
            steps_run: 0,
            stopped_early: false,
        });
    }

    let loss = LogCosh::new(cfg.loss_base);
    let valid_patches = fetch(provider, &valid_set)?;
    let valid_truth: Vec<T> = valid_set.iter().map(|s| T::of(s.target_lg)).collect();

    let mut rng = Xoshiro256StarStar::seed_from_u64(cfg.seed ^ TRAIN_STREAM);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut cursor = order.len();

    let initial = mean_loss(&net, &valid_patches, &valid_truth, &loss)?;
    let mut validation = vec![StepLoss { step: 0, loss: initial }];
    let mut best = (initial, 0usize, net.params().values.clone());
    let mut stale = 0usize;
    let mut curve = Vec::with_capacity(cfg.max_steps);
    let mut stopped_early = false;
    let mut steps_run = 0;

    for step in 1..=cfg.max_steps {
        if cursor >= order.len() {
            rng.shuffle(&mut order);
            cursor = 0;
        }
        let end = (cursor + cfg.batch_size).min(order.len());
        let picked: Vec<&Sample> = order[cursor..end].iter().map(|&i| train_set[i]).collect();
        cursor = end;

        let batch = fetch(provider, &picked)?;
        let truth: Vec<T> = picked.iter().map(|s| T::of(s.target_lg)).collect();
        let mode = if cfg.dropout_enabled {
            ForwardMode::Train(&mut rng)
        } else {
            ForwardMode::TrainNoDropout
        };
        let pass = net.forward(&batch, mode)?;
        let batch_loss = loss.loss(&pass.outputs, &truth)?.as_f64();
        if !batch_loss.is_finite() {
            return Err(EstimatorError::Diverged { step, loss: batch_loss });
        }
        let grads = net.backward(&batch, &pass, &truth, &loss)?;
        adam_step(net.params_mut(), &grads, cfg).map_err(|e| match e {
            EstimatorError::PoisonedUpdate { .. } => EstimatorError::Diverged { step, loss: batch_loss },
            other => other,
        })?;
        curve.push(StepLoss { step, loss: batch_loss });
        steps_run = step;

        if step % cfg.eval_every == 0 || step == cfg.max_steps {
            let v = mean_loss(&net, &valid_patches, &valid_truth, &loss)?;
            if !v.is_finite() {
                return Err(EstimatorError::Diverged { step, loss: v });
            }
            validation.push(StepLoss { step, loss: v });
            if v < best.0 {
                best = (v, step, net.params().values.clone());
                stale = 0;
            } else {
                stale += 1;
                if stale >= cfg.patience {
                    stopped_early = true;
                    break;
                }
            }
        }
    }

    let (_, best_step, best_values) = best;
    net.params_mut().values = best_values;
    Ok(TrainOutcome {
        network: net,
        curve,
        validation,
        best_step,
        steps_run,
        stopped_early,
    })
}

/// Deterministic predictions for `cells`, in order.
pub fn predict<T: Scalar, P: PatchProvider<T>>(
    net: &Network<T>,
    cells: &[(usize, usize)],
    provider: &P,
) -> Result<Vec<T>> {
    let mut out = Vec::with_capacity(cells.len());
    for chunk in cells.chunks(PREDICT_CHUNK) {
        let batch: Vec<PatchTensor<T>> = chunk
            .par_iter()
            .map(|&c| provider.patch(c).map_err(EstimatorError::from))
            .collect::<Result<_>>()?;
        out.extend(net.predict_batch(&batch)?);
    }
    Ok(out)
}

/// One prediction row per manifest sample, in manifest order.
pub fn predict_table<T: Scalar, P: PatchProvider<T>>(
    net: &Network<T>,
    manifest: &DatasetManifest,
    provider: &P,
) -> Result<Vec<PredictionRow>> {
    let cells: Vec<(usize, usize)> = manifest.samples.iter().map(Sample::cell).collect();
    let preds = predict(net, &cells, provider)?;
    Ok(manifest
        .samples
        .iter()
        .zip(preds)
        .map(|(s, p)| PredictionRow {
            row: s.row,
            col: s.col,
            split: s.split,
            target_lg: s.target_lg,
            pred_lg: p.as_f64(),
        })
        .collect())
}
