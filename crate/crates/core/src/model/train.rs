use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{clip_gradients, lr_at, Model, ModelConfig, Parameters};
use crate::corpus::{CleanItem, CorpusConfig};
use crate::error::{Error, Result};
use crate::loss::{eval_loss, Huber, Weighting};
use crate::metrics::plcc;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub warmup_ratio: f64,
    pub max_grad_norm: f64,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            peak_lr: 1e-2,
            warmup_ratio: 0.1,
            max_grad_norm: 1.0,
            patience: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let problem = if self.epochs == 0 {
            Some("epochs must be at least 1")
        } else if self.batch_size == 0 {
            Some("batch_size must be at least 1")
        } else if !(0.0..1.0).contains(&self.warmup_ratio) {
            Some("warmup_ratio must lie in [0, 1)")
        } else if self.max_grad_norm.is_nan() || self.max_grad_norm <= 0.0 {
            Some("max_grad_norm must be positive")
        } else if !(self.peak_lr >= 0.0 && self.peak_lr.is_finite()) {
            Some("peak_lr must be finite and non-negative")
        } else if self.patience == 0 {
            Some("patience must be at least 1")
        } else {
            None
        };
        problem.map_or(Ok(()), |p| Err(Error::Config(p.into())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean weighted training loss over the epoch's batches (per sample).
    pub train_loss: f64,
    /// `None` when the correlation was undefined (constant predictions).
    pub val_plcc: Option<f64>,
    pub val_huber: f64,
    pub steps: usize,
    pub last_lr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochEval {
    pub plcc: Option<f64>,
    pub huber: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopVerdict {
    Improved,
    NoImprovement,
    Stop,
}

/// Patience-based stopping on a score to maximise. The first observation is
/// always an improvement; later ones must beat the best strictly. Undefined
/// scores rank below everything.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            stale: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, score: Option<f64>) -> StopVerdict {
        let score = score.filter(|s| !s.is_nan()).unwrap_or(f64::NEG_INFINITY);
        match self.best {
            Some((_, best)) if score <= best => {
                self.stale += 1;
                if self.stale >= self.patience {
                    StopVerdict::Stop
                } else {
                    StopVerdict::NoImprovement
                }
            }
            _ => {
                self.best = Some((epoch, score));
                self.stale = 0;
                StopVerdict::Improved
            }
        }
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.map(|(e, _)| e)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the best validation epoch.
    pub model: Model,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Deterministic predictions (dropout off) for every item.
pub fn predict_items(model: &Model, items: &[CleanItem]) -> Result<Vec<f64>> {
    items.iter().map(|i| model.predict_item(i)).collect()
}

fn validation_eval(model: &Model, val_set: &[CleanItem], huber: &Huber) -> Result<EpochEval> {
    let preds = predict_items(model, val_set)?;
    let targets: Vec<f64> = val_set.iter().map(|i| i.average_rating).collect();
    Ok(EpochEval {
        plcc: plcc(&preds, &targets).ok(),
        huber: eval_loss(&preds, &targets, huber)?,
    })
}

/// Mini-batch gradient descent on the weighted Huber loss with the
/// warmup-cosine schedule and global-norm clipping. After each epoch the
/// validation PLCC and unweighted Huber are computed; training stops once
/// PLCC has not improved for `patience` epochs and the best epoch's
/// parameters are returned.
pub fn train(
    train_set: &[CleanItem],
    val_set: &[CleanItem],
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    weighting: &Weighting,
) -> Result<TrainOutcome> {
    if val_set.is_empty() {
        return Err(Error::Empty("validation split"));
    }
    let huber = Huber::new(model_config.delta)?;
    train_with(train_set, model_config, train_config, weighting, |_, model| {
        validation_eval(model, val_set, &huber)
    })
}

/// [`train`] with a caller-supplied per-epoch evaluation.
///
/// Data order is reshuffled every epoch from stream `(seed, "epoch:<n>")`;
/// dropout masks come from `(seed, "dropout")`. The output bias starts at the
/// mean training target.
pub fn train_with<F>(
    train_set: &[CleanItem],
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    weighting: &Weighting,
    mut evaluate: F,
) -> Result<TrainOutcome>
where
    F: FnMut(usize, &Model) -> Result<EpochEval>,
{
    train_config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Empty("training split"));
    }
    let huber = Huber::new(model_config.delta)?;
    let mut model = Model::new(model_config.clone())?;
    let mean_target = train_set.iter().map(|i| i.average_rating).sum::<f64>() / train_set.len() as f64;
    model.params.head.last_mut().expect("head has an output layer").bias[0] = mean_target;

    let weights: Vec<f64> = train_set.iter().map(|i| weighting.weight(i.rating_number)).collect();
    let batch_size = train_config.batch_size;
    let steps_per_epoch = train_set.len().div_ceil(batch_size);
    let total_steps = steps_per_epoch * train_config.epochs;
    let mut dropout_rng = rng::stream(train_config.seed, "dropout");
    let use_dropout = model_config.dropout > 0.0;

    let mut stopper = EarlyStopping::new(train_config.patience);
    let mut best: Parameters = model.params.clone();
    let mut history = Vec::new();
    let mut step = 0;
    let mut stopped_early = false;

    for epoch in 1..=train_config.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        rng::shuffle(
            &mut rng::stream(train_config.seed, &format!("epoch:{epoch}")),
            &mut order,
        );

        let mut loss_sum = 0.0;
        let mut lr = 0.0;
        for chunk in order.chunks(batch_size) {
            let batch: Vec<&CleanItem> = chunk.iter().map(|&i| &train_set[i]).collect();
            let batch_weights: Vec<f64> = chunk.iter().map(|&i| weights[i]).collect();
            lr = lr_at(step, total_steps, train_config.warmup_ratio, train_config.peak_lr);
            let mut out = model
                .loss_and_grad(&batch, &batch_weights, &huber, use_dropout.then_some(&mut dropout_rng))
                .map_err(|e| match e {
                    Error::NonFinite { context } => Error::NonFinite {
                        context: format!("epoch {epoch}, step {step}: {context}"),
                    },
                    other => other,
                })?;
            clip_gradients(&mut out.grads, train_config.max_grad_norm);
            model.params.add_scaled(-lr, &out.grads);
            loss_sum += out.loss * batch.len() as f64;
            step += 1;
        }

        let eval = evaluate(epoch, &model)?;
        if !eval.huber.is_finite() {
            return Err(Error::NonFinite {
                context: format!("validation loss after epoch {epoch}"),
            });
        }
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            val_plcc: eval.plcc,
            val_huber: eval.huber,
            steps: steps_per_epoch,
            last_lr: lr,
        });
        log::info!(
            "epoch {epoch}: train loss {:.5}, val plcc {:?}, val huber {:.5}",
            loss_sum / train_set.len() as f64,
            eval.plcc,
            eval.huber
        );
        match stopper.observe(epoch, eval.plcc) {
            StopVerdict::Improved => best.clone_from(&model.params),
            StopVerdict::NoImprovement => {}
            StopVerdict::Stop => {
                stopped_early = epoch < train_config.epochs;
                break;
            }
        }
    }

    model.params = best;
    Ok(TrainOutcome {
        model,
        history,
        best_epoch: stopper.best_epoch().expect("at least one epoch ran"),
        stopped_early,
    })
}

const CHECKPOINT_FORMAT: &str = "dualrate-checkpoint/1";

/// Everything needed to reproduce inference: preprocessing and model
/// configs, parameters, the weighting used in training and the history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub model_config: ModelConfig,
    pub corpus: CorpusConfig,
    pub weighting: Weighting,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    pub params: Parameters,
}

impl Checkpoint {
    pub fn new(outcome: TrainOutcome, corpus: CorpusConfig, weighting: Weighting) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            model_config: outcome.model.config,
            corpus,
            weighting,
            best_epoch: outcome.best_epoch,
            history: outcome.history,
            params: outcome.model.params,
        }
    }

    pub fn model(&self) -> Result<Model> {
        Model::from_parts(self.model_config.clone(), self.params.clone())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer(&mut w, self)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_reader(BufReader::new(file))?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::Config(format!(
                "unsupported checkpoint format `{}`",
                ckpt.format
            )));
        }
        ckpt.params.check_shapes(&ckpt.model_config)?;
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn early_stopping_scenario() {
        let mut s = EarlyStopping::new(1);
        assert_eq!(s.observe(1, Some(0.20)), StopVerdict::Improved);
        assert_eq!(s.observe(2, Some(0.30)), StopVerdict::Improved);
        assert_eq!(s.observe(3, Some(0.25)), StopVerdict::Stop);
        assert_eq!(s.best_epoch(), Some(2));
    }

    #[test]
    fn early_stopping_patience_two() {
        let mut s = EarlyStopping::new(2);
        s.observe(1, Some(0.5));
        assert_eq!(s.observe(2, Some(0.5)), StopVerdict::NoImprovement);
        assert_eq!(s.observe(3, Some(0.6)), StopVerdict::Improved);
        assert_eq!(s.observe(4, None), StopVerdict::NoImprovement);
        assert_eq!(s.observe(5, Some(0.1)), StopVerdict::Stop);
        assert_eq!(s.best_epoch(), Some(3));
    }

    #[test]
    fn undefined_first_score_is_still_a_checkpoint() {
        let mut s = EarlyStopping::new(1);
        assert_eq!(s.observe(1, None), StopVerdict::Improved);
        assert_eq!(s.observe(2, Some(-0.9)), StopVerdict::Improved);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig {
            epochs: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            warmup_ratio: 1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            max_grad_norm: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            patience: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
