use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{backward_into, dataset_loss, Dataset, Gradients, MlpModel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Upper bound on epochs; early stopping may end sooner.
    pub epochs: usize,
    pub batch_size: usize,
    /// Seeds shuffling and the holdout split.
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub shuffle: bool,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Stop after this many epochs without improvement. `None` disables
    /// early stopping.
    pub patience: Option<usize>,
    /// Relative loss decrease that counts as an improvement.
    pub min_rel_improvement: f64,
    /// Fraction of rows held out (never trained on) and monitored for early
    /// stopping instead of the training loss.
    pub holdout_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 2000,
            batch_size: 256,
            seed: 0,
            optimizer: OptimizerKind::Adam,
            shuffle: true,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            patience: Some(50),
            min_rel_improvement: 1e-3,
            holdout_fraction: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        // zero is accepted: it freezes the parameters
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "train.learning_rate must be a finite non-negative number, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("train.beta1 and train.beta2 must lie in [0, 1)".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("train.epsilon must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::Config("train.holdout_fraction must lie in [0, 1)".into()));
        }
        if !(self.min_rel_improvement >= 0.0) {
            return Err(Error::Config("train.min_rel_improvement must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainReport {
    /// Training-set MSE before the first update.
    pub initial_loss: f64,
    /// Training-set MSE after each epoch.
    pub loss_history: Vec<f64>,
    /// Holdout MSE after each epoch (empty without a holdout).
    pub holdout_history: Vec<f64>,
    pub stopped_early: bool,
}

impl TrainReport {
    pub fn final_loss(&self) -> f64 {
        self.loss_history.last().copied().unwrap_or(self.initial_loss)
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

/// Mini-batch training on the MSE. Fully deterministic for a given
/// `(model, data, cfg)`.
pub fn train(mut model: MlpModel, data: &Dataset, cfg: &TrainConfig) -> Result<(MlpModel, TrainReport)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let (train_set, holdout) = if cfg.holdout_fraction > 0.0 {
        let mut idx: Vec<usize> = (0..data.len()).collect();
        idx.shuffle(&mut rng);
        let n_hold = ((data.len() as f64) * cfg.holdout_fraction).round() as usize;
        if n_hold == 0 || n_hold >= data.len() {
            return Err(Error::Config(format!(
                "holdout fraction {} leaves no usable split of {} rows",
                cfg.holdout_fraction,
                data.len()
            )));
        }
        let (hold, rest) = idx.split_at(n_hold);
        let mut rest = rest.to_vec();
        let mut hold = hold.to_vec();
        rest.sort_unstable();
        hold.sort_unstable();
        (data.subset(&rest), Some(data.subset(&hold)))
    } else {
        (data.clone(), None)
    };

    let n_params = model.param_count();
    let mut adam = Adam {
        m: vec![0.0; n_params],
        v: vec![0.0; n_params],
        t: 0,
    };
    let mut grads = Gradients::zeros_like(&model);
    let mut scratch = model.scratch();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut report = TrainReport {
        initial_loss: dataset_loss(&model, &train_set)?,
        ..TrainReport::default()
    };
    let mut best = f64::INFINITY;
    let mut since_best = 0;

    for epoch in 0..cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        for batch in order.chunks(cfg.batch_size) {
            backward_into(&model, &train_set, batch, &mut grads, &mut scratch).map_err(|e| match e {
                Error::NonFinite(message) => Error::Training { epoch, message },
                other => other,
            })?;
            apply_update(&mut model, &grads, cfg, &mut adam);
        }

        let loss = dataset_loss(&model, &train_set)?;
        if !loss.is_finite() || !model.all_finite() {
            return Err(Error::Training {
                epoch,
                message: format!("training loss became {loss}"),
            });
        }
        report.loss_history.push(loss);
        let monitored = match &holdout {
            Some(h) => {
                let l = dataset_loss(&model, h)?;
                report.holdout_history.push(l);
                l
            }
            None => loss,
        };

        if let Some(patience) = cfg.patience {
            if monitored < best * (1.0 - cfg.min_rel_improvement) {
                best = monitored;
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= patience {
                    report.stopped_early = true;
                    break;
                }
            }
        }
    }
    Ok((model, report))
}

fn apply_update(model: &mut MlpModel, grads: &Gradients, cfg: &TrainConfig, adam: &mut Adam) {
    let lr = cfg.learning_rate;
    let params = model
        .layers
        .iter_mut()
        .flat_map(|l| l.w.iter_mut().chain(l.b.iter_mut()));
    let gs = grads.layers.iter().flat_map(|l| l.w.iter().chain(&l.b));
    match cfg.optimizer {
        OptimizerKind::Sgd => {
            for (p, g) in params.zip(gs) {
                *p -= lr * g;
            }
        }
        OptimizerKind::Adam => {
            adam.t += 1;
            let bc1 = 1.0 - cfg.beta1.powi(adam.t);
            let bc2 = 1.0 - cfg.beta2.powi(adam.t);
            for ((p, g), (m, v)) in params.zip(gs).zip(adam.m.iter_mut().zip(adam.v.iter_mut())) {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
            }
        }
    }
}
