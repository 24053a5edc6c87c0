use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::optim::AdamW;
use crate::error::{Error, Result};
use crate::model::{ForecastModel, WindowSample};
use crate::nn_core::Parameters;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// windows per optimiser step
    pub batch_size: usize,
    pub seeds: Vec<u64>,
    /// epochs without validation improvement before stopping; 0 disables
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 3e-3,
            epochs: 20,
            batch_size: 32,
            seeds: vec![0, 1, 2, 3, 4],
            patience: 5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("learning_rate must be >= 0, got {}", self.learning_rate)));
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return Err(Error::Config(format!("weight_decay must be >= 0, got {}", self.weight_decay)));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// parameters at the best validation epoch
    pub model: ForecastModel,
    pub history: Vec<EpochRecord>,
    /// 0 means the untrained initial model was never beaten
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

impl TrainOutcome {
    pub fn history_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss\n");
        for r in &self.history {
            s.push_str(&format!("{},{:?},{:?}\n", r.epoch, r.train_loss, r.val_loss));
        }
        s
    }
}

/// Names the first non-finite tensor of `model`, if any.
pub fn first_non_finite(model: &ForecastModel) -> Option<String> {
    let mut found = None;
    model.visit("", &mut |name, t| {
        if found.is_none() && t.data().iter().any(|v| !v.is_finite()) {
            found = Some(name);
        }
    });
    found
}

/// Mean loss and mean gradient over a batch. Per-window work may run in
/// parallel; results are reduced in window order so the sum is the same
/// for any thread count.
pub fn batch_gradient(model: &ForecastModel, batch: &[&WindowSample]) -> Result<(f64, ForecastModel)> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let parts: Vec<Result<(f64, ForecastModel)>> = batch.par_iter().map(|w| model.loss_and_gradient(w)).collect();
    let mut total = model.zeros_like();
    let mut loss = 0.0;
    for part in parts {
        let (l, g) = part?;
        loss += l;
        let mut grads = Vec::new();
        g.visit("", &mut |_, t| grads.push(t.data()));
        let mut k = 0;
        total.visit_mut("", &mut |_, t| {
            for (a, b) in t.data_mut().iter_mut().zip(grads[k]) {
                *a += b;
            }
            k += 1;
        });
    }
    let inv = 1.0 / batch.len() as f64;
    total.visit_mut("", &mut |_, t| t.scale(inv));
    Ok((loss * inv, total))
}

/// Mean per-window loss.
pub fn mean_loss(model: &ForecastModel, windows: &[WindowSample]) -> Result<f64> {
    if windows.is_empty() {
        return Err(Error::InvalidInput("no windows to evaluate".into()));
    }
    let losses: Vec<Result<f64>> = windows
        .par_iter()
        .map(|w| super::metrics::mse_loss(&model.predict(w)?, &w.y_future))
        .collect();
    let mut s = 0.0;
    for l in losses {
        s += l?;
    }
    Ok(s / windows.len() as f64)
}

/// Trains from `initial`, keeping the parameters with the lowest
/// validation loss. `seed` drives the window shuffle.
pub fn train(
    initial: ForecastModel,
    train_windows: &[WindowSample],
    val_windows: &[WindowSample],
    config: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_windows.is_empty() {
        return Err(Error::Data("training split yields no windows".into()));
    }
    if val_windows.is_empty() {
        return Err(Error::Data("validation split yields no windows".into()));
    }
    let mut model = initial;
    let mut opt = AdamW::new(config.learning_rate, config.weight_decay)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed);
    let mut order: Vec<usize> = (0..train_windows.len()).collect();

    let mut best = model.clone();
    let mut best_val = mean_loss(&model, val_windows)?;
    let mut best_epoch = 0;
    let mut history = Vec::with_capacity(config.epochs);
    let mut stale = 0;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&WindowSample> = chunk.iter().map(|&i| &train_windows[i]).collect();
            let (loss, grad) = batch_gradient(&model, &batch)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("training loss at epoch {epoch}")));
            }
            if let Some(name) = first_non_finite(&grad) {
                return Err(Error::NonFinite(format!("gradient of {name} at epoch {epoch}")));
            }
            opt.step(&mut model, &grad);
            if let Some(name) = first_non_finite(&model) {
                return Err(Error::NonFinite(format!("parameter {name} after update at epoch {epoch}")));
            }
            loss_sum += loss * batch.len() as f64;
        }
        let train_loss = loss_sum / train_windows.len() as f64;
        let val_loss = mean_loss(&model, val_windows)?;
        log::info!("epoch {epoch}: train {train_loss:.6} val {val_loss:.6}");
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        if val_loss < best_val {
            best_val = val_loss;
            best = model.clone();
            best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if config.patience > 0 && stale >= config.patience {
                log::info!("early stop after epoch {epoch}");
                break;
            }
        }
    }
    Ok(TrainOutcome {
        model: best,
        history,
        best_epoch,
        best_val_loss: best_val,
    })
}
