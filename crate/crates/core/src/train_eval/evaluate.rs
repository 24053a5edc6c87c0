use rayon::prelude::*;

use super::metrics::{mse_loss, LocationMetrics};
use crate::error::{Error, Result};
use crate::model::{ForecastModel, WindowSample};
use crate::nn_core::Tensor;

/// Affine map between the standardised target and μg/m³.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetScale {
    pub mean: f64,
    pub std: f64,
}

impl TargetScale {
    pub fn to_physical(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }

    pub fn to_normalized(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }
}

#[derive(Debug, Clone)]
pub struct WindowPrediction {
    pub start: usize,
    /// `F x L`, standardised
    pub pred: Tensor,
    pub truth: Tensor,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub windows: Vec<WindowPrediction>,
    /// mean per-window loss
    pub loss: f64,
    pub locations: Vec<LocationMetrics>,
}

pub fn predict_windows(model: &ForecastModel, windows: &[WindowSample]) -> Result<Vec<WindowPrediction>> {
    let preds: Vec<Result<Tensor>> = windows.par_iter().map(|w| model.predict(w)).collect();
    preds
        .into_iter()
        .zip(windows)
        .map(|(p, w)| {
            Ok(WindowPrediction {
                start: w.start,
                pred: p?,
                truth: w.y_future.clone(),
            })
        })
        .collect()
}

/// Scores predictions per station, pooling every window and horizon step.
pub fn score(
    windows: Vec<WindowPrediction>,
    station_ids: &[String],
    scale: TargetScale,
    haze: f64,
) -> Result<Evaluation> {
    if windows.is_empty() {
        return Err(Error::Data("no windows to evaluate".into()));
    }
    let l = station_ids.len();
    let mut loss = 0.0;
    let mut cols: Vec<[Vec<f64>; 2]> = vec![[Vec::new(), Vec::new()]; l];
    for w in &windows {
        if w.pred.cols() != l {
            return Err(Error::shape("prediction stations", l, w.pred.cols()));
        }
        loss += mse_loss(&w.pred, &w.truth)?;
        for r in 0..w.pred.rows() {
            for (s, col) in cols.iter_mut().enumerate() {
                col[0].push(w.pred.get(r, s));
                col[1].push(w.truth.get(r, s));
            }
        }
    }
    loss /= windows.len() as f64;
    let locations = cols
        .iter()
        .zip(station_ids)
        .map(|([pn, tn], id)| {
            let p: Vec<f64> = pn.iter().map(|&z| scale.to_physical(z)).collect();
            let t: Vec<f64> = tn.iter().map(|&z| scale.to_physical(z)).collect();
            LocationMetrics::compute(id, &p, &t, pn, tn, haze)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Evaluation {
        windows,
        loss,
        locations,
    })
}

pub fn evaluate(
    model: &ForecastModel,
    windows: &[WindowSample],
    station_ids: &[String],
    scale: TargetScale,
    haze: f64,
) -> Result<Evaluation> {
    score(predict_windows(model, windows)?, station_ids, scale, haze)
}

impl Evaluation {
    /// `timestep,station_id,y_true,y_pred` in μg/m³, grouped by window then
    /// horizon step. `timestamps[i]` labels series step `i`.
    pub fn predictions_csv(&self, station_ids: &[String], timestamps: &[String], history: usize, scale: TargetScale) -> String {
        let mut s = String::from("timestep,station_id,y_true,y_pred\n");
        for w in &self.windows {
            for r in 0..w.pred.rows() {
                let idx = w.start + history + r;
                let label = timestamps.get(idx).cloned().unwrap_or_else(|| idx.to_string());
                for (c, id) in station_ids.iter().enumerate() {
                    s.push_str(&format!(
                        "{label},{id},{:?},{:?}\n",
                        scale.to_physical(w.truth.get(r, c)),
                        scale.to_physical(w.pred.get(r, c))
                    ));
                }
            }
        }
        s
    }
}
