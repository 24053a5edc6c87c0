use std::ops::Range;
use std::sync::Arc;

use chrono::NaiveDateTime;

use super::calendar::{format_timestamp, timestamp_features};
use super::dataset::{PreparedDataset, Split};
use crate::error::{Error, Result};
use crate::model::WindowSample;
use crate::nn_core::Tensor;

/// `max(0, floor((n - (H + F)) / stride) + 1)`.
pub fn window_count(n: usize, history: usize, forecast: usize, stride: usize) -> usize {
    let span = history + forecast;
    if stride == 0 || n < span {
        0
    } else {
        (n - span) / stride + 1
    }
}

/// Converts a duration in hours to steps at `cadence_hours`.
pub fn hours_to_steps(hours: u32, cadence_hours: u32) -> Result<usize> {
    if cadence_hours == 0 || hours % cadence_hours != 0 {
        return Err(Error::Config(format!(
            "{hours} h is not a whole number of {cadence_hours} h steps"
        )));
    }
    Ok((hours / cadence_hours) as usize)
}

fn check_spans(history: usize, forecast: usize) -> Result<()> {
    if history == 0 || forecast == 0 {
        return Err(Error::InvalidInput("window needs H > 0 and F > 0".into()));
    }
    Ok(())
}

fn targets(ds: &PreparedDataset, steps: Range<usize>) -> Result<Tensor> {
    let l = ds.num_stations();
    let rows = steps.len();
    let data = steps
        .flat_map(|t| {
            if t < ds.num_steps() {
                ds.target_at(t)
            } else {
                vec![f64::NAN; l]
            }
        })
        .collect();
    Tensor::matrix(rows, l, data)
}

fn timestamp_of(ds: &PreparedDataset, t: usize) -> NaiveDateTime {
    let n = ds.num_steps();
    if t < n {
        ds.timestamps()[t]
    } else {
        let step = chrono::Duration::hours(ds.cadence_hours as i64);
        ds.timestamps()[n - 1] + step * (t + 1 - n) as i32
    }
}

/// Window whose history begins at step `start`. Forecast steps may run past
/// the end of the series; their targets are NaN and their calendar is
/// extrapolated at the dataset cadence.
pub fn window_at(ds: &PreparedDataset, start: usize, history: usize, forecast: usize) -> Result<WindowSample> {
    check_spans(history, forecast)?;
    if start + history > ds.num_steps() {
        return Err(Error::InvalidInput(format!(
            "history steps {start}..{} exceed the series length {}",
            start + history,
            ds.num_steps()
        )));
    }
    let hist = start..start + history;
    Ok(WindowSample {
        graph: Arc::clone(&ds.graph),
        start,
        x: hist.clone().map(|t| ds.node_step(t)).collect(),
        y_history: targets(ds, hist.clone())?,
        y_future: targets(ds, start + history..start + history + forecast)?,
        calendar: (start..start + history + forecast)
            .map(|t| timestamp_features(&timestamp_of(ds, t)))
            .collect(),
        edge_attrs: hist.map(|t| ds.edge_step(t)).collect(),
    })
}

/// Sliding windows at `stride` that lie entirely inside `split`, in order
/// of start step. A split shorter than `H + F` yields no windows.
pub fn make_windows(
    ds: &PreparedDataset,
    split: Split,
    history: usize,
    forecast: usize,
    stride: usize,
) -> Result<Vec<WindowSample>> {
    check_spans(history, forecast)?;
    if stride == 0 {
        return Err(Error::InvalidInput("window stride must be positive".into()));
    }
    let range = ds.split_range(split);
    let count = window_count(range.len(), history, forecast, stride);
    if count == 0 {
        log::warn!(
            "{} split has {} steps, fewer than H + F = {}; no windows",
            split.as_str(),
            range.len(),
            history + forecast
        );
    }
    (0..count)
        .map(|k| window_at(ds, range.start + k * stride, history, forecast))
        .collect()
}

/// Window whose first forecast step is `first_forecast`, which may be at
/// most one step past the end of the series.
pub fn forecast_window(
    ds: &PreparedDataset,
    first_forecast: &NaiveDateTime,
    history: usize,
    forecast: usize,
) -> Result<WindowSample> {
    let t0 = ds.timestamps()[0];
    let step = chrono::Duration::hours(ds.cadence_hours as i64).num_seconds();
    let offset = (*first_forecast - t0).num_seconds();
    if offset < 0 || offset % step != 0 {
        return Err(Error::InvalidInput(format!(
            "forecast start {} is not on the {} h grid starting {}",
            format_timestamp(first_forecast),
            ds.cadence_hours,
            format_timestamp(&t0)
        )));
    }
    let idx = (offset / step) as usize;
    if idx < history {
        return Err(Error::InvalidInput(format!(
            "forecast start {} has {idx} steps of history; the model requires H = {history}",
            format_timestamp(first_forecast)
        )));
    }
    if idx > ds.num_steps() {
        return Err(Error::InvalidInput(format!(
            "forecast start {} is past the end of the data; the model requires the H = {history} \
             preceding steps",
            format_timestamp(first_forecast)
        )));
    }
    window_at(ds, idx - history, history, forecast)
}
