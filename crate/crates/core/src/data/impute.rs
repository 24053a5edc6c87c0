//! Deterministic chained-equations imputation.
//!
//! Per station, missing cells start at their column's observed mean. Each
//! sweep then visits the incomplete features in column order and refits a
//! least-squares regression of that feature on all other (current) columns
//! over the rows where it is observed, overwriting its missing cells with
//! the fitted values.

use nalgebra::{DMatrix, DVector};

use super::RawPanel;
use crate::error::{Error, Result};

pub const DEFAULT_ITERATIONS: usize = 5;

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

/// Fits `target ~ predictors` on `rows` and returns predictions for `at`.
/// Predictors and target are centred on the fitting rows; predictors are
/// also scaled, and constant predictors are left out.
fn fit_predict(cols: &[Vec<f64>], target: usize, rows: &[usize], at: &[usize]) -> Result<Vec<f64>> {
    let y: Vec<f64> = rows.iter().map(|&r| cols[target][r]).collect();
    let (ym, _) = mean_std(&y);
    let mut preds: Vec<(usize, f64, f64)> = Vec::new();
    for (k, c) in cols.iter().enumerate() {
        if k == target {
            continue;
        }
        let v: Vec<f64> = rows.iter().map(|&r| c[r]).collect();
        let (m, s) = mean_std(&v);
        if s > 0.0 {
            preds.push((k, m, s));
        }
    }
    if preds.is_empty() {
        return Ok(vec![ym; at.len()]);
    }
    let a = DMatrix::from_fn(rows.len(), preds.len(), |i, j| {
        let (k, m, s) = preds[j];
        (cols[k][rows[i]] - m) / s
    });
    let b = DVector::from_iterator(rows.len(), y.iter().map(|v| v - ym));
    let svd = a.svd(true, true);
    let tol = svd.singular_values.max() * 1e-10;
    let beta = svd
        .solve(&b, tol)
        .map_err(|e| Error::Numeric(format!("imputation regression failed: {e}")))?;
    Ok(at
        .iter()
        .map(|&r| {
            ym + preds
                .iter()
                .zip(beta.iter())
                .map(|(&(k, m, s), b)| b * (cols[k][r] - m) / s)
                .sum::<f64>()
        })
        .collect())
}

/// Fills every missing cell. A panel without missing cells is returned
/// unchanged.
pub fn impute_chained(panel: &RawPanel, iterations: usize) -> Result<RawPanel> {
    let mut out = panel.clone();
    if panel.missing_count() == 0 {
        return Ok(out);
    }
    let (nt, nf) = (panel.num_steps(), panel.num_features());
    for s in 0..panel.num_stations() {
        let mut cols: Vec<Vec<f64>> = (0..nf).map(|f| panel.series(s, f)).collect();
        let mut missing: Vec<Vec<usize>> = Vec::with_capacity(nf);
        let mut observed: Vec<Vec<usize>> = Vec::with_capacity(nf);
        for (f, col) in cols.iter_mut().enumerate() {
            let (obs, miss): (Vec<usize>, Vec<usize>) = (0..nt).partition(|&t| !col[t].is_nan());
            if obs.len() < 2 {
                return Err(Error::Data(format!(
                    "station {}: feature `{}` has {} observed values; imputation needs at least 2",
                    panel.station_ids[s],
                    panel.features[f],
                    obs.len()
                )));
            }
            if !miss.is_empty() {
                let m = obs.iter().map(|&t| col[t]).sum::<f64>() / obs.len() as f64;
                for &t in &miss {
                    col[t] = m;
                }
            }
            missing.push(miss);
            observed.push(obs);
        }
        for _ in 0..iterations {
            for f in 0..nf {
                if missing[f].is_empty() {
                    continue;
                }
                let fitted = fit_predict(&cols, f, &observed[f], &missing[f])?;
                for (&t, v) in missing[f].iter().zip(fitted) {
                    cols[f][t] = v;
                }
            }
        }
        for (f, col) in cols.iter().enumerate() {
            for &t in &missing[f] {
                if !col[t].is_finite() {
                    return Err(Error::Numeric(format!(
                        "imputed value for station {} feature `{}` is not finite",
                        panel.station_ids[s], panel.features[f]
                    )));
                }
                out.set(s, t, f, col[t]);
            }
        }
    }
    Ok(out)
}
