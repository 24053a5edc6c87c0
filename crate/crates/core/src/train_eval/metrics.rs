//! Loss and verification metrics.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::nn_core::Tensor;

/// Mean over locations of the per-location mean squared error across the
/// forecast horizon. `pred` and `truth` are `F x L`.
pub fn mse_loss(pred: &Tensor, truth: &Tensor) -> Result<f64> {
    if pred.shape() != truth.shape() {
        return Err(Error::shape(
            "mse_loss",
            format!("{:?}", truth.shape()),
            format!("{:?}", pred.shape()),
        ));
    }
    if pred.is_empty() {
        return Err(Error::InvalidInput("mse_loss of an empty tensor".into()));
    }
    let n = pred.len() as f64;
    Ok(pred
        .data()
        .iter()
        .zip(truth.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
}

fn check_pair(a: &[f64], b: &[f64], what: &str) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::shape(what, b.len(), a.len()));
    }
    if a.is_empty() {
        return Err(Error::InvalidInput(format!("{what} of empty series")));
    }
    Ok(())
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth, "rmse")?;
    let s: f64 = pred.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((s / pred.len() as f64).sqrt())
}

pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth, "mae")?;
    let s: f64 = pred.iter().zip(truth).map(|(a, b)| (a - b).abs()).sum();
    Ok(s / pred.len() as f64)
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Spearman rank correlation. `None` when either series is constant.
pub fn spearman(pred: &[f64], truth: &[f64]) -> Result<Option<f64>> {
    check_pair(pred, truth, "spearman")?;
    if pred.len() < 2 {
        return Err(Error::InvalidInput("spearman needs at least 2 values".into()));
    }
    if pred.iter().chain(truth).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("spearman input".into()));
    }
    Ok(pearson(&average_ranks(pred), &average_ranks(truth)))
}

/// Event-detection scores at a haze threshold, in percent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdScores {
    pub hits: usize,
    pub misses: usize,
    pub false_alarms: usize,
    pub csi: Option<f64>,
    pub pod: Option<f64>,
    pub far: Option<f64>,
}

fn pct(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| 100.0 * num as f64 / den as f64)
}

/// Both series binarised by `value >= haze`.
pub fn threshold_metrics(pred: &[f64], truth: &[f64], haze: f64) -> Result<ThresholdScores> {
    if pred.len() != truth.len() {
        return Err(Error::shape("threshold_metrics", truth.len(), pred.len()));
    }
    let (mut hits, mut misses, mut false_alarms) = (0, 0, 0);
    for (&p, &t) in pred.iter().zip(truth) {
        match (p >= haze, t >= haze) {
            (true, true) => hits += 1,
            (false, true) => misses += 1,
            (true, false) => false_alarms += 1,
            (false, false) => {}
        }
    }
    Ok(ThresholdScores {
        hits,
        misses,
        false_alarms,
        csi: pct(hits, hits + misses + false_alarms),
        pod: pct(hits, hits + misses),
        far: pct(false_alarms, hits + false_alarms),
    })
}

pub const METRIC_NAMES: [&str; 7] = ["loss", "rmse", "mae", "spearman", "csi", "pod", "far"];

/// Metric values in [`METRIC_NAMES`] order; `None` marks an undefined value.
pub type MetricValues = [Option<f64>; 7];

#[derive(Debug, Clone, PartialEq)]
pub struct LocationMetrics {
    pub station_id: String,
    pub values: MetricValues,
}

impl LocationMetrics {
    /// `pred`/`truth` in physical units, `pred_norm`/`truth_norm` on the
    /// standardised scale used by the loss.
    pub fn compute(
        station_id: &str,
        pred: &[f64],
        truth: &[f64],
        pred_norm: &[f64],
        truth_norm: &[f64],
        haze: f64,
    ) -> Result<Self> {
        check_pair(pred_norm, truth_norm, "location loss")?;
        let loss = pred_norm
            .iter()
            .zip(truth_norm)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / pred_norm.len() as f64;
        let th = threshold_metrics(pred, truth, haze)?;
        let rho = if pred.len() >= 2 { spearman(pred, truth)? } else { None };
        Ok(Self {
            station_id: station_id.to_string(),
            values: [
                Some(loss),
                Some(rmse(pred, truth)?),
                Some(mae(pred, truth)?),
                rho,
                th.csi,
                th.pod,
                th.far,
            ],
        })
    }
}

/// Mean of the defined entries, if any.
fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricStat {
    pub mean: Option<f64>,
    /// population standard deviation across seeds
    pub std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedMetrics {
    pub seed: u64,
    pub locations: Vec<LocationMetrics>,
    /// location means
    pub summary: MetricValues,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub variant: String,
    pub parameter_count: usize,
    pub seeds: Vec<SeedMetrics>,
    pub aggregate: [MetricStat; 7],
}

/// Location mean per seed, then mean and population std across seeds.
/// Undefined values are excluded from each average.
pub fn aggregate(
    variant: &str,
    parameter_count: usize,
    per_seed: Vec<(u64, Vec<LocationMetrics>)>,
) -> Result<MetricsReport> {
    if per_seed.is_empty() {
        return Err(Error::InvalidInput("aggregate needs at least one seed".into()));
    }
    let mut seeds = Vec::with_capacity(per_seed.len());
    for (seed, locations) in per_seed {
        if locations.is_empty() {
            return Err(Error::InvalidInput(format!("seed {seed} has no locations")));
        }
        let summary = std::array::from_fn(|k| mean_defined(locations.iter().map(|l| l.values[k])));
        seeds.push(SeedMetrics {
            seed,
            locations,
            summary,
        });
    }
    let aggregate = std::array::from_fn(|k| {
        let v: Vec<f64> = seeds.iter().filter_map(|s| s.summary[k]).collect();
        if v.is_empty() {
            return MetricStat { mean: None, std: None };
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        MetricStat {
            mean: Some(mean),
            std: Some(var.sqrt()),
        }
    });
    Ok(MetricsReport {
        variant: variant.to_string(),
        parameter_count,
        seeds,
        aggregate,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), |x| format!("{x:.6}"))
}

fn kv_opt(v: Option<f64>) -> String {
    // full precision so values can be recomputed exactly
    v.map_or_else(|| "nan".to_string(), |x| format!("{x:?}"))
}

impl MetricsReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "variant: {}", self.variant);
        let _ = writeln!(s, "parameters: {}", self.parameter_count);
        let _ = writeln!(s, "seeds: {}", self.seeds.len());
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<10} {:>14} {:>14}", "metric", "mean", "std");
        for (name, st) in METRIC_NAMES.iter().zip(&self.aggregate) {
            let _ = writeln!(s, "{:<10} {:>14} {:>14}", name, fmt_opt(st.mean), fmt_opt(st.std));
        }
        for seed in &self.seeds {
            let _ = writeln!(s);
            let _ = writeln!(s, "seed {}", seed.seed);
            let _ = write!(s, "{:<16}", "station");
            for name in METRIC_NAMES {
                let _ = write!(s, " {name:>12}");
            }
            let _ = writeln!(s);
            for loc in &seed.locations {
                let _ = write!(s, "{:<16}", loc.station_id);
                for v in loc.values {
                    let _ = write!(s, " {:>12}", fmt_opt(v));
                }
                let _ = writeln!(s);
            }
            let _ = write!(s, "{:<16}", "mean");
            for v in seed.summary {
                let _ = write!(s, " {:>12}", fmt_opt(v));
            }
            let _ = writeln!(s);
        }
        s
    }

    /// Flat `key = value` listing; undefined values are written as `nan`.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "variant = \"{}\"", self.variant);
        let _ = writeln!(s, "parameter_count = {}", self.parameter_count);
        let _ = writeln!(s, "seeds = {}", self.seeds.len());
        for (name, st) in METRIC_NAMES.iter().zip(&self.aggregate) {
            let _ = writeln!(s, "{name}_mean = {}", kv_opt(st.mean));
            let _ = writeln!(s, "{name}_std = {}", kv_opt(st.std));
        }
        for seed in &self.seeds {
            for (name, v) in METRIC_NAMES.iter().zip(seed.summary) {
                let _ = writeln!(s, "seed_{}_{name} = {}", seed.seed, kv_opt(v));
            }
        }
        s
    }

    /// Key-value listing of one seed's location means, for `seed_<s>/`.
    pub fn seed_kv(&self, index: usize) -> String {
        let seed = &self.seeds[index];
        let mut s = String::new();
        let _ = writeln!(s, "seed = {}", seed.seed);
        for (name, v) in METRIC_NAMES.iter().zip(seed.summary) {
            let _ = writeln!(s, "{name} = {}", kv_opt(v));
        }
        for loc in &seed.locations {
            for (name, v) in METRIC_NAMES.iter().zip(loc.values) {
                let _ = writeln!(s, "\"{}.{name}\" = {}", loc.station_id, kv_opt(v));
            }
        }
        s
    }
}

/// Parses a value written by [`MetricsReport::to_kv`]: `nan` is missing.
pub fn parse_kv_value(s: &str) -> Option<f64> {
    match s.trim() {
        "nan" => None,
        v => v.parse().ok(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mse_examples() {
        let a = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(mse_loss(&a, &a).unwrap(), 0.0);
        let p = Tensor::matrix(1, 1, vec![4.0]).unwrap();
        let t = Tensor::matrix(1, 1, vec![1.0]).unwrap();
        assert_eq!(mse_loss(&p, &t).unwrap(), 9.0);
        assert!(mse_loss(&a, &p).is_err());
    }

    #[test]
    fn mse_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let (f, l) = (4, 5);
            let p: Vec<f64> = (0..f * l).map(|_| rng.random_range(-3.0..3.0)).collect();
            let t: Vec<f64> = (0..f * l).map(|_| rng.random_range(-3.0..3.0)).collect();
            let mut outer = 0.0;
            for loc in 0..l {
                let mut inner = 0.0;
                for step in 0..f {
                    let d = p[step * l + loc] - t[step * l + loc];
                    inner += d * d;
                }
                outer += inner / f as f64;
            }
            let want = outer / l as f64;
            let got = mse_loss(
                &Tensor::matrix(f, l, p).unwrap(),
                &Tensor::matrix(f, l, t).unwrap(),
            )
            .unwrap();
            assert!((got - want).abs() <= 1e-12 * want.max(1.0));
        }
    }

    #[test]
    fn spearman_examples() {
        let t = [1.0, 5.0, 2.0, 8.0, 3.0];
        assert!((spearman(&t, &t).unwrap().unwrap() - 1.0).abs() < 1e-15);
        let rev: Vec<f64> = t.iter().map(|v| -v).collect();
        assert!((spearman(&rev, &t).unwrap().unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(spearman(&[2.0, 2.0, 2.0], &t[..3]).unwrap(), None);
        assert!(spearman(&[1.0], &[1.0]).is_err());
        assert!(spearman(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 30.0]), vec![1.5, 3.0, 1.5, 4.0]);
    }

    /// Rank of `x` = (count below) + (count equal + 1) / 2, then the textbook
    /// covariance-over-deviations formula.
    fn spearman_oracle(a: &[f64], b: &[f64]) -> f64 {
        let rank = |v: &[f64]| -> Vec<f64> {
            v.iter()
                .map(|x| {
                    let below = v.iter().filter(|y| *y < x).count() as f64;
                    let equal = v.iter().filter(|y| *y == x).count() as f64;
                    below + (equal + 1.0) / 2.0
                })
                .collect()
        };
        let (ra, rb) = (rank(a), rank(b));
        let n = a.len() as f64;
        let ma = ra.iter().sum::<f64>() / n;
        let mb = rb.iter().sum::<f64>() / n;
        let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn spearman_matches_oracle_with_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let n = rng.random_range(3..30);
            let a: Vec<f64> = (0..n).map(|_| rng.random_range(0..6) as f64).collect();
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(0..6) as f64).collect();
            let want = spearman_oracle(&a, &b);
            match spearman(&a, &b).unwrap() {
                Some(got) => assert!((got - want).abs() <= 1e-12, "{got} vs {want}"),
                None => assert!(!want.is_finite()),
            }
        }
    }

    #[test]
    fn threshold_examples() {
        let s = threshold_metrics(&[120.0, 150.0], &[110.0, 101.0], 100.0).unwrap();
        assert_eq!((s.csi, s.pod, s.far), (Some(100.0), Some(100.0), Some(0.0)));
        // 3 hits, 1 miss, 1 false alarm
        let truth = [100.0, 200.0, 150.0, 180.0, 10.0, 20.0];
        let pred = [130.0, 101.0, 100.0, 50.0, 140.0, 30.0];
        let s = threshold_metrics(&pred, &truth, 100.0).unwrap();
        assert_eq!((s.hits, s.misses, s.false_alarms), (3, 1, 1));
        assert_eq!((s.csi, s.pod, s.far), (Some(60.0), Some(75.0), Some(25.0)));
        let s = threshold_metrics(&[1.0, 2.0], &[3.0, 4.0], 75.0).unwrap();
        assert_eq!((s.csi, s.pod, s.far), (None, None, None));
        assert!(threshold_metrics(&[1.0], &[1.0, 2.0], 75.0).is_err());
    }

    #[test]
    fn threshold_matches_confusion_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let n = rng.random_range(1..40);
            let p: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
            let t: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
            let to_val = |b: &bool| if *b { 100.0 } else { 99.999 };
            let s = threshold_metrics(
                &p.iter().map(to_val).collect::<Vec<_>>(),
                &t.iter().map(to_val).collect::<Vec<_>>(),
                100.0,
            )
            .unwrap();
            let mut cm = [[0usize; 2]; 2];
            for (a, b) in p.iter().zip(&t) {
                cm[*a as usize][*b as usize] += 1;
            }
            assert_eq!((s.hits, s.misses, s.false_alarms), (cm[1][1], cm[0][1], cm[1][0]));
        }
    }

    #[test]
    fn aggregate_examples() {
        let loc = |id: &str, v: f64| LocationMetrics {
            station_id: id.into(),
            values: [Some(v); 7],
        };
        let r = aggregate("gru", 10, vec![(1, vec![loc("a", 1.0)])]).unwrap();
        assert_eq!(r.aggregate[1], MetricStat { mean: Some(1.0), std: Some(0.0) });
        let r = aggregate("gru", 10, vec![(1, vec![loc("a", 1.0)]), (2, vec![loc("a", 3.0)])]).unwrap();
        assert_eq!(r.aggregate[2], MetricStat { mean: Some(2.0), std: Some(1.0) });
        assert!(aggregate("gru", 10, vec![]).is_err());
    }

    #[test]
    fn aggregate_matches_two_stage_computation() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut table = vec![vec![0.0; 10]; 5];
        let mut per_seed = Vec::new();
        for (s, row) in table.iter_mut().enumerate() {
            let locs = (0..10)
                .map(|l| {
                    row[l] = rng.random_range(0.0..50.0);
                    LocationMetrics {
                        station_id: format!("s{l}"),
                        values: [Some(row[l]); 7],
                    }
                })
                .collect();
            per_seed.push((s as u64, locs));
        }
        let r = aggregate("agnn_gru", 1, per_seed).unwrap();
        let means: Vec<f64> = table.iter().map(|r| r.iter().sum::<f64>() / 10.0).collect();
        let m = means.iter().sum::<f64>() / 5.0;
        let sd = (means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 5.0).sqrt();
        assert!((r.aggregate[0].mean.unwrap() - m).abs() < 1e-12);
        assert!((r.aggregate[0].std.unwrap() - sd).abs() < 1e-12);
    }

    #[test]
    fn missing_values_are_excluded() {
        let a = LocationMetrics {
            station_id: "a".into(),
            values: [Some(1.0), Some(1.0), Some(1.0), None, None, Some(50.0), None],
        };
        let b = LocationMetrics {
            station_id: "b".into(),
            values: [Some(3.0), Some(3.0), Some(3.0), Some(0.5), None, Some(100.0), None],
        };
        let r = aggregate("gru", 1, vec![(0, vec![a, b])]).unwrap();
        assert_eq!(r.seeds[0].summary[3], Some(0.5));
        assert_eq!(r.seeds[0].summary[4], None);
        assert_eq!(r.seeds[0].summary[5], Some(75.0));
        assert!(r.to_kv().contains("csi_mean = nan"));
    }

    proptest! {
        #[test]
        fn spearman_monotone_invariance(v in proptest::collection::vec(-100.0f64..100.0, 3..30), seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t: Vec<f64> = v.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
            let base = spearman(&v, &t).unwrap();
            let warped: Vec<f64> = v.iter().map(|x| (x / 50.0).exp() * 3.0 + 1.0).collect();
            prop_assert_eq!(spearman(&warped, &t).unwrap(), base);
        }

        #[test]
        fn rmse_dominates_mae(p in proptest::collection::vec(-100.0f64..100.0, 1..50), shift in -20.0f64..20.0) {
            let t: Vec<f64> = p.iter().enumerate().map(|(i, x)| x * 0.5 + shift + i as f64).collect();
            prop_assert!(rmse(&p, &t).unwrap() + 1e-12 >= mae(&p, &t).unwrap());
        }

        #[test]
        fn threshold_scale_invariance(
            p in proptest::collection::vec(0.0f64..300.0, 1..40),
            t in proptest::collection::vec(0.0f64..300.0, 40),
            k in prop_oneof![Just(0.5f64), Just(2.0), Just(4.0), Just(0.25)],
        ) {
            let t = &t[..p.len()];
            let a = threshold_metrics(&p, t, 100.0).unwrap();
            let ps: Vec<f64> = p.iter().map(|x| x * k).collect();
            let ts: Vec<f64> = t.iter().map(|x| x * k).collect();
            let b = threshold_metrics(&ps, &ts, 100.0 * k).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn bounded_scores(p in proptest::collection::vec(0.0f64..300.0, 2..40), t in proptest::collection::vec(0.0f64..300.0, 40)) {
            let t = &t[..p.len()];
            let s = threshold_metrics(&p, t, 100.0).unwrap();
            for v in [s.csi, s.pod, s.far].into_iter().flatten() {
                prop_assert!((0.0..=100.0).contains(&v));
            }
            if let Some(r) = spearman(&p, t).unwrap() {
                prop_assert!((-1.0..=1.0).contains(&r));
            }
        }
    }
}
