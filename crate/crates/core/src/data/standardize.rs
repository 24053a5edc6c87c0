use super::RawPanel;
use crate::error::{Error, Result};

/// Per-feature mean and standard deviation pooled over stations.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizationStats {
    pub features: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl StandardizationStats {
    /// Fits on `train` (expected to be the training split only). Features
    /// with zero spread are left out and returned as the second value.
    pub fn fit(train: &RawPanel) -> Result<(Self, Vec<String>)> {
        let mut stats = Self {
            features: Vec::new(),
            mean: Vec::new(),
            std: Vec::new(),
        };
        let mut dropped = Vec::new();
        for (f, name) in train.features.iter().enumerate() {
            let mut n = 0usize;
            let mut sum = 0.0;
            for s in 0..train.num_stations() {
                for t in 0..train.num_steps() {
                    let v = train.get(s, t, f);
                    if !v.is_nan() {
                        n += 1;
                        sum += v;
                    }
                }
            }
            if n == 0 {
                return Err(Error::Data(format!("feature `{name}` has no training values")));
            }
            let mean = sum / n as f64;
            let mut ss = 0.0;
            for s in 0..train.num_stations() {
                for t in 0..train.num_steps() {
                    let v = train.get(s, t, f);
                    if !v.is_nan() {
                        ss += (v - mean) * (v - mean);
                    }
                }
            }
            let std = (ss / n as f64).sqrt();
            if std > 0.0 && std.is_finite() {
                stats.features.push(name.clone());
                stats.mean.push(mean);
                stats.std.push(std);
            } else {
                log::warn!("feature `{name}` is constant on the training split and is dropped");
                dropped.push(name.clone());
            }
        }
        Ok((stats, dropped))
    }

    pub fn index(&self, feature: &str) -> Result<usize> {
        self.features
            .iter()
            .position(|f| f == feature)
            .ok_or_else(|| Error::Data(format!("no standardisation statistics for feature `{feature}`")))
    }

    pub fn validate(&self) -> Result<()> {
        for (name, s) in self.features.iter().zip(&self.std) {
            if !(*s > 0.0) {
                return Err(Error::Numeric(format!("feature `{name}` has non-positive std {s}")));
            }
        }
        Ok(())
    }
}

/// `z = (x - mean) / std` for every feature covered by `stats`; the result
/// holds those features only, in `stats` order.
pub fn standardize(panel: &RawPanel, stats: &StandardizationStats) -> Result<RawPanel> {
    stats.validate()?;
    let keep: Vec<usize> = stats
        .features
        .iter()
        .map(|f| panel.feature_index(f))
        .collect::<Result<_>>()?;
    let mut out = panel.select_features(&keep);
    for s in 0..out.num_stations() {
        for t in 0..out.num_steps() {
            for k in 0..keep.len() {
                let v = out.get(s, t, k);
                out.set(s, t, k, (v - stats.mean[k]) / stats.std[k]);
            }
        }
    }
    Ok(out)
}

/// Inverse of [`standardize`] for values of one feature.
pub fn destandardize(values: &[f64], stats: &StandardizationStats, feature: &str) -> Result<Vec<f64>> {
    stats.validate()?;
    let k = stats.index(feature)?;
    Ok(values.iter().map(|z| z * stats.std[k] + stats.mean[k]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_panel(seed: u64, stations: usize, steps: usize) -> RawPanel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t0 = NaiveDate::from_ymd_opt(2023, 5, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
        let ts = (0..steps).map(|i| t0 + chrono::Duration::hours(i as i64)).collect();
        let feats = vec!["a".to_string(), "b".to_string(), "c".to_string()];
        let mut vals = Vec::new();
        for _ in 0..stations * steps {
            vals.push(rng.random_range(0.0..100.0));
            vals.push(rng.random_range(-1e5..1e5));
            vals.push(3.0);
        }
        RawPanel::new((0..stations).map(|s| format!("s{s}")).collect(), ts, feats, vals).unwrap()
    }

    #[test]
    fn mean_and_one_std() {
        let p = random_panel(1, 3, 50);
        let (st, dropped) = StandardizationStats::fit(&p).unwrap();
        assert_eq!(dropped, vec!["c".to_string()]);
        let z = destandardize(&[0.0, 1.0], &st, "a").unwrap();
        assert_eq!(z[0], st.mean[0]);
        assert!((z[1] - st.mean[0] - st.std[0]).abs() < 1e-12);
    }

    #[test]
    fn standardized_train_is_unit_scaled() {
        let p = random_panel(2, 4, 200);
        let (st, _) = StandardizationStats::fit(&p).unwrap();
        let z = standardize(&p, &st).unwrap();
        assert_eq!(z.features, vec!["a".to_string(), "b".to_string()]);
        for f in 0..2 {
            let v: Vec<f64> = (0..4).flat_map(|s| z.series(s, f)).collect();
            let m = v.iter().sum::<f64>() / v.len() as f64;
            let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt();
            assert!(m.abs() < 1e-9 && (sd - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn stats_come_from_the_given_slice_only() {
        let p = random_panel(3, 2, 100);
        let train = p.slice_time(0..60);
        let (a, _) = StandardizationStats::fit(&train).unwrap();
        let (b, _) = StandardizationStats::fit(&p.slice_time(0..60)).unwrap();
        let (full, _) = StandardizationStats::fit(&p).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, full);
    }

    #[test]
    fn nonpositive_std_rejected() {
        let st = StandardizationStats {
            features: vec!["a".into()],
            mean: vec![0.0],
            std: vec![0.0],
        };
        assert!(destandardize(&[1.0], &st, "a").is_err());
    }

    proptest! {
        #[test]
        fn roundtrip(seed in 0u64..500) {
            let p = random_panel(seed, 2, 20);
            let (st, _) = StandardizationStats::fit(&p).unwrap();
            let z = standardize(&p, &st).unwrap();
            for f in 0..2 {
                let back = destandardize(&z.series(1, f), &st, &st.features[f]).unwrap();
                for (x, y) in back.iter().zip(p.series(1, f)) {
                    prop_assert!((x - y).abs() <= 1e-9 * y.abs().max(1.0));
                }
            }
        }
    }
}
