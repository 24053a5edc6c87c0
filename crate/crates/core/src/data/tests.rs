use chrono::{NaiveDate, NaiveDateTime};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::geo_graph::Station;

fn day(n: i64) -> NaiveDate {
    NaiveDate::from_ymd_opt(2023, 5, 1).unwrap() + chrono::Duration::days(n)
}

fn corpus(seed: u64, days: i64, missing: f64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stations = vec![
        Station::new("a", 25.60, 85.10).unwrap(),
        Station::new("b", 25.62, 85.13).unwrap(),
        Station::new("c", 25.58, 85.16).unwrap(),
    ];
    let t0 = day(0).and_hms_opt(0, 0, 0).unwrap();
    let ts: Vec<NaiveDateTime> = (0..days * 24).map(|h| t0 + chrono::Duration::hours(h)).collect();
    let mut p = RawPanel::filled(
        stations.iter().map(|s| s.id.clone()).collect(),
        ts,
        FEATURES.iter().map(|f| f.to_string()).collect(),
        0.0,
    );
    for s in 0..3 {
        for t in 0..p.num_steps() {
            for f in 0..9 {
                let base = (t as f64 / 24.0 * std::f64::consts::TAU).sin() * (f + 1) as f64;
                p.set(s, t, f, 50.0 + base + rng.random_range(-2.0..2.0));
            }
        }
    }
    let manifest = Manifest {
        version: 1,
        name: "toy".into(),
        cadence_hours: 1,
        timezone: "UTC".into(),
        station_file: "stations.csv".into(),
        data_dir: "data".into(),
        split: SplitSpec {
            train: DateRange::new(day(0), day(5)),
            val: DateRange::new(day(6), day(7)),
            test: DateRange::new(day(8), day(days - 1)),
        },
        distance_threshold_km: None,
        haze_threshold: None,
    };
    let mut c = Corpus {
        manifest,
        stations,
        panel: p,
    };
    let n = c.panel.values().len();
    let k = (missing * n as f64).round() as usize;
    let mut cells: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.random_range(i..n);
        cells.swap(i, j);
    }
    let (nt, nf) = (c.panel.num_steps(), c.panel.num_features());
    for &cell in &cells[..k] {
        c.panel.set(cell / (nt * nf), (cell / nf) % nt, cell % nf, f64::NAN);
    }
    c
}

fn dataset(seed: u64) -> PreparedDataset {
    prepare(&corpus(seed, 10, 0.0), &PrepareOptions::default()).unwrap()
}

#[test]
fn window_count_examples() {
    assert_eq!(window_count(48, 24, 12, 1), 13);
    assert_eq!(window_count(35, 24, 12, 1), 0);
    assert_eq!(window_count(36, 24, 12, 1), 1);
    assert_eq!(window_count(48, 24, 12, 5), 3);
    assert_eq!(hours_to_steps(24, 3).unwrap(), 8);
    assert_eq!(hours_to_steps(12, 3).unwrap(), 4);
    assert!(hours_to_steps(10, 3).is_err());
}

#[test]
fn window_count_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let (n, h, f, s) = (
            rng.random_range(0..120),
            rng.random_range(1..30),
            rng.random_range(1..20),
            rng.random_range(1..7),
        );
        let mut count = 0;
        let mut start = 0;
        while start + h + f <= n {
            count += 1;
            start += s;
        }
        assert_eq!(window_count(n, h, f, s), count, "n={n} h={h} f={f} s={s}");
    }
}

#[test]
fn windows_stay_inside_their_split() {
    let ds = dataset(1);
    for split in [Split::Train, Split::Val, Split::Test] {
        let r = ds.split_range(split);
        let ws = make_windows(&ds, split, 24, 12, 1).unwrap();
        assert_eq!(ws.len(), window_count(r.len(), 24, 12, 1));
        for (k, w) in ws.iter().enumerate() {
            assert_eq!(w.start, r.start + k);
            assert!(w.start + 36 <= r.end);
            w.validate(24, 12, ds.node_attr_dim()).unwrap();
            assert!(w.y_future.data().iter().all(|v| v.is_finite()));
        }
    }
}

#[test]
fn window_contents_match_the_panel() {
    let ds = dataset(2);
    let w = window_at(&ds, 30, 6, 3).unwrap();
    let pm = ds.panel.feature_index(TARGET).unwrap();
    let temp = ds.node_features().iter().position(|f| f == "temp").unwrap();
    let temp_col = ds.panel.feature_index("temp").unwrap();
    for s in 0..3 {
        for r in 0..6 {
            assert_eq!(w.y_history.get(r, s), ds.panel.get(s, 30 + r, pm));
            assert_eq!(w.x[r].get(s, temp), ds.panel.get(s, 30 + r, temp_col));
        }
        for r in 0..3 {
            assert_eq!(w.y_future.get(r, s), ds.panel.get(s, 36 + r, pm));
        }
    }
    for (k, c) in w.calendar.iter().enumerate() {
        assert_eq!(*c, timestamp_features(&ds.timestamps()[30 + k]));
    }
    assert_eq!(ds.node_attr_dim(), 8);
    assert!(!ds.node_features().contains(&TARGET.to_string()));
}

#[test]
fn forecast_window_past_the_end_has_unknown_future() {
    let ds = dataset(3);
    let n = ds.num_steps();
    let after = ds.timestamps()[n - 1] + chrono::Duration::hours(1);
    let w = forecast_window(&ds, &after, 24, 12).unwrap();
    assert_eq!(w.start, n - 24);
    assert!(w.y_future.data().iter().all(|v| v.is_nan()));
    let last = w.calendar.last().unwrap();
    assert_eq!(*last, timestamp_features(&(after + chrono::Duration::hours(11))));
    let early = ds.timestamps()[10];
    let err = forecast_window(&ds, &early, 24, 12).unwrap_err().to_string();
    assert!(err.contains("H = 24"), "{err}");
    assert!(forecast_window(&ds, &(after + chrono::Duration::hours(1)), 24, 12).is_err());
}

#[test]
fn standardized_training_rows_are_unit_scaled() {
    let ds = dataset(4);
    let r = ds.split_range(Split::Train);
    for f in 0..ds.panel.num_features() {
        let v: Vec<f64> = (0..3)
            .flat_map(|s| r.clone().map(move |t| (s, t)))
            .map(|(s, t)| ds.panel.get(s, t, f))
            .collect();
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt();
        assert!(m.abs() < 1e-9 && (sd - 1.0).abs() < 1e-9, "{f}: {m} {sd}");
    }
}

#[test]
fn statistics_come_from_training_rows_only() {
    let c = corpus(5, 10, 0.0);
    let ds = prepare(&c, &PrepareOptions::default()).unwrap();
    let (train, _) = split_temporal(&c.panel, &c.manifest.split).unwrap();
    let (want, _) = StandardizationStats::fit(&train[0]).unwrap();
    assert_eq!(ds.stats, want);
    let mut later = c.clone();
    let test = ds.split_range(Split::Test);
    for t in test {
        later.panel.set(0, t, 2, 1e6);
    }
    assert_eq!(prepare(&later, &PrepareOptions::default()).unwrap().stats, want);
}

#[test]
fn report_counts_missing_cells_and_rows() {
    let ds = prepare(&corpus(6, 10, 0.0), &PrepareOptions::default()).unwrap();
    let rep = ds.report();
    assert!(rep.contains("missing_percent = 0.0000"), "{rep}");
    assert!(rep.contains("train_rows = 144") && rep.contains("val_rows = 48") && rep.contains("test_rows = 48"));
    let c = corpus(7, 10, 0.05);
    let injected = c.panel.missing_count() as f64 / c.panel.values().len() as f64;
    let ds = prepare(&c, &PrepareOptions::default()).unwrap();
    assert!((100.0 * (ds.missing_fraction - injected)).abs() < 0.5);
    assert!((ds.missing_fraction - 0.05).abs() < 0.005);
    assert_eq!(ds.panel.missing_count(), 0);
}

#[test]
fn cache_roundtrip_reproduces_windows() {
    let ds = prepare(&corpus(8, 10, 0.02), &PrepareOptions::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("panel.ckpt");
    ds.save(&path).unwrap();
    let back = PreparedDataset::load(&path).unwrap();
    assert_eq!(back.panel, ds.panel);
    assert_eq!(back.stats, ds.stats);
    assert_eq!(back.splits, ds.splits);
    assert_eq!(back.network, ds.network);
    assert_eq!(back.edge_stats(), ds.edge_stats());
    assert_eq!(back.report(), ds.report());
    let (a, b) = (window_at(&ds, 5, 4, 2).unwrap(), window_at(&back, 5, 4, 2).unwrap());
    assert_eq!(a.edge_attrs, b.edge_attrs);
    assert_eq!(a.x, b.x);
}

#[test]
fn edge_attributes_are_standardized_on_training_steps() {
    let ds = dataset(9);
    assert!(ds.network.num_edges() > 0);
    let r = ds.split_range(Split::Train);
    let w = window_at(&ds, r.start, r.len(), 1).unwrap();
    let m = ds.network.num_edges();
    for k in [2, 3, 4] {
        let v: Vec<f64> = w.edge_attrs.iter().flat_map(|e| (0..m).map(move |i| e.get(i, k))).collect();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean.abs() < 1e-9, "attribute {k}: {mean}");
    }
}

#[test]
fn missing_target_feature_is_an_error() {
    let mut c = corpus(10, 10, 0.0);
    for s in 0..3 {
        for t in 0..c.panel.num_steps() {
            c.panel.set(s, t, 2, 80.0);
        }
    }
    assert!(prepare(&c, &PrepareOptions::default()).is_err());
}

proptest! {
    #[test]
    fn consecutive_hours_step_by_one(offset in 0i64..100_000) {
        let t = day(0).and_hms_opt(0, 0, 0).unwrap() + chrono::Duration::hours(offset);
        let a = timestamp_features(&t);
        let b = timestamp_features(&(t + chrono::Duration::hours(1)));
        prop_assert_eq!((a.hour + 1) % 24, b.hour);
    }
}
