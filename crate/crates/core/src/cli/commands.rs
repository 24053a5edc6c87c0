use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::config::{Preset, RunConfig};
use crate::data::{
    format_timestamp, forecast_window, hours_to_steps, make_windows, parse_timestamp, parse_timezone, prepare,
    read_corpus, write_corpus, Manifest, PrepareOptions, PreparedDataset, Split,
};
use crate::error::{Error, Result};
use crate::model::{build_variant, ForecastModel, ModelConfig};
use crate::nn_core::{Checkpoint, Parameters};
use crate::synth::{generate, SynthConfig};
use crate::train_eval::{aggregate, evaluate, train, Evaluation, MetricsReport, TargetScale};

pub const PANEL_CACHE: &str = "panel.ckpt";
pub const EDGE_LIST: &str = "edges.csv";
pub const DATA_REPORT: &str = "data_report.txt";
pub const RUN_CONFIG: &str = "run_config.toml";

fn write(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::file(path, e.to_string()))
}

fn timestamp_labels(ds: &PreparedDataset) -> Vec<String> {
    ds.timestamps().iter().map(format_timestamp).collect()
}

#[derive(Debug, Clone)]
pub struct PrepareArgs {
    pub manifest: PathBuf,
    pub out: PathBuf,
    pub preset: Preset,
    pub distance_threshold_km: Option<f64>,
    pub impute_iterations: usize,
}

/// Writes the panel cache, the edge list and the data report.
pub fn cmd_prepare(args: &PrepareArgs) -> Result<PreparedDataset> {
    let corpus = read_corpus(&args.manifest)?;
    let threshold = args
        .distance_threshold_km
        .or(corpus.manifest.distance_threshold_km)
        .unwrap_or_else(|| args.preset.distance_threshold_km());
    let ds = prepare(
        &corpus,
        &PrepareOptions {
            distance_threshold_km: threshold,
            impute_iterations: args.impute_iterations,
        },
    )?;
    std::fs::create_dir_all(&args.out)?;
    ds.save(&args.out.join(PANEL_CACHE))?;
    ds.network.write_edge_list(&args.out.join(EDGE_LIST))?;
    write(&args.out.join(DATA_REPORT), &ds.report())?;
    log::info!(
        "prepared {} stations, {} edges, {} steps ({:.2}% missing)",
        ds.num_stations(),
        ds.network.num_edges(),
        ds.num_steps(),
        100.0 * ds.missing_fraction
    );
    Ok(ds)
}

/// Loads the dataset a run config points at.
pub fn load_dataset(cfg: &RunConfig) -> Result<PreparedDataset> {
    cfg.check_paths()?;
    if let Some(p) = &cfg.prepared {
        return PreparedDataset::load(p);
    }
    let path = cfg.manifest.as_ref().expect("checked above");
    let corpus = read_corpus(path)?;
    prepare(&corpus, &cfg.prepare_options(Some(&corpus.manifest)))
}

fn model_config(cfg: &RunConfig, ds: &PreparedDataset) -> Result<ModelConfig> {
    let h = hours_to_steps(cfg.history_hours, ds.cadence_hours)?;
    let f = hours_to_steps(cfg.forecast_hours, ds.cadence_hours)?;
    let mut mc = ModelConfig::new(cfg.variant, ds.node_attr_dim(), cfg.hidden, h, f);
    mc.embed_dim = cfg.embed_dim;
    mc.aux_loss = cfg.aux_loss;
    mc.validate()?;
    Ok(mc)
}

fn model_checkpoint(model: &ForecastModel, cfg: &RunConfig, seed: u64, scale: TargetScale) -> Result<Checkpoint> {
    let mut ck = model.to_checkpoint();
    ck.meta.insert("run.config".into(), cfg.to_toml()?);
    ck.meta.insert("run.seed".into(), seed.to_string());
    ck.meta.insert("data.target_mean".into(), format!("{:?}", scale.mean));
    ck.meta.insert("data.target_std".into(), format!("{:?}", scale.std));
    Ok(ck)
}

fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed_{seed}"))
}

fn write_report(out: &Path, report: &MetricsReport) -> Result<()> {
    write(&out.join("metrics.txt"), &report.to_text())?;
    write(&out.join("metrics.kv"), &report.to_kv())?;
    for (i, s) in report.seeds.iter().enumerate() {
        let dir = seed_dir(out, s.seed);
        std::fs::create_dir_all(&dir)?;
        write(&dir.join("metrics.kv"), &report.seed_kv(i))?;
    }
    Ok(())
}

fn write_predictions(path: &Path, ev: &Evaluation, ds: &PreparedDataset, history: usize) -> Result<()> {
    write(
        path,
        &ev.predictions_csv(ds.station_ids(), &timestamp_labels(ds), history, ds.target_scale()),
    )
}

/// Trains every seed, evaluates on the test split and writes
/// `run_config.toml`, `metrics.{txt,kv}` and per-seed checkpoints, loss
/// curves, metrics and predictions.
pub fn cmd_train(cfg: &RunConfig) -> Result<MetricsReport> {
    cfg.validate()?;
    let ds = load_dataset(cfg)?;
    let mc = model_config(cfg, &ds)?;
    let (h, f) = (mc.history, mc.forecast);
    let haze = cfg.resolved_haze(ds.haze_threshold);
    let mut effective = cfg.clone();
    effective.distance_threshold_km = Some(ds.network.threshold_km);
    effective.haze_threshold = Some(haze);

    let train_w = make_windows(&ds, Split::Train, h, f, cfg.stride)?;
    let val_w = make_windows(&ds, Split::Val, h, f, cfg.stride)?;
    let test_w = make_windows(&ds, Split::Test, h, f, cfg.stride)?;
    if test_w.is_empty() {
        return Err(Error::Data(format!("test split is shorter than H + F = {} steps", h + f)));
    }
    let out = &cfg.output_dir;
    std::fs::create_dir_all(out)?;
    write(&out.join(RUN_CONFIG), &effective.to_toml()?)?;

    let scale = ds.target_scale();
    let mut per_seed = Vec::with_capacity(cfg.train.seeds.len());
    let mut parameter_count = 0;
    for &seed in &cfg.train.seeds {
        log::info!("training {} seed {seed}", cfg.variant);
        let model = build_variant(&mc, ds.coord_norm, seed)?;
        parameter_count = model.num_parameters();
        let outcome = train(model, &train_w, &val_w, &cfg.train, seed)?;
        let ev = evaluate(&outcome.model, &test_w, ds.station_ids(), scale, haze)?;
        let dir = seed_dir(out, seed);
        std::fs::create_dir_all(&dir)?;
        model_checkpoint(&outcome.model, &effective, seed, scale)?.save(&dir.join("model.ckpt"))?;
        write(&dir.join("history.csv"), &outcome.history_csv())?;
        write_predictions(&dir.join("predictions.csv"), &ev, &ds, h)?;
        per_seed.push((seed, ev.locations));
    }
    let report = aggregate(cfg.variant.as_str(), parameter_count, per_seed)?;
    write_report(out, &report)?;
    Ok(report)
}

/// Model, its run config and seed from a checkpoint written by `train`.
pub fn load_model(path: &Path) -> Result<(ForecastModel, RunConfig, u64)> {
    let ck = Checkpoint::load(path)?;
    let model = ForecastModel::from_checkpoint(&ck).map_err(|e| Error::file(path, e.to_string()))?;
    let cfg = RunConfig::from_toml(ck.meta("run.config")?, Preset::Bihar)?;
    let seed = ck
        .meta("run.seed")?
        .parse()
        .map_err(|_| Error::Checkpoint("run.seed is not an integer".into()))?;
    Ok((model, cfg, seed))
}

fn dataset_for(model: &ForecastModel, cfg: &RunConfig) -> Result<PreparedDataset> {
    let ds = load_dataset(cfg)?;
    if ds.node_attr_dim() != model.config.node_attr_dim {
        return Err(Error::Data(format!(
            "dataset has {} node attributes but the model expects {}",
            ds.node_attr_dim(),
            model.config.node_attr_dim
        )));
    }
    Ok(ds)
}

#[derive(Debug, Clone, Default)]
pub struct DatasetOverride {
    pub manifest: Option<PathBuf>,
    pub prepared: Option<PathBuf>,
}

impl DatasetOverride {
    fn apply(&self, cfg: &mut RunConfig) {
        if self.prepared.is_some() {
            cfg.prepared = self.prepared.clone();
        } else if self.manifest.is_some() {
            cfg.manifest = self.manifest.clone();
            cfg.prepared = None;
        }
    }
}

/// Scores a trained checkpoint on one split; writes metrics and predictions.
pub fn cmd_eval(checkpoint: &Path, data: &DatasetOverride, split: Split, out: &Path) -> Result<MetricsReport> {
    let (model, mut cfg, seed) = load_model(checkpoint)?;
    data.apply(&mut cfg);
    let ds = dataset_for(&model, &cfg)?;
    let (h, f) = (model.config.history, model.config.forecast);
    let windows = make_windows(&ds, split, h, f, cfg.stride)?;
    let haze = cfg.resolved_haze(ds.haze_threshold);
    let ev = evaluate(&model, &windows, ds.station_ids(), ds.target_scale(), haze)?;
    std::fs::create_dir_all(out)?;
    write_predictions(&out.join("predictions.csv"), &ev, &ds, h)?;
    let report = aggregate(cfg.variant.as_str(), model.num_parameters(), vec![(seed, ev.locations)])?;
    write_report(out, &report)?;
    Ok(report)
}

/// `timestep,station_id,y_pred` in μg/m³ for the `F` steps starting at
/// `start`.
pub fn cmd_forecast(checkpoint: &Path, data: &DatasetOverride, start: &str, out: &Path) -> Result<String> {
    let (model, mut cfg, _) = load_model(checkpoint)?;
    data.apply(&mut cfg);
    let ds = dataset_for(&model, &cfg)?;
    let tz = match (&cfg.prepared, &cfg.manifest) {
        (None, Some(m)) => Manifest::load(m)?.tz()?,
        _ => parse_timezone("UTC")?,
    };
    let first = parse_timestamp(start, tz)?;
    let (h, f) = (model.config.history, model.config.forecast);
    let w = forecast_window(&ds, &first, h, f)?;
    let pred = model.predict(&w)?;
    let scale = ds.target_scale();
    let step = chrono::Duration::hours(ds.cadence_hours as i64);
    let mut s = String::from("timestep,station_id,y_pred\n");
    for r in 0..f {
        let label = format_timestamp(&(first + step * r as i32));
        for (c, id) in ds.station_ids().iter().enumerate() {
            s.push_str(&format!("{label},{id},{:?}\n", scale.to_physical(pred.get(r, c))));
        }
    }
    if let Some(dir) = out.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    write(out, &s)?;
    Ok(s)
}

#[derive(Debug, Deserialize)]
struct PredictionRow {
    timestep: String,
    station_id: String,
    y_true: f64,
    y_pred: f64,
}

#[derive(Debug, Deserialize)]
struct RegionRow {
    station_id: String,
    region: String,
}

/// Per region and timestep, the mean truth and prediction over member
/// stations. Rows are ordered by region, then timestep.
pub fn cmd_plotdata(predictions: &Path, regions: &Path, out: &Path) -> Result<String> {
    let mut map = BTreeMap::new();
    let mut rdr = csv::Reader::from_path(regions).map_err(|e| Error::file(regions, e.to_string()))?;
    for (i, row) in rdr.deserialize::<RegionRow>().enumerate() {
        let row = row.map_err(|e| Error::file(regions, format!("line {}: {e}", i + 2)))?;
        map.insert(row.station_id, row.region);
    }
    let mut sums: BTreeMap<(String, String), (f64, f64, usize)> = BTreeMap::new();
    let mut rdr = csv::Reader::from_path(predictions).map_err(|e| Error::file(predictions, e.to_string()))?;
    for (i, row) in rdr.deserialize::<PredictionRow>().enumerate() {
        let row = row.map_err(|e| Error::file(predictions, format!("line {}: {e}", i + 2)))?;
        let region = map.get(&row.station_id).ok_or_else(|| {
            Error::file(
                regions,
                format!("station `{}` has no region", row.station_id),
            )
        })?;
        let e = sums.entry((region.clone(), row.timestep)).or_insert((0.0, 0.0, 0));
        e.0 += row.y_true;
        e.1 += row.y_pred;
        e.2 += 1;
    }
    let mut s = String::from("region,timestep,y_true_mean,y_pred_mean\n");
    for ((region, ts), (t, p, n)) in &sums {
        s.push_str(&format!("{region},{ts},{:?},{:?}\n", t / *n as f64, p / *n as f64));
    }
    write(out, &s)?;
    Ok(s)
}

#[derive(Debug, Clone)]
pub struct SynthArgs {
    pub config: SynthConfig,
    pub name: String,
    pub haze_threshold: Option<f64>,
    pub out: PathBuf,
}

/// Writes a synthetic corpus and the parameters of its generating process.
pub fn cmd_synth(args: &SynthArgs) -> Result<PathBuf> {
    let cfg = &args.config;
    let out = generate(cfg)?;
    let corpus = out.corpus(cfg, &args.name, args.haze_threshold)?;
    let manifest = write_corpus(&args.out, &corpus)?;
    let p = &out.process;
    let list = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(", ");
    let truth = format!(
        "seed = {}\nkappa = {:?}\nbeta = {:?}\nnoise_std = {:?}\nstability_margin = {:?}\nemission = [{}]\ninitial = [{}]\n",
        cfg.seed,
        p.kappa,
        p.beta,
        cfg.noise_std,
        p.stability_margin(&out.network)?,
        list(&p.emission),
        list(&p.initial),
    );
    write(&args.out.join("truth.toml"), &truth)?;
    log::info!("wrote {} stations x {} steps to {}", cfg.stations, cfg.steps, args.out.display());
    Ok(manifest)
}
