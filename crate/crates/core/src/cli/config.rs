use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{Manifest, PrepareOptions, DEFAULT_ITERATIONS};
use crate::error::{Error, Result};
use crate::model::Variant;
use crate::train_eval::TrainConfig;

pub const RUN_CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// 5 km graph threshold, 100 μg/m³ haze threshold, hourly data
    Bihar,
    /// 300 km graph threshold, 75 μg/m³ haze threshold, 3-hourly data
    China,
}

impl Preset {
    pub fn distance_threshold_km(self) -> f64 {
        match self {
            Preset::Bihar => 5.0,
            Preset::China => 300.0,
        }
    }

    pub fn haze_threshold(self) -> f64 {
        match self {
            Preset::Bihar => 100.0,
            Preset::China => 75.0,
        }
    }

    pub fn cadence_hours(self) -> u32 {
        match self {
            Preset::Bihar => 1,
            Preset::China => 3,
        }
    }
}

/// Effective configuration of a `train` run.
///
/// Loading merges, in increasing priority: built-in defaults, the preset,
/// the config file, and command-line flags. The merged result is written to
/// `run_config.toml` in the output directory, and running from that file
/// reproduces the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub preset: Preset,
    /// dataset manifest; ignored when `prepared` is set
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    /// panel cache written by `prepare`
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prepared: Option<PathBuf>,
    pub variant: Variant,
    pub history_hours: u32,
    pub forecast_hours: u32,
    /// window stride in steps
    pub stride: usize,
    pub hidden: usize,
    pub embed_dim: usize,
    pub aux_loss: bool,
    pub impute_iterations: usize,
    /// falls back to the manifest, then the preset
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance_threshold_km: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub haze_threshold: Option<f64>,
    pub output_dir: PathBuf,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        Self {
            version: RUN_CONFIG_VERSION,
            preset,
            manifest: None,
            prepared: None,
            variant: Variant::AgnnGru,
            history_hours: 24,
            forecast_hours: 12,
            stride: 1,
            hidden: 32,
            embed_dim: 8,
            aux_loss: false,
            impute_iterations: DEFAULT_ITERATIONS,
            distance_threshold_km: None,
            haze_threshold: None,
            output_dir: PathBuf::from("runs"),
            train: TrainConfig::default(),
        }
    }

    /// Overlays the keys present in `text` on the defaults of `preset`.
    /// A `preset` key in the file takes the place of the argument.
    pub fn from_toml(text: &str, preset: Preset) -> Result<Self> {
        let overlay: toml::Table = toml::from_str(text).map_err(|e| Error::Config(format!("run config: {e}")))?;
        let preset = match overlay.get("preset") {
            Some(v) => Preset::deserialize(v.clone()).map_err(|e| Error::Config(format!("run config preset: {e}")))?,
            None => preset,
        };
        let base = toml::Table::try_from(Self::preset(preset)).map_err(|e| Error::Config(e.to_string()))?;
        let merged = merge(base, overlay);
        let cfg: Self = merged.try_into().map_err(|e| Error::Config(format!("run config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, preset: Preset) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e.to_string()))?;
        Self::from_toml(&text, preset).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != RUN_CONFIG_VERSION {
            return Err(Error::Config(format!(
                "run config version {} is not supported (expected {RUN_CONFIG_VERSION})",
                self.version
            )));
        }
        if self.history_hours == 0 || self.forecast_hours == 0 {
            return Err(Error::Config("history_hours and forecast_hours must be positive".into()));
        }
        if self.hidden == 0 || self.embed_dim == 0 || self.stride == 0 {
            return Err(Error::Config("hidden, embed_dim and stride must be positive".into()));
        }
        if let Some(t) = self.distance_threshold_km {
            if !(t > 0.0) {
                return Err(Error::Config(format!("distance_threshold_km must be positive, got {t}")));
            }
        }
        self.train.validate()
    }

    /// Errors unless the dataset inputs exist.
    pub fn check_paths(&self) -> Result<()> {
        match (&self.prepared, &self.manifest) {
            (Some(p), _) | (None, Some(p)) => {
                if !p.exists() {
                    return Err(Error::Config(format!("{} does not exist", p.display())));
                }
                Ok(())
            }
            (None, None) => Err(Error::Config("either `manifest` or `prepared` must be given".into())),
        }
    }

    pub fn resolved_threshold(&self, manifest: Option<&Manifest>) -> f64 {
        self.distance_threshold_km
            .or_else(|| manifest.and_then(|m| m.distance_threshold_km))
            .unwrap_or_else(|| self.preset.distance_threshold_km())
    }

    pub fn resolved_haze(&self, dataset_haze: Option<f64>) -> f64 {
        self.haze_threshold
            .or(dataset_haze)
            .unwrap_or_else(|| self.preset.haze_threshold())
    }

    pub fn prepare_options(&self, manifest: Option<&Manifest>) -> PrepareOptions {
        PrepareOptions {
            distance_threshold_km: self.resolved_threshold(manifest),
            impute_iterations: self.impute_iterations,
        }
    }
}

fn merge(mut base: toml::Table, overlay: toml::Table) -> toml::Table {
    for (k, v) in overlay {
        match (base.remove(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => {
                base.insert(k, toml::Value::Table(merge(b, o)));
            }
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
    base
}
