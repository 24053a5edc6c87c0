//! Command-line front end. `run` parses arguments and dispatches to the
//! `cmd_*` functions, which tests may also call directly.

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{
    cmd_eval, cmd_forecast, cmd_plotdata, cmd_prepare, cmd_synth, cmd_train, load_dataset, load_model,
    DatasetOverride, PrepareArgs, SynthArgs, DATA_REPORT, EDGE_LIST, PANEL_CACHE, RUN_CONFIG,
};
pub use config::{Preset, RunConfig, RUN_CONFIG_VERSION};

use crate::data::{Split, DEFAULT_ITERATIONS};
use crate::error::{Error, Result};
use crate::model::Variant;
use crate::synth::SynthConfig;

#[derive(Debug, Parser)]
#[command(name = "airgnn", version, about = "Graph-based PM2.5 forecasting")]
pub struct Cli {
    /// single-threaded execution; outputs are then byte-identical across re-runs
    #[arg(long, global = true)]
    pub deterministic: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Impute, standardise and cache a corpus; write the edge list and a data report
    Prepare {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "bihar")]
        preset: Preset,
        #[arg(long)]
        threshold_km: Option<f64>,
        #[arg(long, default_value_t = DEFAULT_ITERATIONS)]
        impute_iterations: usize,
    },
    /// Generate a synthetic advection-diffusion corpus
    Synth(SynthFlags),
    /// Train and evaluate one variant over the configured seeds
    Train(TrainFlags),
    /// Evaluate a trained checkpoint on one split
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataFlags,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Forecast F steps from a start timestamp
    Forecast {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataFlags,
        /// first forecast timestamp
        #[arg(long)]
        start: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-region mean series from a predictions CSV and a station,region CSV
    Plotdata {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        regions: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Args)]
pub struct DataFlags {
    /// use this manifest instead of the one recorded in the checkpoint
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// use this panel cache instead of the one recorded in the checkpoint
    #[arg(long)]
    pub prepared: Option<PathBuf>,
}

impl From<DataFlags> for DatasetOverride {
    fn from(d: DataFlags) -> Self {
        DatasetOverride {
            manifest: d.manifest,
            prepared: d.prepared,
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthFlags {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 12)]
    pub stations: usize,
    #[arg(long, default_value_t = 30)]
    pub days: usize,
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub noise_std: Option<f64>,
    #[arg(long)]
    pub extent_km: Option<f64>,
    #[arg(long)]
    pub threshold_km: Option<f64>,
    #[arg(long)]
    pub haze: Option<f64>,
    #[arg(long, default_value = "synth")]
    pub name: String,
}

impl SynthFlags {
    pub fn to_args(&self) -> SynthArgs {
        let d = SynthConfig::default();
        SynthArgs {
            config: SynthConfig {
                stations: self.stations,
                steps: self.days * 24,
                seed: self.seed,
                kappa: self.kappa.unwrap_or(d.kappa),
                beta: self.beta.unwrap_or(d.beta),
                noise_std: self.noise_std.unwrap_or(d.noise_std),
                extent_km: self.extent_km.unwrap_or(d.extent_km),
                distance_threshold_km: self.threshold_km.unwrap_or(d.distance_threshold_km),
                ..d
            },
            name: self.name.clone(),
            haze_threshold: self.haze,
            out: self.out.clone(),
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainFlags {
    /// run config (TOML); flags override its values
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub prepared: Option<PathBuf>,
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub history_hours: Option<u32>,
    #[arg(long)]
    pub forecast_hours: Option<u32>,
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub aux_loss: bool,
    #[arg(long)]
    pub threshold_km: Option<f64>,
    #[arg(long)]
    pub haze: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// comma-separated list, e.g. `0,1,2`
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl TrainFlags {
    /// Defaults, then preset, then config file, then flags.
    pub fn resolve(&self) -> Result<RunConfig> {
        let preset = self.preset.unwrap_or(Preset::Bihar);
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p, preset)?,
            None => RunConfig::preset(preset),
        };
        if let Some(p) = self.preset {
            c.preset = p;
        }
        macro_rules! set {
            ($flag:expr => $field:expr) => {
                if let Some(v) = $flag.clone() {
                    $field = v;
                }
            };
        }
        if self.manifest.is_some() {
            c.manifest = self.manifest.clone();
        }
        if self.prepared.is_some() {
            c.prepared = self.prepared.clone();
        }
        set!(self.variant => c.variant);
        set!(self.history_hours => c.history_hours);
        set!(self.forecast_hours => c.forecast_hours);
        set!(self.stride => c.stride);
        set!(self.hidden => c.hidden);
        set!(self.epochs => c.train.epochs);
        set!(self.batch_size => c.train.batch_size);
        set!(self.lr => c.train.learning_rate);
        set!(self.weight_decay => c.train.weight_decay);
        set!(self.patience => c.train.patience);
        set!(self.seeds => c.train.seeds);
        set!(self.out => c.output_dir);
        if self.aux_loss {
            c.aux_loss = true;
        }
        if self.threshold_km.is_some() {
            c.distance_threshold_km = self.threshold_km;
        }
        if self.haze.is_some() {
            c.haze_threshold = self.haze;
        }
        c.validate()?;
        Ok(c)
    }
}

fn configure_threads(deterministic: bool) {
    if deterministic {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(1).build_global() {
            log::debug!("thread pool already configured: {e}");
        }
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    configure_threads(cli.deterministic);
    match cli.command {
        Command::Prepare {
            manifest,
            out,
            preset,
            threshold_km,
            impute_iterations,
        } => {
            cmd_prepare(&PrepareArgs {
                manifest,
                out,
                preset,
                distance_threshold_km: threshold_km,
                impute_iterations,
            })?;
        }
        Command::Synth(flags) => {
            cmd_synth(&flags.to_args())?;
        }
        Command::Train(flags) => {
            let report = cmd_train(&flags.resolve()?)?;
            print!("{}", report.to_text());
        }
        Command::Eval {
            checkpoint,
            data,
            split,
            out,
        } => {
            let report = cmd_eval(&checkpoint, &data.into(), split.into(), &out)?;
            print!("{}", report.to_text());
        }
        Command::Forecast {
            checkpoint,
            data,
            start,
            out,
        } => {
            cmd_forecast(&checkpoint, &data.into(), &start, &out)?;
        }
        Command::Plotdata {
            predictions,
            regions,
            out,
        } => {
            cmd_plotdata(&predictions, &regions, &out)?;
        }
    }
    Ok(())
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code: 0 success, 1 usage, 2 data, 3 numeric failure.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::File { .. } = e {
                log::debug!("{e:?}");
            }
            e.exit_code()
        }
    }
}
