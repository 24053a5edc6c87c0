//! Synthetic corpora from a known linear advection-diffusion process.
//!
//! Every step, each directed edge `j -> i` carries the flux
//! `beta * adv_ji(t) * (y_j - y_i)` from `j` to `i`, where `adv_ji` is the
//! advection coefficient of the source wind along the edge. The flux enters
//! `i` and leaves `j`, so exchange alone conserves the total. On top of the
//! exchange each station decays by `kappa`, gains its emission and a noise
//! draw:
//!
//! ```text
//! y_i' = (1 - kappa) y_i + sum_j flux_ji - sum_k flux_ik + e_i(t) + noise_i
//! ```
//!
//! The emission `e_i(t)` is a constant base plus episodic bursts: at each
//! step a station starts an episode with a small probability, and an episode
//! adds a fixed amount per step for a fixed number of steps.

use std::f64::consts::TAU;

use chrono::{NaiveDate, NaiveDateTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{Corpus, DateRange, Manifest, RawPanel, SplitSpec, FEATURES, MANIFEST_VERSION};
use crate::error::{Error, Result};
use crate::geo_graph::{advection_coefficient, build_network, wind_speed_direction, Station, StationNetwork};

const KM_PER_DEGREE: f64 = 111.195;

/// Spatially uniform wind. Speed and direction follow slow sinusoids plus
/// bounded uniform noise; the direction is the one the wind blows toward.
#[derive(Debug, Clone, PartialEq)]
pub struct WindProcess {
    pub mean_speed: f64,
    pub speed_amplitude: f64,
    pub speed_period_steps: f64,
    pub speed_noise: f64,
    pub base_direction_deg: f64,
    pub drift_amplitude_deg: f64,
    pub drift_period_steps: f64,
    pub direction_noise_deg: f64,
}

impl Default for WindProcess {
    fn default() -> Self {
        Self {
            mean_speed: 3.0,
            speed_amplitude: 3.0,
            speed_period_steps: 24.0,
            speed_noise: 0.5,
            base_direction_deg: 45.0,
            drift_amplitude_deg: 180.0,
            drift_period_steps: 24.0,
            direction_noise_deg: 10.0,
        }
    }
}

impl WindProcess {
    /// Upper bound on the speed the process can produce.
    pub fn max_speed(&self) -> f64 {
        self.mean_speed + self.speed_amplitude.abs() + self.speed_noise
    }

    fn sample(&self, steps: usize, rng: &mut ChaCha8Rng) -> Vec<(f64, f64)> {
        let phase_s = rng.random_range(0.0..TAU);
        let phase_d = rng.random_range(0.0..TAU);
        (0..steps)
            .map(|t| {
                let t = t as f64;
                let mut speed = self.mean_speed + self.speed_amplitude * (TAU * t / self.speed_period_steps + phase_s).sin();
                if self.speed_noise > 0.0 {
                    speed += rng.random_range(-self.speed_noise..=self.speed_noise);
                }
                let mut dir =
                    self.base_direction_deg + self.drift_amplitude_deg * (TAU * t / self.drift_period_steps + phase_d).sin();
                if self.direction_noise_deg > 0.0 {
                    dir += rng.random_range(-self.direction_noise_deg..=self.direction_noise_deg);
                }
                let speed = speed.max(0.0);
                let r = dir.to_radians();
                (speed * r.sin(), speed * r.cos())
            })
            .collect()
    }
}

/// Emission bursts; episodes may overlap and then add up.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeProcess {
    /// probability per station and step that an episode starts
    pub rate: f64,
    /// extra emission per step while an episode lasts
    pub amplitude: f64,
    pub duration_steps: usize,
}

impl Default for EpisodeProcess {
    fn default() -> Self {
        Self {
            rate: 0.01,
            amplitude: 3.0,
            duration_steps: 48,
        }
    }
}

impl EpisodeProcess {
    pub fn none() -> Self {
        Self {
            rate: 0.0,
            ..Self::default()
        }
    }

    fn sample(&self, steps: usize, stations: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; stations]; steps];
        for t in 0..steps {
            for s in 0..stations {
                if self.rate > 0.0 && rng.random::<f64>() < self.rate {
                    for row in out.iter_mut().skip(t).take(self.duration_steps) {
                        row[s] += self.amplitude;
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub stations: usize,
    /// side of the square the stations are scattered in
    pub extent_km: f64,
    pub center: (f64, f64),
    pub distance_threshold_km: f64,
    /// mean emission per step; each station draws from `base * [1 - spread, 1 + spread]`
    pub base_emission: f64,
    pub emission_spread: f64,
    pub episodes: EpisodeProcess,
    pub kappa: f64,
    pub beta: f64,
    pub wind: WindProcess,
    pub noise_std: f64,
    pub steps: usize,
    pub cadence_hours: u32,
    pub start: NaiveDateTime,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            stations: 12,
            extent_km: 12.0,
            center: (25.6, 85.1),
            distance_threshold_km: 5.0,
            base_emission: 2.0,
            emission_spread: 0.8,
            episodes: EpisodeProcess::default(),
            kappa: 0.02,
            beta: 0.02,
            wind: WindProcess::default(),
            noise_std: 0.3,
            steps: 30 * 24,
            cadence_hours: 1,
            start: NaiveDate::from_ymd_opt(2023, 5, 1)
                .expect("valid date")
                .and_hms_opt(0, 0, 0)
                .expect("valid time"),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stations < 2 {
            return Err(Error::Config("synth needs at least 2 stations".into()));
        }
        if self.steps < 2 {
            return Err(Error::Config("synth needs at least 2 steps".into()));
        }
        if !(0.0..1.0).contains(&self.kappa) {
            return Err(Error::Config(format!("kappa must lie in [0, 1), got {}", self.kappa)));
        }
        if !(self.beta >= 0.0) {
            return Err(Error::Config(format!("beta must be >= 0, got {}", self.beta)));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::Config(format!("noise_std must be >= 0, got {}", self.noise_std)));
        }
        if !(self.extent_km > 0.0) || self.cadence_hours == 0 {
            return Err(Error::Config("extent_km and cadence_hours must be positive".into()));
        }
        let ep = &self.episodes;
        if !(0.0..=1.0).contains(&ep.rate) || !(ep.amplitude >= 0.0) {
            return Err(Error::Config("episode rate must lie in [0, 1] and amplitude must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.emission_spread) {
            return Err(Error::Config("emission_spread must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn timestamps(&self) -> Vec<NaiveDateTime> {
        let step = chrono::Duration::hours(self.cadence_hours as i64);
        (0..self.steps).map(|t| self.start + step * t as i32).collect()
    }
}

/// Everything needed to replay the generated series.
#[derive(Debug, Clone, PartialEq)]
pub struct TrueProcess {
    pub kappa: f64,
    pub beta: f64,
    pub emission: Vec<f64>,
    /// `[t][station]` episodic emission added on top of `emission`
    pub episodes: Vec<Vec<f64>>,
    pub initial: Vec<f64>,
    /// `(u10, v10)` per step, shared by all stations
    pub wind: Vec<(f64, f64)>,
    /// `[t][station]` noise added when stepping from `t` to `t + 1`
    pub noise: Vec<Vec<f64>>,
}

impl TrueProcess {
    /// Largest `kappa + beta * sum of adv over edges touching a station`
    /// across steps and stations. Below 1 every update is a non-negative
    /// mix of the previous state.
    pub fn stability_margin(&self, network: &StationNetwork) -> Result<f64> {
        let mut worst: f64 = self.kappa;
        for &(u, v) in &self.wind {
            let (speed, dir) = wind_speed_direction(u, v);
            let mut load = vec![0.0; network.num_stations()];
            for (e, g) in network.edges.iter().zip(&network.geometry) {
                let a = advection_coefficient(speed, dir, g.bearing_deg)?;
                load[e.source] += a;
                load[e.sink] += a;
            }
            for a in load {
                worst = worst.max(self.kappa + self.beta * a);
            }
        }
        Ok(worst)
    }

    /// One deterministic step without emission or noise.
    pub fn exchange(&self, network: &StationNetwork, y: &[f64], wind: (f64, f64)) -> Result<Vec<f64>> {
        let (speed, dir) = wind_speed_direction(wind.0, wind.1);
        let mut next: Vec<f64> = y.iter().map(|v| (1.0 - self.kappa) * v).collect();
        for (e, g) in network.edges.iter().zip(&network.geometry) {
            let flux = self.beta * advection_coefficient(speed, dir, g.bearing_deg)? * (y[e.source] - y[e.sink]);
            next[e.sink] += flux;
            next[e.source] -= flux;
        }
        Ok(next)
    }

    /// Replays the recurrence; returns `[t][station]`.
    pub fn simulate(&self, network: &StationNetwork) -> Result<Vec<Vec<f64>>> {
        let steps = self.wind.len();
        let mut out = Vec::with_capacity(steps);
        out.push(self.initial.clone());
        for t in 0..steps.saturating_sub(1) {
            let mut next = self.exchange(network, &out[t], self.wind[t])?;
            for (i, v) in next.iter_mut().enumerate() {
                *v += self.emission[i] + self.episodes[t][i] + self.noise[t][i];
            }
            out.push(next);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub panel: RawPanel,
    pub network: StationNetwork,
    pub process: TrueProcess,
}

fn layout(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<Vec<Station>> {
    let (lat0, lon0) = cfg.center;
    let min_sep = (cfg.extent_km / (cfg.stations as f64).sqrt()) * 0.2;
    let mut stations: Vec<Station> = Vec::with_capacity(cfg.stations);
    let mut attempts = 0;
    while stations.len() < cfg.stations {
        attempts += 1;
        if attempts > 100_000 {
            return Err(Error::Config("cannot place stations with the requested extent".into()));
        }
        let dx = rng.random_range(-0.5..0.5) * cfg.extent_km;
        let dy = rng.random_range(-0.5..0.5) * cfg.extent_km;
        let lat = lat0 + dy / KM_PER_DEGREE;
        let lon = lon0 + dx / (KM_PER_DEGREE * lat0.to_radians().cos());
        let cand = Station::new(format!("S{:02}", stations.len() + 1), lat, lon)?;
        if stations.iter().all(|s| crate::geo_graph::haversine_distance(s, &cand) >= min_sep) {
            stations.push(cand);
        }
    }
    Ok(stations)
}

/// Synthetic covariates: diurnal sinusoids with noise, independent of the
/// target. `temp` in °C, `rh` in %, `pbl` in m, `sp` in Pa, `tp` in m.
fn covariate(name: &str, t: usize, cadence: u32, rng: &mut ChaCha8Rng) -> f64 {
    let hour = (t as f64 * cadence as f64) % 24.0;
    let day = (TAU * hour / 24.0).sin();
    match name {
        "rh" => 60.0 - 15.0 * day + rng.random_range(-3.0..3.0),
        "temp" => 30.0 + 5.0 * day + rng.random_range(-0.5..0.5),
        "pbl" => 800.0 + 500.0 * day + rng.random_range(-50.0..50.0),
        "kindex" => 25.0 + 5.0 * day + rng.random_range(-2.0..2.0),
        "sp" => 100_000.0 + 150.0 * day + rng.random_range(-20.0..20.0),
        "tp" => (rng.random_range(-0.004f64..0.002)).max(0.0),
        _ => unreachable!("covariate {name}"),
    }
}

/// Generates stations, wind, the target series and covariates.
pub fn generate(cfg: &SynthConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let stations = layout(cfg, &mut rng)?;
    let network = build_network(stations, cfg.distance_threshold_km)?;
    let l = cfg.stations;
    let emission: Vec<f64> = (0..l)
        .map(|_| cfg.base_emission * (1.0 + cfg.emission_spread * rng.random_range(-1.0..=1.0)))
        .collect();
    // stations start at their own equilibrium e / kappa
    let initial: Vec<f64> = emission
        .iter()
        .map(|e| if cfg.kappa > 0.0 { e / cfg.kappa } else { 100.0 })
        .collect();
    let wind = cfg.wind.sample(cfg.steps, &mut rng);
    let episodes = cfg.episodes.sample(cfg.steps, l, &mut rng);
    let normal = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let noise: Vec<Vec<f64>> = (0..cfg.steps)
        .map(|_| {
            (0..l)
                .map(|_| if cfg.noise_std > 0.0 { normal.sample(&mut rng) } else { 0.0 })
                .collect()
        })
        .collect();
    let process = TrueProcess {
        kappa: cfg.kappa,
        beta: cfg.beta,
        emission,
        episodes,
        initial,
        wind,
        noise,
    };
    let margin = process.stability_margin(&network)?;
    if margin >= 1.0 {
        return Err(Error::Config(format!(
            "unstable process: kappa + beta * advective load = {margin:.4} >= 1"
        )));
    }
    let y = process.simulate(&network)?;

    let timestamps = cfg.timestamps();
    let mut panel = RawPanel::filled(
        network.stations.iter().map(|s| s.id.clone()).collect(),
        timestamps,
        FEATURES.iter().map(|f| f.to_string()).collect(),
        0.0,
    );
    for s in 0..l {
        for t in 0..cfg.steps {
            for (f, name) in FEATURES.iter().enumerate() {
                let v = match *name {
                    "pm25" => y[t][s],
                    "u10" => process.wind[t].0,
                    "v10" => process.wind[t].1,
                    other => covariate(other, t, cfg.cadence_hours, &mut rng),
                };
                panel.set(s, t, f, v);
            }
        }
    }
    Ok(SynthOutput {
        panel,
        network,
        process,
    })
}

/// Consecutive day ranges covering `days`, split roughly 60/20/20.
pub fn default_split(start: NaiveDate, days: i64) -> Result<SplitSpec> {
    if days < 3 {
        return Err(Error::Config("a split needs at least 3 days".into()));
    }
    let train = ((days as f64) * 0.6).round().max(1.0) as i64;
    let val = (((days as f64) * 0.2).round() as i64).clamp(1, days - train - 1);
    let day = |n: i64| start + chrono::Duration::days(n);
    Ok(SplitSpec {
        train: DateRange::new(day(0), day(train - 1)),
        val: DateRange::new(day(train), day(train + val - 1)),
        test: DateRange::new(day(train + val), day(days - 1)),
    })
}

impl SynthOutput {
    /// Corpus in ingestion format with a 60/20/20 split over whole days.
    pub fn corpus(&self, cfg: &SynthConfig, name: &str, haze_threshold: Option<f64>) -> Result<Corpus> {
        let hours = cfg.steps as i64 * cfg.cadence_hours as i64;
        let split = default_split(cfg.start.date(), hours / 24)?;
        Ok(Corpus {
            manifest: Manifest {
                version: MANIFEST_VERSION,
                name: name.to_string(),
                cadence_hours: cfg.cadence_hours,
                timezone: "UTC".into(),
                station_file: "stations.csv".into(),
                data_dir: "data".into(),
                split,
                distance_threshold_km: Some(cfg.distance_threshold_km),
                haze_threshold,
            },
            stations: self.network.stations.clone(),
            panel: self.panel.clone(),
        })
    }
}
