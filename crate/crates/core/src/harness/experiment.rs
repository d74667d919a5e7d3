use std::fs;
use std::path::{Path, PathBuf};

use log::{error, info};
use serde::{Deserialize, Serialize};

use super::report::{emit_report, write_window_artifacts, ReportSummary};
use super::run::{run_window, Selection, WindowResult, WindowSettings};
use super::search::SearchGrid;
use super::window::make_windows;
use crate::amm::PoolSpec;
use crate::data::{gbm_generate, load_candles, GbmParams, LoadOptions, PriceSeries};
use crate::env::{GasMode, MarketData, PassivePolicy};
use crate::error::{Error, Result};
use crate::indicators::FeatureParams;
use crate::ppo::AgentSpec;

/// Where the candles come from: a CSV file or a seeded GBM series.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSource {
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub fill_gaps: bool,
    pub synthetic: Option<GbmParams>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSizes {
    pub train_len: usize,
    pub test_len: usize,
    pub stride: usize,
}

impl Default for WindowSizes {
    fn default() -> Self {
        Self {
            train_len: 7500,
            test_len: 1500,
            stride: 1500,
        }
    }
}

fn default_agents() -> usize {
    50
}

fn default_x0() -> f64 {
    2.0
}

fn default_output() -> PathBuf {
    PathBuf::from("results")
}

/// Rolling-window study, read from TOML. Relative paths resolve against the
/// directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSource,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_agents")]
    pub n_agents: usize,
    #[serde(default = "default_x0")]
    pub x0: f64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub gas_mode: GasMode,
    #[serde(default)]
    pub selection: Selection,
    #[serde(default)]
    pub pool: PoolSpec,
    #[serde(default)]
    pub windows: WindowSizes,
    #[serde(default)]
    pub features: FeatureParams,
    /// Settings shared by every agent; searched fields are overwritten by the grid.
    #[serde(default)]
    pub training: AgentSpec,
    #[serde(default)]
    pub grid: SearchGrid,
    #[serde(default)]
    pub passive: PassivePolicy,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| {
            Error::Config(format!(
                "{}: {}",
                path.display(),
                e.to_string().trim_start_matches("config error: ")
            ))
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(p) = &cfg.data.path {
            if p.is_relative() {
                cfg.data.path = Some(base.join(p));
            }
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.data.path, &self.data.synthetic) {
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "data: give either `path` or `synthetic`, not both".into(),
                ))
            }
            (None, None) => {
                return Err(Error::Config(
                    "data: missing `path` (or `synthetic`)".into(),
                ))
            }
            (Some(p), None) if !p.is_file() => {
                return Err(Error::Config(format!(
                    "data path {} does not exist",
                    p.display()
                )))
            }
            _ => {}
        }
        self.settings()
            .validate()
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn settings(&self) -> WindowSettings {
        WindowSettings {
            pool: self.pool,
            x0: self.x0,
            gas_mode: self.gas_mode,
            grid: self.grid.clone(),
            template: self.training.clone(),
            n_agents: self.n_agents,
            passive: self.passive,
            selection: self.selection,
            seed: self.seed,
        }
    }

    pub fn load_series(&self) -> Result<PriceSeries> {
        match (&self.data.path, &self.data.synthetic) {
            (Some(p), _) => load_candles(
                p,
                LoadOptions {
                    fill_gaps: self.data.fill_gaps,
                },
            ),
            (None, Some(g)) => gbm_generate(g),
            (None, None) => Err(Error::Config(
                "data: missing `path` (or `synthetic`)".into(),
            )),
        }
    }
}

#[derive(Debug)]
pub struct ExperimentOutcome {
    pub results: Vec<WindowResult>,
    /// `(window index, reason)` for windows where every agent failed.
    pub failures: Vec<(usize, String)>,
    pub report: Option<ReportSummary>,
}

/// Runs every window in order, writes per-window artefacts and the summary report.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let series = cfg.load_series()?;
    let data = MarketData::new(&series, &cfg.features)?;
    let sizes = cfg.windows;
    let plan = make_windows(data.len(), sizes.train_len, sizes.test_len, sizes.stride)?;
    let settings = cfg.settings();
    let out = &cfg.output_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    fs::write(out.join("config.toml"), cfg.to_toml()?)
        .map_err(|e| Error::io(out.join("config.toml"), e))?;

    let mut results = Vec::new();
    let mut failures = Vec::new();
    for window in &plan.windows {
        info!(
            "window {} of {}: train {:?}, test {:?}",
            window.index + 1,
            plan.len(),
            window.train,
            window.test
        );
        match run_window(&data, window, &settings) {
            Ok(r) => {
                write_window_artifacts(&r, out)?;
                results.push(r);
            }
            Err(e @ Error::TrainingFailed { .. }) => {
                error!("{e}");
                failures.push((window.index, e.to_string()));
            }
            Err(e) => return Err(e),
        }
    }
    let report = if results.is_empty() {
        None
    } else {
        Some(emit_report(&results, out)?)
    };
    Ok(ExperimentOutcome {
        results,
        failures,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = ExperimentConfig::from_toml("[data]\npath = \"candles.csv\"\n").unwrap();
        assert_eq!(cfg.n_agents, 50);
        assert_eq!(cfg.x0, 2.0);
        assert_eq!(cfg.pool, PoolSpec::default());
        assert_eq!(cfg.windows, WindowSizes::default());
        assert_eq!(cfg.grid, SearchGrid::default());
        assert_eq!(cfg.selection, Selection::Train);
        assert_eq!(cfg.training.rollout_length, 2500);
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = ExperimentConfig::from_toml("[data]\npath = \"candles.csv\"\n").unwrap();
        cfg.x0 = 10.0;
        cfg.grid.gammas = vec![0.9];
        let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn missing_data_is_a_config_error() {
        let cfg = ExperimentConfig::from_toml("seed = 1\n[data]\n").unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config(m)) if m.contains("path")));
        let cfg = ExperimentConfig::from_toml("[data]\npath = \"/no/such/file.csv\"\n").unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_toml("[data]\npath = \"a\"\nagents = 3\n").is_err());
    }
}
