//! Run configuration: a TOML file provides defaults, command-line flags win.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use bevkit::bev::{BevConfig, FovMode};
use bevkit::eval::{ClassThresholds, EvalConfig, MatchCriterion};
use bevkit::recover::ClassPriors;
use bevkit::sim::OracleConfig;

use crate::{usage_err, CliResult};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    cloud_dir: Option<PathBuf>,
    label_dir: Option<PathBuf>,
    calib_dir: Option<PathBuf>,
    sensor_spec: Option<PathBuf>,
    normmap_cache: Option<PathBuf>,
    output_dir: Option<PathBuf>,
    #[serde(default)]
    bev: BevSection,
    #[serde(default)]
    recovery: RecoverySection,
    #[serde(default)]
    eval: EvalSection,
    #[serde(default)]
    oracle: OracleSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct BevSection {
    cell_size: Option<f64>,
    forward_range: Option<f64>,
    lateral_range: Option<f64>,
    h_top: Option<f64>,
    fov_mode: Option<FovMode>,
    ground_offset: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecoverySection {
    n_bins: Option<usize>,
    car_width: Option<f64>,
    pedestrian_width: Option<f64>,
    cyclist_width: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalSection {
    iou_car: Option<f64>,
    iou_pedestrian: Option<f64>,
    iou_cyclist: Option<f64>,
    recall_max_detections: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct OracleSection {
    center_sigma: Option<f64>,
    extent_sigma: Option<f64>,
    yaw_sigma: Option<f64>,
}

/// Path flags passed on the command line; they beat the config file.
#[derive(Debug, Default)]
pub struct CliOverrides {
    pub cloud_dir: Option<PathBuf>,
    pub label_dir: Option<PathBuf>,
    pub calib_dir: Option<PathBuf>,
    pub sensor_spec: Option<PathBuf>,
    pub normmap_cache: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

/// Fully resolved run settings.
#[derive(Debug, Clone)]
pub struct Settings {
    pub cloud_dir: Option<PathBuf>,
    pub label_dir: Option<PathBuf>,
    pub calib_dir: Option<PathBuf>,
    pub sensor_spec: Option<PathBuf>,
    pub normmap_cache: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub bev: BevConfig,
    pub priors: ClassPriors,
    pub eval: EvalConfig,
    pub oracle: OracleConfig,
    pub seed: u64,
}

impl Settings {
    pub fn load(config: Option<&Path>, cli: CliOverrides, seed: u64) -> CliResult<Settings> {
        let file: FileConfig = match config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    crate::CliError::Usage(format!("cannot read config {}: {e}", path.display()))
                })?;
                toml::from_str(&text).map_err(|e| {
                    crate::CliError::Usage(format!("config {}: {e}", path.display()))
                })?
            }
            None => FileConfig::default(),
        };

        let defaults = BevConfig::default();
        let bev = BevConfig {
            cell_size: file.bev.cell_size.unwrap_or(defaults.cell_size),
            forward_range: file.bev.forward_range.unwrap_or(defaults.forward_range),
            lateral_range: file.bev.lateral_range.unwrap_or(defaults.lateral_range),
            h_top: file.bev.h_top.unwrap_or(defaults.h_top),
            fov_mode: file.bev.fov_mode.unwrap_or(defaults.fov_mode),
            ground_offset: file.bev.ground_offset.unwrap_or(defaults.ground_offset),
        };
        if let Err(e) = bev.validate() {
            return usage_err(format!("bev config: {e}"));
        }

        let prior_defaults = ClassPriors::default();
        let priors = ClassPriors {
            car_width: file.recovery.car_width.unwrap_or(prior_defaults.car_width),
            pedestrian_width: file
                .recovery
                .pedestrian_width
                .unwrap_or(prior_defaults.pedestrian_width),
            cyclist_width: file
                .recovery
                .cyclist_width
                .unwrap_or(prior_defaults.cyclist_width),
        };

        let thr_defaults = ClassThresholds::default();
        let eval = EvalConfig {
            thresholds: ClassThresholds {
                car: file.eval.iou_car.unwrap_or(thr_defaults.car),
                pedestrian: file.eval.iou_pedestrian.unwrap_or(thr_defaults.pedestrian),
                cyclist: file.eval.iou_cyclist.unwrap_or(thr_defaults.cyclist),
            },
            criteria: vec![MatchCriterion::Bev, MatchCriterion::Iou3d],
            recall_max_detections: file.eval.recall_max_detections.unwrap_or(300),
            ..EvalConfig::default()
        };

        let oracle = OracleConfig {
            n_bins: file.recovery.n_bins.unwrap_or(16),
            center_sigma: file.oracle.center_sigma.unwrap_or(0.0),
            extent_sigma: file.oracle.extent_sigma.unwrap_or(0.0),
            yaw_sigma: file.oracle.yaw_sigma.unwrap_or(0.0),
        };
        if oracle.n_bins < 4 || oracle.n_bins % 4 != 0 {
            return usage_err(format!(
                "recovery.n_bins = {} must be a positive multiple of 4",
                oracle.n_bins
            ));
        }

        Ok(Settings {
            cloud_dir: cli.cloud_dir.or(file.cloud_dir),
            label_dir: cli.label_dir.or(file.label_dir),
            calib_dir: cli.calib_dir.or(file.calib_dir),
            sensor_spec: cli.sensor_spec.or(file.sensor_spec),
            normmap_cache: cli.normmap_cache.or(file.normmap_cache),
            output_dir: cli
                .output_dir
                .or(file.output_dir)
                .unwrap_or_else(|| PathBuf::from("out")),
            bev,
            priors,
            eval,
            oracle,
            seed,
        })
    }

    /// A setting that must be present and point at an existing path.
    pub fn required_path<'a>(
        &self,
        value: &'a Option<PathBuf>,
        name: &str,
        flag: &str,
    ) -> CliResult<&'a Path> {
        let Some(path) = value.as_deref() else {
            return usage_err(format!(
                "{name} is required: pass {flag} or set `{name}` in the config file"
            ));
        };
        if !path.exists() {
            return usage_err(format!("{name} {} does not exist", path.display()));
        }
        Ok(path)
    }

    pub fn require_cloud_dir(&self) -> CliResult<&Path> {
        self.required_path(&self.cloud_dir, "cloud_dir", "--cloud-dir")
    }

    pub fn require_sensor_spec(&self) -> CliResult<&Path> {
        self.required_path(&self.sensor_spec, "sensor_spec", "--sensor-spec")
    }

    pub fn require_label_dir(&self) -> CliResult<&Path> {
        self.required_path(&self.label_dir, "label_dir", "--label-dir")
    }

    pub fn require_calib_dir(&self) -> CliResult<&Path> {
        self.required_path(&self.calib_dir, "calib_dir", "--calib-dir")
    }

    /// Cache path for the normalization map (a default under the output
    /// directory when unset).
    pub fn normmap_cache_path(&self) -> PathBuf {
        self.normmap_cache
            .clone()
            .unwrap_or_else(|| self.output_dir.join("normmap.bin"))
    }
}
