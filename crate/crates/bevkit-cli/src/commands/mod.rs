pub mod augment;
pub mod encode;
pub mod eval;
pub mod normmap;
pub mod recover;
pub mod render;
pub mod selftest;
pub mod simulate;

use std::path::Path;

use bevkit::normmap::{map_fingerprint, read_cache, NormalizationMap};
use bevkit::sensor::{read_sensor_spec, SensorSpec};

use crate::config::Settings;
use crate::{CliError, CliResult};

/// Load the sensor spec and a normalization map that matches it and the
/// grid, with the pointer at `normmap` when the cache is missing or stale.
pub fn load_matching_normmap(settings: &Settings) -> CliResult<(SensorSpec, NormalizationMap)> {
    let spec = read_sensor_spec(settings.require_sensor_spec()?)?;
    let cache = settings.normmap_cache_path();
    let wanted = map_fingerprint(&spec, &settings.bev);
    let stale = |why: &str| {
        CliError::Data(anyhow::anyhow!(
            "normalization map cache {} {why}; run `bevkit normmap` with this sensor spec and grid first",
            cache.display()
        ))
    };
    let map = match read_cache(&cache) {
        Ok(map) => map,
        Err(_) => return Err(stale("is missing or unreadable")),
    };
    if map.sensor_hash != wanted
        || map.grid.rows() != settings.bev.rows()
        || map.grid.cols() != settings.bev.cols()
    {
        return Err(stale("was built for a different sensor or grid"));
    }
    Ok((spec, map))
}

/// KITTI calib file content for the nominal sensor-to-camera permutation.
pub fn nominal_calib_text() -> &'static str {
    "P2: 1 0 0 0 0 1 0 0 0 0 1 0\n\
     R0_rect: 1 0 0 0 1 0 0 0 1\n\
     Tr_velo_to_cam: 0 -1 0 0 0 0 -1 0 1 0 0 0\n"
}

/// Per-frame calibration: `<calib_dir>/<frame>.txt`, or `calib_dir` itself
/// when it points at a single file.
pub fn calib_for_frame(calib_dir: &Path, frame_id: &str) -> CliResult<bevkit::Calibration> {
    let path = if calib_dir.is_file() {
        calib_dir.to_path_buf()
    } else {
        calib_dir.join(format!("{frame_id}.txt"))
    };
    Ok(bevkit::kitti::read_kitti_calib(&path)?)
}
