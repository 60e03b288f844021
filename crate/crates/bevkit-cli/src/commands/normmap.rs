//! `bevkit normmap` — build or reuse the normalization-map cache.

use bevkit::normmap::{compute_normalization_map, map_fingerprint, read_cache, write_cache};
use bevkit::sensor::read_sensor_spec;

use crate::config::Settings;
use crate::CliResult;

pub fn run(settings: &Settings) -> CliResult<()> {
    let spec = read_sensor_spec(settings.require_sensor_spec()?)?;
    let cache = settings.normmap_cache_path();
    let wanted = map_fingerprint(&spec, &settings.bev);

    let (map, reused) = match read_cache(&cache) {
        Ok(map)
            if map.sensor_hash == wanted
                && map.grid.rows() == settings.bev.rows()
                && map.grid.cols() == settings.bev.cols() =>
        {
            (map, true)
        }
        _ => {
            let map = compute_normalization_map(&spec, &settings.bev)?;
            if let Some(dir) = cache.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)
                    .map_err(|e| anyhow::anyhow!("creating {}: {e}", dir.display()))?;
            }
            let tmp = tempfile::Builder::new()
                .suffix(".bin")
                .tempfile_in(cache.parent().unwrap_or(std::path::Path::new(".")))
                .map_err(anyhow::Error::from)?;
            write_cache(&map, tmp.path())?;
            tmp.persist(&cache).map_err(anyhow::Error::from)?;
            (map, false)
        }
    };

    let (min, max, mean) = map.stats();
    println!(
        "normalization map {}x{} ({} planes, {}): min {} max {} mean {:.2}",
        map.grid.rows(),
        map.grid.cols(),
        spec.num_planes(),
        if reused { "cached" } else { "computed" },
        min,
        max,
        mean
    );
    println!("cache: {}", cache.display());
    Ok(())
}
