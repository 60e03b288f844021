//! `bevkit render` — encode a single cloud file to a PNG.

use std::path::Path;

use bevkit::bev::encode_bev;
use bevkit::cloud::read_kitti_bin;

use crate::config::Settings;
use crate::util::render_png_atomic;
use crate::CliResult;

pub fn run(settings: &Settings, input: &Path, out: &Path) -> CliResult<()> {
    if !input.exists() {
        return crate::usage_err(format!("input {} does not exist", input.display()));
    }
    let (_, nmap) = super::load_matching_normmap(settings)?;
    let cloud = read_kitti_bin(input)?;
    let bev = encode_bev(&cloud, &settings.bev, &nmap)?;
    render_png_atomic(&bev, out)?;
    println!(
        "rendered {} ({} points) to {}",
        input.display(),
        cloud.len(),
        out.display()
    );
    Ok(())
}
