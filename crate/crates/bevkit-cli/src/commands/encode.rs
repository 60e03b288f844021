//! `bevkit encode` — batch-encode every cloud in the cloud dir to PNGs.

use rayon::prelude::*;

use bevkit::bev::encode_bev;
use bevkit::cloud::read_kitti_bin;

use crate::config::Settings;
use crate::util::{frame_stem, list_bin_frames, render_png_atomic};
use crate::{CliError, CliResult};

pub fn run(settings: &Settings) -> CliResult<()> {
    let cloud_dir = settings.require_cloud_dir()?;
    let (_, nmap) = super::load_matching_normmap(settings)?;
    let frames = list_bin_frames(cloud_dir)?;

    frames
        .par_iter()
        .map(|path| -> CliResult<()> {
            let cloud = read_kitti_bin(path)?;
            let bev = encode_bev(&cloud, &settings.bev, &nmap)?;
            let out = settings
                .output_dir
                .join(format!("{}.png", frame_stem(path)));
            render_png_atomic(&bev, &out)
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    println!(
        "encoded {} frames into {}",
        frames.len(),
        settings.output_dir.display()
    );
    Ok(())
}
